//! Parameter sensitivity: instantaneous values, running averages, and
//! distribution summaries.
//!
//! The sensitivity of parameter `theta_j` under loss `L` is
//! `s_j = |theta_j * dL/dtheta_j|` — the first-order loss change from
//! zeroing that parameter. A per-parameter exponential moving average
//! `sbar <- beta * sbar + (1 - beta) * s` smooths it across steps. All
//! aggregation (means, reports) is *per matrix*: sensitivities are never
//! averaged across parameter groups, because scales differ by orders of
//! magnitude between matrices and a model-wide mean would swamp the small
//! ones.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ParamGroup;

/// Elementwise `|theta_j * g_j|` for one group.
pub fn instantaneous(weights: &Tensor, grads: &[f64]) -> Result<Vec<f64>> {
    if grads.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "gradient length {} does not match {} weights",
            grads.len(),
            weights.len()
        )));
    }
    Ok(weights
        .values()
        .iter()
        .zip(grads)
        .map(|(t, g)| (t * g).abs())
        .collect())
}

/// In-place EMA update `sbar <- beta * sbar + (1 - beta) * s`.
/// `beta` must lie strictly inside (0, 1).
pub fn update_ema(sbar: &mut Tensor, inst: &[f64], beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!(
            "sensitivity beta must be in (0, 1), got {beta}"
        )));
    }
    if inst.len() != sbar.len() {
        return Err(Error::InvalidInput(format!(
            "sensitivity update length {} does not match state length {}",
            inst.len(),
            sbar.len()
        )));
    }
    for (old, s) in sbar.values_mut().iter_mut().zip(inst) {
        *old = beta * *old + (1.0 - beta) * s;
    }
    Ok(())
}

/// Mean sensitivity of one group (the per-matrix normalizer for noise
/// scaling). Errors on an empty group rather than returning NaN.
pub fn group_mean(sbar: &Tensor) -> Result<f64> {
    if sbar.is_empty() {
        return Err(Error::InvalidInput("mean of an empty group".into()));
    }
    Ok(sbar.values().iter().sum::<f64>() / sbar.len() as f64)
}

/// Which parameter groups a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportScope {
    /// Only groups eligible for weight noise (the default: those are the
    /// sensitivities the noise rule actually consumes).
    Perturbable,
    All,
}

/// Histogram range policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    /// `[median/1000, median*1000]` of the positive sensitivities; falls
    /// back to [`FALLBACK_WINDOW`] when there are no positive values yet.
    Auto,
    Fixed {
        lo: f64,
        hi: f64,
    },
}

/// Window used when `Auto` has no positive values to work from. Matches
/// the range where fine-tuning sensitivities typically land at this scale.
pub const FALLBACK_WINDOW: (f64, f64) = (5e-8, 1e-5);

/// One log-spaced histogram bin, `lo <= s < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Summary of a sensitivity distribution at one point in training.
///
/// Invariant: `zero_count + below_window + above_window + sum(bins)`
/// equals `total_params`. Log statistics cover positive values only;
/// when there are none, `log10_mean`/`log10_std` are 0 with
/// `positive_count = 0` (kept finite so the report serializes cleanly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub scope: ReportScope,
    pub window_lo: f64,
    pub window_hi: f64,
    pub bins: Vec<Bin>,
    pub zero_count: u64,
    pub below_window: u64,
    pub above_window: u64,
    pub total_params: u64,
    pub positive_count: u64,
    /// Mean of `log10(s)` over positive sensitivities.
    pub log10_mean: f64,
    /// Population standard deviation of `log10(s)` over positive
    /// sensitivities — the width of the distribution on a log axis.
    pub log10_std: f64,
}

/// Builds a log-spaced histogram plus log-scale moments of the current
/// sensitivity averages across `groups`.
pub fn distribution_report(
    groups: &[ParamGroup],
    scope: ReportScope,
    window: Window,
    n_bins: usize,
) -> Result<SensitivityReport> {
    if n_bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let values: Vec<f64> = groups
        .iter()
        .filter(|g| scope == ReportScope::All || g.perturbable)
        .flat_map(|g| g.sensitivity.values().iter().copied())
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "no parameters in report scope (model has no perturbable groups?)".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "sensitivities must be finite and non-negative".into(),
        ));
    }

    let mut positives: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let (lo, hi) = match window {
        Window::Fixed { lo, hi } => {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Config(format!(
                    "window must satisfy 0 < lo < hi, got [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
        Window::Auto => {
            if positives.is_empty() {
                FALLBACK_WINDOW
            } else {
                positives.sort_by(f64::total_cmp);
                let mid = positives.len() / 2;
                let median = if positives.len() % 2 == 1 {
                    positives[mid]
                } else {
                    0.5 * (positives[mid - 1] + positives[mid])
                };
                (median * 1e-3, median * 1e3)
            }
        }
    };

    let log_span = (hi / lo).ln();
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| Bin {
            lo: lo * (hi / lo).powf(i as f64 / n_bins as f64),
            hi: lo * (hi / lo).powf((i + 1) as f64 / n_bins as f64),
            count: 0,
        })
        .collect();
    let (mut zero_count, mut below, mut above) = (0u64, 0u64, 0u64);
    for &v in &values {
        if v == 0.0 {
            zero_count += 1;
        } else if v < lo {
            below += 1;
        } else if v >= hi {
            above += 1;
        } else {
            let idx = (((v / lo).ln() / log_span) * n_bins as f64) as usize;
            bins[idx.min(n_bins - 1)].count += 1;
        }
    }

    let positive_count = values.iter().filter(|&&v| v > 0.0).count() as u64;
    let (log10_mean, log10_std) = if positive_count == 0 {
        (0.0, 0.0)
    } else {
        let logs: Vec<f64> = values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|v| v.log10())
            .collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logs.len() as f64;
        (mean, var.sqrt())
    };

    Ok(SensitivityReport {
        scope,
        window_lo: lo,
        window_hi: hi,
        bins,
        zero_count,
        below_window: below,
        above_window: above,
        total_params: values.len() as u64,
        positive_count,
        log10_mean,
        log10_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn group_with_sensitivity(values: Vec<f64>, perturbable: bool) -> ParamGroup {
        let n = values.len();
        let mut model =
            crate::models::Model::init(&crate::models::ModelSpec::Mlp { layers: vec![n, 2] }, 0)
                .unwrap();
        let mut g = model.groups.remove(0);
        // Reshape to a flat [n] sensitivity carrier for testing.
        g.sensitivity =
            Tensor::new(vec![n, 2], values.iter().flat_map(|&v| [v, v]).collect()).unwrap();
        g.perturbable = perturbable;
        g
    }

    #[test]
    fn instantaneous_is_abs_of_product() {
        let w = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
        let s = instantaneous(&w, &[3.0, 2.0, -4.0, 9.0]).unwrap();
        assert_eq!(s, vec![3.0, 4.0, 2.0, 0.0]);
    }

    #[test]
    fn instantaneous_rejects_length_mismatch() {
        let w = Tensor::zeros(vec![4]);
        assert!(instantaneous(&w, &[1.0; 3]).is_err());
    }

    #[test]
    fn ema_beta_must_be_strictly_inside_unit_interval() {
        let mut s = Tensor::zeros(vec![2]);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(update_ema(&mut s, &[1.0, 1.0], bad).is_err(), "beta {bad}");
        }
        assert!(update_ema(&mut s, &[1.0, 1.0], 0.75).is_ok());
    }

    #[test]
    fn ema_converges_geometrically_to_constant_signal() {
        let beta: f64 = 0.75;
        let target = 0.3;
        let start = 2.0;
        let mut s = Tensor::new(vec![1], vec![start]).unwrap();
        for k in 1..=50 {
            update_ema(&mut s, &[target], beta).unwrap();
            let expect = beta.powi(k) * (start - target);
            assert!(
                ((s.values()[0] - target) - expect).abs() < 1e-12,
                "step {k}: gap {} vs {}",
                s.values()[0] - target,
                expect
            );
        }
    }

    #[test]
    fn group_mean_simple() {
        let s = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(group_mean(&s).unwrap(), 3.0);
        assert!(group_mean(&Tensor::zeros(vec![0])).is_err());
    }

    #[test]
    fn report_counts_partition_all_params() {
        let g = group_with_sensitivity(vec![0.0, 1e-9, 1e-6, 5e-6, 1e-2], true);
        let r = distribution_report(
            &[g],
            ReportScope::Perturbable,
            Window::Fixed { lo: 1e-8, hi: 1e-4 },
            40,
        )
        .unwrap();
        let binned: u64 = r.bins.iter().map(|b| b.count).sum();
        assert_eq!(
            r.zero_count + r.below_window + r.above_window + binned,
            r.total_params
        );
        assert_eq!(r.zero_count, 2); // duplicated by the [v, v] carrier
        assert_eq!(r.below_window, 2);
        assert_eq!(r.above_window, 2);
        assert_eq!(binned, 4);
    }

    #[test]
    fn report_scope_filters_non_perturbable_groups() {
        let a = group_with_sensitivity(vec![1e-6; 3], true);
        let b = group_with_sensitivity(vec![1e-6; 5], false);
        let only = distribution_report(
            &[a.clone(), b.clone()],
            ReportScope::Perturbable,
            Window::Auto,
            10,
        )
        .unwrap();
        let all = distribution_report(&[a, b], ReportScope::All, Window::Auto, 10).unwrap();
        assert_eq!(only.total_params, 6);
        assert_eq!(all.total_params, 16);
    }

    #[test]
    fn log_stats_of_uniform_values_have_zero_spread() {
        let g = group_with_sensitivity(vec![1e-6; 4], true);
        let r = distribution_report(&[g], ReportScope::All, Window::Auto, 10).unwrap();
        assert!((r.log10_mean - (-6.0)).abs() < 1e-12);
        assert!(r.log10_std.abs() < 1e-12);
    }

    #[test]
    fn auto_window_straddles_the_median() {
        let g = group_with_sensitivity(vec![1e-7, 2e-7, 4e-7], true);
        let r = distribution_report(&[g], ReportScope::All, Window::Auto, 10).unwrap();
        assert!((r.window_lo - 2e-10).abs() < 1e-22);
        assert!((r.window_hi - 2e-4).abs() < 1e-16);
    }

    #[test]
    fn all_zero_sensitivities_fall_back_to_default_window() {
        let g = group_with_sensitivity(vec![0.0; 4], true);
        let r = distribution_report(&[g], ReportScope::All, Window::Auto, 10).unwrap();
        assert_eq!((r.window_lo, r.window_hi), FALLBACK_WINDOW);
        assert_eq!(r.zero_count, r.total_params);
        assert_eq!(r.positive_count, 0);
        assert_eq!(r.log10_std, 0.0);
    }

    #[test]
    fn report_serializes_without_information_loss() {
        let g = group_with_sensitivity(vec![1e-7, 3e-6, 0.0], true);
        let r = distribution_report(&[g], ReportScope::Perturbable, Window::Auto, 16).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: SensitivityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        /// The EMA never leaves the envelope spanned by its current value
        /// and a constant input, for any valid beta.
        #[test]
        fn ema_stays_in_envelope(
            start in 0.0f64..10.0,
            target in 0.0f64..10.0,
            beta in 1e-6f64..0.999999,
            steps in 1usize..100,
        ) {
            let mut s = Tensor::new(vec![1], vec![start]).unwrap();
            let lo = start.min(target);
            let hi = start.max(target);
            for _ in 0..steps {
                update_ema(&mut s, &[target], beta).unwrap();
                let v = s.values()[0];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        /// Histogram bookkeeping partitions every parameter exactly once,
        /// for any window and bin count.
        #[test]
        fn report_partition_invariant(
            values in proptest::collection::vec(0.0f64..1e-3, 1..60),
            bins in 1usize..64,
        ) {
            let g = group_with_sensitivity(values, true);
            let r = distribution_report(
                &[g],
                ReportScope::All,
                Window::Fixed { lo: 1e-8, hi: 1e-4 },
                bins,
            ).unwrap();
            let binned: u64 = r.bins.iter().map(|b| b.count).sum();
            prop_assert_eq!(
                r.zero_count + r.below_window + r.above_window + binned,
                r.total_params
            );
        }
    }
}
