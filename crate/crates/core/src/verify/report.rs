//! Pass/fail suites over the oracles, rendered as text or JSON.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fd::FdOptions;
use super::nets::{check_bce, check_class_loss, check_classifier, check_policy, check_policy_loss, random_batch};
use super::tiny::{exact_policy_gradient, reinforce_samples, relative_l2, TinyInstance};
use crate::error::Result;
use crate::nn::{ClassifierArch, PolicyArch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured quantity; `passed` means `value < threshold`.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: impl Into<String>, value: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.into(),
            passed: value < threshold,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Free-form measurements with no pass/fail meaning.
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn merge(&mut self, other: VerifyReport) {
        self.checks.extend(other.checks);
        self.notes.extend(other.notes);
        self.seconds += other.seconds;
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{tag} {}: {:.3e} < {:.1e} ({})", c.name, c.value, c.threshold, c.detail);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(
            s,
            "{}/{} checks passed in {:.1}s",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.seconds
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSuite {
    pub instances: usize,
    pub pixels: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EstimatorSuite {
    fn default() -> Self {
        EstimatorSuite {
            instances: 20,
            pixels: 6,
            samples: 100_000,
            tolerance: 0.05,
            seed: 0,
        }
    }
}

/// REINFORCE against enumeration on random instances, plus a with/without-baseline variance
/// measurement.
pub fn estimator_suite(cfg: EstimatorSuite) -> Result<VerifyReport> {
    let start = Instant::now();
    let mut report = VerifyReport::default();
    let (mut var_plain, mut var_base) = (0.0, 0.0);
    for k in 0..cfg.instances {
        let seed = cfg.seed.wrapping_add(k as u64);
        let inst = TinyInstance::random(cfg.pixels, seed)?;
        let exact = exact_policy_gradient(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let plain = reinforce_samples(&inst, cfg.samples, &mut rng, None)?;
        let err = relative_l2(&plain.mean, &exact);
        report.checks.push(CheckResult::below(
            format!("estimator[{k}]"),
            err,
            cfg.tolerance,
            format!("relative L2, n={}, {} samples", cfg.pixels, cfg.samples),
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let based = reinforce_samples(&inst, cfg.samples, &mut rng, Some(0.5))?;
        var_plain += mean(&plain.variance);
        var_base += mean(&based.variance);
    }
    let m = cfg.instances.max(1) as f64;
    report.notes.push(format!(
        "mean per-coordinate estimator variance: {:.4e} without baseline, {:.4e} with moving-average baseline",
        var_plain / m,
        var_base / m
    ));
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Finite-difference checks: losses at `1e-6`, reference-size networks at `1e-5`.
pub fn gradient_suite(seed: u64) -> Result<VerifyReport> {
    let start = Instant::now();
    let opts = FdOptions::default();
    let mut report = VerifyReport::default();
    let describe = |r: &super::fd::FdReport| {
        format!(
            "{} coordinates, worst at {} (analytic {:.6e}, numeric {:.6e})",
            r.checked, r.worst_index, r.analytic, r.numeric
        )
    };
    let losses = [
        ("bce", check_bce(seed, opts)?),
        ("class_loss", check_class_loss(seed, opts)?),
        ("policy_loss", check_policy_loss(seed, opts)?),
    ];
    for (name, r) in losses {
        report.checks.push(CheckResult::below(name, r.max_rel_error, 1e-6, describe(&r)));
    }
    let batch = random_batch(2, 16, 16, 2, seed)?;
    let r = check_classifier(&ClassifierArch::default(), &batch, seed, Some(48), opts)?;
    report.checks.push(CheckResult::below("classifier", r.max_rel_error, 1e-5, describe(&r)));
    let r = check_policy(&PolicyArch::default(), &batch, seed, Some(48), opts)?;
    report.checks.push(CheckResult::below("policy", r.max_rel_error, 1e-5, describe(&r)));
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_estimator_suite_runs() {
        let r = estimator_suite(EstimatorSuite {
            instances: 2,
            pixels: 3,
            samples: 20_000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.checks.len(), 2);
        assert!(r.passed(), "{}", r.to_text());
        assert_eq!(r.notes.len(), 1);
    }

    #[test]
    fn json_round_trips() {
        let r = VerifyReport {
            checks: vec![CheckResult::below("x", 0.5, 1.0, "d".into())],
            notes: vec!["n".into()],
            seconds: 1.5,
        };
        let back: VerifyReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().starts_with("PASS x"));
    }
}
