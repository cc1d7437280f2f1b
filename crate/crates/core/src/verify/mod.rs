//! Independent oracles: exhaustive enumeration of tiny masking problems, finite-difference
//! gradient checks, and the suites that run them.

mod fd;
mod nets;
mod report;
mod tiny;

pub use fd::{fd_check, fd_check_at, FdOptions, FdReport};
pub use nets::{
    check_bce, check_class_loss, check_classifier, check_policy, check_policy_loss, random_batch, random_probs,
};
pub use report::{estimator_suite, gradient_suite, CheckResult, EstimatorSuite, VerifyReport};
pub use tiny::{
    exact_expected_reward, exact_policy_gradient, monte_carlo_reward, reinforce_estimate, relative_l2,
    total_probability, MaskedLoss, QuadraticLoss, TinyInstance, MAX_PIXELS,
};
