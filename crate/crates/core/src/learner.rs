//! Shared learner interface and stepsize schedules.

use serde::{Deserialize, Serialize};

use crate::data::{Instance, SparseVector};

/// A linear scorer trained by one stochastic step per arriving instance.
pub trait OnlineLearner: Send {
    /// Input dimension the learner was built for.
    fn dim(&self) -> usize;

    /// Consumes one instance with stepsize `eta`.
    fn step(&mut self, x: &Instance, eta: f64);

    /// Real-valued ranking score of `x`.
    fn score(&self, x: &SparseVector) -> f64;

    /// Number of f64 values held by the model state.
    fn state_len(&self) -> usize;
}

/// Stepsize schedule for one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepPolicy {
    Constant {
        eta: f64,
    },
    /// `1 / (k + sqrt(k^2 + k T L* / B^2))` with `k = 4 + lambda`, where `B`
    /// bounds the comparator norm, `L*` its average loss and `T` the horizon.
    SmoothRegret {
        bound_b: f64,
        l_star: f64,
        horizon: f64,
    },
}

impl StepPolicy {
    /// The constant stepsize used for every step of a run.
    pub fn eta(&self, lambda: f64) -> f64 {
        match *self {
            StepPolicy::Constant { eta } => eta,
            StepPolicy::SmoothRegret {
                bound_b,
                l_star,
                horizon,
            } => {
                let kappa = 4.0 + lambda;
                let under = kappa * kappa + kappa * horizon * l_star / (bound_b * bound_b);
                1.0 / (kappa + under.sqrt())
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            StepPolicy::Constant { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(format!("stepsize must be positive, got {eta}"))
            }
            StepPolicy::SmoothRegret {
                bound_b,
                l_star,
                horizon,
            } if !(bound_b > 0.0 && l_star >= 0.0 && horizon > 0.0) => Err(format!(
                "smooth-regret schedule needs B > 0, L* >= 0, T > 0 (got {bound_b}, {l_star}, {horizon})"
            )),
            _ => Ok(()),
        }
    }
}

/// Runs one pass of `learner` over `stream` with a fixed stepsize.
pub fn train_pass<'a, L, I>(learner: &mut L, stream: I, eta: f64)
where
    L: OnlineLearner + ?Sized,
    I: IntoIterator<Item = &'a Instance>,
{
    for x in stream {
        learner.step(x, eta);
    }
}
