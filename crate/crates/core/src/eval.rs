//! Exact AUC, the empirical pairwise square-loss objective, and cumulative
//! online-loss traces.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::data::{Dataset, Instance, Label};
use crate::error::EvalError;
use crate::learner::OnlineLearner;

/// AUC with half credit for ties, computed from average ranks in
/// `O(n log n)`.
pub fn auc(scored: &[(f64, Label)]) -> Result<f64, EvalError> {
    if let Some(&(s, _)) = scored.iter().find(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(s));
    }
    let pos = scored.iter().filter(|(_, y)| *y == Label::Pos).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass { pos, neg });
    }
    let mut sorted: Vec<(f64, Label)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    // rank sums are kept doubled so tied groups stay integral
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        // 1-based ranks start+1 ..= end, average (start + 1 + end) / 2
        let doubled_avg = (start + 1 + end) as u128;
        let group_pos = sorted[start..end]
            .iter()
            .filter(|(_, y)| *y == Label::Pos)
            .count() as u128;
        doubled_rank_sum += doubled_avg * group_pos;
        start = end;
    }
    let (p, n) = (pos as u128, neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

/// Scores every instance of `ds` with `learner`.
pub fn score_dataset<L: OnlineLearner + ?Sized>(learner: &L, ds: &Dataset) -> Vec<(f64, Label)> {
    ds.instances()
        .iter()
        .map(|x| (learner.score(&x.features), x.label))
        .collect()
}

pub fn auc_of<L: OnlineLearner + ?Sized>(learner: &L, ds: &Dataset) -> Result<f64, EvalError> {
    auc(&score_dataset(learner, ds))
}

/// How [`surrogate_objective`] evaluates the pairwise average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// Explicit double sum over all positive/negative pairs.
    Pairwise,
    /// Closed form from per-class means and variances of the scores.
    Moments,
}

/// `(lambda/2)|w|^2 + sum_ij (1 - w^T(x_i^+ - x_j^-))^2 / (2 n+ n-)`.
pub fn surrogate_objective(
    w: ArrayView1<f64>,
    ds: &Dataset,
    lambda: f64,
    mode: ObjectiveMode,
) -> Result<f64, EvalError> {
    if w.len() < ds.dim() {
        return Err(EvalError::DimensionMismatch {
            expected: ds.dim(),
            got: w.len(),
        });
    }
    let (n_pos, n_neg) = (ds.pos_count(), ds.neg_count());
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass {
            pos: n_pos,
            neg: n_neg,
        });
    }
    let scores = |label: Label| -> Vec<f64> {
        ds.instances()
            .iter()
            .filter(|x| x.label == label)
            .map(|x| x.features.dot(w))
            .collect()
    };
    let (sp, sn) = (scores(Label::Pos), scores(Label::Neg));
    let pairwise = match mode {
        ObjectiveMode::Pairwise => {
            let mut total = 0.0;
            for a in &sp {
                for b in &sn {
                    let r = 1.0 - (a - b);
                    total += r * r;
                }
            }
            total / (n_pos * n_neg) as f64
        }
        ObjectiveMode::Moments => {
            // E(1 - (a - b))^2 = (1 - (ma - mb))^2 + var_a + var_b for independent a, b
            let moments = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / s.len() as f64;
                (m, v)
            };
            let ((ma, va), (mb, vb)) = (moments(&sp), moments(&sn));
            let gap = 1.0 - (ma - mb);
            gap * gap + va + vb
        }
    };
    Ok(0.5 * lambda * w.dot(&w) + 0.5 * pairwise)
}

/// A learner that can report the per-step pairwise loss it optimizes.
pub trait TracedLearner {
    /// Performs one step and returns the step's loss at the pre-update
    /// weights, plus the same loss at `comparator` when given.
    fn step_with_loss(
        &mut self,
        x: &Instance,
        eta: f64,
        comparator: Option<ArrayView1<f64>>,
    ) -> (f64, Option<f64>);
}

/// Where [`regret_trace`] records cumulative losses.
#[derive(Clone, Debug, PartialEq)]
pub enum Checkpoints {
    /// Powers of two and the final step.
    Geometric,
    /// Explicit steps (1-based); the final step is always recorded.
    At(Vec<usize>),
}

impl Checkpoints {
    fn hits(&self, t: usize) -> bool {
        match self {
            Checkpoints::Geometric => t.is_power_of_two(),
            Checkpoints::At(ts) => ts.contains(&t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: usize,
    pub cum_loss: f64,
    pub cum_ref_loss: Option<f64>,
}

impl TracePoint {
    pub fn avg_loss(&self) -> f64 {
        self.cum_loss / self.t as f64
    }
}

/// Cumulative online loss `sum_{s <= t} L_s(w_s)` at checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegretTrace {
    pub points: Vec<TracePoint>,
}

impl RegretTrace {
    pub fn at(&self, t: usize) -> Option<&TracePoint> {
        self.points.iter().find(|p| p.t == t)
    }

    /// CSV with header `t,cum_loss,avg_loss` (plus `cum_ref_loss` when a
    /// comparator was traced).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let with_ref = self.points.iter().any(|p| p.cum_ref_loss.is_some());
        let mut w = csv::Writer::from_writer(out);
        if with_ref {
            w.write_record(["t", "cum_loss", "avg_loss", "cum_ref_loss"])?;
        } else {
            w.write_record(["t", "cum_loss", "avg_loss"])?;
        }
        for p in &self.points {
            let mut row = vec![
                p.t.to_string(),
                p.cum_loss.to_string(),
                p.avg_loss().to_string(),
            ];
            if with_ref {
                row.push(p.cum_ref_loss.unwrap_or(f64::NAN).to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains `model` over `stream` and records its cumulative online loss.
pub fn regret_trace<'a, M, I>(
    model: &mut M,
    stream: I,
    eta: f64,
    comparator: Option<ArrayView1<f64>>,
    checkpoints: &Checkpoints,
) -> RegretTrace
where
    M: TracedLearner + ?Sized,
    I: IntoIterator<Item = &'a Instance>,
{
    let mut trace = RegretTrace::default();
    let mut cum = 0.0;
    let mut cum_ref = comparator.map(|_| 0.0);
    let mut t = 0;
    let mut recorded = 0;
    for x in stream {
        t += 1;
        let (loss, ref_loss) = model.step_with_loss(x, eta, comparator);
        cum += loss;
        if let (Some(acc), Some(l)) = (cum_ref.as_mut(), ref_loss) {
            *acc += l;
        }
        if checkpoints.hits(t) {
            trace.points.push(TracePoint {
                t,
                cum_loss: cum,
                cum_ref_loss: cum_ref,
            });
            recorded = t;
        }
    }
    if t > 0 && recorded != t {
        trace.points.push(TracePoint {
            t,
            cum_loss: cum,
            cum_ref_loss: cum_ref,
        });
    }
    trace
}
