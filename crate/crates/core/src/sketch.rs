//! OPAUC with randomized low-rank covariance sketches.
//!
//! Each class keeps `Z = sum_i x_i r_i^T / sqrt(tau)` over its instances,
//! with one Gaussian row `r_i ~ N(0, I_tau)` drawn per arriving instance,
//! and `rho = sum_i r_i / sqrt(tau)`. The covariance is approximated by
//!
//! ```text
//! S_hat = Z Z^T / T - c_hat c_hat^T,   c_hat = c rho^T / T
//! ```
//!
//! and only ever applied to vectors, so state and per-step work are
//! `O(tau d)`; no `d x d` matrix is formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, Label, SparseVector};
use crate::eval::TracedLearner;
use crate::exact::update_mean;
use crate::learner::{OnlineLearner, StepPolicy};

/// Draws `tau` independent standard normal values.
pub fn draw_sketch_row<R: Rng + ?Sized>(rng: &mut R, tau: usize) -> Array1<f64> {
    Array1::from_shape_fn(tau, |_| rng.sample(StandardNormal))
}

/// Per-class sketch statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchStats {
    pub count: usize,
    pub mean: Array1<f64>,
    /// `d x tau`, row-major so a sparse instance touches `nnz * tau` entries.
    pub z: Array2<f64>,
    pub rho: Array1<f64>,
}

impl SketchStats {
    fn new(dim: usize, tau: usize) -> Self {
        Self {
            count: 0,
            mean: Array1::zeros(dim),
            z: Array2::zeros((dim, tau)),
            rho: Array1::zeros(tau),
        }
    }

    fn push(&mut self, x: &SparseVector, row: ArrayView1<f64>) {
        let dim = self.mean.len();
        let scale = 1.0 / (row.len() as f64).sqrt();
        self.count += 1;
        update_mean(&mut self.mean, self.count, x.to_dense(dim).view());
        for (j, v) in x.iter().filter(|&(j, _)| j < dim) {
            self.z.row_mut(j).scaled_add(v * scale, &row);
        }
        self.rho.scaled_add(scale, &row);
    }

    /// `S_hat w` without materializing `S_hat`.
    fn apply_cov(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let t = self.count as f64;
        let ztw = self.z.t().dot(&w);
        let mut out = self.z.dot(&ztw) / t;
        let rank_one = self.rho.dot(&self.rho) / (t * t) * self.mean.dot(&w);
        out.scaled_add(-rank_one, &self.mean);
        out
    }

    /// `w^T S_hat w`.
    fn quad_form(&self, w: ArrayView1<f64>) -> f64 {
        let t = self.count as f64;
        let ztw = self.z.t().dot(&w);
        let cw = self.mean.dot(&w);
        ztw.dot(&ztw) / t - self.rho.dot(&self.rho) / (t * t) * cw * cw
    }
}

#[derive(Clone, Debug)]
pub struct SketchModel {
    w: Array1<f64>,
    pos: SketchStats,
    neg: SketchStats,
    tau: usize,
    lambda: f64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl SketchModel {
    pub fn new(dim: usize, tau: usize, lambda: f64, seed: u64) -> Self {
        assert!(tau >= 1, "sketch width must be at least 1");
        Self {
            w: Array1::zeros(dim),
            pos: SketchStats::new(dim, tau),
            neg: SketchStats::new(dim, tau),
            tau,
            lambda,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.w.view()
    }

    pub fn set_weights(&mut self, w: Array1<f64>) {
        assert_eq!(w.len(), self.w.len());
        self.w = w;
    }

    pub fn stats(&self, label: Label) -> &SketchStats {
        match label {
            Label::Pos => &self.pos,
            Label::Neg => &self.neg,
        }
    }

    pub fn sketch(&self, label: Label) -> ArrayView2<'_, f64> {
        self.stats(label).z.view()
    }

    /// Draws this instance's sketch row and folds `x` into its class;
    /// returns the row.
    pub fn update_sketch(&mut self, x: &Instance) -> Array1<f64> {
        let row = draw_sketch_row(&mut self.rng, self.tau);
        match x.label {
            Label::Pos => self.pos.push(&x.features, row.view()),
            Label::Neg => self.neg.push(&x.features, row.view()),
        }
        row
    }

    fn delta(&self, x: &SparseVector, other: &SketchStats) -> Array1<f64> {
        let mut delta = -&other.mean;
        let d = delta.len();
        for (j, v) in x.iter().filter(|&(j, _)| j < d) {
            delta[j] += v;
        }
        delta
    }

    /// Approximate gradient at `w`; `None` when the opposite class is empty.
    pub fn gradient_at(
        &self,
        x: &SparseVector,
        y: Label,
        w: ArrayView1<f64>,
    ) -> Option<Array1<f64>> {
        let other = self.stats(y.opposite());
        if other.count == 0 {
            return None;
        }
        let delta = self.delta(x, other);
        let proj = delta.dot(&w);
        let mut g = other.apply_cov(w);
        g.scaled_add(self.lambda, &w);
        g.scaled_add(proj - y.sign(), &delta);
        Some(g)
    }

    pub fn gradient(&self, x: &SparseVector, y: Label) -> Option<Array1<f64>> {
        self.gradient_at(x, y, self.w.view())
    }

    /// Approximate per-step loss at `w`, 0 when the opposite class is empty.
    pub fn loss_at(&self, x: &SparseVector, y: Label, w: ArrayView1<f64>) -> f64 {
        let other = self.stats(y.opposite());
        if other.count == 0 {
            return 0.0;
        }
        let delta = self.delta(x, other);
        let proj = delta.dot(&w);
        -y.sign() * proj
            + 0.5 * (1.0 + other.quad_form(w))
            + 0.5 * self.lambda * w.dot(&w)
            + 0.5 * proj * proj
    }

    pub fn export(&self, include_sketches: bool) -> SketchModelExport {
        let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        SketchModelExport {
            dim: self.w.len(),
            tau: self.tau,
            lambda: self.lambda,
            w: self.w.to_vec(),
            c_pos: self.pos.mean.to_vec(),
            c_neg: self.neg.mean.to_vec(),
            counts: ClassCounts {
                pos: self.pos.count,
                neg: self.neg.count,
            },
            seed: self.seed,
            z_pos: include_sketches.then(|| rows(&self.pos.z)),
            z_neg: include_sketches.then(|| rows(&self.neg.z)),
        }
    }
}

impl OnlineLearner for SketchModel {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn step(&mut self, x: &Instance, eta: f64) {
        self.update_sketch(x);
        if let Some(g) = self.gradient(&x.features, x.label) {
            self.w.scaled_add(-eta, &g);
        }
    }

    fn score(&self, x: &SparseVector) -> f64 {
        x.dot(self.w.view())
    }

    fn state_len(&self) -> usize {
        let (d, tau) = (self.w.len(), self.tau);
        d + 2 * (d + d * tau + tau)
    }
}

impl TracedLearner for SketchModel {
    fn step_with_loss(
        &mut self,
        x: &Instance,
        eta: f64,
        comparator: Option<ArrayView1<f64>>,
    ) -> (f64, Option<f64>) {
        self.update_sketch(x);
        let loss = self.loss_at(&x.features, x.label, self.w.view());
        let ref_loss = comparator.map(|w| self.loss_at(&x.features, x.label, w));
        if let Some(g) = self.gradient(&x.features, x.label) {
            self.w.scaled_add(-eta, &g);
        }
        (loss, ref_loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pos: usize,
    pub neg: usize,
}

/// Serialized form of a [`SketchModel`]; sketches are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchModelExport {
    pub dim: usize,
    pub tau: usize,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub c_pos: Vec<f64>,
    pub c_neg: Vec<f64>,
    pub counts: ClassCounts,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_pos: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_neg: Option<Vec<Vec<f64>>>,
}

/// One pass over `ds`; the sketch stream is seeded by `seed`, the visiting
/// order by `shuffle_seed`.
pub fn train_sketch(
    ds: &Dataset,
    lambda: f64,
    tau: usize,
    policy: &StepPolicy,
    seed: u64,
    shuffle_seed: Option<u64>,
) -> SketchModel {
    let mut model = SketchModel::new(ds.dim(), tau, lambda, seed);
    let eta = policy.eta(lambda);
    for x in ds.stream(shuffle_seed) {
        model.step(x, eta);
    }
    model
}
