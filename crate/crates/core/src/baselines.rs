//! Baselines: class-weighted univariate online learners and OPAUC over
//! reduced feature spaces (random feature subset or Gaussian projection).

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, Label, SparseVector};
use crate::exact::ExactModel;
use crate::learner::OnlineLearner;

const EXP_MARGIN_CLIP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnivariateLoss {
    /// `(1 - y w^T x)^2`
    Square,
    /// `exp(-y w^T x)`, margin clipped to [-30, 30]
    Exponential,
}

/// Online linear model on a per-instance loss, each instance weighted by
/// the running share of the opposite class.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateModel {
    w: Array1<f64>,
    loss: UnivariateLoss,
    t_pos: usize,
    t_neg: usize,
    lambda: f64,
}

impl UnivariateModel {
    pub fn new(dim: usize, loss: UnivariateLoss, lambda: f64) -> Self {
        Self {
            w: Array1::zeros(dim),
            loss,
            t_pos: 0,
            t_neg: 0,
            lambda,
        }
    }

    pub fn loss_kind(&self) -> UnivariateLoss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.t_pos, self.t_neg)
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.w.view()
    }

    pub fn set_weights(&mut self, w: Array1<f64>) {
        assert_eq!(w.len(), self.w.len());
        self.w = w;
    }

    pub fn set_counts(&mut self, t_pos: usize, t_neg: usize) {
        self.t_pos = t_pos;
        self.t_neg = t_neg;
    }

    /// `T- / t` for positives and `T+ / t` for negatives.
    pub fn class_weight(&self, y: Label) -> f64 {
        let total = (self.t_pos + self.t_neg) as f64;
        if total == 0.0 {
            return 0.0;
        }
        match y {
            Label::Pos => self.t_neg as f64 / total,
            Label::Neg => self.t_pos as f64 / total,
        }
    }

    /// Weighted loss plus `(lambda/2)|w|^2` at `w`, using the current counts.
    pub fn loss_at(&self, x: &SparseVector, y: Label, w: ArrayView1<f64>) -> f64 {
        let m = y.sign() * x.dot(w);
        let ell = match self.loss {
            UnivariateLoss::Square => (1.0 - m) * (1.0 - m),
            UnivariateLoss::Exponential => (-m.clamp(-EXP_MARGIN_CLIP, EXP_MARGIN_CLIP)).exp(),
        };
        self.class_weight(y) * ell + 0.5 * self.lambda * w.dot(&w)
    }

    /// Gradient of [`UnivariateModel::loss_at`].
    pub fn gradient_at(&self, x: &SparseVector, y: Label, w: ArrayView1<f64>) -> Array1<f64> {
        let m = y.sign() * x.dot(w);
        let dl_dm = match self.loss {
            UnivariateLoss::Square => -2.0 * (1.0 - m),
            UnivariateLoss::Exponential => -(-m.clamp(-EXP_MARGIN_CLIP, EXP_MARGIN_CLIP)).exp(),
        };
        let coef = self.class_weight(y) * dl_dm * y.sign();
        let mut g = &w * self.lambda;
        let d = g.len();
        for (j, v) in x.iter().filter(|&(j, _)| j < d) {
            g[j] += coef * v;
        }
        g
    }
}

impl OnlineLearner for UnivariateModel {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn step(&mut self, x: &Instance, eta: f64) {
        match x.label {
            Label::Pos => self.t_pos += 1,
            Label::Neg => self.t_neg += 1,
        }
        let g = self.gradient_at(&x.features, x.label, self.w.view());
        self.w.scaled_add(-eta, &g);
    }

    fn score(&self, x: &SparseVector) -> f64 {
        x.dot(self.w.view())
    }

    fn state_len(&self) -> usize {
        self.w.len()
    }
}

/// Fixed map from the input space to a smaller one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FeatureMap {
    /// Keeps the listed 0-based coordinates, in increasing order.
    Subsample { dim: usize, indices: Vec<usize> },
    /// `x -> H^T x` for a `dim x k` matrix `H` stored row by row.
    GaussianProjection { dim: usize, rows: Vec<Vec<f64>> },
}

impl FeatureMap {
    /// `k` coordinates of `0..dim`, chosen uniformly without replacement.
    pub fn random_subsample(dim: usize, k: usize, seed: u64) -> Result<Self, String> {
        if k == 0 || k >= dim {
            return Err(format!("projection size {k} must be in 1..{dim}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices = sample(&mut rng, dim, k).into_vec();
        indices.sort_unstable();
        Ok(FeatureMap::Subsample { dim, indices })
    }

    /// `H` with i.i.d. `N(0, 1/k)` entries, so `E[H^T H] = I_k`.
    pub fn random_projection(dim: usize, k: usize, seed: u64) -> Result<Self, String> {
        if k == 0 || k >= dim {
            return Err(format!("projection size {k} must be in 1..{dim}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (k as f64).sqrt();
        let rows = (0..dim)
            .map(|_| {
                (0..k)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(FeatureMap::GaussianProjection { dim, rows })
    }

    /// Projection with an explicit `dim x k` matrix.
    pub fn from_matrix(h: &Array2<f64>) -> Self {
        FeatureMap::GaussianProjection {
            dim: h.nrows(),
            rows: h.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Subsample { dim, .. } | FeatureMap::GaussianProjection { dim, .. } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Subsample { indices, .. } => indices.len(),
            FeatureMap::GaussianProjection { rows, .. } => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn project(&self, x: &SparseVector) -> SparseVector {
        match self {
            FeatureMap::Subsample { indices, .. } => {
                let pairs = indices
                    .iter()
                    .enumerate()
                    .map(|(k, &j)| (k, x.get(j)))
                    .filter(|&(_, v)| v != 0.0)
                    .collect();
                SparseVector::from_pairs(pairs).expect("positions increase")
            }
            FeatureMap::GaussianProjection { rows, .. } => {
                let mut out = vec![0.0; self.output_dim()];
                for (j, v) in x.iter().filter(|&(j, _)| j < rows.len()) {
                    for (o, h) in out.iter_mut().zip(&rows[j]) {
                        *o += v * h;
                    }
                }
                SparseVector::from_dense(&out)
            }
        }
    }

    pub fn project_instance(&self, x: &Instance) -> Instance {
        Instance::new(self.project(&x.features), x.label)
    }

    fn len(&self) -> usize {
        match self {
            FeatureMap::Subsample { indices, .. } => indices.len(),
            FeatureMap::GaussianProjection { rows, .. } => rows.iter().map(Vec::len).sum(),
        }
    }
}

/// Exact OPAUC trained on a fixed low-dimensional map of each instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedModel {
    map: FeatureMap,
    inner: ExactModel,
}

impl ProjectedModel {
    pub fn new(map: FeatureMap, lambda: f64) -> Self {
        let inner = ExactModel::new(map.output_dim(), lambda);
        Self { map, inner }
    }

    pub fn from_parts(map: FeatureMap, inner: ExactModel) -> Self {
        Self { map, inner }
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn inner(&self) -> &ExactModel {
        &self.inner
    }
}

impl OnlineLearner for ProjectedModel {
    fn dim(&self) -> usize {
        self.map.input_dim()
    }

    fn step(&mut self, x: &Instance, eta: f64) {
        let projected = self.map.project_instance(x);
        self.inner.step(&projected, eta);
    }

    fn score(&self, x: &SparseVector) -> f64 {
        self.inner.score(&self.map.project(x))
    }

    fn state_len(&self) -> usize {
        self.inner.state_len() + self.map.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::synth;
    use ndarray::array;
    use proptest::prelude::*;

    fn fd_gradient(
        m: &UnivariateModel,
        x: &SparseVector,
        y: Label,
        w: &Array1<f64>,
    ) -> Array1<f64> {
        let h = 1e-5;
        Array1::from_shape_fn(w.len(), |j| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            (m.loss_at(x, y, wp.view()) - m.loss_at(x, y, wm.view())) / (2.0 * h)
        })
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        (a - b).mapv(|v| v * v).sum().sqrt() / b.mapv(|v| v * v).sum().sqrt().max(1e-300)
    }

    #[test]
    fn square_gradient_at_zero() {
        let mut m = UnivariateModel::new(2, UnivariateLoss::Square, 0.0);
        m.set_counts(3, 3);
        let x = SparseVector::from_dense(&[0.5, -1.0]);
        for y in [Label::Pos, Label::Neg] {
            let g = m.gradient_at(&x, y, Array1::zeros(2).view());
            let expected = array![0.5, -1.0] * (-0.5 * 2.0 * y.sign());
            assert_eq!(g, expected);
        }
    }

    #[test]
    fn all_positive_stream_leaves_weights() {
        for loss in [UnivariateLoss::Square, UnivariateLoss::Exponential] {
            let mut m = UnivariateModel::new(2, loss, 0.0);
            for i in 0..10 {
                m.step(&Instance::dense(&[1.0, i as f64 / 10.0], Label::Pos), 0.5);
            }
            assert!(m.weights().iter().all(|&v| v == 0.0));
            assert_eq!(m.counts(), (10, 0));
        }
    }

    proptest! {
        #[test]
        fn univariate_gradients_match_finite_differences(
            xs in proptest::collection::vec(-1.0f64..1.0, 4),
            ws in proptest::collection::vec(-1.0f64..1.0, 4),
            pos in 1usize..10,
            neg in 1usize..10,
            lambda in 0.0f64..1.0,
            positive in any::<bool>(),
            exponential in any::<bool>(),
        ) {
            let loss = if exponential { UnivariateLoss::Exponential } else { UnivariateLoss::Square };
            let mut m = UnivariateModel::new(4, loss, lambda);
            m.set_counts(pos, neg);
            let y = if positive { Label::Pos } else { Label::Neg };
            let x = SparseVector::from_dense(&xs);
            let w = Array1::from(ws);
            let g = m.gradient_at(&x, y, w.view());
            prop_assume!(g.mapv(|v| v * v).sum() > 1e-8);
            prop_assert!(rel_err(&g, &fd_gradient(&m, &x, y, &w)) < 1e-6);
        }
    }

    #[test]
    fn exponential_margin_is_clipped() {
        let mut m = UnivariateModel::new(1, UnivariateLoss::Exponential, 0.0);
        m.set_counts(1, 1);
        let x = SparseVector::from_dense(&[1.0]);
        let l = m.loss_at(&x, Label::Pos, array![-1000.0].view());
        assert!(l.is_finite());
        assert_eq!(l, 0.5 * 30f64.exp());
    }

    #[test]
    fn subsample_projection() {
        let map = FeatureMap::Subsample {
            dim: 3,
            indices: vec![0, 2],
        };
        let x = SparseVector::from_dense(&[5.0, 6.0, 7.0]);
        assert_eq!(map.project(&x), SparseVector::from_dense(&[5.0, 7.0]));
    }

    #[test]
    fn identity_projection_is_identity() {
        let h = Array2::<f64>::eye(4);
        let map = FeatureMap::from_matrix(&h);
        let x = SparseVector::from_dense(&[0.5, 0.0, -2.0, 1.0]);
        assert_eq!(map.project(&x), x);
    }

    #[test]
    fn gaussian_projection_matches_dense_product() {
        let map = FeatureMap::random_projection(30, 6, 4).unwrap();
        let FeatureMap::GaussianProjection { rows, .. } = &map else {
            unreachable!()
        };
        let h = Array2::from_shape_fn((30, 6), |(i, j)| rows[i][j]);
        let x = SparseVector::from_pairs(vec![(1, 0.3), (7, -0.8), (29, 0.5)]).unwrap();
        let expected = h.t().dot(&x.to_dense(30));
        let got = map.project(&x).to_dense(6);
        assert!((&got - &expected).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn random_maps_validate_size() {
        assert!(FeatureMap::random_subsample(5, 5, 1).is_err());
        assert!(FeatureMap::random_projection(5, 0, 1).is_err());
        let FeatureMap::Subsample { indices, .. } =
            FeatureMap::random_subsample(50, 10, 3).unwrap()
        else {
            unreachable!()
        };
        assert!(indices.windows(2).all(|p| p[0] < p[1]));
        assert_eq!(indices.len(), 10);
    }

    #[test]
    fn projected_training_composes() {
        let ds = synth::gaussian_blobs(120, 12, 0.6, 0.3, 8);
        for map in [
            FeatureMap::random_subsample(12, 5, 1).unwrap(),
            FeatureMap::random_projection(12, 5, 1).unwrap(),
        ] {
            let mut wrapped = ProjectedModel::new(map.clone(), 0.01);
            let transformed = Dataset::with_dim(
                ds.instances()
                    .iter()
                    .map(|x| map.project_instance(x))
                    .collect(),
                5,
            );
            let mut plain = ExactModel::new(5, 0.01);
            for (a, b) in ds.instances().iter().zip(transformed.instances()) {
                wrapped.step(a, 0.1);
                plain.step(b, 0.1);
            }
            assert_eq!(wrapped.inner(), &plain);
        }
    }
}
