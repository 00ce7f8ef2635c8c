//! OPAUC with exact class statistics.
//!
//! The pairwise square loss of instance `t` against every earlier instance
//! of the opposite class depends on that class only through its mean and
//! covariance, so the learner keeps `(count, mean, covariance)` per class
//! and never stores instances. State is `O(d^2)` regardless of stream length.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, Label, SparseVector};
use crate::eval::TracedLearner;
use crate::learner::{OnlineLearner, StepPolicy};

/// Replaces `c`, the mean of `count_after - 1` vectors, with the mean
/// including `x`.
pub fn update_mean(c: &mut Array1<f64>, count_after: usize, x: ArrayView1<f64>) {
    debug_assert!(count_after >= 1);
    let inv = 1.0 / count_after as f64;
    c.zip_mut_with(&x, |ci, &xi| *ci += inv * (xi - *ci));
}

/// Replaces `s`, the (1/T-normalized) covariance of `count_after - 1`
/// vectors with mean `c_before`, by the covariance including `x`.
/// `c_after` is the mean already updated with `x`.
pub fn update_covariance(
    s: &mut Array2<f64>,
    c_before: ArrayView1<f64>,
    c_after: ArrayView1<f64>,
    count_after: usize,
    x: ArrayView1<f64>,
) {
    debug_assert!(count_after >= 1);
    let inv = 1.0 / count_after as f64;
    let before = &x - &c_before;
    let after = &x - &c_after;
    // Symmetric in (i, j) term by term, so S stays exactly symmetric.
    for (i, mut row) in s.rows_mut().into_iter().enumerate() {
        let (bi, ai) = (before[i], after[i]);
        Zip::from(&mut row)
            .and(&before)
            .and(&after)
            .for_each(|sij, &bj, &aj| *sij += inv * (0.5 * (bi * aj + ai * bj) - *sij));
    }
}

/// Running count, mean and covariance of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub count: usize,
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl ClassStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: Array1::zeros(dim),
            cov: Array2::zeros((dim, dim)),
        }
    }

    pub fn push(&mut self, x: ArrayView1<f64>) {
        self.count += 1;
        let before = self.mean.clone();
        update_mean(&mut self.mean, self.count, x);
        update_covariance(
            &mut self.cov,
            before.view(),
            self.mean.view(),
            self.count,
            x,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactModel {
    w: Array1<f64>,
    pos: ClassStats,
    neg: ClassStats,
    lambda: f64,
}

impl ExactModel {
    /// Zero weights and empty statistics.
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self {
            w: Array1::zeros(dim),
            pos: ClassStats::new(dim),
            neg: ClassStats::new(dim),
            lambda,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.w.view()
    }

    pub fn set_weights(&mut self, w: Array1<f64>) {
        assert_eq!(w.len(), self.w.len());
        self.w = w;
    }

    pub fn stats(&self, label: Label) -> &ClassStats {
        match label {
            Label::Pos => &self.pos,
            Label::Neg => &self.neg,
        }
    }

    fn stats_mut(&mut self, label: Label) -> &mut ClassStats {
        match label {
            Label::Pos => &mut self.pos,
            Label::Neg => &mut self.neg,
        }
    }

    /// Folds `x` into the statistics of class `y`.
    pub fn observe(&mut self, x: ArrayView1<f64>, y: Label) {
        self.stats_mut(y).push(x);
    }

    /// Gradient of the per-step loss at `w`; `None` when the opposite class
    /// is still empty (no pairs, the loss is identically zero).
    ///
    /// With `delta = x - c` over the opposite class:
    /// `lambda w - y delta + delta (delta^T w) + S w`.
    pub fn gradient_at(
        &self,
        x: ArrayView1<f64>,
        y: Label,
        w: ArrayView1<f64>,
    ) -> Option<Array1<f64>> {
        let other = self.stats(y.opposite());
        if other.count == 0 {
            return None;
        }
        let delta = &x - &other.mean;
        let proj = delta.dot(&w);
        let mut g = other.cov.dot(&w);
        g.scaled_add(self.lambda, &w);
        g.scaled_add(proj - y.sign(), &delta);
        Some(g)
    }

    /// Gradient at the current weights.
    pub fn gradient(&self, x: ArrayView1<f64>, y: Label) -> Option<Array1<f64>> {
        self.gradient_at(x, y, self.w.view())
    }

    /// Per-step loss at `w`: the regularizer plus the mean pairwise square
    /// loss of `x` against every stored opposite-class instance, evaluated
    /// from the class mean and covariance. Zero when there are no pairs.
    pub fn loss_at(&self, x: ArrayView1<f64>, y: Label, w: ArrayView1<f64>) -> f64 {
        let other = self.stats(y.opposite());
        if other.count == 0 {
            return 0.0;
        }
        let delta = &x - &other.mean;
        let proj = delta.dot(&w);
        let quad = w.dot(&other.cov.dot(&w));
        0.5 * self.lambda * w.dot(&w) + 0.5 * (1.0 - 2.0 * y.sign() * proj + proj * proj + quad)
    }

    /// Statistics for `x`'s class first, then `w <- w - eta * gradient`
    /// when the opposite class has been seen.
    pub fn step_dense(&mut self, x: ArrayView1<f64>, y: Label, eta: f64) {
        self.observe(x, y);
        if let Some(g) = self.gradient(x, y) {
            self.w.scaled_add(-eta, &g);
        }
    }

    pub fn export(&self, include_covariances: bool) -> ExactModelExport {
        let cov = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        ExactModelExport {
            dim: self.w.len(),
            lambda: self.lambda,
            w: self.w.to_vec(),
            c_pos: self.pos.mean.to_vec(),
            c_neg: self.neg.mean.to_vec(),
            t_pos: self.pos.count,
            t_neg: self.neg.count,
            s_pos: include_covariances.then(|| cov(&self.pos.cov)),
            s_neg: include_covariances.then(|| cov(&self.neg.cov)),
        }
    }

    /// Rebuilds a model from an export; without covariances the model can
    /// score but resumed training would start from zero covariance.
    pub fn from_export(e: &ExactModelExport) -> Result<Self, String> {
        let d = e.dim;
        if e.w.len() != d || e.c_pos.len() != d || e.c_neg.len() != d {
            return Err(format!("model vectors do not match dim {d}"));
        }
        let matrix = |rows: &Option<Vec<Vec<f64>>>| -> Result<Array2<f64>, String> {
            match rows {
                None => Ok(Array2::zeros((d, d))),
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        return Err(format!("covariance is not {d}x{d}"));
                    }
                    Ok(Array2::from_shape_vec((d, d), rows.concat()).expect("shape checked"))
                }
            }
        };
        Ok(Self {
            w: Array1::from(e.w.clone()),
            pos: ClassStats {
                count: e.t_pos,
                mean: Array1::from(e.c_pos.clone()),
                cov: matrix(&e.s_pos)?,
            },
            neg: ClassStats {
                count: e.t_neg,
                mean: Array1::from(e.c_neg.clone()),
                cov: matrix(&e.s_neg)?,
            },
            lambda: e.lambda,
        })
    }

    pub fn covariance(&self, label: Label) -> ArrayView2<'_, f64> {
        self.stats(label).cov.view()
    }
}

impl OnlineLearner for ExactModel {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn step(&mut self, x: &Instance, eta: f64) {
        let dense = x.features.to_dense(self.w.len());
        self.step_dense(dense.view(), x.label, eta);
    }

    fn score(&self, x: &SparseVector) -> f64 {
        x.dot(self.w.view())
    }

    fn state_len(&self) -> usize {
        let d = self.w.len();
        d + 2 * (d + d * d)
    }
}

impl TracedLearner for ExactModel {
    fn step_with_loss(
        &mut self,
        x: &Instance,
        eta: f64,
        comparator: Option<ArrayView1<f64>>,
    ) -> (f64, Option<f64>) {
        let dense = x.features.to_dense(self.w.len());
        self.observe(dense.view(), x.label);
        let loss = self.loss_at(dense.view(), x.label, self.w.view());
        let ref_loss = comparator.map(|w| self.loss_at(dense.view(), x.label, w));
        if let Some(g) = self.gradient(dense.view(), x.label) {
            self.w.scaled_add(-eta, &g);
        }
        (loss, ref_loss)
    }
}

/// Serialized form of an [`ExactModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactModelExport {
    pub dim: usize,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub c_pos: Vec<f64>,
    pub c_neg: Vec<f64>,
    pub t_pos: usize,
    pub t_neg: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_pos: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_neg: Option<Vec<Vec<f64>>>,
}

/// One pass over `ds` in the order given by `shuffle_seed`.
pub fn train_exact(
    ds: &Dataset,
    lambda: f64,
    policy: &StepPolicy,
    shuffle_seed: Option<u64>,
) -> ExactModel {
    let mut model = ExactModel::new(ds.dim(), lambda);
    let eta = policy.eta(lambda);
    for x in ds.stream(shuffle_seed) {
        model.step(x, eta);
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn batch_mean(xs: &[Array1<f64>]) -> Array1<f64> {
        let mut m = Array1::zeros(xs[0].len());
        for x in xs {
            m += x;
        }
        m / xs.len() as f64
    }

    fn batch_cov(xs: &[Array1<f64>]) -> Array2<f64> {
        let d = xs[0].len();
        let c = batch_mean(xs);
        let mut s = Array2::zeros((d, d));
        for x in xs {
            for i in 0..d {
                for j in 0..d {
                    s[[i, j]] += x[i] * x[j];
                }
            }
        }
        s /= xs.len() as f64;
        for i in 0..d {
            for j in 0..d {
                s[[i, j]] -= c[i] * c[j];
            }
        }
        s
    }

    fn frob(m: &Array2<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn mean_examples() {
        let mut c = array![0.0, 0.0];
        update_mean(&mut c, 1, array![1.0, 2.0].view());
        assert_eq!(c, array![1.0, 2.0]);
        update_mean(&mut c, 2, array![3.0, 4.0].view());
        assert_eq!(c, array![2.0, 3.0]);
    }

    #[test]
    fn mean_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = random_vectors(&mut rng, 5, 6);
        let mut c = Array1::zeros(6);
        for (i, x) in xs.iter().enumerate() {
            update_mean(&mut c, i + 1, x.view());
        }
        let diff = (&c - &batch_mean(&xs)).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn covariance_examples() {
        let mut stats = ClassStats::new(2);
        stats.push(array![1.0, 0.0].view());
        assert_eq!(stats.cov, Array2::<f64>::zeros((2, 2)));
        stats.push(array![0.0, 1.0].view());
        let expected = array![[0.25, -0.25], [-0.25, 0.25]];
        assert!(frob(&(&stats.cov - &expected)) < 1e-15);
    }

    #[test]
    fn covariance_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = random_vectors(&mut rng, 10, 4);
        let mut stats = ClassStats::new(4);
        for x in &xs {
            stats.push(x.view());
        }
        assert!(frob(&(&stats.cov - &batch_cov(&xs))) < 1e-10);
    }

    #[test]
    fn covariance_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 8;
        let xs = random_vectors(&mut rng, 200, d);
        let mut stats = ClassStats::new(d);
        for x in &xs {
            stats.push(x.view());
        }
        let m = nalgebra::DMatrix::from_fn(d, d, |i, j| stats.cov[[i, j]]);
        let min_eig = m.symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= -1e-8 * d as f64, "min eigenvalue {min_eig}");
        assert_eq!(stats.cov, stats.cov.t());
    }

    #[test]
    fn gradient_examples() {
        let mut m = ExactModel::new(2, 0.0);
        m.observe(array![0.0, 0.0].view(), Label::Neg);
        let g = m.gradient(array![1.0, 0.0].view(), Label::Pos).unwrap();
        assert_eq!(g, array![-1.0, 0.0]);

        let mut m = ExactModel::new(2, 2.0);
        m.observe(array![0.0, 0.0].view(), Label::Neg);
        m.set_weights(array![1.0, 1.0]);
        let g = m.gradient(array![0.0, 0.0].view(), Label::Pos).unwrap();
        assert_eq!(g, array![2.0, 2.0]);

        let empty = ExactModel::new(2, 1.0);
        assert!(empty
            .gradient(array![1.0, 1.0].view(), Label::Pos)
            .is_none());
        assert_eq!(
            empty.loss_at(array![1.0, 1.0].view(), Label::Pos, array![1.0, 0.0].view()),
            0.0
        );
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = ExactModel::new(3, 0.0);
        for x in random_vectors(&mut rng, 4, 3) {
            m.observe(x.view(), Label::Neg);
        }
        let x = array![0.3, -0.2, 0.9];
        assert!((m.loss_at(x.view(), Label::Pos, Array1::zeros(3).view()) - 0.5).abs() < 1e-15);

        // positives at (1, 0), negatives at (0, 0): w = (1, 0) gives unit margins
        let mut m = ExactModel::new(2, 0.0);
        m.observe(array![0.0, 0.0].view(), Label::Neg);
        m.observe(array![0.0, 0.0].view(), Label::Neg);
        let loss = m.loss_at(array![1.0, 0.0].view(), Label::Pos, array![1.0, 0.0].view());
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn first_instance_only_updates_stats() {
        let mut m = ExactModel::new(2, 0.1);
        m.step(&Instance::dense(&[0.5, -0.5], Label::Pos), 1.0);
        assert_eq!(m.stats(Label::Pos).count, 1);
        assert_eq!(m.stats(Label::Pos).mean, array![0.5, -0.5]);
        assert_eq!(m.stats(Label::Pos).cov, Array2::<f64>::zeros((2, 2)));
        assert_eq!(m.stats(Label::Neg).count, 0);
        assert_eq!(m.weights(), Array1::<f64>::zeros(2));
    }

    #[test]
    fn second_instance_moves_weights() {
        // at w = 0 the gradient for y = -1 is x - c+, so w = c+ - x
        let mut m = ExactModel::new(2, 0.0);
        m.step(&Instance::dense(&[0.5, 0.25], Label::Pos), 1.0);
        m.step(&Instance::dense(&[-0.5, 1.0], Label::Neg), 1.0);
        assert_eq!(m.weights(), array![1.0, -0.75]);
    }

    /// Straight-line transcription of the one-pass algorithm: keeps the whole
    /// prefix and evaluates the pairwise gradient directly.
    fn transcription_oracle(stream: &[(Array1<f64>, Label)], lambda: f64, eta: f64) -> Array1<f64> {
        let d = stream[0].0.len();
        let mut w = Array1::<f64>::zeros(d);
        for t in 0..stream.len() {
            let (x, y) = &stream[t];
            let partners: Vec<&Array1<f64>> = stream[..t]
                .iter()
                .filter(|(_, yi)| yi != y)
                .map(|(xi, _)| xi)
                .collect();
            if partners.is_empty() {
                continue;
            }
            let mut g = &w * lambda;
            for xi in &partners {
                let diff = x - *xi;
                let r = 1.0 - y.sign() * diff.dot(&w);
                g.scaled_add(-r * y.sign() / partners.len() as f64, &diff);
            }
            w.scaled_add(-eta, &g);
        }
        w
    }

    #[test]
    fn full_pass_matches_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stream: Vec<(Array1<f64>, Label)> = (0..20)
            .map(|_| {
                let y = if rng.random_bool(0.4) {
                    Label::Pos
                } else {
                    Label::Neg
                };
                (Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0)), y)
            })
            .collect();
        let (lambda, eta) = (0.05, 0.3);
        let mut m = ExactModel::new(3, lambda);
        for (x, y) in &stream {
            m.step_dense(x.view(), *y, eta);
        }
        let oracle = transcription_oracle(&stream, lambda, eta);
        let err = (&m.w - &oracle).mapv(f64::abs).sum();
        assert!(err < 1e-12, "deviation {err}");
    }

    #[test]
    fn train_exact_contracts() {
        let all_pos = Dataset::new(
            (0..10)
                .map(|i| Instance::dense(&[i as f64 / 10.0, 0.5], Label::Pos))
                .collect(),
        );
        let m = train_exact(&all_pos, 0.1, &StepPolicy::Constant { eta: 0.5 }, Some(1));
        assert!(m.weights().iter().all(|&v| v == 0.0));

        let empty = Dataset::with_dim(Vec::new(), 3);
        let m = train_exact(&empty, 0.1, &StepPolicy::Constant { eta: 0.5 }, None);
        assert_eq!(m.weights().len(), 3);

        let blobs = synth::gaussian_blobs(400, 2, 0.6, 0.25, 11);
        let policy = StepPolicy::Constant { eta: 2f64.powi(-6) };
        let a = train_exact(&blobs, 2f64.powi(-10), &policy, Some(3));
        let b = train_exact(&blobs, 2f64.powi(-10), &policy, Some(3));
        assert_eq!(a.weights(), b.weights());
        let scores: Vec<(f64, Label)> = blobs
            .instances()
            .iter()
            .map(|x| (a.score(&x.features), x.label))
            .collect();
        let auc = crate::eval::auc(&scores).unwrap();
        assert!(auc > 0.95, "training AUC {auc}");
    }

    #[test]
    fn export_round_trip() {
        let blobs = synth::gaussian_blobs(30, 3, 0.5, 0.3, 2);
        let m = train_exact(&blobs, 0.01, &StepPolicy::Constant { eta: 0.1 }, None);
        let json = serde_json::to_string(&m.export(true)).unwrap();
        let back: ExactModelExport = serde_json::from_str(&json).unwrap();
        assert_eq!(ExactModel::from_export(&back).unwrap(), m);
        let slim = m.export(false);
        assert!(slim.s_pos.is_none());
        assert!(!serde_json::to_string(&slim).unwrap().contains("s_pos"));
    }
}
