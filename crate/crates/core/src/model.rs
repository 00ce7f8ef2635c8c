//! Algorithm registry and the on-disk model format.

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::baselines::{FeatureMap, ProjectedModel, UnivariateLoss, UnivariateModel};
use crate::data::{Instance, SparseVector};
use crate::error::ConfigError;
use crate::exact::{ExactModel, ExactModelExport};
use crate::learner::OnlineLearner;
use crate::sketch::{SketchModel, SketchModelExport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "opauc")]
    Opauc,
    #[serde(rename = "opauc-r")]
    OpaucSketch,
    #[serde(rename = "uni-squ")]
    UniSquare,
    #[serde(rename = "uni-exp")]
    UniExp,
    #[serde(rename = "opauc-f")]
    OpaucSubsample,
    #[serde(rename = "opauc-rp")]
    OpaucProjection,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Opauc,
        Algorithm::OpaucSketch,
        Algorithm::UniSquare,
        Algorithm::UniExp,
        Algorithm::OpaucSubsample,
        Algorithm::OpaucProjection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Opauc => "opauc",
            Algorithm::OpaucSketch => "opauc-r",
            Algorithm::UniSquare => "uni-squ",
            Algorithm::UniExp => "uni-exp",
            Algorithm::OpaucSubsample => "opauc-f",
            Algorithm::OpaucProjection => "opauc-rp",
        }
    }

    pub fn needs_tau(self) -> bool {
        self == Algorithm::OpaucSketch
    }

    pub fn needs_proj_dim(self) -> bool {
        matches!(self, Algorithm::OpaucSubsample | Algorithm::OpaucProjection)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Everything needed to build an untrained learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerSpec {
    pub algo: Algorithm,
    pub dim: usize,
    pub lambda: f64,
    pub tau: usize,
    pub proj_dim: usize,
    /// Seeds the sketch stream or the feature map.
    pub seed: u64,
}

/// A trained or untrained learner of any supported kind.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Exact(ExactModel),
    Sketch(SketchModel),
    Univariate(UnivariateModel),
    Projected(ProjectedModel),
}

impl Model {
    pub fn build(spec: &LearnerSpec) -> Result<Model, ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if !(spec.lambda >= 0.0 && spec.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be >= 0, got {}", spec.lambda)));
        }
        Ok(match spec.algo {
            Algorithm::Opauc => Model::Exact(ExactModel::new(spec.dim, spec.lambda)),
            Algorithm::OpaucSketch => {
                if spec.tau == 0 {
                    return Err(invalid("tau must be at least 1".into()));
                }
                Model::Sketch(SketchModel::new(spec.dim, spec.tau, spec.lambda, spec.seed))
            }
            Algorithm::UniSquare => Model::Univariate(UnivariateModel::new(
                spec.dim,
                UnivariateLoss::Square,
                spec.lambda,
            )),
            Algorithm::UniExp => Model::Univariate(UnivariateModel::new(
                spec.dim,
                UnivariateLoss::Exponential,
                spec.lambda,
            )),
            Algorithm::OpaucSubsample => {
                let map = FeatureMap::random_subsample(spec.dim, spec.proj_dim, spec.seed)
                    .map_err(invalid)?;
                Model::Projected(ProjectedModel::new(map, spec.lambda))
            }
            Algorithm::OpaucProjection => {
                let map = FeatureMap::random_projection(spec.dim, spec.proj_dim, spec.seed)
                    .map_err(invalid)?;
                Model::Projected(ProjectedModel::new(map, spec.lambda))
            }
        })
    }

    fn learner(&self) -> &dyn OnlineLearner {
        match self {
            Model::Exact(m) => m,
            Model::Sketch(m) => m,
            Model::Univariate(m) => m,
            Model::Projected(m) => m,
        }
    }

    fn learner_mut(&mut self) -> &mut dyn OnlineLearner {
        match self {
            Model::Exact(m) => m,
            Model::Sketch(m) => m,
            Model::Univariate(m) => m,
            Model::Projected(m) => m,
        }
    }

    pub fn to_saved(&self) -> SavedModel {
        match self {
            Model::Exact(m) => SavedModel::Opauc(m.export(false)),
            Model::Sketch(m) => SavedModel::OpaucSketch(m.export(false)),
            Model::Univariate(m) => {
                let (t_pos, t_neg) = m.counts();
                let e = UnivariateExport {
                    dim: m.dim(),
                    lambda: m.lambda(),
                    w: m.weights().to_vec(),
                    t_pos,
                    t_neg,
                };
                match m.loss_kind() {
                    UnivariateLoss::Square => SavedModel::UniSquare(e),
                    UnivariateLoss::Exponential => SavedModel::UniExp(e),
                }
            }
            Model::Projected(m) => {
                let e = ProjectedExport {
                    projection: m.map().clone(),
                    model: m.inner().export(false),
                };
                match m.map() {
                    FeatureMap::Subsample { .. } => SavedModel::OpaucSubsample(e),
                    FeatureMap::GaussianProjection { .. } => SavedModel::OpaucProjection(e),
                }
            }
        }
    }

    /// Restores a scoring model from its saved form.
    pub fn from_saved(saved: &SavedModel) -> Result<Model, ConfigError> {
        let invalid = ConfigError::Invalid;
        Ok(match saved {
            SavedModel::Opauc(e) => Model::Exact(ExactModel::from_export(e).map_err(invalid)?),
            SavedModel::OpaucSketch(e) => {
                if e.w.len() != e.dim {
                    return Err(invalid(format!("weights do not match dim {}", e.dim)));
                }
                let mut m = SketchModel::new(e.dim, e.tau.max(1), e.lambda, e.seed);
                m.set_weights(Array1::from(e.w.clone()));
                Model::Sketch(m)
            }
            SavedModel::UniSquare(e) | SavedModel::UniExp(e) => {
                let loss = match saved {
                    SavedModel::UniSquare(_) => UnivariateLoss::Square,
                    _ => UnivariateLoss::Exponential,
                };
                if e.w.len() != e.dim {
                    return Err(invalid(format!("weights do not match dim {}", e.dim)));
                }
                let mut m = UnivariateModel::new(e.dim, loss, e.lambda);
                m.set_weights(Array1::from(e.w.clone()));
                m.set_counts(e.t_pos, e.t_neg);
                Model::Univariate(m)
            }
            SavedModel::OpaucSubsample(e) | SavedModel::OpaucProjection(e) => {
                let inner = ExactModel::from_export(&e.model).map_err(invalid)?;
                if inner.dim() != e.projection.output_dim() {
                    return Err(invalid("projection and model dimensions differ".into()));
                }
                Model::Projected(ProjectedModel::from_parts(e.projection.clone(), inner))
            }
        })
    }
}

impl OnlineLearner for Model {
    fn dim(&self) -> usize {
        self.learner().dim()
    }

    fn step(&mut self, x: &Instance, eta: f64) {
        self.learner_mut().step(x, eta)
    }

    fn score(&self, x: &SparseVector) -> f64 {
        self.learner().score(x)
    }

    fn state_len(&self) -> usize {
        self.learner().state_len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateExport {
    pub dim: usize,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub t_pos: usize,
    pub t_neg: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedExport {
    pub projection: FeatureMap,
    #[serde(flatten)]
    pub model: ExactModelExport,
}

/// Model JSON, discriminated by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SavedModel {
    #[serde(rename = "opauc")]
    Opauc(ExactModelExport),
    #[serde(rename = "opauc-r")]
    OpaucSketch(SketchModelExport),
    #[serde(rename = "uni-squ")]
    UniSquare(UnivariateExport),
    #[serde(rename = "uni-exp")]
    UniExp(UnivariateExport),
    #[serde(rename = "opauc-f")]
    OpaucSubsample(ProjectedExport),
    #[serde(rename = "opauc-rp")]
    OpaucProjection(ProjectedExport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("svm".parse::<Algorithm>().is_err());
    }

    #[test]
    fn saved_models_score_identically() {
        let ds = synth::gaussian_blobs(80, 6, 0.6, 0.4, 2);
        for algo in Algorithm::ALL {
            let spec = LearnerSpec {
                algo,
                dim: 6,
                lambda: 0.01,
                tau: 3,
                proj_dim: 4,
                seed: 5,
            };
            let mut model = Model::build(&spec).unwrap();
            for x in ds.instances() {
                model.step(x, 0.05);
            }
            let json = serde_json::to_string(&model.to_saved()).unwrap();
            assert!(json.contains(&format!("\"kind\":\"{}\"", algo.name())));
            let saved: SavedModel = serde_json::from_str(&json).unwrap();
            let back = Model::from_saved(&saved).unwrap();
            for x in ds.instances() {
                assert_eq!(back.score(&x.features), model.score(&x.features), "{algo}");
            }
        }
    }

    #[test]
    fn build_validates() {
        let mut spec = LearnerSpec {
            algo: Algorithm::OpaucSketch,
            dim: 6,
            lambda: 0.01,
            tau: 0,
            proj_dim: 4,
            seed: 5,
        };
        assert!(Model::build(&spec).is_err());
        spec.algo = Algorithm::OpaucSubsample;
        spec.proj_dim = 6;
        assert!(Model::build(&spec).is_err());
        spec.algo = Algorithm::Opauc;
        spec.lambda = -1.0;
        assert!(Model::build(&spec).is_err());
    }
}
