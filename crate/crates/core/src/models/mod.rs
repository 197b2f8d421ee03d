//! Learners: a CART random forest regressor and an RBF support vector
//! classifier, both deterministic under an explicit seed.

pub mod forest;
pub mod svm;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use forest::{predict_forest, train_forest, FeatureSubset, ForestConfig, ForestModel};
pub use svm::{predict_svm, rbf_kernel, train_svm, Label, SvmConfig, SvmModel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("empty training data")]
    EmptyData,
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("row {row} has dimension {found}, expected {expected}")]
    RaggedInput {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} contains a non-finite feature")]
    NonFiniteInput { row: usize },
    #[error("target {row} is not finite")]
    NonFiniteTarget { row: usize },
    #[error("input has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("only one class present ({0}); need at least two")]
    SingleClass(Label),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub const CONTAINER_FORMAT: &str = "erd-model";
pub const CONTAINER_VERSION: u32 = 1;

/// Trained models that can be written to a model container.
pub trait Persist: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn scalar_name() -> &'static str;
}

impl<T: Scalar> Persist for ForestModel<T> {
    const KIND: &'static str = "random_forest_regressor";
    fn scalar_name() -> &'static str {
        T::NAME
    }
}

impl<T: Scalar> Persist for SvmModel<T> {
    const KIND: &'static str = "rbf_svm_classifier";
    fn scalar_name() -> &'static str {
        T::NAME
    }
}

#[derive(Serialize, Deserialize)]
struct Container<M> {
    format: String,
    version: u32,
    kind: String,
    scalar: String,
    model: M,
}

/// Serialises a model as self-describing JSON. Floats are written with
/// shortest round-trip representation, so reloaded models predict exactly
/// the same values.
pub fn save_model<M: Persist>(model: &M) -> Result<String> {
    let c = Container {
        format: CONTAINER_FORMAT.to_string(),
        version: CONTAINER_VERSION,
        kind: M::KIND.to_string(),
        scalar: M::scalar_name().to_string(),
        model,
    };
    serde_json::to_string_pretty(&c).map_err(|e| ModelError::Container(e.to_string()))
}

pub fn load_model<M: Persist>(source: &str) -> Result<M> {
    let c: Container<serde_json::Value> =
        serde_json::from_str(source).map_err(|e| ModelError::Container(e.to_string()))?;
    if c.format != CONTAINER_FORMAT {
        return Err(ModelError::Container(format!("unknown format `{}`", c.format)));
    }
    if c.version != CONTAINER_VERSION {
        return Err(ModelError::Container(format!("unsupported version {}", c.version)));
    }
    if c.kind != M::KIND || c.scalar != M::scalar_name() {
        return Err(ModelError::Container(format!(
            "container holds {}<{}>, requested {}<{}>",
            c.kind,
            c.scalar,
            M::KIND,
            M::scalar_name()
        )));
    }
    serde_json::from_value(c.model).map_err(|e| ModelError::Container(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forest_container_round_trip_is_prediction_exact() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * 2.3 + v[1].powi(2) / 3.0).collect();
        let m = train_forest(&x, &y, &ForestConfig { seed: 4, ..ForestConfig::default() }).unwrap();
        let text = save_model(&m).unwrap();
        assert!(text.contains("\"version\": 1"));
        let back: ForestModel<f64> = load_model(&text).unwrap();
        assert_eq!(back, m);
        for i in 0..40 {
            let p = [(i as f64 * 0.11).cos(), i as f64 / 9.0];
            assert_eq!(back.predict(&p).unwrap().to_bits(), m.predict(&p).unwrap().to_bits());
        }
    }

    #[test]
    fn svm_container_round_trip() {
        let x = vec![vec![0.0f32, 0.1], vec![1.0, 0.9], vec![0.2, 0.0], vec![0.8, 1.0]];
        let m = train_svm(&x, &[1, 2, 1, 2], &SvmConfig::default()).unwrap();
        let back: SvmModel<f32> = load_model(&save_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn container_rejects_wrong_kind_or_scalar() {
        let m = train_forest(&[vec![1.0f64]], &[1.0], &ForestConfig::default()).unwrap();
        let text = save_model(&m).unwrap();
        assert!(load_model::<SvmModel<f64>>(&text).is_err());
        assert!(load_model::<ForestModel<f32>>(&text).is_err());
    }
}
