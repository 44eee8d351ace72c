//! The split client model: private extractor, public classifier and public
//! flow-matching generator.

use serde::{Deserialize, Serialize};

use crate::error::{FedFgError, Result};
use crate::flow::VectorFieldSpec;
use crate::nn::{Activation, MlpSpec, ParamVector};

pub const EXTRACTOR_PREFIX: &str = "extractor";
pub const CLASSIFIER_PREFIX: &str = "classifier";
pub const GENERATOR_PREFIX: &str = "generator";

/// Architecture knobs; widths exclude the data-determined input and class counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub extractor_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub classifier_hidden: Vec<usize>,
    pub activation: Activation,
    pub field_hidden: Vec<usize>,
    pub field_activation: Activation,
    pub label_embed_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            extractor_hidden: vec![64],
            feature_dim: 32,
            classifier_hidden: vec![],
            activation: Activation::Relu,
            field_hidden: vec![64, 64],
            field_activation: Activation::Tanh,
            label_embed_dim: 8,
        }
    }
}

/// Concrete network shapes for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub extractor: MlpSpec,
    pub classifier: MlpSpec,
    pub generator: VectorFieldSpec,
}

impl SplitModel {
    pub fn new(input_dim: usize, classes: usize, arch: &ArchConfig) -> Result<Self> {
        if arch.extractor_hidden.is_empty() {
            return Err(FedFgError::config(
                "arch.extractor_hidden",
                "extractor needs at least one hidden layer",
            ));
        }
        let mut ew = vec![input_dim];
        ew.extend_from_slice(&arch.extractor_hidden);
        ew.push(arch.feature_dim);
        let mut cw = vec![arch.feature_dim];
        cw.extend_from_slice(&arch.classifier_hidden);
        cw.push(classes);
        Ok(Self {
            extractor: MlpSpec::new(EXTRACTOR_PREFIX, ew, arch.activation)?,
            classifier: MlpSpec::new(CLASSIFIER_PREFIX, cw, arch.activation)?,
            generator: VectorFieldSpec::new(
                arch.feature_dim,
                arch.label_embed_dim,
                classes,
                &arch.field_hidden,
                arch.field_activation,
            )?,
        })
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_width()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_width()
    }
}

/// The two public components exchanged with the server.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicModel {
    pub generator: ParamVector,
    pub classifier: ParamVector,
}

impl PublicModel {
    pub fn ensure_same_layout(&self, other: &PublicModel, context: &'static str) -> Result<()> {
        self.generator.ensure_same_layout(&other.generator, context)?;
        self.classifier.ensure_same_layout(&other.classifier, context)
    }

    /// Segment names carried by this model, for privacy audits.
    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.generator.layout().names().chain(self.classifier.layout().names())
    }

    pub fn is_finite(&self) -> bool {
        self.generator.is_finite() && self.classifier.is_finite()
    }

    /// `self + alpha * other`, component-wise.
    pub fn axpy(&mut self, alpha: f64, other: &PublicModel) -> Result<()> {
        self.generator.axpy(alpha, &other.generator)?;
        self.classifier.axpy(alpha, &other.classifier)
    }

    pub fn scaled(&self, factor: f64) -> PublicModel {
        let mut out = self.clone();
        out.generator.scale(factor);
        out.classifier.scale(factor);
        out
    }

    pub fn zeros_like(&self) -> PublicModel {
        PublicModel {
            generator: ParamVector::zeros(self.generator.layout().clone()),
            classifier: ParamVector::zeros(self.classifier.layout().clone()),
        }
    }

    /// Generator then classifier values, concatenated.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.generator.len() + self.classifier.len());
        v.extend_from_slice(self.generator.values());
        v.extend_from_slice(self.classifier.values());
        v
    }

    /// Inverse of [`stacked`](Self::stacked) using `self` as the layout template.
    pub fn from_stacked(&self, values: Vec<f64>) -> Result<PublicModel> {
        let split = self.generator.len();
        if values.len() != split + self.classifier.len() {
            return Err(FedFgError::DimensionMismatch {
                context: "stacked public model",
                expected: split + self.classifier.len(),
                got: values.len(),
            });
        }
        let mut generator = values;
        let classifier = generator.split_off(split);
        Ok(PublicModel {
            generator: ParamVector::new(self.generator.layout().clone(), generator)?,
            classifier: ParamVector::new(self.classifier.layout().clone(), classifier)?,
        })
    }
}
