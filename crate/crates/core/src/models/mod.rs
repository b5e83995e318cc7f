//! The classifier backbones behind one interface: the three ImageNet-era
//! architectures of the benchmark plus `TinyConv`, a two-conv test network
//! with an analytically checkable parameter count. All models end in a
//! single-logit binary head; the sigmoid of the logit is P(ReducedEF).

mod checkpoint;
mod densenet;
mod efficientnet;
mod resnet;
mod tiny;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointBundle};

use ndarray::{Array2, Array3, Array4, ArrayD};
use serde::{Deserialize, Serialize};

use crate::cohort::EfLabel;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::{bce_with_logits, sigmoid, Graph, NodeId};
use crate::num::Scalar;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    DenseNet121,
    EfficientNetB0,
    ResNet50,
    /// Test-only 2-conv network; gradient and Grad-CAM oracles run on it in
    /// milliseconds.
    TinyConv,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::DenseNet121 => "densenet121",
            BackboneKind::EfficientNetB0 => "efficientnet_b0",
            BackboneKind::ResNet50 => "resnet50",
            BackboneKind::TinyConv => "tiny_conv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "densenet121" => Ok(BackboneKind::DenseNet121),
            "efficientnet_b0" | "efficientnetb0" => Ok(BackboneKind::EfficientNetB0),
            "resnet50" => Ok(BackboneKind::ResNet50),
            "tiny_conv" | "tinyconv" => Ok(BackboneKind::TinyConv),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            BackboneKind::TinyConv => 1,
            _ => 3,
        }
    }

    pub fn default_input_size(self) -> (usize, usize) {
        match self {
            BackboneKind::TinyConv => (32, 32),
            _ => (224, 224),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pretrained {
    ImageNet,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub pretrained: Pretrained,
    /// (height, width) of the model input.
    pub input_size: (usize, usize),
}

impl ModelConfig {
    /// Defaults per backbone: ImageNet pretraining for the three benchmark
    /// architectures, random init for TinyConv.
    pub fn new(backbone: BackboneKind) -> Self {
        let pretrained = match backbone {
            BackboneKind::TinyConv => Pretrained::None,
            _ => Pretrained::ImageNet,
        };
        Self {
            backbone,
            pretrained,
            input_size: backbone.default_input_size(),
        }
    }

    pub fn with_pretrained(mut self, pretrained: Pretrained) -> Self {
        self.pretrained = pretrained;
        self
    }

    pub fn with_input_size(mut self, size: (usize, usize)) -> Self {
        self.input_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h < 8 || w < 8 {
            return Err(Error::Config(format!("input size {h}x{w} too small")));
        }
        if self.backbone != BackboneKind::TinyConv && (h % 32 != 0 || w % 32 != 0) {
            return Err(Error::Config(format!(
                "{} requires input dimensions divisible by 32, got {h}x{w}",
                self.backbone.as_str()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A built classifier: layer graph plus mode flag. Forward passes are
/// deterministic in both modes (normalization always uses stored
/// statistics); the flag enforces the evaluation-only contract of
/// `predict_proba`.
#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    config: ModelConfig,
    graph: Graph<F>,
    mode: Mode,
}

/// Gradients and activations from one attribution pass over a single image.
pub struct AttributionPass<F: Scalar> {
    /// d(target score)/d(input pixel), shape C×H×W.
    pub input_gradient: Array3<F>,
    /// Last-conv feature map, shape C×h×w.
    pub last_conv_activations: Array3<F>,
    /// d(target score)/d(last-conv activation), shape C×h×w.
    pub last_conv_gradient: Array3<F>,
}

/// Parameter accounting against the benchmark's reported sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterReport {
    pub backbone: BackboneKind,
    /// All persistent parameters, including normalization statistics.
    pub total: usize,
    pub trainable: usize,
    /// The benchmark's reported count for this architecture, if any.
    pub reference_claim: Option<usize>,
    /// Acceptance bracket around the claim, where one is defined.
    pub reference_range: Option<(usize, usize)>,
    pub matches_reference: bool,
    pub note: Option<String>,
}

impl<F: Scalar> Model<F> {
    /// Build a model with freshly initialized weights. Requesting ImageNet
    /// pretraining fails explicitly: no weights source is bundled, and
    /// silently substituting random init would misreport what was trained.
    pub fn build(config: &ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        if config.pretrained == Pretrained::ImageNet {
            return Err(Error::Checkpoint(format!(
                "no ImageNet weights source is available for {}; set pretrained = \"none\" \
                 or load weights from a checkpoint",
                config.backbone.as_str()
            )));
        }
        let mut graph = build_graph::<F>(config.backbone);
        let mut rng = RngStream::derive(init_seed, "model-init");
        graph.init_params(&mut rng);
        Ok(Self {
            config: config.clone(),
            graph,
            mode: Mode::Train,
        })
    }

    /// Rebuild a model from a config and a flat parameter list (checkpoint
    /// load path). Pretraining is not re-validated: the weights are given.
    pub(crate) fn from_parts(config: ModelConfig, params: Vec<ArrayD<F>>) -> Result<Self> {
        config.validate()?;
        let mut graph = build_graph::<F>(config.backbone);
        if params.len() != graph.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, {} expects {}",
                params.len(),
                config.backbone.as_str(),
                graph.params.len()
            )));
        }
        for (slot, value) in graph.params.iter_mut().zip(params) {
            if slot.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                    slot.name,
                    value.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = value;
        }
        Ok(Self {
            config,
            graph,
            mode: Mode::Eval,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph<F> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<F> {
        &mut self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn set_eval(&mut self) {
        self.mode = Mode::Eval;
    }

    /// Total persistent parameter count (weights, biases, normalization
    /// scales/offsets and statistics), head included.
    pub fn count_parameters(&self) -> usize {
        self.graph.parameter_count()
    }

    pub fn parameter_report(&self) -> ParameterReport {
        let total = self.count_parameters();
        let trainable = self.graph.trainable_parameter_count();
        let (claim, range, note): (Option<usize>, Option<(usize, usize)>, Option<String>) =
            match self.config.backbone {
                BackboneKind::DenseNet121 => {
                    (Some(8_000_000), Some((7_000_000, 8_500_000)), None)
                }
                BackboneKind::ResNet50 => {
                    (Some(23_000_000), Some((23_000_000, 26_000_000)), None)
                }
                BackboneKind::EfficientNetB0 => (
                    Some(11_000_000),
                    None,
                    Some(format!(
                        "canonical EfficientNet-B0 holds {total} parameters, far below the \
                         reported 11M; the reported variant is not identifiable, so the \
                         canonical count is reported with this discrepancy flag"
                    )),
                ),
                BackboneKind::TinyConv => (None, None, None),
            };
        let matches = match range {
            Some((lo, hi)) => total >= lo && total <= hi,
            None => false,
        };
        ParameterReport {
            backbone: self.config.backbone,
            total,
            trainable,
            reference_claim: claim,
            reference_range: range,
            matches_reference: claim.is_some() && matches,
            note,
        }
    }

    fn check_batch_shape(&self, batch: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = batch.dim();
        let (eh, ew) = self.config.input_size;
        let ec = self.config.backbone.in_channels();
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::Shape {
                expected: format!("batch of {ec}x{eh}x{ew}"),
                got: format!("{c}x{h}x{w}"),
            });
        }
        Ok(())
    }

    /// Raw logits, one per batch row.
    pub fn forward_logits(&self, batch: &Array4<F>) -> Result<Vec<F>> {
        self.check_batch_shape(batch)?;
        let tape = self.graph.forward(&batch.view())?;
        Ok(tape.logits(self.graph.output))
    }

    /// Forward pass with loss and parameter gradients; the training step.
    /// Returns (mean BCE loss, parameter gradients).
    pub fn loss_and_gradients(
        &self,
        batch: &Array4<F>,
        targets: &[F],
    ) -> Result<(F, Vec<Option<ArrayD<F>>>)> {
        self.check_batch_shape(batch)?;
        let tape = self.graph.forward(&batch.view())?;
        let logits = tape
            .value(self.graph.output)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap()
            .to_owned();
        let (loss, dlogits) = bce_with_logits(&logits, targets);
        let grads = self
            .graph
            .backward(&tape, self.graph.output, dlogits.into_dyn(), true);
        Ok((loss, grads.params))
    }

    /// P(ReducedEF) per image; evaluation mode only.
    pub fn predict_proba(&self, batch: &Array4<F>) -> Result<Vec<F>> {
        if self.mode != Mode::Eval {
            return Err(Error::Invalid(
                "predict_proba requires the model in evaluation mode".into(),
            ));
        }
        Ok(self.forward_logits(batch)?.into_iter().map(sigmoid).collect())
    }

    /// One attribution pass: input gradient plus last-conv activations and
    /// their gradient, for the score of `target_class` (the logit for
    /// ReducedEF, its negation for PreservedEF).
    pub fn attribution_pass(
        &self,
        image: &Image<F>,
        target_class: EfLabel,
    ) -> Result<AttributionPass<F>> {
        let batch = crate::imaging::to_nchw(std::slice::from_ref(image))?;
        self.check_batch_shape(&batch)?;
        let tape = self.graph.forward(&batch.view())?;
        let seed_value = match target_class {
            EfLabel::ReducedEF => F::one(),
            EfLabel::PreservedEF => -F::one(),
        };
        let seed = Array2::from_elem((1, 1), seed_value).into_dyn();
        let grads = self.graph.backward(&tape, self.graph.output, seed, false);

        let input_gradient = squeeze_batch(grads.node(self.graph.input).ok_or_else(|| {
            Error::NonFinite("no gradient reached the input".into())
        })?)?;
        if input_gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input gradient".into()));
        }
        let last_conv_activations = squeeze_batch(tape.value(self.graph.last_conv))?;
        let last_conv_gradient = squeeze_batch(grads.node(self.graph.last_conv).ok_or_else(
            || Error::NonFinite("no gradient reached the last conv layer".into()),
        )?)?;
        Ok(AttributionPass {
            input_gradient,
            last_conv_activations,
            last_conv_gradient,
        })
    }

    /// Node id of the registered last convolutional feature map.
    pub fn last_conv_node(&self) -> NodeId {
        self.graph.last_conv
    }
}

/// Drop the leading batch axis of a 1×C×H×W array.
fn squeeze_batch<F: Scalar>(v: &ArrayD<F>) -> Result<Array3<F>> {
    let v4 = v
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|_| Error::Shape {
            expected: "4-d activation".into(),
            got: format!("{:?}", v.shape()),
        })?;
    let (n, c, h, w) = v4.dim();
    debug_assert_eq!(n, 1);
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = v4[[0, ch, y, x]];
            }
        }
    }
    Ok(out)
}

fn build_graph<F: Scalar>(backbone: BackboneKind) -> Graph<F> {
    match backbone {
        BackboneKind::TinyConv => tiny::tiny_conv(),
        BackboneKind::ResNet50 => resnet::resnet50(),
        BackboneKind::DenseNet121 => densenet::densenet121(),
        BackboneKind::EfficientNetB0 => efficientnet::efficientnet_b0(),
    }
}
