//! The four forecaster architectures assembled from dense networks.
//!
//! Every model consumes the same ten-column row layout (domestic feature
//! block, then foreign) and emits one scalar return forecast per row:
//!
//! * **single-modal** — one network over one market's five features;
//! * **early fusion** — one network over all ten features;
//! * **intermediate fusion** — one sub-network per market whose final
//!   hidden activations are concatenated into a head network, trained
//!   jointly end to end;
//! * **late fusion** — two independently trained single-modal networks
//!   whose predictions are blended as `lambda * domestic + (1-lambda) *
//!   foreign`.
//!
//! Hidden layers always carry batch normalization; all branches of one
//! model share the same hidden width, depth, activation, and dropout (the
//! head of intermediate fusion included).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FEATURES_PER_MARKET, JOINT_FEATURES};
use crate::mat::Mat;
use crate::nn::{
    mse_grad, mse_loss, ForwardCache, Gradients, LayerSpec, Network, NnError, OptimizerKind,
    OptimizerState, CHECKPOINT_VERSION,
};
use crate::num::Real;

/// Blend weight used when a late-fusion spec does not name one: both
/// markets contribute equally.
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    CheckpointEncoding(#[from] serde_json::Error),
    #[error("checkpoint version {found} not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

/// Which market a single-modal model (or late-fusion branch) reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Domestic,
    Foreign,
}

impl Modality {
    /// Column range of this market's block in the joint ten-column layout.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            Modality::Domestic => 0..FEATURES_PER_MARKET,
            Modality::Foreign => FEATURES_PER_MARKET..JOINT_FEATURES,
        }
    }
}

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    SingleModal { modality: Modality },
    EarlyFusion,
    IntermediateFusion,
    LateFusion { lambda: f64 },
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::SingleModal {
                modality: Modality::Domestic,
            } => "single_domestic",
            Variant::SingleModal {
                modality: Modality::Foreign,
            } => "single_foreign",
            Variant::EarlyFusion => "early",
            Variant::IntermediateFusion => "intermediate",
            Variant::LateFusion { .. } => "late",
        };
        f.write_str(name)
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Parses a report/config label. `late` gets the default equal-weight
    /// lambda.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_domestic" => Ok(Variant::SingleModal {
                modality: Modality::Domestic,
            }),
            "single_foreign" => Ok(Variant::SingleModal {
                modality: Modality::Foreign,
            }),
            "early" => Ok(Variant::EarlyFusion),
            "intermediate" => Ok(Variant::IntermediateFusion),
            "late" => Ok(Variant::LateFusion {
                lambda: DEFAULT_LAMBDA,
            }),
            other => Err(format!(
                "unknown model variant `{other}` (expected single_domestic, \
                 single_foreign, early, intermediate, or late)"
            )),
        }
    }
}

/// Full architectural description of one model: the variant plus the shared
/// per-branch hidden-stack hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: crate::nn::Activation,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn new(
        variant: Variant,
        hidden_layers: usize,
        hidden_units: usize,
        activation: crate::nn::Activation,
        dropout_rate: f64,
    ) -> Result<Self, FusionError> {
        if hidden_layers == 0 {
            return Err(FusionError::InvalidSpec(
                "hidden_layers must be at least 1".into(),
            ));
        }
        if hidden_units == 0 {
            return Err(FusionError::InvalidSpec(
                "hidden_units must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(FusionError::InvalidSpec(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        if let Variant::LateFusion { lambda } = variant {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(FusionError::InvalidSpec(format!(
                    "late-fusion lambda {lambda} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            variant,
            hidden_layers,
            hidden_units,
            activation,
            dropout_rate,
        })
    }

    /// The single-modal spec of one late-fusion branch (same hidden stack).
    pub fn branch_spec(&self, modality: Modality) -> ModelSpec {
        ModelSpec {
            variant: Variant::SingleModal { modality },
            ..*self
        }
    }

    /// Layer chain of one hidden stack: `input -> units x layers`, batch
    /// norm on, dropout after every hidden activation; optionally capped by
    /// the linear single-unit head.
    fn stack(&self, input: usize, with_head: bool) -> Result<Vec<LayerSpec>, FusionError> {
        let mut specs = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = input;
        for _ in 0..self.hidden_layers {
            specs.push(LayerSpec::hidden(
                fan_in,
                self.hidden_units,
                self.activation,
                self.dropout_rate,
            )?);
            fan_in = self.hidden_units;
        }
        if with_head {
            specs.push(LayerSpec::output(fan_in)?);
        }
        Ok(specs)
    }
}

/// `lambda * r_domestic + (1 - lambda) * r_foreign`.
pub fn late_fusion_combine<T: Real>(r_domestic: T, r_foreign: T, lambda: T) -> T {
    assert!(
        lambda >= T::zero() && lambda <= T::one(),
        "late-fusion lambda outside [0, 1]"
    );
    lambda * r_domestic + (T::one() - lambda) * r_foreign
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Nets<T> {
    /// Single-modal or early fusion: one network.
    Single(Network<T>),
    /// Intermediate fusion: two branch stacks (no heads) and the head.
    Intermediate {
        domestic: Network<T>,
        foreign: Network<T>,
        head: Network<T>,
    },
    /// Late fusion: two complete single-modal networks.
    Late {
        domestic: Network<T>,
        foreign: Network<T>,
    },
}

/// A built forecaster: a [`ModelSpec`] plus its realized network(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel<T> {
    spec: ModelSpec,
    nets: Nets<T>,
}

/// Per-network forward caches of one train-mode pass, in the model's
/// canonical network order.
pub struct ModelCache<T> {
    parts: Vec<ForwardCache<T>>,
}

/// Per-network gradients, in the model's canonical network order.
pub struct ModelGrads<T> {
    parts: Vec<Gradients<T>>,
}

impl<T: Real> FusionModel<T> {
    /// Builds and Glorot-initializes the networks for `spec`. Weights are
    /// drawn network by network in canonical order from `rng`.
    pub fn new<R: Rng>(spec: ModelSpec, rng: &mut R) -> Result<Self, FusionError> {
        // Revalidate so models built from a hand-rolled struct literal
        // still hold the invariants.
        let spec = ModelSpec::new(
            spec.variant,
            spec.hidden_layers,
            spec.hidden_units,
            spec.activation,
            spec.dropout_rate,
        )?;
        let nets = match spec.variant {
            Variant::SingleModal { .. } => Nets::Single(Network::new(
                &spec.stack(FEATURES_PER_MARKET, true)?,
                rng,
            )?),
            Variant::EarlyFusion => {
                Nets::Single(Network::new(&spec.stack(JOINT_FEATURES, true)?, rng)?)
            }
            Variant::IntermediateFusion => {
                let branch = spec.stack(FEATURES_PER_MARKET, false)?;
                let domestic = Network::new(&branch, rng)?;
                let foreign = Network::new(&branch, rng)?;
                let head = Network::new(&spec.stack(2 * spec.hidden_units, true)?, rng)?;
                Nets::Intermediate {
                    domestic,
                    foreign,
                    head,
                }
            }
            Variant::LateFusion { .. } => {
                let stack = spec.stack(FEATURES_PER_MARKET, true)?;
                Nets::Late {
                    domestic: Network::new(&stack, rng)?,
                    foreign: Network::new(&stack, rng)?,
                }
            }
        };
        Ok(Self { spec, nets })
    }

    /// Reassembles a late-fusion model from its independently trained
    /// branches.
    pub fn late_from_parts(
        spec: ModelSpec,
        domestic: FusionModel<T>,
        foreign: FusionModel<T>,
    ) -> Self {
        assert!(
            matches!(spec.variant, Variant::LateFusion { .. }),
            "late_from_parts: spec is {}",
            spec.variant
        );
        let take = |m: FusionModel<T>, want: Modality| -> Network<T> {
            match (m.spec.variant, m.nets) {
                (Variant::SingleModal { modality }, Nets::Single(net)) if modality == want => net,
                (v, _) => panic!("late_from_parts: expected single-modal {want:?} branch, got {v}"),
            }
        };
        Self {
            spec,
            nets: Nets::Late {
                domestic: take(domestic, Modality::Domestic),
                foreign: take(foreign, Modality::Foreign),
            },
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Networks in canonical order (single: `[net]`; intermediate:
    /// `[domestic, foreign, head]`; late: `[domestic, foreign]`).
    fn networks(&self) -> Vec<&Network<T>> {
        match &self.nets {
            Nets::Single(net) => vec![net],
            Nets::Intermediate {
                domestic,
                foreign,
                head,
            } => vec![domestic, foreign, head],
            Nets::Late { domestic, foreign } => vec![domestic, foreign],
        }
    }

    fn networks_mut(&mut self) -> Vec<&mut Network<T>> {
        match &mut self.nets {
            Nets::Single(net) => vec![net],
            Nets::Intermediate {
                domestic,
                foreign,
                head,
            } => vec![domestic, foreign, head],
            Nets::Late { domestic, foreign } => vec![domestic, foreign],
        }
    }

    pub fn n_networks(&self) -> usize {
        self.networks().len()
    }

    /// Total trainable scalars over all networks.
    pub fn n_params(&self) -> usize {
        self.networks().iter().map(|n| n.n_params()).sum()
    }

    /// True when any constituent network batch-normalizes (which constrains
    /// train-mode batches to at least two rows).
    pub fn uses_batch_norm(&self) -> bool {
        self.networks().iter().any(|n| n.uses_batch_norm())
    }

    pub(crate) fn param_arrays(&self) -> Vec<Vec<&[T]>> {
        self.networks().into_iter().map(|n| n.param_arrays()).collect()
    }

    pub(crate) fn network_mut(&mut self, index: usize) -> &mut Network<T> {
        self.networks_mut()
            .into_iter()
            .nth(index)
            .expect("network index in range")
    }

    fn input_for(&self, joint: &Mat<T>, modality: Modality) -> Mat<T> {
        let cols = modality.columns();
        joint.slice_cols(cols.start, cols.end)
    }

    /// Deterministic per-row predictions from a ten-column joint batch.
    pub fn predict(&self, joint: &Mat<T>) -> Vec<T> {
        assert_eq!(
            joint.cols(),
            JOINT_FEATURES,
            "predict: expected {JOINT_FEATURES} joint columns, got {}",
            joint.cols()
        );
        match &self.nets {
            Nets::Single(net) => {
                let input = match self.spec.variant {
                    Variant::SingleModal { modality } => self.input_for(joint, modality),
                    _ => joint.clone(),
                };
                net.forward_inference(&input).column(0)
            }
            Nets::Intermediate {
                domestic,
                foreign,
                head,
            } => {
                let h_dom = domestic.forward_inference(&self.input_for(joint, Modality::Domestic));
                let h_for = foreign.forward_inference(&self.input_for(joint, Modality::Foreign));
                head.forward_inference(&h_dom.hcat(&h_for)).column(0)
            }
            Nets::Late { domestic, foreign } => {
                let lambda = self.lambda();
                let r_dom = domestic
                    .forward_inference(&self.input_for(joint, Modality::Domestic))
                    .column(0);
                let r_for = foreign
                    .forward_inference(&self.input_for(joint, Modality::Foreign))
                    .column(0);
                r_dom
                    .into_iter()
                    .zip(r_for)
                    .map(|(d, f)| late_fusion_combine(d, f, lambda))
                    .collect()
            }
        }
    }

    fn lambda(&self) -> T {
        match self.spec.variant {
            Variant::LateFusion { lambda } => T::from_f64_lossy(lambda),
            _ => panic!("lambda requested from a {} model", self.spec.variant),
        }
    }

    /// Dropout masks for one train-mode pass, one `Vec` per network in
    /// canonical order.
    pub fn draw_masks<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<Option<Mat<T>>>> {
        self.joint_trainable();
        self.networks()
            .into_iter()
            .map(|net| net.draw_masks(batch_size, rng))
            .collect()
    }

    fn joint_trainable(&self) {
        assert!(
            !matches!(self.spec.variant, Variant::LateFusion { .. }),
            "late-fusion branches are trained independently; train them as \
             single-modal models and reassemble with late_from_parts"
        );
    }

    /// Train-mode forward over a joint batch with masks from
    /// [`FusionModel::draw_masks`]. Not available for late fusion, whose
    /// branches train independently.
    pub fn forward_train_with_masks(
        &mut self,
        joint: &Mat<T>,
        masks: &[Vec<Option<Mat<T>>>],
    ) -> (Vec<T>, ModelCache<T>) {
        self.joint_trainable();
        assert_eq!(masks.len(), self.n_networks(), "one mask set per network");
        match &mut self.nets {
            Nets::Single(net) => {
                let input = match self.spec.variant {
                    Variant::SingleModal { modality } => {
                        let cols = modality.columns();
                        joint.slice_cols(cols.start, cols.end)
                    }
                    _ => joint.clone(),
                };
                let (out, cache) = net.forward_train_with_masks(&input, &masks[0]);
                (out.column(0), ModelCache { parts: vec![cache] })
            }
            Nets::Intermediate {
                domestic,
                foreign,
                head,
            } => {
                let dom_in = joint.slice_cols(0, FEATURES_PER_MARKET);
                let for_in = joint.slice_cols(FEATURES_PER_MARKET, JOINT_FEATURES);
                let (h_dom, c_dom) = domestic.forward_train_with_masks(&dom_in, &masks[0]);
                let (h_for, c_for) = foreign.forward_train_with_masks(&for_in, &masks[1]);
                let (out, c_head) = head.forward_train_with_masks(&h_dom.hcat(&h_for), &masks[2]);
                (
                    out.column(0),
                    ModelCache {
                        parts: vec![c_dom, c_for, c_head],
                    },
                )
            }
            Nets::Late { .. } => unreachable!("guarded by joint_trainable"),
        }
    }

    /// Train-mode forward drawing fresh dropout masks from `rng`.
    pub fn forward_train<R: Rng>(&mut self, joint: &Mat<T>, rng: &mut R) -> (Vec<T>, ModelCache<T>) {
        let masks = self.draw_masks(joint.rows(), rng);
        self.forward_train_with_masks(joint, &masks)
    }

    /// Exact gradients for every parameter of every network given
    /// dLoss/dPrediction. For intermediate fusion the head's input gradient
    /// is split and pushed through both branches, so branch parameters
    /// receive their full end-to-end gradient.
    pub fn backward(&self, cache: &ModelCache<T>, pred_grad: &[T]) -> ModelGrads<T> {
        self.joint_trainable();
        let n = pred_grad.len();
        let grad_mat = Mat::from_vec(n, 1, pred_grad.to_vec());
        match &self.nets {
            Nets::Single(net) => {
                let (grads, _) = net.backward(&cache.parts[0], &grad_mat);
                ModelGrads { parts: vec![grads] }
            }
            Nets::Intermediate {
                domestic,
                foreign,
                head,
            } => {
                let (head_grads, d_head_in) = head.backward(&cache.parts[2], &grad_mat);
                let u = self.spec.hidden_units;
                let d_dom = d_head_in.slice_cols(0, u);
                let d_for = d_head_in.slice_cols(u, 2 * u);
                let (dom_grads, _) = domestic.backward(&cache.parts[0], &d_dom);
                let (for_grads, _) = foreign.backward(&cache.parts[1], &d_for);
                ModelGrads {
                    parts: vec![dom_grads, for_grads, head_grads],
                }
            }
            Nets::Late { .. } => unreachable!("guarded by joint_trainable"),
        }
    }
}

/// Optimizer states for every network of one model, stepped together.
pub struct ModelOptimizer<T> {
    parts: Vec<OptimizerState<T>>,
}

impl<T: Real> ModelOptimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &FusionModel<T>) -> Self {
        Self {
            parts: model
                .networks()
                .into_iter()
                .map(|net| OptimizerState::new(kind, learning_rate, net))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut FusionModel<T>, grads: &ModelGrads<T>) {
        let nets = model.networks_mut();
        assert_eq!(nets.len(), self.parts.len(), "optimizer built for another model");
        assert_eq!(nets.len(), grads.parts.len(), "gradient set size mismatch");
        for ((net, state), grad) in nets.into_iter().zip(&mut self.parts).zip(&grads.parts) {
            state.step(net, grad);
        }
    }
}

/// Serialized model: schema version, originating seed, spec, and all
/// network parameters including running statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint<T> {
    pub version: u32,
    pub seed: u64,
    pub model: FusionModel<T>,
}

pub fn save_model<T: Real>(
    path: impl AsRef<Path>,
    model: &FusionModel<T>,
    seed: u64,
) -> Result<(), FusionError> {
    let checkpoint = ModelCheckpoint {
        version: CHECKPOINT_VERSION,
        seed,
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ModelCheckpoint<T>, FusionError> {
    let checkpoint: ModelCheckpoint<T> =
        serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(FusionError::CheckpointVersion {
            found: checkpoint.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(checkpoint)
}

/// Maximum relative error between analytic gradients and central finite
/// differences (step `1e-5`) over every parameter of the model built from
/// `spec` with seed `seed`, on a fixed batch with fixed dropout masks.
///
/// Late fusion delegates to its two single-modal branches, mirroring how it
/// trains. The batch must have ten columns; batch norm requires at least
/// two rows.
pub fn gradient_check(spec: &ModelSpec, joint: &Mat<f64>, targets: &[f64], seed: u64) -> f64 {
    use rand::SeedableRng;
    if matches!(spec.variant, Variant::LateFusion { .. }) {
        let dom = gradient_check(&spec.branch_spec(Modality::Domestic), joint, targets, seed);
        let frn = gradient_check(&spec.branch_spec(Modality::Foreign), joint, targets, seed ^ 1);
        return dom.max(frn);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let model: FusionModel<f64> = FusionModel::new(*spec, &mut rng).expect("valid spec");
    let masks = model.draw_masks(joint.rows(), &mut rng);

    let loss_of = |m: &FusionModel<f64>| -> f64 {
        let mut probe = m.clone();
        let (pred, _) = probe.forward_train_with_masks(joint, &masks);
        mse_loss(&pred, targets)
    };

    let mut work = model.clone();
    let (pred, cache) = work.forward_train_with_masks(joint, &masks);
    let grads = work.backward(&cache, &mse_grad(&pred, targets));

    let h = 1e-5;
    let mut max_err = 0.0f64;
    for net_idx in 0..model.n_networks() {
        let n_arrays = model.param_arrays()[net_idx].len();
        for arr_idx in 0..n_arrays {
            let len = model.param_arrays()[net_idx][arr_idx].len();
            for elem in 0..len {
                let eval = |delta: f64| {
                    let mut probe = model.clone();
                    probe.network_mut(net_idx).param_arrays_mut()[arr_idx][elem] += delta;
                    loss_of(&probe)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads.parts[net_idx].arrays()[arr_idx][elem];
                let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                max_err = max_err.max(err);
            }
        }
    }
    max_err
}
