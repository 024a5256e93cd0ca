//! Trainable components: tube and masked-content embedders, positional and
//! timestep embeddings, the dual-stream encoder, the center predictor, the
//! decoder, the reconstruction head and the gated motion noise head.

mod batch;
mod forward;
mod layers;
mod store;

pub use batch::{build_token_batch, TokenBatch};
pub use forward::{sinusoidal_basis, DecodeInputs, Encoded, PosEmbedKind};
pub use layers::Component;
pub use store::{Param, ParamStore};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, Tensor};
use crate::error::{DimpError, Result};
use crate::geom::TubeParams;
use crate::rng;
use layers::{Attention, DecoderBlock, Linear, Mlp, MotionHead, Norm, TubeEmbedder, VisMaskBlock};

/// What the decoder's masked positional embedding is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterConditioning {
    /// Noise masked centers only and decode from predicted centers.
    MaskedDiffusion,
    /// Decode from ground-truth masked centers (positional leakage).
    GroundTruth,
    /// Also noise visible centers at the same step.
    AllDiffusion,
}

/// Supervision applied to the motion field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionObjective {
    /// Stratified DDPM noise prediction.
    Diffusion,
    /// Direct MSE regression of the displacement field.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_blocks: usize,
    /// Hidden width multiplier of the transformer MLPs.
    pub mlp_ratio: usize,
    /// Steps of the center diffusion.
    pub center_steps: usize,
    /// Steps of the motion diffusion.
    pub motion_steps: usize,
    /// Stratified motion intervals per step.
    pub h: usize,
    pub mask_ratio: f64,
    pub gamma_cen: f64,
    pub lambda_mot: f64,
    pub center_conditioning: CenterConditioning,
    pub visible_noise_level: f64,
    pub stop_grad_geo: bool,
    pub stop_grad_mot: bool,
    pub motion_objective: MotionObjective,
    /// Number of tubes per sequence.
    pub num_tubes: usize,
    pub tube: TubeParams,
    /// Frames per sequence.
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_heads: 4,
            n_enc_blocks: 2,
            n_dec_blocks: 2,
            mlp_ratio: 2,
            center_steps: 200,
            motion_steps: 200,
            h: 4,
            mask_ratio: 0.6,
            gamma_cen: 0.1,
            lambda_mot: 1.0,
            center_conditioning: CenterConditioning::MaskedDiffusion,
            visible_noise_level: 0.0,
            stop_grad_geo: true,
            stop_grad_mot: true,
            motion_objective: MotionObjective::Diffusion,
            num_tubes: 16,
            tube: TubeParams {
                radius: 0.1,
                temporal_extent: 3,
                n_pts: 16,
                keypoint_frame: 1,
            },
            seq_len: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: String| DimpError::Config {
            field: field.to_string(),
            message,
        };
        let positive = [
            ("d", self.d),
            ("n_heads", self.n_heads),
            ("n_enc_blocks", self.n_enc_blocks),
            ("n_dec_blocks", self.n_dec_blocks),
            ("mlp_ratio", self.mlp_ratio),
            ("h", self.h),
            ("num_tubes", self.num_tubes),
            ("tube.n_pts", self.tube.n_pts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field(name, "must be positive".into()));
            }
        }
        if self.d % self.n_heads != 0 {
            return Err(field("d", format!("{} is not divisible by n_heads = {}", self.d, self.n_heads)));
        }
        if self.d % 2 != 0 {
            return Err(field("d", "must be even for the sinusoidal timestep basis".into()));
        }
        if self.center_steps < 2 || self.motion_steps < 2 {
            return Err(field("center_steps", "diffusion needs at least 2 steps".into()));
        }
        if self.h > self.motion_steps {
            return Err(field("h", format!("{} intervals exceed {} motion steps", self.h, self.motion_steps)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(field("mask_ratio", format!("{} outside (0, 1)", self.mask_ratio)));
        }
        if !(self.gamma_cen >= 0.0) {
            return Err(field("gamma_cen", "must be nonnegative".into()));
        }
        if !(self.lambda_mot >= 0.0) {
            return Err(field("lambda_mot", "must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.visible_noise_level) {
            return Err(field("visible_noise_level", "must lie in [0, 1]".into()));
        }
        if self.seq_len < 2 {
            return Err(field("seq_len", "motion needs at least 2 frames".into()));
        }
        if self.tube.temporal_extent % 2 == 0 {
            return Err(field("tube.temporal_extent", "must be odd".into()));
        }
        if self.tube.keypoint_frame >= self.seq_len {
            return Err(field("tube.keypoint_frame", "outside the sequence".into()));
        }
        let k_v = crate::geom::visible_count(self.num_tubes, self.mask_ratio);
        if k_v == 0 || k_v == self.num_tubes {
            return Err(field("mask_ratio", format!("leaves {k_v} of {} tubes visible", self.num_tubes)));
        }
        Ok(())
    }

    /// Frames covered by each tube.
    pub fn window_len(&self) -> usize {
        self.tube.frame_window(self.seq_len).len()
    }

    /// Coordinates per tube (`frames * n_pts * 3`).
    pub fn tube_coords(&self) -> usize {
        self.window_len() * self.tube.n_pts * 3
    }

    /// Width of one motion row: a point's full displacement trajectory.
    pub fn motion_width(&self) -> usize {
        (self.seq_len - 1) * 3
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }
}

/// Parameter layout; rebuilt deterministically from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub(crate) struct Network {
    tube: TubeEmbedder,
    masked_proj: Linear,
    pos_enc: Mlp,
    pos_dec: Mlp,
    time: Mlp,
    enc: Vec<VisMaskBlock>,
    center: Mlp,
    dec: Vec<DecoderBlock>,
    dec_norm: Norm,
    recon: Linear,
    motion: MotionHead,
}

/// All trainable parameters plus the layout that addresses them.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: ModelConfig,
    net: Network,
    store: ParamStore,
}

impl ModelState {
    /// Fresh parameters: fan-in scaled uniform for linear maps, unit/zero
    /// normalization, and zeroed output layers for the center predictor,
    /// the reconstruction head and the motion head.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let net = Network::build(&config, &mut store);
        let mut r = rng::seeded(seed);
        for p in store.iter_mut() {
            match p.init {
                store::Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    p.value.mapv_inplace(|_| r.random_range(-bound..bound));
                }
                store::Init::Zeros => p.value.fill(0.0),
                store::Init::Ones => p.value.fill(1.0),
            }
        }
        Ok(Self { config, net, store })
    }

    /// Redraw every parameter, output layers and normalization included,
    /// from a fan-in scaled uniform. Useful for sensitivity and gradient
    /// checks, where zeroed heads would hide upstream paths.
    pub fn randomize_all(&mut self, seed: u64) {
        let mut r = rng::seeded(seed);
        for p in self.store.iter_mut() {
            let fan_in = match p.init {
                store::Init::FanIn(f) => f,
                _ => p.value.nrows().max(p.value.ncols()),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let base = if p.init == store::Init::Ones { 1.0 } else { 0.0 };
            p.value.mapv_inplace(|_| base + r.random_range(-bound..bound));
        }
    }

    /// Layout for `config` with parameter values taken from `store` by name.
    pub fn from_named(config: ModelConfig, named: &[(String, Tensor)]) -> Result<Self> {
        let mut state = Self::init(config, 0)?;
        let lookup: std::collections::HashMap<&str, &Tensor> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in state.store.iter_mut() {
            let v = lookup
                .get(p.name.as_str())
                .ok_or_else(|| DimpError::MissingParameter(p.name.clone()))?;
            if v.dim() != p.value.dim() {
                return Err(DimpError::Incompatible(format!(
                    "parameter `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    v.dim(),
                    p.value.dim()
                )));
            }
            p.value.assign(*v);
        }
        if named.len() != state.store.len() {
            return Err(DimpError::Incompatible(format!(
                "checkpoint holds {} parameters, model has {}",
                named.len(),
                state.store.len()
            )));
        }
        Ok(state)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Toggle the stop-gradient paths; they do not change the parameters.
    pub fn set_stop_gradients(&mut self, geo: bool, mot: bool) {
        self.config.stop_grad_geo = geo;
        self.config.stop_grad_mot = mot;
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter ids owned by a component.
    pub fn component_params(&self, c: Component) -> Vec<ParamId> {
        self.store.ids_with_prefix(c.prefix())
    }

    /// Copy holding only what the pretrained encoder needs. Every other
    /// parameter is replaced by an empty array, so any use would panic.
    pub fn encoder_only(&self) -> Self {
        let mut out = self.clone();
        let keep: Vec<&str> = Component::ENCODER.iter().map(|c| c.prefix()).collect();
        for p in out.store.iter_mut() {
            if !keep.iter().any(|k| p.name.starts_with(k)) {
                p.value = Tensor::zeros((0, 0));
                p.grad = Tensor::zeros((0, 0));
            }
        }
        out
    }
}

impl Network {
    fn build(cfg: &ModelConfig, st: &mut ParamStore) -> Self {
        let d = cfg.d;
        let hidden = d * cfg.mlp_ratio;
        let frames = cfg.window_len();
        let tube = TubeEmbedder {
            point: Mlp::new(st, "tube_embed.point", 3, d, d, false),
            temporal: Mlp::new(st, "tube_embed.temporal", frames * d, d, d, false),
            n_pts: cfg.tube.n_pts,
        };
        let masked_proj = Linear::new(st, "masked_proj", cfg.tube_coords(), d, false);
        let pos_enc = Mlp::new(st, "pos_enc", 4, d, d, false);
        let pos_dec = Mlp::new(st, "pos_dec", 4, d, d, false);
        let time = Mlp::new(st, "time_embed", d, d, d, false);
        let enc = (0..cfg.n_enc_blocks)
            .map(|i| VisMaskBlock::new(st, &format!("encoder.{i}"), d, hidden, cfg.n_heads))
            .collect();
        let center = Mlp::new(st, "center_pred", d, d, 3, true);
        let dec = (0..cfg.n_dec_blocks)
            .map(|i| DecoderBlock {
                norm1: Norm::new(st, &format!("decoder.{i}.norm1"), d),
                attn: Attention::new(st, &format!("decoder.{i}.attn"), d, cfg.n_heads),
                norm2: Norm::new(st, &format!("decoder.{i}.norm2"), d),
                mlp: Mlp::new(st, &format!("decoder.{i}.mlp"), d, hidden, d, false),
            })
            .collect();
        let dec_norm = Norm::new(st, "decoder.final_norm", d);
        let recon = Linear::new(st, "recon_head", d, cfg.tube_coords(), true);
        let motion = MotionHead::new(st, "motion_head", cfg.motion_width(), d);
        Self {
            tube,
            masked_proj,
            pos_enc,
            pos_dec,
            time,
            enc,
            center,
            dec,
            dec_norm,
            recon,
            motion,
        }
    }
}
