use crate::autograd::{Graph, ParamId, Var};

use super::store::{Init, ParamStore};

/// Named groups of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    TubeEmbedder,
    MaskedProjector,
    EncoderPosition,
    DecoderPosition,
    TimestepEmbedding,
    Encoder,
    CenterPredictor,
    Decoder,
    ReconstructionHead,
    MotionHead,
}

impl Component {
    pub const ALL: [Component; 10] = [
        Component::TubeEmbedder,
        Component::MaskedProjector,
        Component::EncoderPosition,
        Component::DecoderPosition,
        Component::TimestepEmbedding,
        Component::Encoder,
        Component::CenterPredictor,
        Component::Decoder,
        Component::ReconstructionHead,
        Component::MotionHead,
    ];

    /// What the downstream probe needs.
    pub const ENCODER: [Component; 4] = [
        Component::TubeEmbedder,
        Component::MaskedProjector,
        Component::EncoderPosition,
        Component::Encoder,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::TubeEmbedder => "tube_embed",
            Component::MaskedProjector => "masked_proj",
            Component::EncoderPosition => "pos_enc",
            Component::DecoderPosition => "pos_dec",
            Component::TimestepEmbedding => "time_embed",
            Component::Encoder => "encoder",
            Component::CenterPredictor => "center_pred",
            Component::Decoder => "decoder",
            Component::ReconstructionHead => "recon_head",
            Component::MotionHead => "motion_head",
        }
    }
}

/// Thin view used by layers to pull parameters onto a graph.
pub(crate) struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
}

impl Ctx<'_> {
    pub fn p(&mut self, id: ParamId) -> Var {
        self.g.param(id, self.store.value(id))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(st: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, zero: bool) -> Self {
        let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
        Self {
            w: st.add(format!("{name}.weight"), fan_in, fan_out, init),
            b: st.add(format!("{name}.bias"), 1, fan_out, init),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.p(self.w);
        let b = cx.p(self.b);
        let y = cx.g.matmul(x, w);
        cx.g.add_row(y, b)
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    /// `zero_out` zero-initialises the output layer.
    pub fn new(st: &mut ParamStore, name: &str, din: usize, hidden: usize, dout: usize, zero_out: bool) -> Self {
        Self {
            fc1: Linear::new(st, &format!("{name}.fc1"), din, hidden, false),
            fc2: Linear::new(st, &format!("{name}.fc2"), hidden, dout, zero_out),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let h = self.fc1.forward(cx, x);
        let h = cx.g.gelu(h);
        self.fc2.forward(cx, h)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new(st: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: st.add(format!("{name}.gamma"), 1, d, Init::Ones),
            beta: st.add(format!("{name}.beta"), 1, d, Init::Zeros),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let g = cx.p(self.gamma);
        let b = cx.p(self.beta);
        cx.g.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    d: usize,
}

impl Attention {
    pub fn new(st: &mut ParamStore, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(st, &format!("{name}.q"), d, d, false),
            k: Linear::new(st, &format!("{name}.k"), d, d, false),
            v: Linear::new(st, &format!("{name}.v"), d, d, false),
            o: Linear::new(st, &format!("{name}.o"), d, d, false),
            heads,
            d,
        }
    }

    /// Rows of `query` attend over rows of `context`.
    pub fn forward(&self, cx: &mut Ctx, query: Var, context: Var) -> Var {
        let q = self.q.forward(cx, query);
        let k = self.k.forward(cx, context);
        let v = self.v.forward(cx, context);
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = cx.g.slice_cols(q, a, b);
            let kh = cx.g.slice_cols(k, a, b);
            let vh = cx.g.slice_cols(v, a, b);
            let logits = cx.g.matmul_nt(qh, kh);
            let logits = cx.g.scale(logits, scale);
            let w = cx.g.softmax(logits);
            outs.push(cx.g.matmul(w, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { cx.g.concat_cols(&outs) };
        self.o.forward(cx, cat)
    }
}

/// Encoder block with separate visible and masked streams. Visible tokens
/// attend only among themselves; masked tokens query the visible ones.
#[derive(Debug, Clone)]
pub(crate) struct VisMaskBlock {
    vis_norm1: Norm,
    vis_attn: Attention,
    vis_norm2: Norm,
    vis_mlp: Mlp,
    mask_norm_q: Norm,
    mask_norm_kv: Norm,
    mask_attn: Attention,
    mask_norm2: Norm,
    mask_mlp: Mlp,
}

impl VisMaskBlock {
    pub fn new(st: &mut ParamStore, name: &str, d: usize, hidden: usize, heads: usize) -> Self {
        Self {
            vis_norm1: Norm::new(st, &format!("{name}.vis.norm1"), d),
            vis_attn: Attention::new(st, &format!("{name}.vis.attn"), d, heads),
            vis_norm2: Norm::new(st, &format!("{name}.vis.norm2"), d),
            vis_mlp: Mlp::new(st, &format!("{name}.vis.mlp"), d, hidden, d, false),
            mask_norm_q: Norm::new(st, &format!("{name}.mask.norm_q"), d),
            mask_norm_kv: Norm::new(st, &format!("{name}.mask.norm_kv"), d),
            mask_attn: Attention::new(st, &format!("{name}.mask.attn"), d, heads),
            mask_norm2: Norm::new(st, &format!("{name}.mask.norm2"), d),
            mask_mlp: Mlp::new(st, &format!("{name}.mask.mlp"), d, hidden, d, false),
        }
    }

    pub fn forward_visible(&self, cx: &mut Ctx, zv: Var) -> Var {
        let n = self.vis_norm1.forward(cx, zv);
        let a = self.vis_attn.forward(cx, n, n);
        let zv1 = cx.g.add(zv, a);
        let n = self.vis_norm2.forward(cx, zv1);
        let m = self.vis_mlp.forward(cx, n);
        cx.g.add(zv1, m)
    }

    /// `zv` is the visible stream at the block input.
    pub fn forward_masked(&self, cx: &mut Ctx, zm: Var, zv: Var) -> Var {
        let q = self.mask_norm_q.forward(cx, zm);
        let kv = self.mask_norm_kv.forward(cx, zv);
        let a = self.mask_attn.forward(cx, q, kv);
        let zm1 = cx.g.add(zm, a);
        let n = self.mask_norm2.forward(cx, zm1);
        let m = self.mask_mlp.forward(cx, n);
        cx.g.add(zm1, m)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderBlock {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub mlp: Mlp,
}

impl DecoderBlock {
    pub fn forward(&self, cx: &mut Ctx, z: Var) -> Var {
        let n = self.norm1.forward(cx, z);
        let a = self.attn.forward(cx, n, n);
        let z1 = cx.g.add(z, a);
        let n = self.norm2.forward(cx, z1);
        let m = self.mlp.forward(cx, n);
        cx.g.add(z1, m)
    }
}

/// Per-point MLP, max-pool within each frame, then an MLP over the
/// concatenated frame features.
#[derive(Debug, Clone)]
pub(crate) struct TubeEmbedder {
    pub point: Mlp,
    pub temporal: Mlp,
    pub n_pts: usize,
}

impl TubeEmbedder {
    /// `points` holds `tubes * frames * n_pts` rows of relative xyz.
    pub fn forward(&self, cx: &mut Ctx, points: Var, tubes: usize, frames: usize, d: usize) -> Var {
        let h = self.point.forward(cx, points);
        let pooled = cx.g.max_pool_rows(h, self.n_pts);
        let per_tube = cx.g.reshape(pooled, tubes, frames * d);
        self.temporal.forward(cx, per_tube)
    }
}

/// Gated noise predictor for the motion field. Each row is one point's
/// displacement trajectory; the decoder context enters through a learned
/// gate shared by all rows.
#[derive(Debug, Clone)]
pub(crate) struct MotionHead {
    in_motion: ParamId,
    in_time: Linear,
    in_fc2: Linear,
    gate: Mlp,
    ctx: Mlp,
    out: Mlp,
}

impl MotionHead {
    pub fn new(st: &mut ParamStore, name: &str, width: usize, d: usize) -> Self {
        Self {
            in_motion: st.add(format!("{name}.in.motion_weight"), width, d, Init::FanIn(width + d)),
            in_time: Linear::new(st, &format!("{name}.in.time"), d, d, false),
            in_fc2: Linear::new(st, &format!("{name}.in.fc2"), d, d, false),
            gate: Mlp::new(st, &format!("{name}.gate"), d, d, d, false),
            ctx: Mlp::new(st, &format!("{name}.context"), d, d, d, false),
            out: Mlp::new(st, &format!("{name}.out"), d, d, width, true),
        }
    }

    /// `m` is `N x width`, `tau` is `1 x d`, `z` is the decoded token set.
    pub fn forward(&self, cx: &mut Ctx, m: Var, tau: Var, z: Var) -> Var {
        let wm = cx.p(self.in_motion);
        let xm = cx.g.matmul(m, wm);
        let xt = self.in_time.forward(cx, tau);
        let u = cx.g.add_row(xm, xt);
        let u = cx.g.gelu(u);
        let u = self.in_fc2.forward(cx, u);
        let c = cx.g.mean_rows(z);
        let gl = self.gate.forward(cx, c);
        let g = cx.g.sigmoid(gl);
        let cf = self.ctx.forward(cx, c);
        let one_minus = cx.g.one_minus(g);
        let ctx_term = cx.g.mul(one_minus, cf);
        let gated = cx.g.mul_row(u, g);
        let fused = cx.g.add_row(gated, ctx_term);
        self.out.forward(cx, fused)
    }
}
