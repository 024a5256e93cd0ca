use super::layers::Ctx;
use super::{ModelState, TokenBatch};
use crate::autograd::{Graph, Tensor, Var};
use crate::error::{DimpError, Result};

/// Which positional embedding table to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosEmbedKind {
    Encoder,
    Decoder,
}

/// Encoder outputs for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub zv: Var,
    pub zm: Var,
    /// Masked content embedding `e^m`, reused by the decoder.
    pub mask_content: Var,
}

/// Everything the decoder consumes.
#[derive(Debug, Clone, Copy)]
pub struct DecodeInputs {
    pub zv: Var,
    pub mask_content: Var,
    pub vis_centers: Var,
    /// Centers attached to masked tokens; predicted ones under the default
    /// conditioning.
    pub mask_centers: Var,
    /// Cut the gradient path through `mask_centers`.
    pub stop_grad: bool,
    pub frame_idx: usize,
    pub t_c: usize,
}

/// Sinusoidal basis of a diffusion step, `1 x d`.
pub fn sinusoidal_basis(t: usize, d: usize) -> Tensor {
    let half = d / 2;
    let mut out = Tensor::zeros((1, d));
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[[0, 2 * i]] = a.sin();
        out[[0, 2 * i + 1]] = a.cos();
    }
    out
}

impl ModelState {
    fn cx<'a>(&'a self, g: &'a mut Graph) -> Ctx<'a> {
        Ctx { g, store: &self.store }
    }

    /// Embed tube contents given as `tubes * frames * n_pts` rows of
    /// relative xyz; returns `tubes x d`.
    pub fn embed_tubes(&self, g: &mut Graph, points: Var) -> Result<Var> {
        let per_tube = self.config.window_len() * self.config.tube.n_pts;
        let rows = g.value(points).nrows();
        if g.value(points).ncols() != 3 || rows % per_tube != 0 {
            return Err(DimpError::ShapeMismatch {
                expected: vec![per_tube, 3],
                got: g.value(points).shape().to_vec(),
            });
        }
        let frames = self.config.window_len();
        let d = self.config.d;
        let mut cx = self.cx(g);
        Ok(self.net.tube.forward(&mut cx, points, rows / per_tube, frames, d))
    }

    /// Linear projection of flattened noisy tube contents, one per row.
    pub fn embed_masked_points(&self, g: &mut Graph, flat: Var) -> Result<Var> {
        let want = self.config.tube_coords();
        if g.value(flat).ncols() != want {
            return Err(DimpError::ShapeMismatch {
                expected: vec![g.value(flat).nrows(), want],
                got: g.value(flat).shape().to_vec(),
            });
        }
        let mut cx = self.cx(g);
        Ok(self.net.masked_proj.forward(&mut cx, flat))
    }

    /// MLP over `[c_x, c_y, c_z, t_f]` for each row of `centers`.
    pub fn pos_embed(&self, g: &mut Graph, centers: Var, frame_idx: usize, which: PosEmbedKind) -> Var {
        let rows = g.value(centers).nrows();
        let t = g.constant(Tensor::from_elem((rows, 1), frame_idx as f64));
        let x = g.concat_cols(&[centers, t]);
        let mut cx = self.cx(g);
        match which {
            PosEmbedKind::Encoder => self.net.pos_enc.forward(&mut cx, x),
            PosEmbedKind::Decoder => self.net.pos_dec.forward(&mut cx, x),
        }
    }

    /// Encoder block `i` applied to both streams.
    pub fn vismask_block(&self, g: &mut Graph, i: usize, zv: Var, zm: Var) -> (Var, Var) {
        let block = &self.net.enc[i];
        let mut cx = self.cx(g);
        let zv_out = block.forward_visible(&mut cx, zv);
        let zm_out = if cx.g.value(zm).nrows() == 0 {
            zm
        } else {
            block.forward_masked(&mut cx, zm, zv)
        };
        (zv_out, zm_out)
    }

    /// Encode with the masked centers taken from `batch.mask_centers_noisy`.
    pub fn encode(&self, g: &mut Graph, batch: &TokenBatch) -> Result<Encoded> {
        if batch.num_visible() == 0 {
            return Err(DimpError::invalid("encoder needs at least one visible tube"));
        }
        let pts = g.constant(batch.vis_points.clone());
        let noisy = g.constant(batch.mask_points_noisy.clone());
        let vc = g.constant(batch.vis_centers.clone());
        let mc = g.constant(batch.mask_centers_noisy.clone());
        self.encode_vars(g, pts, noisy, vc, mc, batch.frame_idx)
    }

    /// [`encode`](Self::encode) on graph nodes, so callers can take
    /// gradients w.r.t. any input.
    pub fn encode_vars(
        &self,
        g: &mut Graph,
        vis_points: Var,
        mask_points: Var,
        vis_centers: Var,
        mask_centers: Var,
        frame_idx: usize,
    ) -> Result<Encoded> {
        if g.value(vis_centers).nrows() == 0 {
            return Err(DimpError::invalid("encoder needs at least one visible tube"));
        }
        let e = self.embed_tubes(g, vis_points)?;
        let pe = self.pos_embed(g, vis_centers, frame_idx, PosEmbedKind::Encoder);
        let mut zv = g.add(e, pe);
        let mask_content = self.embed_masked_points(g, mask_points)?;
        let mut zm = if g.value(mask_centers).nrows() == 0 {
            mask_content
        } else {
            let pm = self.pos_embed(g, mask_centers, frame_idx, PosEmbedKind::Encoder);
            g.add(mask_content, pm)
        };
        for i in 0..self.net.enc.len() {
            (zv, zm) = self.vismask_block(g, i, zv, zm);
        }
        Ok(Encoded { zv, zm, mask_content })
    }

    /// Predicted clean masked centers, `K_m x 3`.
    pub fn predict_centers(&self, g: &mut Graph, zm: Var) -> Var {
        let mut cx = self.cx(g);
        self.net.center.forward(&mut cx, zm)
    }

    /// `1 x d` embedding of diffusion step `t`.
    pub fn timestep_embed(&self, g: &mut Graph, t: usize) -> Var {
        let basis = g.constant(sinusoidal_basis(t, self.config.d));
        let mut cx = self.cx(g);
        self.net.time.forward(&mut cx, basis)
    }

    /// Full self-attention over `[tau; visible; masked]`; returns the
    /// `K x d` tokens with the timestep row removed.
    pub fn decode(&self, g: &mut Graph, inp: DecodeInputs) -> Var {
        let centers = if inp.stop_grad {
            g.stop_gradient(inp.mask_centers)
        } else {
            inp.mask_centers
        };
        let pv = self.pos_embed(g, inp.vis_centers, inp.frame_idx, PosEmbedKind::Decoder);
        let vis = g.add(inp.zv, pv);
        let pm = self.pos_embed(g, centers, inp.frame_idx, PosEmbedKind::Decoder);
        let masked = g.add(inp.mask_content, pm);
        let tau = self.timestep_embed(g, inp.t_c);
        let mut z = g.concat_rows(&[tau, vis, masked]);
        let mut cx = self.cx(g);
        for block in &self.net.dec {
            z = block.forward(&mut cx, z);
        }
        z = self.net.dec_norm.forward(&mut cx, z);
        let rows = g.value(z).nrows();
        g.slice_rows(z, 1, rows)
    }

    /// Relative tube contents, one flattened tube per row.
    pub fn reconstruct(&self, g: &mut Graph, z_masked: Var) -> Var {
        let mut cx = self.cx(g);
        self.net.recon.forward(&mut cx, z_masked)
    }

    /// Noise prediction for a motion field `m_t` (`N x (L-1)*3`, one point
    /// trajectory per row) at step `t`, conditioned on decoder tokens.
    pub fn motion_noise_head(&self, g: &mut Graph, m_t: Var, t: usize, z_dec: Var) -> Result<Var> {
        let w = self.config.motion_width();
        if g.value(m_t).ncols() != w || g.value(z_dec).ncols() != self.config.d {
            return Err(DimpError::invalid(format!(
                "motion head expects N x {w} motion and K x {} tokens, got {:?} and {:?}",
                self.config.d,
                g.value(m_t).shape(),
                g.value(z_dec).shape()
            )));
        }
        let tau = self.timestep_embed(g, t);
        let mut cx = self.cx(g);
        Ok(self.net.motion.forward(&mut cx, m_t, tau, z_dec))
    }
}
