//! The invariant suite behind `dimp verify`: geometry kernels against brute
//! force, diffusion identities, gradient checks on a tiny model, gradient
//! isolation and the theory checks.

use rand::Rng as _;

use crate::analysis::{attention_concentration, logits_with_gap, fano_lower_bound, posterior_collapse_check, snr_weight_check, verify_prop_info_loss};
use crate::autograd::{Graph, Tensor};
use crate::diffusion::{forward_sample, make_cosine_schedule, stratified_intervals, x0_from_eps};
use crate::error::Result;
use crate::geom::{build_tubes, chamfer, dist2, farthest_point_sample, radius_neighbors, DynamicPointCloud, Point, TubeParams};
use crate::gradcheck::check_params;
use crate::losses::total_loss_var;
use crate::model::{Component, ModelConfig, ModelState};
use crate::motion::knn_correspondence;
use crate::rng::{self, Rng};
use crate::training::{prepare_sample, sample_losses, PreparedSample};

/// One line of the suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// d = 16, two heads, one block each side, K = 6 over 3-frame sequences.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        n_heads: 2,
        n_enc_blocks: 1,
        n_dec_blocks: 1,
        center_steps: 50,
        motion_steps: 50,
        h: 2,
        mask_ratio: 0.5,
        num_tubes: 6,
        tube: TubeParams {
            radius: 0.6,
            temporal_extent: 3,
            n_pts: 4,
            keypoint_frame: 1,
        },
        seq_len: 3,
        ..ModelConfig::default()
    }
}

pub fn random_points(n: usize, r: &mut Rng) -> Vec<Point> {
    (0..n).map(|_| [r.random(), r.random(), r.random()]).collect()
}

pub fn random_sequence(l: usize, n: usize, seed: u64) -> DynamicPointCloud {
    let mut r = rng::seeded(seed);
    DynamicPointCloud::new((0..l).map(|_| random_points(n, &mut r)).collect()).expect("valid frames")
}

fn brute_fps(p: &[Point], k: usize, start: usize) -> Vec<usize> {
    let mut sel = vec![start];
    while sel.len() < k {
        let mut best = (0, -1.0);
        for i in 0..p.len() {
            if sel.contains(&i) {
                continue;
            }
            let d = sel.iter().map(|&s| dist2(&p[i], &p[s])).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        sel.push(best.0);
    }
    sel
}

fn brute_radius(p: &[Point], c: &Point, r: f64, max_n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..p.len()).filter(|&i| dist2(&p[i], c) < r * r).collect();
    v.sort_by(|&a, &b| dist2(&p[a], c).total_cmp(&dist2(&p[b], c)).then(a.cmp(&b)));
    v.truncate(max_n);
    v
}

fn brute_nn(a: &Point, b: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, q) in b.iter().enumerate() {
        if dist2(a, q) < best.1 {
            best = (j, dist2(a, q));
        }
    }
    best
}

fn geometry(seed: u64) -> Result<Vec<Check>> {
    let mut r = rng::seeded(seed);
    let (mut fps, mut rad, mut tube, mut knn) = (true, true, true, true);
    let mut cham: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(8..64);
        let p = random_points(n, &mut r);
        let q = random_points(r.random_range(4..64), &mut r);
        let k = r.random_range(1..=n);
        let start = r.random_range(0..n);
        fps &= farthest_point_sample(&p, k, start)? == brute_fps(&p, k, start);
        let c = p[r.random_range(0..n)];
        let radius = r.random_range(0.05..0.6);
        rad &= radius_neighbors(&p, &c, radius, 8) == brute_radius(&p, &c, radius, 8);
        knn &= knn_correspondence(&p, &q) == p.iter().map(|a| brute_nn(a, &q).0).collect::<Vec<_>>();
        let oracle = p.iter().map(|a| brute_nn(a, &q).1).sum::<f64>() / p.len() as f64
            + q.iter().map(|b| brute_nn(b, &p).1).sum::<f64>() / q.len() as f64;
        cham = cham.max((chamfer(&p, &q)? - oracle).abs() / oracle.max(1e-300));

        let seq = random_sequence(5, n, r.random());
        let params = TubeParams {
            radius,
            temporal_extent: 3,
            n_pts: 4,
            keypoint_frame: 2,
        };
        let kt = r.random_range(1..=n.min(8));
        let tubes = build_tubes(&seq, kt, params, r.random())?;
        for (i, key) in tubes.keypoints.iter().enumerate() {
            let mut want = Vec::new();
            for f in [1, 2, 3] {
                let hits = brute_radius(seq.frame(f), key, radius, 4);
                want.extend(hits.iter().map(|&h| Some(h)));
                want.extend(std::iter::repeat_n(None, 4 - hits.len()));
            }
            tube &= tubes.members(i) == want.as_slice();
        }
    }
    Ok(vec![
        Check::new("fps_matches_brute_force", fps, "20 instances"),
        Check::new("radius_query_matches_brute_force", rad, "20 instances"),
        Check::new("tube_membership_matches_brute_force", tube, "20 instances"),
        Check::new("knn_matches_brute_force", knn, "20 instances"),
        Check::new("chamfer_matches_double_loop", cham <= 1e-12, format!("max relative error {cham:.2e}")),
    ])
}

fn diffusion(seed: u64) -> Result<Vec<Check>> {
    let sched = make_cosine_schedule(200)?;
    let mut r = rng::seeded(seed);
    let n = 100_000;
    let (x0, t) = (0.7, 60);
    let eps: Tensor = rng::standard_normal((n, 1), &mut r);
    let xt = forward_sample(&Tensor::from_elem((n, 1), x0), t, &eps, &sched)?;
    let ab = sched.alpha_bar(t);
    let mean = xt.mean().unwrap_or(f64::NAN);
    let var = xt.mapv(|v| (v - mean).powi(2)).sum() / (n - 1) as f64;
    let z_mean = (mean - ab.sqrt() * x0) / ((1.0 - ab) / n as f64).sqrt();
    let z_var = (var - (1.0 - ab)) / ((1.0 - ab) * (2.0 / n as f64).sqrt());

    let mut tiles = true;
    for total in 1..=64 {
        for h in 1..=total {
            let iv = stratified_intervals(total, h)?;
            let flat: Vec<usize> = iv.iter().flat_map(|i| i.clone()).collect();
            tiles &= flat == (1..=total).collect::<Vec<_>>() && iv.iter().all(|i| !i.is_empty());
        }
    }

    let mut round: f64 = 0.0;
    for t in 1..sched.steps() {
        let x0: Tensor = rng::standard_normal((4, 6), &mut r);
        let eps: Tensor = rng::standard_normal((4, 6), &mut r);
        let back = x0_from_eps(&forward_sample(&x0, t, &eps, &sched)?, &eps, t, &sched)?;
        let err = (&back - &x0).mapv(|v| v * v).sum().sqrt() / x0.mapv(|v| v * v).sum().sqrt();
        round = round.max(err);
    }
    let snr = snr_weight_check(&sched, 1000, (4, 6), rng::derive(seed, &[1]))?;
    Ok(vec![
        Check::new(
            "forward_marginal_moments",
            z_mean.abs() < 3.0 && z_var.abs() < 3.0,
            format!("mean z = {z_mean:.2}, variance z = {z_var:.2}"),
        ),
        Check::new("stratified_intervals_tile", tiles, "T <= 64, h <= T"),
        Check::new("x0_eps_round_trip", round <= 1e-10, format!("max relative error {round:.2e}")),
        Check::new("snr_weight_identity", snr <= 1e-10, format!("max relative error {snr:.2e}")),
    ])
}

fn tiny_sample(state: &ModelState, seed: u64) -> Result<PreparedSample> {
    let cfg = state.config();
    let seq = random_sequence(cfg.seq_len, 12, rng::derive(seed, &[0]));
    let m0: Tensor = rng::standard_normal((12, cfg.motion_width()), &mut rng::seeded(rng::derive(seed, &[1])));
    let sched = make_cosine_schedule(cfg.center_steps)?;
    prepare_sample(&seq, &m0, state, &sched, rng::derive(seed, &[2]))
}

fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut state = ModelState::init(tiny_config(), seed)?;
    state.randomize_all(rng::derive(seed, &[9]));
    // finite differences see through stop-gradient, so compare the plain
    // derivative of the same function
    state.set_stop_gradients(false, false);
    let sample = tiny_sample(&state, seed)?;
    let sched = make_cosine_schedule(state.config().motion_steps)?;
    let ids: Vec<_> = state.store().ids().collect();
    let reports = check_params(
        &state,
        &ids,
        |g, st| {
            let l = sample_losses(g, st, &sample, &sched)?;
            let c = st.config();
            total_loss_var(g, l.l_geo, l.l_cen, l.l_mot, c.gamma_cen, c.lambda_mot)
        },
        1e-5,
        4,
    )?;
    let worst = reports.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    let (name, err) = worst.map_or(("none", 0.0), |w| (w.name.as_str(), w.rel_error));
    Ok(vec![Check::new(
        "total_loss_gradient_check",
        err < 1e-4,
        format!("{} tensors, worst {err:.2e} at {name}", reports.len()),
    )])
}

/// Gradient of `L_geo + lambda L_mot` and of `L_cen` with respect to the
/// center predictor, as (max |geo+mot grad|, max |cen grad|).
pub fn center_head_gradients(state: &ModelState, sample: &PreparedSample) -> Result<(f64, f64)> {
    let sched = make_cosine_schedule(state.config().motion_steps)?;
    let ids = state.component_params(Component::CenterPredictor);
    let run = |which: bool| -> Result<f64> {
        let mut g = Graph::new();
        let l = sample_losses(&mut g, state, sample, &sched)?;
        let out = if which {
            total_loss_var(&mut g, l.l_geo, l.l_cen, l.l_mot, 0.0, state.config().lambda_mot)?
        } else {
            l.l_cen
        };
        let grads = g.backward(out);
        Ok(ids
            .iter()
            .filter_map(|&id| g.param_var(id).and_then(|v| grads.get(v)))
            .flat_map(|t| t.iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max))
    };
    Ok((run(true)?, run(false)?))
}

fn isolation(seed: u64) -> Result<Vec<Check>> {
    let mut state = ModelState::init(tiny_config(), seed)?;
    state.randomize_all(rng::derive(seed, &[3]));
    let sample = tiny_sample(&state, seed)?;
    let b = &sample.batch;

    let mut g = Graph::new();
    let vp = g.constant(b.vis_points.clone());
    let mp = g.input(b.mask_points_noisy.clone());
    let vc = g.constant(b.vis_centers.clone());
    let mc = g.input(b.mask_centers_noisy.clone());
    let enc = state.encode_vars(&mut g, vp, mp, vc, mc, b.frame_idx)?;
    let w = g.constant(rng::standard_normal(g.value(enc.zv).raw_dim(), &mut rng::seeded(seed)));
    let prod = g.mul(enc.zv, w);
    let s = g.sum(prod);
    let grads = g.backward(s);
    let leak = [mp, mc]
        .iter()
        .filter_map(|&v| grads.get(v))
        .flat_map(|t| t.iter().copied().collect::<Vec<_>>())
        .fold(0.0f64, |a, v| a.max(v.abs()));

    let (routed, direct) = center_head_gradients(&state, &sample)?;
    let mut open = state.clone();
    open.set_stop_gradients(false, false);
    let (open_routed, _) = center_head_gradients(&open, &sample)?;

    let sched = make_cosine_schedule(state.config().motion_steps)?;
    let mut g = Graph::new();
    let l = sample_losses(&mut g, &state, &sample, &sched)?;
    let c = state.config();
    total_loss_var(&mut g, l.l_geo, l.l_cen, l.l_mot, c.gamma_cen, c.lambda_mot)?;
    let params: std::collections::HashSet<_> = g.params().map(|(_, v)| v).collect();
    let foreign = g.grad_leaves().into_iter().filter(|v| !params.contains(v)).count();

    Ok(vec![
        Check::new("visible_tokens_ignore_masked_inputs", leak == 0.0, format!("max |grad| {leak:e}")),
        Check::new(
            "center_head_isolated_from_geo_and_motion",
            routed == 0.0 && direct > 0.0,
            format!("geo+motion {routed:e}, center loss {direct:.3e}"),
        ),
        Check::new(
            "center_head_reached_without_stop_gradient",
            open_routed > 0.0,
            format!("geo+motion {open_routed:.3e}"),
        ),
        Check::new("motion_targets_outside_graph", foreign == 0, format!("{foreign} non-parameter gradient leaves")),
    ])
}

fn theory(seed: u64) -> Result<Vec<Check>> {
    let (bar, full) = verify_prop_info_loss()?;
    let fano = [(2.0, 4, 0.5), (3.0, 8, 2.0 / 3.0), (0.5, 4, 0.0), (1.0, 2, 0.0)]
        .iter()
        .all(|&(h, n, want)| fano_lower_bound(h, n).is_ok_and(|v| (v - want).abs() < 1e-15));
    let mut r = rng::seeded(seed);
    let mut attn = true;
    for _ in 0..100 {
        let (n, gap) = (r.random_range(2..=256), r.random_range(0.0..=20.0));
        attn &= attention_concentration(&logits_with_gap(n, gap, &mut r))?.holds;
    }
    let sched = make_cosine_schedule(200)?;
    let sigma = 1.5;
    let col = posterior_collapse_check(0.3, sigma, &sched, sched.steps(), 10_000, rng::derive(seed, &[1]))?;
    Ok(vec![
        Check::new(
            "mutual_information_gap",
            bar == 0.0 && (full - 1.0).abs() < 1e-15,
            format!("I(A;mean) = {bar:.3} bits, I(A;M) = {full:.3} bits"),
        ),
        Check::new("fano_bound_values", fano, "hand-computed grid"),
        Check::new("attention_concentration_bound", attn, "100 random configurations"),
        Check::new(
            "posterior_collapse_at_t_max",
            col.deviation < 0.01 * sigma,
            format!("deviation {:.2e} vs {:.2e}", col.deviation, 0.01 * sigma),
        ),
    ])
}

/// Run every check; the outcome of each is reported even when others fail.
pub fn run_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = geometry(seed)?;
    out.extend(diffusion(rng::derive(seed, &[1]))?);
    out.extend(gradients(rng::derive(seed, &[2]))?);
    out.extend(isolation(rng::derive(seed, &[3]))?);
    out.extend(theory(rng::derive(seed, &[4]))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_suite(5).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
