use dimp::analysis::{attention_concentration, discrete_mutual_information, entropy_bits, logits_with_gap, DiscreteJoint};
use dimp::autograd::{Graph, Tensor};
use dimp::diffusion::{forward_sample, make_cosine_schedule, snr, stratified_intervals, stratified_timesteps, x0_from_eps};
use dimp::geom::{center_normalize, chamfer, farthest_point_sample, mask_split, build_tubes, DynamicPointCloud, Point, TubeParams};
use dimp::losses::{loss_center, loss_geo};
use dimp::motion::{displacement_field, sample_diversity};
use dimp::rng;
use dimp::synthdata::{gen_sequence, GeneratorParams};
use ndarray::Array2;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point> {
    [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]
}

fn cloud(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(point(), lo..hi)
}

fn d2(a: &Point, b: &Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fps_picks_distinct_points_greedily(p in cloud(2, 64), k_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0) {
        let k = 1 + ((p.len() - 1) as f64 * k_frac) as usize;
        let start = ((p.len() - 1) as f64 * s_frac) as usize;
        let sel = farthest_point_sample(&p, k, start).unwrap();
        let mut uniq = sel.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), k);
        prop_assert_eq!(sel[0], start);
        // each pick is at least as far from the earlier picks as any other candidate
        for j in 1..k {
            let dist = |i: usize| sel[..j].iter().map(|&s| d2(&p[i], &p[s])).fold(f64::INFINITY, f64::min);
            let chosen = dist(sel[j]);
            for i in 0..p.len() {
                if !sel[..j].contains(&i) {
                    prop_assert!(dist(i) <= chosen);
                }
            }
        }
    }

    #[test]
    fn chamfer_is_symmetric_and_nonnegative(a in cloud(1, 40), b in cloud(1, 40)) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn translation_leaves_centers_and_chamfer_unchanged(a in cloud(1, 30), b in cloud(1, 30), v in point()) {
        let shift = |p: &[Point]| p.iter().map(|q| [q[0] + v[0], q[1] + v[1], q[2] + v[2]]).collect::<Vec<_>>();
        let c0 = center_normalize(&a);
        let c1 = center_normalize(&shift(&a));
        for (x, y) in c0.iter().zip(&c1) {
            for i in 0..3 {
                prop_assert!((x[i] - y[i]).abs() < 1e-12);
            }
        }
        let before = chamfer(&a, &b).unwrap();
        let after = chamfer(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn mask_split_follows_floor(k in 4usize..=64, which in 0usize..5, seed in any::<u64>()) {
        let (num, den) = [(1, 2), (3, 5), (7, 10), (3, 4), (4, 5)][which];
        let ratio = [0.5, 0.6, 0.7, 0.75, 0.8][which];
        let k_v = k * (den - num) / den;
        let frames = vec![(0..k).map(|i| [i as f64, 0.0, 0.0]).collect::<Vec<_>>(); 3];
        let seq = DynamicPointCloud::new(frames).unwrap();
        let params = TubeParams { radius: 0.5, temporal_extent: 3, n_pts: 2, keypoint_frame: 1 };
        let split = mask_split(build_tubes(&seq, k, params, seed).unwrap(), ratio, seed);
        if k_v == 0 || k_v == k {
            prop_assert!(split.is_err());
            return Ok(());
        }
        let tubes = split.unwrap();
        prop_assert_eq!(tubes.visible_idx.len(), k_v);
        prop_assert_eq!(tubes.masked_idx.len(), k - k_v);
        let mut all: Vec<usize> = tubes.visible_idx.iter().chain(&tubes.masked_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn tube_members_lie_in_radius_and_window(p in cloud(8, 40), seed in any::<u64>(), r in 0.1f64..1.0) {
        let frames = vec![p.clone(), p.iter().map(|q| [q[0] + 0.01, q[1], q[2]]).collect(), p.clone(), p.clone()];
        let seq = DynamicPointCloud::new(frames).unwrap();
        let params = TubeParams { radius: r, temporal_extent: 3, n_pts: 5, keypoint_frame: 1 };
        let tubes = build_tubes(&seq, 4, params, seed).unwrap();
        prop_assert_eq!(&tubes.frame_window, &vec![0, 1, 2]);
        for i in 0..4 {
            for (slot, m) in tubes.members(i).iter().enumerate() {
                if let Some(idx) = m {
                    let f = tubes.frame_window[slot / 5];
                    prop_assert!(d2(&seq.frame(f)[*idx], &tubes.keypoints[i]) < r * r);
                }
            }
        }
    }

    #[test]
    fn forward_sample_is_linear(x0 in tensor(3, 4), eps in tensor(3, 4), a in -5.0f64..5.0, t in 1usize..=200) {
        let s = make_cosine_schedule(200).unwrap();
        let lhs = forward_sample(&(&x0 * a), t, &(&eps * a), &s).unwrap();
        let rhs = forward_sample(&x0, t, &eps, &s).unwrap() * a;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn snr_weight_identity(x0 in tensor(4, 6), eps in tensor(4, 6), eps_hat in tensor(4, 6), t in 1usize..=199) {
        let s = make_cosine_schedule(200).unwrap();
        let xt = forward_sample(&x0, t, &eps, &s).unwrap();
        let x0_hat = x0_from_eps(&xt, &eps_hat, t, &s).unwrap();
        let lhs = (&eps - &eps_hat).mapv(|v| v * v).sum();
        let rhs = snr(&s, t).unwrap() * (&x0 - &x0_hat).mapv(|v| v * v).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(rhs).max(1e-300));
    }

    #[test]
    fn stratified_draws_land_in_their_intervals(total in 1usize..300, hf in 0.0f64..1.0, seed in any::<u64>()) {
        let h = 1 + ((total - 1) as f64 * hf) as usize;
        let iv = stratified_intervals(total, h).unwrap();
        let draw = stratified_timesteps(total, h, &[2, 3], seed).unwrap();
        prop_assert_eq!(draw.len(), h);
        for (t, q) in draw.timesteps.iter().zip(&iv) {
            prop_assert!(q.contains(t));
        }
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_on_equal_inputs(a in tensor(3, 2 * 2 * 3), b in tensor(3, 2 * 2 * 3)) {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b));
        let lc = loss_center(&mut g, va, vb).unwrap();
        let lg = loss_geo(&mut g, va, vb, 2, 2).unwrap();
        let same = loss_geo(&mut g, va, va, 2, 2).unwrap();
        let same_c = loss_center(&mut g, va, va).unwrap();
        prop_assert!(g.scalar(lc) >= 0.0 && g.scalar(lg) >= 0.0);
        prop_assert_eq!(g.scalar(same), 0.0);
        prop_assert_eq!(g.scalar(same_c), 0.0);
    }

    #[test]
    fn displacement_field_ignores_translation(frames in prop::collection::vec(cloud(6, 7), 3), v in point()) {
        let seq = DynamicPointCloud::new(frames).unwrap();
        let m = displacement_field(&seq).unwrap();
        let moved = displacement_field(&seq.translated(v)).unwrap();
        prop_assert_eq!(&m.correspondence, &moved.correspondence);
        for (x, y) in m.displacements.iter().zip(moved.displacements.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_ignores_order_and_offsets(s in prop::collection::vec(tensor(4, 3), 2..6), off in tensor(4, 3)) {
        let d = sample_diversity(&s).unwrap();
        let mut rev = s.clone();
        rev.reverse();
        prop_assert!((d - sample_diversity(&rev).unwrap()).abs() <= 1e-12 * d.max(1.0));
        let shifted: Vec<Tensor> = s.iter().map(|x| x + &off).collect();
        prop_assert!((d - sample_diversity(&shifted).unwrap()).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn mutual_information_is_bounded(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..5)) {
        let total: f64 = raw.iter().flatten().sum();
        prop_assume!(total > 1e-6);
        let mut p: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| v / total).collect()).collect();
        // renormalize away the rounding of the division
        let err: f64 = 1.0 - p.iter().flatten().sum::<f64>();
        p[0][0] += err;
        prop_assume!(p[0][0] >= 0.0);
        let j = DiscreteJoint::new(p).unwrap();
        let mi = discrete_mutual_information(&j);
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= entropy_bits(&j.marginal_rows()).min(entropy_bits(&j.marginal_cols())) + 1e-12);
    }

    #[test]
    fn attention_tail_bound(n in 2usize..=256, gap in 0.0f64..=20.0, seed in any::<u64>()) {
        let logits = logits_with_gap(n, gap, &mut rng::seeded(seed));
        let c = attention_concentration(&logits).unwrap();
        prop_assert!(c.holds);
        prop_assert!((c.gap - gap).abs() < 1e-9);
    }

    #[test]
    fn generated_coordinates_stay_in_the_box(class in 0usize..4, seed in any::<u64>()) {
        let params = GeneratorParams { num_points: 64, ..GeneratorParams::default() };
        let g = gen_sequence(class, &params, seed).unwrap();
        for p in g.sequence.coords() {
            for v in p {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}

#[test]
fn schedule_invariants() {
    for total in [50, 200, 1000] {
        let s = make_cosine_schedule(total).unwrap();
        assert!(s.alpha_bar(1) < 1.0 && s.alpha_bar(total) > 0.0);
        for t in 1..=total {
            let b = s.beta(t);
            assert!(b > 0.0 && b <= 0.999);
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * (1.0 - b));
            if t > 1 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }
    let s = make_cosine_schedule(1000).unwrap();
    assert!(1.0 - s.alpha_bar(1) < 1e-3);
    assert!(s.alpha_bar(1000) < 1e-3);
}

#[test]
fn paper_interval_examples() {
    let q: Vec<_> = stratified_intervals(1000, 4).unwrap().into_iter().map(|r| (*r.start(), *r.end())).collect();
    assert_eq!(q, vec![(1, 250), (251, 500), (501, 750), (751, 1000)]);
    let q: Vec<_> = stratified_intervals(10, 3).unwrap().into_iter().map(|r| (*r.start(), *r.end())).collect();
    assert_eq!(q, vec![(1, 3), (4, 6), (7, 10)]);
    assert!(stratified_intervals(3, 4).is_err());
}
