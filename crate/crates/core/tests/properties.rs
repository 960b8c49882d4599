use odontoreg::camera::{project, to_camera_frame, CameraParams, IntrinsicConventions, Point2, Point3};
use odontoreg::ident::{build_ranking, percentile, percentile_pct};
use odontoreg::lr::kde_pdf;
use odontoreg::mvmo::{best_of_restarts, mapping_h, optimize, OptimizerConfig, SearchSpace};
use odontoreg::pnpf::{solve_pnpf, SolverOptions};
use odontoreg::raster::Bitmask;
use odontoreg::regfit::{camera_search_space, masked_dice_error, region_fitness};
use odontoreg::synth::{generate_subject, render_case, CameraSampler, OcclusionLevel};
use odontoreg::{ComparisonScore, Method};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ic() -> IntrinsicConventions {
    IntrinsicConventions::for_image(320, 240)
}

prop_compose! {
    fn camera()(
        tx in -150.0..150.0f64, ty in -150.0..150.0f64, tz in -150.0..150.0f64,
        rx in -90.0..90.0f64, ry in -90.0..90.0f64, rz in -90.0..90.0f64,
        f in 10.0..200.0f64,
    ) -> CameraParams {
        CameraParams { tx, ty, tz, rx, ry, rz, f }
    }
}

fn mask(w: u32, h: u32, bits: &[bool]) -> Bitmask {
    Bitmask::from_bits(w, h, bits.to_vec())
}

prop_compose! {
    fn triple()(w in 1u32..24, h in 1u32..24)(
        w in Just(w), h in Just(h),
        a in proptest::collection::vec(any::<bool>(), (w * h) as usize),
        b in proptest::collection::vec(any::<bool>(), (w * h) as usize),
        m in proptest::collection::vec(prop::bool::weighted(0.2), (w * h) as usize),
    ) -> (Bitmask, Bitmask, Bitmask) {
        (mask(w, h, &a), mask(w, h, &b), mask(w, h, &m))
    }
}

fn score(pm: &str, s: f64) -> ComparisonScore {
    ComparisonScore {
        am_id: "AM".into(),
        pm_id: pm.into(),
        method: Method::Regions,
        score: s,
        unscorable: !s.is_finite(),
        seed: None,
        evaluations: 0,
        restarts: 0,
        params: None,
        note: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Scaling the focal length and the point's depth together leaves its
    /// projection unchanged.
    #[test]
    fn focal_depth_scaling_invariance(
        c in camera(),
        p in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64),
        k in 0.25..4.0f64,
    ) {
        let ic = ic();
        let p = Point3::new(p.0, p.1, p.2);
        let q = to_camera_frame(&p, &c, &ic);
        prop_assume!(q.z > 1.0 && q.z * k > 1.0);
        let scaled = CameraParams { f: c.f * k, tz: c.tz + (k - 1.0) * q.z, ..c };
        let a = project(&p, &c, &ic).unwrap();
        let b = project(&p, &scaled, &ic).unwrap();
        prop_assert!((a - b).norm() < 1e-6, "{a} vs {b}");
    }

    /// Pinhole oracle in the camera frame.
    #[test]
    fn projection_matches_pinhole_oracle(c in camera(), p in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64)) {
        let ic = ic();
        let p = Point3::new(p.0, p.1, p.2);
        let q = to_camera_frame(&p, &c, &ic);
        prop_assume!(q.z > 1.0);
        let m = 320.0 / 36.0;
        let u = 160.0 + m * c.f * q.x / q.z;
        let v = 120.0 + m * c.f * q.y / q.z;
        let got = project(&p, &c, &ic).unwrap();
        prop_assert!((got - Point2::new(u, v)).norm() < 1e-9 * (1.0 + u.abs() + v.abs()));
    }

    #[test]
    fn masked_dice_matches_brute_force((a, b, m) in triple()) {
        let (w, h) = a.dims();
        let (mut na, mut nb, mut nab) = (0u64, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    continue;
                }
                na += a.get(x, y) as u64;
                nb += b.get(x, y) as u64;
                nab += (a.get(x, y) && b.get(x, y)) as u64;
            }
        }
        let got = masked_dice_error(&a, &b, &m).unwrap();
        if na + nb == 0 {
            prop_assert!(got.empty_after_mask);
            prop_assert_eq!(got.error, 1.0);
        } else {
            prop_assert!(!got.empty_after_mask);
            prop_assert_eq!(got.error, 1.0 - 2.0 * nab as f64 / (na + nb) as f64);
        }
        prop_assert!((0.0..=1.0).contains(&got.error));
    }

    /// Trapezoid integral of the density over its effective support.
    #[test]
    fn kde_integrates_to_one(
        samples in proptest::collection::vec(-5.0..5.0f64, 1..40),
        h in 0.05..2.0f64,
    ) {
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * h;
        let n = 20_000;
        let dx = (hi - lo) / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| kde_pdf(&samples, h, lo + i as f64 * dx).unwrap()).collect();
        let integral = dx * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n]));
        prop_assert!((integral - 1.0).abs() < 1e-4, "{integral}");
    }

    /// Rankings depend only on the order of the scores, not on the order
    /// cells arrive in or on a monotone rescaling.
    #[test]
    fn ranking_is_an_argsort(
        scores in proptest::collection::vec(prop_oneof![9 => 0.0..1.0f64, 1 => Just(f64::INFINITY)], 1..20),
        rot in 0usize..20,
        truth in 0usize..20,
    ) {
        let n = scores.len();
        let ids: Vec<String> = (0..n).map(|i| format!("P{i:02}")).collect();
        let cells: Vec<ComparisonScore> = ids.iter().zip(&scores).map(|(id, &s)| score(id, s)).collect();
        let truth = &ids[truth % n];
        let base = build_ranking("AM", &cells, &ids, Some(truth)).unwrap();

        let mut rotated = cells.clone();
        rotated.rotate_left(rot % n);
        let r2 = build_ranking("AM", &rotated, &ids, Some(truth)).unwrap();
        prop_assert_eq!(&base, &r2);

        let squashed: Vec<ComparisonScore> = cells
            .iter()
            .map(|c| score(&c.pm_id, if c.score.is_finite() { (3.0 * c.score).exp() } else { c.score }))
            .collect();
        let r3 = build_ranking("AM", &squashed, &ids, Some(truth)).unwrap();
        let order = |r: &odontoreg::ident::AmRanking| r.candidates.iter().map(|c| c.pm_id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(order(&base), order(&r3));
        prop_assert_eq!(base.correct_position, r3.correct_position);

        // argsort oracle: position = 1 + number of candidates ranked strictly ahead
        let t = scores[ids.iter().position(|i| i == truth).unwrap()];
        let ahead = ids.iter().zip(&scores).filter(|(id, &s)| {
            s < t || (s == t && id.as_str() < truth.as_str())
        }).count();
        prop_assert_eq!(base.correct_position, Some(1 + ahead));
    }

    #[test]
    fn integer_percentiles_agree_with_real_index(
        mut v in proptest::collection::vec(1usize..50, 1..60),
        pct in 0u32..=100,
    ) {
        v.sort();
        let v: Vec<f64> = v.into_iter().map(|x| x as f64).collect();
        let a = percentile_pct(&v, pct);
        let b = percentile(&v, pct as f64 / 100.0);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= v[0] && a <= v[v.len() - 1]);
    }

    #[test]
    fn mapping_stays_in_unit_interval_and_is_monotone(
        xbar in 0.0..=1.0f64,
        s1 in 0.0..50.0f64,
        s2 in 0.0..50.0f64,
        x in 0.0..=1.0f64,
        dx in 0.0..0.1f64,
    ) {
        let y = mapping_h(xbar, s1, s2, x);
        prop_assert!((0.0..=1.0).contains(&y));
        let y2 = mapping_h(xbar, s1, s2, (x + dx).min(1.0));
        prop_assert!(y2 >= y - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every evaluated point lies inside the search box, and the
    /// best-so-far trace never increases.
    #[test]
    fn optimizer_stays_in_box_and_trace_is_monotone(
        seed in any::<u64>(),
        dim in 1usize..8,
        centre in -3.0..3.0f64,
        gens in 1usize..60,
    ) {
        let bounds: Vec<(f64, f64)> = (0..dim).map(|i| (-1.0 - i as f64, 2.0 + 0.5 * i as f64)).collect();
        let space = SearchSpace::new(bounds).unwrap();
        let mut outside = 0;
        let mut count = 0u64;
        let cfg = OptimizerConfig { generations: gens, seed, ..OptimizerConfig::default() };
        let res = optimize(
            |x| {
                count += 1;
                if !space.contains(x) {
                    outside += 1;
                }
                x.iter().map(|v| (v - centre).powi(2)).sum()
            },
            &space,
            &cfg,
        )
        .unwrap();
        prop_assert_eq!(outside, 0);
        prop_assert_eq!(count, res.evaluations_used);
        prop_assert!(space.contains(&res.best_point));
        prop_assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(res.trace.last().copied(), Some(res.best_value));
    }

    /// Noiseless landmark projections are recovered to sub-millipixel error.
    #[test]
    fn pnp_recovers_noiseless_synthetic_cameras(subject_seed in 0u64..1000, cam_seed in any::<u64>()) {
        let subject = generate_subject(subject_seed, 1.5).unwrap();
        let ic = ic();
        let mut rng = ChaCha8Rng::seed_from_u64(cam_seed);
        let c = CameraSampler::default().draw(&mut rng);
        let pairs: Vec<(Point3, Point2)> = subject
            .landmarks
            .entries()
            .iter()
            .map(|l| (l.position, project(&l.position, &c, &ic).unwrap()))
            .collect();
        let sol = solve_pnpf(&pairs, &ic, &SolverOptions::default()).unwrap();
        prop_assert!(sol.rmse_px < 1e-3, "rmse {}", sol.rmse_px);
    }
}

#[test]
fn pnp_noise_gives_proportional_error() {
    // Monte-Carlo: isotropic Gaussian pixel noise of 2 px per coordinate
    let ic = ic();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rmses = Vec::new();
    for s in 0..20 {
        let subject = generate_subject(100 + s, 1.5).unwrap();
        let c = CameraSampler::default().draw(&mut rng);
        let pairs: Vec<(Point3, Point2)> = subject
            .landmarks
            .entries()
            .iter()
            .map(|l| {
                let p = project(&l.position, &c, &ic).unwrap();
                let n: [f64; 2] = [gauss(&mut rng) * 2.0, gauss(&mut rng) * 2.0];
                (l.position, p + nalgebra::Vector2::new(n[0], n[1]))
            })
            .collect();
        rmses.push(solve_pnpf(&pairs, &ic, &SolverOptions::default()).unwrap().rmse_px);
    }
    rmses.sort_by(f64::total_cmp);
    let median = rmses[rmses.len() / 2];
    // 2 px per axis gives about 2.8 px per point before the fit absorbs
    // some of it through its 7 parameters
    assert!((1.0..4.0).contains(&median), "median {median}");
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[test]
fn sphere_reaches_target_for_twenty_seeds() {
    let space = camera_search_space();
    let centre: Vec<f64> = space.bounds().iter().map(|(lo, hi)| lo + 0.37 * (hi - lo)).collect();
    let scale: Vec<f64> = space.bounds().iter().map(|(lo, hi)| hi - lo).collect();
    for seed in 0..20 {
        let cfg = OptimizerConfig {
            seed: seed * 1000,
            ..OptimizerConfig::default()
        };
        let sphere = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&centre)
                .zip(&scale)
                .map(|((v, c), s)| ((v - c) / s).powi(2))
                .sum()
        };
        let res = best_of_restarts(sphere, &space, &cfg, 3).unwrap();
        assert!(res.best.best_value < 1e-2, "seed {seed}: {}", res.best.best_value);
        let again = best_of_restarts(sphere, &space, &cfg, 3).unwrap();
        assert_eq!(res, again);
    }
}

/// The rendering camera scores a perfect fit, and no random camera from the
/// search box does better.
#[test]
fn true_camera_beats_random_cameras() {
    let ic = ic();
    let space = camera_search_space();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (i, level) in [OcclusionLevel::A, OcclusionLevel::B, OcclusionLevel::C].into_iter().enumerate() {
        let subject = generate_subject(40 + i as u64, 1.5).unwrap();
        let case = render_case(&subject, &CameraSampler::default(), level, &ic, 90 + i as u64).unwrap();
        let fit = region_fitness(&case.segmentation, &subject.mesh, &ic).unwrap();
        let at_truth = fit.evaluate(&case.camera);
        assert_eq!(at_truth, 0.0, "level {level:?}");
        for _ in 0..1000 {
            let x: Vec<f64> = space.bounds().iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
            assert!(fit.evaluate_slice(&x) > at_truth);
        }
    }
}

/// Subjects are distinct: another subject's mesh cannot reproduce a
/// photograph exactly, even at the photograph's own camera.
#[test]
fn subjects_are_distinct() {
    let ic = ic();
    let subjects: Vec<_> = (0..6).map(|s| generate_subject(500 + s, 1.5).unwrap()).collect();
    for (i, s) in subjects.iter().enumerate() {
        let case = render_case(s, &CameraSampler::default(), OcclusionLevel::A, &ic, 700 + i as u64).unwrap();
        for (j, other) in subjects.iter().enumerate() {
            assert_eq!(i == j, s.spec == other.spec);
            let fit = region_fitness(&case.segmentation, &other.mesh, &ic).unwrap();
            let e = fit.evaluate(&case.camera);
            if i == j {
                assert_eq!(e, 0.0);
            } else {
                assert!(e > 0.01, "{i} vs {j}: {e}");
            }
        }
    }
    // landmark geometry differs too
    let a = subjects[0].landmarks.entries()[0].position;
    let b = subjects[1].landmarks.entries()[0].position;
    assert!((a - b).norm() > 1e-3);
}
