//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p odontoreg-cli --test acceptance`. The region
//! identification criterion runs its reduced-budget profile by default; set
//! `ODONTOREG_ACCEPTANCE_FULL=1` to also run the full default-budget cohort.
//! Failures are reported and, with `ODONTOREG_ACCEPTANCE_STRICT=1`, turn
//! into a nonzero exit status.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use odontoreg::camera::{project, to_camera_frame, CameraParams, IntrinsicConventions, Point2, Point3};
use odontoreg::ident::{build_ranking, build_report, ranking_statistics, ScoreMatrix};
use odontoreg::landmarks::LandmarkSubset;
use odontoreg::lr::{cllr, kde_pdf};
use odontoreg::mvmo::{best_of_restarts, optimize, OptimizerConfig, SearchSpace};
use odontoreg::pnpf::{solve_pnpf, SolverOptions};
use odontoreg::raster::Bitmask;
use odontoreg::regfit::{camera_search_space, masked_dice_error, region_fitness, region_outcome};
use odontoreg::synth::{generate_subject, render_case, CameraSampler, CohortSpec, LevelCounts, OcclusionLevel};
use odontoreg::{ComparisonOutcome, ComparisonScore, Method};
use odontoreg_cli::commands::{cmd_compare, cmd_report, load_scores, ReportFile, SCORES_FILE};
use odontoreg_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Result of one criterion: pass flag and a one-line summary.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(id: &str, title: &str, limit: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= limit;
    let pass = v.pass && in_time;
    println!(
        "criterion {id} {title}: {} ({:.1} s, limit {} s{}) {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", over time" },
        v.detail
    );
    pass
}

fn ic() -> IntrinsicConventions {
    IntrinsicConventions::for_image(320, 240)
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ------------------------------------------------------------ criterion 1

fn formula_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut exact = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..48u32), rng.random_range(1..48u32));
        let n = (w * h) as usize;
        let density: f64 = rng.random();
        let a: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
        let m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.25)).collect();
        let (ma, mb, mm) = (
            Bitmask::from_bits(w, h, a.clone()),
            Bitmask::from_bits(w, h, b.clone()),
            Bitmask::from_bits(w, h, m.clone()),
        );
        let (mut na, mut nb, mut nab) = (0u64, 0u64, 0u64);
        for i in 0..n {
            if !m[i] {
                na += a[i] as u64;
                nb += b[i] as u64;
                nab += (a[i] && b[i]) as u64;
            }
        }
        let expected = if na + nb == 0 { 1.0 } else { 1.0 - 2.0 * nab as f64 / (na + nb) as f64 };
        let got = masked_dice_error(&ma, &mb, &mm).unwrap().error;
        exact += (got.to_bits() == expected.to_bits()) as usize;
    }

    let ones = cllr(&[1.0; 5], &[1.0; 7]).unwrap();
    let third = cllr(&[3.0], &[1.0 / 3.0]).unwrap();
    let separated = cllr(&[1e6], &[1e-6]).unwrap();
    let cllr_ok = (ones - 1.0).abs() <= 1e-12
        && (third - (4.0f64 / 3.0).log2()).abs() <= 1e-12
        && separated < 1e-5;

    let samples = [0.1, 0.4, 0.45, 1.3, 2.0, 2.2, 3.7];
    let h = 0.3;
    let (lo, hi) = (0.1 - 10.0 * h, 3.7 + 10.0 * h);
    let n = 20_000;
    let dx = (hi - lo) / n as f64;
    let ys: Vec<f64> = (0..=n).map(|i| kde_pdf(&samples, h, lo + i as f64 * dx).unwrap()).collect();
    let integral = dx * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[n]));

    let p95 = ranking_statistics(&[1, 1, 1, 2, 6]).unwrap().p95;

    let pass = exact == 1000 && cllr_ok && (integral - 1.0).abs() < 1e-4 && p95 == 5.2;
    verdict(
        pass,
        format!(
            "dice {exact}/1000 bit-exact; cllr(all ones) {ones}, cllr(3, 1/3) {third:.12}, cllr(1e6, 1e-6) {separated:.2e}; kde integral {integral:.8}; P95 {p95}"
        ),
    )
}

// ------------------------------------------------------------ criterion 2

fn projection_correctness() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let ic1000 = IntrinsicConventions::for_image(1000, 1000);
    let zero = CameraParams {
        f: 50.0,
        ..CameraParams::default()
    };
    let frame_cases = [
        ((0.0, 0.0, 0.0), CameraParams::default(), (0.0, 0.0, 400.0)),
        ((1.0, 0.0, 0.0), CameraParams { rz: 90.0, ..CameraParams::default() }, (0.0, 1.0, 400.0)),
        ((0.0, 0.0, 10.0), CameraParams { rx: 90.0, ..CameraParams::default() }, (0.0, -10.0, 400.0)),
    ];
    for (p, c, want) in frame_cases {
        let q = to_camera_frame(&Point3::new(p.0, p.1, p.2), &c, &ic1000);
        ok &= (q - Point3::new(want.0, want.1, want.2)).norm() <= 1e-9;
    }
    let a = project(&Point3::origin(), &zero, &ic1000).unwrap();
    let b = project(&Point3::new(36.0, 0.0, 0.0), &zero, &ic1000).unwrap();
    let behind = project(&Point3::new(0.0, 0.0, -500.0), &zero, &ic1000);
    ok &= (a - Point2::new(500.0, 500.0)).norm() <= 1e-9;
    ok &= (b - Point2::new(625.0, 500.0)).norm() <= 1e-9;
    ok &= behind.is_err();
    notes.push(format!("examples {}", if ok { "exact" } else { "mismatch" }));

    let ic = ic();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bounds = CameraParams::search_bounds();
    let (mut draws, mut worst) = (0, 0.0f64);
    while draws < 1000 {
        let v: Vec<f64> = bounds.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
        let c = CameraParams::from_slice(&v);
        let p = Point3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let k = rng.random_range(0.25..4.0);
        let q = to_camera_frame(&p, &c, &ic);
        if q.z <= 1.0 || q.z * k <= 1.0 {
            continue;
        }
        let scaled = CameraParams {
            f: c.f * k,
            tz: c.tz + (k - 1.0) * q.z,
            ..c
        };
        let d = (project(&p, &c, &ic).unwrap() - project(&p, &scaled, &ic).unwrap()).norm();
        worst = worst.max(d);
        draws += 1;
    }
    ok &= worst <= 1e-6;
    notes.push(format!("f/Z scaling over {draws} draws, worst {worst:.2e} px"));
    verdict(ok, notes.join("; "))
}

// ------------------------------------------------------------ criterion 3

fn landmark_pairs(seed: u64, noise_px: f64, rng: &mut ChaCha8Rng) -> Vec<(Point3, Point2)> {
    let subject = generate_subject(seed, odontoreg::synth::DEFAULT_PERTURBATION).unwrap();
    let ic = ic();
    let c = CameraSampler::default().draw(rng);
    subject
        .landmarks
        .entries()
        .iter()
        .filter(|l| LandmarkSubset::Set1.names().contains(&l.name.as_str()))
        .map(|l| {
            let p = project(&l.position, &c, &ic).unwrap();
            let n = nalgebra::Vector2::new(gauss(rng), gauss(rng)) * noise_px;
            (l.position, p + n)
        })
        .collect()
}

fn solver_recovery() -> Verdict {
    let ic = ic();
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut recovered = 0;
    let mut coplanar = 0;
    for s in 0..100 {
        let pairs = landmark_pairs(10_000 + s, 0.0, &mut rng);
        if let Ok(sol) = solve_pnpf(&pairs, &ic, &opts) {
            coplanar += sol.coplanar as usize;
            recovered += (sol.rmse_px < 1e-3) as usize;
        }
    }
    let mut noisy: Vec<f64> = (0..100)
        .map(|s| {
            let pairs = landmark_pairs(20_000 + s, 2.0, &mut rng);
            solve_pnpf(&pairs, &ic, &opts).map_or(f64::INFINITY, |sol| sol.rmse_px)
        })
        .collect();
    noisy.sort_by(f64::total_cmp);
    let median = 0.5 * (noisy[49] + noisy[50]);
    verdict(
        recovered >= 99 && coplanar == 0 && (1.0..=4.0).contains(&median),
        format!("noiseless {recovered}/100 below 1e-3 px ({coplanar} coplanar); 2-px noise median RMSE {median:.3} px"),
    )
}

// ------------------------------------------------------------ criterion 4

fn optimizer_sanity() -> Verdict {
    let space = SearchSpace::new(vec![(-150.0, 150.0); 7]).unwrap();
    let sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let (mut reached, mut monotone, mut identical) = (0, 0, 0);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let cfg = OptimizerConfig {
            seed: seed * 7919,
            ..OptimizerConfig::default()
        };
        let res = best_of_restarts(sphere, &space, &cfg, 3).unwrap();
        worst = worst.max(res.best.best_value);
        reached += (res.best.best_value < 1e-2) as usize;
        let single = optimize(sphere, &space, &cfg).unwrap();
        monotone += (single.trace.windows(2).all(|w| w[1] <= w[0])
            && res.best.trace.windows(2).all(|w| w[1] <= w[0])) as usize;
        let again = optimize(sphere, &space, &cfg).unwrap();
        identical += (again == single
            && again.best_point.iter().zip(&single.best_point).all(|(a, b)| a.to_bits() == b.to_bits()))
            as usize;
    }
    verdict(
        reached == 20 && monotone == 20 && identical == 20,
        format!("{reached}/20 seeds below 1e-2 (worst {worst:.2e}); monotone {monotone}/20; bit-identical {identical}/20"),
    )
}

// ------------------------------------------------------ criteria 5 and 6

/// Occlusion mix of `n` subjects in the 15/15/10 proportion.
fn counts(n: usize) -> LevelCounts {
    let a = (n * 15 + 20) / 40;
    let b = (n * 15 + 20) / 40;
    LevelCounts { a, b, c: n - a - b }
}

fn identify(tmp: &Path, n: usize, cfg: &RunConfig) -> Result<ReportFile, String> {
    let cohort = tmp.join("cohort");
    let spec = CohortSpec {
        counts: counts(n),
        ..CohortSpec::default()
    };
    let manifest = odontoreg_cli::commands::cmd_synth(&spec, &cohort, true).map_err(|e| e.to_string())?;
    let out = tmp.join(format!("run-{}", cfg.method));
    cmd_compare(&manifest, cfg, &out, true, |_, _| {}).map_err(|e| e.to_string())?;
    let scored = load_scores(&out, None).map_err(|e| e.to_string())?;
    cmd_report(&scored, &cfg.lr, &out.join("report"), false).map_err(|e| e.to_string())
}

fn summary(r: &ReportFile) -> (f64, f64, f64, Option<f64>) {
    let s = r.statistics.expect("truth is known");
    let rank1 = r.cmc.first().map_or(0.0, |p| p.fraction);
    (s.avg, s.max, rank1, r.lr.as_ref().map(|l| l.cllr))
}

fn landmark_identification() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        method: Method::Landmarks(LandmarkSubset::Set1),
        ..RunConfig::default()
    };
    match identify(tmp.path(), 40, &cfg) {
        Ok(r) => {
            let (avg, max, rank1, c) = summary(&r);
            verdict(
                avg <= 1.3 && max <= 5.0,
                format!("40 subjects, Set 1: mean position {avg:.3}, MAX {max}, rank-1 {:.1}%, C_llr {c:?}", rank1 * 100.0),
            )
        }
        Err(e) => verdict(false, e),
    }
}

fn region_identification(n: usize, generations: usize, gate: f64) -> Verdict {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        optimizer: OptimizerConfig {
            generations,
            ..OptimizerConfig::default()
        },
        ..RunConfig::default()
    };
    match identify(tmp.path(), n, &cfg) {
        Ok(r) => {
            let (avg, max, rank1, c) = summary(&r);
            let cllr_ok = c.is_some_and(|c| c < 0.3);
            let full = gate < 1.5;
            verdict(
                avg <= gate && (!full || cllr_ok),
                format!(
                    "{n} subjects, {generations} generations x 3 restarts: mean position {avg:.3} (gate {gate}), MAX {max}, rank-1 {:.1}%, C_llr {}{}",
                    rank1 * 100.0,
                    c.map_or("n/a".into(), |c| format!("{c:.4}")),
                    if full { " (gate 0.3)" } else { "" }
                ),
            )
        }
        Err(e) => verdict(false, e),
    }
}

// ------------------------------------------------------------ criterion 7

fn protocol_fidelity() -> Verdict {
    let ic = ic();
    let subject = generate_subject(77, odontoreg::synth::DEFAULT_PERTURBATION).unwrap();
    let case = render_case(&subject, &CameraSampler::default(), OcclusionLevel::B, &ic, 78).unwrap();
    let cfg = OptimizerConfig {
        generations: 40,
        seed: 5000,
        ..OptimizerConfig::default()
    };
    let mut notes = Vec::new();

    // instrumented fitness: count completed runs by watching evaluation totals
    let fit = region_fitness(&case.segmentation, &subject.mesh, &ic).unwrap();
    let space = camera_search_space();
    let singles: Vec<_> = (0..3u64)
        .map(|r| {
            let c = OptimizerConfig {
                seed: cfg.seed + r,
                ..cfg.clone()
            };
            let mut evals = 0u64;
            let res = optimize(
                |x| {
                    evals += 1;
                    fit.evaluate_slice(x)
                },
                &space,
                &c,
            )
            .unwrap();
            (res, evals)
        })
        .collect();
    let outcome = region_outcome(&case.segmentation, &subject.mesh, &ic, &cfg, odontoreg::regfit::DEFAULT_RESTARTS);
    let best_single = singles.iter().map(|s| s.0.best_value).fold(f64::INFINITY, f64::min);
    let total: u64 = singles.iter().map(|s| s.1).sum();
    let restarts_ok = match &outcome {
        ComparisonOutcome::Scored {
            score,
            restarts,
            evaluations,
            ..
        } => {
            notes.push(format!(
                "{restarts} restarts, {evaluations} evaluations (independent runs: {total}), kept {score:.5} = best of [{}]",
                singles.iter().map(|s| format!("{:.5}", s.0.best_value)).collect::<Vec<_>>().join(", ")
            ));
            *restarts == 3 && *evaluations == total && *score == best_single
        }
        ComparisonOutcome::Unscorable { reason } => {
            notes.push(reason.clone());
            false
        }
    };

    // row-only ranking: rewriting every other row leaves a row's ranking intact
    let ids: Vec<String> = (0..5).map(|i| format!("X{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut matrix = ScoreMatrix::new(Method::Regions, ids.clone(), ids.clone());
    let cell = |am: &str, pm: &str, s: f64| ComparisonScore {
        am_id: am.into(),
        pm_id: pm.into(),
        method: Method::Regions,
        score: s,
        unscorable: false,
        seed: None,
        evaluations: 0,
        restarts: 0,
        params: None,
        note: None,
    };
    for am in &ids {
        for pm in &ids {
            matrix.insert(cell(am, pm, rng.random())).unwrap();
        }
    }
    let truth: HashMap<String, String> = ids.iter().map(|i| (i.clone(), i.clone())).collect();
    let before = build_report(&matrix, &truth, false).unwrap();
    let mut changed = matrix.clone();
    for am in &ids[1..] {
        for pm in &ids {
            changed.insert(cell(am, pm, rng.random::<f64>() * 1e-3)).unwrap();
        }
    }
    let after = build_report(&changed, &truth, false).unwrap();
    let row_only = before.rankings[0] == after.rankings[0];
    let foreign = build_ranking("X0", &[cell("X1", "X0", 0.1)], &ids[..1], None).is_err();
    notes.push(format!(
        "row 0 ranking unchanged under other-row edits: {row_only}; cross-row cell rejected: {foreign}"
    ));
    verdict(restarts_ok && row_only && foreign, notes.join("; "))
}

// ------------------------------------------------------------ criterion 8

fn determinism() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let spec = CohortSpec {
        counts: LevelCounts { a: 2, b: 1, c: 1 },
        seed: 8,
        ..CohortSpec::default()
    };
    let manifest = odontoreg_cli::commands::cmd_synth(&spec, &tmp.path().join("cohort"), false).unwrap();
    let mut csvs = Vec::new();
    let mut labels = Vec::new();
    for (method, workers, run) in [
        (Method::Regions, 1, 0),
        (Method::Regions, 1, 1),
        (Method::Regions, 8, 0),
        (Method::Landmarks(LandmarkSubset::Set1), 1, 0),
        (Method::Landmarks(LandmarkSubset::Set1), 8, 0),
    ] {
        let cfg = RunConfig {
            method,
            workers: Some(workers),
            seed: 1234,
            optimizer: OptimizerConfig {
                generations: 30,
                ..OptimizerConfig::default()
            },
            ..RunConfig::default()
        };
        let out = tmp.path().join(format!("{method}-{workers}-{run}"));
        if let Err(e) = cmd_compare(&manifest, &cfg, &out, false, |_, _| {}) {
            return verdict(false, e.to_string());
        }
        csvs.push(fs::read(out.join(SCORES_FILE)).unwrap());
        labels.push(format!("{method}/w{workers}"));
    }
    let regions_same = csvs[0] == csvs[1] && csvs[0] == csvs[2];
    let landmarks_same = csvs[3] == csvs[4];
    verdict(
        regions_same && landmarks_same && !csvs[0].is_empty(),
        format!(
            "regions: run twice with 1 worker and once with 8, identical bytes {regions_same}; landmarks with 1 and 8 workers identical {landmarks_same}"
        ),
    )
}

fn main() {
    // the libtest harness flags are accepted and ignored
    let full = std::env::var("ODONTOREG_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let strict = std::env::var("ODONTOREG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let s = Duration::from_secs;
    let mut results = vec![
        run("1", "formula oracles", s(10), formula_oracles),
        run("2", "projection correctness", s(5), projection_correctness),
        run("3", "solver recovery", s(120), solver_recovery),
        run("4", "optimizer sanity", s(60), optimizer_sanity),
        run("5", "landmark identification", s(600), landmark_identification),
        run("6", "region identification, CI profile", s(1800), || region_identification(20, 100, 1.5)),
    ];
    if full {
        results.push(run("6", "region identification, default profile", s(4 * 3600), || {
            region_identification(40, OptimizerConfig::default().generations, 1.2)
        }));
    } else {
        println!("criterion 6 region identification, default profile: SKIPPED (set ODONTOREG_ACCEPTANCE_FULL=1)");
    }
    results.push(run("7", "protocol fidelity", s(120), protocol_fidelity));
    results.push(run("8", "determinism", s(600), determinism));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
