//! Acceptance suite. Run with `cargo test -p medianshape --test acceptance
//! -- --nocapture` to see one line per criterion.

use std::time::{Duration, Instant};

use medianshape::coreset1d::{
    build_coreset, eval_weighted_l1, eval_weighted_l2, eval_weighted_monotone, max_offsets,
    perturb, Coreset1D, RepRule,
};
use medianshape::fitters::{fit, FitConfig, FitResult, ShapeChart};
use medianshape::geometry::{cost_l1, cost_l2, NeumaierSum, Objective, ParamPoint, SurfaceFamily};
use medianshape::ladder::{build_ladder, find_stab, quantized_cost, SearchRegion};
use medianshape::levels::{
    bernoulli_sample, chernoff_rate, level_value, reduced_cost_l1, reduced_cost_l2, LevelConfig,
    LevelQuery, Reduction, Side,
};
use medianshape::testkit::{
    gen_instance, oracle_1d, oracle_fit, InstanceKind, InstanceSpec, OracleConfig,
};
use medianshape::VerticalSurfaces;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
    /// Bit patterns of every cost the criterion computed, in order.
    digest: Vec<u64>,
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

// ---------------------------------------------------------------- 1D suites

const EPS_1D: [f64; 3] = [0.5, 0.2, 0.1];
const INSTANCES_1D: usize = 50;
const N_1D: usize = 10_000;
const QUERIES: usize = 1000;

fn instance_1d(i: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    let mut v: Vec<f64> = match i % 3 {
        0 => (0..N_1D).map(|_| rng.random_range(-100.0..100.0)).collect(),
        1 => {
            let centers: Vec<f64> = (0..5).map(|_| rng.random_range(-100.0..100.0)).collect();
            let spread = Normal::new(0.0, 2.0).unwrap();
            (0..N_1D)
                .map(|_| centers[rng.random_range(0..5)] + spread.sample(&mut rng))
                .collect()
        }
        _ => {
            let c = Cauchy::new(0.0, 1.0).unwrap();
            (0..N_1D).map(|_| c.sample(&mut rng)).collect()
        }
    };
    v.sort_by(f64::total_cmp);
    v
}

/// Queries swept evenly across the data range padded by 10% on each side.
fn sweep(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = (v[0], v[v.len() - 1]);
    let pad = 0.1 * (hi - lo);
    (0..QUERIES)
        .map(|j| lo - pad + (hi - lo + 2.0 * pad) * j as f64 / (QUERIES - 1) as f64)
        .collect()
}

fn unit(v: &[f64]) -> Vec<(f64, u64)> {
    v.iter().map(|&x| (x, 1)).collect()
}

/// Every representative moved by the largest legal offset, random sign.
fn max_perturbation(c: &Coreset1D, seed: u64) -> Coreset1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<(f64, f64)> = max_offsets(c)
        .into_iter()
        .map(|b| {
            let sl = if rng.random_bool(0.5) { b } else { -b };
            let sr = if rng.random_bool(0.5) { b } else { -b };
            (sl, sr)
        })
        .collect();
    perturb(c, &offsets).expect("offsets are legal")
}

#[derive(Clone, Copy)]
enum Suite1d {
    Plain,
    Perturbed,
    PerturbedSquared,
    Monotone,
}

fn suite_1d(kind: Suite1d) -> Outcome {
    let jobs: Vec<(usize, f64)> = (0..INSTANCES_1D)
        .flat_map(|i| EPS_1D.iter().map(move |&e| (i, e)))
        .collect();
    let results: Vec<(f64, bool, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(i, eps)| {
            let v = instance_1d(i);
            let full = unit(&v);
            let coreset = build_coreset(&v, eps, RepRule::First).unwrap();
            let mut worst = 0.0f64;
            let mut ok = true;
            let mut costs = Vec::new();
            let mut check = |exact: f64, approx: f64, tol: f64| {
                let rel = (exact - approx).abs() / exact;
                worst = worst.max(rel);
                ok &= rel <= tol;
                costs.push(approx);
            };
            match kind {
                Suite1d::Plain => {
                    let reps = coreset.weighted();
                    for q in sweep(&v) {
                        let exact = oracle_1d(&full, q, Objective::L1);
                        check(exact, eval_weighted_l1(&reps, q).unwrap(), eps / 5.0 + 1e-9);
                    }
                }
                Suite1d::Perturbed | Suite1d::PerturbedSquared => {
                    let reps = max_perturbation(&coreset, 7 * i as u64 + 1).weighted();
                    for q in sweep(&v) {
                        if let Suite1d::Perturbed = kind {
                            let exact = oracle_1d(&full, q, Objective::L1);
                            check(exact, eval_weighted_l1(&reps, q).unwrap(), eps);
                        } else {
                            let exact = oracle_1d(&full, q, Objective::L2);
                            check(exact, eval_weighted_l2(&reps, q).unwrap(), eps);
                        }
                    }
                }
                Suite1d::Monotone => {
                    let reps = coreset.weighted();
                    for q in sweep(&v) {
                        for f in [|d: f64| d * d, |d: f64| d * d * d] {
                            let exact = full
                                .iter()
                                .map(|&(x, _)| f((x - q).abs()))
                                .collect::<NeumaierSum>()
                                .value();
                            let approx = eval_weighted_monotone(&reps, q, f).unwrap();
                            check(exact, approx, eps / 5.0 + 1e-9);
                        }
                    }
                }
            }
            (worst, ok, costs)
        })
        .collect();
    let pass = results.iter().all(|r| r.1);
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let failing = results.iter().filter(|r| !r.1).count();
    let digest = results.iter().flat_map(|r| bits(&r.2)).collect();
    Outcome {
        pass,
        detail: format!(
            "{} instances x {} eps x {QUERIES} queries, worst relative error {worst:.3e}, {failing} failing runs",
            INSTANCES_1D,
            EPS_1D.len()
        ),
        digest,
    }
}

// ------------------------------------------------------------ level suites

fn criterion_5() -> Outcome {
    let (n, delta, c) = (2000usize, 0.1, 4.0);
    let k = n as f64 / 4.0;
    let rate = chernoff_rate(k, delta, c, n);
    let lo_rank = ((1.0 - delta) * k).floor() as usize;
    let hi_rank = ((1.0 + delta) * k).ceil() as usize;
    let per_seed: Vec<(usize, Vec<f64>)> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0)).collect();
            let fam = SurfaceFamily::stack(values, 2).unwrap();
            let sample = bernoulli_sample(n, rate, seed);
            let depth = (rate * k).round() as usize;
            let mut good = 0;
            let mut seen = Vec::new();
            for _ in 0..10 {
                let base = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let q = LevelQuery::new(&fam, &base).unwrap();
                let lo = level_value(&q, lo_rank, Side::Bottom, None).unwrap();
                let hi = level_value(&q, hi_rank, Side::Bottom, None).unwrap();
                if depth < sample.len() {
                    let v = level_value(&q, depth, Side::Bottom, Some(&sample)).unwrap();
                    seen.push(v);
                    if lo <= v && v <= hi {
                        good += 1;
                    }
                }
            }
            (good, seen)
        })
        .collect();
    let good: usize = per_seed.iter().map(|r| r.0).sum();
    let frac = good as f64 / 2000.0;
    Outcome {
        pass: frac >= 0.95,
        detail: format!("sampling rate {rate:.3}, sandwich held in {good}/2000 (seed, base) pairs"),
        digest: per_seed.iter().flat_map(|r| bits(&r.1)).collect(),
    }
}

fn random_point(rng: &mut ChaCha8Rng, region: &SearchRegion, max_h: f64) -> ParamPoint {
    let base = (0..region.dim())
        .map(|a| rng.random_range(region.lo[a]..=region.hi[a]))
        .collect();
    ParamPoint::new(base, rng.random_range(0.0..max_h))
}

fn criterion_6() -> Outcome {
    let jobs: Vec<(u64, f64)> = (0..20u64)
        .flat_map(|s| [0.25, 0.1].into_iter().map(move |e| (s, e)))
        .collect();
    let results: Vec<(usize, bool, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(seed, eps)| {
            let spec = InstanceSpec::new(InstanceKind::Circle, 5000, 600 + seed)
                .with_noise(0.05)
                .with_outliers(0.1);
            let inst = gen_instance(&spec).unwrap();
            let pts = inst.points().unwrap();
            let fam = SurfaceFamily::cones(pts);
            let red = Reduction::build(&fam, eps, seed, &LevelConfig::default()).unwrap();
            let diam = pts.diameter();
            let (lo, hi) = pts.bounding_box();
            let region = SearchRegion::new(
                lo.iter().map(|x| x - diam).collect(),
                hi.iter().map(|x| x + diam).collect(),
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut good = 0;
            let mut costs = Vec::new();
            for _ in 0..100 {
                let p = random_point(&mut rng, &region, 2.0 * diam);
                let (e1, r1) = (cost_l1(&fam, &p).unwrap(), reduced_cost_l1(&fam, &red, &p).unwrap());
                let (e2, r2) = (cost_l2(&fam, &p).unwrap(), reduced_cost_l2(&fam, &red, &p).unwrap());
                if (e1 - r1).abs() <= eps * e1 && (e2 - r2).abs() <= eps * e2 {
                    good += 1;
                }
                costs.extend([r1, r2]);
            }
            (good, good >= 95, costs)
        })
        .collect();
    let min_good = results.iter().map(|r| r.0).min().unwrap();
    Outcome {
        pass: results.iter().all(|r| r.1),
        detail: format!("40 (seed, eps) runs, worst run had {min_good}/100 points within eps"),
        digest: results.iter().flat_map(|r| bits(&r.2)).collect(),
    }
}

// ----------------------------------------------------------- ladder suite

const KINDS: [InstanceKind; 5] = [
    InstanceKind::Circle,
    InstanceKind::Sphere,
    InstanceKind::Cylinder,
    InstanceKind::Lines,
    InstanceKind::TwoLines,
];

fn criterion_7() -> Outcome {
    let eps = 0.2;
    let results: Vec<(bool, bool, usize, f64, Vec<f64>)> = (0..20usize)
        .into_par_iter()
        .map(|f| {
            let kind = KINDS[f % 5];
            let n = if kind == InstanceKind::Lines { 50 } else { 200 };
            let spec = InstanceSpec::new(kind, n, 700 + f as u64)
                .with_noise(0.05)
                .with_outliers(0.1);
            let inst = gen_instance(&spec).unwrap();
            let data = inst.fit_input().unwrap();
            let chart = ShapeChart::for_input(&data, kind.shape_kind().unwrap())
                .unwrap()
                .swap_remove(0);
            let fam = chart.family();
            let region = chart.region();
            let grid = medianshape::fitters::default_grid(region.dim());
            let sigma = find_stab(fam, region, grid).unwrap().length;
            let ladder = build_ladder(sigma, fam.total_weight(), eps).unwrap();
            let max_h = 2.0 * region.width(0).max(1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
            let (mut lower_ok, mut upper_ok) = (true, true);
            let mut worst = 0.0f64;
            let mut counted = 0;
            let mut costs = Vec::new();
            for _ in 0..200_000 {
                if counted == 500 {
                    break;
                }
                let p = random_point(&mut rng, region, max_h);
                let exact = cost_l1(fam, &p).unwrap();
                if exact < sigma {
                    continue;
                }
                counted += 1;
                let q = quantized_cost(fam, &ladder, &p, Objective::L1).unwrap().value;
                lower_ok &= exact <= q * (1.0 + 1e-12);
                upper_ok &= q <= (1.0 + eps / 5.0) * exact;
                worst = worst.max(q / exact - 1.0);
                costs.push(q);
            }
            (lower_ok, upper_ok, counted, worst, costs)
        })
        .collect();
    let pass = results.iter().all(|r| r.0 && r.1 && r.2 == 500);
    let worst = results.iter().map(|r| r.3).fold(0.0, f64::max);
    let counted: usize = results.iter().map(|r| r.2).sum();
    Outcome {
        pass,
        detail: format!(
            "20 families, {counted} qualifying points, worst quantized/exact - 1 = {worst:.3e} (bound {:.3})",
            eps / 5.0
        ),
        digest: results.iter().flat_map(|r| bits(&r.4)).collect(),
    }
}

// --------------------------------------------------------- end-to-end suite

struct KindReport {
    kind: InstanceKind,
    within: usize,
    exact_costs: bool,
    unstable_oracles: usize,
    costs: Vec<f64>,
}

fn criterion_8() -> Outcome {
    let eps = 0.2;
    let reports: Vec<KindReport> = KINDS
        .iter()
        .map(|&kind| {
            let per_seed: Vec<(bool, bool, bool, f64, f64)> = (0..50u64)
                .into_par_iter()
                .map(|seed| {
                    let n = if kind == InstanceKind::Lines { 50 } else { 200 };
                    let spec = InstanceSpec::new(kind, n, 800 + seed)
                        .with_noise(0.05)
                        .with_outliers(0.1);
                    let inst = gen_instance(&spec).unwrap();
                    let data = inst.fit_input().unwrap();
                    let shape = kind.shape_kind().unwrap();
                    let objective = if seed % 2 == 0 { Objective::L1 } else { Objective::L2 };
                    let cfg = FitConfig::new(eps, objective).with_seed(seed);
                    let got: FitResult = fit(data, shape, &cfg).unwrap();
                    let oracle = oracle_fit(data, shape, objective, OracleConfig::for_kind(shape, seed))
                        .unwrap();
                    let exact = got.cost == data.cost(&got.shape, objective)
                        && oracle.cost == data.cost(&oracle.shape, objective);
                    (
                        got.cost <= (1.0 + eps) * oracle.cost,
                        exact,
                        oracle.flags.self_check_failed,
                        got.cost,
                        oracle.cost,
                    )
                })
                .collect();
            KindReport {
                kind,
                within: per_seed.iter().filter(|r| r.0).count(),
                exact_costs: per_seed.iter().all(|r| r.1),
                unstable_oracles: per_seed.iter().filter(|r| r.2).count(),
                costs: per_seed.iter().flat_map(|r| [r.3, r.4]).collect(),
            }
        })
        .collect();
    let pass = reports.iter().all(|r| r.within >= 48 && r.exact_costs);
    let detail = reports
        .iter()
        .map(|r| {
            format!(
                "{} {}/50{}{}",
                r.kind.name(),
                r.within,
                if r.exact_costs { "" } else { " (inexact cost reported)" },
                if r.unstable_oracles > 0 {
                    format!(" ({} oracle self-check warnings)", r.unstable_oracles)
                } else {
                    String::new()
                }
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass,
        detail: format!("pipeline within (1+eps) of oracle: {detail}"),
        digest: reports.iter().flat_map(|r| bits(&r.costs)).collect(),
    }
}

// ------------------------------------------------------------ scaling check

fn reduction_time(n: usize, seed: u64) -> Duration {
    let spec = InstanceSpec::new(InstanceKind::Circle, n, seed).with_noise(0.05);
    let inst = gen_instance(&spec).unwrap();
    let fam = SurfaceFamily::cones(inst.points().unwrap());
    let base = inst.points().unwrap().centroid();
    let start = Instant::now();
    let red = Reduction::build(&fam, 0.25, seed, &LevelConfig::default()).unwrap();
    let reduced = red.over(&fam).unwrap().weighted_values(&base).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(reduced.iter().map(|r| r.1).sum::<u64>(), n as u64);
    elapsed
}

fn criterion_9() -> Outcome {
    let median = |n: usize| {
        let _ = reduction_time(n, 0);
        let mut t: Vec<Duration> = (1..=5).map(|s| reduction_time(n, s)).collect();
        t.sort();
        t[2]
    };
    let a = median(100_000);
    let b = median(200_000);
    let ratio = b.as_secs_f64() / a.as_secs_f64();
    Outcome {
        pass: ratio <= 2.5,
        detail: format!(
            "median reduction time {:.2} ms at 1e5, {:.2} ms at 2e5, ratio {ratio:.2}",
            a.as_secs_f64() * 1e3,
            b.as_secs_f64() * 1e3
        ),
        digest: Vec::new(),
    }
}

// ------------------------------------------------------------------ driver

fn run_1_to_8(times: &mut Vec<Duration>) -> Vec<Outcome> {
    let suites: [fn() -> Outcome; 8] = [
        || suite_1d(Suite1d::Plain),
        || suite_1d(Suite1d::Perturbed),
        || suite_1d(Suite1d::PerturbedSquared),
        || suite_1d(Suite1d::Monotone),
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
    ];
    suites
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let t = Instant::now();
            let out = f();
            times.push(t.elapsed());
            eprintln!("  [criterion {} done in {:.1} s]", i + 1, t.elapsed().as_secs_f64());
            out
        })
        .collect()
}

#[test]
fn acceptance() {
    let mut times = Vec::new();
    let first = run_1_to_8(&mut times);
    let mut lines = Vec::new();
    let mut all = true;
    // Runtime limits per criterion (seconds); criterion 1 is the only 1D
    // suite with its own limit.
    let limits = [Some(30.0), None, None, None, None, Some(60.0), None, Some(300.0)];
    for (i, out) in first.iter().enumerate() {
        let secs = times[i].as_secs_f64();
        let in_time = limits[i].is_none_or(|l| secs < l);
        let pass = out.pass && in_time;
        all &= pass;
        lines.push(format!(
            "criterion {}: {} ({}; {secs:.1} s{})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            if in_time { "" } else { ", over time limit" }
        ));
    }
    let c9 = criterion_9();
    all &= c9.pass;
    lines.push(format!(
        "criterion 9: {} ({})",
        if c9.pass { "PASS" } else { "FAIL" },
        c9.detail
    ));
    let second = run_1_to_8(&mut Vec::new());
    let identical: Vec<bool> = first
        .iter()
        .zip(&second)
        .map(|(a, b)| a.digest == b.digest && !a.digest.is_empty())
        .collect();
    let det = identical.iter().all(|&x| x);
    all &= det;
    let differing: Vec<String> = identical
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    lines.push(format!(
        "criterion 10: {} ({})",
        if det { "PASS" } else { "FAIL" },
        if det {
            format!(
                "criteria 1-8 reran with bit-identical costs ({} values)",
                first.iter().map(|o| o.digest.len()).sum::<usize>()
            )
        } else {
            format!("costs differ on rerun for criteria {}", differing.join(", "))
        }
    ));
    for l in &lines {
        println!("{l}");
    }
    assert!(all, "acceptance criteria failed:\n{}", lines.join("\n"));
}
