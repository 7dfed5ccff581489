//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use udtw::alignment::{count_paths, dtw_hard, enumerate_paths, path_cost, PlanShape};
use udtw::barycenter::{barycenter_objective, frechet_mean, interpolate_pair, BarySigma, BarycenterConfig, Sweep};
use udtw::classify::{eval_split, Classifier, Distance, EvalPlan};
use udtw::data::{split, synth, SynthKind};
use udtw::dictionary::{cluster_similarity, fit_dictionary, Dictionary};
use udtw::forecast::{
    eval_forecaster, train_forecaster, EvalConfig, ForecastConfig, ForecastModel, Init, LossConfig, LossKind, Metric,
};
use udtw::numerics::{finite_diff_gradient, Gamma};
use udtw::oracle::{run_oracle, OracleConfig};
use udtw::sigma::{FreeSigma, SigmaCombine, SigmaModel, SigmaNet, SigmaNetParams};
use udtw::udtw::{surrogate_grad, udtw_eval, weighted_cost, BaseDistanceKind, PenaltyWeights, UdtwConfig, VarianceMatrix};
use udtw::{Grid, TimeSeries};

type Outcome = Result<String, String>;

fn series(rng: &mut Xoshiro256PlusPlus, len: usize, dim: usize) -> TimeSeries {
    TimeSeries::new(dim, (0..len * dim).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn variances(rng: &mut Xoshiro256PlusPlus, t: usize, tp: usize) -> VarianceMatrix {
    VarianceMatrix::new(Grid::from_fn(t, tp, |_, _| rng.random_range(0.5..2.0))).unwrap()
}

/// Largest `|a-b| / max(|a|, |b|)` over entries, where entries smaller than
/// `1e-6` of the gradient's largest entry are compared absolutely at that scale.
fn grad_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-10);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let r = run_oracle(&OracleConfig { seed: 2024, ..OracleConfig::default() }).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    check(
        r.passed && r.max_value_error <= 1e-9 && el < Duration::from_secs(30),
        format!("{} trials, max rel err {:.2e}, {} failures, {:.1?}", r.trials, r.max_value_error, r.failures.len(), el),
    )
}

fn limit_behavior() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    let (mut checked, mut worst_d, mut worst_p) = (0, 0.0f64, 0.0f64);
    while checked < 100 {
        let (t, tp) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (a, b) = (series(&mut rng, t, 1), series(&mut rng, tp, 1));
        let var = variances(&mut rng, t, tp);
        let kind = BaseDistanceKind::ALL[rng.random_range(0..3)];
        let (cost, logs) = weighted_cost(&a, &b, &var, kind).unwrap();
        let shape = PlanShape::new(t, tp).unwrap();
        let mut costs: Vec<f64> = enumerate_paths(&shape).unwrap().iter().map(|p| path_cost(p, &cost).unwrap()).collect();
        costs.sort_by(f64::total_cmp);
        if costs.len() > 1 && costs[1] - costs[0] < 1e-3 {
            continue;
        }
        let (hard, path) = dtw_hard(&cost, &shape).unwrap();
        let r = udtw_eval(&cost, &logs, Gamma::new(1e-9).unwrap(), &shape).unwrap();
        worst_d = worst_d.max((r.distance - hard).abs());
        worst_p = worst_p.max((r.penalty - path_cost(&path, &logs).unwrap()).abs());
        checked += 1;
    }
    check(
        worst_d <= 1e-6 && worst_p <= 1e-6,
        format!("{checked} unique-minimum instances, max |distance - dtw| {worst_d:.1e}, max |penalty - path log sigma| {worst_p:.1e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
    // near the central-difference optimum cbrt(eps); smaller steps let round-off
    // dominate the near-zero entries
    let h = 1e-5;
    let mut worst = [0.0f64; 5];
    for _ in 0..20 {
        let (t, tp) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let (a, b) = (series(&mut rng, t, 1), series(&mut rng, tp, 1));
        let cfg = UdtwConfig::with_gamma([0.1, 0.5, 1.0][rng.random_range(0..3)]);
        let w = PenaltyWeights { beta: 0.3, lambda: 0.2 };

        // series and variance entries
        let var = variances(&mut rng, t, tp);
        let g = surrogate_grad(&a, &b, &var, &cfg, w).unwrap();
        let fd = finite_diff_gradient(
            |p| surrogate_grad(&TimeSeries::univariate(p.to_vec()), &b, &var, &cfg, w).unwrap().value,
            a.values(),
            h,
        )
        .unwrap();
        worst[0] = worst[0].max(grad_err(&g.d_psi, &fd));
        let fd = finite_diff_gradient(
            |p| {
                let v = VarianceMatrix::new(Grid::from_vec(t, tp, p.to_vec()).unwrap()).unwrap();
                surrogate_grad(&a, &b, &v, &cfg, w).unwrap().value
            },
            var.as_slice(),
            h,
        )
        .unwrap();
        let mut sig = grad_err(g.d_sigma.as_slice(), &fd);

        // free sigma grid parameters
        let free = FreeSigma::new(3, rng.random()).unwrap();
        let v = free.variance(&a, &b).unwrap();
        let gg = surrogate_grad(&a, &b, &v, &cfg, w).unwrap();
        let (dp, _, _) = free.backward(&a, &b, &gg.d_sigma).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                let mut f = free.clone();
                f.raw = Grid::from_vec(3, 3, p.to_vec()).unwrap();
                surrogate_grad(&a, &b, &f.variance(&a, &b).unwrap(), &cfg, w).unwrap().value
            },
            free.raw.as_slice(),
            h,
        )
        .unwrap();
        sig = sig.max(grad_err(&dp, &fd));
        worst[1] = worst[1].max(sig);

        // SigmaNet weights
        let rule = [SigmaCombine::AddSq, SigmaCombine::Add, SigmaCombine::Mul, SigmaCombine::Joint][rng.random_range(0..4)];
        let dim_in = if rule == SigmaCombine::Joint { 2 } else { 1 };
        let net = SigmaNet::new(SigmaNetParams::random(dim_in, rng.random()), rule).unwrap();
        let v = net.variance(&a, &b).unwrap();
        let gg = surrogate_grad(&a, &b, &v, &cfg, w).unwrap();
        let (dp, _, _) = net.backward(&a, &b, &gg.d_sigma).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                let mut n = net.clone();
                n.params.set_params(p);
                surrogate_grad(&a, &b, &n.variance(&a, &b).unwrap(), &cfg, w).unwrap().value
            },
            &net.params.params(),
            h,
        )
        .unwrap();
        worst[2] = worst[2].max(grad_err(&dp, &fd));

        // forecaster weights, all three losses
        let kind = [LossKind::Euclid, LossKind::Sdtw, LossKind::Udtw][rng.random_range(0..3)];
        let loss = LossConfig::new(kind, 0.5, 0.1).unwrap();
        let mut model = ForecastModel::new(t, 4, tp, Init::Uniform, rng.random()).unwrap();
        if kind == LossKind::Udtw {
            model = model.with_sigma_head(SigmaNet::new(SigmaNetParams::random(1, rng.random()), SigmaCombine::AddSq).unwrap());
        }
        let (_, g) = model.loss_grad(a.values(), &b, &loss).unwrap();
        let fd = finite_diff_gradient(
            |p| {
                let mut m = model.clone();
                m.set_params(p);
                m.loss_grad(a.values(), &b, &loss).unwrap().0
            },
            &model.params(),
            h,
        )
        .unwrap();
        worst[3] = worst[3].max(grad_err(&g, &fd));

        // barycenter variables
        let set: Vec<TimeSeries> = (0..3)
            .map(|_| {
                let len = rng.random_range(2..=6);
                series(&mut rng, len, 1)
            })
            .collect();
        let n = rng.random_range(2..=5);
        let bcfg = BarycenterConfig {
            beta: 0.1,
            lambda: 0.5,
            gamma: Gamma::new(0.5).unwrap(),
            sigma: [BarySigma::AddSq, BarySigma::AddOne][rng.random_range(0..2)],
            ..BarycenterConfig::default()
        };
        let x: Vec<f64> = (0..2 * n).map(|k| if k < n { rng.sample(StandardNormal) } else { rng.random_range(-1.0..1.0) }).collect();
        let (_, g) = barycenter_objective(&set, 1, &x, &bcfg).unwrap();
        let fd = finite_diff_gradient(|p| barycenter_objective(&set, 1, p, &bcfg).unwrap().0, &x, h).unwrap();
        worst[4] = worst[4].max(grad_err(&g, &fd));
    }
    check(
        worst.iter().all(|e| *e < 1e-4),
        format!(
            "max rel err over 20 points: series {:.1e}, sigma params {:.1e}, sigmanet {:.1e}, forecaster {:.1e}, barycenter {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn degenerate_identities() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let mut ok = true;
    let mut sym = 0.0f64;
    for _ in 0..50 {
        let (t, tp) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (a, b) = (series(&mut rng, t, 2), series(&mut rng, tp, 2));
        let cfg = UdtwConfig::with_gamma(0.3);
        let r = cfg.eval(&a, &b, &VarianceMatrix::ones(t, tp)).unwrap();
        ok &= r.penalty == 0.0;
        let var = variances(&mut rng, t, tp);
        let ab = cfg.eval(&a, &b, &var).unwrap();
        let ba = cfg.eval(&b, &a, &var.transpose()).unwrap();
        sym = sym.max((ab.distance - ba.distance).abs()).max((ab.penalty - ba.penalty).abs());
    }
    let (x, y, s2) = (TimeSeries::univariate(vec![1.5]), TimeSeries::univariate(vec![-0.5]), 2.5);
    let one = UdtwConfig::default().eval(&x, &y, &VarianceMatrix::constant(1, 1, s2).unwrap()).unwrap();
    let single = one.distance == 4.0 / s2 && one.penalty == 0.5 * s2.ln();
    check(
        ok && single && sym <= 1e-12,
        format!("unit-variance penalty exactly 0: {ok}, single cell exact: {single}, max asymmetry {sym:.1e}"),
    )
}

fn path_combinatorics() -> Outcome {
    let mut d = [[0u128; 7]; 7];
    for m in 0..7 {
        for n in 0..7 {
            d[m][n] = if m == 0 || n == 0 { 1 } else { d[m - 1][n] + d[m][n - 1] + d[m - 1][n - 1] };
        }
    }
    let mut bad = Vec::new();
    for t in 1..=6 {
        for tp in 1..=6 {
            let shape = PlanShape::new(t, tp).unwrap();
            let want = d[t - 1][tp - 1];
            if count_paths(&shape) != want || enumerate_paths(&shape).unwrap().len() as u128 != want {
                bad.push((t, tp));
            }
        }
    }
    let three = count_paths(&PlanShape::new(3, 3).unwrap());
    check(bad.is_empty() && three == 13, format!("36 shapes up to 6x6, 3x3 count {three}, mismatches {bad:?}"))
}

fn barycenter_properties() -> Outcome {
    let t0 = Instant::now();
    let ds = synth(SynthKind::Cbf, 30, 0).unwrap();
    let members: Vec<TimeSeries> = ds.class_members(0).into_iter().take(10).cloned().collect();
    let cfg = BarycenterConfig {
        beta: 0.01,
        lambda: 0.1,
        ..BarycenterConfig::default()
    };
    let b = frechet_mean(&members, 128, &cfg, None).map_err(|e| e.to_string())?;
    let monotone = b.objective_trace.windows(2).all(|w| w[1] <= w[0]);
    let sweep = interpolate_pair(&members[0], &members[1], &BarycenterConfig { beta: 0.1, ..cfg }, &Sweep::Lambda(vec![1e6]))
        .map_err(|e| e.to_string())?;
    // Σ = 1 + σ_μ in the sweep, so Σ ≈ 1 means σ_μ ≈ 0
    let dev = sweep[0].1.sigma_mu.iter().copied().fold(0.0, f64::max);
    let el = t0.elapsed();
    check(
        monotone && b.iterations <= 100 && dev <= 1e-2 && el < Duration::from_secs(120),
        format!(
            "{} series, {} iterations, trace non-increasing: {monotone}, lambda=1e6 max |Sigma-1| {dev:.1e}, {el:.1?}",
            members.len(),
            b.iterations
        ),
    )
}

fn classification_ordering() -> Outcome {
    let t0 = Instant::now();
    let kinds = [SynthKind::Cbf, SynthKind::Control, SynthKind::GunpointLike, SynthKind::EcgLike, SynthKind::TwoPatterns];
    let plan = EvalPlan {
        classifiers: vec![Classifier::Centroid],
        distances: vec![Distance::Euclidean, Distance::Udtw],
        ..EvalPlan::default()
    };
    let mut wins = 0;
    let mut cells = Vec::new();
    for kind in kinds {
        let ds = synth(kind, 60, 0).unwrap();
        let r = eval_split(&ds, &plan).map_err(|e| e.to_string())?;
        let acc = |d: Distance| r.rows.iter().find(|row| row.distance == d).unwrap().test_accuracy;
        let (e, u) = (acc(Distance::Euclidean), acc(Distance::Udtw));
        wins += usize::from(u >= e);
        cells.push(format!("{} {e:.2}/{u:.2}", kind.name()));
    }
    let el = t0.elapsed();
    check(
        wins >= 4 && el < Duration::from_secs(900),
        format!("euclidean/udtw centroid test accuracy: {}; udtw >= euclidean on {wins}/5, {el:.1?}", cells.join(", ")),
    )
}

fn forecasting_ordering() -> Outcome {
    let t0 = Instant::now();
    let eval = EvalConfig { gamma: 0.1, model_sigma: false };
    let (mut eu, mut ud) = (0.0, 0.0);
    for seed in 0..5u64 {
        let ds = synth(SynthKind::EcgLike, 100, seed).unwrap();
        let (train, _, test) = split(&ds, [0.5, 0.0, 0.5], seed, false).unwrap();
        for (kind, acc) in [(LossKind::Euclid, &mut eu), (LossKind::Udtw, &mut ud)] {
            let mut cfg = ForecastConfig::new(LossConfig::new(kind, 0.1, 0.1).unwrap());
            cfg.seed = seed;
            let fit = train_forecaster(&train.series, &cfg).map_err(|e| e.to_string())?;
            let t = eval_forecaster(&fit.model, &test.series, &[Metric::Udtw], &cfg.split, &eval).map_err(|e| e.to_string())?;
            *acc += t["udtw"].mean / 5.0;
        }
    }
    let el = t0.elapsed();
    check(
        ud < eu && el < Duration::from_secs(600),
        format!("mean uDTW test metric over 5 seeds: udtw-trained {ud:.4}, euclid-trained {eu:.4}, {el:.1?}"),
    )
}

fn dictionary_sanity() -> Outcome {
    let t0 = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let v: Vec<f64> = (0..32)
            .map(|k| sign * (k as f64 * std::f64::consts::PI / 16.0).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        data.push(TimeSeries::univariate(v));
        labels.push(i % 2);
    }
    let dict = Dictionary::init_from(&data, 2, 2, 9).map_err(|e| e.to_string())?;
    let fit = fit_dictionary(&data, dict, 50).map_err(|e| e.to_string())?;
    let (within, between) = cluster_similarity(&fit.codes, &labels).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    check(
        within - between >= 0.2 && el < Duration::from_secs(60),
        format!("within {within:.3}, between {between:.3} after 50 alternations, {el:.1?}"),
    )
}

fn cli_determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_udtw");
    let runs: [&[&str]; 8] = [
        &["dist", "--x", "0,1,2,1", "--y", "0,2,1", "--gamma", "0.5", "--seed", "3"],
        &["align", "--x", "0,1,2,1", "--y", "0,2,1", "--gamma", "0.5", "--seed", "3"],
        &["barycenter", "--dataset", "synth:cbf:12", "--class", "0", "--beta", "0.01", "--lambda", "0.1", "--seed", "3"],
        &["classify", "--dataset", "synth:two-constant:16", "--gammas", "1", "--betas", "0,0.01", "--seed", "3"],
        &["forecast", "--dataset", "synth:ecg-like:20", "--epochs", "5", "--seed", "3"],
        &["code", "--dataset", "synth:two-constant:10", "--iters", "5", "--seed", "3"],
        &["oracle-check", "--sizes", "3,3", "--trials", "20", "--seed", "3"],
        &["bench", "--sizes", "8,16", "--reps", "2", "--seed", "3"],
    ];
    let mut bad = Vec::new();
    for args in runs {
        let once = || Command::new(exe).args(args).output().expect("run cli");
        let (a, b) = (once(), once());
        if !a.status.success() || a.stdout.is_empty() || a.stdout != b.stdout || serde_json::from_slice::<serde_json::Value>(&a.stdout).is_err() {
            bad.push(args[0]);
        }
    }
    check(bad.is_empty(), format!("8 subcommands run twice; differing or failing: {bad:?}"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("limit behavior", limit_behavior),
        ("gradient correctness", gradient_correctness),
        ("degenerate identities", degenerate_identities),
        ("path combinatorics", path_combinatorics),
        ("barycenter", barycenter_properties),
        ("classification ordering", classification_ordering),
        ("forecasting ordering", forecasting_ordering),
        ("dictionary sanity", dictionary_sanity),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
