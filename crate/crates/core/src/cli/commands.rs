use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use super::{to_canonical, usage, CliError, Command, Common, MetricArgs, PairArgs};
use crate::alignment::{Band, PlanShape};
use crate::barycenter::{frechet_mean, BarycenterConfig};
use crate::classify::{eval_split, Classifier, EvalPlan};
use crate::data::{load_ucr, split, synth, Dataset, SynthKind};
use crate::dictionary::{cluster_similarity, fit_dictionary, Dictionary};
use crate::forecast::{eval_forecaster, predictions, train_forecaster, EvalConfig, ForecastConfig, LossConfig};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::Gamma;
use crate::oracle::{run_oracle, OracleConfig};
use crate::softdtw::{hard_path, sdtw_forward, soft_alignment};
use crate::udtw::{weighted_cost, UdtwConfig, VarianceMatrix};

type CliResult<T> = std::result::Result<T, CliError>;

pub(super) fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Dist {
            common,
            pair,
            metric,
            beta,
            alignment,
        } => dist(&common, &pair, &metric, beta, alignment.as_deref()),
        Command::Align { common, pair, metric, csv } => align(&common, &pair, &metric, csv.as_deref()),
        Command::Barycenter {
            common,
            metric,
            dataset,
            class,
            count,
            length,
            beta,
            lambda,
            max_iters,
            optimizer,
            sigma,
            regularizer,
            csv,
            trace_csv,
        } => {
            non_negative("--beta", beta)?;
            non_negative("--lambda", lambda)?;
            if metric.gamma <= 0.0 {
                return Err(usage("--gamma", "barycenters need gamma > 0"));
            }
            if max_iters == 0 {
                return Err(usage("--max-iters", "must be >= 1"));
            }
            let cfg = BarycenterConfig {
                beta,
                lambda,
                gamma: gamma_flag(metric.gamma)?,
                kind: metric.kind,
                band: band_flag(&metric)?,
                max_iters,
                optimizer,
                regularizer,
                sigma,
            };
            barycenter(&common, &dataset, class, count, length, &cfg, csv.as_deref(), trace_csv.as_deref())
        }
        Command::Classify {
            common,
            dataset,
            classifiers,
            distances,
            gammas,
            betas,
            fractions,
            max_iters,
            band,
            znorm,
        } => {
            let classifiers = classifiers.iter().map(|c| parse_classifier(c)).collect::<CliResult<Vec<_>>>()?;
            for g in &gammas {
                if !(*g > 0.0) || !g.is_finite() {
                    return Err(usage("--gammas", format!("each gamma must be > 0, got {g}")));
                }
            }
            for b in &betas {
                non_negative("--betas", *b)?;
            }
            let fractions = fractions_flag(&fractions)?;
            if let Some(r) = band {
                non_negative("--band", r)?;
            }
            let mut ds = load_dataset(&dataset, common.seed)?;
            if znorm {
                ds = ds.z_normalized();
            }
            let plan = EvalPlan {
                classifiers,
                distances,
                gammas,
                betas,
                fractions,
                seed: common.seed,
                max_iters,
                band: band.map(Band::Absolute),
            };
            emit(&common, &eval_split(&ds, &plan)?)
        }
        Command::Forecast {
            common,
            dataset,
            test,
            loss,
            gamma,
            beta,
            epochs,
            hidden,
            lr,
            weight_decay,
            batch_size,
            init,
            no_sigma_head,
            metrics,
            eval_gamma,
            predictions: pred_csv,
        } => {
            non_negative("--beta", beta)?;
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(usage("--gamma", "must be > 0"));
            }
            if !(eval_gamma > 0.0) || !eval_gamma.is_finite() {
                return Err(usage("--eval-gamma", "must be > 0"));
            }
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(usage("--lr", "must be > 0"));
            }
            non_negative("--weight-decay", weight_decay)?;
            if hidden == 0 {
                return Err(usage("--hidden", "must be >= 1"));
            }
            if batch_size == 0 {
                return Err(usage("--batch-size", "must be >= 1"));
            }
            let mut cfg = ForecastConfig::new(LossConfig::new(loss, gamma, beta)?);
            cfg.epochs = epochs;
            cfg.hidden = hidden;
            cfg.lr = lr;
            cfg.weight_decay = weight_decay;
            cfg.batch_size = batch_size;
            cfg.init = init;
            cfg.seed = common.seed;
            cfg.sigma_head = !no_sigma_head && cfg.sigma_head;
            let eval = EvalConfig {
                gamma: eval_gamma,
                model_sigma: false,
            };
            forecast(&common, &dataset, test.as_deref(), &cfg, &metrics, &eval, pred_csv.as_deref())
        }
        Command::Code {
            common,
            dataset,
            anchors,
            k_nearest,
            iters,
            gamma,
            gamma_prime,
            lr,
            inner_iters,
        } => {
            if anchors == 0 {
                return Err(usage("--anchors", "must be >= 1"));
            }
            if k_nearest == 0 || k_nearest > anchors {
                return Err(usage("--k-nearest", format!("must be in 1..={anchors}")));
            }
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(usage("--gamma", "must be > 0"));
            }
            if !(gamma_prime > 0.0) || !gamma_prime.is_finite() {
                return Err(usage("--gamma-prime", "must be > 0"));
            }
            non_negative("--lr", lr)?;
            code(&common, &dataset, anchors, k_nearest, iters, gamma, gamma_prime, lr, inner_iters)
        }
        Command::OracleCheck {
            common,
            sizes,
            trials,
            gammas,
            cap,
            corrupt,
        } => {
            let [t, tp] = sizes[..] else {
                return Err(usage("--sizes", "expected tau,tau_prime"));
            };
            if t == 0 || tp == 0 {
                return Err(usage("--sizes", "sizes must be >= 1"));
            }
            for g in &gammas {
                if !(*g >= 0.0) || !g.is_finite() {
                    return Err(usage("--gammas", format!("each gamma must be >= 0, got {g}")));
                }
            }
            let corrupt = match corrupt.as_deref() {
                None => None,
                Some([m, n, v]) if *m >= 0.0 && *n >= 0.0 => Some((*m as usize, *n as usize, *v)),
                Some(_) => return Err(usage("--corrupt", "expected m,n,value")),
            };
            let cfg = OracleConfig {
                sizes: (t, tp),
                trials,
                seed: common.seed,
                gammas,
                cap,
                corrupt,
                ..OracleConfig::default()
            };
            let report = run_oracle(&cfg)?;
            emit(&common, &report)?;
            if report.passed {
                Ok(())
            } else {
                let f = &report.failures[0];
                eprintln!(
                    "oracle check failed: {} failure(s); first: trial {} ({}x{}, gamma {}, {}) {} error {:e}{}",
                    report.failures.len(),
                    f.trial,
                    f.tau,
                    f.tau_prime,
                    f.gamma,
                    f.kind.name(),
                    f.what,
                    f.error,
                    f.cell.map(|(m, n)| format!(" at cell ({m}, {n})")).unwrap_or_default()
                );
                Err(CliError::Failed)
            }
        }
        Command::Bench {
            common,
            sizes,
            gammas,
            reps,
            csv,
        } => {
            if sizes.contains(&0) {
                return Err(usage("--sizes", "sizes must be >= 1"));
            }
            if gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
                return Err(usage("--gammas", "each gamma must be > 0"));
            }
            if reps == 0 {
                return Err(usage("--reps", "must be >= 1"));
            }
            bench(&common, &sizes, &gammas, reps, csv.as_deref())
        }
    }
}

fn non_negative(flag: &str, v: f64) -> CliResult<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(usage(flag, format!("must be >= 0, got {v}")));
    }
    Ok(())
}

fn gamma_flag(g: f64) -> CliResult<Gamma> {
    if !g.is_finite() {
        return Err(usage("--gamma", "must be finite"));
    }
    Gamma::new(g).map_err(|e| usage("--gamma", e))
}

fn band_flag(m: &MetricArgs) -> CliResult<Option<Band>> {
    if let Some(r) = m.band {
        non_negative("--band", r)?;
        return Ok(Some(Band::Absolute(r)));
    }
    if let Some(r) = m.band_fraction {
        non_negative("--band-fraction", r)?;
        return Ok(Some(Band::Fraction(r)));
    }
    Ok(None)
}

fn fractions_flag(f: &[f64]) -> CliResult<[f64; 3]> {
    let [a, b, c] = f[..] else {
        return Err(usage("--fractions", "expected three comma-separated values"));
    };
    if [a, b, c].iter().any(|v| !(*v >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(usage("--fractions", "must be non-negative and sum to 1"));
    }
    Ok([a, b, c])
}

fn parse_classifier(s: &str) -> CliResult<Classifier> {
    if s == "centroid" {
        return Ok(Classifier::Centroid);
    }
    match s.strip_prefix("knn:").or_else(|| s.strip_prefix("knn")).map(str::parse::<usize>) {
        Some(Ok(k)) if k >= 1 => Ok(Classifier::Knn { k }),
        _ => Err(usage("--classifiers", format!("`{s}` is not centroid or knn:<k>"))),
    }
}

/// `synth:<kind>[:<n>]` or a UCR file path.
pub(super) fn load_dataset(spec: &str, seed: u64) -> CliResult<Dataset> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let mut parts = rest.splitn(2, ':');
        let kind: SynthKind = parts.next().unwrap_or("").parse().map_err(|e| usage("--dataset", e))?;
        let n = match parts.next() {
            Some(n) => n
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| usage("--dataset", format!("bad sample count `{n}`")))?,
            None => 60,
        };
        return Ok(synth(kind, n, seed)?);
    }
    Ok(load_ucr(spec)?)
}

fn read_series(flag: &str, s: &str) -> CliResult<TimeSeries> {
    let text;
    let body = if let Some(path) = s.strip_prefix('@') {
        text = std::fs::read_to_string(path).map_err(|e| usage(flag, format!("{path}: {e}")))?;
        text.as_str()
    } else {
        s
    };
    let parse_row = |line: &str| -> CliResult<Vec<f64>> {
        line.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| usage(flag, format!("`{t}` is not a number"))))
            .collect()
    };
    let rows: Vec<Vec<f64>> = body
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_row)
        .collect::<CliResult<_>>()?;
    let series = match rows.len() {
        0 => return Err(usage(flag, "empty series")),
        1 => TimeSeries::univariate(rows.into_iter().next().unwrap()),
        _ => TimeSeries::from_frames(&rows).map_err(|e| usage(flag, e))?,
    };
    if series.is_empty() {
        return Err(usage(flag, "empty series"));
    }
    if series.values().iter().any(|v| !v.is_finite()) {
        return Err(usage(flag, "values must be finite"));
    }
    Ok(series)
}

fn read_pair(pair: &PairArgs, seed: u64) -> CliResult<(TimeSeries, TimeSeries, VarianceMatrix)> {
    let (a, b) = match (&pair.x, &pair.y, &pair.dataset) {
        (Some(x), Some(y), None) => (read_series("--x", x)?, read_series("--y", y)?),
        (None, None, Some(d)) => {
            let ds = load_dataset(d, seed)?;
            let get = |flag: &str, k: usize| {
                ds.series
                    .get(k)
                    .cloned()
                    .ok_or_else(|| usage(flag, format!("index {k} out of range for {} series", ds.len())))
            };
            (get("--i", pair.i)?, get("--j", pair.j)?)
        }
        _ => return Err(usage("--x/--y/--dataset", "give either --x and --y, or --dataset")),
    };
    if a.dim() != b.dim() {
        return Err(usage("--y", format!("frame dimension {} differs from {}", b.dim(), a.dim())));
    }
    if !(pair.variance > 0.0) || !pair.variance.is_finite() {
        return Err(usage("--variance", "must be > 0"));
    }
    let var = VarianceMatrix::constant(a.len(), b.len(), pair.variance)?;
    Ok((a, b, var))
}

fn emit<T: Serialize>(common: &Common, value: &T) -> CliResult<()> {
    let text = to_canonical(value)?;
    match &common.out {
        Some(p) => std::fs::write(p, text).map_err(crate::Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_file(path: &FsPath, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(e.into()))
}

fn grid_csv(g: &Grid) -> String {
    let mut s = String::new();
    for r in 0..g.rows() {
        let row: Vec<String> = g.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn grid_rows(g: &Grid) -> Vec<Vec<f64>> {
    (0..g.rows()).map(|r| g.row(r).to_vec()).collect()
}

#[derive(Serialize)]
struct DistReport {
    distance: f64,
    penalty: f64,
    value: f64,
    beta: f64,
    gamma: f64,
    kind: &'static str,
    band: Option<Band>,
    tau: usize,
    tau_prime: usize,
}

fn dist(common: &Common, pair: &PairArgs, m: &MetricArgs, beta: f64, alignment: Option<&FsPath>) -> CliResult<()> {
    non_negative("--beta", beta)?;
    let cfg = UdtwConfig {
        gamma: gamma_flag(m.gamma)?,
        kind: m.kind,
        band: band_flag(m)?,
        ..UdtwConfig::default()
    };
    let (a, b, var) = read_pair(pair, common.seed)?;
    let r = cfg.eval(&a, &b, &var)?;
    if let Some(p) = alignment {
        write_file(p, &grid_csv(&r.alignment))?;
    }
    emit(
        common,
        &DistReport {
            distance: r.distance,
            penalty: r.penalty,
            value: r.distance + beta * r.penalty,
            beta,
            gamma: m.gamma,
            kind: m.kind.name(),
            band: cfg.band,
            tau: a.len(),
            tau_prime: b.len(),
        },
    )
}

#[derive(Serialize)]
struct AlignReport {
    alignment: Vec<Vec<f64>>,
    hard_path: Vec<(usize, usize)>,
    sdtw: f64,
    gamma: f64,
    kind: &'static str,
    band: Option<Band>,
}

fn align(common: &Common, pair: &PairArgs, m: &MetricArgs, csv: Option<&FsPath>) -> CliResult<()> {
    let gamma = gamma_flag(m.gamma)?;
    let band = band_flag(m)?;
    let (a, b, var) = read_pair(pair, common.seed)?;
    let (cost, _) = weighted_cost(&a, &b, &var, m.kind)?;
    let shape = PlanShape::new(a.len(), b.len())?.with_band(band)?;
    let (value, al) = soft_alignment(&cost, gamma, &shape)?;
    let (_, table) = sdtw_forward(&cost, Gamma::of(0.0), &shape)?;
    if let Some(p) = csv {
        write_file(p, &grid_csv(&al))?;
    }
    emit(
        common,
        &AlignReport {
            alignment: grid_rows(&al),
            hard_path: hard_path(&table).cells().to_vec(),
            sdtw: value,
            gamma: m.gamma,
            kind: m.kind.name(),
            band,
        },
    )
}

#[derive(Serialize)]
struct BarycenterReport {
    dataset: String,
    class: Option<usize>,
    n_series: usize,
    length: usize,
    iterations: usize,
    stop: crate::optim::StopReason,
    objective_trace: Vec<f64>,
    expectation_objective: f64,
    mu: Vec<f64>,
    sigma_mu: Vec<f64>,
    config: BarycenterConfig,
}

#[allow(clippy::too_many_arguments)]
fn barycenter(
    common: &Common,
    dataset: &str,
    class: Option<usize>,
    count: Option<usize>,
    length: Option<usize>,
    cfg: &BarycenterConfig,
    csv: Option<&FsPath>,
    trace_csv: Option<&FsPath>,
) -> CliResult<()> {
    let ds = load_dataset(dataset, common.seed)?;
    let mut chosen: Vec<TimeSeries> = match class {
        Some(c) if c >= ds.n_classes() => {
            return Err(usage("--class", format!("dataset has {} classes", ds.n_classes())));
        }
        Some(c) => ds.class_members(c).into_iter().cloned().collect(),
        None => ds.series.clone(),
    };
    if let Some(n) = count {
        if n == 0 {
            return Err(usage("--count", "must be >= 1"));
        }
        chosen.truncate(n);
    }
    let len = match length {
        Some(0) => return Err(usage("--length", "must be >= 1")),
        Some(l) => l,
        None => (chosen.iter().map(TimeSeries::len).sum::<usize>() as f64 / chosen.len() as f64).round() as usize,
    };
    let bary = frechet_mean(&chosen, len, cfg, None)?;
    if let Some(p) = csv {
        let mut s = String::from("frame,mu,sigma_mu\n");
        let dim = bary.mu.dim();
        for (k, sg) in bary.sigma_mu.iter().enumerate() {
            let f: Vec<String> = bary.mu.frame(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{k},{},{sg}", f.join(if dim > 1 { ";" } else { "" }));
        }
        write_file(p, &s)?;
    }
    if let Some(p) = trace_csv {
        let mut s = String::from("iteration,objective\n");
        for (k, v) in bary.objective_trace.iter().enumerate() {
            let _ = writeln!(s, "{k},{v}");
        }
        write_file(p, &s)?;
    }
    emit(
        common,
        &BarycenterReport {
            dataset: ds.name.clone(),
            class,
            n_series: chosen.len(),
            length: len,
            iterations: bary.iterations,
            stop: bary.stop,
            objective_trace: bary.objective_trace.clone(),
            expectation_objective: bary.expectation_objective,
            mu: bary.mu.values().to_vec(),
            sigma_mu: bary.sigma_mu.clone(),
            config: *cfg,
        },
    )
}

#[derive(Serialize)]
struct ForecastReport {
    dataset: String,
    n_train: usize,
    n_test: usize,
    loss: &'static str,
    config: ForecastConfig,
    loss_trace: Vec<f64>,
    metrics: crate::forecast::MetricTable,
}

fn forecast(
    common: &Common,
    dataset: &str,
    test: Option<&str>,
    cfg: &ForecastConfig,
    metrics: &[crate::forecast::Metric],
    eval: &EvalConfig,
    pred_csv: Option<&FsPath>,
) -> CliResult<()> {
    let ds = load_dataset(dataset, common.seed)?;
    let (train, test) = match test {
        Some(t) => (ds.clone(), load_dataset(t, common.seed.wrapping_add(1))?),
        None => {
            let (tr, _, te) = split(&ds, [0.5, 0.0, 0.5], common.seed, false)?;
            (tr, te)
        }
    };
    let fit = train_forecaster(&train.series, cfg)?;
    let len = train.series[0].len();
    let test_series: Vec<TimeSeries> = test
        .series
        .iter()
        .map(|s| if s.len() == len { Ok(s.clone()) } else { s.resample(len) })
        .collect::<crate::Result<_>>()?;
    let table = eval_forecaster(&fit.model, &test_series, metrics, &cfg.split, eval)?;
    if let Some(p) = pred_csv {
        let mut s = String::from("series,step,prediction,target\n");
        for (k, (pr, y)) in predictions(&fit.model, &test_series, &cfg.split)?.iter().enumerate() {
            for (t, (a, b)) in pr.values().iter().zip(y.values()).enumerate() {
                let _ = writeln!(s, "{k},{t},{a},{b}");
            }
        }
        write_file(p, &s)?;
    }
    emit(
        common,
        &ForecastReport {
            dataset: ds.name.clone(),
            n_train: train.len(),
            n_test: test.len(),
            loss: cfg.loss.kind.name(),
            config: cfg.clone(),
            loss_trace: fit.loss_trace,
            metrics: table,
        },
    )
}

#[derive(Serialize)]
struct CodeReport {
    dataset: String,
    anchors: usize,
    k_nearest: usize,
    codes: Vec<Vec<f64>>,
    labels: Vec<usize>,
    objective_trace: Vec<f64>,
    within_similarity: Option<f64>,
    between_similarity: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn code(
    common: &Common,
    dataset: &str,
    anchors: usize,
    k_nearest: usize,
    iters: usize,
    gamma: f64,
    gamma_prime: f64,
    lr: f64,
    inner_iters: usize,
) -> CliResult<()> {
    let ds = load_dataset(dataset, common.seed)?;
    if ds.len() < anchors {
        return Err(usage("--anchors", format!("dataset has only {} series", ds.len())));
    }
    let mut dict = Dictionary::init_from(&ds.series, anchors, k_nearest, common.seed)?;
    dict.gamma_prime = gamma_prime;
    dict.lr = lr;
    dict.inner_iters = inner_iters;
    dict.metric = UdtwConfig::with_gamma(gamma);
    let fit = fit_dictionary(&ds.series, dict, iters)?;
    let sims = cluster_similarity(&fit.codes, &ds.labels).ok();
    emit(
        common,
        &CodeReport {
            dataset: ds.name.clone(),
            anchors,
            k_nearest,
            codes: fit.codes,
            labels: ds.labels.clone(),
            objective_trace: fit.objective_trace,
            within_similarity: sims.map(|s| s.0),
            between_similarity: sims.map(|s| s.1),
        },
    )
}

#[derive(Serialize)]
struct BenchReport {
    sizes: Vec<usize>,
    gammas: Vec<f64>,
    reps: usize,
    ops: Vec<&'static str>,
    rows: usize,
}

const BENCH_OPS: [&str; 3] = ["forward", "forward+backward", "udtw"];

fn bench(common: &Common, sizes: &[usize], gammas: &[f64], reps: usize, csv: Option<&FsPath>) -> CliResult<()> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(common.seed);
    let mut table = String::from("tau,tau_prime,gamma,op,reps,mean_seconds,min_seconds\n");
    let mut rows = 0;
    for &n in sizes {
        let a = TimeSeries::univariate((0..n).map(|_| rng.sample(StandardNormal)).collect());
        let b = TimeSeries::univariate((0..n).map(|_| rng.sample(StandardNormal)).collect());
        let var = VarianceMatrix::ones(n, n);
        for &g in gammas {
            let cfg = UdtwConfig::with_gamma(g);
            let (cost, _) = weighted_cost(&a, &b, &var, cfg.kind)?;
            let shape = PlanShape::new(n, n)?;
            for op in BENCH_OPS {
                let mut times = Vec::with_capacity(reps);
                for _ in 0..reps {
                    let t0 = Instant::now();
                    match op {
                        "forward" => {
                            std::hint::black_box(sdtw_forward(&cost, cfg.gamma, &shape)?);
                        }
                        "forward+backward" => {
                            std::hint::black_box(soft_alignment(&cost, cfg.gamma, &shape)?);
                        }
                        _ => {
                            std::hint::black_box(cfg.eval(&a, &b, &var)?);
                        }
                    }
                    times.push(t0.elapsed().as_secs_f64());
                }
                let mean = times.iter().sum::<f64>() / reps as f64;
                let min = times.iter().copied().fold(f64::INFINITY, f64::min);
                let _ = writeln!(table, "{n},{n},{g},{op},{reps},{mean:e},{min:e}");
                rows += 1;
            }
        }
    }
    match csv {
        Some(p) => write_file(p, &table)?,
        None => eprint!("{table}"),
    }
    emit(
        common,
        &BenchReport {
            sizes: sizes.to_vec(),
            gammas: gammas.to_vec(),
            reps,
            ops: BENCH_OPS.to_vec(),
            rows,
        },
    )
}
