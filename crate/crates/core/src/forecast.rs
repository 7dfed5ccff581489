//! Multistep-ahead forecasting with a two-layer tanh MLP trained under a
//! Euclidean, soft-DTW or uDTW loss, and a multi-metric evaluator.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{dtw_hard, PlanShape};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::Gamma;
use crate::sigma::{SigmaCombine, SigmaModel, SigmaNet, SigmaNetParams};
use crate::udtw::{surrogate_grad, PenaltyWeights, UdtwConfig, VarianceMatrix};

/// Loss abort threshold.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// How each series is cut into input and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub input_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { input_fraction: 0.6 }
    }
}

impl SplitSpec {
    /// `(input length, horizon)` for a series of length `len`.
    pub fn lengths(&self, len: usize) -> Result<(usize, usize)> {
        if !(self.input_fraction > 0.0 && self.input_fraction < 1.0) {
            return Err(domain(format!(
                "input fraction must be in (0, 1), got {}",
                self.input_fraction
            )));
        }
        let t = (self.input_fraction * len as f64).round() as usize;
        if t == 0 || t >= len {
            return Err(domain(format!("series of length {len} leaves an empty input or horizon")));
        }
        Ok((t, len - t))
    }

    /// Splits a univariate series into `(input values, target)`.
    pub fn cut(&self, s: &TimeSeries) -> Result<(Vec<f64>, TimeSeries)> {
        if s.dim() != 1 {
            return Err(domain("forecasting expects univariate series"));
        }
        let (t, _) = self.lengths(s.len())?;
        let v = s.values();
        Ok((v[..t].to_vec(), TimeSeries::univariate(v[t..].to_vec())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Uniform in `±1/√fan_in`.
    #[default]
    Uniform,
    /// Standard normal weights, zero biases.
    Normal,
}

impl std::str::FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            _ => Err(domain(format!("unknown init `{s}` (expected uniform|normal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Euclid,
    Sdtw,
    Udtw,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Euclid => "euclid",
            Self::Sdtw => "sdtw",
            Self::Udtw => "udtw",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclid" | "euclidean" => Ok(Self::Euclid),
            "sdtw" => Ok(Self::Sdtw),
            "udtw" => Ok(Self::Udtw),
            _ => Err(domain(format!("unknown loss `{s}` (expected euclid|sdtw|udtw)"))),
        }
    }
}

/// `t -> hidden -> horizon` with a tanh in between, plus an optional
/// SigmaNet head that scores prediction/target frame pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub input_len: usize,
    pub hidden: usize,
    pub horizon: usize,
    /// `hidden x input_len`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `horizon x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub sigma_head: Option<SigmaNet>,
}

impl ForecastModel {
    pub fn new(input_len: usize, hidden: usize, horizon: usize, init: Init, seed: u64) -> Result<Self> {
        if input_len == 0 || hidden == 0 || horizon == 0 {
            return Err(domain("forecaster sizes must be >= 1"));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let b = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| match init {
                    Init::Uniform => rng.random_range(-b..=b),
                    Init::Normal => rng.sample(StandardNormal),
                })
                .collect()
        };
        let w1 = draw(hidden * input_len, input_len);
        let b1 = match init {
            Init::Uniform => draw(hidden, input_len),
            Init::Normal => vec![0.0; hidden],
        };
        let w2 = draw(horizon * hidden, hidden);
        let b2 = match init {
            Init::Uniform => draw(horizon, hidden),
            Init::Normal => vec![0.0; horizon],
        };
        Ok(Self {
            input_len,
            hidden,
            horizon,
            w1,
            b1,
            w2,
            b2,
            sigma_head: None,
        })
    }

    pub fn with_sigma_head(mut self, head: SigmaNet) -> Self {
        self.sigma_head = Some(head);
        self
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.sigma_head.as_ref().map_or(0, |h| h.num_params())
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.extend(&self.b2);
        if let Some(h) = &self.sigma_head {
            p.extend(h.params.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = v.len();
            v.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        if let Some(h) = &mut self.sigma_head {
            h.params.set_params(&p[off..]);
        }
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_len..(j + 1) * self.input_len];
                (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[j]).tanh()
            })
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        (0..self.horizon)
            .map(|i| {
                let row = &self.w2[i * self.hidden..(i + 1) * self.hidden];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.b2[i]
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<TimeSeries> {
        if x.len() != self.input_len {
            return Err(Error::Dimension {
                what: "forecaster input length",
                expected: self.input_len,
                got: x.len(),
            });
        }
        Ok(TimeSeries::univariate(self.output(&self.hidden_act(x))))
    }

    /// Loss on one sample and its gradient over [`Self::params`].
    pub fn loss_grad(&self, x: &[f64], target: &TimeSeries, loss: &LossConfig) -> Result<(f64, Vec<f64>)> {
        let h = self.hidden_act(x);
        let y = TimeSeries::univariate(self.output(&h));
        if target.len() != self.horizon {
            return Err(Error::Dimension {
                what: "forecast horizon",
                expected: self.horizon,
                got: target.len(),
            });
        }
        let mut d_head = Vec::new();
        let (value, dy) = match loss.kind {
            LossKind::Euclid => {
                let d: Vec<f64> = y.values().iter().zip(target.values()).map(|(a, b)| a - b).collect();
                (d.iter().map(|v| v * v).sum(), d.iter().map(|v| 2.0 * v).collect())
            }
            LossKind::Sdtw => {
                let g = surrogate_grad(&y, target, &VarianceMatrix::ones(y.len(), target.len()), &loss.metric, PenaltyWeights::default())?;
                (g.value, g.d_psi)
            }
            LossKind::Udtw => {
                let var = match &self.sigma_head {
                    Some(hd) => hd.variance(&y, target)?,
                    None => VarianceMatrix::ones(y.len(), target.len()),
                };
                let w = PenaltyWeights {
                    beta: loss.beta,
                    lambda: 0.0,
                };
                let g = surrogate_grad(&y, target, &var, &loss.metric, w)?;
                let mut dy = g.d_psi;
                if let Some(hd) = &self.sigma_head {
                    let (dp, dpsi, _) = hd.backward(&y, target, &g.d_sigma)?;
                    for (a, b) in dy.iter_mut().zip(&dpsi) {
                        *a += b;
                    }
                    d_head = dp;
                }
                (g.value, dy)
            }
        };
        let (ni, nh) = (self.input_len, self.hidden);
        let mut grad = vec![0.0; self.num_params()];
        let (gw1, rest) = grad.split_at_mut(nh * ni);
        let (gb1, rest) = rest.split_at_mut(nh);
        let (gw2, rest) = rest.split_at_mut(self.horizon * nh);
        let (gb2, ghead) = rest.split_at_mut(self.horizon);
        let mut dh = vec![0.0; nh];
        for (i, g) in dy.iter().enumerate() {
            gb2[i] = *g;
            for j in 0..nh {
                gw2[i * nh + j] = g * h[j];
                dh[j] += g * self.w2[i * nh + j];
            }
        }
        for j in 0..nh {
            let dz = dh[j] * (1.0 - h[j] * h[j]);
            gb1[j] = dz;
            for k in 0..ni {
                gw1[j * ni + k] = dz * x[k];
            }
        }
        if !d_head.is_empty() {
            ghead.copy_from_slice(&d_head);
        }
        Ok((value, grad))
    }
}

/// Training loss and its alignment settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub metric: UdtwConfig,
    pub beta: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind, gamma: f64, beta: f64) -> Result<Self> {
        let gamma = Gamma::new(gamma)?;
        if kind != LossKind::Euclid && gamma.is_hard() {
            return Err(domain("alignment losses need gamma > 0"));
        }
        if !(beta >= 0.0) {
            return Err(domain(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self {
            kind,
            metric: UdtwConfig {
                gamma,
                ..UdtwConfig::default()
            },
            beta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub loss: LossConfig,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: Init,
    /// Train a SigmaNet head for the uDTW loss.
    pub sigma_head: bool,
    pub split: SplitSpec,
}

impl ForecastConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self {
            loss,
            hidden: 30,
            lr: 1e-3,
            weight_decay: 1e-6,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            init: Init::Uniform,
            sigma_head: loss.kind == LossKind::Udtw,
            split: SplitSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(domain("hidden size and batch size must be >= 1"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(domain("learning rate must be > 0 and weight decay >= 0"));
        }
        Ok(())
    }
}

/// Trained model and its loss trace. `loss_trace[0]` is the mean training
/// loss before any update, then one entry per epoch.
#[derive(Debug, Clone)]
pub struct TrainedForecaster {
    pub model: ForecastModel,
    pub loss_trace: Vec<f64>,
}

fn prepare(series: &[TimeSeries], split: &SplitSpec) -> Result<Vec<(Vec<f64>, TimeSeries)>> {
    let Some(first) = series.first() else {
        return Err(domain("no series to forecast"));
    };
    let len = first.len();
    series
        .iter()
        .map(|s| if s.len() == len { split.cut(s) } else { split.cut(&s.resample(len)?) })
        .collect()
}

fn mean_loss(model: &ForecastModel, samples: &[(Vec<f64>, TimeSeries)], loss: &LossConfig) -> Result<f64> {
    let v: Vec<f64> = samples
        .par_iter()
        .map(|(x, y)| model.loss_grad(x, y, loss).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Summed loss and gradient over `samples`.
pub fn batch_loss_grad(
    model: &ForecastModel,
    samples: &[(Vec<f64>, TimeSeries)],
    loss: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_iter()
        .map(|(x, y)| model.loss_grad(x, y, loss))
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; model.num_params()];
    let mut v = 0.0;
    for (pv, pg) in parts {
        v += pv;
        for (a, b) in g.iter_mut().zip(&pg) {
            *a += b;
        }
    }
    Ok((v, g))
}

/// Minibatch SGD with weight decay; batch gradients are summed.
pub fn train_forecaster(train: &[TimeSeries], cfg: &ForecastConfig) -> Result<TrainedForecaster> {
    cfg.validate()?;
    let samples = prepare(train, &cfg.split)?;
    let (t, h) = (samples[0].0.len(), samples[0].1.len());
    let mut model = ForecastModel::new(t, cfg.hidden, h, cfg.init, cfg.seed)?;
    if cfg.sigma_head && cfg.loss.kind == LossKind::Udtw {
        model = model.with_sigma_head(SigmaNet::new(SigmaNetParams::zeros(1), SigmaCombine::AddSq)?);
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = vec![mean_loss(&model, &samples, &cfg.loss)?];
    let mut params = model.params();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Vec<f64>, TimeSeries)> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (v, g) = batch_loss_grad(&model, &batch, &cfg.loss)?;
            if !v.is_finite() || v / batch.len() as f64 > DIVERGENCE_LIMIT || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("forecaster diverged at epoch {epoch}")));
            }
            total += v;
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= cfg.lr * (gi + cfg.weight_decay * *p);
            }
            model.set_params(&params);
        }
        trace.push(total / samples.len() as f64);
    }
    Ok(TrainedForecaster {
        model,
        loss_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Squared error summed over the horizon.
    Mse,
    /// Squared error averaged over the horizon.
    MsePerStep,
    Dtw,
    /// Soft-DTW expectation distance with unit variances.
    Sdtw,
    /// uDTW distance at `β = 0` under the evaluation variances.
    Udtw,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Self::Mse, Self::MsePerStep, Self::Dtw, Self::Sdtw, Self::Udtw];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::MsePerStep => "mse-per-step",
            Self::Dtw => "dtw",
            Self::Sdtw => "sdtw",
            Self::Udtw => "udtw",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| domain(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over the test set.
    pub std: f64,
}

pub type MetricTable = BTreeMap<String, MetricSummary>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub gamma: f64,
    /// Score uDTW with the model's SigmaNet head instead of unit variances.
    pub model_sigma: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            model_sigma: false,
        }
    }
}

/// Per-sample value of `metric` for a prediction.
pub fn metric_value(
    metric: Metric,
    pred: &TimeSeries,
    target: &TimeSeries,
    cfg: &EvalConfig,
    head: Option<&SigmaNet>,
) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            what: "prediction length",
            expected: target.len(),
            got: pred.len(),
        });
    }
    let sq = |a: &TimeSeries, b: &TimeSeries| -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let metric_cfg = UdtwConfig::with_gamma(cfg.gamma);
    Ok(match metric {
        Metric::Mse => sq(pred, target),
        Metric::MsePerStep => sq(pred, target) / pred.len() as f64,
        Metric::Dtw => {
            let g = Grid::from_fn(pred.len(), target.len(), |m, n| (pred.values()[m] - target.values()[n]).powi(2));
            dtw_hard(&g, &PlanShape::new(pred.len(), target.len())?)?.0
        }
        Metric::Sdtw => {
            Gamma::new(cfg.gamma)?;
            metric_cfg.eval(pred, target, &VarianceMatrix::ones(pred.len(), target.len()))?.distance
        }
        Metric::Udtw => {
            let var = match (cfg.model_sigma, head) {
                (true, Some(h)) => h.variance(pred, target)?,
                _ => VarianceMatrix::ones(pred.len(), target.len()),
            };
            metric_cfg.eval(pred, target, &var)?.distance
        }
    })
}

/// Mean and standard deviation of each metric over `test`.
pub fn eval_forecaster(
    model: &ForecastModel,
    test: &[TimeSeries],
    metrics: &[Metric],
    split: &SplitSpec,
    cfg: &EvalConfig,
) -> Result<MetricTable> {
    let samples = prepare(test, split)?;
    if samples[0].0.len() != model.input_len {
        return Err(Error::Dimension {
            what: "test input length",
            expected: model.input_len,
            got: samples[0].0.len(),
        });
    }
    let preds: Vec<TimeSeries> = samples.par_iter().map(|(x, _)| model.predict(x)).collect::<Result<_>>()?;
    let mut table = MetricTable::new();
    for &m in metrics {
        let mut vals: Vec<f64> = preds
            .par_iter()
            .zip(&samples)
            .map(|(p, (_, y))| metric_value(m, p, y, cfg, model.sigma_head.as_ref()))
            .collect::<Result<_>>()?;
        // order-independent summation
        vals.sort_by(f64::total_cmp);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        table.insert(m.name().to_string(), MetricSummary { mean, std: var.sqrt() });
    }
    Ok(table)
}

/// Predictions of `model` on each test series, for plotting.
pub fn predictions(model: &ForecastModel, test: &[TimeSeries], split: &SplitSpec) -> Result<Vec<(TimeSeries, TimeSeries)>> {
    prepare(test, split)?
        .into_iter()
        .map(|(x, y)| Ok((model.predict(&x)?, y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, max_rel_error};

    #[test]
    fn split_lengths() {
        assert_eq!(SplitSpec::default().lengths(10).unwrap(), (6, 4));
        assert!(SplitSpec::default().lengths(1).is_err());
    }

    #[test]
    fn constant_series_are_learned() {
        let train: Vec<TimeSeries> = (0..8).map(|_| TimeSeries::univariate(vec![0.5; 10])).collect();
        let mut cfg = ForecastConfig::new(LossConfig::new(LossKind::Euclid, 1.0, 0.0).unwrap());
        cfg.epochs = 400;
        cfg.lr = 0.01;
        let fit = train_forecaster(&train, &cfg).unwrap();
        let t = eval_forecaster(&fit.model, &train, &[Metric::MsePerStep], &cfg.split, &EvalConfig::default()).unwrap();
        assert!(t["mse-per-step"].mean < 1e-4, "{t:?}");
    }

    #[test]
    fn udtw_without_head_matches_sdtw() {
        let train: Vec<TimeSeries> = (0..6)
            .map(|i| TimeSeries::univariate((0..12).map(|k| ((k + i) as f64 * 0.7).sin()).collect()))
            .collect();
        let mut a = ForecastConfig::new(LossConfig::new(LossKind::Sdtw, 0.5, 0.0).unwrap());
        let mut b = ForecastConfig::new(LossConfig::new(LossKind::Udtw, 0.5, 0.0).unwrap());
        a.epochs = 5;
        b.epochs = 5;
        b.sigma_head = false;
        let fa = train_forecaster(&train, &a).unwrap();
        let fb = train_forecaster(&train, &b).unwrap();
        assert_eq!(fa.loss_trace, fb.loss_trace);
        assert_eq!(fa.model.params(), fb.model.params());
    }

    #[test]
    fn metric_examples() {
        let y = TimeSeries::univariate(vec![1.0, 2.0, 3.0, 4.0]);
        let off = TimeSeries::univariate(vec![1.5, 2.5, 3.5, 4.5]);
        let cfg = EvalConfig::default();
        assert!((metric_value(Metric::MsePerStep, &off, &y, &cfg, None).unwrap() - 0.25).abs() < 1e-15);
        assert!((metric_value(Metric::Mse, &off, &y, &cfg, None).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(metric_value(Metric::Dtw, &y, &y, &cfg, None).unwrap(), 0.0);
        let c = TimeSeries::univariate(vec![2.0; 4]);
        for m in Metric::ALL {
            assert_eq!(metric_value(m, &c, &c, &cfg, None).unwrap(), 0.0);
        }
        assert!(metric_value(Metric::Mse, &y, &TimeSeries::univariate(vec![0.0; 3]), &cfg, None).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x: Vec<f64> = (0..6).map(|k| (k as f64 * 0.9).sin()).collect();
        let y = TimeSeries::univariate(vec![0.3, -0.2, 0.8, 0.1]);
        for kind in [LossKind::Euclid, LossKind::Sdtw, LossKind::Udtw] {
            let loss = LossConfig::new(kind, 0.5, 0.1).unwrap();
            let mut m = ForecastModel::new(6, 5, 4, Init::Uniform, 3).unwrap();
            if kind == LossKind::Udtw {
                m = m.with_sigma_head(SigmaNet::new(SigmaNetParams::random(1, 4), SigmaCombine::AddSq).unwrap());
            }
            let (_, g) = m.loss_grad(&x, &y, &loss).unwrap();
            let p0 = m.params();
            let fd = finite_diff_gradient(
                |p| {
                    let mut mm = m.clone();
                    mm.set_params(p);
                    mm.loss_grad(&x, &y, &loss).unwrap().0
                },
                &p0,
                1e-6,
            )
            .unwrap();
            assert!(max_rel_error(&g, &fd) < 1e-4, "{kind:?}: {}", max_rel_error(&g, &fd));
        }
    }

    #[test]
    fn metric_table_ignores_order() {
        let series: Vec<TimeSeries> = (0..5)
            .map(|i| TimeSeries::univariate((0..10).map(|k| (k * i) as f64 * 0.1).collect()))
            .collect();
        let m = ForecastModel::new(6, 4, 4, Init::Uniform, 1).unwrap();
        let split = SplitSpec::default();
        let a = eval_forecaster(&m, &series, &Metric::ALL, &split, &EvalConfig::default()).unwrap();
        let rev: Vec<TimeSeries> = series.into_iter().rev().collect();
        let b = eval_forecaster(&m, &rev, &Metric::ALL, &split, &EvalConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
