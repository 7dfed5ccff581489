//! Locality-constrained soft-assignment coding against a dictionary of
//! anchor sequences, anchor updates, and histogram-intersection similarity.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::TimeSeries;
use crate::numerics::{softmax, Gamma};
use crate::sigma::{SigmaModel, UnitSigma};
use crate::udtw::{surrogate_grad, PenaltyWeights, UdtwConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub anchors: Vec<TimeSeries>,
    /// Number of nearest anchors that receive weight.
    pub k_nearest: usize,
    /// Coding temperature.
    pub gamma_prime: f64,
    pub lr: f64,
    pub inner_iters: usize,
    /// Alignment settings for anchor comparisons.
    pub metric: UdtwConfig,
}

impl Dictionary {
    pub fn new(anchors: Vec<TimeSeries>, k_nearest: usize) -> Result<Self> {
        let d = Self {
            anchors,
            k_nearest,
            gamma_prime: 0.7,
            lr: 1e-3,
            inner_iters: 10,
            metric: UdtwConfig::default(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.anchors.first() else {
            return Err(domain("dictionary needs at least one anchor"));
        };
        if self.anchors.iter().any(|a| a.len() != first.len() || a.dim() != first.dim()) {
            return Err(domain("dictionary anchors must share length and dimension"));
        }
        if first.is_empty() {
            return Err(domain("dictionary anchors must be non-empty"));
        }
        if self.k_nearest == 0 || self.k_nearest > self.anchors.len() {
            return Err(domain(format!(
                "k_nearest must be in 1..={}, got {}",
                self.anchors.len(),
                self.k_nearest
            )));
        }
        if !(self.gamma_prime > 0.0) {
            return Err(domain("gamma_prime must be > 0"));
        }
        if !(self.lr >= 0.0) {
            return Err(domain("dictionary learning rate must be >= 0"));
        }
        if self.metric.gamma.is_hard() {
            return Err(domain("dictionary updates need gamma > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchor_len(&self) -> usize {
        self.anchors[0].len()
    }

    /// Seeded anchors: the first is a random sample, each next one is drawn
    /// with probability proportional to its squared distance from the chosen
    /// set. All are resampled to the rounded mean length.
    pub fn init_from(data: &[TimeSeries], k: usize, k_nearest: usize, seed: u64) -> Result<Self> {
        if data.len() < k || k == 0 {
            return Err(domain(format!("need at least {k} samples to seed {k} anchors")));
        }
        let len = ((data.iter().map(TimeSeries::len).sum::<usize>() as f64) / data.len() as f64).round() as usize;
        let rs: Vec<TimeSeries> = data.iter().map(|s| s.resample(len.max(1))).collect::<Result<_>>()?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut chosen = vec![rng.random_range(0..rs.len())];
        let sq = |a: &TimeSeries, b: &TimeSeries| -> f64 {
            a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        while chosen.len() < k {
            let w: Vec<f64> = rs
                .iter()
                .map(|s| chosen.iter().map(|&c| sq(s, &rs[c])).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = w.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random_range(0.0..total);
                let mut pick = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                pick
            } else {
                (0..rs.len()).find(|i| !chosen.contains(i)).unwrap()
            };
            chosen.push(next);
        }
        Self::new(chosen.into_iter().map(|i| rs[i].clone()).collect(), k_nearest)
    }
}

fn anchor_distances(x: &TimeSeries, dict: &Dictionary, sigma: &dyn SigmaModel) -> Result<Vec<f64>> {
    dict.anchors
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let var = sigma.variance(x, a)?;
            let d = dict.metric.eval(x, a, &var)?.distance;
            if !d.is_finite() {
                return Err(Error::Numeric(format!("non-finite distance to anchor {k}")));
            }
            Ok(d)
        })
        .collect()
}

/// Code with unit variances; see [`lcsa_code_with`].
pub fn lcsa_code(x: &TimeSeries, dict: &Dictionary) -> Result<Vec<f64>> {
    lcsa_code_with(x, dict, &UnitSigma)
}

/// `softmax(-d/γ')` over the `K'` nearest anchors (ties by index), zero
/// elsewhere. Distances are uDTW expectations under `sigma`.
pub fn lcsa_code_with(x: &TimeSeries, dict: &Dictionary, sigma: &dyn SigmaModel) -> Result<Vec<f64>> {
    dict.validate()?;
    let d = anchor_distances(x, dict, sigma)?;
    Ok(code_from_distances(&d, dict.k_nearest, dict.gamma_prime))
}

pub fn code_from_distances(d: &[f64], k_nearest: usize, gamma_prime: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let near = &order[..k_nearest];
    let w = softmax(&near.iter().map(|&k| -d[k] / gamma_prime).collect::<Vec<_>>());
    let mut code = vec![0.0; d.len()];
    for (&k, wk) in near.iter().zip(w) {
        code[k] = wk;
    }
    code
}

fn blend(dict: &Dictionary, code: &[f64]) -> TimeSeries {
    let mut v = vec![0.0; dict.anchors[0].values().len()];
    for (a, w) in dict.anchors.iter().zip(code) {
        if *w != 0.0 {
            for (acc, x) in v.iter_mut().zip(a.values()) {
                *acc += w * x;
            }
        }
    }
    TimeSeries::new(dict.anchors[0].dim(), v).expect("anchor layout")
}

/// Summed soft-DTW reconstruction error of `batch` against its blends.
pub fn reconstruction_objective(batch: &[TimeSeries], codes: &[Vec<f64>], dict: &Dictionary) -> Result<f64> {
    batch
        .par_iter()
        .zip(codes)
        .map(|(x, c)| {
            let b = blend(dict, c);
            let var = UnitSigma.variance(x, &b)?;
            Ok(surrogate_grad(x, &b, &var, &dict.metric, PenaltyWeights::default())?.value)
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.iter().sum())
}

/// `inner_iters` gradient steps on the anchors with the batch codes held
/// fixed: `M_k -= lr Σₙ αₙₖ ∇_B sdtw_γ(xₙ, Bₙ)` with `Bₙ = Σ_l αₙₗ M_l`.
pub fn dict_update(batch: &[TimeSeries], dict: &Dictionary) -> Result<Dictionary> {
    let codes: Vec<Vec<f64>> = batch.par_iter().map(|x| lcsa_code(x, dict)).collect::<Result<_>>()?;
    dict_update_with_codes(batch, &codes, dict)
}

pub fn dict_update_with_codes(batch: &[TimeSeries], codes: &[Vec<f64>], dict: &Dictionary) -> Result<Dictionary> {
    dict.validate()?;
    if batch.is_empty() {
        return Err(domain("dictionary update needs a non-empty batch"));
    }
    let mut out = dict.clone();
    if dict.lr == 0.0 {
        return Ok(out);
    }
    for _ in 0..dict.inner_iters {
        let grads: Vec<Vec<f64>> = batch
            .par_iter()
            .zip(codes)
            .map(|(x, c)| {
                let b = blend(&out, c);
                let var = UnitSigma.variance(x, &b)?;
                Ok(surrogate_grad(x, &b, &var, &out.metric, PenaltyWeights::default())?.d_psi_prime)
            })
            .collect::<Result<_>>()?;
        let mut step = vec![vec![0.0; out.anchors[0].values().len()]; out.len()];
        for (g, c) in grads.iter().zip(codes) {
            for (k, w) in c.iter().enumerate() {
                if *w != 0.0 {
                    for (s, gi) in step[k].iter_mut().zip(g) {
                        *s += w * gi;
                    }
                }
            }
        }
        for (k, (a, s)) in out.anchors.iter_mut().zip(&step).enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for anchor {k}")));
            }
            for (v, g) in a.values_mut().iter_mut().zip(s) {
                *v -= dict.lr * g;
            }
        }
    }
    Ok(out)
}

/// Histogram intersection `Σ min(aₖ, bₖ)`.
pub fn code_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "code length",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(domain("codes must be finite and non-negative"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x.min(*y)).sum())
}

/// Mean code similarity over same-label pairs and over different-label pairs.
pub fn cluster_similarity(codes: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
    if codes.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: codes.len(),
            got: labels.len(),
        });
    }
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let s = code_similarity(&codes[i], &codes[j])?;
            if labels[i] == labels[j] {
                within += s;
                nw += 1;
            } else {
                between += s;
                nb += 1;
            }
        }
    }
    if nw == 0 || nb == 0 {
        return Err(domain("need at least two clusters with a repeated label"));
    }
    Ok((within / nw as f64, between / nb as f64))
}

/// Outcome of [`fit_dictionary`].
#[derive(Debug, Clone)]
pub struct DictionaryFit {
    pub dictionary: Dictionary,
    pub codes: Vec<Vec<f64>>,
    /// Reconstruction objective after each alternation.
    pub objective_trace: Vec<f64>,
}

/// Alternates coding and anchor updates `outer_iters` times.
pub fn fit_dictionary(data: &[TimeSeries], init: Dictionary, outer_iters: usize) -> Result<DictionaryFit> {
    init.validate()?;
    let mut dict = init;
    let anchor_len = dict.anchor_len();
    let batch: Vec<TimeSeries> = data.iter().map(|s| s.resample(anchor_len)).collect::<Result<_>>()?;
    let mut trace = Vec::with_capacity(outer_iters);
    for _ in 0..outer_iters {
        let codes: Vec<Vec<f64>> = batch.par_iter().map(|x| lcsa_code(x, &dict)).collect::<Result<_>>()?;
        dict = dict_update_with_codes(&batch, &codes, &dict)?;
        trace.push(reconstruction_objective(&batch, &codes, &dict)?);
    }
    let codes = batch.par_iter().map(|x| lcsa_code(x, &dict)).collect::<Result<_>>()?;
    Ok(DictionaryFit {
        dictionary: dict,
        codes,
        objective_trace: trace,
    })
}

/// Defaults for the coding metric.
pub fn coding_metric(gamma: f64) -> Result<UdtwConfig> {
    Ok(UdtwConfig {
        gamma: Gamma::new(gamma)?,
        ..UdtwConfig::default()
    })
}
