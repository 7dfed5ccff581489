//! Nearest-centroid and soft-vote k-NN classifiers over the DTW family.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{dtw_hard, Band, PlanShape};
use crate::barycenter::{frechet_mean, BarySigma, Barycenter, BarycenterConfig};
use crate::data::{split_indices, Dataset};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, TimeSeries};
use crate::numerics::{softmax, Gamma};
use crate::sigma::{sigmanet_forward, SigmaNetParams};
use crate::softdtw::sdtw_forward;
use crate::udtw::{weighted_cost, udtw_eval, BaseDistanceKind, UdtwConfig, VarianceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Euclidean,
    Dtw,
    Sdtw,
    Udtw,
}

impl Distance {
    pub const ALL: [Distance; 4] = [Self::Euclidean, Self::Dtw, Self::Sdtw, Self::Udtw];

    pub fn name(self) -> &'static str {
        match self {
            Self::Euclidean => "euclidean",
            Self::Dtw => "dtw",
            Self::Sdtw => "sdtw",
            Self::Udtw => "udtw",
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s || (s == "eucl" && *d == Self::Euclidean))
            .ok_or_else(|| domain(format!("unknown distance '{s}'")))
    }
}

fn sq_grid(a: &TimeSeries, b: &TimeSeries) -> Grid {
    Grid::from_fn(a.len(), b.len(), |m, n| {
        a.frame(m).iter().zip(b.frame(n)).map(|(x, y)| (x - y) * (x - y)).sum()
    })
}

/// Squared Euclidean distance; `b` is resampled to `a`'s length if needed.
pub fn euclidean_sq(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    let b = if b.len() == a.len() { b.clone() } else { b.resample(a.len())? };
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Shared distance settings for both classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    pub distance: Distance,
    pub gamma: Gamma,
    pub beta: f64,
    pub kind: BaseDistanceKind,
    pub band: Option<Band>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            distance: Distance::Udtw,
            gamma: Gamma::of(1.0),
            beta: 0.0,
            kind: BaseDistanceKind::Normal,
            band: None,
        }
    }
}

impl DistanceConfig {
    fn udtw(&self) -> UdtwConfig {
        UdtwConfig {
            gamma: self.gamma,
            kind: self.kind,
            band: self.band,
            ..UdtwConfig::default()
        }
    }

    /// Dissimilarity of a pair given a variance grid (used by `Udtw` only).
    ///
    /// `Sdtw` is the expectation form on the unweighted grid and `Udtw` adds
    /// `β` times the penalty.
    pub fn pair(&self, a: &TimeSeries, b: &TimeSeries, var: Option<&VarianceMatrix>) -> Result<f64> {
        match self.distance {
            Distance::Euclidean => euclidean_sq(a, b),
            Distance::Dtw => {
                let shape = PlanShape::new(a.len(), b.len())?.with_band(self.band)?;
                Ok(dtw_hard(&sq_grid(a, b), &shape)?.0)
            }
            Distance::Sdtw | Distance::Udtw => {
                let ones;
                let var = match (self.distance, var) {
                    (Distance::Udtw, Some(v)) => v,
                    _ => {
                        ones = VarianceMatrix::ones(a.len(), b.len());
                        &ones
                    }
                };
                let r = self.udtw().eval(a, b, var)?;
                Ok(if self.distance == Distance::Udtw {
                    r.distance + self.beta * r.penalty
                } else {
                    r.distance
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidConfig {
    pub metric: DistanceConfig,
    /// Penalty pulling the centroid variances toward one during fitting.
    pub lambda: f64,
    pub max_iters: usize,
    /// Query-side `σ` head; `None` uses `σ = 1`.
    pub query_sigma: Option<SigmaNetParams>,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        Self {
            metric: DistanceConfig::default(),
            lambda: 0.0,
            max_iters: 100,
            query_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub config: CentroidConfig,
    pub target_len: usize,
    /// One per class id; `None` for classes absent from training.
    pub centroids: Vec<Option<Barycenter>>,
}

/// Per-class means of length `round(mean training length)`.
///
/// Euclidean centroids are arithmetic means of resampled members; `Dtw` and
/// `Sdtw` fit soft-DTW barycenters with unit variances; `Udtw` fits `(μ, σ_μ)`.
pub fn fit_centroids(train: &Dataset, cfg: &CentroidConfig) -> Result<CentroidModel> {
    if train.is_empty() {
        return Err(domain("cannot fit centroids on an empty training set"));
    }
    let target_len = train.mean_len().max(1);
    let counts = train.class_counts();
    if counts.iter().all(|c| *c == 0) {
        return Err(domain("training set has no labelled samples"));
    }
    let bcfg = BarycenterConfig {
        beta: cfg.metric.beta,
        lambda: cfg.lambda,
        gamma: cfg.metric.gamma,
        kind: cfg.metric.kind,
        band: cfg.metric.band,
        max_iters: cfg.max_iters,
        // without a penalty the variance profile only grows, so it is fitted
        // only when beta or lambda is active
        sigma: if cfg.metric.distance == Distance::Udtw && (cfg.metric.beta > 0.0 || cfg.lambda > 0.0) {
            BarySigma::AddSq
        } else {
            BarySigma::Unit
        },
        ..BarycenterConfig::default()
    };
    let centroids = (0..train.n_classes())
        .map(|c| {
            let members: Vec<TimeSeries> = train.class_members(c).into_iter().cloned().collect();
            if members.is_empty() {
                return Ok(None);
            }
            let b = match cfg.metric.distance {
                Distance::Euclidean => {
                    let rs: Vec<TimeSeries> = members
                        .iter()
                        .map(|s| s.resample(target_len))
                        .collect::<Result<_>>()?;
                    let mut mean = vec![0.0; rs[0].values().len()];
                    for s in &rs {
                        for (m, v) in mean.iter_mut().zip(s.values()) {
                            *m += v;
                        }
                    }
                    for m in &mut mean {
                        *m /= rs.len() as f64;
                    }
                    Barycenter::init(TimeSeries::new(rs[0].dim(), mean)?)
                }
                _ => frechet_mean(&members, target_len, &bcfg, None)?,
            };
            Ok(Some(b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CentroidModel {
        config: cfg.clone(),
        target_len,
        centroids,
    })
}

impl CentroidModel {
    /// Distance from `x` to every fitted centroid (`None` for empty classes).
    pub fn scores(&self, x: &TimeSeries) -> Result<Vec<Option<f64>>> {
        if x.is_empty() {
            return Err(domain("query series is empty"));
        }
        let q_sigma = match &self.config.query_sigma {
            Some(p) => sigmanet_forward(x, p)?,
            None => vec![1.0; x.len()],
        };
        self.centroids
            .iter()
            .map(|c| {
                c.as_ref()
                    .map(|b| {
                        let var = VarianceMatrix::new(Grid::from_fn(x.len(), b.mu.len(), |m, n| {
                            q_sigma[m] * q_sigma[m] + b.sigma_mu[n] * b.sigma_mu[n]
                        }))?;
                        self.config.metric.pair(x, &b.mu, Some(&var))
                    })
                    .transpose()
            })
            .collect()
    }
}

/// Label of the nearest centroid; ties go to the smallest class id.
pub fn predict_centroid(model: &CentroidModel, x: &TimeSeries) -> Result<usize> {
    let scores = model.scores(x)?;
    let mut best: Option<(usize, f64)> = None;
    for (c, s) in scores.iter().enumerate() {
        if let Some(s) = s {
            if !s.is_finite() {
                return Err(Error::Numeric(format!("non-finite distance to class {c}")));
            }
            if best.is_none_or(|(_, b)| *s < b) {
                best = Some((c, *s));
            }
        }
    }
    Ok(best.expect("model has at least one centroid").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Vote temperature.
    pub gamma_pp: f64,
    pub metric: DistanceConfig,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 1,
            gamma_pp: 6.0,
            metric: DistanceConfig::default(),
        }
    }
}

/// Soft-vote k-NN.
///
/// The `k` nearest training series (ties by index) vote with weights
/// `softmax(-d/γ'')`; returns the winning class (ties to the smallest id)
/// and the per-class vote totals. `Udtw` compares on `Σ ≡ 2`, i.e. unit
/// `σ` on both sides combined by squares.
pub fn predict_knn(train: &Dataset, x: &TimeSeries, cfg: &KnnConfig) -> Result<(usize, Vec<f64>)> {
    if train.is_empty() {
        return Err(domain("k-NN needs a non-empty training set"));
    }
    if cfg.k == 0 || cfg.k > train.len() {
        return Err(domain(format!("k must be in 1..={}, got {}", train.len(), cfg.k)));
    }
    if !(cfg.gamma_pp > 0.0) {
        return Err(domain("vote temperature must be > 0"));
    }
    let d: Vec<f64> = train
        .series
        .par_iter()
        .map(|s| {
            let var = VarianceMatrix::constant(x.len(), s.len(), 2.0)?;
            cfg.metric.pair(x, s, Some(&var))
        })
        .collect::<Result<_>>()?;
    knn_vote(&d, &train.labels, train.n_classes(), cfg.k, cfg.gamma_pp)
}

/// Vote from precomputed distances.
pub fn knn_vote(
    dists: &[f64],
    labels: &[usize],
    n_classes: usize,
    k: usize,
    gamma_pp: f64,
) -> Result<(usize, Vec<f64>)> {
    if let Some(i) = dists.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite distance to training sample {i}")));
    }
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    let near = &order[..k];
    let w = softmax(&near.iter().map(|&i| -dists[i] / gamma_pp).collect::<Vec<_>>());
    let mut scores = vec![0.0; n_classes];
    for (&i, wi) in near.iter().zip(&w) {
        scores[labels[i]] += wi;
    }
    let label = (0..n_classes).fold(0, |b, c| if scores[c] > scores[b] { c } else { b });
    Ok((label, scores))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// A classifier to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Classifier {
    Centroid,
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub classifiers: Vec<Classifier>,
    pub distances: Vec<Distance>,
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub max_iters: usize,
    pub band: Option<Band>,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            classifiers: vec![Classifier::Centroid, Classifier::Knn { k: 1 }, Classifier::Knn { k: 3 }, Classifier::Knn { k: 5 }],
            distances: Distance::ALL.to_vec(),
            gammas: vec![0.1, 1.0, 10.0],
            betas: vec![0.0, 0.01, 0.05],
            fractions: [0.5, 0.25, 0.25],
            seed: 0,
            max_iters: 100,
            band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub classifier: Classifier,
    pub distance: Distance,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub rows: Vec<AccuracyRow>,
}

fn predict_all(
    classifier: Classifier,
    metric: &DistanceConfig,
    max_iters: usize,
    train: &Dataset,
    queries: &[&Dataset],
) -> Result<Vec<Vec<usize>>> {
    match classifier {
        Classifier::Centroid => {
            let model = fit_centroids(
                train,
                &CentroidConfig {
                    metric: *metric,
                    max_iters,
                    ..CentroidConfig::default()
                },
            )?;
            queries
                .iter()
                .map(|q| q.series.par_iter().map(|x| predict_centroid(&model, x)).collect())
                .collect()
        }
        Classifier::Knn { k } => {
            let cfg = KnnConfig {
                k: k.min(train.len()),
                metric: *metric,
                ..KnnConfig::default()
            };
            queries
                .iter()
                .map(|q| q.series.par_iter().map(|x| predict_knn(train, x, &cfg).map(|r| r.0)).collect())
                .collect()
        }
    }
}

/// Stratified split, validation-based choice of `γ` and `β`, single test run.
///
/// `γ` is searched for `Sdtw`/`Udtw` and `β` for `Udtw`; the first grid point
/// wins ties.
pub fn eval_split(ds: &Dataset, plan: &EvalPlan) -> Result<AccuracyReport> {
    if ds.n_classes() < 2 {
        return Err(domain("evaluation needs at least two classes"));
    }
    let idx = split_indices(ds, plan.fractions, plan.seed, true)?;
    let (train, val, test) = (ds.subset(&idx.train), ds.subset(&idx.val), ds.subset(&idx.test));
    let mut rows = Vec::new();
    for &classifier in &plan.classifiers {
        for &distance in &plan.distances {
            let gammas: Vec<Option<f64>> = match distance {
                Distance::Sdtw | Distance::Udtw => plan.gammas.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            let betas: Vec<Option<f64>> = match distance {
                Distance::Udtw => plan.betas.iter().copied().map(Some).collect(),
                _ => vec![None],
            };
            let mut best: Option<AccuracyRow> = None;
            for g in &gammas {
                for b in &betas {
                    let metric = DistanceConfig {
                        distance,
                        gamma: Gamma::new(g.unwrap_or(1.0))?,
                        beta: b.unwrap_or(0.0),
                        band: plan.band,
                        ..DistanceConfig::default()
                    };
                    let preds = predict_all(classifier, &metric, plan.max_iters, &train, &[&val, &test])?;
                    let row = AccuracyRow {
                        classifier,
                        distance,
                        gamma: *g,
                        beta: *b,
                        val_accuracy: accuracy(&preds[0], &val.labels),
                        test_accuracy: accuracy(&preds[1], &test.labels),
                    };
                    if best.as_ref().is_none_or(|r| row.val_accuracy > r.val_accuracy) {
                        best = Some(row);
                    }
                }
            }
            rows.extend(best);
        }
    }
    Ok(AccuracyReport {
        dataset: ds.name.clone(),
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        rows,
    })
}

/// Distances used by [`knn_vote`] when a caller already has a matrix.
pub fn pairwise(queries: &[TimeSeries], train: &[TimeSeries], metric: &DistanceConfig) -> Result<Grid> {
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|q| {
            train
                .iter()
                .map(|s| {
                    let var = VarianceMatrix::constant(q.len(), s.len(), 2.0)?;
                    metric.pair(q, s, Some(&var))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Grid::from_rows(&rows)
}

/// The sDTW value (log-sum-exp form) of two series, for reference tables.
pub fn sdtw_value(a: &TimeSeries, b: &TimeSeries, gamma: Gamma, band: Option<Band>) -> Result<f64> {
    let (g, _) = weighted_cost(a, b, &VarianceMatrix::ones(a.len(), b.len()), BaseDistanceKind::Normal)?;
    let shape = PlanShape::new(a.len(), b.len())?.with_band(band)?;
    Ok(sdtw_forward(&g, gamma, &shape)?.0)
}

/// The sDTW expectation distance, which equals uDTW at `Σ ≡ 1`.
pub fn sdtw_expectation(a: &TimeSeries, b: &TimeSeries, gamma: Gamma, band: Option<Band>) -> Result<f64> {
    let (g, l) = weighted_cost(a, b, &VarianceMatrix::ones(a.len(), b.len()), BaseDistanceKind::Normal)?;
    let shape = PlanShape::new(a.len(), b.len())?.with_band(band)?;
    Ok(udtw_eval(&g, &l, gamma, &shape)?.distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, SynthKind};

    fn metric(distance: Distance) -> DistanceConfig {
        DistanceConfig {
            distance,
            ..DistanceConfig::default()
        }
    }

    #[test]
    fn constant_classes() {
        let ds = synth(SynthKind::TwoConstant, 6, 0).unwrap();
        for d in [Distance::Euclidean, Distance::Sdtw, Distance::Udtw] {
            let model = fit_centroids(&ds, &CentroidConfig { metric: metric(d), ..CentroidConfig::default() }).unwrap();
            assert_eq!(model.centroids.len(), 2);
            let c0 = model.centroids[0].as_ref().unwrap();
            let c1 = model.centroids[1].as_ref().unwrap();
            assert!(c0.mu.values().iter().all(|v| v.abs() < 1e-2), "{d:?} {:?}", c0.mu);
            assert!(c1.mu.values().iter().all(|v| (v - 10.0).abs() < 1e-2), "{d:?} {:?}", c1.mu);
            let q = TimeSeries::univariate(vec![1.0; 16]);
            assert_eq!(predict_centroid(&model, &q).unwrap(), 0);
            assert_eq!(predict_centroid(&model, &c1.mu).unwrap(), 1);
        }
    }

    #[test]
    fn three_classes_three_centroids() {
        let ds = synth(SynthKind::Cbf, 9, 1).unwrap();
        let model = fit_centroids(&ds, &CentroidConfig { metric: metric(Distance::Euclidean), ..CentroidConfig::default() }).unwrap();
        assert_eq!(model.centroids.iter().flatten().count(), 3);
    }

    #[test]
    fn knn_vote_examples() {
        let (l, s) = knn_vote(&[0.0, 1.0, 1.0], &[0, 1, 1], 2, 3, 6.0).unwrap();
        let e = (-1.0f64 / 6.0).exp();
        assert!((s[0] - 1.0 / (1.0 + 2.0 * e)).abs() < 1e-12);
        assert!((s[0] - 0.3714).abs() < 1e-4);
        assert_eq!(l, 1);
        let (l, s) = knn_vote(&[2.0, 2.0], &[1, 0], 2, 2, 6.0).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
        assert_eq!(l, 0);
        let (l, s) = knn_vote(&[3.0, 0.5, 2.0], &[0, 1, 0], 2, 1, 6.0).unwrap();
        assert_eq!((l, s), (1, vec![0.0, 1.0]));
    }

    #[test]
    fn knn_weights_sum_to_one_and_concentrate() {
        let ds = synth(SynthKind::Cbf, 15, 2).unwrap();
        let q = &synth(SynthKind::Cbf, 1, 99).unwrap().series[0];
        let cfg = KnnConfig { k: 5, metric: metric(Distance::Dtw), ..KnnConfig::default() };
        let (_, s) = predict_knn(&ds, q, &cfg).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (l1, _) = predict_knn(&ds, q, &KnnConfig { k: 1, ..cfg }).unwrap();
        let (lc, _) = predict_knn(&ds, q, &KnnConfig { gamma_pp: 1e-6, ..cfg }).unwrap();
        assert_eq!(l1, lc);
        assert!(predict_knn(&ds, q, &KnnConfig { k: 0, ..cfg }).is_err());
    }

    #[test]
    fn udtw_with_unit_sigma_matches_sdtw_expectation() {
        let a = TimeSeries::univariate(vec![0.0, 1.0, 0.5, 0.2]);
        let b = TimeSeries::univariate(vec![0.1, 0.9, 0.3]);
        let u = metric(Distance::Udtw).pair(&a, &b, Some(&VarianceMatrix::ones(4, 3))).unwrap();
        let s = metric(Distance::Sdtw).pair(&a, &b, None).unwrap();
        assert_eq!(u, s);
        assert_eq!(s, sdtw_expectation(&a, &b, Gamma::of(1.0), None).unwrap());
    }

    #[test]
    fn separated_data_is_perfect() {
        let ds = synth(SynthKind::TwoConstant, 16, 0).unwrap();
        let plan = EvalPlan {
            gammas: vec![1.0],
            betas: vec![0.0],
            max_iters: 20,
            ..EvalPlan::default()
        };
        let r = eval_split(&ds, &plan).unwrap();
        assert_eq!(r.rows.len(), 16);
        assert!(r.rows.iter().all(|row| row.test_accuracy == 1.0), "{:?}", r.rows);
    }
}
