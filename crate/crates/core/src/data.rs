//! Labelled datasets: UCR-format files, synthetic generators and seeded
//! splits.
//!
//! All randomness comes from `Xoshiro256PlusPlus` seeded through SplitMix64
//! (`seed_from_u64`), so generated data is identical across platforms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::TimeSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub series: Vec<TimeSeries>,
    /// Class ids, `0..n_classes`.
    pub labels: Vec<usize>,
    /// Raw label text for each class id.
    pub label_map: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        series: Vec<TimeSeries>,
        labels: Vec<usize>,
        label_map: Vec<String>,
    ) -> Result<Self> {
        if series.len() != labels.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: series.len(),
                got: labels.len(),
            });
        }
        if let Some(l) = labels.iter().find(|l| **l >= label_map.len()) {
            return Err(domain(format!("class id {l} has no label entry")));
        }
        Ok(Self {
            name: name.into(),
            series,
            labels,
            label_map,
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.series.iter().map(TimeSeries::len).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Rounded mean series length.
    pub fn mean_len(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        let total: usize = self.lengths().iter().sum();
        ((total as f64) / self.len() as f64).round() as usize
    }

    /// The rows at `idx`, keeping the class-id mapping.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            series: idx.iter().map(|&i| self.series[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_map: self.label_map.clone(),
        }
    }

    /// Members of class `c`.
    pub fn class_members(&self, c: usize) -> Vec<&TimeSeries> {
        self.series
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == c)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn z_normalized(&self) -> Dataset {
        Dataset {
            series: self.series.iter().map(TimeSeries::z_normalized).collect(),
            ..self.clone()
        }
    }

    pub fn manifest(&self) -> Manifest {
        let lengths = self.lengths();
        Manifest {
            name: self.name.clone(),
            n_series: self.len(),
            n_classes: self.n_classes(),
            class_counts: self.class_counts(),
            min_len: lengths.iter().copied().min().unwrap_or(0),
            max_len: lengths.iter().copied().max().unwrap_or(0),
            mean_len: self.mean_len(),
            label_map: self.label_map.clone(),
        }
    }
}

/// Summary written next to datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n_series: usize,
    pub n_classes: usize,
    pub class_counts: Vec<usize>,
    pub min_len: usize,
    pub max_len: usize,
    pub mean_len: usize,
    pub label_map: Vec<String>,
}

#[derive(Clone, Copy)]
enum Delim {
    Tab,
    Comma,
    Space,
}

fn split_fields(line: &str, d: Delim) -> Vec<&str> {
    match d {
        Delim::Tab => line.split('\t').map(str::trim).collect(),
        Delim::Comma => line.split(',').map(str::trim).collect(),
        Delim::Space => line.split_whitespace().collect(),
    }
}

fn is_nan_token(t: &str) -> bool {
    t.eq_ignore_ascii_case("nan") || t.is_empty()
}

/// Parses UCR text: one series per line, first field the class label.
/// Tab, comma or whitespace delimiters are detected from the first row.
/// Trailing `NaN` fields are dropped, so rows may differ in length.
pub fn parse_ucr(text: &str, name: &str) -> Result<Dataset> {
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(&(_, first)) = rows.first() else {
        return Err(domain("empty dataset file"));
    };
    let delim = if first.contains('\t') {
        Delim::Tab
    } else if first.contains(',') {
        Delim::Comma
    } else {
        Delim::Space
    };
    let mut raw_labels = Vec::with_capacity(rows.len());
    let mut series = Vec::with_capacity(rows.len());
    for &(line, row) in &rows {
        let fields = split_fields(row.trim(), delim);
        let label = fields[0];
        if label.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "missing class label".into(),
            });
        }
        let mut end = fields.len();
        while end > 1 && is_nan_token(fields[end - 1]) {
            end -= 1;
        }
        if end == 1 {
            return Err(Error::Parse {
                line,
                msg: "row has no values".into(),
            });
        }
        let mut values = Vec::with_capacity(end - 1);
        for (col, tok) in fields[1..end].iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("field {} is not a number: '{tok}'", col + 2),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("field {} is not finite inside the series", col + 2),
                });
            }
            values.push(v);
        }
        raw_labels.push((line, label.to_string()));
        series.push(TimeSeries::univariate(values));
    }
    let (labels, label_map) = relabel(&raw_labels)?;
    Dataset::new(name, series, labels, label_map)
}

/// Maps raw labels to `0..C` in sorted order: numeric when every label
/// parses as a number, lexicographic otherwise.
fn relabel(raw: &[(usize, String)]) -> Result<(Vec<usize>, Vec<String>)> {
    let numeric: Option<Vec<f64>> = raw.iter().map(|(_, l)| l.parse::<f64>().ok()).collect();
    let mut labels = Vec::with_capacity(raw.len());
    let mut label_map = Vec::new();
    match numeric {
        Some(nums) => {
            let mut uniq: Vec<f64> = nums.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            for u in &uniq {
                let first = raw.iter().zip(&nums).find(|(_, n)| *n == u).unwrap();
                label_map.push(first.0 .1.clone());
            }
            for n in &nums {
                labels.push(uniq.iter().position(|u| u == n).unwrap());
            }
        }
        None => {
            let uniq: BTreeMap<&str, usize> = {
                let mut keys: Vec<&str> = raw.iter().map(|(_, l)| l.as_str()).collect();
                keys.sort_unstable();
                keys.dedup();
                keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
            };
            label_map = uniq.keys().map(|k| k.to_string()).collect();
            for (_, l) in raw {
                labels.push(uniq[l.as_str()]);
            }
        }
    }
    Ok((labels, label_map))
}

pub fn load_ucr(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_ucr(&text, &name)
}

/// Tab-separated UCR text. Values use the shortest exact decimal form, so
/// loading the output reproduces them bit for bit.
pub fn format_ucr(ds: &Dataset) -> String {
    let mut out = String::new();
    for (s, l) in ds.series.iter().zip(&ds.labels) {
        out.push_str(&ds.label_map[*l]);
        for v in s.values() {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn save_ucr(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.series.iter().any(|s| s.dim() != 1) {
        return Err(domain("UCR files hold univariate series only"));
    }
    std::fs::write(path, format_ucr(ds))?;
    Ok(())
}

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Cylinder / bell / funnel, length 128.
    Cbf,
    /// A raised plateau, with or without shoulder dips, length 150.
    GunpointLike,
    /// Heartbeat trains, normal or with inverted T wave and wide QRS, length 96.
    EcgLike,
    /// Constant series at levels 0 and 10, length 16.
    TwoConstant,
    /// Control charts: normal, cyclic, trends and shifts, length 60.
    Control,
    /// Up/down step pairs at random positions, length 128.
    TwoPatterns,
}

impl SynthKind {
    pub const ALL: [SynthKind; 6] = [
        Self::Cbf,
        Self::GunpointLike,
        Self::EcgLike,
        Self::TwoConstant,
        Self::Control,
        Self::TwoPatterns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cbf => "cbf",
            Self::GunpointLike => "gunpoint-like",
            Self::EcgLike => "ecg-like",
            Self::TwoConstant => "two-constant",
            Self::Control => "control",
            Self::TwoPatterns => "two-patterns",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Self::Cbf => 3,
            Self::GunpointLike | Self::EcgLike | Self::TwoConstant => 2,
            Self::Control => 6,
            Self::TwoPatterns => 4,
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| domain(format!("unknown synthetic dataset '{s}'")))
    }
}

/// `n` series cycling through the classes (`i % C`), generated from `seed`.
pub fn synth(kind: SynthKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(domain("synthetic dataset needs n >= 1"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let c = kind.n_classes();
    let mut series = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        let values = match kind {
            SynthKind::Cbf => cbf(class, &mut rng),
            SynthKind::GunpointLike => gunpoint(class, &mut rng),
            SynthKind::EcgLike => ecg(class, &mut rng),
            SynthKind::TwoConstant => vec![10.0 * class as f64; 16],
            SynthKind::Control => control(class, &mut rng),
            SynthKind::TwoPatterns => two_patterns(class, &mut rng),
        };
        series.push(TimeSeries::univariate(values));
        labels.push(class);
    }
    let label_map = (0..c).map(|k| (k + 1).to_string()).collect();
    Dataset::new(kind.name(), series, labels, label_map)
}

fn std_normal(rng: &mut Xoshiro256PlusPlus) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sample(rng)
}

fn cbf(class: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let a = rng.random_range(16..=32) as f64;
    let b = a + rng.random_range(32..=96) as f64;
    let amp = 6.0 + std_normal(rng);
    (0..128)
        .map(|t| {
            let t = t as f64;
            let inside = if (a..=b).contains(&t) { 1.0 } else { 0.0 };
            let shape = match class {
                0 => 1.0,
                1 => (t - a) / (b - a),
                _ => (b - t) / (b - a),
            };
            amp * inside * shape + std_normal(rng)
        })
        .collect()
}

fn gunpoint(class: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let len = 150;
    let start = 40.0 + rng.random_range(-12.0..12.0);
    let width = 60.0 + rng.random_range(-8.0..8.0);
    let height = 1.6 + rng.random_range(-0.15..0.15);
    let ramp = 12.0;
    (0..len)
        .map(|t| {
            let t = t as f64;
            let up = 1.0 / (1.0 + (-(t - start) / (ramp / 4.0)).exp());
            let down = 1.0 / (1.0 + ((t - start - width) / (ramp / 4.0)).exp());
            let mut v = height * up * down - 0.8;
            if class == 0 {
                // drawing and holstering dips at the plateau edges
                for c in [start - 4.0, start + width + 4.0] {
                    v -= 0.35 * (-((t - c) / 3.0).powi(2)).exp();
                }
            }
            v + 0.04 * std_normal(rng)
        })
        .collect()
}

fn ecg(class: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let len = 96;
    let period = 32.0 + rng.random_range(-3.0..3.0);
    let phase = rng.random_range(0.0..period);
    let (qrs_w, t_amp) = if class == 0 { (1.2, 0.35) } else { (2.4, -0.3) };
    let gauss = |x: f64, c: f64, w: f64| (-((x - c) / w).powi(2)).exp();
    (0..len)
        .map(|t| {
            let t = t as f64;
            let mut v = 0.0;
            let mut beat = -phase;
            while beat < len as f64 + period {
                v += 0.15 * gauss(t, beat - 8.0, 2.0);
                v += 1.0 * gauss(t, beat, qrs_w);
                v -= 0.25 * gauss(t, beat + 2.0 * qrs_w, 1.0);
                v += t_amp * gauss(t, beat + 10.0, 3.0);
                beat += period;
            }
            v + 0.05 * std_normal(rng)
        })
        .collect()
}

fn control(class: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let len = 60;
    let m = 30.0;
    let s = 2.0;
    let amp = rng.random_range(10.0..15.0);
    let period = rng.random_range(10.0..15.0);
    let grad = rng.random_range(0.2..0.5);
    let shift_at = rng.random_range(len / 3..2 * len / 3) as f64;
    let shift = rng.random_range(7.5..20.0);
    (0..len)
        .map(|t| {
            let tf = t as f64;
            let base = m + s * std_normal(rng);
            base + match class {
                0 => 0.0,
                1 => amp * (2.0 * std::f64::consts::PI * tf / period).sin(),
                2 => grad * tf,
                3 => -grad * tf,
                4 => if tf >= shift_at { shift } else { 0.0 },
                _ => if tf >= shift_at { -shift } else { 0.0 },
            }
        })
        .collect()
}

fn two_patterns(class: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    let len = 128usize;
    let w1 = rng.random_range(8..=20);
    let w2 = rng.random_range(8..=20);
    let p1 = rng.random_range(0..len / 2 - w1);
    let p2 = rng.random_range(len / 2..len - w2);
    let up = [class / 2 == 0, class.is_multiple_of(2)];
    let mut v: Vec<f64> = (0..len).map(|_| 0.5 * std_normal(rng)).collect();
    for ((p, w), u) in [(p1, w1), (p2, w2)].into_iter().zip(up) {
        let half = w / 2;
        let (a, b) = if u { (-5.0, 5.0) } else { (5.0, -5.0) };
        for (k, x) in v[p..p + w].iter_mut().enumerate() {
            *x = if k < half { a } else { b };
        }
    }
    v
}

/// Index partition produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
}

fn carve(idx: &[usize], f: [f64; 3]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = idx.len();
    let ntr = (f[0] * n as f64 + 1e-9).floor() as usize;
    let nva = ((f[1] * n as f64 + 1e-9).floor() as usize).min(n - ntr);
    (
        idx[..ntr].to_vec(),
        idx[ntr..ntr + nva].to_vec(),
        idx[ntr + nva..].to_vec(),
    )
}

/// Seeded train/validation/test partition.
///
/// Counts are `floor(f·n)` for train and validation, per class when
/// stratified; the test part takes the rest. Stratification falls back to a
/// plain split when some class has fewer than three members. A plain split
/// that leaves a class out of train is redrawn with the next seed.
pub fn split_indices(
    ds: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    stratified: bool,
) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(domain("split fractions must be >= 0 and sum to 1"));
    }
    if ds.is_empty() {
        return Err(domain("cannot split an empty dataset"));
    }
    let counts = ds.class_counts();
    let stratified = stratified && counts.iter().all(|c| *c >= 3);
    let mut out = SplitIndices {
        train: vec![],
        val: vec![],
        test: vec![],
        stratified,
    };
    if stratified {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        for c in 0..ds.n_classes() {
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let (a, b, t) = carve(&idx, fractions);
            out.train.extend(a);
            out.val.extend(b);
            out.test.extend(t);
        }
    } else {
        let present: Vec<usize> = (0..ds.n_classes()).filter(|c| counts[*c] > 0).collect();
        for attempt in 0..100u64 {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(attempt));
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng);
            let (a, b, t) = carve(&idx, fractions);
            let covered = present.iter().all(|c| a.iter().any(|&i| ds.labels[i] == *c));
            out.train = a;
            out.val = b;
            out.test = t;
            if covered {
                break;
            }
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// [`split_indices`] materialised as three datasets.
pub fn split(
    ds: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset, Dataset)> {
    let s = split_indices(ds, fractions, seed, stratified)?;
    Ok((ds.subset(&s.train), ds.subset(&s.val), ds.subset(&s.test)))
}
