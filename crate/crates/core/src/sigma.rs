//! Variance models: frame-wise SigmaNet heads, combination rules, and free
//! parameter grids with bilinear resizing.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{Grid, TimeSeries};
use crate::udtw::VarianceMatrix;

pub const DEFAULT_KAPPA: f64 = 1.8;
pub const DEFAULT_ETA: f64 = 0.01;
pub const SMALL_DATA_KAPPA: f64 = 1.5;

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `κ·sigmoid(z) + η` and its derivative in `z`.
#[inline]
fn scaled_sigmoid(z: f64, kappa: f64, eta: f64) -> (f64, f64) {
    let s = sigmoid(z);
    (kappa * s + eta, kappa * s * (1.0 - s))
}

/// Linear map to a scalar followed by a scaled sigmoid:
/// `σ(ψ) = κ / (1 + exp(-(w·ψ + b))) + η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaNetParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub kappa: f64,
    pub eta: f64,
}

impl SigmaNetParams {
    /// Zero weights with the default `κ`, `η`: every frame maps to `κ/2 + η`.
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            kappa: DEFAULT_KAPPA,
            eta: DEFAULT_ETA,
        }
    }

    /// Zero weights with the small-data magnitude `κ = 1.5`.
    pub fn small_data(dim: usize) -> Self {
        Self {
            kappa: SMALL_DATA_KAPPA,
            ..Self::zeros(dim)
        }
    }

    /// Uniform `±1/√dim` weights, zero bias.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        Self {
            weights: (0..dim).map(|_| rng.random_range(-bound..=bound)).collect(),
            ..Self::zeros(dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(domain("SigmaNet needs at least one input weight"));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(domain(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(domain(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.bias.is_finite() {
            return Err(Error::Numeric("non-finite SigmaNet weights".into()));
        }
        Ok(())
    }

    /// Trainable parameters: weights then bias. `κ` and `η` are fixed.
    pub fn num_params(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let d = self.weights.len();
        self.weights.copy_from_slice(&p[..d]);
        self.bias = p[d];
    }

    #[inline]
    fn pre_activation(&self, frame: &[f64]) -> f64 {
        self.weights.iter().zip(frame).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }
}

/// Per-frame `σ` for every frame of `frames`.
pub fn sigmanet_forward(frames: &TimeSeries, params: &SigmaNetParams) -> Result<Vec<f64>> {
    params.validate()?;
    if frames.dim() != params.weights.len() {
        return Err(Error::Dimension {
            what: "SigmaNet input dimension",
            expected: params.weights.len(),
            got: frames.dim(),
        });
    }
    Ok(frames
        .frames()
        .map(|f| scaled_sigmoid(params.pre_activation(f), params.kappa, params.eta).0)
        .collect())
}

/// Backward pass of [`sigmanet_forward`]: returns `(d params, d frames)`.
pub fn sigmanet_backward(
    frames: &TimeSeries,
    params: &SigmaNetParams,
    d_sigma: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let dim = params.weights.len();
    let mut d_params = vec![0.0; dim + 1];
    let mut d_frames = vec![0.0; frames.values().len()];
    for (m, (f, g)) in frames.frames().zip(d_sigma).enumerate() {
        if *g == 0.0 {
            continue;
        }
        let (_, dz) = scaled_sigmoid(params.pre_activation(f), params.kappa, params.eta);
        let gz = g * dz;
        for k in 0..dim {
            d_params[k] += gz * f[k];
            d_frames[m * dim + k] += gz * params.weights[k];
        }
        d_params[dim] += gz;
    }
    (d_params, d_frames)
}

/// How per-frame `σ` vectors of the two sequences form the pairwise grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaCombine {
    /// `σ²ₘ + σ'²ₙ`
    #[default]
    AddSq,
    /// `σₘ + σ'ₙ`
    Add,
    /// `σₘ σ'ₙ`
    Mul,
    /// `σ²ₘ σ'²ₙ`
    MulSq,
    /// `σ(ψₘ, ψ'ₙ)²` from one head applied to the concatenated frame pair.
    Joint,
}

impl std::str::FromStr for SigmaCombine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add-sq" => Ok(Self::AddSq),
            "add" => Ok(Self::Add),
            "mul" => Ok(Self::Mul),
            "mul-sq" => Ok(Self::MulSq),
            "joint" => Ok(Self::Joint),
            other => Err(domain(format!("unknown sigma combine rule '{other}'"))),
        }
    }
}

#[inline]
fn combine_one(rule: SigmaCombine, a: f64, b: f64) -> (f64, f64, f64) {
    // value, d/da, d/db
    match rule {
        SigmaCombine::AddSq => (a * a + b * b, 2.0 * a, 2.0 * b),
        SigmaCombine::Add => (a + b, 1.0, 1.0),
        SigmaCombine::Mul => (a * b, b, a),
        SigmaCombine::MulSq => (a * a * b * b, 2.0 * a * b * b, 2.0 * a * a * b),
        SigmaCombine::Joint => unreachable!("joint rule has no frame-wise form"),
    }
}

/// Outer combination of two per-frame `σ` vectors into a variance grid.
///
/// `Joint` needs the frames themselves; use [`joint_sigma`].
pub fn combine_sigma(sig_q: &[f64], sig_s: &[f64], rule: SigmaCombine) -> Result<VarianceMatrix> {
    if rule == SigmaCombine::Joint {
        return Err(domain("the joint rule is evaluated by joint_sigma"));
    }
    if let Some(v) = sig_q.iter().chain(sig_s).find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(domain(format!("sigma entries must be > 0, found {v}")));
    }
    VarianceMatrix::new(Grid::from_fn(sig_q.len(), sig_s.len(), |m, n| {
        combine_one(rule, sig_q[m], sig_s[n]).0
    }))
}

/// Chains `∂/∂Σ` back to the two `σ` vectors.
pub fn combine_sigma_backward(
    sig_q: &[f64],
    sig_s: &[f64],
    rule: SigmaCombine,
    d_var: &Grid,
) -> (Vec<f64>, Vec<f64>) {
    let mut dq = vec![0.0; sig_q.len()];
    let mut ds = vec![0.0; sig_s.len()];
    for (m, a) in sig_q.iter().enumerate() {
        for (n, b) in sig_s.iter().enumerate() {
            let g = d_var[(m, n)];
            if g != 0.0 {
                let (_, da, db) = combine_one(rule, *a, *b);
                dq[m] += g * da;
                ds[n] += g * db;
            }
        }
    }
    (dq, ds)
}

fn pair_frame(a: &[f64], b: &[f64], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(a);
    buf.extend_from_slice(b);
}

/// Jointly generated variances: one head sees `[ψₘ; ψ'ₙ]` and its output is
/// squared. The head's input dimension is twice the frame dimension.
pub fn joint_sigma(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    params: &SigmaNetParams,
) -> Result<VarianceMatrix> {
    params.validate()?;
    if params.weights.len() != psi.dim() + psi_prime.dim() {
        return Err(Error::Dimension {
            what: "joint SigmaNet input dimension",
            expected: psi.dim() + psi_prime.dim(),
            got: params.weights.len(),
        });
    }
    let mut buf = Vec::new();
    let mut g = Grid::zeros(psi.len(), psi_prime.len());
    for m in 0..psi.len() {
        for n in 0..psi_prime.len() {
            pair_frame(psi.frame(m), psi_prime.frame(n), &mut buf);
            let s = scaled_sigmoid(params.pre_activation(&buf), params.kappa, params.eta).0;
            g[(m, n)] = s * s;
        }
    }
    VarianceMatrix::new(g)
}

fn joint_sigma_backward(
    psi: &TimeSeries,
    psi_prime: &TimeSeries,
    params: &SigmaNetParams,
    d_var: &Grid,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d1 = psi.dim();
    let d2 = psi_prime.dim();
    let mut dp = vec![0.0; d1 + d2 + 1];
    let mut da = vec![0.0; psi.values().len()];
    let mut db = vec![0.0; psi_prime.values().len()];
    let mut buf = Vec::new();
    for m in 0..psi.len() {
        for n in 0..psi_prime.len() {
            let g = d_var[(m, n)];
            if g == 0.0 {
                continue;
            }
            pair_frame(psi.frame(m), psi_prime.frame(n), &mut buf);
            let (s, dz) = scaled_sigmoid(params.pre_activation(&buf), params.kappa, params.eta);
            let gz = g * 2.0 * s * dz;
            for k in 0..d1 + d2 {
                dp[k] += gz * buf[k];
                if k < d1 {
                    da[m * d1 + k] += gz * params.weights[k];
                } else {
                    db[n * d2 + k - d1] += gz * params.weights[k];
                }
            }
            dp[d1 + d2] += gz;
        }
    }
    (dp, da, db)
}

/// Bilinear resize with aligned corners.
///
/// Returns the resized grid; corner values are preserved exactly.
pub fn bilinear_resize(src: &Grid, rows: usize, cols: usize) -> Result<Grid> {
    if rows == 0 || cols == 0 {
        return Err(domain("resize target must be at least 1x1"));
    }
    if src.rows() == 0 || src.cols() == 0 {
        return Err(domain("cannot resize an empty grid"));
    }
    let ri = axis_weights(src.rows(), rows);
    let ci = axis_weights(src.cols(), cols);
    Ok(Grid::from_fn(rows, cols, |i, j| {
        let (r0, r1, tr) = ri[i];
        let (c0, c1, tc) = ci[j];
        let top = src[(r0, c0)] * (1.0 - tc) + src[(r0, c1)] * tc;
        let bot = src[(r1, c0)] * (1.0 - tc) + src[(r1, c1)] * tc;
        top * (1.0 - tr) + bot * tr
    }))
}

fn bilinear_resize_backward(src_rows: usize, src_cols: usize, d_out: &Grid) -> Grid {
    let ri = axis_weights(src_rows, d_out.rows());
    let ci = axis_weights(src_cols, d_out.cols());
    let mut d = Grid::zeros(src_rows, src_cols);
    for (i, &(r0, r1, tr)) in ri.iter().enumerate() {
        for (j, &(c0, c1, tc)) in ci.iter().enumerate() {
            let g = d_out[(i, j)];
            d[(r0, c0)] += g * (1.0 - tr) * (1.0 - tc);
            d[(r0, c1)] += g * (1.0 - tr) * tc;
            d[(r1, c0)] += g * tr * (1.0 - tc);
            d[(r1, c1)] += g * tr * tc;
        }
    }
    d
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Free-parameter variances: a `base` raw grid resized to `target` and mapped
/// through `κ·sigmoid(·) + η`.
pub fn free_sigma_grid(
    base_size: (usize, usize),
    target: (usize, usize),
    raw_params: &Grid,
    kappa: f64,
    eta: f64,
) -> Result<VarianceMatrix> {
    if base_size.0 < 2 || base_size.1 < 2 {
        return Err(domain("free sigma base grid must be at least 2x2"));
    }
    if raw_params.shape() != base_size {
        return Err(domain(format!(
            "raw parameters are {}x{}, expected {}x{}",
            raw_params.rows(),
            raw_params.cols(),
            base_size.0,
            base_size.1
        )));
    }
    if !(eta > 0.0) || !(kappa >= 0.0) {
        return Err(domain("free sigma needs kappa >= 0 and eta > 0"));
    }
    let resized = bilinear_resize(raw_params, target.0, target.1)?;
    VarianceMatrix::new(resized.map(|z| scaled_sigmoid(z, kappa, eta).0))
}

/// Anything that yields a variance grid for a pair and can backpropagate
/// `∂/∂Σ` into its own parameters and the two series.
pub trait SigmaModel: Sync {
    fn variance(&self, psi: &TimeSeries, psi_prime: &TimeSeries) -> Result<VarianceMatrix>;

    fn num_params(&self) -> usize;

    /// Returns `(d params, d psi, d psi_prime)`.
    fn backward(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        d_var: &Grid,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>;
}

/// `Σ ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitSigma;

impl SigmaModel for UnitSigma {
    fn variance(&self, psi: &TimeSeries, psi_prime: &TimeSeries) -> Result<VarianceMatrix> {
        Ok(VarianceMatrix::ones(psi.len(), psi_prime.len()))
    }

    fn num_params(&self) -> usize {
        0
    }

    fn backward(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        _d_var: &Grid,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        Ok((vec![], vec![0.0; psi.values().len()], vec![0.0; psi_prime.values().len()]))
    }
}

/// Every entry equal to a fixed variance.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSigma(f64);

impl ConstantSigma {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(domain(format!("constant variance must be > 0, got {variance}")));
        }
        Ok(Self(variance))
    }
}

impl SigmaModel for ConstantSigma {
    fn variance(&self, psi: &TimeSeries, psi_prime: &TimeSeries) -> Result<VarianceMatrix> {
        VarianceMatrix::constant(psi.len(), psi_prime.len(), self.0)
    }

    fn num_params(&self) -> usize {
        0
    }

    fn backward(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        _d_var: &Grid,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        Ok((vec![], vec![0.0; psi.values().len()], vec![0.0; psi_prime.values().len()]))
    }
}

/// One shared SigmaNet head applied to both sequences, combined by `rule`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaNet {
    pub params: SigmaNetParams,
    pub rule: SigmaCombine,
}

impl SigmaNet {
    pub fn new(params: SigmaNetParams, rule: SigmaCombine) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, rule })
    }
}

impl SigmaModel for SigmaNet {
    fn variance(&self, psi: &TimeSeries, psi_prime: &TimeSeries) -> Result<VarianceMatrix> {
        if self.rule == SigmaCombine::Joint {
            return joint_sigma(psi, psi_prime, &self.params);
        }
        let a = sigmanet_forward(psi, &self.params)?;
        let b = sigmanet_forward(psi_prime, &self.params)?;
        combine_sigma(&a, &b, self.rule)
    }

    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn backward(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        d_var: &Grid,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if self.rule == SigmaCombine::Joint {
            return Ok(joint_sigma_backward(psi, psi_prime, &self.params, d_var));
        }
        let a = sigmanet_forward(psi, &self.params)?;
        let b = sigmanet_forward(psi_prime, &self.params)?;
        let (da, db) = combine_sigma_backward(&a, &b, self.rule, d_var);
        let (mut dp, dpsi) = sigmanet_backward(psi, &self.params, &da);
        let (dp2, dpsip) = sigmanet_backward(psi_prime, &self.params, &db);
        for (x, y) in dp.iter_mut().zip(&dp2) {
            *x += y;
        }
        Ok((dp, dpsi, dpsip))
    }
}

/// Free raw grid resized to each pair's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeSigma {
    pub raw: Grid,
    pub kappa: f64,
    pub eta: f64,
}

impl FreeSigma {
    /// `base x base` raw grid, uniform in `±0.1`.
    pub fn new(base: usize, seed: u64) -> Result<Self> {
        if base < 2 {
            return Err(domain("free sigma base grid must be at least 2x2"));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Ok(Self {
            raw: Grid::from_fn(base, base, |_, _| rng.random_range(-0.1..=0.1)),
            kappa: DEFAULT_KAPPA,
            eta: DEFAULT_ETA,
        })
    }
}

impl SigmaModel for FreeSigma {
    fn variance(&self, psi: &TimeSeries, psi_prime: &TimeSeries) -> Result<VarianceMatrix> {
        free_sigma_grid(
            self.raw.shape(),
            (psi.len(), psi_prime.len()),
            &self.raw,
            self.kappa,
            self.eta,
        )
    }

    fn num_params(&self) -> usize {
        self.raw.as_slice().len()
    }

    fn backward(
        &self,
        psi: &TimeSeries,
        psi_prime: &TimeSeries,
        d_var: &Grid,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let resized = bilinear_resize(&self.raw, psi.len(), psi_prime.len())?;
        let mut dz = d_var.clone();
        for (g, z) in dz.as_mut_slice().iter_mut().zip(resized.as_slice()) {
            *g *= scaled_sigmoid(*z, self.kappa, self.eta).1;
        }
        let draw = bilinear_resize_backward(self.raw.rows(), self.raw.cols(), &dz);
        Ok((
            draw.into_vec(),
            vec![0.0; psi.values().len()],
            vec![0.0; psi_prime.values().len()],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmanet_examples() {
        let p = SigmaNetParams::zeros(1);
        let s = sigmanet_forward(&TimeSeries::univariate(vec![3.0, -1.0]), &p).unwrap();
        assert_abs_diff_eq!(s[0], 0.91, epsilon = 1e-15);
        let mut big = SigmaNetParams::zeros(1);
        big.bias = 800.0;
        let s = sigmanet_forward(&TimeSeries::univariate(vec![0.0]), &big).unwrap();
        assert_abs_diff_eq!(s[0], 1.81, epsilon = 1e-15);
        big.bias = -800.0;
        let s = sigmanet_forward(&TimeSeries::univariate(vec![0.0]), &big).unwrap();
        assert_abs_diff_eq!(s[0], 0.01, epsilon = 1e-15);
        assert!(sigmanet_forward(&TimeSeries::new(2, vec![0.0, 1.0]).unwrap(), &p).is_err());
    }

    #[test]
    fn sigmanet_gradient() {
        let p = SigmaNetParams::random(3, 5);
        let x = TimeSeries::new(3, vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.4]).unwrap();
        let up = [0.7, -1.3];
        let (dp, dx) = sigmanet_backward(&x, &p, &up);
        let f = |v: &[f64]| {
            let mut q = p.clone();
            q.set_params(&v[..4]);
            let xs = TimeSeries::new(3, v[4..].to_vec()).unwrap();
            let s = sigmanet_forward(&xs, &q).unwrap();
            s[0] * up[0] + s[1] * up[1]
        };
        let mut v = p.params();
        v.extend_from_slice(x.values());
        let mut g = dp;
        g.extend(dx);
        assert!(grad_check(f, &v, &g, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn combine_examples() {
        let s = combine_sigma(&[1.0], &[1.0], SigmaCombine::AddSq).unwrap();
        assert_eq!(s.as_slice(), &[2.0]);
        let s = combine_sigma(&[1.0, 1.0], &[1.0], SigmaCombine::Mul).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 1.0]);
        assert!(combine_sigma(&[0.0], &[1.0], SigmaCombine::Add).is_err());
        let a = [0.4, 1.1, 0.7];
        let b = [0.9, 0.2];
        let ab = combine_sigma(&a, &b, SigmaCombine::AddSq).unwrap();
        let ba = combine_sigma(&b, &a, SigmaCombine::AddSq).unwrap();
        assert_eq!(ab.transpose(), ba);
    }

    #[test]
    fn joint_constant_output() {
        let mut p = SigmaNetParams::zeros(2);
        p.bias = 0.3;
        let c = scaled_sigmoid(0.3, p.kappa, p.eta).0;
        let s = joint_sigma(
            &TimeSeries::univariate(vec![1.0, 2.0]),
            &TimeSeries::univariate(vec![5.0, 0.0, -1.0]),
            &p,
        )
        .unwrap();
        assert!(s.as_slice().iter().all(|v| (v - c * c).abs() < 1e-15));
    }

    #[test]
    fn sigma_model_gradients() {
        let a = TimeSeries::univariate(vec![0.2, -0.5, 1.0]);
        let b = TimeSeries::univariate(vec![0.9, 0.1]);
        let up = Grid::from_rows(&[[0.3, -0.2], [1.1, 0.4], [-0.7, 0.5]]).unwrap();
        for rule in [SigmaCombine::AddSq, SigmaCombine::Add, SigmaCombine::Mul, SigmaCombine::MulSq] {
            let net = SigmaNet::new(SigmaNetParams::random(1, 9), rule).unwrap();
            let (dp, da, db) = net.backward(&a, &b, &up).unwrap();
            let f = |v: &[f64]| {
                let mut n = net.clone();
                n.params.set_params(&v[..2]);
                let s = n
                    .variance(&TimeSeries::univariate(v[2..5].to_vec()), &TimeSeries::univariate(v[5..].to_vec()))
                    .unwrap();
                s.dot(&up)
            };
            let mut v = net.params.params();
            v.extend_from_slice(a.values());
            v.extend_from_slice(b.values());
            let g: Vec<f64> = dp.into_iter().chain(da).chain(db).collect();
            assert!(grad_check(f, &v, &g, 1e-6).unwrap() < 1e-5, "{rule:?}");
        }
        let mut jp = SigmaNetParams::random(2, 3);
        jp.bias = 0.2;
        let net = SigmaNet::new(jp, SigmaCombine::Joint).unwrap();
        let (dp, da, db) = net.backward(&a, &b, &up).unwrap();
        let f = |v: &[f64]| {
            let mut n = net.clone();
            n.params.set_params(&v[..3]);
            n.variance(&TimeSeries::univariate(v[3..6].to_vec()), &TimeSeries::univariate(v[6..].to_vec()))
                .unwrap()
                .dot(&up)
        };
        let mut v = net.params.params();
        v.extend_from_slice(a.values());
        v.extend_from_slice(b.values());
        let g: Vec<f64> = dp.into_iter().chain(da).chain(db).collect();
        assert!(grad_check(f, &v, &g, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn free_grid_examples() {
        let c = 0.4;
        let raw = Grid::filled(3, 3, c);
        let s = free_sigma_grid((3, 3), (5, 7), &raw, 1.8, 0.01).unwrap();
        let want = 1.8 * sigmoid(c) + 0.01;
        assert!(s.as_slice().iter().all(|v| (v - want).abs() < 1e-15));

        let raw = Grid::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let r = bilinear_resize(&raw, 3, 2).unwrap();
        assert_eq!(r.row(1), &[0.5, 0.5]);
        assert_eq!(bilinear_resize(&raw, 2, 2).unwrap(), raw);
        let s = free_sigma_grid((2, 2), (2, 2), &raw, 1.8, 0.01).unwrap();
        assert_eq!(s[(1, 0)], scaled_sigmoid(1.0, 1.8, 0.01).0);
        assert!(free_sigma_grid((2, 2), (0, 3), &raw, 1.8, 0.01).is_err());
    }

    #[test]
    fn free_grid_gradient() {
        let model = FreeSigma::new(3, 1).unwrap();
        let a = TimeSeries::univariate(vec![0.0; 4]);
        let b = TimeSeries::univariate(vec![0.0; 5]);
        let up = Grid::from_fn(4, 5, |i, j| (i as f64 - j as f64 * 0.3).sin());
        let (dp, _, _) = model.backward(&a, &b, &up).unwrap();
        let f = |v: &[f64]| {
            let mut m = model.clone();
            m.raw.as_mut_slice().copy_from_slice(v);
            m.variance(&a, &b).unwrap().dot(&up)
        };
        assert!(grad_check(f, model.raw.as_slice(), &dp, 1e-6).unwrap() < 1e-6);
    }
}
