//! Variance grids from a SigmaNet head under each combination rule, from a
//! free resized grid, and the closed-form per-cell optimum.

use udtw::sigma::{FreeSigma, SigmaCombine, SigmaModel, SigmaNet, SigmaNetParams};
use udtw::udtw::{free_sigma_mle, Beta, UdtwConfig};
use udtw::TimeSeries;

fn main() -> udtw::Result<()> {
    let a = TimeSeries::univariate(vec![0.0, 1.0, 3.0, 1.0]);
    let b = TimeSeries::univariate(vec![0.0, 2.0, 1.0]);
    let cfg = UdtwConfig::with_gamma(0.5);
    let params = SigmaNetParams::random(1, 7);
    for rule in [SigmaCombine::AddSq, SigmaCombine::Add, SigmaCombine::Mul, SigmaCombine::MulSq, SigmaCombine::Joint] {
        let head = SigmaNet::new(if rule == SigmaCombine::Joint { SigmaNetParams::random(2, 7) } else { params.clone() }, rule)?;
        let var = head.variance(&a, &b)?;
        let r = cfg.eval(&a, &b, &var)?;
        println!("{rule:?}: var[0][0]={:.4} distance={:.4} penalty={:+.4}", var[(0, 0)], r.distance, r.penalty);
    }
    let free = FreeSigma::new(3, 1)?;
    let var = free.variance(&a, &b)?;
    println!("free 3x3 grid resized to {:?}: distance {:.4}", var.shape(), cfg.eval(&a, &b, &var)?.distance);
    for e in [0.0, 0.5, 4.0] {
        println!("cell error {e}: optimal sigma at beta=1 is {:.4}", free_sigma_mle(e, Beta::new(1.0)?)?);
    }
    Ok(())
}
