//! uDTW distance and penalty for a pair of series under the three base
//! distances, with unit and non-unit variances.

use udtw::udtw::{BaseDistanceKind, UdtwConfig, VarianceMatrix};
use udtw::TimeSeries;

fn main() -> udtw::Result<()> {
    let a = TimeSeries::univariate(vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    let b = TimeSeries::univariate(vec![0.0, 0.5, 2.0, 2.0, 0.5, 0.0]);
    for kind in BaseDistanceKind::ALL {
        for var in [1.0, 0.5, 2.0] {
            let cfg = UdtwConfig { kind, ..UdtwConfig::with_gamma(0.1) };
            let sigma = VarianceMatrix::constant(a.len(), b.len(), var)?;
            let r = cfg.eval(&a, &b, &sigma)?;
            println!("{:8} var={var:<4} distance={:.6} penalty={:+.6}", kind.name(), r.distance, r.penalty);
        }
    }
    Ok(())
}
