//! A Sakoe-Chiba band restricts the plan and raises the distance of shifted
//! series.

use udtw::alignment::{count_paths, Band, PlanShape};
use udtw::udtw::{UdtwConfig, VarianceMatrix};
use udtw::TimeSeries;

fn main() -> udtw::Result<()> {
    let n = 24;
    let a = TimeSeries::univariate((0..n).map(|k| (k as f64 * 0.4).sin()).collect());
    let b = TimeSeries::univariate((0..n).map(|k| ((k as f64 - 4.0) * 0.4).sin()).collect());
    let sigma = VarianceMatrix::ones(n, n);
    for band in [None, Some(Band::Absolute(8.0)), Some(Band::Absolute(2.0)), Some(Band::Absolute(0.0))] {
        let cfg = UdtwConfig { band, ..UdtwConfig::with_gamma(0.1) };
        let paths = count_paths(&PlanShape::new(n, n)?.with_band(band)?);
        let r = cfg.eval(&a, &b, &sigma)?;
        println!("band {:>5}: {paths:>32} paths, distance {:.4}", band.map_or("none".to_string(), |b| b.radius().to_string()), r.distance);
    }
    Ok(())
}
