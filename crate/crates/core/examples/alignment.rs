//! Soft alignments sharpen toward the hard DTW path as gamma shrinks.

use udtw::alignment::{dtw_hard, PlanShape};
use udtw::numerics::Gamma;
use udtw::softdtw::soft_alignment;
use udtw::udtw::{weighted_cost, BaseDistanceKind, VarianceMatrix};
use udtw::TimeSeries;

fn main() -> udtw::Result<()> {
    let a = TimeSeries::univariate(vec![0.0, 0.0, 1.0, 2.0, 1.0]);
    let b = TimeSeries::univariate(vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    let (cost, _) = weighted_cost(&a, &b, &VarianceMatrix::ones(5, 5), BaseDistanceKind::Normal)?;
    let shape = PlanShape::new(5, 5)?;
    let (hard, path) = dtw_hard(&cost, &shape)?;
    println!("hard DTW {hard}, path {:?}", path.cells());
    for g in [10.0, 1.0, 0.1, 0.01] {
        let (value, al) = soft_alignment(&cost, Gamma::new(g)?, &shape)?;
        println!("gamma {g}: sdtw {value:.4}");
        for m in 0..5 {
            let row: Vec<String> = al.row(m).iter().map(|v| format!("{v:.3}")).collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
