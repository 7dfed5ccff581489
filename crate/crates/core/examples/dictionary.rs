//! Dictionary learning on two clusters: codes concentrate on the anchor of
//! each sample's own cluster.

use udtw::dictionary::{cluster_similarity, fit_dictionary, Dictionary};
use udtw::data::{synth, SynthKind};

fn main() -> udtw::Result<()> {
    let ds = synth(SynthKind::EcgLike, 20, 3)?;
    let dict = Dictionary::init_from(&ds.series, 2, 2, 3)?;
    let fit = fit_dictionary(&ds.series, dict, 20)?;
    println!(
        "objective {:.3} -> {:.3}",
        fit.objective_trace[0],
        fit.objective_trace.last().unwrap()
    );
    for (c, y) in fit.codes.iter().zip(&ds.labels).take(6) {
        println!("label {y}: code [{:.3}, {:.3}]", c[0], c[1]);
    }
    let (within, between) = cluster_similarity(&fit.codes, &ds.labels)?;
    println!("mean code similarity: within {within:.3}, between {between:.3}");
    Ok(())
}
