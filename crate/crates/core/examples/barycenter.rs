//! Barycenter of one CBF class, then a lambda sweep between two series.
//! The sweep uses `Σ = 1 + σ_μ`, so a large lambda drives `σ_μ` to zero.

use udtw::barycenter::{frechet_mean, interpolate_pair, BarycenterConfig, Sweep};
use udtw::data::{synth, SynthKind};
use udtw::numerics::Gamma;

fn main() -> udtw::Result<()> {
    let ds = synth(SynthKind::Cbf, 30, 1)?;
    let members: Vec<_> = ds.class_members(0).into_iter().take(10).cloned().collect();
    let cfg = BarycenterConfig {
        beta: 0.01,
        lambda: 0.1,
        gamma: Gamma::new(1.0)?,
        ..BarycenterConfig::default()
    };
    let b = frechet_mean(&members, 128, &cfg, None)?;
    println!(
        "{} iterations ({:?}), objective {:.3} -> {:.3}",
        b.iterations,
        b.stop,
        b.objective_trace[0],
        b.objective_trace.last().unwrap()
    );
    let max_sigma = b.sigma_mu.iter().copied().fold(0.0, f64::max);
    println!("largest sigma_mu {max_sigma:.3}");

    let sweep = Sweep::Lambda(vec![0.0, 1.0, 100.0, 1e6]);
    let pair_cfg = BarycenterConfig { beta: 0.1, ..cfg };
    for (lambda, bc) in interpolate_pair(&members[0], &members[1], &pair_cfg, &sweep)? {
        let top = bc.sigma_mu.iter().copied().fold(0.0, f64::max);
        println!("lambda {lambda:>9}: max sigma_mu = {top:.4}");
    }
    Ok(())
}
