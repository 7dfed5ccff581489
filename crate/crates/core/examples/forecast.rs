//! Train forecasters under each loss on ECG-like series and compare test
//! metrics.

use udtw::data::{split, synth, SynthKind};
use udtw::forecast::{eval_forecaster, train_forecaster, EvalConfig, ForecastConfig, LossConfig, LossKind, Metric};

fn main() -> udtw::Result<()> {
    let ds = synth(SynthKind::EcgLike, 100, 0)?;
    let (train, _, test) = split(&ds, [0.5, 0.0, 0.5], 0, false)?;
    let eval = EvalConfig { gamma: 0.1, model_sigma: false };
    for kind in [LossKind::Euclid, LossKind::Sdtw, LossKind::Udtw] {
        let cfg = ForecastConfig::new(LossConfig::new(kind, 0.1, 0.1)?);
        let fit = train_forecaster(&train.series, &cfg)?;
        let t = eval_forecaster(&fit.model, &test.series, &Metric::ALL, &cfg.split, &eval)?;
        let cells: Vec<String> = t.iter().map(|(k, v)| format!("{k} {:.3}±{:.3}", v.mean, v.std)).collect();
        println!("{:<6} {}", kind.name(), cells.join("  "));
    }
    Ok(())
}
