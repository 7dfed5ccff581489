//! Nearest-centroid and k-NN accuracy on a synthetic dataset with
//! validation-selected gamma and beta.

use udtw::classify::{eval_split, Classifier, Distance, EvalPlan};
use udtw::data::{synth, SynthKind};

fn main() -> udtw::Result<()> {
    let ds = synth(SynthKind::Control, 60, 0)?;
    let plan = EvalPlan {
        classifiers: vec![Classifier::Centroid, Classifier::Knn { k: 1 }],
        distances: vec![Distance::Euclidean, Distance::Dtw, Distance::Sdtw, Distance::Udtw],
        gammas: vec![0.1, 1.0],
        betas: vec![0.0, 0.05],
        ..EvalPlan::default()
    };
    let report = eval_split(&ds, &plan)?;
    println!("{}: train {} / val {} / test {}", report.dataset, report.n_train, report.n_val, report.n_test);
    for r in &report.rows {
        println!(
            "{:<22} {:<10} gamma={:<5} beta={:<5} val={:.3} test={:.3}",
            format!("{:?}", r.classifier),
            r.distance.name(),
            r.gamma.map_or("-".into(), |g| g.to_string()),
            r.beta.map_or("-".into(), |b| b.to_string()),
            r.val_accuracy,
            r.test_accuracy
        );
    }
    Ok(())
}
