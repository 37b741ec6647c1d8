use chive::model::ModelKind;
use chive::training::{objective_grad_check, ObjectiveCheckConfig};

fn check(kind: ModelKind) {
    let config = ObjectiveCheckConfig::default();
    assert!(config.trees >= 20);
    let report = objective_grad_check(kind, &config).unwrap();
    assert_eq!(report.trees.len(), config.trees);
    let words: std::collections::BTreeSet<usize> = report.trees.iter().map(|t| t.words).collect();
    assert!(words.contains(&1) && words.iter().any(|w| *w >= 5), "{words:?}");
    for tree in &report.trees {
        assert!(
            tree.max_relative_error < 1e-5,
            "{kind} {}: {:?}",
            tree.utterance_id,
            tree.worst
        );
    }
    assert!(report.max_relative_error < 1e-5);
}

#[test]
fn chive_objective_gradients_match_finite_differences() {
    check(ModelKind::Chive);
}

#[test]
fn baseline_objective_gradients_match_finite_differences() {
    check(ModelKind::Baseline);
}
