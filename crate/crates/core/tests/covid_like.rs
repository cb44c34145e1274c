use hte_policy::datagen::{gen_covid_like, COVID_DAYS_CUTOFF};
use hte_policy::distill_hte::{fit_mtdt, pairwise_effects, MtdtConfig};
use hte_policy::teacher::{fit_tlearner, predict_potential, TeacherConfig};
use hte_policy::{Node, ScalarizationWeights};

#[test]
fn explanation_tree_splits_first_on_days() {
    let w = ScalarizationWeights::ones(1);
    let mut hits = 0;
    let mut seen = Vec::new();
    for seed in 0..10 {
        let (table, _) = gen_covid_like(20_000, seed).unwrap();
        let model = fit_tlearner(&table, &TeacherConfig::default()).unwrap();
        let preds = predict_potential(&model, table.features()).unwrap();
        let cfg = MtdtConfig { max_depth: Some(2), seed, ..MtdtConfig::default() };
        let fit = fit_mtdt(&pairwise_effects(&preds, 1).unwrap(), &w, &table, &cfg).unwrap();
        if let Node::Split { feature, threshold, .. } = fit.tree.tree.root {
            seen.push((feature, threshold));
            if feature == 0 && (threshold - COVID_DAYS_CUTOFF).abs() < 1.0 {
                hits += 1;
            }
        }
    }
    assert!(hits >= 9, "top splits {seen:?}");
}
