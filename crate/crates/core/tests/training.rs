use ceg_core::classical::{ClassicalModel, IntensityBound};
use ceg_core::data::split_dataset;
use ceg_core::eval::{evaluate, test_loglik, EvalConfig};
use ceg_core::kde::KdeConfig;
use ceg_core::nets::{Architecture, CegModel, Standardization};
use ceg_core::train::{train, TrainConfig};
use ceg_core::StreamKey;

#[test]
fn training_improves_heldout_fit_on_self_exciting_data() {
    let truth = ClassicalModel::SelfExciting { mu: 0.1, beta: 0.1 };
    let data = truth
        .simulate_dataset(40, 100.0, IntensityBound::Adaptive, 5, 0)
        .unwrap();
    let (tr, te) = split_dataset(&data, 0.8, 6).unwrap();
    let arch = Architecture {
        hidden_dim: 16,
        generator_widths: vec![16, 16],
        ..Architecture::new(0)
    };
    let init = CegModel::init(arch, Standardization::fit(&tr), false, StreamKey::new(7)).unwrap();
    let cfg = TrainConfig {
        epochs: 15,
        lr: 1e-2,
        batch_size: 8,
        sample_count: 32,
        ..TrainConfig::default()
    };
    let trained = train(init.clone(), &tr, None, &cfg).unwrap().model;

    let kde = KdeConfig::default();
    let before = test_loglik(&init, &te, 200, &kde, 9).unwrap();
    let after = test_loglik(&trained, &te, 200, &kde, 9).unwrap();
    assert!(after > before, "held-out loglik {before} -> {after}");

    let ecfg = EvalConfig {
        sample_count: 200,
        grid_points: 5,
        ..EvalConfig::default()
    };
    let r0 = evaluate(&init, &truth, &te, &ecfg).unwrap().report;
    let r1 = evaluate(&trained, &truth, &te, &ecfg).unwrap().report;
    assert!(r1.mre_f < r0.mre_f, "mre_f {} -> {}", r0.mre_f, r1.mre_f);
    assert_eq!(r1.n_events, te.total_events());
    for v in [r1.test_ll_per_event, r1.truth_ll_per_event, r1.mre_f, r1.mre_lambda] {
        assert!(v.is_finite());
    }
}

#[test]
fn evaluation_is_deterministic_given_seed() {
    let truth = ClassicalModel::SelfCorrecting { mu: 1.0, alpha: 1.0 };
    let data = truth.simulate_dataset(3, 10.0, IntensityBound::Adaptive, 1, 0).unwrap();
    let model = CegModel::init(
        Architecture::new(0),
        Standardization::fit(&data),
        false,
        StreamKey::new(2),
    )
    .unwrap();
    let cfg = EvalConfig {
        sample_count: 50,
        grid_points: 4,
        ..EvalConfig::default()
    };
    let a = evaluate(&model, &truth, &data, &cfg).unwrap();
    let b = evaluate(&model, &truth, &data, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.rows, b.rows);
}
