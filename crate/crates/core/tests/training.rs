mod common;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effalign::objective::{
    ce_loss, gradient_check, loss_gradients, total_loss, ContextTarget, LossConfig, TrainingSet,
};
use effalign::surrogate::{holdout_split, train, Optimizer, Sampling, SurrogateModel, TrainerConfig};
use effalign::{
    causal_effect, model_effect, CausalEffectVector, Dataset, DifferentiableModel, Error, Level,
    OptionDistribution, RespondentRecord,
};

use common::*;

fn random_ce(rng: &mut ChaCha8Rng, k: usize) -> CausalEffectVector {
    let mut dist = || {
        let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        OptionDistribution::from_weights(&w).unwrap()
    };
    causal_effect(&dist(), &dist()).unwrap()
}

#[test]
fn ce_loss_is_the_mean_of_per_edit_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let model: Vec<_> = (0..100).map(|_| random_ce(&mut rng, 5)).collect();
    let data: Vec<_> = (0..100).map(|_| random_ce(&mut rng, 5)).collect();
    let mut sum = 0.0;
    for (m, d) in model.iter().zip(&data) {
        sum += direct_cdf_distance(m.values(), d.values());
    }
    assert!((ce_loss(&model, &data).unwrap() - sum / 100.0).abs() <= 1e-12);
    assert!(ce_loss(&model[..3], &data[..2]).is_err());
}

#[test]
fn total_loss_projects_onto_each_objective() {
    let (_, data, _) = population(2, 4, &["USA"], 30, 31, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    let mut model = SurrogateModel::for_dataset(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for p in model.parameters_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let anchor = total_loss(&model, &set, &LossConfig::weighted(1.0, 0.0).unwrap()).unwrap();
    let ce = total_loss(&model, &set, &LossConfig::weighted(0.0, 1.0).unwrap()).unwrap();
    let half = total_loss(&model, &set, &LossConfig::weighted(0.5, 0.5).unwrap()).unwrap();
    assert_eq!(anchor.total, anchor.anchor_loss);
    assert_eq!(ce.total, ce.ce_loss);
    assert!((half.total - 0.5 * (anchor.total + ce.total)).abs() <= 1e-12);
    let per_edit: f64 = ce.per_context.iter().map(|c| c.d_cdf).sum::<f64>() / set.len() as f64;
    assert!((ce.ce_loss - per_edit).abs() <= 1e-12);
}

#[test]
fn ce_gradient_vanishes_where_model_effects_match_the_data() {
    let (_, data, _) = population(2, 4, &["USA"], 30, 32, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    let mut model = SurrogateModel::for_dataset(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for p in model.parameters_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let matched: Vec<ContextTarget> = set
        .targets()
        .iter()
        .map(|t| ContextTarget { data_effect: model_effect(&model, &t.context).unwrap(), ..t.clone() })
        .collect();
    let matched = TrainingSet::from_targets(matched).unwrap();
    let report = loss_gradients(&model, &matched, &LossConfig::effects_only()).unwrap();
    assert!(report.ce_loss <= 1e-12);
    assert!(report.gradient.iter().all(|g| g.abs() <= 1e-9), "max {:?}", report.gradient.iter().fold(0.0f64, |a, g| a.max(g.abs())));
}

#[test]
fn library_gradient_check_agrees_with_finite_differences() {
    let (_, data, _) = population(2, 3, &["USA", "NGA"], 20, 33, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    let mut model = SurrogateModel::for_dataset(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for p in model.parameters_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    for config in [LossConfig::anchor_only(), LossConfig::effects_only(), LossConfig::weighted(0.4, 0.6).unwrap()] {
        let check = gradient_check(&model, &set, &config, 1e-5).unwrap();
        assert_eq!(check.parameters, model.parameters().len());
        assert!(check.max_relative_error <= 1e-5, "{check:?}");
    }
}

/// Two cells of one edit, answered with a skewed distribution.
fn single_edit_dataset() -> Dataset {
    let schema = effalign::AttributeSchema::default();
    let questions = likert_questions(2, 4, 1);
    let mut records = Vec::new();
    for mask in [0b0000u32, 0b0001] {
        for i in 0..40 {
            let answer = [1, 2, 2, 3, 2, 4, 2, 2][i % 8];
            records.push(RespondentRecord {
                country: "USA".into(),
                attribute_values: schema.assignment_of(mask),
                answers: BTreeMap::from([("Q1".to_string(), answer), ("Q2".to_string(), 5 - answer)]),
                weight: 1.0,
            });
        }
    }
    Dataset::new(schema, questions, records).unwrap()
}

#[test]
fn anchoring_beats_the_uniform_baseline() {
    let data = single_edit_dataset();
    let contexts = data.enumerate_contexts(10);
    assert_eq!(contexts.len(), 2);
    let set = TrainingSet::build(&data, &contexts).unwrap();
    let config = TrainerConfig { epochs_stage2: 0, ..TrainerConfig::default() };
    let out = train(SurrogateModel::for_dataset(&data).unwrap(), &set, &LossConfig::default(), &config).unwrap();
    let first = out.curve.first().unwrap().anchor;
    let last = total_loss(&out.model, &set, &LossConfig::anchor_only()).unwrap().anchor_loss;
    assert!((first - 4f64.ln()).abs() <= 1e-12);
    assert!(last < 4f64.ln());
    assert!(out.curve.iter().all(|p| p.stage == 1));
}

#[test]
fn training_recovers_the_generating_effects() {
    let (_, data, oracle) = population(2, 5, &["USA"], 500, 34, Sampling::Quota);
    let contexts = data.enumerate_contexts(10);
    let set = TrainingSet::build(&data, &contexts).unwrap();
    let out = train(SurrogateModel::for_dataset(&data).unwrap(), &set, &LossConfig::default(), &TrainerConfig::default())
        .unwrap();
    let final_ce = total_loss(&out.model, &set, &LossConfig::effects_only()).unwrap().ce_loss;
    assert!(final_ce <= 1e-3, "ce_loss {final_ce}");
    for ctx in &contexts {
        let linf = model_effect(&out.model, ctx).unwrap().linf_distance(&oracle.effect(ctx).unwrap()).unwrap();
        assert!(linf <= 0.02, "{ctx:?}: {linf}");
    }
    let stage1 = out.curve.iter().filter(|p| p.stage == 1).count();
    assert_eq!(stage1, 300);
    assert_eq!(out.curve.len(), 1800);
}

#[test]
fn divergence_is_reported_with_a_diagnostic() {
    let (_, data, _) = population(1, 3, &["USA"], 20, 35, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    let config = TrainerConfig { optimizer: Optimizer::GradientDescent, ..Default::default() };
    let mut init = SurrogateModel::for_dataset(&data).unwrap();
    init.base_mut("Q1").unwrap()[0] = f64::INFINITY;
    init.country_mut("Q1", "USA").unwrap()[0] = f64::NEG_INFINITY;
    match train(init, &set, &LossConfig::default(), &config) {
        Err(Error::Diverged { stage, step, detail }) => {
            assert_eq!((stage, step), (1, 0));
            assert!(detail.contains("finite"), "{detail}");
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.curve.len())),
    }
}

#[test]
fn empty_holdout_keeps_everything_in_train() {
    let (_, data, _) = population(2, 3, &["USA"], 12, 36, Sampling::Random);
    let contexts = data.enumerate_contexts(10);
    let (train_ctx, test_ctx) = holdout_split(data.schema(), &contexts, &[]).unwrap();
    assert_eq!(train_ctx, contexts);
    assert!(test_ctx.is_empty());
}

#[test]
fn one_held_out_cell_moves_four_edits_per_question() {
    let (_, data, _) = population(3, 3, &["USA", "NGA"], 12, 37, Sampling::Random);
    let schema = data.schema().clone();
    let contexts = data.enumerate_contexts(10);
    for mask in 0..schema.cell_count() {
        let held = schema.assignment_of(mask);
        let (train_ctx, test_ctx) = holdout_split(&schema, &contexts, std::slice::from_ref(&held)).unwrap();
        assert_eq!(test_ctx.len(), 4 * 3 * 2);
        assert_eq!(train_ctx.len() + test_ctx.len(), contexts.len());
        for ctx in &test_ctx {
            let (s1, s0) = ctx.endpoints();
            assert!(s1.assignments == held || s0.assignments == held);
        }
    }
}

#[test]
fn held_out_groups_never_appear_in_training_edits() {
    let (_, data, _) = population(3, 3, &["USA", "NGA"], 12, 38, Sampling::Random);
    let schema = data.schema().clone();
    let held = vec![
        schema.assignment_from_labels(&["Female", "College Educated", "Urban", "Married"]).unwrap(),
        schema.assignment_from_labels(&["Male", "Not College Educated", "Rural", "Not Married"]).unwrap(),
    ];
    assert_eq!(schema.mask_of(&held[0]).unwrap(), 0b0001);
    assert_eq!(schema.mask_of(&held[1]).unwrap(), 0b1110);
    let (train_ctx, test_ctx) = holdout_split(&schema, &data.enumerate_contexts(10), &held).unwrap();
    assert_eq!(test_ctx.len(), 8 * 3 * 2);
    for ctx in &train_ctx {
        for level in Level::BOTH {
            assert!(!held.contains(&ctx.endpoint(level).assignments));
        }
    }
    let set = TrainingSet::build(&data, &train_ctx).unwrap();
    assert!(set.contexts().all(|c| !test_ctx.contains(c)));
}
