mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use effalign::bridge::{renormalize, OptionScore};
use effalign::metrics::{
    classify_misalignment, equity_report, question_score, wasserstein_1d, GapDefinition, Misalignment, ScoreTable,
    TierConfig,
};
use effalign::objective::{total_loss, LossConfig, TrainingSet};
use effalign::surrogate::{train, Sampling, SurrogateModel, TrainerConfig};
use effalign::survey::Attribute;
use effalign::{
    causal_effect, cdf_distance, delta_cdf, AttributeSchema, Dataset, DifferentiableModel, OptionDistribution,
    Question, ResponseModel, RespondentRecord,
};

fn weights(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|k| prop::collection::vec(0.001f64..10.0, k))
}

fn dist(w: &[f64]) -> OptionDistribution {
    OptionDistribution::from_weights(w).unwrap()
}

fn pair(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    k.prop_flat_map(|k| (prop::collection::vec(0.001f64..10.0, k), prop::collection::vec(0.001f64..10.0, k)))
}

fn triple(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    k.prop_flat_map(|k| {
        (
            prop::collection::vec(0.001f64..10.0, k),
            prop::collection::vec(0.001f64..10.0, k),
            prop::collection::vec(0.001f64..10.0, k),
        )
    })
}

proptest! {
    #[test]
    fn distributions_are_normalized(w in weights(2..=9)) {
        let d = dist(&w);
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        let s = OptionDistribution::softmax(&w).unwrap();
        prop_assert!((s.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn causal_effect_is_antisymmetric_and_mass_preserving((a, b) in pair(2..=9)) {
        let (a, b) = (dist(&a), dist(&b));
        let ab = causal_effect(&a, &b).unwrap();
        let ba = causal_effect(&b, &a).unwrap();
        for (x, y) in ab.values().iter().zip(ba.values()) {
            prop_assert_eq!(*x, -*y);
        }
        prop_assert!(ab.values().iter().sum::<f64>().abs() <= 1e-9);
        prop_assert!(delta_cdf(&ab).values().last().unwrap().abs() <= 1e-9);
    }

    #[test]
    fn cdf_distance_is_a_pseudometric((a, b, d, e) in (2usize..=7).prop_flat_map(|k| {
        let v = || prop::collection::vec(0.001f64..10.0, k);
        (v(), v(), v(), v())
    })) {
        let m = causal_effect(&dist(&a), &dist(&b)).unwrap();
        let n = causal_effect(&dist(&d), &dist(&e)).unwrap();
        prop_assert!(cdf_distance(&m, &n).unwrap() >= 0.0);
        prop_assert!(cdf_distance(&m, &m).unwrap() == 0.0);
        prop_assert!((cdf_distance(&m, &n).unwrap() - cdf_distance(&n, &m).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn wasserstein_is_a_metric((a, b, c) in triple(2..=7)) {
        let (a, b, c) = (dist(&a), dist(&b), dist(&c));
        let ab = wasserstein_1d(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - wasserstein_1d(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(wasserstein_1d(&a, &c).unwrap() <= ab + wasserstein_1d(&b, &c).unwrap() + 1e-12);
        prop_assert!(ab <= (a.len() - 1) as f64 + 1e-12);
    }

    #[test]
    fn question_score_is_in_unit_interval((a, b) in pair(2..=7)) {
        let s = question_score(&dist(&a), &dist(&b)).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn misalignment_classes_are_total_and_ordered(m in -2.0f64..2.0, d in -2.0f64..2.0, eps in 0.001f64..0.5) {
        let label = classify_misalignment(m, d, eps);
        if (m - d).abs() <= eps {
            prop_assert_eq!(label, Misalignment::Aligned);
        }
        if label == Misalignment::Flipped {
            prop_assert!(m * d < 0.0);
        }
        if label == Misalignment::Stereotyping {
            prop_assert!(m.abs() > d.abs());
        }
        if label == Misalignment::Erasure {
            prop_assert!(m.abs() < d.abs());
        }
    }

    #[test]
    fn equity_gap_ignores_a_constant_shift(
        scores in prop::collection::vec(50.0f64..95.0, 14 * 2),
        shift in -20.0f64..20.0,
        tier_gap in any::<bool>(),
    ) {
        let tiers = TierConfig {
            gap: if tier_gap { GapDefinition::TierMeanDifference } else { GapDefinition::MaxMinCountry },
            ..TierConfig::default()
        };
        let countries: Vec<String> = tiers.tiers.keys().cloned().collect();
        let mut plain = ScoreTable::default();
        let mut shifted = ScoreTable::default();
        for g in 1..=2 {
            for (i, c) in countries.iter().enumerate() {
                let v = scores[(g - 1) * 14 + i];
                plain.set("m", g, c, v);
                shifted.set("m", g, c, v + shift);
            }
        }
        let a = equity_report(&plain, &tiers, None).unwrap();
        let b = equity_report(&shifted, &tiers, None).unwrap();
        prop_assert!((a.models[0].mean_gap - b.models[0].mean_gap).abs() <= 1e-9);
    }

    #[test]
    fn renormalization_ignores_a_common_offset(ll in prop::collection::vec(-30.0f64..0.0, 2..8), c in -50.0f64..50.0) {
        let scores = |offset: f64| -> Vec<OptionScore> {
            ll.iter().enumerate().map(|(i, v)| OptionScore { option: i + 1, log_likelihood: v + offset }).collect()
        };
        let p = renormalize(&scores(0.0)).unwrap();
        let q = renormalize(&scores(c)).unwrap();
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (x, y) in p.probs().iter().zip(q.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

fn small_schema() -> AttributeSchema {
    AttributeSchema::new(vec![
        Attribute::new("a", "a0", "a1"),
        Attribute::new("b", "b0", "b1"),
        Attribute::new("c", "c0", "c1"),
    ])
    .unwrap()
}

fn small_questions() -> Vec<Question> {
    common::likert_questions(2, 3, 1)
}

fn records_strategy() -> impl Strategy<Value = Vec<RespondentRecord>> {
    let schema = small_schema();
    prop::collection::vec((0usize..2, 0u32..8, 1usize..=3, 1usize..=3, any::<bool>()), 1..200).prop_map(move |rows| {
        rows.into_iter()
            .map(|(c, mask, a1, a2, skip)| {
                let mut answers = BTreeMap::new();
                answers.insert("Q1".to_string(), a1);
                if !skip {
                    answers.insert("Q2".to_string(), a2);
                }
                RespondentRecord {
                    country: ["USA", "NGA"][c].to_string(),
                    attribute_values: schema.assignment_of(mask),
                    answers,
                    weight: 1.0,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contexts_ignore_record_order(records in records_strategy(), min_support in 0usize..4, rot in 0usize..200) {
        let forward = Dataset::new(small_schema(), small_questions(), records.clone()).unwrap();
        let mut shuffled = records;
        shuffled.reverse();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        let backward = Dataset::new(small_schema(), small_questions(), shuffled).unwrap();
        let contexts = forward.enumerate_contexts(min_support);
        prop_assert_eq!(&contexts, &backward.enumerate_contexts(min_support));
        for ctx in &contexts {
            let (s1, s0) = ctx.endpoints();
            prop_assert!(forward.respondent_count(&s1, &ctx.question_id).unwrap() >= min_support);
            prop_assert!(forward.respondent_count(&s0, &ctx.question_id).unwrap() >= min_support);
        }
    }

    #[test]
    fn coarser_personas_have_at_least_as_much_support(
        records in records_strategy(),
        mask in 0u32..8,
        keep in prop::collection::btree_set(prop::sample::select(vec!["a", "b", "c"]), 0..3),
    ) {
        let data = Dataset::new(small_schema(), small_questions(), records).unwrap();
        let fine = data.schema().full_persona("USA", mask);
        let keep: BTreeSet<String> = keep.into_iter().map(str::to_string).collect();
        let coarse = fine.project(&keep).unwrap();
        for q in ["Q1", "Q2"] {
            prop_assert!(data.respondent_count(&coarse, q).unwrap() >= data.respondent_count(&fine, q).unwrap());
        }
    }

    #[test]
    fn surrogate_effects_compose_in_log_odds(
        params in prop::collection::vec(-3.0f64..3.0, 200),
        x1 in 0u32..4,
        x2 in 0u32..4,
    ) {
        let schema = small_schema();
        let shapes = effalign::surrogate::shapes(&small_questions());
        let countries = vec!["USA".to_string(), "NGA".to_string()];
        let mut model = SurrogateModel::zeros(&schema, &shapes, &countries).unwrap();
        let n = model.parameters().len();
        model.parameters_mut().copy_from_slice(&params[..n]);
        // Toggle attribute `a` (bit 0) over two different backgrounds and countries.
        let log_odds_shift = |country: &str, rest: u32| -> Vec<f64> {
            let p1 = model.predict(&schema.full_persona(country, rest << 1 | 1), "Q1").unwrap();
            let p0 = model.predict(&schema.full_persona(country, rest << 1), "Q1").unwrap();
            (0..3).map(|k| (p1.probs()[k] / p1.probs()[0]).ln() - (p0.probs()[k] / p0.probs()[0]).ln()).collect()
        };
        let first = log_odds_shift("USA", x1);
        let second = log_odds_shift("NGA", x2);
        for (u, v) in first.iter().zip(&second) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let (_, data, _) = common::population(2, 4, &["USA"], 30, 5, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    for batch_size in [None, Some(7)] {
        let config = TrainerConfig { epochs_stage1: 20, epochs_stage2: 20, seed: 9, batch_size, ..Default::default() };
        let run = || train(SurrogateModel::for_dataset(&data).unwrap(), &set, &LossConfig::default(), &config).unwrap();
        let (a, b) = (run(), run());
        let bits = |c: &[effalign::surrogate::CurvePoint]| -> Vec<u64> {
            c.iter().flat_map(|p| [p.anchor.to_bits(), p.ce.to_bits(), p.total.to_bits()]).collect()
        };
        assert_eq!(bits(&a.curve), bits(&b.curve));
        assert_eq!(a.model.parameters(), b.model.parameters());
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (_, a, _) = common::population(2, 4, &["USA"], 10, 5, Sampling::Random);
    let (_, b, _) = common::population(2, 4, &["USA"], 10, 5, Sampling::Random);
    let (_, c, _) = common::population(2, 4, &["USA"], 10, 6, Sampling::Random);
    assert_eq!(a.records(), b.records());
    assert_ne!(a.records(), c.records());
}

#[test]
fn loss_is_nonnegative_and_combines_linearly() {
    let (_, data, _) = common::population(2, 4, &["USA"], 30, 5, Sampling::Random);
    let set = TrainingSet::build(&data, &data.enumerate_contexts(10)).unwrap();
    let model = SurrogateModel::for_dataset(&data).unwrap();
    let r = total_loss(&model, &set, &LossConfig::weighted(0.3, 0.7).unwrap()).unwrap();
    assert!(r.anchor_loss >= 0.0 && r.ce_loss >= 0.0);
    assert!((r.total - (0.3 * r.anchor_loss + 0.7 * r.ce_loss)).abs() <= 1e-12);
}
