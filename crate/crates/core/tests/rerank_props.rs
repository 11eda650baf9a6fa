mod common;

use proptest::prelude::*;

use common::select_best_oracle;
use locedit::energy::EnergyModel;
use locedit::rerank::{
    enumerate_hypotheses, evaluate_hypotheses, rerank, select_best, Reranker,
    DEFAULT_EXPLOSION_GUARD,
};
use locedit::synth::rerank_instance;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn full_beam_matches_exhaustive(seed in any::<u64>()) {
        let inst = rerank_instance(seed, 3, 3).unwrap();
        let energy = EnergyModel::bind(inst.terms.clone(), &inst.adapters).unwrap();
        let b = inst.candidates.product() as usize;
        let ex = rerank(&inst.masked, &inst.candidates, Reranker::Exhaustive, 1, DEFAULT_EXPLOSION_GUARD, &energy).unwrap();
        let beam = rerank(&inst.masked, &inst.candidates, Reranker::BeamOverall, b, DEFAULT_EXPLOSION_GUARD, &energy).unwrap();
        prop_assert_eq!(ex.best.text, beam.best.text);
    }

    #[test]
    fn select_best_matches_filter_then_argmin(seed in any::<u64>()) {
        let inst = rerank_instance(seed, 3, 4).unwrap();
        let energy = EnergyModel::bind(inst.terms.clone(), &inst.adapters).unwrap();
        let mut hyps = enumerate_hypotheses(&inst.masked, &inst.candidates, DEFAULT_EXPLOSION_GUARD).unwrap();
        evaluate_hypotheses(&mut hyps, &energy).unwrap();
        prop_assert_eq!(select_best(&hyps, &inst.terms).unwrap(), select_best_oracle(&hyps, &inst.terms));
    }

    #[test]
    fn enumeration_is_lexicographic_and_complete(seed in any::<u64>()) {
        let inst = rerank_instance(seed, 3, 3).unwrap();
        let hyps = enumerate_hypotheses(&inst.masked, &inst.candidates, DEFAULT_EXPLOSION_GUARD).unwrap();
        prop_assert_eq!(hyps.len() as u128, inst.candidates.product());
        prop_assert!(hyps.windows(2).all(|w| w[0].slot_choices < w[1].slot_choices));
    }
}

#[test]
fn guard_is_inclusive() {
    let inst = rerank_instance(3, 3, 3).unwrap();
    let n = inst.candidates.product() as usize;
    assert!(enumerate_hypotheses(&inst.masked, &inst.candidates, n).is_ok());
    if n > 1 {
        let err = enumerate_hypotheses(&inst.masked, &inst.candidates, n - 1).unwrap_err();
        assert!(matches!(err, locedit::Error::ExplosionGuard { .. }));
    }
}

#[test]
fn beam_never_beats_exhaustive_on_overall_energy() {
    for seed in 0..60 {
        let inst = rerank_instance(seed, 3, 3).unwrap();
        let energy = EnergyModel::bind(inst.terms.clone(), &inst.adapters).unwrap();
        let mut all = enumerate_hypotheses(&inst.masked, &inst.candidates, DEFAULT_EXPLOSION_GUARD).unwrap();
        evaluate_hypotheses(&mut all, &energy).unwrap();
        let floor = all
            .iter()
            .map(|h| h.report.as_ref().unwrap().overall)
            .fold(f64::INFINITY, f64::min);
        let beam = rerank(&inst.masked, &inst.candidates, Reranker::BeamOverall, 2, DEFAULT_EXPLOSION_GUARD, &energy).unwrap();
        assert!(beam.best.report.as_ref().unwrap().overall >= floor);
    }
}
