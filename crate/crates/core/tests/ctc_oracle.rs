//! CTC forward-backward and prefix scoring against exhaustive alignment
//! enumeration.

use ctxasr::ctc::{ctc_loss, CtcPrefixScorer};
use ctxasr::Error;
mod common;

use common::oracles::{all_alignments, prob_of, random_log_post, random_target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BLANK: usize = 0;
const EOS: usize = usize::MAX;

#[test]
fn forward_backward_matches_exhaustive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut feasible = 0;
    for case in 0..300 {
        let frames = rng.random_range(1..=6);
        let vocab = rng.random_range(2..=4);
        let lp = random_log_post(&mut rng, frames, vocab);
        let target = random_target(&mut rng, vocab);
        let table = all_alignments(&lp, vocab);
        let p = prob_of(&table, &target);
        match ctc_loss(&lp, &target, BLANK) {
            Ok(r) => {
                assert!(p > 0.0, "case {case}: loss returned for an unreachable target");
                let expected = -p.ln();
                assert!(
                    (r.nll - expected).abs() < 1e-10,
                    "case {case}: frames {frames} vocab {vocab} target {target:?}: {} vs {expected}",
                    r.nll
                );
                feasible += 1;
            }
            Err(Error::InfeasibleTarget { .. }) => assert_eq!(p, 0.0, "case {case}"),
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(feasible >= 100, "only {feasible} feasible cases");
}

#[test]
fn enumerated_sequence_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        let frames = rng.random_range(1..=5);
        let vocab = rng.random_range(2..=4);
        let lp = random_log_post(&mut rng, frames, vocab);
        let table = all_alignments(&lp, vocab);
        let total: f64 = table.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

/// Sums `p(y)` over all complete sequences `y` reachable from `state` by
/// prefix extension, up to `frames` labels.
fn prefix_tree_mass(
    scorer: &CtcPrefixScorer,
    state: &ctxasr::ctc::CtcPrefixState,
    log_prefix: f64,
    depth: usize,
    vocab: usize,
) -> f64 {
    let (_, end) = scorer.extend(state, EOS).unwrap();
    let mut mass = (log_prefix + end).exp();
    if depth > 0 {
        for u in 1..vocab {
            let (next, inc) = scorer.extend(state, u).unwrap();
            if inc.is_finite() {
                mass += prefix_tree_mass(scorer, &next, log_prefix + inc, depth - 1, vocab);
            }
        }
    }
    mass
}

#[test]
fn prefix_scores_partition_probability_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..40 {
        let frames = rng.random_range(1..=5);
        let vocab = rng.random_range(2..=4);
        let lp = random_log_post(&mut rng, frames, vocab);
        let scorer = CtcPrefixScorer::new(&lp, BLANK, EOS);
        let mass = prefix_tree_mass(&scorer, &scorer.initial(), 0.0, frames, vocab);
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
    }
}

#[test]
fn prefix_probability_equals_mass_of_its_extensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let frames = rng.random_range(1..=6);
        let vocab = rng.random_range(2..=4);
        let lp = random_log_post(&mut rng, frames, vocab);
        let prefix = random_target(&mut rng, vocab);
        let scorer = CtcPrefixScorer::new(&lp, BLANK, EOS);
        let mut st = scorer.initial();
        let mut log_prefix = 0.0;
        for &u in &prefix {
            let (n, inc) = scorer.extend(&st, u).unwrap();
            st = n;
            log_prefix += inc;
        }
        let expected: f64 = all_alignments(&lp, vocab)
            .iter()
            .filter(|(y, _)| y.starts_with(&prefix))
            .map(|e| e.1)
            .sum();
        assert!((log_prefix.exp() - expected).abs() < 1e-10);
        assert!((st.log_prefix.exp() - expected).abs() < 1e-10);
    }
}

#[test]
fn termination_matches_ctc_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    while checked < 200 {
        let frames = rng.random_range(1..=12);
        let vocab = rng.random_range(2..=6);
        let lp = random_log_post(&mut rng, frames, vocab);
        let target: Vec<usize> = (0..rng.random_range(0..=5))
            .map(|_| rng.random_range(1..vocab))
            .collect();
        let Ok(r) = ctc_loss(&lp, &target, BLANK) else {
            continue;
        };
        let scorer = CtcPrefixScorer::new(&lp, BLANK, EOS);
        let seq = scorer.sequence_log_prob(&target).unwrap();
        assert!((seq + r.nll).abs() < 1e-8, "{seq} vs {}", -r.nll);
        checked += 1;
    }
}

#[test]
fn finalized_prefix_cannot_be_extended() {
    let lp = vec![vec![0.5_f64.ln(), 0.5_f64.ln()]];
    let scorer = CtcPrefixScorer::new(&lp, BLANK, EOS);
    let (done, _) = scorer.extend(&scorer.initial(), EOS).unwrap();
    assert!(matches!(scorer.extend(&done, 1), Err(Error::PrefixFinalized)));
}
