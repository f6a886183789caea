mod common;

use avda::networks::{DiscriminatorMode, ParamGroup};
use common::*;

fn check(seed: u64, mode: DiscriminatorMode, hidden: Vec<usize>) {
    let b = tiny_bundle(seed, mode, hidden);
    for case in loss_cases(seed, mode) {
        let r = fd_audit(&b, &case);
        assert!(r.max_rel < FD_TOLERANCE, "{} ({mode:?}, seed {seed}): rel {:e}", case.name, r.max_rel);
        assert_eq!(r.max_unreached, 0.0, "{} leaks gradient outside {:?}", case.name, case.reach);
        assert!(r.min_reached_norm > 0.0, "{} leaves a claimed group untouched", case.name);
    }
}

#[test]
fn every_loss_matches_finite_differences() {
    check(1, DiscriminatorMode::ClassConditional, vec![6]);
    check(2, DiscriminatorMode::ClassConditional, vec![5, 4]);
}

#[test]
fn binary_discriminator_losses_match_finite_differences() {
    check(3, DiscriminatorMode::Binary, vec![6]);
}

#[test]
fn discriminator_step_reaches_only_the_discriminator() {
    let case = loss_cases(9, DiscriminatorMode::ClassConditional).into_iter().find(|c| c.name == "discriminator").unwrap();
    assert_eq!(case.reach, vec![ParamGroup::Discriminator]);
    let r = fd_audit(&tiny_bundle(9, DiscriminatorMode::ClassConditional, vec![4]), &case);
    assert_eq!(r.max_unreached, 0.0);
}
