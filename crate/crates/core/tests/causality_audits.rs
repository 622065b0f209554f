mod common;

use nonlocal_core::causality::{
    local_outcome_prob, pauli_observables, remote_samples, signaling_score, LocalObservable, MeasurementModel,
    AUDIT_SEED, HAAR_SAMPLES,
};
use nonlocal_core::meters::{prepare_bank, MeterBank};
use nonlocal_core::statevec::{pauli_x, pauli_z, random_ket, spin_x, spin_y, spin_z};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn meter_models() -> Vec<(&'static str, MeasurementModel)> {
    let sz = vec![(spin_z(), 0), (spin_z(), 1)];
    let sx = vec![(spin_x(), 0), (spin_x(), 1)];
    let sy = vec![(spin_y(), 0), (spin_y(), 1)];
    let far = vec![(spin_y(), 0), (spin_x(), 1)];
    let mixed = vec![(pauli_z(), 0), (pauli_x(), 1)];
    let half = MeterBank::fit_sum(&sz).unwrap();
    vec![
        ("total spin z", MeasurementModel::meter_sum(vec![2, 2], &sz, &half).unwrap()),
        (
            "sequential z then x",
            MeasurementModel::meter_sum(vec![2, 2], &sz, &half).unwrap().then_bank(&sx, &half).unwrap(),
        ),
        (
            "y then y and x",
            MeasurementModel::meter_sum(vec![2, 2], &sy, &half).unwrap().then_bank(&far, &half).unwrap(),
        ),
        ("z plus x", MeasurementModel::meter_sum(vec![2, 2], &mixed, &prepare_bank(2, 5).unwrap()).unwrap()),
        (
            "parity",
            MeasurementModel::meter_sum(vec![2, 2], &mixed, &MeterBank::fit_modular(&mixed, 4.0).unwrap()).unwrap(),
        ),
    ]
}

#[test]
fn meter_models_pass_the_full_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (name, model) in meter_models() {
        let psi = random_ket(vec![2, 2], &mut rng).unwrap();
        for (remote, observed) in [(1, 0), (0, 1)] {
            let r = signaling_score(
                &model,
                &psi,
                &remote_samples(remote, 2, HAAR_SAMPLES, AUDIT_SEED),
                &pauli_observables(observed),
            )
            .unwrap();
            assert!(r.max_deviation < 1e-9, "{name}: {r:?}");
        }
    }
}

#[test]
fn ideal_bell_measurement_is_causal() {
    let bell = nonlocal_core::bell::bell_projectors();
    let model = MeasurementModel::ideal(vec![2, 2], &bell).unwrap();
    let psi = random_ket(vec![2, 2], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let r = signaling_score(&model, &psi, &remote_samples(1, 2, 20, 1), &pauli_observables(0)).unwrap();
    assert!(r.max_deviation < 1e-9, "bell basis is causal: {r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_are_bounded_and_complete(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = &meter_models()[0].1;
        let psi = random_ket(vec![2, 2], &mut rng).unwrap();
        let obs = common::rotated_observable(&[-1.0, 0.5], &mut rng);
        let mut total = 0.0;
        for v in [-1.0, 0.5] {
            let p = local_outcome_prob(model, &psi, &LocalObservable::new(1, &obs, v, "A").unwrap()).unwrap();
            prop_assert!((-1e-10..=1.0 + 1e-10).contains(&p));
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_model_is_born_rule(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_ket(vec![2, 2], &mut rng).unwrap();
        let obs = LocalObservable::new(0, &pauli_z(), 1.0, "Z").unwrap();
        let p = local_outcome_prob(&MeasurementModel::identity(vec![2, 2]), &psi, &obs).unwrap();
        let born = psi.amps()[0].norm_sqr() + psi.amps()[1].norm_sqr();
        prop_assert!((p - born).abs() < 1e-12);
    }
}
