//! Correlated-meter protocols: total spin, singlet verification and the
//! canonical-form verification of M-party states.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::json;
use std::f64::consts::TAU;

use super::transcript::Transcript;
use super::{site_name, Inferred, Physical, PostState, ProtocolResult, ALICE};
use crate::branch::Chooser;
use crate::error::{Error, Result};
use crate::meters::{self, prepare_bank, MeterBank, MeterOutcome};
use crate::statevec::{spin_x, spin_y, spin_z, Ket, Operator};

fn require_qubit_pair(psi: &Ket) -> Result<()> {
    if psi.dims() != [2, 2] {
        return Err(Error::DimensionMismatch(format!("expected two qubits, got {:?}", psi.dims())));
    }
    Ok(())
}

/// Logs the couplings and dial readings of one bank; returns (site, record) pairs.
fn log_bank(
    t: &mut Transcript,
    stage: &str,
    bank: &MeterBank,
    sites: &[usize],
    out: &MeterOutcome,
) -> Vec<(String, String)> {
    for (r, &s) in sites.iter().enumerate() {
        t.local_op(
            &site_name(s),
            json!({"op": "couple", "stage": stage, "register": r, "d": bank.d(), "spacing": bank.spacing()}),
            &[],
        );
    }
    out.readouts
        .iter()
        .map(|rd| {
            let site = site_name(rd.site);
            let id = t.measure(
                &site,
                json!({"op": "readDial", "stage": stage, "register": rd.register, "outcome": rd.dial}),
                &[],
            );
            (site, id)
        })
        .collect()
}

/// Sends every record held away from `combiner` to it; returns all record ids.
fn gather(t: &mut Transcript, records: &[(String, String)], combiner: &str) -> Vec<String> {
    let mut sites: Vec<&String> = records.iter().map(|(s, _)| s).filter(|s| *s != combiner).collect();
    sites.sort();
    sites.dedup();
    for s in sites {
        let ids: Vec<String> = records.iter().filter(|(o, _)| o == s).map(|(_, r)| r.clone()).collect();
        t.exchange(s, combiner, &ids);
    }
    records.iter().map(|(_, r)| r.clone()).collect()
}

fn owners(n: usize) -> Vec<String> {
    (0..n).map(site_name).collect()
}

/// Total spin-z of two qubits with one meter per site.
pub fn aa_total_spin_z(psi: &Ket, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
    require_qubit_pair(psi)?;
    let obs = vec![(spin_z(), 0), (spin_z(), 1)];
    let bank = MeterBank::fit_sum(&obs)?;
    let out = meters::measure_sum(psi, &obs, &bank, chooser)?;
    let mut t = Transcript::new();
    let recs = log_bank(&mut t, "sz", &bank, &[0, 1], &out);
    let ids = gather(&mut t, &recs, ALICE);
    t.combine(ALICE, json!({"op": "combine", "rule": "negatedDialSum", "value": out.value}), &ids);
    let physical = Physical { ket: out.post.clone(), owners: owners(2) };
    Ok(ProtocolResult::build(
        "aa_total_spin_z",
        true,
        Inferred::Real(out.value),
        PostState::State(out.post),
        0,
        1,
        json!({"meterDim": bank.d(), "spacing": bank.spacing()}),
        t,
        Some(physical),
    ))
}

/// Singlet verification through the x, y and z total-spin banks.
pub fn aa_verify_singlet(psi: &Ket, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
    require_qubit_pair(psi)?;
    let mut t = Transcript::new();
    let mut state = psi.clone();
    let mut recs = Vec::new();
    let mut stages = Vec::new();
    let mut yes = true;
    for (axis, op) in [("z", spin_z()), ("x", spin_x()), ("y", spin_y())] {
        let obs = vec![(op.clone(), 0), (op, 1)];
        let bank = MeterBank::fit_sum(&obs)?;
        let out = meters::measure_sum(&state, &obs, &bank, chooser)?;
        recs.extend(log_bank(&mut t, axis, &bank, &[0, 1], &out));
        yes &= out.lattice_sum == 0;
        stages.push(json!({"axis": axis, "value": out.value}));
        state = out.post;
    }
    let ids = gather(&mut t, &recs, ALICE);
    t.combine(ALICE, json!({"op": "combine", "rule": "allZero", "verdict": yes}), &ids);
    let physical = Physical { ket: state.clone(), owners: owners(2) };
    Ok(ProtocolResult::build(
        "aa_verify_singlet",
        true,
        Inferred::Verdict(yes),
        PostState::State(state),
        0,
        1,
        json!({"stages": stages}),
        t,
        Some(physical),
    ))
}

/// Hermitian log of the cyclic shift |i⟩ → |i+1 mod K⟩, eigenvalues 2πj/K.
pub fn shift_generator(k: usize) -> Operator {
    let mut mat = DMatrix::<Complex64>::zeros(k, k);
    let kf = k as f64;
    for j in 0..k {
        let f: Vec<Complex64> =
            (0..k).map(|i| Complex64::from_polar(kf.sqrt().recip(), -TAU * (j * i) as f64 / kf)).collect();
        let theta = TAU * j as f64 / kf;
        for a in 0..k {
            for b in 0..k {
                mat[(a, b)] += f[a] * f[b].conj() * theta;
            }
        }
    }
    Operator::hermitian(vec![k], mat).expect("spectral sum is hermitian")
}

/// Verifies that `psi` has the canonical form Σᵢ |i…i⟩/√K.
pub fn verify_canonical_equal(psi: &Ket, m: usize, k: usize, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
    if m < 2 || k < 2 || psi.dims() != vec![k; m].as_slice() {
        return Err(Error::DimensionMismatch(format!("expected {m} parties of dimension {k}, got {:?}", psi.dims())));
    }
    let mut t = Transcript::new();
    let mut recs = Vec::new();
    let mut state = psi.clone();

    let first = Operator::diagonal(&(1..=k).map(|i| -(i as f64)).collect::<Vec<_>>());
    let other = Operator::diagonal(&(1..=k).map(|i| i as f64).collect::<Vec<_>>());
    let bank = prepare_bank(2, (2 * k - 1).max(3))?;
    let mut stage1 = true;
    for l in 1..m {
        let obs = vec![(first.clone(), 0), (other.clone(), l)];
        let out = meters::measure_sum(&state, &obs, &bank, chooser)?;
        recs.extend(log_bank(&mut t, &format!("index{l}"), &bank, &[0, l], &out));
        stage1 &= out.lattice_sum == 0;
        state = out.post;
    }

    let gen = shift_generator(k);
    let obs: Vec<(Operator, usize)> = (0..m).map(|s| (gen.clone(), s)).collect();
    let bank = MeterBank::modular(m, k, TAU / k as f64)?;
    let out = meters::measure_modular_sum(&state, &obs, TAU, &bank, chooser)?;
    let sites: Vec<usize> = (0..m).collect();
    recs.extend(log_bank(&mut t, "shift", &bank, &sites, &out));
    let stage2 = out.lattice_sum == 0;
    state = out.post;

    let yes = stage1 && stage2;
    let ids = gather(&mut t, &recs, ALICE);
    t.combine(ALICE, json!({"op": "combine", "rule": "allZero", "verdict": yes}), &ids);
    let physical = Physical { ket: state.clone(), owners: owners(m) };
    Ok(ProtocolResult::build(
        "verify_canonical_equal",
        true,
        Inferred::Verdict(yes),
        PostState::State(state),
        0,
        1,
        json!({"stage1": stage1, "stage2": stage2}),
        t,
        Some(physical),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::{make_bell, BellKind};
    use crate::branch::enumerate;
    use crate::statevec::{c, trace_distance};

    fn spin_basis(i: usize) -> Ket {
        let digits = [[0, 0], [1, 1], [0, 1], [1, 0]][i - 1];
        Ket::from_digits(vec![2, 2], &digits).unwrap()
    }

    fn verdict(r: &ProtocolResult) -> bool {
        matches!(r.inferred_value, Inferred::Verdict(true))
    }

    fn post(r: &ProtocolResult) -> &Ket {
        match &r.post_state {
            PostState::State(k) => k,
            PostState::Destroyed => panic!("destroyed"),
        }
    }

    #[test]
    fn total_spin_on_eigenstates() {
        let cases = [
            (make_bell(BellKind::PsiPlus), 0.0),
            (make_bell(BellKind::PsiMinus), 0.0),
            (spin_basis(1), 1.0),
            (spin_basis(2), -1.0),
        ];
        for (psi, expected) in cases {
            let b = enumerate(|ch| aa_total_spin_z(&psi, ch)).unwrap();
            for br in &b {
                let r = &br.value;
                assert_eq!(r.inferred_value, Inferred::Real(expected));
                assert!(post(r).fidelity(&psi) >= 1.0 - 1e-10);
                assert!(r.transcript.check_causality().is_empty());
                assert!(r.transcript.check_instantaneous().is_empty());
                assert!(r.resources_consistent());
            }
        }
    }

    #[test]
    fn total_spin_splits_superposition() {
        let psi = Ket::superpose(&[(c(1.0, 0.0), &spin_basis(1)), (c(1.0, 0.0), &spin_basis(4))]).unwrap();
        let b = enumerate(|ch| aa_total_spin_z(&psi, ch)).unwrap();
        let mut seen = Vec::new();
        for br in &b {
            let Inferred::Real(v) = br.value.inferred_value else { panic!() };
            let eigen = if v == 1.0 { spin_basis(1) } else { spin_basis(4) };
            assert!(post(&br.value).fidelity(&eigen) > 1.0 - 1e-10);
            seen.push((v, br.probability));
        }
        let p1: f64 = seen.iter().filter(|(v, _)| *v == 1.0).map(|(_, p)| p).sum();
        assert!((p1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn transcript_has_two_couplings_then_summation() {
        let r = aa_total_spin_z(&spin_basis(1), &mut crate::branch::trial_sampler(0, 0)).unwrap();
        let ev = r.transcript.events();
        assert_eq!(ev.iter().filter(|e| e.payload["op"] == "couple").count(), 2);
        assert!(ev.iter().filter(|e| e.kind.is_quantum() && e.payload["op"] != "combine").all(|e| e.tick == 0));
        assert_eq!(ev.last().unwrap().payload["op"], "combine");
        assert!(ev.last().unwrap().tick > 0);
    }

    fn yes_probability(branches: &[crate::branch::Branch<ProtocolResult>]) -> f64 {
        branches.iter().filter(|b| verdict(&b.value)).map(|b| b.probability).sum()
    }

    #[test]
    fn singlet_verification_examples() {
        let singlet = make_bell(BellKind::PsiMinus);
        let b = enumerate(|ch| aa_verify_singlet(&singlet, ch)).unwrap();
        assert!((yes_probability(&b) - 1.0).abs() < 1e-12);
        assert!(b.iter().all(|br| post(&br.value).fidelity(&singlet) > 1.0 - 1e-10));

        let phi = make_bell(BellKind::PhiPlus);
        let b = enumerate(|ch| aa_verify_singlet(&phi, ch)).unwrap();
        assert!(yes_probability(&b) < 1e-12);

        let mix = Ket::superpose(&[(c(1.0, 0.0), &singlet), (c(1.0, 0.0), &make_bell(BellKind::PsiPlus))]).unwrap();
        let b = enumerate(|ch| aa_verify_singlet(&mix, ch)).unwrap();
        assert!((yes_probability(&b) - 0.5).abs() < 1e-12);
        for br in b.iter().filter(|br| verdict(&br.value)) {
            assert!(post(&br.value).fidelity(&singlet) > 1.0 - 1e-10);
        }
    }

    #[test]
    fn shift_generator_exponentiates_to_the_shift() {
        for k in 2..5 {
            let g = shift_generator(k);
            let spaces = g.eigenspaces(1e-9).unwrap();
            let u = spaces
                .iter()
                .fold(DMatrix::<Complex64>::zeros(k, k), |acc, (v, p)| acc + p.mat() * Complex64::from_polar(1.0, *v));
            let mut shift = DMatrix::<Complex64>::zeros(k, k);
            for i in 0..k {
                shift[((i + 1) % k, i)] = c(1.0, 0.0);
            }
            assert!(trace_distance(&u, &shift) < 1e-10, "K = {k}");
        }
    }

    fn canonical_pair(theta: f64) -> Ket {
        let a = Ket::from_digits(vec![2, 2], &[0, 0]).unwrap();
        let b = Ket::from_digits(vec![2, 2], &[1, 1]).unwrap();
        Ket::superpose(&[(c(theta.cos(), 0.0), &a), (c(theta.sin(), 0.0), &b)]).unwrap()
    }

    #[test]
    fn canonical_equal_state_passes() {
        let psi = canonical_pair(std::f64::consts::FRAC_PI_4);
        let b = enumerate(|ch| verify_canonical_equal(&psi, 2, 2, ch)).unwrap();
        assert!((yes_probability(&b) - 1.0).abs() < 1e-12);
        assert!(b.iter().all(|br| post(&br.value).fidelity(&psi) > 1.0 - 1e-10));
    }

    #[test]
    fn mismatched_indices_fail_stage_one() {
        let psi = Ket::from_digits(vec![2, 2], &[0, 1]).unwrap();
        let b = enumerate(|ch| verify_canonical_equal(&psi, 2, 2, ch)).unwrap();
        assert!(b.iter().all(|br| br.value.details["stage1"] == false));
    }

    #[test]
    fn unequal_coefficients_pass_stage_two_by_overlap() {
        let phi = std::f64::consts::PI / 6.0;
        let psi = canonical_pair(phi);
        let b = enumerate(|ch| verify_canonical_equal(&psi, 2, 2, ch)).unwrap();
        assert!(b.iter().all(|br| br.value.details["stage1"] == true));
        let eq = canonical_pair(std::f64::consts::FRAC_PI_4);
        let expected = psi.fidelity(&eq);
        assert!((yes_probability(&b) - expected).abs() < 1e-12);
    }

    #[test]
    fn three_qutrit_canonical_state() {
        let terms: Vec<Ket> = (0..3).map(|i| Ket::from_digits(vec![3, 3, 3], &[i, i, i]).unwrap()).collect();
        let psi = Ket::superpose(&terms.iter().map(|k| (c(1.0, 0.0), k)).collect::<Vec<_>>()).unwrap();
        let b = enumerate(|ch| verify_canonical_equal(&psi, 3, 3, ch)).unwrap();
        assert!((yes_probability(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let psi = Ket::basis(vec![2, 3], 0).unwrap();
        assert!(verify_canonical_equal(&psi, 2, 2, &mut crate::branch::trial_sampler(0, 0)).is_err());
        assert!(aa_total_spin_z(&psi, &mut crate::branch::trial_sampler(0, 0)).is_err());
    }
}
