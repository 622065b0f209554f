//! Bell states, Bell-basis measurement and the shared-pair resource pool.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::branch::Chooser;
use crate::error::{Error, Result};
use crate::statevec::{self, c, pauli_x, pauli_y, pauli_z, Ket, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BellKind {
    PsiMinus,
    PsiPlus,
    PhiMinus,
    PhiPlus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [BellKind::PsiMinus, BellKind::PsiPlus, BellKind::PhiMinus, BellKind::PhiPlus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BellKind> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BellKind::PsiMinus => "PsiMinus",
            BellKind::PsiPlus => "PsiPlus",
            BellKind::PhiMinus => "PhiMinus",
            BellKind::PhiPlus => "PhiPlus",
        }
    }

    /// Whether the teleported state arrives as the Pauli-x or Pauli-y image,
    /// i.e. with its z value flipped.
    pub fn flips_z(self) -> bool {
        matches!(self, BellKind::PhiMinus | BellKind::PhiPlus)
    }
}

pub fn make_bell(kind: BellKind) -> Ket {
    let h = FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    let amps = match kind {
        BellKind::PsiMinus => [z, c(h, 0.0), c(-h, 0.0), z],
        BellKind::PsiPlus => [z, c(h, 0.0), c(h, 0.0), z],
        BellKind::PhiMinus => [c(h, 0.0), z, z, c(-h, 0.0)],
        BellKind::PhiPlus => [c(h, 0.0), z, z, c(h, 0.0)],
    };
    Ket::new(vec![2, 2], amps.to_vec()).expect("Bell amplitudes are normalized")
}

pub fn bell_projectors() -> Vec<Operator> {
    BellKind::ALL.iter().map(|&k| statevec::projector(&make_bell(k))).collect()
}

/// Bell-basis measurement of two qubits; the post-state keeps all subsystems.
pub fn bell_measure(psi: &Ket, pair: (usize, usize), chooser: &mut dyn Chooser) -> Result<(BellKind, Ket)> {
    for s in [pair.0, pair.1] {
        let d = *psi.dims().get(s).ok_or(Error::IndexOutOfRange { index: s, count: psi.num_subsystems() })?;
        if d != 2 {
            return Err(Error::DimensionMismatch(format!("subsystem {s} is not a qubit")));
        }
    }
    let m = statevec::measure_trusted(psi, &[pair.0, pair.1], &bell_projectors(), chooser)?;
    let kind = BellKind::from_index(m.outcome).ok_or_else(|| Error::Internal("bell outcome".into()))?;
    Ok((kind, m.post))
}

/// π rotation undoing the distortion left by a Bell outcome, R_k(π) = −iσ_k.
pub fn pauli_correction(kind: BellKind) -> Operator {
    let minus_i = c(0.0, -1.0);
    let p = match kind {
        BellKind::PsiMinus => return Operator::identity(vec![2]),
        BellKind::PsiPlus => pauli_z(),
        BellKind::PhiMinus => pauli_x(),
        BellKind::PhiPlus => pauli_y(),
    };
    Operator::unitary(vec![2], p.mat() * minus_i).expect("scaled Pauli is unitary")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EbitPool {
    pub kind: BellKind,
    pub available: usize,
    pub consumed: usize,
}

impl EbitPool {
    pub fn new(kind: BellKind, available: usize) -> Self {
        Self { kind, available, consumed: 0 }
    }

    /// The resource default for stator-based protocols.
    pub fn stator(available: usize) -> Self {
        Self::new(BellKind::PhiPlus, available)
    }

    /// The resource default for teleportation-based protocols.
    pub fn teleport(available: usize) -> Self {
        Self::new(BellKind::PsiMinus, available)
    }

    pub fn total(&self) -> usize {
        self.available + self.consumed
    }

    pub fn draw(&mut self) -> Result<Ket> {
        if self.available == 0 {
            return Err(Error::PoolExhausted);
        }
        self.available -= 1;
        self.consumed += 1;
        Ok(make_bell(self.kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::{enumerate, trial_sampler, Sampler};
    use crate::statevec::{apply, project_out, random_ket, tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bell_states_are_orthonormal() {
        for a in BellKind::ALL {
            for b in BellKind::ALL {
                let ip = make_bell(a).inner(&make_bell(b));
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((ip - c(e, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bell_kets_match_definitions() {
        let up_down = Ket::from_digits(vec![2, 2], &[0, 1]).unwrap();
        let down_up = Ket::from_digits(vec![2, 2], &[1, 0]).unwrap();
        let expected = Ket::superpose(&[(c(1.0, 0.0), &up_down), (c(-1.0, 0.0), &down_up)]).unwrap();
        assert!(make_bell(BellKind::PsiMinus).same_ray(&expected, 1e-15));
        let uu = Ket::from_digits(vec![2, 2], &[0, 0]).unwrap();
        let dd = Ket::from_digits(vec![2, 2], &[1, 1]).unwrap();
        let expected = Ket::superpose(&[(c(1.0, 0.0), &uu), (c(1.0, 0.0), &dd)]).unwrap();
        assert!(make_bell(BellKind::PhiPlus).same_ray(&expected, 1e-15));
    }

    #[test]
    fn measuring_a_bell_pair_is_deterministic() {
        let b = enumerate(|ch| Ok(bell_measure(&make_bell(BellKind::PhiPlus), (0, 1), ch)?.0)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].value, BellKind::PhiPlus);
    }

    #[test]
    fn up_up_splits_between_phi_states() {
        let uu = Ket::from_digits(vec![2, 2], &[0, 0]).unwrap();
        let b = enumerate(|ch| Ok(bell_measure(&uu, (0, 1), ch)?.0)).unwrap();
        assert_eq!(b.len(), 2);
        for br in b {
            assert!(matches!(br.value, BellKind::PhiPlus | BellKind::PhiMinus));
            assert!((br.probability - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn non_qubit_pair_is_rejected() {
        let k = Ket::basis(vec![3, 2], 0).unwrap();
        assert!(bell_measure(&k, (0, 1), &mut trial_sampler(0, 0)).is_err());
    }

    #[test]
    fn correction_is_an_involution_up_to_phase() {
        for k in BellKind::ALL {
            let r = pauli_correction(k);
            let sq = r.compose(&r).unwrap();
            let phase = sq.mat()[(0, 0)];
            assert!((sq.mat() - Operator::identity(vec![2]).mat() * phase).iter().all(|z| z.norm() < 1e-12));
        }
    }

    /// |χ⟩_C |Ψ−⟩_AB, Bell measurement on (C, A), correction on B.
    fn teleport_branches(chi: &Ket) -> Vec<(BellKind, f64, f64)> {
        let full = tensor(chi, &make_bell(BellKind::PsiMinus));
        enumerate(|ch| {
            let (kind, post) = bell_measure(&full, (0, 1), ch)?;
            let b = project_out(&post, &[0, 1], &make_bell(kind))?;
            let fixed = apply(&pauli_correction(kind), &b, &[0])?;
            let raw = b.fidelity(chi);
            Ok((kind, fixed.fidelity(chi), raw))
        })
        .unwrap()
        .into_iter()
        .map(|br| {
            assert!((br.probability - 0.25).abs() < 1e-12);
            br.value
        })
        .collect()
    }

    #[test]
    fn teleportation_identity_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let chi = random_ket(vec![2], &mut rng).unwrap();
            let branches = teleport_branches(&chi);
            assert_eq!(branches.len(), 4);
            for (kind, fixed, raw) in branches {
                assert!(fixed >= 1.0 - 1e-10, "{kind:?}");
                if kind == BellKind::PsiMinus {
                    assert!(raw >= 1.0 - 1e-10);
                }
            }
        }
    }

    #[test]
    fn maximally_mixed_pair_gives_uniform_outcomes() {
        // Half of each of two singlets is measured: the pair is maximally mixed.
        let state = tensor(&make_bell(BellKind::PsiMinus), &make_bell(BellKind::PsiMinus));
        let n = 10_000;
        let mut counts = [0usize; 4];
        for t in 0..n {
            let mut s: Sampler<_> = trial_sampler(5, t);
            let (k, _) = bell_measure(&state, (0, 2), &mut s).unwrap();
            counts[k.index()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn pool_accounting() {
        let mut p = EbitPool::stator(2);
        assert_eq!(p.draw().unwrap(), make_bell(BellKind::PhiPlus));
        p.draw().unwrap();
        assert_eq!(p.draw(), Err(Error::PoolExhausted));
        assert_eq!((p.available, p.consumed, p.total()), (0, 2, 2));
        assert_eq!(EbitPool::teleport(1).kind, BellKind::PsiMinus);
    }
}
