//! No-signaling audits of measurement models.
//!
//! A [`MeasurementModel`] couples the system to an apparatus prepared in a
//! fixed state and evolves the pair with a circuit of unitary gates. The
//! auditor compares local outcome probabilities at one site before and after
//! an arbitrary unitary is applied at another.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::bell::{make_bell, BellKind};
use crate::branch::enumerate_limited;
use crate::error::{Error, Result};
use crate::meters::{self, prepare_bank, MeterBank};
use crate::protocols::{aa::shift_generator, ProtocolSpec};
use crate::statevec::{
    self, c, embed, haar_unitary, pauli_x, pauli_y, pauli_z, projector, reduced_density, rotation, Ket, Operator,
    MAX_DIM,
};

pub const UNITARY_TOL: f64 = 1e-10;
pub const EIGEN_TOL: f64 = 1e-10;
pub const AUDIT_SEED: u64 = 0x5eed_ca05;
pub const HAAR_SAMPLES: usize = 200;

#[derive(Debug, Clone)]
pub struct Gate {
    pub op: Operator,
    pub targets: Vec<usize>,
}

fn unitary_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let d = m.adjoint() * m - DMatrix::<Complex64>::identity(n, n);
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct MeasurementModel {
    system_dims: Vec<usize>,
    apparatus_init: Ket,
    circuit: Vec<Gate>,
}

impl MeasurementModel {
    pub fn new(system_dims: Vec<usize>, apparatus_init: Ket, circuit: Vec<Gate>) -> Result<Self> {
        if (apparatus_init.norm() - 1.0).abs() > statevec::NORM_TOL {
            return Err(Error::NotNormalized(apparatus_init.norm()));
        }
        let mut dims = system_dims.clone();
        dims.extend_from_slice(apparatus_init.dims());
        let total: usize = dims.iter().product();
        if total > MAX_DIM {
            return Err(Error::TooLarge(total));
        }
        for g in &circuit {
            let expect: Vec<usize> = g.targets.iter().map(|&t| dims.get(t).copied().unwrap_or(0)).collect();
            if expect != g.op.dims() {
                return Err(Error::DimensionMismatch(format!("gate on {:?} has dims {:?}", g.targets, g.op.dims())));
            }
            let defect = unitary_defect(g.op.mat());
            if defect > UNITARY_TOL {
                return Err(Error::WrongKind("unitary"));
            }
        }
        Ok(Self { system_dims, apparatus_init, circuit })
    }

    /// A single unitary acting on system ⊗ apparatus.
    pub fn from_unitary(system_dims: Vec<usize>, apparatus_init: Ket, u: Operator) -> Result<Self> {
        let targets = (0..system_dims.len() + apparatus_init.num_subsystems()).collect();
        Self::new(system_dims, apparatus_init, vec![Gate { op: u, targets }])
    }

    pub fn identity(system_dims: Vec<usize>) -> Self {
        Self { system_dims, apparatus_init: Ket::scalar(), circuit: Vec::new() }
    }

    /// Repeatable projective measurement: U = Σₖ Pₖ ⊗ Xᵏ with the record
    /// register starting in |0⟩.
    pub fn ideal(system_dims: Vec<usize>, projectors: &[Operator]) -> Result<Self> {
        let n: usize = system_dims.iter().product();
        let k = projectors.len();
        if k == 0 {
            return Err(Error::InvalidProjectors("empty set".into()));
        }
        let mut sum = DMatrix::<Complex64>::zeros(n, n);
        let mut u = DMatrix::<Complex64>::zeros(n * k, n * k);
        for (i, p) in projectors.iter().enumerate() {
            if p.dims() != system_dims.as_slice() {
                return Err(Error::DimensionMismatch(format!("projector dims {:?}", p.dims())));
            }
            let m = p.mat();
            let idem = (m * m - m).iter().map(|z| z.norm()).fold(0.0, f64::max);
            let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if idem > UNITARY_TOL || herm > UNITARY_TOL {
                return Err(Error::InvalidProjectors(format!("element {i} is not a projector")));
            }
            sum += m;
            let shift = DMatrix::from_fn(k, k, |r, col| if r == (col + i) % k { c(1.0, 0.0) } else { c(0.0, 0.0) });
            u += m.kronecker(&shift);
        }
        let complete = (sum - DMatrix::<Complex64>::identity(n, n)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if complete > UNITARY_TOL {
            return Err(Error::InvalidProjectors("projectors do not sum to the identity".into()));
        }
        let mut dims = system_dims.clone();
        dims.push(k);
        let op = Operator::unitary(dims, u)?;
        Self::from_unitary(system_dims, Ket::basis(vec![k], 0)?, op)
    }

    /// Ideal measurement of an observable's eigenspaces.
    pub fn ideal_of(op: &Operator) -> Result<Self> {
        let spaces: Vec<Operator> = op.eigenspaces(EIGEN_TOL)?.into_iter().map(|(_, p)| p).collect();
        Self::ideal(op.dims().to_vec(), &spaces)
    }

    /// Couplings of a correlated meter bank measuring Σᵢ Aᵢ.
    pub fn meter_sum(system_dims: Vec<usize>, observables: &[(Operator, usize)], bank: &MeterBank) -> Result<Self> {
        Self::identity(system_dims).then_bank(observables, bank)
    }

    /// Appends a further bank whose registers follow the existing apparatus.
    pub fn then_bank(self, observables: &[(Operator, usize)], bank: &MeterBank) -> Result<Self> {
        let first = self.system_dims.len() + self.apparatus_init.num_subsystems();
        let mut circuit = self.circuit;
        for (op, targets) in meters::coupling_circuit(observables, bank, first)? {
            circuit.push(Gate { op, targets });
        }
        let init = statevec::tensor(&self.apparatus_init, bank.state());
        Self::new(self.system_dims, init, circuit)
    }

    pub fn system_dims(&self) -> &[usize] {
        &self.system_dims
    }

    pub fn apparatus_dims(&self) -> &[usize] {
        self.apparatus_init.dims()
    }

    pub fn apparatus_init(&self) -> &Ket {
        &self.apparatus_init
    }

    pub fn circuit(&self) -> &[Gate] {
        &self.circuit
    }

    /// U(ψ ⊗ Φ).
    pub fn evolve(&self, psi: &Ket) -> Result<Ket> {
        if psi.dims() != self.system_dims.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {:?}, got {:?}",
                self.system_dims,
                psi.dims()
            )));
        }
        let mut full = statevec::tensor(psi, &self.apparatus_init);
        for g in &self.circuit {
            full = statevec::apply(&g.op, &full, &g.targets)?;
        }
        Ok(full)
    }

    /// The whole circuit as one matrix on system ⊗ apparatus.
    pub fn dense_unitary(&self) -> Result<Operator> {
        let mut dims = self.system_dims.clone();
        dims.extend_from_slice(self.apparatus_init.dims());
        let mut u = Operator::identity(dims.clone());
        for g in &self.circuit {
            u = embed(&g.op, &g.targets, &dims)?.compose(&u)?;
        }
        Ok(u)
    }
}

/// Outcome `eigenvalue` of a Hermitian operator on one site.
#[derive(Debug, Clone)]
pub struct LocalObservable {
    pub site: usize,
    pub label: String,
    pub eigenvalue: f64,
    projector: Operator,
}

impl LocalObservable {
    pub fn new(site: usize, op: &Operator, eigenvalue: f64, label: impl Into<String>) -> Result<Self> {
        if !op.is_hermitian() {
            return Err(Error::WrongKind("hermitian"));
        }
        let projector = op
            .eigenspaces(EIGEN_TOL)?
            .into_iter()
            .find(|(v, _)| (v - eigenvalue).abs() <= EIGEN_TOL)
            .map(|(_, p)| p)
            .ok_or(Error::NotEigenvalue(eigenvalue))?;
        Ok(Self { site, label: label.into(), eigenvalue, projector })
    }

    pub fn projector(&self) -> &Operator {
        &self.projector
    }
}

#[derive(Debug, Clone)]
pub struct LocalUnitary {
    pub site: usize,
    pub label: String,
    pub op: Operator,
}

impl LocalUnitary {
    pub fn new(site: usize, op: Operator, label: impl Into<String>) -> Result<Self> {
        if op.dims().len() != 1 || unitary_defect(op.mat()) > UNITARY_TOL {
            return Err(Error::WrongKind("single-site unitary"));
        }
        Ok(Self { site, label: label.into(), op })
    }
}

/// ⟨ψ,Φ| U† P U |ψ,Φ⟩ for the observable's projector.
pub fn local_outcome_prob(model: &MeasurementModel, psi: &Ket, obs: &LocalObservable) -> Result<f64> {
    let out = model.evolve(psi)?;
    statevec::weight(&obs.projector, &out, &[obs.site])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Witness {
    pub remote_site: usize,
    pub unitary: String,
    pub observed_site: usize,
    pub observable: String,
    pub outcome: f64,
    pub prob_before: f64,
    pub prob_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SignalingReport {
    pub max_deviation: f64,
    pub witness: Option<Witness>,
    pub samples_tested: usize,
}

/// Largest change of any local outcome probability caused by a remote unitary.
pub fn signaling_score(
    model: &MeasurementModel,
    psi: &Ket,
    u2: &[LocalUnitary],
    a1: &[LocalObservable],
) -> Result<SignalingReport> {
    for u in u2 {
        if u.site >= psi.num_subsystems() || u.op.dims() != [psi.dims()[u.site]] {
            return Err(Error::DimensionMismatch(format!("unitary {} does not fit site {}", u.label, u.site)));
        }
        if a1.iter().any(|o| o.site == u.site) {
            return Err(Error::InvalidArgument(format!("unitary {} acts on an observed site", u.label)));
        }
    }
    let base_state = model.evolve(psi)?;
    let base: Vec<f64> =
        a1.iter().map(|o| statevec::weight(&o.projector, &base_state, &[o.site])).collect::<Result<_>>()?;
    let per_sample: Vec<(f64, Option<Witness>)> = u2
        .par_iter()
        .map(|u| -> Result<(f64, Option<Witness>)> {
            let moved = statevec::apply(&u.op, psi, &[u.site])?;
            let out = model.evolve(&moved)?;
            let mut best = (0.0, None);
            for (o, &p0) in a1.iter().zip(&base) {
                let p = statevec::weight(&o.projector, &out, &[o.site])?;
                let dev = (p - p0).abs();
                if best.1.is_none() || dev > best.0 {
                    let w = Witness {
                        remote_site: u.site,
                        unitary: u.label.clone(),
                        observed_site: o.site,
                        observable: o.label.clone(),
                        outcome: o.eigenvalue,
                        prob_before: p0,
                        prob_after: p,
                    };
                    best = (dev, Some(w));
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut report = SignalingReport { max_deviation: 0.0, witness: None, samples_tested: u2.len() * a1.len() };
    for (dev, w) in per_sample {
        if report.witness.is_none() || dev > report.max_deviation {
            report.max_deviation = dev;
            report.witness = w;
        }
    }
    Ok(report)
}

/// Paulis, Hadamard and quarter-turn rotations for qubits; clock, shift and
/// Fourier matrices otherwise.
pub fn structured_unitaries(d: usize) -> Vec<(String, Operator)> {
    if d == 2 {
        let h = Operator::unitary(
            vec![2],
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)])
                * c(FRAC_1_SQRT_2, 0.0),
        )
        .expect("hadamard is unitary");
        let mut out = vec![
            ("X".to_string(), retag(pauli_x())),
            ("Y".to_string(), retag(pauli_y())),
            ("Z".to_string(), retag(pauli_z())),
            ("H".to_string(), h),
        ];
        for (name, axis) in [("x", [1.0, 0.0, 0.0]), ("y", [0.0, 1.0, 0.0]), ("z", [0.0, 0.0, 1.0])] {
            out.push((format!("R{name}(pi/4)"), rotation(axis, FRAC_PI_4)));
            out.push((format!("R{name}(pi/2)"), rotation(axis, PI / 2.0)));
        }
        return out;
    }
    let w = |k: usize| Complex64::from_polar(1.0, TAU * k as f64 / d as f64);
    let clock = DMatrix::from_fn(d, d, |r, col| if r == col { w(r) } else { c(0.0, 0.0) });
    let shift = DMatrix::from_fn(d, d, |r, col| if r == (col + 1) % d { c(1.0, 0.0) } else { c(0.0, 0.0) });
    let fourier = DMatrix::from_fn(d, d, |r, col| w(r * col) / (d as f64).sqrt());
    [("clock", clock), ("shift", shift), ("fourier", fourier)]
        .into_iter()
        .map(|(n, m)| (n.to_string(), Operator::unitary(vec![d], m).expect("unitary by construction")))
        .collect()
}

fn retag(op: Operator) -> Operator {
    Operator::unitary(op.dims().to_vec(), op.mat().clone()).expect("paulis are unitary")
}

/// `count` Haar unitaries; sample `i` draws from its own stream of `seed`.
pub fn haar_unitaries(d: usize, count: usize, seed: u64) -> Vec<(String, Operator)> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (format!("haar#{i}"), haar_unitary(d, &mut rng))
        })
        .collect()
}

/// Structured plus seeded Haar unitaries at `site`.
pub fn remote_samples(site: usize, d: usize, haar: usize, seed: u64) -> Vec<LocalUnitary> {
    structured_unitaries(d)
        .into_iter()
        .chain(haar_unitaries(d, haar, seed))
        .map(|(label, op)| LocalUnitary { site, label, op })
        .collect()
}

/// Both outcomes of σx, σy, σz at a qubit site.
pub fn pauli_observables(site: usize) -> Vec<LocalObservable> {
    let mut out = Vec::new();
    for (name, op) in [("X", pauli_x()), ("Y", pauli_y()), ("Z", pauli_z())] {
        for v in [1.0, -1.0] {
            out.push(LocalObservable::new(site, &op, v, name).expect("pauli spectrum is ±1"));
        }
    }
    out
}

/// Computational and Fourier basis projectors at a site of dimension `d`.
pub fn basis_observables(site: usize, d: usize) -> Vec<LocalObservable> {
    if d == 2 {
        return pauli_observables(site);
    }
    let mut out = Vec::new();
    for (name, u) in [("Z", None), ("F", Some(structured_unitaries(d).remove(2).1))] {
        for k in 0..d {
            let e = Ket::basis(vec![d], k).expect("basis index in range");
            let v = match &u {
                Some(f) => statevec::apply(f, &e, &[0]).expect("fourier applies"),
                None => e,
            };
            let p = projector(&v);
            out.push(LocalObservable::new(site, &p, 1.0, format!("{name}{k}")).expect("projector has eigenvalue 1"));
        }
    }
    out
}

/// ↑↑, ↓↓, ↑↓, ↓↑.
pub fn spin_basis() -> [Ket; 4] {
    let f = |a, b| Ket::from_digits(vec![2, 2], &[a, b]).expect("qubit digits");
    [f(0, 0), f(1, 1), f(0, 1), f(1, 0)]
}

/// {cosφ Ψ₃ + sinφ Ψ₄, −sinφ Ψ₃ + cosφ Ψ₄, Ψ₁, Ψ₂}.
pub fn phi_basis(phi: f64) -> [Ket; 4] {
    let [p1, p2, p3, p4] = spin_basis();
    let (s, co) = phi.sin_cos();
    let a = Ket::superpose(&[(c(co, 0.0), &p3), (c(s, 0.0), &p4)]).expect("unit combination");
    let b = Ket::superpose(&[(c(-s, 0.0), &p3), (c(co, 0.0), &p4)]).expect("unit combination");
    [a, b, p1, p2]
}

pub fn phi_model(phi: f64) -> Result<MeasurementModel> {
    let projectors: Vec<Operator> = phi_basis(phi).iter().map(projector).collect();
    MeasurementModel::ideal(vec![2, 2], &projectors)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PhiPoint {
    pub phi: f64,
    pub max_deviation: f64,
    pub witness: Option<Witness>,
}

/// Signaling of the ideal M_φ measurement on the singlet at φ = kπ/`points`.
pub fn phi_scan(points: usize, haar: usize, seed: u64) -> Result<Vec<PhiPoint>> {
    let psi = make_bell(BellKind::PsiMinus);
    let u2 = remote_samples(0, 2, haar, seed);
    let a1 = pauli_observables(1);
    (0..points)
        .map(|k| {
            let phi = k as f64 * PI / points as f64;
            let r = signaling_score(&phi_model(phi)?, &psi, &u2, &a1)?;
            Ok(PhiPoint { phi, max_deviation: r.max_deviation, witness: r.witness })
        })
        .collect()
}

/// A qutrit ⊗ qubit verification of Ψ₀ = (|00⟩ + |11⟩)/√2 with H₀ = span{|0⟩, |1⟩}.
#[derive(Debug, Clone)]
pub struct PvSetup {
    pub model: MeasurementModel,
    pub psi0: Ket,
    pub h0: Operator,
}

pub fn pv_setup() -> Result<PvSetup> {
    let dims = vec![3, 2];
    let psi0 = Ket::normalized(
        dims.clone(),
        vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
    )?;
    let index = vec![(Operator::diagonal(&[-1.0, -2.0, -3.0]), 0), (Operator::diagonal(&[1.0, 2.0]), 1)];
    let g2 = shift_generator(2);
    let mut g3 = DMatrix::<Complex64>::zeros(3, 3);
    g3.view_mut((0, 0), (2, 2)).copy_from(g2.mat());
    let g3 = Operator::hermitian(vec![3], g3)?;
    let shift = vec![(g3, 0), (g2, 1)];
    let model = MeasurementModel::meter_sum(dims, &index, &prepare_bank(2, 5)?)?
        .then_bank(&shift, &MeterBank::modular(2, 2, PI)?)?;
    let h0 = Operator::diagonal(&[1.0, 1.0, 0.0]);
    Ok(PvSetup { model, psi0, h0 })
}

impl PvSetup {
    /// Weight of `psi` outside H₀ ⊗ H⁽²⁾.
    pub fn leakage(&self, psi: &Ket) -> Result<f64> {
        Ok(1.0 - statevec::weight(&self.h0, psi, &[0])?)
    }

    /// Σᵢ cᵢ Uᵢ⁽²⁾ Ψ₀ with Gaussian cᵢ and Haar Uᵢ, normalized.
    pub fn random_h0_state<R: rand::Rng + ?Sized>(&self, terms: usize, rng: &mut R) -> Result<Ket> {
        let mut amps = vec![c(0.0, 0.0); self.psi0.dim()];
        for _ in 0..terms {
            let u = haar_unitary(2, rng);
            let coef: Complex64 = c(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
            let v = statevec::apply(&u, &self.psi0, &[1])?;
            amps.iter_mut().zip(v.amps()).for_each(|(a, b)| *a += coef * b);
        }
        Ket::normalized(self.psi0.dims().to_vec(), amps)
    }

    /// |2⟩ ⊗ (random qubit).
    pub fn random_complement_state<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Ket> {
        let q = statevec::random_ket(vec![2], rng)?;
        Ok(statevec::tensor(&Ket::basis(vec![3], 2)?, &q))
    }
}

/// max |p(ψᵢ) − p(Ψ₀)| over states in H₀ ⊗ H⁽²⁾.
pub fn check_pv_theorem1(setup: &PvSetup, states: &[Ket], obs: &LocalObservable) -> Result<f64> {
    let p0 = local_outcome_prob(&setup.model, &setup.psi0, obs)?;
    let mut spread: f64 = 0.0;
    for psi in states {
        let leak = setup.leakage(psi)?;
        if leak > EIGEN_TOL {
            return Err(Error::OutsideSubspace(leak));
        }
        spread = spread.max((local_outcome_prob(&setup.model, psi, obs)? - p0).abs());
    }
    Ok(spread)
}

/// |p(αψ′ + βψ″) − |α|² p(Ψ₀) − |β|² p(ψ″)|.
pub fn check_pv_theorem2(
    setup: &PvSetup,
    psi_p: &Ket,
    psi_pp: &Ket,
    alpha: Complex64,
    beta: Complex64,
    obs: &LocalObservable,
) -> Result<f64> {
    let leak = setup.leakage(psi_p)?;
    if leak > EIGEN_TOL {
        return Err(Error::OutsideSubspace(leak));
    }
    let inside = 1.0 - setup.leakage(psi_pp)?;
    if inside > EIGEN_TOL {
        return Err(Error::OutsideSubspace(inside));
    }
    let total = alpha.norm_sqr() + beta.norm_sqr();
    if (total - 1.0).abs() > EIGEN_TOL {
        return Err(Error::NotNormalized(total.sqrt()));
    }
    let psi = Ket::superpose(&[(alpha, psi_p), (beta, psi_pp)])?;
    let lhs = local_outcome_prob(&setup.model, &psi, obs)?;
    let rhs = alpha.norm_sqr() * local_outcome_prob(&setup.model, &setup.psi0, obs)?
        + beta.norm_sqr() * local_outcome_prob(&setup.model, psi_pp, obs)?;
    Ok((lhs - rhs).abs())
}

/// Ideal measurement of the projector onto α|↑↑⟩ + β|↓↓⟩ on that same state.
pub fn entangled_projector_signaling(alpha: f64, beta: f64, haar: usize, seed: u64) -> Result<SignalingReport> {
    let total = alpha * alpha + beta * beta;
    if (total - 1.0).abs() > EIGEN_TOL {
        return Err(Error::NotNormalized(total.sqrt()));
    }
    let psi0 = Ket::new(vec![2, 2], vec![c(alpha, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(beta, 0.0)])?;
    let p = projector(&psi0);
    let q = Operator::identity(vec![2, 2]).add(&p.scale(-1.0))?;
    let model = MeasurementModel::ideal(vec![2, 2], &[p, q])?;
    signaling_score(&model, &psi0, &remote_samples(1, 2, haar, seed), &pauli_observables(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DegenerateDemo {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Site-2 verification yes-probability after preparing |i₁⟩.
    pub yes_i1: f64,
    /// Same after preparing |i₂⟩.
    pub yes_i2: f64,
    pub report: SignalingReport,
}

/// Ideal measurement of |↓↓⟩⟨↓↓|, whose other eigenvalue is threefold
/// degenerate. Site 2 holds α₁|↑⟩ + α₂|↓⟩; site 1 holds |↑⟩ or, after a
/// remote flip, |↓⟩. Site 2 then checks whether its state survived.
pub fn degenerate_eigenstate_signal_demo(alpha1: f64) -> Result<DegenerateDemo> {
    if !(0.0..=1.0).contains(&alpha1) {
        return Err(Error::InvalidArgument(format!("alpha1 = {alpha1} outside [0, 1]")));
    }
    let alpha2 = (1.0 - alpha1 * alpha1).max(0.0).sqrt();
    let dd = projector(&Ket::from_digits(vec![2, 2], &[1, 1])?);
    let rest = Operator::identity(vec![2, 2]).add(&dd.scale(-1.0))?;
    let model = MeasurementModel::ideal(vec![2, 2], &[dd, rest])?;
    let chi = Ket::qubit(c(alpha1, 0.0), c(alpha2, 0.0))?;
    let check = LocalObservable::new(1, &projector(&chi), 1.0, "prepared")?;
    let i1 = statevec::tensor(&Ket::up(), &chi);
    let i2 = statevec::tensor(&Ket::down(), &chi);
    let yes_i1 = local_outcome_prob(&model, &i1, &check)?;
    let yes_i2 = local_outcome_prob(&model, &i2, &check)?;
    let flip = LocalUnitary::new(0, retag(pauli_x()), "X")?;
    let report = signaling_score(&model, &i1, &[flip], &[check])?;
    Ok(DegenerateDemo { alpha1, alpha2, yes_i1, yes_i2, report })
}

fn record_key(outcomes: &[Value]) -> String {
    serde_json::to_string(outcomes).expect("values serialize")
}

type SiteLaw = BTreeMap<String, BTreeMap<String, f64>>;

fn site_laws(spec: &ProtocolSpec, psi: &Ket, max_rounds: usize, max_branches: usize) -> Result<SiteLaw> {
    let branches = enumerate_limited(|ch| spec.run(psi, max_rounds, ch), max_branches)?;
    let mut law: SiteLaw = BTreeMap::new();
    for b in &branches {
        let t = &b.value.transcript;
        for site in t.sites() {
            *law.entry(site.clone()).or_default().entry(record_key(&t.site_outcomes(&site))).or_default() +=
                b.probability;
        }
    }
    Ok(law)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NoSignalReport {
    pub protocol: String,
    pub max_deviation: f64,
    pub per_site: BTreeMap<String, f64>,
    pub samples_tested: usize,
}

/// Compares each site's own record distribution with and without a remote
/// unitary applied to the input beforehand.
pub fn protocol_nosignal(
    spec: &ProtocolSpec,
    psi: &Ket,
    remote: &[LocalUnitary],
    max_rounds: usize,
    max_branches: usize,
) -> Result<NoSignalReport> {
    let n = psi.num_subsystems();
    let base = site_laws(spec, psi, max_rounds, max_branches)?;
    let mut per_site: BTreeMap<String, f64> = base.keys().map(|s| (s.clone(), 0.0)).collect();
    let mut samples = 0;
    for u in remote {
        if u.site >= n {
            return Err(Error::IndexOutOfRange { index: u.site, count: n });
        }
        let moved = statevec::apply(&u.op, psi, &[u.site])?;
        let law = site_laws(spec, &moved, max_rounds, max_branches)?;
        let owner = spec.owner(u.site, n);
        for (site, dev) in per_site.iter_mut() {
            if *site == owner {
                continue;
            }
            samples += 1;
            let empty = BTreeMap::new();
            let (a, b) = (base.get(site).unwrap_or(&empty), law.get(site).unwrap_or(&empty));
            for key in a.keys().chain(b.keys()) {
                let d = (a.get(key).unwrap_or(&0.0) - b.get(key).unwrap_or(&0.0)).abs();
                *dev = dev.max(d);
            }
        }
    }
    let max_deviation = per_site.values().copied().fold(0.0, f64::max);
    Ok(NoSignalReport { protocol: spec.name().into(), max_deviation, per_site, samples_tested: samples })
}

type Conditioned = BTreeMap<String, BTreeMap<String, DMatrix<Complex64>>>;

fn conditioned_states(spec: &ProtocolSpec, psi: &Ket, max_rounds: usize, max_branches: usize) -> Result<Conditioned> {
    let branches = enumerate_limited(|ch| spec.run(psi, max_rounds, ch), max_branches)?;
    let mut out: Conditioned = BTreeMap::new();
    for b in &branches {
        let t = &b.value.transcript;
        let phys = b
            .value
            .physical
            .as_ref()
            .ok_or_else(|| Error::Internal(format!("{} keeps no physical state", spec.name())))?;
        let mut sites = t.sites();
        sites.extend(phys.owners.iter().cloned());
        for site in sites {
            let held = phys.held_by(&site);
            let rho = if held.is_empty() {
                DMatrix::from_element(1, 1, c(1.0, 0.0))
            } else {
                reduced_density(&phys.ket, &held)?.mat().clone()
            };
            let weighted = rho * c(b.probability, 0.0);
            let key = record_key(&t.site_outcomes(&site));
            let slot = out.entry(site).or_default();
            match slot.get_mut(&key) {
                Some(acc) => *acc += weighted,
                None => {
                    slot.insert(key, weighted);
                }
            }
        }
    }
    Ok(out)
}

/// Per site, the largest trace distance between the record-conditioned
/// (unnormalized) local states produced by any two of the inputs.
pub fn erasure_distances(
    spec: &ProtocolSpec,
    inputs: &[Ket],
    max_rounds: usize,
    max_branches: usize,
) -> Result<BTreeMap<String, f64>> {
    let all: Vec<Conditioned> =
        inputs.iter().map(|psi| conditioned_states(spec, psi, max_rounds, max_branches)).collect::<Result<_>>()?;
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            for site in a.keys().chain(b.keys()) {
                let empty = BTreeMap::new();
                let (ma, mb) = (a.get(site).unwrap_or(&empty), b.get(site).unwrap_or(&empty));
                let entry = out.entry(site.clone()).or_insert(0.0);
                for key in ma.keys().chain(mb.keys()) {
                    let d = match (ma.get(key), mb.get(key)) {
                        (Some(x), Some(y)) if x.shape() == y.shape() => statevec::trace_distance(x, y),
                        (Some(x), Some(y)) => 0.5 * (x.trace().re + y.trace().re),
                        (Some(x), None) | (None, Some(x)) => 0.5 * x.trace().re,
                        (None, None) => 0.0,
                    };
                    *entry = entry.max(d);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::OpKind;
    use approx::assert_abs_diff_eq;

    fn kind(op: &Operator) -> OpKind {
        op.kind()
    }

    #[test]
    fn identity_model_gives_born_rule() {
        let psi = statevec::tensor(&Ket::plus(), &Ket::up());
        let m = MeasurementModel::identity(vec![2, 2]);
        let z = LocalObservable::new(0, &pauli_z(), 1.0, "Z").unwrap();
        let x = LocalObservable::new(0, &pauli_x(), 1.0, "X").unwrap();
        assert_abs_diff_eq!(local_outcome_prob(&m, &psi, &z).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(local_outcome_prob(&m, &psi, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn meter_model_singlet_marginal_is_half() {
        let obs = vec![(pauli_z(), 0), (pauli_z(), 1)];
        let model = MeasurementModel::meter_sum(vec![2, 2], &obs, &prepare_bank(2, 5).unwrap()).unwrap();
        let psi = make_bell(BellKind::PsiMinus);
        let up = LocalObservable::new(0, &statevec::spin_z(), 0.5, "Sz").unwrap();
        let down = LocalObservable::new(0, &statevec::spin_z(), -0.5, "Sz").unwrap();
        let a = local_outcome_prob(&model, &psi, &up).unwrap();
        let b = local_outcome_prob(&model, &psi, &down).unwrap();
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn non_eigenvalue_is_rejected() {
        assert!(matches!(LocalObservable::new(0, &pauli_z(), 0.5, "Z"), Err(Error::NotEigenvalue(_))));
    }

    #[test]
    fn circuit_and_dense_unitary_agree() {
        let obs = vec![(pauli_z(), 0), (pauli_x(), 1)];
        let model = MeasurementModel::meter_sum(vec![2, 2], &obs, &prepare_bank(2, 5).unwrap()).unwrap();
        let u = model.dense_unitary().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = statevec::random_ket(vec![2, 2], &mut rng).unwrap();
        let full = statevec::tensor(&psi, model.apparatus_init());
        let targets: Vec<usize> = (0..full.num_subsystems()).collect();
        let dense = statevec::apply(&u, &full, &targets).unwrap();
        assert!(dense.fidelity(&model.evolve(&psi).unwrap()) > 1.0 - 1e-12);
        assert_eq!(kind(&u), OpKind::Unitary);
    }

    #[test]
    fn meter_models_do_not_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = vec![(pauli_z(), 0), (pauli_z(), 1)];
        let model = MeasurementModel::meter_sum(vec![2, 2], &obs, &prepare_bank(2, 5).unwrap()).unwrap();
        let psi = statevec::random_ket(vec![2, 2], &mut rng).unwrap();
        let r = signaling_score(&model, &psi, &remote_samples(1, 2, 40, 1), &pauli_observables(0)).unwrap();
        assert!(r.max_deviation < 1e-9, "{r:?}");
        assert_eq!(r.samples_tested, (10 + 40) * 6);
    }

    #[test]
    fn remote_sample_on_observed_site_is_rejected() {
        let m = MeasurementModel::identity(vec![2, 2]);
        let u = remote_samples(0, 2, 0, 0);
        assert!(signaling_score(&m, &make_bell(BellKind::PsiMinus), &u, &pauli_observables(0)).is_err());
        assert!(LocalUnitary::new(0, pauli_z().scale(2.0), "2Z").is_err());
    }

    #[test]
    fn phi_deviation_matches_closed_form() {
        for k in 0..16 {
            let phi = k as f64 * PI / 16.0;
            let r = signaling_score(
                &phi_model(phi).unwrap(),
                &make_bell(BellKind::PsiMinus),
                &remote_samples(0, 2, 20, 5),
                &pauli_observables(1),
            )
            .unwrap();
            let expect = (4.0 * phi).sin().abs() / 2.0;
            assert!(r.max_deviation <= expect + 1e-9, "φ={phi}: {} > {expect}", r.max_deviation);
            assert!(r.max_deviation >= expect * 0.9 - 1e-9, "φ={phi}: {} ≪ {expect}", r.max_deviation);
        }
    }

    #[test]
    fn pv_theorems_hold_for_the_meter_verification() {
        let setup = pv_setup().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a1 = {
            let u = haar_unitary(3, &mut rng);
            let d = Operator::diagonal(&[0.3, -1.1, 2.0]);
            let m = u.mat() * d.mat() * u.mat().adjoint();
            Operator::hermitian(vec![3], (&m + m.adjoint()) * c(0.5, 0.0)).unwrap()
        };
        let eig = a1.eigenspaces(1e-9).unwrap()[1].0;
        let obs = LocalObservable::new(0, &a1, eig, "A").unwrap();
        let states: Vec<Ket> = (0..10).map(|_| setup.random_h0_state(3, &mut rng).unwrap()).collect();
        assert!(check_pv_theorem1(&setup, &states, &obs).unwrap() < 1e-9);
        assert_eq!(check_pv_theorem1(&setup, std::slice::from_ref(&setup.psi0), &obs).unwrap(), 0.0);
        let pp = setup.random_complement_state(&mut rng).unwrap();
        assert!(matches!(check_pv_theorem1(&setup, std::slice::from_ref(&pp), &obs), Err(Error::OutsideSubspace(_))));
        let r = check_pv_theorem2(&setup, &states[0], &pp, c(0.6, 0.0), c(0.0, 0.8), &obs).unwrap();
        assert!(r < 1e-9, "{r}");
        let id = LocalObservable::new(0, &Operator::identity(vec![3]), 1.0, "I").unwrap();
        assert!(check_pv_theorem2(&setup, &states[1], &pp, c(0.8, 0.0), c(0.6, 0.0), &id).unwrap() < 1e-12);
    }

    #[test]
    fn entangled_projector_cases() {
        let r = entangled_projector_signaling(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 30, 2).unwrap();
        assert!(r.max_deviation < 1e-9, "{r:?}");
        assert!(entangled_projector_signaling(1.0, 0.0, 30, 2).unwrap().max_deviation < 1e-9);
        let r = entangled_projector_signaling(0.8f64.sqrt(), 0.2f64.sqrt(), 30, 2).unwrap();
        assert!(r.max_deviation > 0.38, "{r:?}");
        assert!(entangled_projector_signaling(0.9, 0.9, 0, 2).is_err());
    }

    #[test]
    fn degenerate_demo_signals() {
        let d = degenerate_eigenstate_signal_demo(FRAC_1_SQRT_2).unwrap();
        assert_abs_diff_eq!(d.yes_i1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.yes_i2, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.report.max_deviation, 0.5, epsilon = 1e-12);
        let edge = degenerate_eigenstate_signal_demo(1.0).unwrap();
        assert!(edge.report.max_deviation < 1e-12);
    }

    #[test]
    fn shipped_protocols_do_not_signal_through_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let psi = statevec::random_ket(vec![2, 2], &mut rng).unwrap();
        for name in ["aa_total_spin_z", "gr_twisted_basis_measure", "vaidman_bipartite_measure"] {
            let spec = ProtocolSpec::from_name(name, None, &[2, 2]).unwrap();
            let remote: Vec<LocalUnitary> = remote_samples(1, 2, 2, 4).into_iter().step_by(3).collect();
            let r = protocol_nosignal(&spec, &psi, &remote, 1, 100_000).unwrap();
            assert!(r.max_deviation < 1e-9, "{name}: {r:?}");
        }
    }
}
