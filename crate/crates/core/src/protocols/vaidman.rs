//! Measurement of nonlocal observables by rounds of uncorrected teleportation.
//!
//! The register keeps its subsystem order while it travels; only the holder
//! changes. Every hop leaves a Pauli distortion known to the sender alone.
//! Alice undoes the distortions she can learn from the channel a hop arrived
//! on and assumes the rest trivial; a round succeeds when that assumption was
//! right, which the final holder can tell from its own records and channel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};
use std::f64::consts::FRAC_1_SQRT_2;

use super::transcript::Transcript;
use super::{gr::twisted_basis, Inferred, Physical, PostState, ProtocolResult, ALICE, BOB, COLLIN};
use crate::bell::{bell_measure, make_bell, pauli_correction, BellKind, EbitPool};
use crate::branch::Chooser;
use crate::error::{Error, Result};
use crate::statevec::{self, apply, c, measure_subsystem, project_out, Ket, Operator, MAX_DIM};

const BASIS_TOL: f64 = 1e-10;

/// Orthonormal eigenvectors of an observable with their eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    vectors: Vec<Ket>,
    values: Vec<f64>,
}

impl EigenBasis {
    pub fn new(vectors: Vec<Ket>, values: Vec<f64>) -> Result<Self> {
        let first = vectors.first().ok_or_else(|| Error::InvalidArgument("empty basis".into()))?;
        if vectors.len() != first.dim() || values.len() != vectors.len() {
            return Err(Error::DimensionMismatch("basis must span the register".into()));
        }
        for (i, a) in vectors.iter().enumerate() {
            if a.dims() != first.dims() {
                return Err(Error::DimensionMismatch("basis vectors of unequal dims".into()));
            }
            for b in &vectors[i + 1..] {
                if a.inner(b).norm() > BASIS_TOL {
                    return Err(Error::InvalidArgument("basis is not orthonormal".into()));
                }
            }
        }
        Ok(Self { vectors, values })
    }

    /// Eigenbasis of a Hermitian operator, ascending. A degenerate spectrum is
    /// rejected unless the operator is a multiple of the identity.
    pub fn from_operator(op: &Operator, tol: f64) -> Result<Self> {
        let spaces = op.eigenspaces(tol)?;
        let n = op.side();
        if spaces.len() == 1 {
            let mut b = Self::computational_on(op.dims().to_vec());
            b.values = vec![spaces[0].0; n];
            return Ok(b);
        }
        let mut vectors = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for (v, p) in &spaces {
            let rank = p.mat().trace().re.round() as usize;
            if rank != 1 {
                return Err(Error::Degenerate(format!("eigenvalue {v} has multiplicity {rank}")));
            }
            let col = (0..n).max_by(|&a, &b| p.mat()[(a, a)].re.total_cmp(&p.mat()[(b, b)].re)).expect("nonempty");
            let amps: Vec<Complex64> = (0..n).map(|i| p.mat()[(i, col)]).collect();
            vectors.push(Ket::normalized(op.dims().to_vec(), amps)?);
            values.push(*v);
        }
        Self::new(vectors, values)
    }

    fn computational_on(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        let vectors = (0..n).map(|i| Ket::basis(dims.clone(), i).expect("in range")).collect();
        Self { vectors, values: (1..=n).map(|i| i as f64).collect() }
    }

    /// z-product basis of `qubits` qubits with eigenvalues 1, 2, ….
    pub fn computational(qubits: usize) -> Self {
        Self::computational_on(vec![2; qubits])
    }

    /// (|0x⟩ ± |1x̄⟩)/√2 on three qubits with eigenvalues 1..8.
    pub fn ghz() -> Self {
        let dims = vec![2, 2, 2];
        let mut vectors = Vec::new();
        for x in 0..4 {
            for s in [1.0, -1.0] {
                let mut amps = vec![c(0.0, 0.0); 8];
                amps[x] = c(FRAC_1_SQRT_2, 0.0);
                amps[4 + (3 - x)] = c(s * FRAC_1_SQRT_2, 0.0);
                vectors.push(Ket::new(dims.clone(), amps).expect("unit vector"));
            }
        }
        Self { vectors, values: (1..=8).map(|i| i as f64).collect() }
    }

    pub fn vectors(&self) -> &[Ket] {
        &self.vectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> &[usize] {
        self.vectors[0].dims()
    }

    /// Whether every eigenvalue is the same, so any readout gives the answer.
    pub fn is_trivial(&self) -> bool {
        self.values.iter().all(|v| (v - self.values[0]).abs() <= 1e-12)
    }

    /// The observable Σ λₖ |vₖ⟩⟨vₖ|.
    pub fn observable(&self) -> Operator {
        let n = self.vectors.len();
        let mut mat = DMatrix::<Complex64>::zeros(n, n);
        for (v, k) in self.values.iter().zip(&self.vectors) {
            mat += statevec::projector(k).mat() * c(*v, 0.0);
        }
        Operator::hermitian(self.dims().to_vec(), mat).expect("spectral sum is hermitian")
    }

    /// V with the eigenvectors as columns; V† maps vₖ to |k⟩.
    pub fn to_z_product(&self) -> Operator {
        let n = self.vectors.len();
        let v = DMatrix::from_fn(n, n, |i, j| self.vectors[j].amps()[i]);
        Operator::unitary(self.dims().to_vec(), v.adjoint()).expect("orthonormal columns")
    }
}

/// Σ i |Ψi⟩⟨Ψi| over the twisted product basis.
pub fn twisted_observable() -> Operator {
    let basis = twisted_basis().to_vec();
    EigenBasis::new(basis, vec![1.0, 2.0, 3.0, 4.0]).expect("orthonormal").observable()
}

fn require_singlets(pool: &EbitPool) -> Result<()> {
    if pool.kind != BellKind::PsiMinus {
        return Err(Error::InvalidArgument(format!("teleportation needs singlets, pool holds {:?}", pool.kind)));
    }
    Ok(())
}

/// Teleports each source qubit through a fresh singlet without correcting.
/// The register keeps its layout; source positions now hold the far halves.
pub fn partial_teleport(
    psi: &Ket,
    sources: &[usize],
    pool: &mut EbitPool,
    chooser: &mut dyn Chooser,
) -> Result<(Vec<BellKind>, Ket)> {
    require_singlets(pool)?;
    if pool.available < sources.len() {
        return Err(Error::PoolExhausted);
    }
    if psi.dim() * 4 > MAX_DIM {
        return Err(Error::TooLarge(psi.dim() * 4));
    }
    let mut state = psi.clone();
    let mut kinds = Vec::with_capacity(sources.len());
    for &q in sources {
        if q >= state.num_subsystems() {
            return Err(Error::IndexOutOfRange { index: q, count: state.num_subsystems() });
        }
        let n = state.num_subsystems();
        let full = statevec::tensor(&state, &pool.draw()?);
        let (kind, post) = bell_measure(&full, (q, n), chooser)?;
        let far = project_out(&post, &[q, n], &make_bell(kind))?;
        state = statevec::move_subsystem(&far, n - 1, q)?;
        kinds.push(kind);
    }
    Ok((kinds, state))
}

/// Distortion a hop leaves on the register (inverse of the correction).
fn distortion(kinds: &[BellKind], qubits: &[usize], n: usize) -> Operator {
    (0..n)
        .map(|i| match qubits.iter().position(|&q| q == i) {
            Some(j) => pauli_correction(kinds[j]).adjoint(),
            None => Operator::identity(vec![2]),
        })
        .fold(Operator::identity(vec![]), |acc, op| acc.kron(&op))
}

fn all_trivial(kinds: &[BellKind]) -> bool {
    kinds.iter().all(|&k| k == BellKind::PsiMinus)
}

struct Hop {
    kinds: Vec<BellKind>,
    records: Vec<String>,
}

impl Hop {
    fn names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }
}

struct Run<'a> {
    state: Ket,
    pool: &'a mut EbitPool,
    t: Transcript,
    bell: usize,
}

impl Run<'_> {
    /// One teleportation leg; `None` when the pool cannot cover it.
    fn hop(
        &mut self,
        from: &str,
        qubits: &[usize],
        round: usize,
        leg: &str,
        channel: &[String],
        chooser: &mut dyn Chooser,
    ) -> Result<Option<Hop>> {
        if self.pool.available < qubits.len() {
            return Ok(None);
        }
        let mut kinds = Vec::new();
        let mut records = Vec::new();
        for &q in qubits {
            self.t.local_op(from, json!({"op": "ebitDraw", "round": round, "leg": leg, "qubit": q}), &[]);
            let (k, post) = partial_teleport(&self.state, &[q], self.pool, chooser)?;
            self.state = post;
            self.bell += 1;
            let rec = self.t.measure(
                from,
                json!({
                    "op": "bellMeasure", "round": round, "leg": leg, "qubit": q,
                    "channel": channel, "outcome": k[0].name(),
                }),
                &[],
            );
            kinds.push(k[0]);
            records.push(rec);
        }
        Ok(Some(Hop { kinds, records }))
    }

    /// z readout of the whole register at `site`; returns the raw bits.
    fn read_z(
        &mut self,
        site: &str,
        round: usize,
        uses: &[String],
        channel: &[String],
        chooser: &mut dyn Chooser,
    ) -> Result<(Vec<bool>, Vec<String>)> {
        let mut bits = Vec::new();
        let mut recs = Vec::new();
        for q in 0..self.state.num_subsystems() {
            let m = measure_subsystem(&self.state, q, chooser)?;
            self.state = m.post;
            bits.push(m.outcome == 1);
            recs.push(self.t.measure(
                site,
                json!({"op": "measureZ", "round": round, "qubit": q, "channel": channel, "outcome": m.outcome}),
                uses,
            ));
        }
        Ok((bits, recs))
    }
}

fn eigen_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| 2 * acc + b as usize)
}

fn flips(kinds: &[BellKind]) -> Vec<bool> {
    kinds.iter().map(|k| k.flips_z()).collect()
}

fn xor(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| x != y).collect()
}

fn check_register(psi: &Ket, basis: &EigenBasis, qubits: usize) -> Result<()> {
    if psi.dims() != vec![2; qubits].as_slice() {
        return Err(Error::DimensionMismatch(format!("expected {qubits} qubits, got {:?}", psi.dims())));
    }
    if basis.dims() != psi.dims() {
        return Err(Error::DimensionMismatch("observable does not act on the register".into()));
    }
    Ok(())
}

/// Ebits needed for `rounds` bipartite rounds with `k` qubits per site.
pub fn bipartite_ebits(k: usize, rounds: usize) -> usize {
    3 * k + rounds.saturating_sub(1) * 4 * k
}

/// Ebits needed for `rounds` three-party rounds.
pub fn three_party_ebits(rounds: usize) -> usize {
    8 + rounds.saturating_sub(1) * 9
}

#[allow(clippy::too_many_arguments)]
fn outcome(
    name: &str,
    run: Run,
    basis: &EigenBasis,
    holder: &str,
    readout: Option<(usize, Vec<bool>)>,
    rounds: usize,
    reason: &str,
    mut details: Value,
) -> ProtocolResult {
    let n = run.state.num_subsystems();
    let physical = Physical { ket: run.state, owners: vec![holder.to_string(); n] };
    let ebits = run.pool.consumed;
    debug_assert_eq!(ebits, run.bell);
    let (success, inferred) = match &readout {
        Some((k, _)) => (true, Inferred::Real(basis.values()[*k])),
        None => (false, Inferred::Failure(reason.into())),
    };
    if let (Some(obj), Some((k, bits))) = (details.as_object_mut(), &readout) {
        obj.insert("eigenIndex".into(), json!(k + 1));
        obj.insert("zRecord".into(), json!(bits.iter().map(|&b| b as u8).collect::<Vec<_>>()));
    }
    ProtocolResult::build(name, success, inferred, PostState::Destroyed, ebits, rounds, details, run.t, Some(physical))
}

/// Two-site measurement of the observable with eigenbasis `basis`; sites hold
/// `k` qubits each, Alice's first.
pub fn vaidman_bipartite_measure(
    psi: &Ket,
    basis: &EigenBasis,
    k: usize,
    pool: &mut EbitPool,
    max_rounds: usize,
    chooser: &mut dyn Chooser,
) -> Result<ProtocolResult> {
    const NAME: &str = "vaidman_bipartite_measure";
    let n = 2 * k;
    check_register(psi, basis, n)?;
    require_singlets(pool)?;
    if max_rounds == 0 || pool.available < bipartite_ebits(k, 1) {
        return Err(Error::PoolExhausted);
    }
    let to_z = basis.to_z_product();
    let all: Vec<usize> = (0..n).collect();
    let bob: Vec<usize> = (k..n).collect();
    let mut run = Run { state: psi.clone(), pool, t: Transcript::new(), bell: 0 };
    let mut known = Operator::identity(vec![2; n]);
    let mut channel: Vec<String> = Vec::new();
    let mut alice_recs: Vec<String> = Vec::new();
    let mut bob_recs: Vec<String> = Vec::new();

    for r in 1..=max_rounds {
        let sources = if r == 1 { &bob } else { &all };
        let Some(to_alice) = run.hop(BOB, sources, r, "toAlice", &[], chooser)? else {
            return Ok(outcome(NAME, run, basis, BOB, None, r - 1, "pool exhausted", json!({})));
        };
        bob_recs.extend(to_alice.records.iter().cloned());
        channel.extend(to_alice.records.iter().cloned());

        let w = to_z.compose(&known.adjoint())?;
        run.state = apply(&w, &run.state, &all)?;
        run.t.local_op(ALICE, json!({"op": "unitary", "round": r, "channel": channel}), &alice_recs);

        let Some(to_bob) = run.hop(ALICE, &all, r, "toBob", &channel, chooser)? else {
            return Ok(outcome(NAME, run, basis, ALICE, None, r, "pool exhausted", json!({})));
        };
        alice_recs.extend(to_bob.records.iter().cloned());

        let d_n = distortion(&to_alice.kinds, sources, n);
        let d_m = distortion(&to_bob.kinds, &all, n);
        known = d_m.compose(&w)?.compose(&d_n)?.compose(&known)?;

        if all_trivial(&to_alice.kinds) || basis.is_trivial() {
            let (raw, zrecs) = run.read_z(BOB, r, &to_alice.records, &[], chooser)?;
            run.t.exchange(ALICE, BOB, &to_bob.records);
            let bits = xor(&raw, &flips(&to_bob.kinds));
            let idx = eigen_index(&bits);
            let uses: Vec<String> = zrecs.iter().chain(&to_bob.records).cloned().collect();
            run.t.combine(BOB, json!({"op": "combine", "eigenIndex": idx + 1, "value": basis.values()[idx]}), &uses);
            let details = json!({"hops": [to_alice.names(), to_bob.names()]});
            return Ok(outcome(NAME, run, basis, BOB, Some((idx, bits)), r, "", details));
        }
    }
    Ok(outcome(NAME, run, basis, BOB, None, max_rounds, "rounds exhausted", json!({})))
}

/// Three-site measurement over qubits (A, B, C). Round 1: Bob and Collin
/// teleport to Alice, Alice applies the basis change and teleports to Bob,
/// Bob forwards to Collin on a channel chosen by his first outcome. Later
/// rounds start with Collin teleporting the register back to Alice.
pub fn vaidman_three_party_measure(
    psi: &Ket,
    basis: &EigenBasis,
    pool: &mut EbitPool,
    max_rounds: usize,
    chooser: &mut dyn Chooser,
) -> Result<ProtocolResult> {
    const NAME: &str = "vaidman_three_party_measure";
    let n = 3;
    check_register(psi, basis, n)?;
    require_singlets(pool)?;
    if max_rounds == 0 || pool.available < three_party_ebits(1) {
        return Err(Error::PoolExhausted);
    }
    let to_z = basis.to_z_product();
    let all: Vec<usize> = (0..n).collect();
    let mut run = Run { state: psi.clone(), pool, t: Transcript::new(), bell: 0 };
    let mut known = Operator::identity(vec![2; n]);
    let mut alice_recs: Vec<String> = Vec::new();
    let mut bob_recs: Vec<String> = Vec::new();
    let mut collin_recs: Vec<String> = Vec::new();
    let mut previous_forward: Option<Hop> = None;

    for r in 1..=max_rounds {
        let (unknown, incoming, decided) = if r == 1 {
            let Some(hb) = run.hop(BOB, &[1], r, "toAlice", &[], chooser)? else { unreachable!() };
            let Some(hc) = run.hop(COLLIN, &[2], r, "toAlice", &[], chooser)? else { unreachable!() };
            let unknown = distortion(&hb.kinds, &[1], n).compose(&distortion(&hc.kinds, &[2], n))?;
            let ok = all_trivial(&hb.kinds) && all_trivial(&hc.kinds);
            bob_recs.extend(hb.records.iter().cloned());
            collin_recs.extend(hc.records.iter().cloned());
            let incoming: Vec<String> = hb.records.iter().chain(&hc.records).cloned().collect();
            (unknown, incoming, ok)
        } else {
            let fwd = previous_forward.take().expect("set by the previous round");
            let Some(hc) = run.hop(COLLIN, &all, r, "toAlice", &fwd.records, chooser)? else {
                return Ok(outcome(NAME, run, basis, COLLIN, None, r - 1, "pool exhausted", json!({})));
            };
            collin_recs.extend(hc.records.iter().cloned());
            let unknown = distortion(&hc.kinds, &all, n).compose(&distortion(&fwd.kinds, &all, n))?;
            let ok = hc.kinds == fwd.kinds;
            let incoming: Vec<String> = fwd.records.iter().chain(&hc.records).cloned().collect();
            (unknown, incoming, ok)
        };

        let w = to_z.compose(&known.adjoint())?;
        run.state = apply(&w, &run.state, &all)?;
        run.t.local_op(ALICE, json!({"op": "unitary", "round": r, "channel": incoming}), &alice_recs);

        let Some(to_bob) = run.hop(ALICE, &all, r, "toBob", &incoming, chooser)? else {
            return Ok(outcome(NAME, run, basis, ALICE, None, r, "pool exhausted", json!({})));
        };
        alice_recs.extend(to_bob.records.iter().cloned());
        let Some(forward) = run.hop(BOB, &all, r, "toCollin", &bob_recs, chooser)? else {
            return Ok(outcome(NAME, run, basis, BOB, None, r, "pool exhausted", json!({})));
        };
        bob_recs.extend(forward.records.iter().cloned());

        let d_m = distortion(&to_bob.kinds, &all, n);
        known = d_m.compose(&w)?.compose(&unknown)?.compose(&known)?;

        if decided || basis.is_trivial() {
            let (raw, zrecs) = run.read_z(COLLIN, r, &collin_recs, &incoming, chooser)?;
            run.t.exchange(ALICE, COLLIN, &to_bob.records);
            run.t.exchange(BOB, COLLIN, &forward.records);
            let bits = xor(&xor(&raw, &flips(&to_bob.kinds)), &flips(&forward.kinds));
            let idx = eigen_index(&bits);
            let uses: Vec<String> = zrecs.iter().chain(&to_bob.records).chain(&forward.records).cloned().collect();
            run.t.combine(COLLIN, json!({"op": "combine", "eigenIndex": idx + 1, "value": basis.values()[idx]}), &uses);
            let details = json!({"hops": [to_bob.names(), forward.names()]});
            return Ok(outcome(NAME, run, basis, COLLIN, Some((idx, bits)), r, "", details));
        }
        previous_forward = Some(forward);
    }
    Ok(outcome(NAME, run, basis, COLLIN, None, max_rounds, "rounds exhausted", json!({})))
}

/// Catalog wrapper: Bob's qubits (the second half) are teleported to Alice.
pub(crate) fn partial_teleport_protocol(psi: &Ket, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
    let n = psi.num_subsystems();
    if n == 0 || psi.dims().iter().any(|&d| d != 2) {
        return Err(Error::DimensionMismatch("partial teleportation needs qubits".into()));
    }
    let sources: Vec<usize> = (n / 2..n).collect();
    let mut pool = EbitPool::teleport(sources.len());
    let mut t = Transcript::new();
    let (kinds, post) = partial_teleport(psi, &sources, &mut pool, chooser)?;
    for (&q, k) in sources.iter().zip(&kinds) {
        t.local_op(BOB, json!({"op": "ebitDraw", "qubit": q}), &[]);
        t.measure(BOB, json!({"op": "bellMeasure", "qubit": q, "outcome": k.name()}), &[]);
    }
    let label = kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
    let undistorted = all_trivial(&kinds);
    let physical = Physical { ket: post.clone(), owners: vec![ALICE.to_string(); n] };
    Ok(ProtocolResult::build(
        "partial_teleport",
        true,
        Inferred::Label(label),
        PostState::State(post),
        pool.consumed,
        1,
        json!({"undistorted": undistorted, "sources": sources}),
        t,
        Some(physical),
    ))
}
