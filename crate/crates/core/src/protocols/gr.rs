//! Stator-based measurement of product bases whose second factor is rotated
//! conditionally on the first.

use serde_json::json;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use super::transcript::Transcript;
use super::{Inferred, Physical, PostState, ProtocolResult, ALICE, BOB};
use crate::bell::EbitPool;
use crate::branch::Chooser;
use crate::error::{Error, Result};
use crate::statevec::{
    self, apply, c, controlled, measure_subsystem, pauli_exp, pauli_x, pauli_y, project_out, projector, Ket, Operator,
};

/// A pair of spin values, ↑ = true.
pub type Spins = (bool, bool);

/// Final (A, B) values as ↑ = true, for inputs Ψ1..Ψ4, keyed by the reported
/// (ν(σz(a)) = +, ν(σx(b)) = +) pair.
pub const OUTCOME_TABLE: [(Spins, [Spins; 4]); 4] = [
    ((true, true), [(false, false), (false, true), (true, false), (true, true)]),
    ((true, false), [(false, false), (false, true), (true, true), (true, false)]),
    ((false, true), [(false, true), (false, false), (true, true), (true, false)]),
    ((false, false), [(false, true), (false, false), (true, false), (true, true)]),
];

/// Ψ1 = ↑↑, Ψ2 = ↑↓, Ψ3 = ↓⊗(cos α/2, sin α/2), Ψ4 = ↓⊗(sin α/2, −cos α/2).
pub fn general_basis(alpha: f64) -> [Ket; 4] {
    let (co, si) = ((alpha / 2.0).cos(), (alpha / 2.0).sin());
    let pair = |a: [f64; 2], b: [f64; 2]| {
        let x = Ket::qubit(c(a[0], 0.0), c(a[1], 0.0)).expect("unit qubit");
        let y = Ket::qubit(c(b[0], 0.0), c(b[1], 0.0)).expect("unit qubit");
        statevec::tensor(&x, &y)
    };
    [
        pair([1.0, 0.0], [1.0, 0.0]),
        pair([1.0, 0.0], [0.0, 1.0]),
        pair([0.0, 1.0], [co, si]),
        pair([0.0, 1.0], [si, -co]),
    ]
}

pub fn twisted_basis() -> [Ket; 4] {
    let b = general_basis(FRAC_PI_2);
    debug_assert!((b[2].amps()[2].re - FRAC_1_SQRT_2).abs() < 1e-15);
    b
}

fn table_lookup(nu_a: bool, nu_b: bool, a_final: bool, b_final: bool) -> Option<usize> {
    let (_, finals) = OUTCOME_TABLE.iter().find(|(key, _)| *key == (nu_a, nu_b))?;
    finals.iter().position(|&f| f == (a_final, b_final))
}

fn sign(up: bool) -> &'static str {
    if up {
        "+"
    } else {
        "-"
    }
}

fn is_multiple_of_pi(x: f64) -> bool {
    let r = x / PI;
    (r - r.round()).abs() < 1e-9
}

#[derive(Clone, Copy, PartialEq)]
enum Labels {
    Physical,
    /// Alice-side outcomes reported with ↑ and ↓ exchanged, as in the table.
    Table,
}

struct Run {
    success: bool,
    rounds: usize,
    a_up: bool,
    b_up: bool,
    /// Physical ν(σz(a)) and ν(σx(b)) per round.
    nus: Vec<(bool, bool)>,
    rotation: f64,
    flip_parity: bool,
    state: Ket,
    transcript: Transcript,
    alice_records: Vec<String>,
    bob_records: Vec<String>,
}

fn run_rounds(
    psi: &Ket,
    alpha: f64,
    pool: &mut EbitPool,
    max_rounds: usize,
    labels: Labels,
    chooser: &mut dyn Chooser,
) -> Result<Run> {
    let report = |up: bool| if labels == Labels::Table { !up } else { up };
    let mut t = Transcript::new();
    let mut state = psi.clone();
    let x_basis = [projector(&Ket::plus()), projector(&Ket::minus())];
    let cy = controlled(2, &[Operator::identity(vec![2]), pauli_y()])?;

    let m = measure_subsystem(&state, 0, chooser)?;
    state = m.post;
    let a_up = m.outcome == 0;
    let ra = t.measure(ALICE, json!({"op": "measureZ", "qubit": "A", "outcome": sign(report(a_up))}), &[]);
    let mut alice_records = vec![ra.clone()];
    let mut bob_records = Vec::new();

    let mut nus = Vec::new();
    let mut rotation = 0.0;
    let mut flip_parity = false;
    let mut success = false;
    let mut rounds = 0;
    while rounds < max_rounds {
        let Ok(pair) = pool.draw() else { break };
        rounds += 1;
        let r = rounds;
        t.local_op(BOB, json!({"op": "ebitDraw", "round": r, "kind": pool.kind}), &bob_records);
        state = statevec::tensor(&state, &pair);

        state = apply(&cy, &state, &[3, 1])?;
        t.local_op(BOB, json!({"op": "controlledY", "round": r, "control": "b", "target": "B"}), &[]);
        let mb = statevec::measure_trusted(&state, &[3], &x_basis, chooser)?;
        state = mb.post;
        let nu_b = mb.outcome == 0;
        let rb = t.measure(BOB, json!({"op": "measureX", "qubit": "b", "round": r, "outcome": sign(nu_b)}), &[]);
        bob_records.push(rb);

        let theta = 2f64.powi(r as i32 - 1) * alpha / 2.0;
        if !a_up {
            state = apply(&pauli_exp(&pauli_x(), theta), &state, &[2])?;
            t.local_op(
                ALICE,
                json!({"op": "rotateX", "qubit": "a", "round": r, "angle": theta}),
                std::slice::from_ref(&ra),
            );
            rotation -= 2.0 * theta * if nu_b { 1.0 } else { -1.0 };
        }
        let ma = measure_subsystem(&state, 2, chooser)?;
        let nu_a = ma.outcome == 0;
        let rec =
            t.measure(ALICE, json!({"op": "measureZ", "qubit": "a", "round": r, "outcome": sign(report(nu_a))}), &[]);
        alice_records.push(rec);
        if !nu_a {
            rotation += PI;
            flip_parity = !flip_parity;
        }
        let b_state = if nu_b { Ket::plus() } else { Ket::minus() };
        let a_state = Ket::basis(vec![2], ma.outcome)?;
        state = project_out(&ma.post, &[2, 3], &statevec::tensor(&a_state, &b_state))?;
        nus.push((nu_a, nu_b));

        if nu_b || is_multiple_of_pi(2f64.powi(r as i32) * alpha) {
            success = true;
            break;
        }
    }
    if rounds == 0 {
        return Err(Error::PoolExhausted);
    }

    let mb = measure_subsystem(&state, 1, chooser)?;
    state = mb.post;
    let b_up = mb.outcome == 0;
    let rb = t.measure(BOB, json!({"op": "measureZ", "qubit": "B", "outcome": sign(b_up)}), &[]);
    bob_records.push(rb);
    t.exchange(ALICE, BOB, &alice_records);

    Ok(Run {
        success,
        rounds,
        a_up,
        b_up,
        nus,
        rotation,
        flip_parity,
        state,
        transcript: t,
        alice_records,
        bob_records,
    })
}

/// Input index (0-based) from the accumulated remote rotation.
fn identify(run: &Run, alpha: f64) -> usize {
    if run.a_up {
        if run.b_up != run.flip_parity {
            0
        } else {
            1
        }
    } else {
        let k = ((run.rotation + alpha) / PI).round() as i64;
        let odd = k.rem_euclid(2) == 1;
        if run.b_up != odd {
            2
        } else {
            3
        }
    }
}

fn finish(name: &str, run: Run, pool: &EbitPool, inferred: Inferred, extra: serde_json::Value) -> ProtocolResult {
    let mut t = run.transcript;
    let uses: Vec<String> = run.alice_records.iter().chain(&run.bob_records).cloned().collect();
    t.combine(BOB, json!({"op": "combine", "inferred": &inferred, "rounds": run.rounds}), &uses);
    let physical = Physical { ket: run.state, owners: vec![ALICE.into(), BOB.into()] };
    let branch: Vec<_> = run.nus.iter().map(|&(a, b)| json!([sign(a), sign(b)])).collect();
    let mut details = json!({"branch": branch, "rotation": run.rotation});
    if let (Some(d), Some(e)) = (details.as_object_mut(), extra.as_object()) {
        d.extend(e.clone());
    }
    ProtocolResult::build(
        name,
        run.success,
        inferred,
        PostState::Destroyed,
        pool.consumed,
        run.rounds,
        details,
        t,
        Some(physical),
    )
}

/// Identifies which twisted-basis state the pair is in from the outcome table.
pub fn gr_twisted_basis_measure(psi: &Ket, pool: &mut EbitPool, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
    if psi.dims() != [2, 2] {
        return Err(Error::DimensionMismatch(format!("expected two qubits, got {:?}", psi.dims())));
    }
    if pool.available == 0 {
        return Err(Error::PoolExhausted);
    }
    let run = run_rounds(psi, FRAC_PI_2, pool, 1, Labels::Table, chooser)?;
    let (nu_a, nu_b) = run.nus[0];
    let reported = (!nu_a, nu_b, !run.a_up, run.b_up);
    let index = table_lookup(reported.0, reported.1, reported.2, reported.3)
        .ok_or_else(|| Error::Internal("outcome missing from the table".into()))?;
    let extra = json!({
        "labelConvention": "table",
        "table": {"nuA": sign(reported.0), "nuB": sign(reported.1), "finalA": sign(reported.2), "finalB": sign(reported.3)},
    });
    Ok(finish("gr_twisted_basis_measure", run, pool, Inferred::Index(index + 1), extra))
}

/// Repeat-until-success measurement of [`general_basis`]`(alpha)`.
pub fn gr_general_angle_measure(
    psi: &Ket,
    alpha: f64,
    pool: &mut EbitPool,
    max_rounds: usize,
    chooser: &mut dyn Chooser,
) -> Result<ProtocolResult> {
    if psi.dims() != [2, 2] {
        return Err(Error::DimensionMismatch(format!("expected two qubits, got {:?}", psi.dims())));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("angle {alpha}")));
    }
    if max_rounds == 0 || pool.available < max_rounds {
        return Err(Error::PoolExhausted);
    }
    let run = run_rounds(psi, alpha, pool, max_rounds, Labels::Physical, chooser)?;
    let inferred = if run.success {
        Inferred::Index(identify(&run, alpha) + 1)
    } else {
        Inferred::Failure("rounds exhausted".into())
    };
    Ok(finish("gr_general_angle_measure", run, pool, inferred, json!({"alpha": alpha, "labelConvention": "physical"})))
}
