//! Protocol runs and Monte Carlo campaigns.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nonlocal_core::branch::{enumerate_limited, trial_sampler};
use nonlocal_core::protocols::{
    general_basis, twisted_basis, value_key, Inferred, PostState, ProtocolResult, ProtocolSpec, CATALOG,
};
use nonlocal_core::statevec::Ket;
use nonlocal_core::Error;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{pretty, states, write, CliError, Format};

/// Largest branch tree enumerated for the exact-probability column.
pub const EXACT_BUDGET: usize = 50_000;

pub struct Request {
    pub protocol: String,
    pub state: Option<String>,
    pub trials: u64,
    pub seed: Option<u64>,
    pub max_rounds: usize,
    pub alpha: Option<f64>,
    pub out: PathBuf,
    pub format: Format,
}

pub(crate) fn unknown_protocol(name: &str) -> CliError {
    let names: Vec<&str> = CATALOG.iter().map(|e| e.name).collect();
    CliError::Usage(format!("unknown protocol {name:?}; available: {}", names.join(", ")))
}

fn inferred_value(v: &Inferred) -> Value {
    match v {
        Inferred::Real(x) => json!(x),
        Inferred::Verdict(b) => json!(if *b { "yes" } else { "no" }),
        Inferred::Index(i) => json!(i),
        Inferred::Label(l) => json!(l),
        Inferred::Failure(_) => Value::Null,
    }
}

/// The outcome key a correct run must report when `psi` is one of the
/// protocol's eigenstates.
fn expected_key(spec: &ProtocolSpec, psi: &Ket) -> Option<String> {
    let find = |basis: &[Ket]| basis.iter().position(|b| b.dims() == psi.dims() && b.same_ray(psi, 1e-9));
    match spec {
        ProtocolSpec::GrTwisted => find(&twisted_basis()).map(|i| format!("Psi{}", i + 1)),
        ProtocolSpec::GrGeneral { alpha } => find(&general_basis(*alpha)).map(|i| format!("Psi{}", i + 1)),
        ProtocolSpec::VaidmanBipartite { basis, .. } | ProtocolSpec::VaidmanThreeParty { basis } => {
            find(basis.vectors()).map(|i| value_key(basis.values()[i]))
        }
        ProtocolSpec::AaVerifySinglet => {
            let singlet = nonlocal_core::bell::make_bell(nonlocal_core::bell::BellKind::PsiMinus);
            find(&[singlet]).map(|_| "yes".to_string())
        }
        _ => None,
    }
}

fn checks(results: &[ProtocolResult]) -> Value {
    let causal = results.iter().all(|r| r.transcript.check_causality().is_empty());
    let instantaneous = results.iter().all(|r| r.transcript.check_instantaneous().is_empty());
    let resources = results.iter().all(ProtocolResult::resources_consistent);
    json!({"causal": causal, "instantaneous": instantaneous, "resourcesConsistent": resources})
}

fn exact_law(spec: &ProtocolSpec, psi: &Ket, max_rounds: usize) -> anyhow::Result<Option<BTreeMap<String, f64>>> {
    match enumerate_limited(|ch| spec.run(psi, max_rounds, ch), EXACT_BUDGET) {
        Ok(branches) => {
            let mut law = BTreeMap::new();
            for b in branches {
                *law.entry(b.value.outcome_key()).or_insert(0.0) += b.probability;
            }
            Ok(Some(law))
        }
        Err(Error::BranchBudget(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn run(req: Request) -> anyhow::Result<()> {
    if !CATALOG.iter().any(|e| e.name == req.protocol) {
        return Err(unknown_protocol(&req.protocol).into());
    }
    let seed = req.seed.ok_or_else(|| CliError::Usage("--seed is required for protocol runs".into()))?;
    if req.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()).into());
    }
    if req.max_rounds == 0 {
        return Err(CliError::Usage("--max-rounds must be at least 1".into()).into());
    }
    let state_name = req.state.clone().unwrap_or_else(|| states::default_for(&req.protocol).to_string());
    let psi = states::parse(&state_name)?;
    let spec = ProtocolSpec::from_name(&req.protocol, req.alpha, psi.dims())?;

    let results: Vec<ProtocolResult> = (0..req.trials)
        .into_par_iter()
        .map(|t| spec.run(&psi, req.max_rounds, &mut trial_sampler(seed, t)))
        .collect::<Result<_, _>>()?;
    let checks = checks(&results);
    let header = json!({
        "protocol": req.protocol,
        "state": state_name,
        "seed": seed,
        "trials": req.trials,
        "maxRounds": req.max_rounds,
    });

    let mut transcript = String::new();
    if let [only] = results.as_slice() {
        transcript = only.transcript.to_jsonl();
    } else {
        for (t, r) in results.iter().enumerate() {
            for e in r.transcript.events() {
                let mut v = serde_json::to_value(e)?;
                v.as_object_mut().expect("events are objects").insert("trial".into(), json!(t));
                transcript.push_str(&serde_json::to_string(&v)?);
                transcript.push('\n');
            }
        }
    }
    write(&req.out, "transcript.jsonl", &transcript)?;

    let mut summary = header;
    let obj = summary.as_object_mut().expect("object literal");
    obj.insert("checks".into(), checks.clone());
    if let [r] = results.as_slice() {
        let fidelity = match &r.post_state {
            PostState::State(post) => json!(post.fidelity(&psi)),
            PostState::Destroyed => Value::Null,
        };
        obj.insert("success".into(), json!(r.success));
        obj.insert("value".into(), inferred_value(&r.inferred_value));
        obj.insert("fidelity".into(), fidelity);
        obj.insert("result".into(), serde_json::to_value(r)?);
    } else {
        let n = results.len() as f64;
        let exact = exact_law(&spec, &psi, req.max_rounds)?;
        let expected = expected_key(&spec, &psi);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for r in &results {
            *counts.entry(r.outcome_key()).or_default() += 1;
        }
        if let Some(law) = &exact {
            for k in law.keys() {
                counts.entry(k.clone()).or_default();
            }
        }
        let successes = results.iter().filter(|r| r.success).count();
        let accuracy = expected.as_ref().map(|k| {
            let hits = results.iter().filter(|r| r.success && &r.outcome_key() == k).count();
            hits as f64 / successes.max(1) as f64
        });
        let rows: Vec<Value> = counts
            .iter()
            .map(|(k, &c)| {
                let row_accuracy = match &expected {
                    Some(e) if k != "failure" && c > 0 => json!(if k == e { 1.0 } else { 0.0 }),
                    _ => Value::Null,
                };
                json!({
                    "outcome": k,
                    "count": c,
                    "empirical": c as f64 / n,
                    "exact": exact.as_ref().map(|l| *l.get(k).unwrap_or(&0.0)),
                    "accuracy": row_accuracy,
                })
            })
            .collect();
        let mean = |f: fn(&ProtocolResult) -> usize| results.iter().map(f).sum::<usize>() as f64 / n;
        obj.insert("successRate".into(), json!(successes as f64 / n));
        obj.insert("expected".into(), json!(expected));
        obj.insert("accuracy".into(), json!(accuracy));
        obj.insert("exactAvailable".into(), json!(exact.is_some()));
        obj.insert("meanEbits".into(), json!(mean(|r| r.resources.ebits_consumed)));
        obj.insert("meanRounds".into(), json!(mean(|r| r.resources.rounds)));
        obj.insert("meanMessages".into(), json!(mean(|r| r.resources.messages)));
        obj.insert("outcomes".into(), json!(rows));
        write_table(&req.out, req.format, &rows)?;
    }
    let path = write(&req.out, "summary.json", &pretty(&summary))?;
    if checks.as_object().is_some_and(|c| c.values().any(|v| v == false)) {
        return Err(CliError::Internal(format!("transcript checks failed: {checks}")).into());
    }
    println!("{}", path.display());
    Ok(())
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn write_table(dir: &std::path::Path, format: Format, rows: &[Value]) -> anyhow::Result<()> {
    match format {
        Format::Json => {
            write(dir, "frequencies.json", &pretty(&json!(rows)))?;
        }
        Format::Csv => {
            let cols = ["outcome", "count", "empirical", "exact", "accuracy"];
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(cols)?;
            for r in rows {
                w.write_record(cols.map(|k| cell(&r[k])))?;
            }
            write(dir, "frequencies.csv", &String::from_utf8(w.into_inner()?)?)?;
        }
    }
    Ok(())
}
