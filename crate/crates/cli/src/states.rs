//! Named input states and the amplitude-list syntax.

use nonlocal_core::bell::{make_bell, BellKind};
use nonlocal_core::protocols::{general_basis, twisted_basis, EigenBasis};
use nonlocal_core::statevec::{c, tensor_all, Ket};
use num_complex::Complex64;

use crate::CliError;

pub const NAMED: &[(&str, &str)] = &[
    ("psi_plus", "(|01> + |10>)/sqrt2"),
    ("psi_minus", "(|01> - |10>)/sqrt2, the singlet"),
    ("phi_plus", "(|00> + |11>)/sqrt2"),
    ("phi_minus", "(|00> - |11>)/sqrt2"),
    ("spin_1..spin_4", "up-up, down-down, up-down, down-up"),
    ("twisted_1..twisted_4", "product basis with the second qubit rotated when the first is down"),
    ("general_1..general_4:ALPHA", "the same basis at rotation angle ALPHA"),
    ("ghz_1..ghz_8", "three-qubit GHZ basis"),
    ("canonical(K,M)", "equal-weight canonical state of M parties of dimension K"),
    ("product(up,down,plus,minus,...)", "product of single-qubit states"),
    ("amps(2x2;re[:im],...)", "explicit amplitudes, normalized on input"),
];

fn bad(spec: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Precondition(format!("malformed state spec {spec:?}: {why}"))
}

fn indexed(spec: &str, prefix: &str, count: usize) -> Option<Result<usize, CliError>> {
    let rest = spec.strip_prefix(prefix)?;
    Some(match rest.parse::<usize>() {
        Ok(i) if (1..=count).contains(&i) => Ok(i - 1),
        _ => Err(bad(spec, format!("index must be 1..{count}"))),
    })
}

fn args<'a>(spec: &'a str, name: &str) -> Option<&'a str> {
    spec.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')
}

fn complex(spec: &str, tok: &str) -> Result<Complex64, CliError> {
    let mut parts = tok.split(':');
    let re = parts.next().unwrap_or("").trim().parse::<f64>().map_err(|e| bad(spec, e))?;
    let im = match parts.next() {
        Some(s) => s.trim().parse::<f64>().map_err(|e| bad(spec, e))?,
        None => 0.0,
    };
    if parts.next().is_some() {
        return Err(bad(spec, format!("amplitude {tok:?}")));
    }
    Ok(c(re, im))
}

pub fn parse(spec: &str) -> Result<Ket, CliError> {
    let spec = spec.trim();
    let spin = |i: usize| {
        let d = [[0, 0], [1, 1], [0, 1], [1, 0]][i];
        Ket::from_digits(vec![2, 2], &d).expect("qubit digits")
    };
    match spec {
        "psi_plus" => return Ok(make_bell(BellKind::PsiPlus)),
        "psi_minus" => return Ok(make_bell(BellKind::PsiMinus)),
        "phi_plus" => return Ok(make_bell(BellKind::PhiPlus)),
        "phi_minus" => return Ok(make_bell(BellKind::PhiMinus)),
        _ => {}
    }
    if let Some(i) = indexed(spec, "spin_", 4) {
        return Ok(spin(i?));
    }
    if let Some(i) = indexed(spec, "twisted_", 4) {
        return Ok(twisted_basis()[i?].clone());
    }
    if let Some(i) = indexed(spec, "ghz_", 8) {
        return Ok(EigenBasis::ghz().vectors()[i?].clone());
    }
    if let Some(rest) = spec.strip_prefix("general_") {
        let (i, alpha) = rest.split_once(':').ok_or_else(|| bad(spec, "expected general_I:ALPHA"))?;
        let i = indexed(&format!("_{i}"), "_", 4).expect("prefix present")?;
        let alpha: f64 = alpha.parse().map_err(|e| bad(spec, e))?;
        return Ok(general_basis(alpha)[i].clone());
    }
    if let Some(a) = args(spec, "canonical") {
        let nums: Vec<usize> =
            a.split(',').map(|t| t.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|e| bad(spec, e))?;
        let [k, m] = nums[..] else {
            return Err(bad(spec, "expected canonical(K,M)"));
        };
        if k < 2 || m < 2 {
            return Err(bad(spec, "K and M must be at least 2"));
        }
        let dims = vec![k; m];
        let mut amps = vec![c(0.0, 0.0); k.pow(m as u32)];
        let stride: usize = (0..m).map(|j| k.pow(j as u32)).sum();
        for i in 0..k {
            amps[i * stride] = c(1.0, 0.0);
        }
        return Ket::normalized(dims, amps).map_err(|e| bad(spec, e));
    }
    if let Some(a) = args(spec, "product") {
        let kets: Vec<Ket> = a
            .split(',')
            .map(|t| match t.trim() {
                "up" | "0" => Ok(Ket::up()),
                "down" | "1" => Ok(Ket::down()),
                "plus" | "+" => Ok(Ket::plus()),
                "minus" | "-" => Ok(Ket::minus()),
                other => Err(bad(spec, format!("unknown factor {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
        return Ok(tensor_all(&kets));
    }
    if let Some(a) = args(spec, "amps") {
        let (dims, list) = a.split_once(';').ok_or_else(|| bad(spec, "expected amps(DIMS;AMPS)"))?;
        let dims: Vec<usize> =
            dims.split('x').map(|t| t.trim().parse::<usize>()).collect::<Result<_, _>>().map_err(|e| bad(spec, e))?;
        let amps: Vec<Complex64> = list.split(',').map(|t| complex(spec, t)).collect::<Result<_, _>>()?;
        return Ket::normalized(dims, amps).map_err(|e| bad(spec, e));
    }
    Err(bad(spec, "unknown state name"))
}

/// A sensible input for each protocol when none is given.
pub fn default_for(protocol: &str) -> &'static str {
    match protocol {
        "verify_canonical_equal" => "canonical(3,2)",
        "gr_twisted_basis_measure" | "gr_general_angle_measure" | "vaidman_bipartite_measure" => "twisted_1",
        "vaidman_three_party_measure" => "ghz_1",
        _ => "psi_minus",
    }
}
