//! Correlated discrete meters for nondemolition measurement of sums of
//! local observables.
//!
//! Each meter is a D-level register. The bank starts in the equal
//! superposition of all Π-configurations with ΣΠ ≡ 0 (mod D). A local
//! observable with spectrum {mΔ} is coupled through Σₘ Pₘ ⊗ X⁻ᵐ, where X
//! is the cyclic shift. After every dial is read locally, −ΣΠ (mod D)
//! equals Σm, while each dial on its own is uniformly random.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;

use crate::branch::{Branch, Chooser};
use crate::error::{Error, Result};
use crate::statevec::{self, c, Ket, Operator};

const LATTICE_TOL: f64 = 1e-9;
const MAX_DENOMINATOR: i64 = 64;

/// Symmetric label of register index `idx` in dimension `d`.
pub fn symmetric_label(idx: usize, d: usize) -> i64 {
    if idx <= d / 2 {
        idx as i64
    } else {
        idx as i64 - d as i64
    }
}

fn wrap_symmetric(x: i64, d: usize) -> i64 {
    symmetric_label(x.rem_euclid(d as i64) as usize, d)
}

fn in_window(s: i64, d: usize) -> bool {
    wrap_symmetric(s, d) == s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterRegister {
    pub d: usize,
}

impl MeterRegister {
    pub fn labels(&self) -> Vec<i64> {
        (0..self.d).map(|i| symmetric_label(i, self.d)).collect()
    }

    /// Cyclic shift X^k: |j⟩ ↦ |j + k mod D⟩.
    pub fn shift(&self, k: i64) -> DMatrix<Complex64> {
        let d = self.d;
        DMatrix::from_fn(d, d, |r, col| {
            if (col as i64 + k).rem_euclid(d as i64) as usize == r {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeterBank {
    n: usize,
    d: usize,
    spacing: f64,
    state: Ket,
}

/// Odd-dimensional bank of `n` registers with unit spacing.
pub fn prepare_bank(n: usize, d: usize) -> Result<MeterBank> {
    if d < 3 || d.is_multiple_of(2) {
        return Err(Error::InvalidMeterDimension(d));
    }
    MeterBank::build(n, d, 1.0)
}

impl MeterBank {
    /// Bank of any dimension ≥ 2, as needed for modular sums.
    pub fn modular(n: usize, d: usize, spacing: f64) -> Result<MeterBank> {
        if d < 2 {
            return Err(Error::InvalidMeterDimension(d));
        }
        Self::build(n, d, spacing)
    }

    fn build(n: usize, d: usize, spacing: f64) -> Result<MeterBank> {
        if n == 0 {
            return Err(Error::InvalidArgument("a bank needs at least one register".into()));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing {spacing}")));
        }
        let dims = vec![d; n];
        let total = d.checked_pow(n as u32).filter(|&t| t <= statevec::MAX_DIM);
        let total = total.ok_or(Error::TooLarge(usize::MAX))?;
        let amp = (d as f64).powf(-((n - 1) as f64) / 2.0);
        let amps: Vec<Complex64> = (0..total)
            .map(|i| {
                let s: usize = statevec::digits(&dims, i).iter().sum();
                if s.is_multiple_of(d) {
                    c(amp, 0.0)
                } else {
                    c(0.0, 0.0)
                }
            })
            .collect();
        let state = Ket::new(dims.clone(), amps)?;
        let defect = Self::fourier_defect(&state, d, n);
        if defect > 1e-12 {
            return Err(Error::Internal(format!("bank fails the dual-basis identity by {defect}")));
        }
        Ok(MeterBank { n, d, spacing, state })
    }

    /// Distance between the bank and (1/√D)Σ_q |q…q⟩ written in the Π basis.
    fn fourier_defect(state: &Ket, d: usize, n: usize) -> f64 {
        let dims = vec![d; n];
        let norm = (d as f64).powf(-((n + 1) as f64) / 2.0);
        state
            .amps()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let s: usize = statevec::digits(&dims, i).iter().sum();
                let dual: Complex64 =
                    (0..d).map(|q| Complex64::from_polar(norm, 2.0 * PI * (q * s) as f64 / d as f64)).sum();
                (a - dual).norm()
            })
            .fold(0.0, f64::max)
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<MeterBank> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("spacing {spacing}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn state(&self) -> &Ket {
        &self.state
    }

    pub fn register(&self) -> MeterRegister {
        MeterRegister { d: self.d }
    }

    /// Smallest bank that reads Σᵢ Aᵢ without aliasing.
    pub fn fit_sum(observables: &[(Operator, usize)]) -> Result<MeterBank> {
        let spectra = spectra(observables)?;
        let spacing = fit_lattice(&spectra.iter().flatten().copied().collect::<Vec<_>>())?;
        let sums = achievable_sums(&lattice_levels(&spectra, spacing)?);
        let reach = sums.iter().map(|s| s.unsigned_abs() as usize).max().unwrap_or(0);
        prepare_bank(observables.len(), (2 * reach + 1).max(3))?.with_spacing(spacing)
    }

    pub fn fit_linear(observables: &[(Operator, usize)], weights: &[f64]) -> Result<MeterBank> {
        Self::fit_sum(&scaled(observables, weights)?)
    }

    pub fn fit_product(observables: &[(Operator, usize)]) -> Result<MeterBank> {
        Self::fit_sum(&logarithms(observables)?)
    }

    /// Bank with D·Δ equal to `modulus`.
    pub fn fit_modular(observables: &[(Operator, usize)], modulus: f64) -> Result<MeterBank> {
        let mut values: Vec<f64> = spectra(observables)?.into_iter().flatten().collect();
        values.push(modulus);
        let spacing = fit_lattice(&values)?;
        let d = (modulus / spacing).round() as usize;
        MeterBank::modular(observables.len(), d, spacing)
    }
}

/// Continued-fraction approximation p/q of `x` with q ≤ `max_den`.
fn rational_approx(x: f64, max_den: i64, tol: f64) -> Option<(i64, i64)> {
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e12 {
            return None;
        }
        let a = a as i64;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den {
            return None;
        }
        if (x - h2 as f64 / k2 as f64).abs() <= tol * x.abs().max(1.0) {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a as f64;
        if frac.abs() < 1e-15 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Largest Δ such that every value is an integer multiple of Δ.
pub fn fit_lattice(values: &[f64]) -> Result<f64> {
    let nonzero: Vec<f64> = values.iter().copied().filter(|v| v.abs() > LATTICE_TOL).collect();
    let Some(reference) = nonzero.iter().copied().map(f64::abs).reduce(f64::min) else {
        return Ok(1.0);
    };
    let mut lcm = 1i64;
    for v in &nonzero {
        let (_, q) = rational_approx(v / reference, MAX_DENOMINATOR, LATTICE_TOL)
            .ok_or_else(|| Error::OffLattice(format!("{v} is incommensurate with {reference}")))?;
        lcm = lcm / gcd(lcm, q) * q;
        if lcm > MAX_DENOMINATOR {
            return Err(Error::OffLattice(format!("common denominator exceeds {MAX_DENOMINATOR}")));
        }
    }
    Ok(reference / lcm as f64)
}

fn spectra(observables: &[(Operator, usize)]) -> Result<Vec<Vec<f64>>> {
    observables.iter().map(|(op, _)| Ok(op.eigenspaces(LATTICE_TOL)?.into_iter().map(|(v, _)| v).collect())).collect()
}

fn lattice_levels(spectra: &[Vec<f64>], spacing: f64) -> Result<Vec<Vec<i64>>> {
    spectra.iter().map(|vals| vals.iter().map(|&v| lattice_index(v, spacing)).collect()).collect()
}

fn lattice_index(v: f64, spacing: f64) -> Result<i64> {
    let m = (v / spacing).round();
    if (v - m * spacing).abs() > LATTICE_TOL * v.abs().max(1.0) {
        return Err(Error::OffLattice(format!("{v} is not a multiple of {spacing}")));
    }
    Ok(m as i64)
}

fn achievable_sums(levels: &[Vec<i64>]) -> BTreeSet<i64> {
    levels.iter().fold(BTreeSet::from([0]), |acc, ms| acc.iter().flat_map(|a| ms.iter().map(move |m| a + m)).collect())
}

fn scaled(observables: &[(Operator, usize)], weights: &[f64]) -> Result<Vec<(Operator, usize)>> {
    if weights.len() != observables.len() {
        return Err(Error::DimensionMismatch("one weight per observable".into()));
    }
    Ok(observables.iter().zip(weights).map(|((op, s), &w)| (op.scale(w), *s)).collect())
}

fn logarithms(observables: &[(Operator, usize)]) -> Result<Vec<(Operator, usize)>> {
    observables
        .iter()
        .map(|(op, site)| {
            let spaces = op.eigenspaces(LATTICE_TOL)?;
            let min = spaces.first().map_or(f64::NAN, |s| s.0);
            if min.is_nan() || min < 1e-6 {
                return Err(Error::NotPositive(min));
            }
            let n = op.side();
            let mat = spaces.iter().fold(DMatrix::zeros(n, n), |acc, (v, p)| acc + p.mat() * c(v.ln(), 0.0));
            Ok((Operator::hermitian(op.dims().to_vec(), mat)?, *site))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialReadout {
    pub register: usize,
    pub site: usize,
    pub dial: i64,
}

#[derive(Debug, Clone)]
pub struct MeterOutcome {
    pub value: f64,
    /// Σm recovered from the dials, in lattice units.
    pub lattice_sum: i64,
    pub post: Ket,
    pub readouts: Vec<DialReadout>,
}

struct Coupling {
    site: usize,
    gate: Operator,
}

fn couplings(observables: &[(Operator, usize)], bank: &MeterBank) -> Result<(Vec<Coupling>, BTreeSet<i64>)> {
    let reg = bank.register();
    let mut levels = Vec::new();
    let mut out = Vec::new();
    for (op, site) in observables {
        let spaces = op.eigenspaces(LATTICE_TOL)?;
        let n = op.side();
        let mut mat = DMatrix::zeros(n * bank.d, n * bank.d);
        let mut ms = Vec::new();
        for (v, p) in &spaces {
            let m = lattice_index(*v, bank.spacing)?;
            ms.push(m);
            mat += p.mat().kronecker(&reg.shift(-m));
        }
        levels.push(ms);
        let mut dims = op.dims().to_vec();
        dims.push(bank.d);
        out.push(Coupling { site: *site, gate: Operator::unitary(dims, mat)? });
    }
    Ok((out, achievable_sums(&levels)))
}

fn run_bank(
    psi: &Ket,
    couplings: &[Coupling],
    bank: &MeterBank,
    order: &[usize],
    chooser: &mut dyn Chooser,
) -> Result<(i64, Ket, Vec<DialReadout>)> {
    if couplings.len() != bank.n {
        return Err(Error::DimensionMismatch(format!(
            "{} observables for a bank of {} registers",
            couplings.len(),
            bank.n
        )));
    }
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..bank.n).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!("{order:?} is not a readout order")));
    }
    let ns = psi.num_subsystems();
    let mut full = statevec::tensor(psi, &bank.state);
    for (i, cp) in couplings.iter().enumerate() {
        full = statevec::apply(&cp.gate, &full, &[cp.site, ns + i])?;
    }
    let mut dial_index = vec![0usize; bank.n];
    let mut readouts = Vec::with_capacity(bank.n);
    for &r in order {
        let m = statevec::measure_subsystem(&full, ns + r, chooser)?;
        full = m.post;
        dial_index[r] = m.outcome;
        readouts.push(DialReadout { register: r, site: couplings[r].site, dial: symmetric_label(m.outcome, bank.d) });
    }
    let record = Ket::from_digits(vec![bank.d; bank.n], &dial_index)?;
    let meters: Vec<usize> = (ns..ns + bank.n).collect();
    let post = statevec::project_out(&full, &meters, &record)?;
    let dial_sum: i64 = readouts.iter().map(|r| r.dial).sum();
    Ok((-dial_sum, post, readouts))
}

/// The bank's coupling gates; register `i` sits at subsystem `first_register + i`.
pub fn coupling_circuit(
    observables: &[(Operator, usize)],
    bank: &MeterBank,
    first_register: usize,
) -> Result<Vec<(Operator, Vec<usize>)>> {
    let (cps, _) = couplings(observables, bank)?;
    Ok(cps.into_iter().enumerate().map(|(i, cp)| (cp.gate, vec![cp.site, first_register + i])).collect())
}

/// Measures Σᵢ Aᵢ; observable `i` is coupled to register `i`.
pub fn measure_sum(
    psi: &Ket,
    observables: &[(Operator, usize)],
    bank: &MeterBank,
    chooser: &mut dyn Chooser,
) -> Result<MeterOutcome> {
    let order: Vec<usize> = (0..observables.len()).collect();
    measure_sum_ordered(psi, observables, bank, &order, chooser)
}

/// [`measure_sum`] with the dials read in the given register order.
pub fn measure_sum_ordered(
    psi: &Ket,
    observables: &[(Operator, usize)],
    bank: &MeterBank,
    order: &[usize],
    chooser: &mut dyn Chooser,
) -> Result<MeterOutcome> {
    let (cps, sums) = couplings(observables, bank)?;
    if sums.iter().any(|&s| !in_window(s, bank.d)) {
        let reach = sums.iter().map(|s| s.unsigned_abs() as usize).max().unwrap_or(0);
        return Err(Error::MeterTooSmall { d: bank.d, needed: 2 * reach + 1 });
    }
    let (raw, post, readouts) = run_bank(psi, &cps, bank, order, chooser)?;
    let lattice_sum = wrap_symmetric(raw, bank.d);
    Ok(MeterOutcome { value: lattice_sum as f64 * bank.spacing, lattice_sum, post, readouts })
}

/// Measures Σᵢ wᵢAᵢ.
pub fn measure_linear_combination(
    psi: &Ket,
    observables: &[(Operator, usize)],
    weights: &[f64],
    bank: &MeterBank,
    chooser: &mut dyn Chooser,
) -> Result<MeterOutcome> {
    measure_sum(psi, &scaled(observables, weights)?, bank, chooser)
}

/// Measures ∏ᵢ Aᵢ for positive-definite Aᵢ through Σ ln Aᵢ.
pub fn measure_product_positive(
    psi: &Ket,
    observables: &[(Operator, usize)],
    bank: &MeterBank,
    chooser: &mut dyn Chooser,
) -> Result<MeterOutcome> {
    let mut out = measure_sum(psi, &logarithms(observables)?, bank, chooser)?;
    out.value = out.value.exp();
    Ok(out)
}

/// Measures (Σᵢ Aᵢ) mod `modulus`, which must equal D·Δ.
pub fn measure_modular_sum(
    psi: &Ket,
    observables: &[(Operator, usize)],
    modulus: f64,
    bank: &MeterBank,
    chooser: &mut dyn Chooser,
) -> Result<MeterOutcome> {
    let expected = bank.d as f64 * bank.spacing;
    if (modulus - expected).abs() > LATTICE_TOL * modulus.abs().max(1.0) {
        return Err(Error::ModulusMismatch { modulus, expected });
    }
    let (cps, _) = couplings(observables, bank)?;
    let order: Vec<usize> = (0..observables.len()).collect();
    let (raw, post, readouts) = run_bank(psi, &cps, bank, &order, chooser)?;
    let residue = raw.rem_euclid(bank.d as i64);
    Ok(MeterOutcome { value: residue as f64 * bank.spacing, lattice_sum: residue, post, readouts })
}

/// Merges branch values that agree within `tol` into (value, probability) pairs.
pub fn value_distribution(branches: &[Branch<f64>], tol: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for b in branches {
        match out.iter_mut().find(|(v, _)| (v - b.value).abs() <= tol) {
            Some(entry) => entry.1 += b.probability,
            None => out.push((b.value, b.probability)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
