//! Dense kets and operators over a tensor factorization of subsystems.
//!
//! Subsystem 0 is the slowest-varying index of the amplitude vector and,
//! within a qubit, index 0 is spin up. Spin observables carry eigenvalues
//! ±1/2 (ħ = 1); the Pauli matrices are provided separately.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::branch::Chooser;
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 1 << 14;
pub const NORM_TOL: f64 = 1e-12;
const ACCEPT_TOL: f64 = 1e-10;
const KIND_TOL: f64 = 1e-12;
const PROJ_TOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Digits of a flat index, subsystem 0 first.
pub fn digits(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for i in (0..dims.len()).rev() {
        out[i] = index % dims[i];
        index /= dims[i];
    }
    out
}

pub fn flat_index(dims: &[usize], digits: &[usize]) -> usize {
    dims.iter().zip(digits).fold(0, |acc, (d, x)| acc * d + x)
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ket {
    dims: Vec<usize>,
    amps: Vec<Complex64>,
}

impl Ket {
    /// Builds a ket; the amplitudes must already be normalized.
    pub fn new(dims: Vec<usize>, amps: Vec<Complex64>) -> Result<Self> {
        Self::check_shape(&dims, amps.len())?;
        let n = norm_sqr(&amps).sqrt();
        if (n - 1.0).abs() > ACCEPT_TOL {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self::from_raw(dims, amps, n))
    }

    /// Builds a ket from any nonzero amplitude vector.
    pub fn normalized(dims: Vec<usize>, amps: Vec<Complex64>) -> Result<Self> {
        Self::check_shape(&dims, amps.len())?;
        let n = norm_sqr(&amps).sqrt();
        if n < 1e-300 || !n.is_finite() {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self::from_raw(dims, amps, n))
    }

    fn from_raw(dims: Vec<usize>, mut amps: Vec<Complex64>, norm: f64) -> Self {
        if norm != 1.0 {
            amps.iter_mut().for_each(|a| *a /= norm);
        }
        Self { dims, amps }
    }

    fn check_shape(dims: &[usize], len: usize) -> Result<()> {
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch("zero-dimensional subsystem".into()));
        }
        let total = product(dims);
        if total > MAX_DIM {
            return Err(Error::TooLarge(total));
        }
        if total != len {
            return Err(Error::DimensionMismatch(format!("{len} amplitudes for dims {dims:?}")));
        }
        Ok(())
    }

    /// The one-dimensional unit ket, neutral under [`tensor`].
    pub fn scalar() -> Self {
        Self { dims: vec![], amps: vec![c(1.0, 0.0)] }
    }

    pub fn basis(dims: Vec<usize>, index: usize) -> Result<Self> {
        let total = product(&dims);
        if index >= total {
            return Err(Error::IndexOutOfRange { index, count: total });
        }
        let mut amps = vec![c(0.0, 0.0); total];
        amps[index] = c(1.0, 0.0);
        Self::new(dims, amps)
    }

    pub fn from_digits(dims: Vec<usize>, digits: &[usize]) -> Result<Self> {
        if digits.len() != dims.len() || digits.iter().zip(&dims).any(|(x, d)| x >= d) {
            return Err(Error::DimensionMismatch(format!("digits {digits:?} for {dims:?}")));
        }
        let idx = flat_index(&dims, digits);
        Self::basis(dims, idx)
    }

    pub fn qubit(a: Complex64, b: Complex64) -> Result<Self> {
        Self::normalized(vec![2], vec![a, b])
    }

    pub fn up() -> Self {
        Self { dims: vec![2], amps: vec![c(1.0, 0.0), c(0.0, 0.0)] }
    }

    pub fn down() -> Self {
        Self { dims: vec![2], amps: vec![c(0.0, 0.0), c(1.0, 0.0)] }
    }

    pub fn plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { dims: vec![2], amps: vec![c(h, 0.0), c(h, 0.0)] }
    }

    pub fn minus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { dims: vec![2], amps: vec![c(h, 0.0), c(-h, 0.0)] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn num_subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amps).sqrt()
    }

    /// ⟨self|other⟩. Panics if the dimensions differ.
    pub fn inner(&self, other: &Ket) -> Complex64 {
        assert_eq!(self.dims, other.dims, "inner product of kets with different dims");
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &Ket) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn same_ray(&self, other: &Ket, tol: f64) -> bool {
        self.dims == other.dims && self.inner(other).norm() >= 1.0 - tol
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        tensor(self, other)
    }

    /// Linear combination Σ wᵢ kᵢ, renormalized.
    pub fn superpose(terms: &[(Complex64, &Ket)]) -> Result<Ket> {
        let first = terms.first().ok_or_else(|| Error::InvalidArgument("empty superposition".into()))?;
        let dims = first.1.dims.clone();
        let mut amps = vec![c(0.0, 0.0); first.1.dim()];
        for (w, k) in terms {
            if k.dims != dims {
                return Err(Error::DimensionMismatch("superposition of unequal dims".into()));
            }
            for (a, b) in amps.iter_mut().zip(&k.amps) {
                *a += w * b;
            }
        }
        Ket::normalized(dims, amps)
    }
}

pub fn tensor(a: &Ket, b: &Ket) -> Ket {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    let mut amps = Vec::with_capacity(a.dim() * b.dim());
    for x in &a.amps {
        for y in &b.amps {
            amps.push(x * y);
        }
    }
    Ket { dims, amps }
}

pub fn tensor_all(kets: &[Ket]) -> Ket {
    kets.iter().fold(Ket::scalar(), |acc, k| tensor(&acc, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Hermitian,
    Unitary,
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dims: Vec<usize>,
    mat: DMatrix<Complex64>,
    kind: OpKind,
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    max_abs(&(m - m.adjoint()))
}

fn unitary_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    max_abs(&(m * m.adjoint() - DMatrix::<Complex64>::identity(n, n)))
}

impl Operator {
    pub fn new(dims: Vec<usize>, mat: DMatrix<Complex64>, kind: OpKind) -> Result<Self> {
        let side = product(&dims);
        if side > MAX_DIM {
            return Err(Error::TooLarge(side));
        }
        if mat.nrows() != side || mat.ncols() != side {
            return Err(Error::DimensionMismatch(format!("{}x{} matrix for dims {dims:?}", mat.nrows(), mat.ncols())));
        }
        let scale = max_abs(&mat).max(1.0);
        match kind {
            OpKind::Hermitian if hermitian_defect(&mat) > KIND_TOL * scale => {
                return Err(Error::WrongKind("hermitian"))
            }
            OpKind::Unitary if unitary_defect(&mat) > KIND_TOL * side as f64 => {
                return Err(Error::WrongKind("unitary"))
            }
            _ => {}
        }
        Ok(Self { dims, mat, kind })
    }

    pub fn hermitian(dims: Vec<usize>, mat: DMatrix<Complex64>) -> Result<Self> {
        Self::new(dims, mat, OpKind::Hermitian)
    }

    pub fn unitary(dims: Vec<usize>, mat: DMatrix<Complex64>) -> Result<Self> {
        Self::new(dims, mat, OpKind::Unitary)
    }

    pub fn general(dims: Vec<usize>, mat: DMatrix<Complex64>) -> Result<Self> {
        Self::new(dims, mat, OpKind::General)
    }

    /// Tags the matrix as unitary or hermitian when it is, general otherwise.
    pub fn infer(dims: Vec<usize>, mat: DMatrix<Complex64>) -> Result<Self> {
        let op = Self::general(dims, mat)?;
        let kind = if op.is_unitary() {
            OpKind::Unitary
        } else if op.is_hermitian() {
            OpKind::Hermitian
        } else {
            OpKind::General
        };
        Ok(Self { kind, ..op })
    }

    pub fn identity(dims: Vec<usize>) -> Self {
        let n = product(&dims);
        Self { dims, mat: DMatrix::identity(n, n), kind: OpKind::Unitary }
    }

    pub fn from_rows(dims: Vec<usize>, rows: &[Vec<Complex64>], kind: OpKind) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged matrix".into()));
        }
        Self::new(dims, DMatrix::from_fn(n, n, |i, j| rows[i][j]), kind)
    }

    /// Diagonal operator on a single subsystem of dimension `values.len()`.
    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mat = DMatrix::from_fn(n, n, |i, j| if i == j { c(values[i], 0.0) } else { c(0.0, 0.0) });
        Self { dims: vec![n], mat, kind: OpKind::Hermitian }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn mat(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.mat.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        hermitian_defect(&self.mat) <= KIND_TOL * max_abs(&self.mat).max(1.0)
    }

    pub fn is_unitary(&self) -> bool {
        unitary_defect(&self.mat) <= KIND_TOL * self.side() as f64
    }

    pub fn adjoint(&self) -> Operator {
        Operator { dims: self.dims.clone(), mat: self.mat.adjoint(), kind: self.kind }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch("compose of unequal dims".into()));
        }
        let kind = if self.kind == OpKind::Unitary && other.kind == OpKind::Unitary {
            OpKind::Unitary
        } else {
            OpKind::General
        };
        Ok(Operator { dims: self.dims.clone(), mat: &self.mat * &other.mat, kind })
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let kind = if self.kind == other.kind { self.kind } else { OpKind::General };
        Operator { dims, mat: self.mat.kronecker(&other.mat), kind }
    }

    pub fn scale(&self, s: f64) -> Operator {
        let kind = if self.kind == OpKind::Hermitian { OpKind::Hermitian } else { OpKind::General };
        Operator { dims: self.dims.clone(), mat: &self.mat * c(s, 0.0), kind }
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch("sum of unequal dims".into()));
        }
        let kind = if self.kind == OpKind::Hermitian && other.kind == OpKind::Hermitian {
            OpKind::Hermitian
        } else {
            OpKind::General
        };
        Ok(Operator { dims: self.dims.clone(), mat: &self.mat + &other.mat, kind })
    }

    /// Spectral decomposition of a Hermitian operator: distinct eigenvalues
    /// (ascending, merged within `tol`) with their eigenspace projectors.
    pub fn eigenspaces(&self, tol: f64) -> Result<Vec<(f64, Operator)>> {
        if !self.is_hermitian() {
            return Err(Error::WrongKind("hermitian"));
        }
        let eig = self.mat.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let n = self.side();
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in order {
            let v = eig.eigenvalues[i];
            match groups.last_mut() {
                Some((val, members)) if (v - *val).abs() <= tol => members.push(i),
                _ => groups.push((v, vec![i])),
            }
        }
        Ok(groups
            .into_iter()
            .map(|(_, members)| {
                let mean = members.iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / members.len() as f64;
                let mut p = DMatrix::<Complex64>::zeros(n, n);
                for &i in &members {
                    let col = eig.eigenvectors.column(i);
                    p += col * col.adjoint();
                }
                (mean, Operator { dims: self.dims.clone(), mat: p, kind: OpKind::Hermitian })
            })
            .collect())
    }
}

pub fn pauli_x() -> Operator {
    let z = c(0.0, 0.0);
    let o = c(1.0, 0.0);
    Operator { dims: vec![2], mat: DMatrix::from_row_slice(2, 2, &[z, o, o, z]), kind: OpKind::Unitary }
}

pub fn pauli_y() -> Operator {
    let z = c(0.0, 0.0);
    Operator {
        dims: vec![2],
        mat: DMatrix::from_row_slice(2, 2, &[z, c(0.0, -1.0), c(0.0, 1.0), z]),
        kind: OpKind::Unitary,
    }
}

pub fn pauli_z() -> Operator {
    let z = c(0.0, 0.0);
    Operator {
        dims: vec![2],
        mat: DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), z, z, c(-1.0, 0.0)]),
        kind: OpKind::Unitary,
    }
}

pub fn spin_x() -> Operator {
    pauli_x().scale(0.5).retag(OpKind::Hermitian)
}

pub fn spin_y() -> Operator {
    pauli_y().scale(0.5).retag(OpKind::Hermitian)
}

pub fn spin_z() -> Operator {
    pauli_z().scale(0.5).retag(OpKind::Hermitian)
}

impl Operator {
    fn retag(mut self, kind: OpKind) -> Operator {
        self.kind = kind;
        self
    }
}

/// exp(−iθ n̂·σ/2) for a unit axis.
pub fn rotation(axis: [f64; 3], theta: f64) -> Operator {
    let (s, co) = (theta / 2.0).sin_cos();
    let sum = pauli_x().mat * c(axis[0], 0.0) + pauli_y().mat * c(axis[1], 0.0) + pauli_z().mat * c(axis[2], 0.0);
    let mat = DMatrix::identity(2, 2) * c(co, 0.0) - sum * c(0.0, s);
    Operator { dims: vec![2], mat, kind: OpKind::Unitary }
}

/// exp(iθ·P) for a single-qubit Pauli P, which equals cosθ·I + i sinθ·P.
pub fn pauli_exp(p: &Operator, theta: f64) -> Operator {
    let mat = DMatrix::identity(2, 2) * c(theta.cos(), 0.0) + &p.mat * c(0.0, theta.sin());
    Operator { dims: vec![2], mat, kind: OpKind::Unitary }
}

/// |k⟩⟨k|.
pub fn projector(k: &Ket) -> Operator {
    let v = nalgebra::DVector::from_column_slice(k.amps());
    Operator { dims: k.dims.clone(), mat: &v * v.adjoint(), kind: OpKind::Hermitian }
}

/// Σᵢ |i⟩⟨i| ⊗ opᵢ on a (control, target) pair.
pub fn controlled(control_dim: usize, ops: &[Operator]) -> Result<Operator> {
    if ops.len() != control_dim {
        return Err(Error::DimensionMismatch("one operator per control level".into()));
    }
    let td = ops[0].side();
    let mut mat = DMatrix::zeros(control_dim * td, control_dim * td);
    for (i, op) in ops.iter().enumerate() {
        if op.side() != td {
            return Err(Error::DimensionMismatch("controlled blocks differ in size".into()));
        }
        mat.view_mut((i * td, i * td), (td, td)).copy_from(&op.mat);
    }
    let mut dims = vec![control_dim];
    dims.extend_from_slice(&ops[0].dims);
    Operator::infer(dims, mat)
}

fn check_targets(dims: &[usize], targets: &[usize], op_dims: &[usize]) -> Result<()> {
    for (k, &t) in targets.iter().enumerate() {
        if t >= dims.len() {
            return Err(Error::IndexOutOfRange { index: t, count: dims.len() });
        }
        if targets[..k].contains(&t) {
            return Err(Error::InvalidArgument(format!("repeated target {t}")));
        }
    }
    let tdims: Vec<usize> = targets.iter().map(|&t| dims[t]).collect();
    if tdims != op_dims {
        return Err(Error::DimensionMismatch(format!("operator dims {op_dims:?} vs target dims {tdims:?}")));
    }
    Ok(())
}

/// Flat offsets of each local multi-index and the base index of each block.
fn block_layout(dims: &[usize], targets: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let st = strides(dims);
    let tdims: Vec<usize> = targets.iter().map(|&t| dims[t]).collect();
    let offs: Vec<usize> =
        (0..product(&tdims)).map(|j| digits(&tdims, j).iter().zip(targets).map(|(x, &t)| x * st[t]).sum()).collect();
    let rest: Vec<usize> = (0..dims.len()).filter(|i| !targets.contains(i)).collect();
    let rdims: Vec<usize> = rest.iter().map(|&r| dims[r]).collect();
    let bases: Vec<usize> =
        (0..product(&rdims)).map(|j| digits(&rdims, j).iter().zip(&rest).map(|(x, &r)| x * st[r]).sum()).collect();
    (offs, bases)
}

fn apply_raw(dims: &[usize], amps: &[Complex64], mat: &DMatrix<Complex64>, targets: &[usize]) -> Vec<Complex64> {
    let (offs, bases) = block_layout(dims, targets);
    let n = offs.len();
    let entries: Vec<(usize, usize, Complex64)> = (0..n)
        .flat_map(|r| (0..n).map(move |col| (r, col)))
        .filter_map(|(r, col)| {
            let v = mat[(r, col)];
            (v != c(0.0, 0.0)).then_some((r, col, v))
        })
        .collect();
    let mut out = vec![c(0.0, 0.0); amps.len()];
    for base in bases {
        for &(r, col, v) in &entries {
            out[base + offs[r]] += v * amps[base + offs[col]];
        }
    }
    out
}

/// I ⊗ … ⊗ op ⊗ … ⊗ I with `op` at `target`.
pub fn embed_local(op: &Operator, target: usize, dims: &[usize]) -> Result<Operator> {
    embed(op, &[target], dims)
}

/// Embeds an operator acting on `targets` (in that order) into the full space.
pub fn embed(op: &Operator, targets: &[usize], dims: &[usize]) -> Result<Operator> {
    check_targets(dims, targets, &op.dims)?;
    let n = product(dims);
    if n > MAX_DIM {
        return Err(Error::TooLarge(n));
    }
    let (offs, bases) = block_layout(dims, targets);
    let mut mat = DMatrix::zeros(n, n);
    for base in bases {
        for (r, &ro) in offs.iter().enumerate() {
            for (col, &co) in offs.iter().enumerate() {
                mat[(base + ro, base + co)] = op.mat[(r, col)];
            }
        }
    }
    Ok(Operator { dims: dims.to_vec(), mat, kind: op.kind })
}

/// Applies a unitary to the selected subsystems.
pub fn apply(op: &Operator, psi: &Ket, targets: &[usize]) -> Result<Ket> {
    check_targets(&psi.dims, targets, &op.dims)?;
    if op.kind != OpKind::Unitary && !op.is_unitary() {
        return Err(Error::WrongKind("unitary"));
    }
    let amps = apply_raw(&psi.dims, &psi.amps, &op.mat, targets);
    let n = norm_sqr(&amps).sqrt();
    Ok(Ket::from_raw(psi.dims.clone(), amps, n))
}

/// Applies any operator and renormalizes the result.
pub fn apply_renormalized(op: &Operator, psi: &Ket, targets: &[usize]) -> Result<Ket> {
    check_targets(&psi.dims, targets, &op.dims)?;
    let amps = apply_raw(&psi.dims, &psi.amps, &op.mat, targets);
    Ket::normalized(psi.dims.clone(), amps)
}

/// ‖op ψ‖² for an operator on the selected subsystems.
pub fn weight(op: &Operator, psi: &Ket, targets: &[usize]) -> Result<f64> {
    check_targets(&psi.dims, targets, &op.dims)?;
    Ok(norm_sqr(&apply_raw(&psi.dims, &psi.amps, &op.mat, targets)))
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub outcome: usize,
    pub probability: f64,
    pub post: Ket,
}

fn validate_projectors(projectors: &[Operator]) -> Result<()> {
    let first = projectors.first().ok_or_else(|| Error::InvalidProjectors("empty set".into()))?;
    let n = first.side();
    let mut sum = DMatrix::<Complex64>::zeros(n, n);
    for (i, p) in projectors.iter().enumerate() {
        if p.dims != first.dims {
            return Err(Error::InvalidProjectors("mixed dimensions".into()));
        }
        if hermitian_defect(&p.mat) > PROJ_TOL {
            return Err(Error::InvalidProjectors(format!("projector {i} not hermitian")));
        }
        if max_abs(&(&p.mat * &p.mat - &p.mat)) > PROJ_TOL {
            return Err(Error::InvalidProjectors(format!("projector {i} not idempotent")));
        }
        for (j, q) in projectors.iter().enumerate().skip(i + 1) {
            if max_abs(&(&p.mat * &q.mat)) > PROJ_TOL {
                return Err(Error::InvalidProjectors(format!("projectors {i} and {j} overlap")));
            }
        }
        sum += &p.mat;
    }
    if max_abs(&(sum - DMatrix::identity(n, n))) > PROJ_TOL {
        return Err(Error::InvalidProjectors("incomplete set".into()));
    }
    Ok(())
}

/// Projective measurement with full-space projectors.
pub fn measure_projective(psi: &Ket, projectors: &[Operator], chooser: &mut dyn Chooser) -> Result<Measurement> {
    let targets: Vec<usize> = (0..psi.num_subsystems()).collect();
    measure_projective_on(psi, &targets, projectors, chooser)
}

/// Born probabilities of a projector set on the selected subsystems.
pub fn outcome_probabilities_on(psi: &Ket, targets: &[usize], projectors: &[Operator]) -> Result<Vec<f64>> {
    validate_projectors(projectors)?;
    projectors.iter().map(|p| weight(p, psi, targets)).collect()
}

/// Projective measurement with projectors acting on `targets`.
pub fn measure_projective_on(
    psi: &Ket,
    targets: &[usize],
    projectors: &[Operator],
    chooser: &mut dyn Chooser,
) -> Result<Measurement> {
    validate_projectors(projectors)?;
    measure_trusted(psi, targets, projectors, chooser)
}

/// Like [`measure_projective_on`] for projector sets known to be valid.
pub(crate) fn measure_trusted(
    psi: &Ket,
    targets: &[usize],
    projectors: &[Operator],
    chooser: &mut dyn Chooser,
) -> Result<Measurement> {
    check_targets(&psi.dims, targets, &projectors[0].dims)?;
    let branches: Vec<Vec<Complex64>> =
        projectors.iter().map(|p| apply_raw(&psi.dims, &psi.amps, &p.mat, targets)).collect();
    let probs: Vec<f64> = branches.iter().map(|b| norm_sqr(b)).collect();
    let k = chooser.pick(&probs);
    finish_measurement(psi.dims.clone(), branches.into_iter().nth(k).unwrap_or_default(), k, probs[k])
}

fn finish_measurement(dims: Vec<usize>, amps: Vec<Complex64>, k: usize, p: f64) -> Result<Measurement> {
    if p < 1e-300 || amps.is_empty() {
        return Err(Error::ZeroProbabilityBranch);
    }
    let post = Ket::from_raw(dims, amps, p.sqrt());
    Ok(Measurement { outcome: k, probability: p, post })
}

/// Probabilities of each basis digit of one subsystem.
pub fn digit_probabilities(psi: &Ket, site: usize) -> Result<Vec<f64>> {
    if site >= psi.num_subsystems() {
        return Err(Error::IndexOutOfRange { index: site, count: psi.num_subsystems() });
    }
    let d = psi.dims[site];
    let st = strides(&psi.dims)[site];
    let mut probs = vec![0.0; d];
    for (i, a) in psi.amps.iter().enumerate() {
        probs[(i / st) % d] += a.norm_sqr();
    }
    Ok(probs)
}

/// Computational-basis measurement of one subsystem; the subsystem is kept.
pub fn measure_subsystem(psi: &Ket, site: usize, chooser: &mut dyn Chooser) -> Result<Measurement> {
    let probs = digit_probabilities(psi, site)?;
    let k = chooser.pick(&probs);
    let d = psi.dims[site];
    let st = strides(&psi.dims)[site];
    let amps: Vec<Complex64> =
        psi.amps.iter().enumerate().map(|(i, a)| if (i / st) % d == k { *a } else { c(0.0, 0.0) }).collect();
    finish_measurement(psi.dims.clone(), amps, k, probs[k])
}

/// Contracts `targets` against ⟨state| and drops them, renormalizing.
pub fn project_out(psi: &Ket, targets: &[usize], state: &Ket) -> Result<Ket> {
    check_targets(&psi.dims, targets, &state.dims)?;
    let (offs, bases) = block_layout(&psi.dims, targets);
    let amps: Vec<Complex64> =
        bases.iter().map(|&b| offs.iter().zip(&state.amps).map(|(&o, s)| s.conj() * psi.amps[b + o]).sum()).collect();
    let dims: Vec<usize> = (0..psi.num_subsystems()).filter(|i| !targets.contains(i)).map(|i| psi.dims[i]).collect();
    Ket::normalized(dims, amps).map_err(|_| Error::ZeroProbabilityBranch)
}

/// Reorders subsystems: new subsystem `i` is old subsystem `order[i]`.
pub fn permute(psi: &Ket, order: &[usize]) -> Result<Ket> {
    let n = psi.num_subsystems();
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
        return Err(Error::InvalidArgument(format!("{order:?} is not a permutation of {n}")));
    }
    let old_st = strides(&psi.dims);
    let new_dims: Vec<usize> = order.iter().map(|&o| psi.dims[o]).collect();
    let amps: Vec<Complex64> = (0..psi.dim())
        .map(|j| {
            let d = digits(&new_dims, j);
            let src: usize = d.iter().zip(order).map(|(x, &o)| x * old_st[o]).sum();
            psi.amps[src]
        })
        .collect();
    Ok(Ket { dims: new_dims, amps })
}

/// Moves subsystem `from` to position `to`, shifting the others.
pub fn move_subsystem(psi: &Ket, from: usize, to: usize) -> Result<Ket> {
    let n = psi.num_subsystems();
    if from >= n || to >= n {
        return Err(Error::IndexOutOfRange { index: from.max(to), count: n });
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| i != from).collect();
    order.insert(to, from);
    permute(psi, &order)
}

fn split_order(n: usize, keep: &[usize]) -> Result<Vec<usize>> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("empty subsystem selection".into()));
    }
    for (k, &i) in keep.iter().enumerate() {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, count: n });
        }
        if keep[..k].contains(&i) {
            return Err(Error::InvalidArgument(format!("repeated subsystem {i}")));
        }
    }
    let mut order = keep.to_vec();
    order.extend((0..n).filter(|i| !keep.contains(i)));
    Ok(order)
}

fn as_matrix(psi: &Ket, keep: &[usize]) -> Result<(DMatrix<Complex64>, Vec<usize>, Vec<usize>)> {
    let order = split_order(psi.num_subsystems(), keep)?;
    let p = permute(psi, &order)?;
    let kdims: Vec<usize> = keep.iter().map(|&i| psi.dims[i]).collect();
    let rdims: Vec<usize> = order[keep.len()..].iter().map(|&i| psi.dims[i]).collect();
    let (dk, dr) = (product(&kdims), product(&rdims));
    Ok((DMatrix::from_row_slice(dk, dr, &p.amps), kdims, rdims))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    mat: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(dims: Vec<usize>, mat: DMatrix<Complex64>) -> Result<Self> {
        let n = product(&dims);
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::DimensionMismatch("density matrix shape".into()));
        }
        if hermitian_defect(&mat) > NORM_TOL {
            return Err(Error::WrongKind("hermitian"));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::NotNormalized(tr.re));
        }
        let rho = Self { dims, mat };
        if rho.eigenvalues().iter().any(|&e| e < -1e-10) {
            return Err(Error::InvalidArgument("density matrix has negative eigenvalue".into()));
        }
        Ok(rho)
    }

    pub fn pure(psi: &Ket) -> Self {
        let p = projector(psi);
        Self { dims: p.dims, mat: p.mat }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn mat(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.mat.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        trace_distance(&self.mat, &other.mat)
    }
}

/// ½‖a − b‖₁ for Hermitian (not necessarily normalized) matrices.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let d = a - b;
    0.5 * d.symmetric_eigen().eigenvalues.iter().map(|e| e.abs()).sum::<f64>()
}

/// Partial trace onto `keep` (in the given order).
pub fn reduced_density(psi: &Ket, keep: &[usize]) -> Result<DensityMatrix> {
    let (m, kdims, _) = as_matrix(psi, keep)?;
    let mat = &m * m.adjoint();
    Ok(DensityMatrix { dims: kdims, mat })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchmidtForm {
    pub coeffs: Vec<f64>,
    pub left_basis: Vec<Vec<Complex64>>,
    pub right_basis: Vec<Vec<Complex64>>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    dims: Vec<usize>,
}

impl SchmidtForm {
    /// Σαᵢ|i⟩⊗|i⟩ laid out in the original subsystem order.
    pub fn reconstruct(&self) -> Result<Ket> {
        let dl = self.left_basis.first().map_or(1, |v| v.len());
        let dr = self.right_basis.first().map_or(1, |v| v.len());
        let mut amps = vec![c(0.0, 0.0); dl * dr];
        for ((a, l), r) in self.coeffs.iter().zip(&self.left_basis).zip(&self.right_basis) {
            for i in 0..dl {
                for j in 0..dr {
                    amps[i * dr + j] += l[i] * r[j] * *a;
                }
            }
        }
        let mut order = self.left.clone();
        order.extend(&self.right);
        let pdims: Vec<usize> = order.iter().map(|&i| self.dims[i]).collect();
        let split = Ket::normalized(pdims, amps)?;
        let mut inverse = vec![0; order.len()];
        for (pos, &o) in order.iter().enumerate() {
            inverse[o] = pos;
        }
        permute(&split, &inverse)
    }

    pub fn rank(&self) -> usize {
        self.coeffs.len()
    }
}

/// Canonical (Schmidt) form across the split `left | rest`.
pub fn schmidt_canonical(psi: &Ket, left: &[usize]) -> Result<SchmidtForm> {
    let n = psi.num_subsystems();
    let order = split_order(n, left)?;
    if order.len() == left.len() {
        return Err(Error::InvalidArgument("bipartition needs two nonempty groups".into()));
    }
    let (m, _, _) = as_matrix(psi, left)?;
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Internal("svd without U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Internal("svd without V".into()))?;
    let first_sig = |v: &[Complex64]| v.iter().position(|z| z.norm() > 1e-10).unwrap_or(usize::MAX);
    let mut terms: Vec<(f64, Vec<Complex64>, Vec<Complex64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12)
        .map(|(i, &s)| {
            let mut l: Vec<Complex64> = u.column(i).iter().copied().collect();
            let mut r: Vec<Complex64> = vt.row(i).iter().copied().collect();
            if let Some(z) = l.iter().find(|z| z.norm() > 1e-10).copied() {
                let ph = z / z.norm();
                l.iter_mut().for_each(|x| *x /= ph);
                r.iter_mut().for_each(|x| *x *= ph);
            }
            (s, l, r)
        })
        .collect();
    terms.sort_by(
        |a, b| {
            if (a.0 - b.0).abs() > 1e-10 {
                b.0.total_cmp(&a.0)
            } else {
                first_sig(&a.1).cmp(&first_sig(&b.1))
            }
        },
    );
    let norm = terms.iter().map(|t| t.0 * t.0).sum::<f64>().sqrt();
    Ok(SchmidtForm {
        coeffs: terms.iter().map(|t| t.0 / norm).collect(),
        left_basis: terms.iter().map(|t| t.1.clone()).collect(),
        right_basis: terms.into_iter().map(|t| t.2).collect(),
        left: left.to_vec(),
        right: order[left.len()..].to_vec(),
        dims: psi.dims.clone(),
    })
}

/// ⟨ψ|op|ψ⟩ for a full-space Hermitian operator.
pub fn expectation(op: &Operator, psi: &Ket) -> Result<f64> {
    let targets: Vec<usize> = (0..psi.num_subsystems()).collect();
    expectation_on(op, psi, &targets)
}

pub fn expectation_on(op: &Operator, psi: &Ket, targets: &[usize]) -> Result<f64> {
    if !op.is_hermitian() {
        return Err(Error::WrongKind("hermitian"));
    }
    check_targets(&psi.dims, targets, &op.dims)?;
    let out = apply_raw(&psi.dims, &psi.amps, &op.mat, targets);
    let v: Complex64 = psi.amps.iter().zip(&out).map(|(a, b)| a.conj() * b).sum();
    if v.im.abs() >= 1e-10 {
        return Err(Error::Internal(format!("expectation has imaginary part {}", v.im)));
    }
    Ok(v.re)
}

pub fn random_ket<R: Rng + ?Sized>(dims: Vec<usize>, rng: &mut R) -> Result<Ket> {
    let n = product(&dims);
    let amps = (0..n).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
    Ket::normalized(dims, amps)
}

/// Haar-distributed unitary via QR of a complex Gaussian matrix.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let z = DMatrix::from_fn(dim, dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut u = q;
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        u.column_mut(j).iter_mut().for_each(|x| *x *= ph);
    }
    Operator { dims: vec![dim], mat: u, kind: OpKind::Unitary }
}

#[derive(Serialize, Deserialize)]
struct KetRepr {
    dims: Vec<usize>,
    amps: Vec<[f64; 2]>,
}

impl Serialize for Ket {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KetRepr { dims: self.dims.clone(), amps: self.amps.iter().map(|z| [z.re, z.im]).collect() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ket {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = KetRepr::deserialize(d)?;
        Ket::normalized(r.dims, r.amps.iter().map(|p| c(p[0], p[1])).collect()).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    dims: Vec<usize>,
    kind: OpKind,
    mat: Vec<[f64; 2]>,
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.side();
        let mat = (0..n * n)
            .map(|k| {
                let z = self.mat[(k / n, k % n)];
                [z.re, z.im]
            })
            .collect();
        OperatorRepr { dims: self.dims.clone(), kind: self.kind, mat }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = OperatorRepr::deserialize(d)?;
        let n = product(&r.dims);
        if r.mat.len() != n * n {
            return Err(serde::de::Error::custom("matrix length does not match dims"));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| {
            let p = r.mat[i * n + j];
            c(p[0], p[1])
        });
        Operator::new(r.dims, mat, r.kind).map_err(serde::de::Error::custom)
    }
}
