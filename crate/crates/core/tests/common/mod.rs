#![allow(dead_code)]

use nalgebra::DMatrix;
use nonlocal_core::statevec::{c, haar_unitary, Ket, Operator};
use num_complex::Complex64;
use rand::Rng;

pub type CMat = DMatrix<Complex64>;

/// A ⊗ I ⊗ … with `op` at `site`, built by explicit Kronecker products.
pub fn lift(op: &CMat, site: usize, n: usize, d: usize) -> CMat {
    let mut out = DMatrix::from_element(1, 1, c(1.0, 0.0));
    for s in 0..n {
        let f = if s == site { op.clone() } else { DMatrix::identity(d, d) };
        out = out.kronecker(&f);
    }
    out
}

/// Distribution of f(eigenvalue) of a Hermitian matrix on ψ, merged within `tol`.
pub fn spectral_law<F: Fn(f64) -> f64>(h: &CMat, psi: &Ket, f: F, tol: f64) -> Vec<(f64, f64)> {
    let eig = h.clone().symmetric_eigen();
    let v = nalgebra::DVector::from_column_slice(psi.amps());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = eig.eigenvectors.column(j).dotc(&v).norm_sqr();
        let key = f(lam);
        match out.iter_mut().find(|(k, _)| (k - key).abs() <= tol) {
            Some(e) => e.1 += w,
            None => out.push((key, w)),
        }
    }
    out.retain(|(_, p)| *p > 1e-14);
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn tvd(a: &[(f64, f64)], b: &[(f64, f64)], tol: f64) -> f64 {
    let mut keys: Vec<f64> = a.iter().chain(b).map(|x| x.0).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup_by(|x, y| (*x - *y).abs() <= tol);
    let get = |v: &[(f64, f64)], k: f64| v.iter().filter(|x| (x.0 - k).abs() <= tol).map(|x| x.1).sum::<f64>();
    0.5 * keys.iter().map(|&k| (get(a, k) - get(b, k)).abs()).sum::<f64>()
}

/// U diag(values) U† with Haar U.
pub fn rotated_observable<R: Rng>(values: &[f64], rng: &mut R) -> Operator {
    let u = haar_unitary(values.len(), rng);
    let d = DMatrix::from_fn(values.len(), values.len(), |i, j| if i == j { c(values[i], 0.0) } else { c(0.0, 0.0) });
    let m = u.mat() * d * u.mat().adjoint();
    let m = (&m + m.adjoint()) * c(0.5, 0.0);
    Operator::hermitian(vec![values.len()], m).expect("hermitian by construction")
}

pub fn spin_basis(i: usize) -> Ket {
    let d = [[0, 0], [1, 1], [0, 1], [1, 0]][i - 1];
    Ket::from_digits(vec![2, 2], &d).expect("qubit digits")
}

/// Mean ± 3σ window for a binomial frequency.
pub fn within_3sigma(hits: usize, n: usize, p: f64) -> bool {
    let f = hits as f64 / n as f64;
    (f - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
