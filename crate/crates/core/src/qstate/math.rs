//! Dense complex linear algebra for small multi-qubit states.
//!
//! States use the big-endian qubit convention throughout: qubit 0 of a group
//! is the most significant bit of the basis index, so for qubits `(a, b)` the
//! basis index of `|a b⟩` is `2a + b`. Density matrices of `n` qubits are
//! stored row-major as a flat `Vec` of length `4^n`, kets as a flat `Vec` of
//! length `2^n`.
//!
//! Gate application, partial trace and permutation all work by bit-indexed
//! gather/scatter over those flat arrays; nothing here allocates full
//! `2^n x 2^n` operator matrices.

use crate::scalar::{cplx, s, Scalar};
use num_complex::Complex;

/// Small dense complex square matrix (row-major), used for gate unitaries
/// and delivered two-qubit states.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<S: Scalar> {
    dim: usize,
    data: Vec<Complex<S>>,
}

impl<S: Scalar> CMat<S> {
    pub fn zero(dim: usize) -> Self {
        CMat {
            dim,
            data: vec![Complex::new(S::zero(), S::zero()); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = CMat::zero(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex::new(S::one(), S::zero());
        }
        m
    }

    /// Build from a row-major slice of `(re, im)` pairs in `f64`.
    pub fn from_rows_f64(dim: usize, rows: &[(f64, f64)]) -> Self {
        assert_eq!(rows.len(), dim * dim);
        CMat {
            dim,
            data: rows.iter().map(|&(re, im)| cplx(re, im)).collect(),
        }
    }

    pub fn from_vec(dim: usize, data: Vec<Complex<S>>) -> Self {
        assert_eq!(data.len(), dim * dim);
        CMat { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex<S> {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex<S>) {
        self.data[r * self.dim + c] = v;
    }

    pub fn data(&self) -> &[Complex<S>] {
        &self.data
    }

    pub fn adjoint(&self) -> CMat<S> {
        let mut out = CMat::zero(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.set(c, r, self.get(r, c).conj());
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMat<S>) -> CMat<S> {
        assert_eq!(self.dim, other.dim);
        let mut out = CMat::zero(self.dim);
        for r in 0..self.dim {
            for k in 0..self.dim {
                let a = self.get(r, k);
                if a.re == S::zero() && a.im == S::zero() {
                    continue;
                }
                for c in 0..self.dim {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &CMat<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm().to_f64().unwrap())
            .fold(0.0, f64::max)
    }
}

/// Kronecker product of two kets: `a` supplies the more significant bits.
pub fn kron_vec<S: Scalar>(a: &[Complex<S>], b: &[Complex<S>]) -> Vec<Complex<S>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(*x * *y);
        }
    }
    out
}

/// Kronecker product of two flat row-major matrices; `a`'s indices become the
/// more significant bits of the product's row and column indices.
pub fn kron_mat<S: Scalar>(
    a: &[Complex<S>],
    da: usize,
    b: &[Complex<S>],
    db: usize,
) -> Vec<Complex<S>> {
    let d = da * db;
    let mut out = vec![Complex::new(S::zero(), S::zero()); d * d];
    for ra in 0..da {
        for ca in 0..da {
            let va = a[ra * da + ca];
            for rb in 0..db {
                for cb in 0..db {
                    out[(ra * db + rb) * d + (ca * db + cb)] = va * b[rb * db + cb];
                }
            }
        }
    }
    out
}

/// Offsets of the `2^m` partner indices spanned by `m` bit strides.
/// `strides[0]` corresponds to the most significant bit of the gate index.
fn partner_offsets(strides: &[usize]) -> Vec<usize> {
    let m = strides.len();
    let sub = 1usize << m;
    let mut offsets = vec![0usize; sub];
    for (j, slot) in offsets.iter_mut().enumerate() {
        let mut off = 0usize;
        for (k, stride) in strides.iter().enumerate() {
            if j & (1 << (m - 1 - k)) != 0 {
                off |= stride;
            }
        }
        *slot = off;
    }
    offsets
}

/// Apply the `2^m x 2^m` matrix `mat` over the index bits selected by
/// `strides` (each a distinct power of two) in the flat array `data`. With
/// `conjugate`, entries of `mat` are complex-conjugated, which realizes the
/// right-multiplication by the adjoint on density-matrix column axes.
pub fn apply_matrix_flat<S: Scalar>(
    data: &mut [Complex<S>],
    strides: &[usize],
    mat: &CMat<S>,
    conjugate: bool,
) {
    let m = strides.len();
    let sub = 1usize << m;
    debug_assert_eq!(mat.dim(), sub);
    let offsets = partner_offsets(strides);
    let mask: usize = strides.iter().fold(0, |acc, s| acc | s);
    let mut scratch = vec![Complex::new(S::zero(), S::zero()); sub];
    for base in 0..data.len() {
        if base & mask != 0 {
            continue;
        }
        for (j, off) in offsets.iter().enumerate() {
            scratch[j] = data[base + off];
        }
        for (i, off) in offsets.iter().enumerate() {
            let mut acc = Complex::new(S::zero(), S::zero());
            for (j, amp) in scratch.iter().enumerate() {
                let coeff = if conjugate {
                    mat.get(i, j).conj()
                } else {
                    mat.get(i, j)
                };
                acc += coeff * *amp;
            }
            data[base + off] = acc;
        }
    }
}

/// Stride of qubit `k` in an `n`-qubit basis index (big-endian).
#[inline]
pub fn ket_stride(n: usize, k: usize) -> usize {
    1usize << (n - 1 - k)
}

/// Apply a unitary to the listed qubits of an `n`-qubit ket.
/// `targets[0]` maps to the most significant bit of the gate index.
pub fn apply_unitary_ket<S: Scalar>(
    data: &mut [Complex<S>],
    n: usize,
    targets: &[usize],
    mat: &CMat<S>,
) {
    let strides: Vec<usize> = targets.iter().map(|&k| ket_stride(n, k)).collect();
    apply_matrix_flat(data, &strides, mat, false);
}

/// Apply a unitary conjugation `U rho U^dagger` to the listed qubits of an
/// `n`-qubit density matrix stored as a flat `4^n` array.
pub fn apply_unitary_dm<S: Scalar>(
    data: &mut [Complex<S>],
    n: usize,
    targets: &[usize],
    mat: &CMat<S>,
) {
    let dim = 1usize << n;
    let row_strides: Vec<usize> = targets.iter().map(|&k| dim * ket_stride(n, k)).collect();
    let col_strides: Vec<usize> = targets.iter().map(|&k| ket_stride(n, k)).collect();
    apply_matrix_flat(data, &row_strides, mat, false);
    apply_matrix_flat(data, &col_strides, mat, true);
}

/// Expansion table: for every index over the listed qubit positions, the
/// corresponding bits placed inside an `n`-qubit basis index.
fn expand_table(n: usize, positions: &[usize]) -> Vec<usize> {
    let m = positions.len();
    let count = 1usize << m;
    let mut table = vec![0usize; count];
    for (x, slot) in table.iter_mut().enumerate() {
        let mut idx = 0usize;
        for (i, &q) in positions.iter().enumerate() {
            if x & (1 << (m - 1 - i)) != 0 {
                idx |= ket_stride(n, q);
            }
        }
        *slot = idx;
    }
    table
}

/// Partial trace of an `n`-qubit density matrix over the qubits in `traced`
/// (positions within the group). Returns the reduced matrix over the kept
/// qubits, whose relative order is preserved.
pub fn partial_trace_dm<S: Scalar>(
    data: &[Complex<S>],
    n: usize,
    traced: &[usize],
) -> Vec<Complex<S>> {
    let kept: Vec<usize> = (0..n).filter(|q| !traced.contains(q)).collect();
    let dim = 1usize << n;
    let kdim = 1usize << kept.len();
    let kexp = expand_table(n, &kept);
    let texp = expand_table(n, traced);
    let mut out = vec![Complex::new(S::zero(), S::zero()); kdim * kdim];
    for rk in 0..kdim {
        for ck in 0..kdim {
            let mut acc = Complex::new(S::zero(), S::zero());
            for t in &texp {
                let r = kexp[rk] + t;
                let c = kexp[ck] + t;
                acc += data[r * dim + c];
            }
            out[rk * kdim + ck] = acc;
        }
    }
    out
}

/// Reduced density matrix of the kept qubits of an `n`-qubit ket,
/// tracing out the qubits in `traced`.
pub fn partial_trace_ket<S: Scalar>(
    data: &[Complex<S>],
    n: usize,
    traced: &[usize],
) -> Vec<Complex<S>> {
    let kept: Vec<usize> = (0..n).filter(|q| !traced.contains(q)).collect();
    let kdim = 1usize << kept.len();
    let kexp = expand_table(n, &kept);
    let texp = expand_table(n, traced);
    let mut out = vec![Complex::new(S::zero(), S::zero()); kdim * kdim];
    for rk in 0..kdim {
        for ck in 0..kdim {
            let mut acc = Complex::new(S::zero(), S::zero());
            for t in &texp {
                acc += data[kexp[rk] + t] * data[kexp[ck] + t].conj();
            }
            out[rk * kdim + ck] = acc;
        }
    }
    out
}

/// Joint depolarizing channel on the listed qubits of a density matrix:
///
/// `rho <- (1 - p) rho + p * (I / 2^k) (x) tr_targets(rho)`
///
/// i.e. with probability `p` the targets' joint marginal is replaced by the
/// maximally mixed state while the remaining qubits keep their marginal and
/// correlations among themselves.
pub fn depolarize_dm<S: Scalar>(data: &mut [Complex<S>], n: usize, targets: &[usize], p: f64) {
    if p == 0.0 {
        return;
    }
    let sigma = partial_trace_dm(data, n, targets);
    let kept: Vec<usize> = (0..n).filter(|q| !targets.contains(q)).collect();
    let dim = 1usize << n;
    let kdim = 1usize << kept.len();
    let kexp = expand_table(n, &kept);
    let texp = expand_table(n, targets);
    let keep_w: S = s(1.0 - p);
    let mix_w: S = s(p / texp.len() as f64);
    for v in data.iter_mut() {
        *v *= keep_w;
    }
    for rk in 0..kdim {
        for ck in 0..kdim {
            let sv = sigma[rk * kdim + ck] * mix_w;
            if sv.re == S::zero() && sv.im == S::zero() {
                continue;
            }
            for t in &texp {
                let r = kexp[rk] + t;
                let c = kexp[ck] + t;
                data[r * dim + c] += sv;
            }
        }
    }
}

/// Reorder the qubits of a ket: `perm[i]` is the current position of the
/// qubit that ends up at position `i`.
pub fn permute_ket<S: Scalar>(data: &[Complex<S>], n: usize, perm: &[usize]) -> Vec<Complex<S>> {
    debug_assert_eq!(perm.len(), n);
    let len = data.len();
    let mut out = vec![Complex::new(S::zero(), S::zero()); len];
    for (old, v) in data.iter().enumerate() {
        let mut new = 0usize;
        for (i, &src) in perm.iter().enumerate() {
            if old & ket_stride(n, src) != 0 {
                new |= ket_stride(n, i);
            }
        }
        out[new] = *v;
    }
    out
}

/// Reorder the qubits of a density matrix: `perm[i]` is the current position
/// of the qubit that ends up at position `i`.
pub fn permute_dm<S: Scalar>(data: &[Complex<S>], n: usize, perm: &[usize]) -> Vec<Complex<S>> {
    debug_assert_eq!(perm.len(), n);
    let dim = 1usize << n;
    let mut map = vec![0usize; dim];
    for (old, slot) in map.iter_mut().enumerate() {
        let mut new = 0usize;
        for (i, &src) in perm.iter().enumerate() {
            if old & ket_stride(n, src) != 0 {
                new |= ket_stride(n, i);
            }
        }
        *slot = new;
    }
    let mut out = vec![Complex::new(S::zero(), S::zero()); dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            out[map[r] * dim + map[c]] = data[r * dim + c];
        }
    }
    out
}

/// Trace of a flat row-major square matrix.
pub fn trace<S: Scalar>(data: &[Complex<S>], dim: usize) -> Complex<S> {
    (0..dim).map(|i| data[i * dim + i]).fold(
        Complex::new(S::zero(), S::zero()),
        |acc, v| acc + v,
    )
}

/// Squared norm of a ket.
pub fn norm2<S: Scalar>(data: &[Complex<S>]) -> S {
    data.iter().map(|v| v.norm_sqr()).fold(S::zero(), |a, b| a + b)
}

/// `<psi| rho |psi>` for a flat density matrix and a pure state.
pub fn fidelity_dm_pure<S: Scalar>(rho: &[Complex<S>], psi: &[Complex<S>]) -> S {
    let dim = psi.len();
    let mut acc = Complex::new(S::zero(), S::zero());
    for r in 0..dim {
        for c in 0..dim {
            acc += psi[r].conj() * rho[r * dim + c] * psi[c];
        }
    }
    acc.re
}

/// `|<psi|phi>|^2` for two kets.
pub fn overlap2<S: Scalar>(phi: &[Complex<S>], psi: &[Complex<S>]) -> S {
    let mut acc = Complex::new(S::zero(), S::zero());
    for (a, b) in phi.iter().zip(psi) {
        acc += b.conj() * *a;
    }
    acc.norm_sqr()
}

/// The Bell state `(|00> + |11>)/sqrt(2)` as a ket.
pub fn bell_phi_plus<S: Scalar>() -> Vec<Complex<S>> {
    let h = s::<S>(std::f64::consts::FRAC_1_SQRT_2);
    vec![
        Complex::new(h, S::zero()),
        Complex::new(S::zero(), S::zero()),
        Complex::new(S::zero(), S::zero()),
        Complex::new(h, S::zero()),
    ]
}

/// Werner state with fidelity `f` to the Bell state `phi+`:
///
/// `rho = f |phi+><phi+| + (1 - f)/3 (I_4 - |phi+><phi+|)`
pub fn werner_dm<S: Scalar>(f: f64) -> Vec<Complex<S>> {
    let off = (1.0 - f) / 3.0;
    let mut rho = vec![Complex::new(S::zero(), S::zero()); 16];
    let diag_outer: S = s((f + off) / 2.0);
    let corner: S = s((f - off) / 2.0);
    let mixed: S = s(off);
    rho[0] = Complex::new(diag_outer, S::zero()); // |00><00|
    rho[15] = Complex::new(diag_outer, S::zero()); // |11><11|
    rho[3] = Complex::new(corner, S::zero()); // |00><11|
    rho[12] = Complex::new(corner, S::zero()); // |11><00|
    rho[5] = Complex::new(mixed, S::zero()); // |01><01|
    rho[10] = Complex::new(mixed, S::zero()); // |10><10|
    rho
}

/// Single-qubit Pauli matrix by code: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli_1q<S: Scalar>(code: u8) -> CMat<S> {
    match code {
        0 => CMat::from_rows_f64(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.0)]),
        1 => CMat::from_rows_f64(2, &[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]),
        2 => CMat::from_rows_f64(2, &[(0.0, 0.0), (0.0, -1.0), (0.0, 1.0), (0.0, 0.0)]),
        3 => CMat::from_rows_f64(2, &[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0), (-1.0, 0.0)]),
        _ => panic!("Pauli code out of range: {code}"),
    }
}

/// Validate that a flat matrix is a density matrix: Hermitian, unit trace
/// and positive semidefinite within `tol`.
pub fn check_density_matrix<S: Scalar>(
    data: &[Complex<S>],
    dim: usize,
    tol: f64,
) -> Result<(), String> {
    if data.len() != dim * dim {
        return Err(format!(
            "expected {}x{} entries, got {}",
            dim,
            dim,
            data.len()
        ));
    }
    let tol_s: S = s(tol);
    for r in 0..dim {
        for c in 0..dim {
            let d = (data[r * dim + c] - data[c * dim + r].conj()).norm();
            if d > tol_s {
                return Err(format!("not Hermitian at ({r},{c})"));
            }
        }
    }
    let tr = trace(data, dim);
    if (tr.re - S::one()).abs() > tol_s || tr.im.abs() > tol_s {
        return Err(format!("trace is {} + {}i, expected 1", tr.re, tr.im));
    }
    // Cholesky factorization of rho + tol*I succeeds iff all eigenvalues are
    // >= -tol, which is positive semidefiniteness up to tolerance.
    let mut l = vec![Complex::new(S::zero(), S::zero()); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = data[i * dim + j];
            if i == j {
                sum += Complex::new(tol_s, S::zero());
            }
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k].conj();
            }
            if i == j {
                if sum.re < -tol_s {
                    return Err(format!("not positive semidefinite (pivot {i})"));
                }
                let piv = sum.re.max(S::zero()).sqrt();
                l[i * dim + i] = Complex::new(piv, S::zero());
            } else {
                let piv = l[j * dim + j].re;
                if piv > tol_s {
                    l[i * dim + j] = sum / Complex::new(piv, S::zero());
                } else if sum.norm() > s::<S>(tol.sqrt()) {
                    return Err(format!("not positive semidefinite at ({i},{j})"));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c64(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn kron_is_big_endian() {
        // |0> (x) |1> = |01> -> basis index 1.
        let zero = vec![c64(1.0, 0.0), c64(0.0, 0.0)];
        let one = vec![c64(0.0, 0.0), c64(1.0, 0.0)];
        let v = kron_vec(&zero, &one);
        assert_eq!(v[1], c64(1.0, 0.0));
        assert_eq!(v[0], c64(0.0, 0.0));
    }

    #[test]
    fn werner_has_unit_trace_and_target_fidelity() {
        for f in [0.0, 0.25, 0.9, 1.0] {
            let w = werner_dm::<f64>(f);
            let tr = trace(&w, 4);
            assert!((tr.re - 1.0).abs() < 1e-15);
            let bell = bell_phi_plus::<f64>();
            assert!((fidelity_dm_pure(&w, &bell) - f).abs() < 1e-15, "f={f}");
            check_density_matrix(&w, 4, 1e-12).unwrap();
        }
    }

    #[test]
    fn depolarize_half_bell_gives_one_minus_three_quarters_p() {
        // Single-qubit depolarizing with probability p on one half of a
        // perfect Bell pair: fidelity drops to 1 - 3p/4.
        for p in [0.0, 0.1, 0.5, 1.0] {
            let bell = bell_phi_plus::<f64>();
            let mut rho = partial_trace_ket(&bell, 2, &[]); // 4x4 pure dm
            depolarize_dm(&mut rho, 2, &[1], p);
            let f = fidelity_dm_pure(&rho, &bell);
            assert!((f - (1.0 - 0.75 * p)).abs() < 1e-14, "p={p} f={f}");
        }
    }

    #[test]
    fn full_depolarize_yields_maximally_mixed() {
        let mut rho = vec![
            c64(1.0, 0.0),
            c64(0.0, 0.0),
            c64(0.0, 0.0),
            c64(0.0, 0.0),
        ];
        depolarize_dm(&mut rho, 1, &[0], 1.0);
        assert!((rho[0].re - 0.5).abs() < 1e-15);
        assert!((rho[3].re - 0.5).abs() < 1e-15);
        assert!(rho[1].norm() < 1e-15 && rho[2].norm() < 1e-15);
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let bell = bell_phi_plus::<f64>();
        let red = partial_trace_ket(&bell, 2, &[0]);
        assert!((red[0].re - 0.5).abs() < 1e-15);
        assert!((red[3].re - 0.5).abs() < 1e-15);
        assert!(red[1].norm() < 1e-15);
    }

    #[test]
    fn permutation_moves_qubits() {
        // |01> permuted with perm [1,0] becomes |10>.
        let mut v = vec![c64(0.0, 0.0); 4];
        v[1] = c64(1.0, 0.0);
        let w = permute_ket(&v, 2, &[1, 0]);
        assert_eq!(w[2], c64(1.0, 0.0));
    }

    #[test]
    fn density_check_rejects_bad_matrices() {
        // Not unit trace.
        let m = vec![c64(2.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)];
        assert!(check_density_matrix(&m, 2, 1e-9).is_err());
        // Negative eigenvalue.
        let m = vec![
            c64(1.5, 0.0),
            c64(0.0, 0.0),
            c64(0.0, 0.0),
            c64(-0.5, 0.0),
        ];
        assert!(check_density_matrix(&m, 2, 1e-9).is_err());
        // Non-Hermitian.
        let m = vec![c64(0.5, 0.0), c64(0.3, 0.0), c64(0.0, 0.1), c64(0.5, 0.0)];
        assert!(check_density_matrix(&m, 2, 1e-9).is_err());
    }

    #[test]
    fn f32_math_is_usable() {
        let w = werner_dm::<f32>(0.75);
        let bell = bell_phi_plus::<f32>();
        assert!((fidelity_dm_pure(&w, &bell) - 0.75).abs() < 1e-6);
    }
}
