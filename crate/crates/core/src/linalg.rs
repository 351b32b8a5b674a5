//! Dense and sparse complex matrix helpers shared by the simulation modules.
//!
//! Dense work goes through `ndarray` (BLAS/LAPACK backed); sparse operators use
//! `sprs` CSR storage with hand-written sparse-dense kernels, since the
//! Liouvillian right-hand side is dominated by products of a very sparse
//! operator with a dense density matrix.

use ndarray::{Array1, Array2, ArrayView2, Zip};
use ndarray_linalg::{EigVals, Eigh, Inverse, UPLO};
use num_complex::Complex64;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Conjugate transpose.
pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &Array2<C64>) -> C64 {
    m.diag().sum()
}

/// Largest entrywise modulus.
pub fn max_abs(m: &Array2<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, x, y| acc.max((x - y).norm()))
}

/// max |m - m†| entrywise.
pub fn hermiticity_error(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    worst
}

/// Replace `m` by (m + m†)/2.
pub fn hermitize(m: &mut Array2<C64>) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]].im = 0.0;
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigvalsh(m: &Array2<C64>) -> Result<Array1<f64>> {
    let (vals, _) = m.eigh(UPLO::Lower)?;
    Ok(vals)
}

/// Eigenvalues of a general complex matrix (unordered).
pub fn eigvals(m: &Array2<C64>) -> Result<Array1<C64>> {
    Ok(m.eigvals()?)
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, ONE)
}

/// Kronecker product of dense matrices.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .assign(&b.mapv(|y| x * y));
    }
    out
}

fn one_norm(m: &Array2<C64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn scaled(m: &Array2<C64>, c: f64) -> Array2<C64> {
    m.mapv(|z| z * c)
}

/// Matrix exponential by Padé approximation with scaling and squaring
/// (Higham 2005 degree selection).
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument("expm of a non-square matrix".into()));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::Linalg("expm argument is not finite".into()));
    }
    let eye = identity(n);

    for &(deg, theta) in &THETA {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let a2 = a.dot(a);
            let mut u = scaled(&eye, coeffs[1]);
            let mut v = scaled(&eye, coeffs[0]);
            let mut power = eye.clone();
            for k in 1..=deg / 2 {
                power = power.dot(&a2);
                u.scaled_add(C64::from(coeffs[2 * k + 1]), &power);
                v.scaled_add(C64::from(coeffs[2 * k]), &power);
            }
            let u = a.dot(&u);
            return pade_solve(&u, &v);
        }
    }

    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = scaled(a, 0.5f64.powi(s));
    let b = &PADE13;
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let mut inner_u = scaled(&a6, b[13]);
    inner_u.scaled_add(C64::from(b[11]), &a4);
    inner_u.scaled_add(C64::from(b[9]), &a2);
    let mut u = a6.dot(&inner_u);
    u.scaled_add(C64::from(b[7]), &a6);
    u.scaled_add(C64::from(b[5]), &a4);
    u.scaled_add(C64::from(b[3]), &a2);
    u.scaled_add(C64::from(b[1]), &eye);
    let u = a.dot(&u);

    let mut inner_v = scaled(&a6, b[12]);
    inner_v.scaled_add(C64::from(b[10]), &a4);
    inner_v.scaled_add(C64::from(b[8]), &a2);
    let mut v = a6.dot(&inner_v);
    v.scaled_add(C64::from(b[6]), &a6);
    v.scaled_add(C64::from(b[4]), &a4);
    v.scaled_add(C64::from(b[2]), &a2);
    v.scaled_add(C64::from(b[0]), &eye);

    let mut r = pade_solve(&u, &v)?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

fn pade_solve(u: &Array2<C64>, v: &Array2<C64>) -> Result<Array2<C64>> {
    let p = v + u;
    let q = v - u;
    let q_inv = q.inv()?;
    Ok(q_inv.dot(&p))
}

/// CSR copy of the nonzero entries of a dense matrix.
pub fn to_csr(m: &Array2<C64>) -> CsMat<C64> {
    let mut tri = TriMat::new(m.dim());
    for ((i, j), &z) in m.indexed_iter() {
        if z != ZERO {
            tri.add_triplet(i, j, z);
        }
    }
    tri.to_csr()
}

/// `out += alpha * a * b` with `a` sparse and `b` dense.
pub(crate) fn csr_mul_dense(a: &CsMat<C64>, b: ArrayView2<C64>, alpha: C64, out: &mut Array2<C64>) {
    debug_assert_eq!(a.cols(), b.nrows());
    for (i, row) in a.outer_iterator().enumerate() {
        let mut out_row = out.row_mut(i);
        for (k, &v) in row.iter() {
            let c = alpha * v;
            out_row.zip_mut_with(&b.row(k), |o, &x| *o += c * x);
        }
    }
}

/// `out += alpha * b * a` with `b` dense and `a` sparse.
pub(crate) fn dense_mul_csr(b: ArrayView2<C64>, a: &CsMat<C64>, alpha: C64, out: &mut Array2<C64>) {
    debug_assert_eq!(b.ncols(), a.rows());
    // column k of b feeds column j of out through a[k, j]
    for (k, a_row) in a.outer_iterator().enumerate() {
        let b_col = b.column(k);
        for (j, &v) in a_row.iter() {
            let c = alpha * v;
            out.column_mut(j).zip_mut_with(&b_col, |o, &x| *o += c * x);
        }
    }
}

/// Sparse matrix-vector product `a * x`.
pub(crate) fn csr_mul_vec(a: &CsMat<C64>, x: &Array1<C64>) -> Array1<C64> {
    let mut y = Array1::zeros(a.rows());
    for (i, row) in a.outer_iterator().enumerate() {
        let mut acc = ZERO;
        for (k, &v) in row.iter() {
            acc += v * x[k];
        }
        y[i] = acc;
    }
    y
}
