//! Row-major vectorized Liouvillian: `vec(A X B) = (A ⊗ Bᵀ) vec(X)`.

use ndarray::Array2;
use sprs::{CsMat, TriMat};

use super::LindbladModel;
use crate::error::{Error, Result};
use crate::linalg::{C64, I};

/// Largest Hilbert-space dimension for which a sparse superoperator is built.
pub const DEFAULT_SPARSE_CAP: usize = 400;
/// Largest Hilbert-space dimension for which a dense superoperator is built.
pub const DEFAULT_DENSE_CAP: usize = 64;

fn triplets(m: &CsMat<C64>) -> Vec<(usize, usize, C64)> {
    m.iter().map(|(&v, (i, j))| (i, j, v)).collect()
}

/// Push `coeff * (a ⊗ b)` where `b = None` means the identity.
fn push_kron(
    out: &mut Vec<(usize, usize, C64)>,
    n: usize,
    a: Option<&[(usize, usize, C64)]>,
    b: Option<&[(usize, usize, C64)]>,
    coeff: C64,
) {
    match (a, b) {
        (Some(a), None) => {
            for &(i, k, v) in a {
                for j in 0..n {
                    out.push((i * n + j, k * n + j, coeff * v));
                }
            }
        }
        (None, Some(b)) => {
            for i in 0..n {
                for &(j, l, w) in b {
                    out.push((i * n + j, i * n + l, coeff * w));
                }
            }
        }
        (Some(a), Some(b)) => {
            for &(i, k, v) in a {
                for &(j, l, w) in b {
                    out.push((i * n + j, k * n + l, coeff * v * w));
                }
            }
        }
        (None, None) => {
            for i in 0..n * n {
                out.push((i, i, coeff));
            }
        }
    }
}

fn superop_triplets(model: &LindbladModel) -> (usize, Vec<(usize, usize, C64)>) {
    let compiled = model.compile();
    let n = compiled.dim;
    let conj = |t: &[(usize, usize, C64)]| -> Vec<(usize, usize, C64)> {
        t.iter().map(|&(i, j, v)| (i, j, v.conj())).collect()
    };
    let mut out = Vec::new();
    let h = triplets(&compiled.h_eff);
    push_kron(&mut out, n, Some(&h), None, -I);
    push_kron(&mut out, n, None, Some(&conj(&h)), I);
    for j in &compiled.jumps {
        let a = triplets(&j.op);
        push_kron(&mut out, n, Some(&a), Some(&conj(&a)), C64::from(j.rate));
    }
    (n, out)
}

fn capacity(what: &'static str, dim: usize, cap: usize, required_bytes: u128) -> Error {
    Error::Capacity {
        what,
        dim,
        cap,
        required_bytes,
    }
}

/// Sparse superoperator; fails when the Hilbert dimension exceeds `cap`.
pub fn assemble_sparse(model: &LindbladModel, cap: usize) -> Result<CsMat<C64>> {
    let n = model.dim();
    if n > cap {
        let nnz_estimate: u128 = (n as u128).pow(2) * 8;
        return Err(capacity("sparse Liouvillian", n, cap, nnz_estimate * 24));
    }
    let (n, entries) = superop_triplets(model);
    let mut tri = TriMat::with_capacity((n * n, n * n), entries.len());
    for (i, j, v) in entries {
        tri.add_triplet(i, j, v);
    }
    Ok(tri.to_csr())
}

/// Dense superoperator; fails when the Hilbert dimension exceeds `cap`.
pub fn assemble_dense(model: &LindbladModel, cap: usize) -> Result<Array2<C64>> {
    let n = model.dim();
    if n > cap {
        return Err(capacity(
            "dense Liouvillian",
            n,
            cap,
            (n as u128).pow(4) * 16,
        ));
    }
    let (n, entries) = superop_triplets(model);
    let mut l = Array2::zeros((n * n, n * n));
    for (i, j, v) in entries {
        l[[i, j]] += v;
    }
    Ok(l)
}

/// Row-major flattening of a square matrix.
pub(crate) fn vec_of(m: &Array2<C64>) -> ndarray::Array1<C64> {
    m.iter().cloned().collect()
}

pub(crate) fn unvec(v: &ndarray::Array1<C64>, n: usize) -> Array2<C64> {
    Array2::from_shape_vec((n, n), v.to_vec()).expect("vector length is n^2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, Operator};
    use crate::linalg::{self, max_abs_diff};
    use crate::lindblad::liouvillian_apply;
    use crate::lindblad::tests::{random_hermitian, random_matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decay_spectrum_on_qubit() {
        let a = fock::destroy(2).unwrap();
        let kappa = 3.0;
        let model = LindbladModel::new(Operator::zeros(a.layout()), vec![(kappa, a)]).unwrap();
        let l = assemble_dense(&model, DEFAULT_DENSE_CAP).unwrap();
        let mut ev: Vec<f64> = linalg::eigvals(&l)
            .unwrap()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12);
                z.re
            })
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [-kappa, -kappa / 2.0, -kappa / 2.0, 0.0];
        for (x, y) in ev.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn dense_and_sparse_agree_with_direct_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let a = fock::destroy(d).unwrap();
        let h = Operator::new(a.layout().clone(), random_hermitian(&mut rng, d)).unwrap();
        let model = LindbladModel::new(h, vec![(1.0, a.clone()), (0.4, &a * &a)]).unwrap();
        let dense = assemble_dense(&model, DEFAULT_DENSE_CAP).unwrap();
        let sparse = assemble_sparse(&model, DEFAULT_SPARSE_CAP).unwrap();
        for _ in 0..20 {
            let rho = random_matrix(&mut rng, d);
            let direct = liouvillian_apply(&model, &rho).unwrap();
            let v = vec_of(&rho);
            assert!(max_abs_diff(&unvec(&dense.dot(&v), d), &direct) < 1e-10);
            let sv = linalg::csr_mul_vec(&sparse, &v);
            assert!(max_abs_diff(&unvec(&sv, d), &direct) < 1e-10);
        }
    }

    #[test]
    fn hamiltonian_only_is_commutator_superop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let hm = random_hermitian(&mut rng, d);
        let h = Operator::new(fock::ModeLayout::single(d).unwrap(), hm.clone()).unwrap();
        let l = assemble_dense(&LindbladModel::new(h, vec![]).unwrap(), DEFAULT_DENSE_CAP).unwrap();
        let id = linalg::identity(d);
        let expected = (&linalg::kron(&hm, &id) - &linalg::kron(&id, &hm.t().to_owned())) * (-I);
        assert!(max_abs_diff(&l, &expected) < 1e-14);
    }

    #[test]
    fn capacity_error_names_memory() {
        let a = fock::destroy(30).unwrap();
        let model = LindbladModel::new(Operator::zeros(a.layout()), vec![(1.0, a)]).unwrap();
        match assemble_dense(&model, 20) {
            Err(Error::Capacity {
                required_bytes,
                dim,
                ..
            }) => {
                assert_eq!(dim, 30);
                assert_eq!(required_bytes, 30u128.pow(4) * 16);
            }
            other => panic!("{other:?}"),
        }
        assert!(assemble_sparse(&model, 20).is_err());
    }
}
