//! Arnoldi approximation of `exp(t L) v` for a sparse generator, with
//! adaptive substeps and the a-posteriori error estimate of Sidje (1998).

use ndarray::{s, Array1, Array2};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ZERO};

fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Krylov settings.
#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub dim: usize,
    /// Absolute error budget for the whole interval, relative to `|v|`.
    pub tol: f64,
    pub max_substeps: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            dim: 30,
            tol: 1e-10,
            max_substeps: 1_000_000,
        }
    }
}

/// `exp(t L) v`. Returns the result and the number of substeps used.
pub fn expmv(
    l: &CsMat<C64>,
    v: &Array1<C64>,
    t: f64,
    opts: &KrylovOptions,
) -> Result<(Array1<C64>, usize)> {
    let n = v.len();
    let m = opts.dim.min(n).max(1);
    let mut w = v.clone();
    let mut t_now = 0.0;
    let mut tau = t;
    let mut substeps = 0;
    let v_norm = norm(v).max(f64::MIN_POSITIVE);

    while t_now < t {
        if substeps >= opts.max_substeps {
            return Err(Error::Integration {
                time_reached: t_now,
                reason: "Krylov substep budget exhausted".into(),
            });
        }
        let beta = norm(&w);
        if beta == 0.0 {
            break;
        }
        // Arnoldi with modified Gram-Schmidt
        let mut basis: Vec<Array1<C64>> = Vec::with_capacity(m + 1);
        basis.push(w.mapv(|z| z / beta));
        let mut h = Array2::<C64>::zeros((m + 2, m + 2));
        let mut k = m;
        let mut breakdown = false;
        let mut avnorm = 0.0;
        for j in 0..m {
            let mut p = linalg::csr_mul_vec(l, &basis[j]);
            for (i, b) in basis.iter().enumerate() {
                let hij = dot(b, &p);
                h[[i, j]] = hij;
                p.scaled_add(-hij, b);
            }
            let hn = norm(&p);
            if hn <= 1e-13 * beta.max(1.0) {
                k = j + 1;
                breakdown = true;
                break;
            }
            h[[j + 1, j]] = C64::from(hn);
            basis.push(p.mapv(|z| z / hn));
        }
        if !breakdown {
            h[[m + 1, m]] = C64::from(1.0);
            avnorm = norm(&linalg::csr_mul_vec(l, &basis[m]));
        }

        tau = tau.min(t - t_now);
        loop {
            let size = if breakdown { k } else { m + 2 };
            let f = linalg::expm(&h.slice(s![..size, ..size]).mapv(|z| z * tau))?;
            let err = if breakdown {
                0.0
            } else {
                let e1 = beta * f[[m, 0]].norm();
                let e2 = beta * f[[m + 1, 0]].norm() * avnorm;
                if e1 > 10.0 * e2 {
                    e2
                } else if e1 > e2 {
                    e2 * e1 / (e1 - e2)
                } else {
                    e1
                }
            };
            let allowed = opts.tol * v_norm * tau / t;
            if err <= allowed {
                let used = if breakdown { k } else { m + 1 };
                let mut next = Array1::from_elem(n, ZERO);
                for (i, b) in basis.iter().take(used).enumerate() {
                    next.scaled_add(f[[i, 0]] * beta, b);
                }
                w = next;
                t_now += tau;
                substeps += 1;
                if !breakdown {
                    let ratio = if err > 0.0 { allowed / err } else { 1e3 };
                    tau *= (0.9 * ratio.powf(1.0 / m as f64)).clamp(0.2, 5.0);
                } else {
                    tau = t;
                }
                break;
            }
            let ratio = allowed / err;
            tau *= (0.9 * ratio.powf(1.0 / m as f64)).clamp(0.1, 0.9);
            if tau <= 1e-15 * t {
                return Err(Error::Integration {
                    time_reached: t_now,
                    reason: "Krylov substep underflow".into(),
                });
            }
        }
    }
    Ok((w, substeps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, to_csr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let mut a = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            a[[i, i]] = C64::new(-rng.gen_range(0.0..50.0), rng.gen_range(-200.0..200.0));
            if i + 1 < n {
                a[[i, i + 1]] = C64::new(rng.gen_range(-5.0..5.0), 0.0);
                a[[i + 1, i]] = C64::new(rng.gen_range(-5.0..5.0), 0.0);
            }
        }
        let v = Array1::from_shape_fn(n, |_| C64::new(rng.gen_range(-1.0..1.0), 0.0));
        let t = 0.7;
        let exact = expm(&a.mapv(|z| z * t)).unwrap().dot(&v);
        let opts = KrylovOptions {
            dim: 20,
            ..KrylovOptions::default()
        };
        let (approx, steps) = expmv(&to_csr(&a), &v, t, &opts).unwrap();
        let err = (&exact - &approx)
            .iter()
            .fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(err < 1e-8, "err {err} after {steps} substeps");
    }

    #[test]
    fn happy_breakdown_is_exact() {
        let a = Array2::from_diag(&Array1::from(vec![C64::from(-1.0), C64::from(-2.0)]));
        let v = Array1::from(vec![C64::from(1.0), C64::from(1.0)]);
        let (w, _) = expmv(&to_csr(&a), &v, 1.5, &KrylovOptions::default()).unwrap();
        assert!((w[0].re - (-1.5f64).exp()).abs() < 1e-13);
        assert!((w[1].re - (-3.0f64).exp()).abs() < 1e-13);
    }
}
