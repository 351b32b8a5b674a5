use ndarray::Array1;
use ndarray_linalg::SVD;
use serde::{Deserialize, Serialize};

use super::propagate::{Propagator, PropagatorPlan};
use super::superop::{assemble_dense, unvec};
use super::{liouvillian_apply, LindbladModel};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::linalg::{self, C64};

/// Largest Hilbert dimension for which the null-space method is used by default.
pub const DEFAULT_NULL_SPACE_CAP: usize = 40;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    /// Null space up to the cap, long-time evolution above it.
    #[default]
    Auto,
    NullSpace,
    LongTime,
}

#[derive(Clone, Debug)]
pub struct SteadyOptions {
    pub method: SteadyMethod,
    pub null_space_cap: usize,
    /// Singular values below this fraction of the largest count as zero.
    pub null_threshold: f64,
    /// Long-time: length of each convergence chunk.
    pub chunk: f64,
    /// Long-time: stop when a chunk changes no entry by more than this.
    pub tolerance: f64,
    pub t_max: f64,
    pub plan: PropagatorPlan,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Auto,
            null_space_cap: DEFAULT_NULL_SPACE_CAP,
            null_threshold: 1e-10,
            chunk: 0.25,
            tolerance: 1e-7,
            t_max: 50.0,
            plan: PropagatorPlan {
                diagnostics: false,
                ..PropagatorPlan::default()
            },
        }
    }
}

/// Steady state with default options for the given method.
pub fn steady_state(model: &LindbladModel, method: SteadyMethod) -> Result<DensityMatrix> {
    steady_state_with(
        model,
        &SteadyOptions {
            method,
            ..SteadyOptions::default()
        },
    )
}

pub fn steady_state_with(model: &LindbladModel, opts: &SteadyOptions) -> Result<DensityMatrix> {
    if model.max_rate() == 0.0 {
        return Err(Error::DegenerateSteadyState {
            nullity: model.dim(),
        });
    }
    let method = match opts.method {
        SteadyMethod::Auto if model.dim() <= opts.null_space_cap => SteadyMethod::NullSpace,
        SteadyMethod::Auto => SteadyMethod::LongTime,
        m => m,
    };
    match method {
        SteadyMethod::NullSpace => null_space(model, opts),
        _ => long_time(model, opts),
    }
}

fn null_space(model: &LindbladModel, opts: &SteadyOptions) -> Result<DensityMatrix> {
    let n = model.dim();
    let l = assemble_dense(model, opts.null_space_cap)?;
    let (_, sigma, vt) = l.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::Linalg("SVD returned no right singular vectors".into()))?;
    let s_max = sigma.iter().cloned().fold(0.0, f64::max);
    let nullity = sigma
        .iter()
        .filter(|&&s| s < opts.null_threshold * s_max)
        .count();
    if nullity > 1 {
        return Err(Error::DegenerateSteadyState { nullity });
    }
    let last = sigma.len() - 1;
    let v: Array1<C64> = vt.row(last).mapv(|z| z.conj());
    let mut rho = unvec(&v, n);
    let tr = linalg::trace(&rho);
    if tr.norm() < 1e-300 {
        return Err(Error::Linalg("null vector has zero trace".into()));
    }
    rho.mapv_inplace(|z| z / tr);
    linalg::hermitize(&mut rho);
    let residual = linalg::max_abs(&liouvillian_apply(model, &rho)?);
    log::debug!("null-space steady state: nullity {nullity}, residual {residual:.3e}");
    DensityMatrix::from_matrix_unchecked(model.layout().clone(), rho)
}

fn long_time(model: &LindbladModel, opts: &SteadyOptions) -> Result<DensityMatrix> {
    let mut prop = Propagator::new(model, &opts.plan)?;
    let mut rho = DensityMatrix::vacuum(model.layout()).into_matrix();
    let mut t = 0.0;
    loop {
        let before = rho.clone();
        prop.advance(&mut rho, t, t + opts.chunk)?;
        t += opts.chunk;
        let change = linalg::max_abs_diff(&rho, &before);
        if change < opts.tolerance {
            break;
        }
        if t >= opts.t_max {
            log::warn!(
                "long-time steady state not converged at t = {t} (last chunk change {change:.3e})"
            );
            break;
        }
    }
    DensityMatrix::from_matrix_unchecked(model.layout().clone(), rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, Operator};

    #[test]
    fn decay_has_vacuum_steady_state() {
        let a = fock::destroy(5).unwrap();
        let model = LindbladModel::new(Operator::zeros(a.layout()), vec![(2.0, a)]).unwrap();
        for method in [SteadyMethod::NullSpace, SteadyMethod::LongTime] {
            let rho = steady_state(&model, method).unwrap();
            assert!((rho.matrix()[[0, 0]].re - 1.0).abs() < 1e-8, "{method:?}");
            assert!(
                linalg::max_abs(&liouvillian_apply(&model, rho.matrix()).unwrap()) < 1e-7 * 2.0
            );
        }
    }

    #[test]
    fn closed_and_parity_preserving_models_are_degenerate() {
        let d = 6;
        let a = fock::destroy(d).unwrap();
        let closed = LindbladModel::new(fock::number(d).unwrap(), vec![]).unwrap();
        assert!(matches!(
            steady_state(&closed, SteadyMethod::Auto),
            Err(Error::DegenerateSteadyState { .. })
        ));
        let two_photon =
            LindbladModel::new(Operator::zeros(a.layout()), vec![(1.0, &a * &a)]).unwrap();
        match steady_state(&two_photon, SteadyMethod::NullSpace) {
            Err(Error::DegenerateSteadyState { nullity }) => assert!(nullity > 1),
            other => panic!("{other:?}"),
        }
    }
}
