//! Lindblad master-equation dynamics.

mod krylov;
mod propagate;
mod series;
mod steady;
mod superop;

pub use propagate::{evolve, Method, Observer, Propagator, PropagatorPlan};
pub use series::TimeSeries;
pub use steady::{
    steady_state, steady_state_with, SteadyMethod, SteadyOptions, DEFAULT_NULL_SPACE_CAP,
};
pub use superop::{assemble_dense, assemble_sparse, DEFAULT_DENSE_CAP, DEFAULT_SPARSE_CAP};

use ndarray::{Array1, Array2, ArrayView2};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::fock::{ModeLayout, Operator};
use crate::linalg::{self, C64, I, ONE};

/// A Hamiltonian plus weighted collapse operators on a common layout.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: Operator,
    collapse: Vec<(f64, Operator)>,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, collapse: Vec<(f64, Operator)>) -> Result<Self> {
        for (rate, op) in &collapse {
            if !(*rate >= 0.0) || !rate.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "collapse rate {rate} must be finite and >= 0"
                )));
            }
            hamiltonian.check_layout(op)?;
        }
        Ok(Self {
            hamiltonian,
            collapse,
        })
    }

    pub fn layout(&self) -> &ModeLayout {
        self.hamiltonian.layout()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn collapse_terms(&self) -> &[(f64, Operator)] {
        &self.collapse
    }

    /// Largest collapse rate (zero for a closed system).
    pub fn max_rate(&self) -> f64 {
        self.collapse.iter().map(|(r, _)| *r).fold(0.0, f64::max)
    }

    /// Sparse form used by the integrators.
    pub fn compile(&self) -> CompiledModel {
        let mut h_eff = self.hamiltonian.matrix().clone();
        let mut jumps = Vec::new();
        for (rate, op) in &self.collapse {
            if *rate == 0.0 {
                continue;
            }
            let a = op.matrix();
            let ad = linalg::dagger(a);
            h_eff.scaled_add(C64::new(0.0, -0.5 * rate), &ad.dot(a));
            jumps.push(CompiledJump {
                rate: *rate,
                op: linalg::to_csr(a),
                op_dag: linalg::to_csr(&ad),
            });
        }
        CompiledModel {
            dim: self.dim(),
            h_eff_diag: h_eff.diag().to_owned(),
            h_eff: linalg::to_csr(&h_eff),
            h_eff_dag: linalg::to_csr(&linalg::dagger(&h_eff)),
            jumps,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CompiledJump {
    pub rate: f64,
    pub op: CsMat<C64>,
    pub op_dag: CsMat<C64>,
}

/// CSR representation of a model: `H_eff = H - (i/2) sum r A†A` and the
/// jump operators.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub(crate) dim: usize,
    pub(crate) h_eff: CsMat<C64>,
    pub(crate) h_eff_dag: CsMat<C64>,
    pub(crate) h_eff_diag: Array1<C64>,
    pub(crate) jumps: Vec<CompiledJump>,
}

impl CompiledModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal of the effective Hamiltonian, used as an interaction frame.
    pub fn diagonal(&self) -> &Array1<C64> {
        &self.h_eff_diag
    }

    /// `out = L(rho)` for an arbitrary square matrix.
    pub fn apply_into(&self, rho: ArrayView2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::default());
        linalg::csr_mul_dense(&self.h_eff, rho, -I, out);
        linalg::dense_mul_csr(rho, &self.h_eff_dag, I, out);
        self.add_jumps(rho, out);
    }

    /// `out = L(rho)` assuming `rho` is Hermitian; the output is exactly
    /// Hermitian.
    pub fn apply_hermitian_into(&self, rho: ArrayView2<C64>, out: &mut Array2<C64>) {
        let n = self.dim;
        let mut g = Array2::zeros((n, n));
        linalg::csr_mul_dense(&self.h_eff, rho, -I, &mut g);
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = g[[i, j]] + g[[j, i]].conj();
            }
        }
        self.add_jumps(rho, out);
        linalg::hermitize(out);
    }

    fn add_jumps(&self, rho: ArrayView2<C64>, out: &mut Array2<C64>) {
        let n = self.dim;
        let mut tmp = Array2::zeros((n, n));
        for j in &self.jumps {
            tmp.fill(C64::default());
            linalg::csr_mul_dense(&j.op, rho, ONE, &mut tmp);
            linalg::dense_mul_csr(tmp.view(), &j.op_dag, C64::from(j.rate), out);
        }
    }
}

fn check_square(op: &Array2<C64>, rho: &Array2<C64>) -> Result<()> {
    if op.dim() != rho.dim() || rho.nrows() != rho.ncols() {
        return Err(Error::Layout(format!(
            "operator of shape {:?} cannot act on matrix of shape {:?}",
            op.dim(),
            rho.dim()
        )));
    }
    Ok(())
}

/// `D(O) rho = O rho O† - (O†O rho + rho O†O) / 2`.
pub fn dissipator_apply(op: &Operator, rho: &Array2<C64>) -> Result<Array2<C64>> {
    let o = op.matrix();
    check_square(o, rho)?;
    let od = linalg::dagger(o);
    let odo = od.dot(o);
    let mut out = o.dot(rho).dot(&od);
    out.scaled_add(C64::from(-0.5), &odo.dot(rho));
    out.scaled_add(C64::from(-0.5), &rho.dot(&odo));
    Ok(out)
}

/// `-i[H, rho] + sum rate D(O) rho`.
pub fn liouvillian_apply(model: &LindbladModel, rho: &Array2<C64>) -> Result<Array2<C64>> {
    let h = model.hamiltonian.matrix();
    check_square(h, rho)?;
    let mut out = (&h.dot(rho) - &rho.dot(h)) * (-I);
    for (rate, op) in &model.collapse {
        out.scaled_add(C64::from(*rate), &dissipator_apply(op, rho)?);
    }
    Ok(out)
}
