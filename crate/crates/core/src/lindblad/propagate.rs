use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sprs::CsMat;

use super::krylov::{expmv, KrylovOptions};
use super::series::TimeSeries;
use super::superop::{
    assemble_dense, assemble_sparse, unvec, vec_of, DEFAULT_DENSE_CAP, DEFAULT_SPARSE_CAP,
};
use super::{CompiledModel, LindbladModel};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::linalg::{self, C64, ONE};
use crate::ode::{Dopri5, Frame, StepControl, StepStats};

/// Hilbert dimension up to which `Method::Auto` uses the dense propagator.
pub const AUTO_DENSE_LIMIT: usize = 30;

/// Time-stepping method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dense exponential for small spaces, interaction-adaptive otherwise.
    #[default]
    Auto,
    /// Dormand–Prince 5(4) on the full right-hand side.
    ExplicitAdaptive,
    /// Dormand–Prince 5(4) in the frame of the diagonal of `H_eff`.
    InteractionAdaptive,
    /// Arnoldi `exp(tL)v` on the sparse superoperator.
    KrylovExponential,
    /// Cached dense matrix exponential of the superoperator.
    DenseExponential,
}

/// Integration settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagatorPlan {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Step cap in units of 1/(largest collapse rate).
    pub max_step: Option<f64>,
    pub krylov_dim: usize,
    pub dense_cap: usize,
    pub sparse_cap: usize,
    /// Record min eigenvalue and Hermiticity error at every sample.
    pub diagnostics: bool,
    /// Keep a copy of every sampled state.
    pub store_states: bool,
}

impl Default for PropagatorPlan {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            rtol: 1e-8,
            atol: 1e-10,
            max_step: None,
            krylov_dim: 30,
            dense_cap: DEFAULT_DENSE_CAP,
            sparse_cap: DEFAULT_SPARSE_CAP,
            diagnostics: true,
            store_states: false,
        }
    }
}

impl PropagatorPlan {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) || !(self.atol > 0.0) {
            return Err(Error::InvalidParameter(
                "tolerances must be positive".into(),
            ));
        }
        if let Some(m) = self.max_step {
            if !(m > 0.0) {
                return Err(Error::InvalidParameter("max_step must be positive".into()));
            }
        }
        if self.krylov_dim < 2 {
            return Err(Error::InvalidParameter(
                "krylov_dim must be at least 2".into(),
            ));
        }
        Ok(())
    }

    fn resolve(&self, dim: usize) -> Method {
        match self.method {
            Method::Auto if dim <= AUTO_DENSE_LIMIT.min(self.dense_cap) => Method::DenseExponential,
            Method::Auto => Method::InteractionAdaptive,
            m => m,
        }
    }
}

/// A named scalar function of the state recorded at each sample.
pub struct Observer<'a> {
    pub name: String,
    f: Box<dyn Fn(&DensityMatrix) -> Result<f64> + Send + Sync + 'a>,
}

impl<'a> Observer<'a> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&DensityMatrix) -> Result<f64> + Send + Sync + 'a,
    ) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }

    pub fn eval(&self, rho: &DensityMatrix) -> Result<f64> {
        (self.f)(rho)
    }
}

enum Engine {
    Ode {
        frame: Option<Frame>,
        h: Option<f64>,
    },
    Krylov {
        l: CsMat<C64>,
        opts: KrylovOptions,
    },
    Dense {
        l: Array2<C64>,
        cache: HashMap<u64, Array2<C64>>,
    },
}

/// Stateful propagator for one model.
pub struct Propagator {
    compiled: CompiledModel,
    engine: Engine,
    control: StepControl,
    method: Method,
    pub stats: StepStats,
}

impl Propagator {
    pub fn new(model: &LindbladModel, plan: &PropagatorPlan) -> Result<Self> {
        plan.validate()?;
        let compiled = model.compile();
        let method = plan.resolve(model.dim());
        let max_rate = model.max_rate();
        let max_step = match plan.max_step {
            Some(m) if max_rate > 0.0 => m / max_rate,
            _ => f64::INFINITY,
        };
        let control = StepControl {
            rtol: plan.rtol,
            atol: plan.atol,
            max_step,
            ..StepControl::default()
        };
        let engine = match method {
            Method::ExplicitAdaptive => Engine::Ode {
                frame: None,
                h: None,
            },
            Method::InteractionAdaptive => Engine::Ode {
                frame: Some(Frame::new(compiled.diagonal().clone())),
                h: None,
            },
            Method::KrylovExponential => Engine::Krylov {
                l: assemble_sparse(model, plan.sparse_cap)?,
                opts: KrylovOptions {
                    dim: plan.krylov_dim,
                    tol: plan.atol,
                    ..KrylovOptions::default()
                },
            },
            Method::DenseExponential => Engine::Dense {
                l: assemble_dense(model, plan.dense_cap)?,
                cache: HashMap::new(),
            },
            Method::Auto => unreachable!("resolved above"),
        };
        Ok(Self {
            compiled,
            engine,
            control,
            method,
            stats: StepStats::default(),
        })
    }

    /// Method actually used after resolving `Auto`.
    pub fn method(&self) -> Method {
        self.method
    }

    /// Advance a Hermitian matrix from `t0` to `t1` in place.
    pub fn advance(&mut self, rho: &mut Array2<C64>, t0: f64, t1: f64) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        let n = self.compiled.dim;
        match &mut self.engine {
            Engine::Ode { frame, h } => {
                let compiled = &self.compiled;
                let rhs = |_t: f64, y: &Array2<C64>, dy: &mut Array2<C64>| {
                    compiled.apply_hermitian_into(y.view(), dy);
                };
                let hook: &dyn Fn(&mut Array2<C64>) = &|m: &mut Array2<C64>| linalg::hermitize(m);
                let mut ode = Dopri5::new(rhs, self.control)
                    .with_initial_step(*h)
                    .with_post_step(hook);
                if let Some(fr) = frame.as_ref() {
                    ode = ode.with_frame(fr);
                }
                let mut t = t0;
                let result = ode.advance(&mut t, rho, t1);
                *h = ode.last_step();
                self.stats.accepted += ode.stats.accepted;
                self.stats.rejected += ode.stats.rejected;
                self.stats.rhs_evals += ode.stats.rhs_evals;
                result?;
            }
            Engine::Krylov { l, opts } => {
                let (w, substeps) = expmv(l, &vec_of(rho), t1 - t0, opts).map_err(|e| match e {
                    Error::Integration {
                        time_reached,
                        reason,
                    } => Error::Integration {
                        time_reached: t0 + time_reached,
                        reason,
                    },
                    other => other,
                })?;
                self.stats.accepted += substeps;
                *rho = unvec(&w, n);
                linalg::hermitize(rho);
            }
            Engine::Dense { l, cache } => {
                // key on 12 significant digits so a uniform grid reuses one propagator
                let dt: f64 = format!("{:.12e}", t1 - t0)
                    .parse()
                    .expect("formatted float");
                let p = match cache.get(&dt.to_bits()) {
                    Some(p) => p,
                    None => {
                        let p = linalg::expm(&l.mapv(|z| z * dt))?;
                        cache.entry(dt.to_bits()).or_insert(p)
                    }
                };
                *rho = unvec(&p.dot(&vec_of(rho)), n);
                linalg::hermitize(rho);
                self.stats.accepted += 1;
            }
        }
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Integration {
                time_reached: t1,
                reason: "state became non-finite".into(),
            });
        }
        Ok(())
    }
}

const TRACE_DRIFT_WARN: f64 = 1e-6;

/// Integrate from `rho0` at `t_grid[0]`, recording every observer at every grid time.
///
/// Columns: the observers in order, then `trace_error`, and with
/// diagnostics enabled `hermiticity_error` and `min_eigenvalue`.
pub fn evolve(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    plan: &PropagatorPlan,
    observers: &[Observer<'_>],
) -> Result<TimeSeries> {
    if rho0.layout() != model.layout() {
        return Err(Error::Layout(format!(
            "initial state on {} but model on {}",
            rho0.layout(),
            model.layout()
        )));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("time grid is empty".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    let mut names: Vec<String> = observers.iter().map(|o| o.name.clone()).collect();
    names.push("trace_error".into());
    if plan.diagnostics {
        names.push("hermiticity_error".into());
        names.push("min_eigenvalue".into());
    }
    let mut series = TimeSeries::new(names);
    if plan.store_states {
        series = series.store_states();
    }

    let mut prop = Propagator::new(model, plan)?;
    let layout = model.layout().clone();
    let mut rho = rho0.matrix().clone();
    let mut t_prev = t_grid[0];
    let mut values = Vec::new();
    for &t in t_grid {
        prop.advance(&mut rho, t_prev, t)?;
        t_prev = t;
        let state = DensityMatrix::from_matrix_unchecked(layout.clone(), rho.clone())?;
        values.clear();
        for o in observers {
            values.push(o.eval(&state)?);
        }
        let trace_error = (state.trace() - ONE).norm();
        if trace_error > TRACE_DRIFT_WARN {
            log::warn!("trace drift {trace_error:.3e} at t = {t}");
        }
        values.push(trace_error);
        if plan.diagnostics {
            let d = state.diagnostics()?;
            values.push(d.hermiticity_error);
            values.push(d.min_eigenvalue);
        }
        series.push(t, &values)?;
        series.push_state(&state);
    }
    log::debug!(
        "evolve: {:?}, {} accepted / {} rejected steps, {} rhs evaluations",
        prop.method(),
        prop.stats.accepted,
        prop.stats.rejected,
        prop.stats.rhs_evals
    );
    Ok(series)
}
