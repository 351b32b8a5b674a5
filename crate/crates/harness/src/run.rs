//! Running experiments and persisting their artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use catstab_core::fock::{self, DensityMatrix, StateVector};
use catstab_core::lindblad::{
    evolve, steady_state, LindbladModel, Observer, PropagatorPlan, SteadyMethod, TimeSeries,
};
use catstab_core::models::{
    check_rate_hierarchy, effective_model, three_mode_model, two_mode_reduced_model,
};
use catstab_core::observables::{self, WignerGrid};
use catstab_core::plot::{self, Line};
use catstab_core::reduction::{self, DecayFit};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, Experiment, ExperimentConfig, Grid, ModelKind, Params};
use crate::sweep::{run_sweep, SweepResult};

/// Process exit status for each failure class.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const CAPACITY: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] catstab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        use catstab_core::Error as E;
        match self {
            RunError::Config(_) | RunError::Usage(_) => exit::CONFIG,
            RunError::Io { .. } => exit::IO,
            RunError::Core(e) => match e {
                E::Capacity { .. } => exit::CAPACITY,
                E::Integration { .. }
                | E::DegenerateSteadyState { .. }
                | E::Linalg(_)
                | E::NotDensityMatrix(_) => exit::NUMERICAL,
                E::Io(_) | E::Csv(_) | E::Json(_) => exit::IO,
                E::InvalidDimension { .. }
                | E::InvalidIndex { .. }
                | E::Layout(_)
                | E::ZeroVector(_)
                | E::InvalidArgument(_)
                | E::InvalidParameter(_)
                | E::ZeroDivisor(_) => exit::CONFIG,
            },
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub full_model: bool,
}

/// What a run produced.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub summary: Value,
}

struct Artifacts {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, contents: &str) -> RunResult<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|source| RunError::Io { path: p, source })
    }

    fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> catstab_core::Result<()>,
    ) -> RunResult<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let p = self.path(name);
        fs::write(&p, buf).map_err(|source| RunError::Io { path: p, source })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> RunResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(catstab_core::Error::from)?;
        self.text(name, &(text + "\n"))
    }
}

/// A configured model with its storage-mode target.
pub struct Built {
    pub model: LindbladModel,
    pub target: StateVector,
    /// Whether states must be traced down to the storage mode first.
    pub multimode: bool,
    pub kappa_1ph: f64,
    pub warnings: Vec<String>,
}

pub fn build_model(kind: ModelKind, params: &Params) -> catstab_core::Result<Built> {
    match (kind, params) {
        (ModelKind::Effective, Params::Effective(p)) => Ok(Built {
            model: effective_model(p)?,
            target: p.target_state()?,
            multimode: false,
            kappa_1ph: p.kappa_1ph,
            warnings: vec![],
        }),
        (ModelKind::TwoMode | ModelKind::ThreeMode, Params::Circuit(p)) => {
            let model = if kind == ModelKind::TwoMode {
                two_mode_reduced_model(p)?
            } else {
                three_mode_model(p)?
            };
            let warnings: Vec<String> = check_rate_hierarchy(p)
                .iter()
                .map(|w| w.to_string())
                .collect();
            for w in &warnings {
                log::warn!("{w}");
            }
            let target = p.target_state(model.layout().dims()[0])?;
            Ok(Built {
                model,
                target,
                multimode: true,
                kappa_1ph: p.kappa_1ph,
                warnings,
            })
        }
        _ => Err(catstab_core::Error::InvalidArgument(
            "parameters do not match the model kind".into(),
        )),
    }
}

fn storage(rho: &DensityMatrix, multimode: bool) -> catstab_core::Result<DensityMatrix> {
    if multimode {
        fock::partial_trace(rho, &[0])
    } else {
        Ok(rho.clone())
    }
}

/// Fidelity, parity and mean photon number of the storage mode.
pub fn storage_observers(target: &StateVector, multimode: bool) -> Vec<Observer<'_>> {
    vec![
        Observer::new("fidelity", move |rho: &DensityMatrix| {
            observables::fidelity(&storage(rho, multimode)?, target)
        }),
        Observer::new("parity", move |rho: &DensityMatrix| {
            observables::mean_parity(&storage(rho, multimode)?)
        }),
        Observer::new("mean_photon", move |rho: &DensityMatrix| {
            observables::mean_photon(&storage(rho, multimode)?)
        }),
    ]
}

/// Evolve from vacuum over the time grid.
pub fn run_evolve(
    built: &Built,
    times: &[f64],
    plan: &PropagatorPlan,
) -> catstab_core::Result<TimeSeries> {
    let rho0 = DensityMatrix::vacuum(built.model.layout());
    evolve(
        &built.model,
        &rho0,
        times,
        plan,
        &storage_observers(&built.target, built.multimode),
    )
}

/// Plateau test: the last 10% of samples vary by less than 1e-3.
pub fn plateau(series: &TimeSeries, name: &str) -> bool {
    series.plateaued(name, 0.1, 1e-3)
}

fn time_axis(series: &TimeSeries, kappa_1ph: f64) -> (Vec<f64>, &'static str) {
    if kappa_1ph > 0.0 {
        (
            series.times().iter().map(|t| t * kappa_1ph).collect(),
            "t kappa_1ph",
        )
    } else {
        (series.times().to_vec(), "t")
    }
}

fn wigner_summary(grid: &WignerGrid, parity: f64) -> Value {
    let w00 = grid.value_at(0.0, 0.0);
    json!({
        "min": grid.min(),
        "max": grid.max(),
        "w00": w00,
        "parity": parity,
        "w00_over_parity_readout": if parity != 0.0 { Some(w00 * std::f64::consts::FRAC_PI_2 / parity) } else { None },
        "integral": grid.integral(),
        "max_imag_residue": grid.max_imag_residue,
        "edge_population": grid.edge_population,
    })
}

fn fits_svg(fits: &[DecayFit]) -> String {
    let d: Vec<f64> = fits.iter().map(|f| f.delta).collect();
    let fitted: Vec<f64> = fits.iter().map(|f| f.fitted_rate).collect();
    let asym: Vec<f64> = fits.iter().map(|f| f.asymptotic_rate).collect();
    let formula: Vec<f64> = fits.iter().map(|f| f.formula_rate).collect();
    plot::line_plot(
        &[
            Line {
                label: "fitted (residence)",
                x: &d,
                y: &fitted,
            },
            Line {
                label: "log-slope",
                x: &d,
                y: &asym,
            },
            Line {
                label: "formula",
                x: &d,
                y: &formula,
            },
        ],
        "Parity-selection rate",
        "delta = g_ps / kappa_r2",
        "rate / kappa_r2",
    )
}

fn sweep_summary(r: &SweepResult) -> Value {
    json!({
        "points": r.g_2ph.len() * r.g_ps.len(),
        "failed": r.failures.len(),
        "optimum": r.optimum(),
        "region_at_0_9": r.region_size(0.9),
        "full_model": r.full_model,
    })
}

/// Run an experiment, writing artifacts and a manifest into the run directory.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> RunResult<RunReport> {
    if opts.full_model && cfg.experiment != Experiment::Sweep {
        return Err(RunError::Usage("--full-model only applies to sweep".into()));
    }
    if cfg.experiment == Experiment::Sweep && cfg.model == ModelKind::ThreeMode && !opts.full_model
    {
        return Err(RunError::Usage(
            "a three_mode sweep must be requested explicitly with --full-model".into(),
        ));
    }
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("runs").join(cfg.experiment.name()));
    let started = Instant::now();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = opts.threads {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| RunError::Usage(format!("cannot start worker pool: {e}")))?
    };
    let threads = pool.current_num_threads();

    // compute first so a failing run leaves no partial artifacts behind
    let mut warnings = Vec::new();
    let outcome = pool.install(|| compute(cfg, opts, &mut warnings))?;
    let compute_seconds = started.elapsed().as_secs_f64();

    fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut art = Artifacts {
        dir: dir.clone(),
        outputs: vec![],
    };
    let mut as_run = serde_json::to_value(cfg).map_err(catstab_core::Error::from)?;
    as_run["output"] = json!(dir);
    art.json("config.json", &as_run)?;
    let summary = outcome.write(&mut art)?;

    let manifest = json!({
        "tool": "catstab",
        "versions": { "catstab": env!("CARGO_PKG_VERSION"), "catstab-core": catstab_core::VERSION },
        "experiment": cfg.experiment,
        "model": cfg.model,
        "threads": threads,
        "full_model": opts.full_model,
        "timings": {
            "compute_seconds": compute_seconds,
            "total_seconds": started.elapsed().as_secs_f64(),
        },
        "outputs": art.outputs,
        "warnings": warnings,
        "summary": summary,
    });
    let outputs = {
        let mut o = art.outputs.clone();
        o.push("manifest.json".into());
        o
    };
    art.json("manifest.json", &manifest)?;
    Ok(RunReport {
        out_dir: dir,
        outputs,
        warnings,
        summary,
    })
}

enum Outcome {
    Evolve { series: TimeSeries, kappa_1ph: f64 },
    Steady { pmf: Vec<f64>, summary: Value },
    Wigner { grid: WignerGrid, summary: Value },
    Sweep(SweepResult),
    Compare(reduction::ModelComparison),
    Reduce(Vec<DecayFit>),
}

fn compute(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    warnings: &mut Vec<String>,
) -> RunResult<Outcome> {
    Ok(match (&cfg.experiment, &cfg.grid) {
        (Experiment::Evolve, Grid::Time(g)) => {
            let built = build_model(cfg.model, &cfg.params)?;
            warnings.extend(built.warnings.iter().cloned());
            let series = run_evolve(&built, &g.times(), &cfg.propagator)?;
            if !plateau(&series, "fidelity") {
                warnings.push("fidelity has not reached a plateau by t_end".into());
            }
            Outcome::Evolve {
                series,
                kappa_1ph: built.kappa_1ph,
            }
        }
        (Experiment::Steady, _) => {
            let built = build_model(cfg.model, &cfg.params)?;
            warnings.extend(built.warnings.iter().cloned());
            let rho = steady_state(&built.model, SteadyMethod::Auto)?;
            let d = rho.diagnostics()?;
            let s = storage(&rho, built.multimode)?;
            let summary = json!({
                "fidelity": observables::fidelity(&s, &built.target)?,
                "parity": observables::mean_parity(&s)?,
                "mean_photon": observables::mean_photon(&s)?,
                "trace_error": d.trace_error,
                "hermiticity_error": d.hermiticity_error,
                "min_eigenvalue": d.min_eigenvalue,
            });
            Outcome::Steady {
                pmf: observables::photon_pmf(&s)?,
                summary,
            }
        }
        (Experiment::Wigner, Grid::Wigner(spec)) => {
            let built = build_model(cfg.model, &cfg.params)?;
            warnings.extend(built.warnings.iter().cloned());
            let s = storage(
                &steady_state(&built.model, SteadyMethod::Auto)?,
                built.multimode,
            )?;
            let grid = observables::wigner(&s, spec)?;
            if grid.edge_population > 1e-6 {
                warnings.push(format!(
                    "Wigner displacement reaches the truncation edge ({:.3e})",
                    grid.edge_population
                ));
            }
            let mut summary = wigner_summary(&grid, observables::mean_parity(&s)?);
            summary["fidelity"] = json!(observables::fidelity(&s, &built.target)?);
            Outcome::Wigner { grid, summary }
        }
        (Experiment::Sweep, Grid::Sweep(g)) => {
            let Params::Sweep(p) = &cfg.params else {
                unreachable!("sweep params are typed at load")
            };
            let r = run_sweep(p, g, opts.full_model)?;
            if opts.full_model {
                warnings.push("full three-mode sweep requested".into());
            }
            warnings.extend(
                r.failures
                    .iter()
                    .map(|f| format!("sweep point failed: {f}")),
            );
            Outcome::Sweep(r)
        }
        (Experiment::Compare, Grid::Time(g)) => {
            let Params::Circuit(p) = &cfg.params else {
                unreachable!("compare params are typed at load")
            };
            for w in check_rate_hierarchy(p) {
                log::warn!("{w}");
                warnings.push(w.to_string());
            }
            Outcome::Compare(reduction::compare_models(p, &g.times(), &cfg.propagator)?)
        }
        (Experiment::Reduce, Grid::Reduce(g)) => {
            let fits: Vec<catstab_core::Result<DecayFit>> = g
                .deltas
                .par_iter()
                .map(|&d| reduction::fit_decay(d, g.n_tilde))
                .collect();
            Outcome::Reduce(fits.into_iter().collect::<catstab_core::Result<_>>()?)
        }
        _ => unreachable!("grid kind is fixed by the experiment at load"),
    })
}

impl Outcome {
    fn write(&self, art: &mut Artifacts) -> RunResult<Value> {
        Ok(match self {
            Outcome::Evolve { series, kappa_1ph } => {
                art.csv("timeseries.csv", |w| series.write_csv(w))?;
                art.text("timeseries.json", &(series.to_json()? + "\n"))?;
                let (x, label) = time_axis(series, *kappa_1ph);
                let f = series.get("fidelity").unwrap_or_default();
                art.text(
                    "fidelity.svg",
                    &plot::line_plot(
                        &[Line {
                            label: "fidelity",
                            x: &x,
                            y: f,
                        }],
                        "Fidelity to the target cat",
                        label,
                        "fidelity",
                    ),
                )?;
                json!({
                    "final_fidelity": series.last("fidelity"),
                    "final_parity": series.last("parity"),
                    "final_mean_photon": series.last("mean_photon"),
                    "plateau": plateau(series, "fidelity"),
                    "max_trace_error": series.get("trace_error").map(|v| v.iter().cloned().fold(0.0, f64::max)),
                })
            }
            Outcome::Steady { pmf, summary } => {
                art.csv("photon_pmf.csv", |buf| {
                    let mut w = csv::Writer::from_writer(buf);
                    w.write_record(["n", "probability"])?;
                    for (n, p) in pmf.iter().enumerate() {
                        w.write_record([n.to_string(), p.to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
                let n: Vec<f64> = (0..pmf.len()).map(|n| n as f64).collect();
                art.text(
                    "photon_pmf.svg",
                    &plot::line_plot(
                        &[Line {
                            label: "P(n)",
                            x: &n,
                            y: pmf,
                        }],
                        "Steady-state photon distribution",
                        "n",
                        "probability",
                    ),
                )?;
                art.json("steady.json", summary)?;
                summary.clone()
            }
            Outcome::Wigner { grid, summary } => {
                art.csv("wigner.csv", |w| grid.write_csv(w))?;
                art.text("wigner.svg", &grid.to_svg("Steady-state Wigner function"))?;
                summary.clone()
            }
            Outcome::Sweep(r) => {
                art.csv("sweep.csv", |w| r.write_csv(w))?;
                art.text("sweep.svg", &r.to_svg())?;
                sweep_summary(r)
            }
            Outcome::Compare(c) => {
                art.csv("compare.csv", |w| c.series.write_csv(w))?;
                art.text("compare.json", &(c.series.to_json()? + "\n"))?;
                let x = c.series.times();
                let full = c.series.get("full").unwrap_or_default();
                let red = c.series.get("reduced").unwrap_or_default();
                art.text(
                    "compare.svg",
                    &plot::line_plot(
                        &[
                            Line {
                                label: "full model",
                                x,
                                y: full,
                            },
                            Line {
                                label: "reduced",
                                x,
                                y: red,
                            },
                        ],
                        "Full vs reduced dynamics",
                        "t",
                        "fidelity",
                    ),
                )?;
                json!({
                    "max_gap": c.max_gap,
                    "final_full": c.series.last("full"),
                    "final_reduced": c.series.last("reduced"),
                })
            }
            Outcome::Reduce(fits) => {
                art.csv("decay_fits.csv", |w| reduction::write_decay_csv(fits, w))?;
                art.json("decay_fits.json", fits)?;
                art.text("decay_rates.svg", &fits_svg(fits))?;
                json!({
                    "max_relative_error": fits.iter().map(|f| f.relative_error).fold(0.0, f64::max),
                    "max_population_drift": fits.iter().map(|f| f.population_drift).fold(0.0, f64::max),
                })
            }
        })
    }
}
