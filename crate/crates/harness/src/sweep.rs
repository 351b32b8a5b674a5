//! Steady-state fidelity over a grid of couplings `(g_2ph, g_ps)`.

use std::collections::VecDeque;
use std::io::Write;

use catstab_core::fock::{self, DensityMatrix, Parity, StateVector};
use catstab_core::lindblad::{steady_state, LindbladModel, SteadyMethod};
use catstab_core::models::{
    default_n_tilde, effective_model, rate_kappa_2ph, rate_kappa_ps, three_mode_model,
    EffectiveParams, ThreeModeParams,
};
use catstab_core::observables::fidelity;
use catstab_core::plot::{self, ColorMap};
use catstab_core::{Result, C64};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{SweepGrid, SweepParams};

/// Fidelity matrix indexed `[i_g2ph][j_gps]`; failed points are `None`.
#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub g_2ph: Vec<f64>,
    pub g_ps: Vec<f64>,
    pub fidelity: Vec<Vec<Option<f64>>>,
    pub full_model: bool,
    pub failures: Vec<String>,
}

/// Best grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Optimum {
    pub i: usize,
    pub j: usize,
    pub g_2ph: f64,
    pub g_ps: f64,
    pub fidelity: f64,
}

impl SweepResult {
    pub fn optimum(&self) -> Option<Optimum> {
        let mut best: Option<Optimum> = None;
        for (i, row) in self.fidelity.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                if let Some(f) = *f {
                    if best.map_or(true, |b| f > b.fidelity) {
                        best = Some(Optimum {
                            i,
                            j,
                            g_2ph: self.g_2ph[i],
                            g_ps: self.g_ps[j],
                            fidelity: f,
                        });
                    }
                }
            }
        }
        best
    }

    /// Size of the 4-connected region of cells with fidelity at least
    /// `threshold` that contains the optimum.
    pub fn region_size(&self, threshold: f64) -> usize {
        let Some(best) = self.optimum() else { return 0 };
        if best.fidelity < threshold {
            return 0;
        }
        let (ni, nj) = (self.g_2ph.len(), self.g_ps.len());
        let mut seen = vec![vec![false; nj]; ni];
        let mut queue = VecDeque::from([(best.i, best.j)]);
        seen[best.i][best.j] = true;
        let mut count = 0;
        while let Some((i, j)) = queue.pop_front() {
            count += 1;
            let mut neighbours = Vec::with_capacity(4);
            if i > 0 {
                neighbours.push((i - 1, j));
            }
            if i + 1 < ni {
                neighbours.push((i + 1, j));
            }
            if j > 0 {
                neighbours.push((i, j - 1));
            }
            if j + 1 < nj {
                neighbours.push((i, j + 1));
            }
            for (a, b) in neighbours {
                if !seen[a][b] && self.fidelity[a][b].map_or(false, |f| f >= threshold) {
                    seen[a][b] = true;
                    queue.push_back((a, b));
                }
            }
        }
        count
    }

    /// Rows `g_2ph, g_ps, fidelity`; failed points leave `fidelity` empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["g_2ph", "g_ps", "fidelity"])?;
        for (i, g2) in self.g_2ph.iter().enumerate() {
            for (j, gp) in self.g_ps.iter().enumerate() {
                let f = self.fidelity[i][j]
                    .map(|f| f.to_string())
                    .unwrap_or_default();
                w.write_record([g2.to_string(), gp.to_string(), f])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_svg(&self) -> String {
        let marker = self.optimum().map(|o| (o.i, o.j));
        let title = if self.full_model {
            "Steady fidelity, full model"
        } else {
            "Steady fidelity, effective mapping"
        };
        plot::heatmap(
            &self.g_2ph,
            &self.g_ps,
            &self.fidelity,
            ColorMap::Sequential,
            marker,
            title,
            "g_2ph / kappa_1ph",
            "g_ps / kappa_1ph",
        )
    }
}

/// Cat amplitude, `ñ` and storage truncation shared by every sweep point.
struct Target {
    alpha: C64,
    n_tilde: usize,
    storage_dim: usize,
    state: StateVector,
}

impl Target {
    fn new(p: &SweepParams) -> Result<Self> {
        let alpha = C64::from(p.eps_ratio.sqrt());
        let n_tilde = p.n_tilde.unwrap_or_else(|| default_n_tilde(alpha));
        let storage_dim = p
            .storage_dim
            .unwrap_or_else(|| fock::default_storage_dim(alpha));
        let state = fock::cat_state(alpha, Parity::Even, storage_dim)?;
        Ok(Self {
            alpha,
            n_tilde,
            storage_dim,
            state,
        })
    }
}

/// Single-mode parameters the elimination formulas assign to one grid point.
/// Defined at zero coupling too, where the model reduces to photon loss.
pub fn mapped_params(p: &SweepParams, g_2ph: f64, g_ps: f64) -> Result<EffectiveParams> {
    let t = Target::new(p)?;
    mapped_with(p, &t, g_2ph, g_ps)
}

fn mapped_with(p: &SweepParams, t: &Target, g_2ph: f64, g_ps: f64) -> Result<EffectiveParams> {
    let kappa_2ph = rate_kappa_2ph(g_2ph, p.kappa_r1)?;
    Ok(EffectiveParams {
        kappa_1ph: p.kappa_1ph,
        kappa_2ph,
        kappa_ps: rate_kappa_ps(g_ps, p.kappa_r2, t.n_tilde)?,
        // 2 g ε_r1 / κ_r1 with ε_r1 = ratio·g, i.e. κ_2ph α² / 2
        eps_2ph: (0.5 * kappa_2ph * t.alpha.norm_sqr()).into(),
        n_tilde: Some(t.n_tilde),
        target_parity: Parity::Even,
        storage_dim: Some(t.storage_dim),
    })
}

fn circuit_params(p: &SweepParams, t: &Target, g_2ph: f64, g_ps: f64) -> Result<ThreeModeParams> {
    ThreeModeParams {
        g_2ph,
        g_ps,
        eps_r1: p.eps_ratio * g_2ph,
        chi_sr2: p.chi_sr2,
        kappa_r1: p.kappa_r1,
        kappa_r2: p.kappa_r2,
        kappa_1ph: p.kappa_1ph,
        n_tilde: Some(t.n_tilde),
        layout: None,
        include_self_kerr: false,
        chi_ss: 0.0,
        chi_r1r1: 0.0,
        chi_r2r2: 0.0,
    }
    .with_layout(&[t.storage_dim, p.readout_dims[0], p.readout_dims[1]])
}

fn point_model(
    p: &SweepParams,
    t: &Target,
    g_2ph: f64,
    g_ps: f64,
    full: bool,
) -> Result<LindbladModel> {
    if full {
        three_mode_model(&circuit_params(p, t, g_2ph, g_ps)?)
    } else {
        effective_model(&mapped_with(p, t, g_2ph, g_ps)?)
    }
}

fn point_fidelity(p: &SweepParams, t: &Target, g_2ph: f64, g_ps: f64, full: bool) -> Result<f64> {
    let model = point_model(p, t, g_2ph, g_ps, full)?;
    let rho = steady_state(&model, SteadyMethod::Auto)?;
    let storage: DensityMatrix = if full {
        fock::partial_trace(&rho, &[0])?
    } else {
        rho
    };
    fidelity(&storage, &t.state)
}

/// Evaluate every grid point on the current rayon pool. Results are placed by
/// index, so the output does not depend on scheduling.
pub fn run_sweep(params: &SweepParams, grid: &SweepGrid, full_model: bool) -> Result<SweepResult> {
    let target = Target::new(params)?;
    let g_2ph = grid.g_2ph.values();
    let g_ps = grid.g_ps.values();
    if full_model {
        log::warn!(
            "full-model sweep over {} points at layout ({}x{}x{}); expect long run times",
            g_2ph.len() * g_ps.len(),
            target.storage_dim,
            params.readout_dims[0],
            params.readout_dims[1]
        );
    }
    let points: Vec<(usize, usize)> = (0..g_2ph.len())
        .flat_map(|i| (0..g_ps.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(i, j)| point_fidelity(params, &target, g_2ph[i], g_ps[j], full_model))
        .collect();

    let mut fid = vec![vec![None; g_ps.len()]; g_2ph.len()];
    let mut failures = Vec::new();
    for (&(i, j), r) in points.iter().zip(results) {
        match r {
            Ok(f) => fid[i][j] = Some(f),
            Err(e) => {
                let msg = format!("g_2ph = {}, g_ps = {}: {e}", g_2ph[i], g_ps[j]);
                log::warn!("sweep point failed: {msg}");
                failures.push(msg);
            }
        }
    }
    Ok(SweepResult {
        g_2ph,
        g_ps,
        fidelity: fid,
        full_model,
        failures,
    })
}
