//! Fidelity, parity, photon statistics and Wigner functions.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, StateVector};
use crate::linalg::{C64, I, ZERO};
use crate::plot::{self, ColorMap};

const CLIP_TOL: f64 = 1e-8;

/// `<psi|rho|psi>`, clipped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, target: &StateVector) -> Result<f64> {
    if rho.layout() != target.layout() {
        return Err(Error::Layout(format!(
            "state on {} compared with target on {}",
            rho.layout(),
            target.layout()
        )));
    }
    let psi = target.amplitudes();
    let v = rho.matrix().dot(psi);
    let f: C64 = psi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
    if f.re < -CLIP_TOL || f.re > 1.0 + CLIP_TOL {
        log::warn!("fidelity {:.3e} outside [0, 1]; clipping", f.re);
    }
    Ok(f.re.clamp(0.0, 1.0))
}

fn single_mode(rho: &DensityMatrix) -> Result<()> {
    if rho.layout().n_modes() != 1 {
        return Err(Error::Layout(format!(
            "expected a single-mode state, got layout {}; take a partial trace first",
            rho.layout()
        )));
    }
    Ok(())
}

/// Photon-number distribution (diagonal of `rho`).
pub fn photon_pmf(rho: &DensityMatrix) -> Result<Vec<f64>> {
    single_mode(rho)?;
    Ok(rho.matrix().diag().iter().map(|z| z.re).collect())
}

pub fn mean_parity(rho: &DensityMatrix) -> Result<f64> {
    Ok(photon_pmf(rho)?
        .iter()
        .enumerate()
        .map(|(n, p)| if n % 2 == 0 { *p } else { -p })
        .sum())
}

pub fn mean_photon(rho: &DensityMatrix) -> Result<f64> {
    Ok(photon_pmf(rho)?
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum())
}

/// Rectangular phase-space grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
    /// Minimum number of extra Fock levels used while displacing; grown
    /// further when the grid reaches far from the origin.
    pub pad: usize,
}

impl Default for WignerSpec {
    fn default() -> Self {
        Self {
            x_min: -4.0,
            x_max: 4.0,
            p_min: -4.0,
            p_max: 4.0,
            nx: 81,
            np: 81,
            pad: 10,
        }
    }
}

impl WignerSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.np == 0 {
            return Err(Error::InvalidParameter(
                "Wigner grid needs at least one point per axis".into(),
            ));
        }
        if !(self.x_max >= self.x_min) || !(self.p_max >= self.p_min) {
            return Err(Error::InvalidParameter(
                "Wigner grid bounds are reversed".into(),
            ));
        }
        Ok(())
    }
}

/// Sampled Wigner function, `values[[i, j]] = W(x_i, p_j)`.
#[derive(Clone, Debug)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub values: Array2<f64>,
    /// Largest discarded imaginary part.
    pub max_imag_residue: f64,
    /// Largest population reaching the top two padded levels after a
    /// displacement; a truncation indicator.
    pub edge_population: f64,
}

impl WignerGrid {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value at the grid point nearest to `(x, p)`.
    pub fn value_at(&self, x: f64, p: f64) -> f64 {
        let nearest = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        self.values[[nearest(&self.x_axis, x), nearest(&self.p_axis, p)]]
    }

    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        let w = |axis: &[f64], i: usize| {
            if axis.len() < 2 {
                return 1.0;
            }
            let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
            if i == 0 || i == axis.len() - 1 {
                0.5 * h
            } else {
                h
            }
        };
        let mut acc = 0.0;
        for ((i, j), v) in self.values.indexed_iter() {
            acc += w(&self.x_axis, i) * w(&self.p_axis, j) * v;
        }
        acc
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "p", "W"])?;
        for (i, x) in self.x_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                w.write_record([
                    x.to_string(),
                    p.to_string(),
                    self.values[[i, j]].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Heatmap with a diverging color map pinned to white at zero.
    pub fn to_svg(&self, title: &str) -> String {
        let rows: Vec<Vec<Option<f64>>> = self
            .values
            .outer_iter()
            .map(|r| r.iter().map(|v| Some(*v)).collect())
            .collect();
        plot::heatmap(
            &self.x_axis,
            &self.p_axis,
            &rows,
            ColorMap::Diverging,
            None,
            title,
            "x",
            "p",
        )
    }
}

/// Precomputed pieces of `D(r e^{iθ}) = R(θ) V e^{-i r Λ} V† R(θ)†`, where
/// `i(a† - a) = V Λ V†` and `R(θ) = e^{iθ a†a}`.
struct Displacer {
    v: Array2<C64>,
    lambda: Array1<f64>,
}

impl Displacer {
    fn new(dim: usize) -> Result<Self> {
        // i(a† - a) = S (a + a†) S† with S = diag(i^n), so a real symmetric
        // eigensolve suffices.
        let mut q = Array2::<f64>::zeros((dim, dim));
        for n in 1..dim {
            let s = (n as f64).sqrt();
            q[[n, n - 1]] = s;
            q[[n - 1, n]] = s;
        }
        let (lambda, u) = q.eigh(UPLO::Lower)?;
        let powers = [C64::new(1.0, 0.0), I, C64::new(-1.0, 0.0), -I];
        let v = Array2::from_shape_fn((dim, dim), |(m, k)| powers[m % 4] * u[[m, k]]);
        Ok(Self { v, lambda })
    }

    /// First `cols` columns of `D(β)`.
    fn columns(&self, beta: C64, cols: usize) -> Array2<C64> {
        let r = beta.norm();
        let theta = beta.arg();
        let phase: Vec<C64> = self.lambda.iter().map(|l| (-I * r * l).exp()).collect();
        let mut scaled = self.v.clone();
        for (mut col, ph) in scaled.columns_mut().into_iter().zip(&phase) {
            col.mapv_inplace(|z| z * ph);
        }
        let vd = self.v.slice(ndarray::s![..cols, ..]).t().mapv(|z| z.conj());
        let mut d = scaled.dot(&vd);
        // R(θ) D R(θ)†: entry (m, n) picks up e^{iθ(m - n)}
        for ((m, n), z) in d.indexed_iter_mut() {
            *z *= C64::from_polar(1.0, theta * (m as f64 - n as f64));
        }
        d
    }

    #[cfg(test)]
    fn operator(&self, beta: C64) -> Array2<C64> {
        self.columns(beta, self.v.nrows())
    }
}

/// Working dimension that holds `ρ` displaced by up to `r_max`.
fn displacement_dim(rho: &DensityMatrix, r_max: f64, pad: usize) -> usize {
    let n = rho.matrix().nrows();
    // level below which all but 1e-10 of the population sits
    let mut tail = 1.0;
    let mut n_max = 0.0;
    for (k, p) in rho.matrix().diag().iter().enumerate() {
        n_max = k as f64;
        tail -= p.re;
        if tail < 1e-10 {
            break;
        }
    }
    let mu = (r_max + n_max.sqrt()).powi(2);
    let needed = (mu + 5.0 * mu.sqrt() + 10.0).ceil() as usize;
    (n + pad).max(needed)
}

/// `W(β) = (2/π) Tr[D(-β) ρ D(-β)† P]` with `β = x + i p` on the grid.
pub fn wigner(rho: &DensityMatrix, spec: &WignerSpec) -> Result<WignerGrid> {
    single_mode(rho)?;
    spec.validate()?;
    let n = rho.matrix().nrows();
    let xs = WignerSpec::axis(spec.x_min, spec.x_max, spec.nx);
    let ps = WignerSpec::axis(spec.p_min, spec.p_max, spec.np);
    let r_max = [
        spec.x_min.hypot(spec.p_min),
        spec.x_min.hypot(spec.p_max),
        spec.x_max.hypot(spec.p_min),
        spec.x_max.hypot(spec.p_max),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let dim = displacement_dim(rho, r_max, spec.pad);
    let disp = Displacer::new(dim)?;
    let points: Vec<(usize, usize)> = (0..xs.len())
        .flat_map(|i| (0..ps.len()).map(move |j| (i, j)))
        .collect();
    let edge_levels = 2.min(dim);

    let results: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|&(i, j)| {
            let d = disp.columns(-C64::new(xs[i], ps[j]), n);
            let dr = d.dot(rho.matrix());
            let mut w = ZERO;
            let mut edge: f64 = 0.0;
            for m in 0..dim {
                // [D ρ D†]_mm = sum_k (Dρ)_mk conj(D_mk)
                let diag: C64 = dr
                    .row(m)
                    .iter()
                    .zip(d.row(m).iter())
                    .map(|(a, b)| a * b.conj())
                    .sum();
                w += if m % 2 == 0 { diag } else { -diag };
                if m >= dim - edge_levels {
                    edge += diag.re;
                }
            }
            (
                w.re * 2.0 / std::f64::consts::PI,
                w.im.abs() * 2.0 / std::f64::consts::PI,
                edge,
            )
        })
        .collect();

    let mut values = Array2::zeros((xs.len(), ps.len()));
    let mut max_imag: f64 = 0.0;
    let mut edge_population: f64 = 0.0;
    for (&(i, j), (w, im, edge)) in points.iter().zip(results) {
        values[[i, j]] = w;
        max_imag = max_imag.max(im);
        edge_population = edge_population.max(edge);
    }
    if max_imag > 1e-10 {
        log::warn!("Wigner imaginary residue {max_imag:.3e} discarded");
    }
    if edge_population > 1e-6 {
        log::warn!(
            "Wigner displacement reaches the truncation edge (population {edge_population:.3e})"
        );
    }
    Ok(WignerGrid {
        x_axis: xs,
        p_axis: ps,
        values,
        max_imag_residue: max_imag,
        edge_population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{self, Parity};
    use std::f64::consts::PI;

    fn cat(parity: Parity) -> StateVector {
        fock::cat_state(C64::from(2.0), parity, 25).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let c = cat(Parity::Even);
        let rho = DensityMatrix::from_pure(&c);
        assert!((fidelity(&rho, &c).unwrap() - 1.0).abs() < 1e-12);

        let vac = DensityMatrix::vacuum(c.layout());
        let c0 = 2.0 * (-2.0f64).exp() / (2.0 * (1.0 + (-8.0f64).exp())).sqrt();
        let f = fidelity(&vac, &c).unwrap();
        assert!((f - c0 * c0).abs() < 1e-12);
        assert!((f - 0.0366190).abs() < 1e-7);

        let plus = fock::coherent_state(C64::from(2.0), 25).unwrap();
        let minus = fock::coherent_state(C64::from(-2.0), 25).unwrap();
        let mix = DensityMatrix::mixture(&[(0.5, &plus), (0.5, &minus)]).unwrap();
        let f = fidelity(&mix, &c).unwrap();
        assert!((f - 0.5 * (1.0 + (-8.0f64).exp())).abs() < 1e-10);
        assert!((f - 0.500168).abs() < 1e-6);
    }

    #[test]
    fn fidelity_is_phase_invariant() {
        let c = cat(Parity::Even);
        let rho = DensityMatrix::from_pure(&fock::coherent_state(C64::new(1.5, 0.4), 25).unwrap());
        let a = fidelity(&rho, &c).unwrap();
        let b = fidelity(&rho, &c.with_phase(PI / 3.0)).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn parity_and_photon_examples() {
        let vac = DensityMatrix::vacuum(&fock::ModeLayout::single(6).unwrap());
        assert_eq!(mean_parity(&vac).unwrap(), 1.0);
        assert_eq!(mean_photon(&vac).unwrap(), 0.0);

        let even = DensityMatrix::from_pure(&cat(Parity::Even));
        assert!((mean_parity(&even).unwrap() - 1.0).abs() < 1e-10);
        let odd = DensityMatrix::from_pure(&cat(Parity::Odd));
        let e8 = (-8.0f64).exp();
        let expected = 4.0 * (1.0 + e8) / (1.0 - e8);
        assert!((mean_photon(&odd).unwrap() - expected).abs() < 1e-8);
        assert!((mean_photon(&odd).unwrap() - 4.00268).abs() < 1e-5);
        let pmf = photon_pmf(&odd).unwrap();
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn multi_mode_state_needs_partial_trace() {
        let layout = fock::ModeLayout::new(vec![3, 2]).unwrap();
        let rho = DensityMatrix::vacuum(&layout);
        assert!(photon_pmf(&rho).is_err());
        let reduced = fock::partial_trace(&rho, &[0]).unwrap();
        assert_eq!(photon_pmf(&reduced).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn wigner_origin_values() {
        let spec = WignerSpec {
            x_min: 0.0,
            x_max: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            nx: 1,
            np: 1,
            pad: 10,
        };
        let vac = DensityMatrix::vacuum(&fock::ModeLayout::single(8).unwrap());
        assert!((wigner(&vac, &spec).unwrap().values[[0, 0]] - 2.0 / PI).abs() < 1e-12);
        let even = DensityMatrix::from_pure(&cat(Parity::Even));
        assert!((wigner(&even, &spec).unwrap().values[[0, 0]] - 2.0 / PI).abs() < 1e-10);
        let odd = DensityMatrix::from_pure(&cat(Parity::Odd));
        assert!((wigner(&odd, &spec).unwrap().values[[0, 0]] + 2.0 / PI).abs() < 1e-10);
    }

    #[test]
    fn displacement_matches_matrix_exponential() {
        let dim = 12;
        let disp = Displacer::new(dim).unwrap();
        let beta = C64::new(0.7, -1.1);
        let a = fock::destroy(dim).unwrap().into_matrix();
        let gen = &a.t().mapv(|z| z.conj()).mapv(|z| z * beta) - &a.mapv(|z| z * beta.conj());
        let expected = crate::linalg::expm(&gen).unwrap();
        let diff = crate::linalg::max_abs_diff(&disp.operator(beta), &expected);
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn coherent_wigner_is_gaussian_and_normalized() {
        let alpha = C64::new(1.0, -0.5);
        let rho = DensityMatrix::from_pure(&fock::coherent_state(alpha, 20).unwrap());
        let grid = wigner(&rho, &WignerSpec::default()).unwrap();
        // W = (2/π) exp(-2|β - α|²)
        for &(x, p) in &[(1.0, -0.5), (0.0, 0.0), (2.0, 1.0)] {
            let d2 = (x - alpha.re).powi(2) + (p - alpha.im).powi(2);
            let expected = 2.0 / PI * (-2.0 * d2).exp();
            assert!((grid.value_at(x, p) - expected).abs() < 1e-8, "{x},{p}");
        }
        assert!(
            (grid.integral() - 1.0).abs() < 2e-2,
            "integral {}",
            grid.integral()
        );
        assert!(grid.max_imag_residue < 1e-10);
        assert!(grid.edge_population < 1e-6);
    }

    #[test]
    fn cat_wigner_has_negativity_and_parity_consistency() {
        let rho = DensityMatrix::from_pure(&cat(Parity::Even));
        let spec = WignerSpec {
            nx: 41,
            np: 41,
            ..WignerSpec::default()
        };
        let grid = wigner(&rho, &spec).unwrap();
        assert!(grid.min() < -0.01);
        let p = mean_parity(&rho).unwrap();
        assert!((grid.value_at(0.0, 0.0) * PI / 2.0 - p).abs() < 1e-8);
        assert!(
            (grid.integral() - 1.0).abs() < 2e-2,
            "integral {}",
            grid.integral()
        );
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,p,W\n"));
        assert_eq!(text.lines().count(), 1 + 41 * 41);
    }

    #[test]
    fn pmf_of_storage_marginal() {
        let a = fock::coherent_state(C64::new(0.6, 0.1), 5).unwrap();
        let b = fock::coherent_state(C64::new(0.0, 0.4), 3).unwrap();
        let rho = DensityMatrix::from_pure(&a.tensor(&b));
        let pmf = photon_pmf(&fock::partial_trace(&rho, &[0]).unwrap()).unwrap();
        for (n, p) in pmf.iter().enumerate() {
            assert!((p - a.amplitudes()[n].norm_sqr()).abs() < 1e-10);
        }
    }
}
