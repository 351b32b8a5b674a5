//! Truncated Fock-space states and operators.
//!
//! Composite spaces are ordered tensor products; the first mode is the most
//! significant index (storage, readout 1, readout 2 for the three-mode model).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};

/// Probability mass allowed beyond the last retained Fock level before a
/// constructor reports truncation.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// Default dimension of the low-Q readout modes, which stay close to vacuum.
pub const DEFAULT_READOUT_DIM: usize = 3;

/// Ordered per-mode truncation dimensions of a composite Hilbert space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModeLayout {
    dims: Vec<usize>,
}

impl ModeLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Layout("a layout needs at least one mode".into()));
        }
        if let Some(&dim) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension { dim });
        }
        Ok(Self { dims })
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Layout of the listed modes, in their original order.
    pub fn subset(&self, modes: &[usize]) -> Result<Self> {
        let keep = normalize_modes(self, modes)?;
        Self::new(keep.iter().map(|&m| self.dims[m]).collect())
    }

    /// Layout of `self` followed by `other`.
    pub fn concat(&self, other: &ModeLayout) -> Self {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Self { dims }
    }
}

impl TryFrom<Vec<usize>> for ModeLayout {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<ModeLayout> for Vec<usize> {
    fn from(layout: ModeLayout) -> Self {
        layout.dims
    }
}

impl fmt::Display for ModeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join("x"))
    }
}

fn normalize_modes(layout: &ModeLayout, modes: &[usize]) -> Result<Vec<usize>> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("mode list is empty".into()));
    }
    let mut keep = modes.to_vec();
    keep.sort_unstable();
    if keep.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "repeated mode in {modes:?}"
        )));
    }
    if let Some(&bad) = keep.iter().find(|&&m| m >= layout.n_modes()) {
        return Err(Error::InvalidArgument(format!(
            "mode {bad} does not exist in layout {layout}"
        )));
    }
    Ok(keep)
}

/// Photon-number parity of a cat state or target manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    #[serde(rename = "+", alias = "even")]
    Even,
    #[serde(rename = "-", alias = "odd")]
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    fn admits(self, n: usize) -> bool {
        match self {
            Parity::Even => n % 2 == 0,
            Parity::Odd => n % 2 == 1,
        }
    }
}

impl Default for Parity {
    fn default() -> Self {
        Parity::Even
    }
}

/// A square complex matrix acting on the space described by its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: ModeLayout,
    matrix: Array2<C64>,
}

impl Operator {
    pub fn new(layout: ModeLayout, matrix: Array2<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.dim() != (n, n) {
            return Err(Error::Layout(format!(
                "matrix of shape {:?} does not match layout {layout} (dimension {n})",
                matrix.dim()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &ModeLayout) -> Self {
        let n = layout.total_dim();
        Self {
            layout: layout.clone(),
            matrix: Array2::zeros((n, n)),
        }
    }

    pub fn identity(layout: &ModeLayout) -> Self {
        Self {
            layout: layout.clone(),
            matrix: linalg::identity(layout.total_dim()),
        }
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            layout: self.layout.clone(),
            matrix: linalg::dagger(&self.matrix),
        }
    }

    pub fn scale(&self, c: impl Into<C64>) -> Self {
        let c = c.into();
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.mapv(|z| z * c),
        }
    }

    /// Product `self * other`, checking layouts.
    pub fn compose(&self, other: &Operator) -> Result<Self> {
        self.check_layout(other)?;
        Ok(Self {
            layout: self.layout.clone(),
            matrix: self.matrix.dot(&other.matrix),
        })
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    pub fn hermiticity_error(&self) -> f64 {
        linalg::hermiticity_error(&self.matrix)
    }

    pub fn apply(&self, psi: &StateVector) -> Result<Array1<C64>> {
        if psi.layout != self.layout {
            return Err(Error::Layout(format!(
                "operator on {} applied to state on {}",
                self.layout, psi.layout
            )));
        }
        Ok(self.matrix.dot(&psi.amplitudes))
    }

    pub(crate) fn check_layout(&self, other: &Operator) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!(
                "operators act on different layouts {} and {}",
                self.layout, other.layout
            )));
        }
        Ok(())
    }
}

// Arithmetic on operators panics on layout mismatch; use `compose` for a
// checked product.
impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: self.matrix.dot(&rhs.matrix),
        }
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.layout, rhs.layout, "operator layouts differ");
        Operator {
            layout: self.layout.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension { dim })
    } else {
        Ok(())
    }
}

fn single_mode(dim: usize, matrix: Array2<C64>) -> Result<Operator> {
    Operator::new(ModeLayout::single(dim)?, matrix)
}

/// Annihilation operator: `<n-1|a|n> = sqrt(n)`.
pub fn destroy(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    let mut m = Array2::zeros((dim, dim));
    for n in 1..dim {
        m[[n - 1, n]] = C64::from((n as f64).sqrt());
    }
    single_mode(dim, m)
}

pub fn create(dim: usize) -> Result<Operator> {
    Ok(destroy(dim)?.dagger())
}

pub fn number(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    single_mode(
        dim,
        Array2::from_diag(&Array1::from_shape_fn(dim, |n| C64::from(n as f64))),
    )
}

/// Photon-number parity `(-1)^n`.
pub fn parity(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    single_mode(
        dim,
        Array2::from_diag(&Array1::from_shape_fn(dim, |n| {
            C64::from(if n % 2 == 0 { 1.0 } else { -1.0 })
        })),
    )
}

pub fn identity(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    single_mode(dim, linalg::identity(dim))
}

/// `|m><n|` on a single mode.
pub fn jump(m: usize, n: usize, dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    for index in [m, n] {
        if index >= dim {
            return Err(Error::InvalidIndex { index, dim });
        }
    }
    let mut mat = Array2::zeros((dim, dim));
    mat[[m, n]] = ONE;
    single_mode(dim, mat)
}

/// `|n><n|` on a single mode.
pub fn fock_projector(n: usize, dim: usize) -> Result<Operator> {
    jump(n, n, dim)
}

/// Tensor product `a ⊗ b`; the layout of `a` comes first.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    Operator {
        layout: a.layout.concat(&b.layout),
        matrix: linalg::kron(&a.matrix, &b.matrix),
    }
}

/// Lift a single-mode operator to `layout`, acting as the identity on every
/// other mode.
pub fn embed(op: &Operator, mode_index: usize, layout: &ModeLayout) -> Result<Operator> {
    if op.layout.n_modes() != 1 {
        return Err(Error::Layout(format!(
            "embed expects a single-mode operator, got layout {}",
            op.layout
        )));
    }
    let dims = layout.dims();
    if mode_index >= dims.len() {
        return Err(Error::Layout(format!(
            "mode {mode_index} not in layout {layout}"
        )));
    }
    if dims[mode_index] != op.dim() {
        return Err(Error::Layout(format!(
            "operator dimension {} does not match mode {mode_index} of {layout}",
            op.dim()
        )));
    }
    let left: usize = dims[..mode_index].iter().product();
    let right: usize = dims[mode_index + 1..].iter().product();
    let mut m = op.matrix.clone();
    if left > 1 {
        m = linalg::kron(&linalg::identity(left), &m);
    }
    if right > 1 {
        m = linalg::kron(&m, &linalg::identity(right));
    }
    Operator::new(layout.clone(), m)
}

/// A normalized pure state.
#[derive(Clone, Debug)]
pub struct StateVector {
    layout: ModeLayout,
    amplitudes: Array1<C64>,
    truncation_loss: f64,
}

impl StateVector {
    /// Normalizes `amplitudes`; a zero vector is rejected.
    pub fn new(layout: ModeLayout, amplitudes: Array1<C64>) -> Result<Self> {
        Self::with_loss(layout, amplitudes, 0.0)
    }

    fn with_loss(
        layout: ModeLayout,
        amplitudes: Array1<C64>,
        truncation_loss: f64,
    ) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::Layout(format!(
                "{} amplitudes for layout {layout}",
                amplitudes.len()
            )));
        }
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector("cannot normalize".into()));
        }
        Ok(Self {
            layout,
            amplitudes: amplitudes.mapv(|z| z / norm),
            truncation_loss,
        })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    /// Probability that the untruncated state has beyond the last retained
    /// level (zero for states not built from an analytic expansion).
    pub fn truncation_loss(&self) -> f64 {
        self.truncation_loss
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!(
                "inner product between {} and {}",
                self.layout, other.layout
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Multiply by a global phase `e^{i theta}`.
    pub fn with_phase(&self, theta: f64) -> Self {
        let p = C64::from_polar(1.0, theta);
        Self {
            amplitudes: self.amplitudes.mapv(|z| z * p),
            ..self.clone()
        }
    }

    pub fn tensor(&self, other: &StateVector) -> Self {
        let mut amps = Array1::zeros(self.amplitudes.len() * other.amplitudes.len());
        let m = other.amplitudes.len();
        for (i, a) in self.amplitudes.iter().enumerate() {
            for (j, b) in other.amplitudes.iter().enumerate() {
                amps[i * m + j] = a * b;
            }
        }
        Self {
            layout: self.layout.concat(&other.layout),
            amplitudes: amps,
            truncation_loss: 1.0 - (1.0 - self.truncation_loss) * (1.0 - other.truncation_loss),
        }
    }

    /// `|psi><psi|` as a dense matrix.
    pub fn outer(&self) -> Array2<C64> {
        let n = self.amplitudes.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            self.amplitudes[i] * self.amplitudes[j].conj()
        })
    }
}

/// Fock state `|n>`.
pub fn fock_state(n: usize, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    if n >= dim {
        return Err(Error::InvalidIndex { index: n, dim });
    }
    let mut amps = Array1::zeros(dim);
    amps[n] = ONE;
    StateVector::new(ModeLayout::single(dim)?, amps)
}

/// Unnormalized coherent-state coefficients `e^{-|a|^2/2} a^n / sqrt(n!)`.
fn coherent_coefficients(alpha: C64, dim: usize) -> Array1<C64> {
    let mut amps = Array1::zeros(dim);
    let mut c = C64::from((-0.5 * alpha.norm_sqr()).exp());
    amps[0] = c;
    for n in 1..dim {
        c = c * alpha / (n as f64).sqrt();
        amps[n] = c;
    }
    amps
}

fn report_tail(what: &str, loss: f64, dim: usize) {
    if loss > TAIL_TOLERANCE {
        log::warn!("{what}: truncation at dimension {dim} discards probability {loss:.3e}");
    }
}

/// Coherent state `|alpha>`, renormalized after truncation.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    let amps = coherent_coefficients(alpha, dim);
    let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let loss = (1.0 - kept).max(0.0);
    report_tail("coherent state", loss, dim);
    StateVector::with_loss(ModeLayout::single(dim)?, amps, loss)
}

/// Even (`Parity::Even`) or odd cat state proportional to `|alpha> ± |-alpha>`.
pub fn cat_state(alpha: C64, parity: Parity, dim: usize) -> Result<StateVector> {
    check_dim(dim)?;
    let x = alpha.norm_sqr();
    if parity == Parity::Odd && x == 0.0 {
        return Err(Error::ZeroVector(
            "odd cat state is undefined at alpha = 0".into(),
        ));
    }
    let mut amps = coherent_coefficients(alpha, dim);
    for (n, z) in amps.iter_mut().enumerate() {
        if !parity.admits(n) {
            *z = ZERO;
        }
    }
    // Weight of the untruncated parity sector: e^{-x} cosh(x) or e^{-x} sinh(x).
    let sector = match parity {
        Parity::Even => 0.5 * (1.0 + (-2.0 * x).exp()),
        Parity::Odd => 0.5 * (1.0 - (-2.0 * x).exp()),
    };
    let kept: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let loss = (1.0 - kept / sector).max(0.0);
    report_tail("cat state", loss, dim);
    StateVector::with_loss(ModeLayout::single(dim)?, amps, loss)
}

/// Probability that a Poisson(|alpha|^2) photon distribution lies at or above `dim`.
pub fn poisson_tail(alpha: C64, dim: usize) -> f64 {
    let amps = coherent_coefficients(alpha, dim);
    (1.0 - amps.iter().map(|z| z.norm_sqr()).sum::<f64>()).max(0.0)
}

/// Storage truncation for a cat of amplitude `alpha`: the smallest dimension
/// whose Poisson tail is below [`TAIL_TOLERANCE`], plus four levels of
/// headroom for the two-photon ladder (`a†²` reaches two levels past the
/// retained support).
pub fn default_storage_dim(alpha: C64) -> usize {
    let mut dim = 2;
    while poisson_tail(alpha, dim) >= TAIL_TOLERANCE {
        dim += 1;
    }
    dim + 4
}

/// Density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    layout: ModeLayout,
    matrix: Array2<C64>,
}

/// Distance of a matrix from the density-matrix conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityDiagnostics {
    pub hermiticity_error: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl DensityDiagnostics {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-8;
    pub const EIGENVALUE_TOL: f64 = 1e-8;

    pub fn is_valid(&self) -> bool {
        self.hermiticity_error <= Self::HERMITICITY_TOL
            && self.trace_error <= Self::TRACE_TOL
            && self.min_eigenvalue >= -Self::EIGENVALUE_TOL
    }
}

impl DensityMatrix {
    /// Validated constructor.
    pub fn new(layout: ModeLayout, matrix: Array2<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(layout, matrix)?;
        let diag = rho.diagnostics()?;
        if !diag.is_valid() {
            return Err(Error::NotDensityMatrix(format!(
                "hermiticity error {:.2e}, trace error {:.2e}, min eigenvalue {:.2e}",
                diag.hermiticity_error, diag.trace_error, diag.min_eigenvalue
            )));
        }
        Ok(rho)
    }

    /// Wraps a matrix after a shape check only; used for integrator output
    /// whose physical validity is tracked separately.
    pub fn from_matrix_unchecked(layout: ModeLayout, matrix: Array2<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if matrix.dim() != (n, n) {
            return Err(Error::Layout(format!(
                "matrix of shape {:?} does not match layout {layout}",
                matrix.dim()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        Self {
            layout: psi.layout.clone(),
            matrix: psi.outer(),
        }
    }

    /// Convex combination of pure states; weights are renormalized.
    pub fn mixture(components: &[(f64, &StateVector)]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?
            .1;
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| *w < 0.0) || !(total > 0.0) {
            return Err(Error::InvalidArgument(
                "mixture weights must be nonnegative".into(),
            ));
        }
        let n = first.layout.total_dim();
        let mut m = Array2::zeros((n, n));
        for (w, psi) in components {
            if psi.layout != first.layout {
                return Err(Error::Layout(
                    "mixture components on different layouts".into(),
                ));
            }
            m.scaled_add(C64::from(w / total), &psi.outer());
        }
        Self::new(first.layout.clone(), m)
    }

    /// Vacuum of every mode.
    pub fn vacuum(layout: &ModeLayout) -> Self {
        let n = layout.total_dim();
        let mut m = Array2::zeros((n, n));
        m[[0, 0]] = ONE;
        Self {
            layout: layout.clone(),
            matrix: m,
        }
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    /// `Tr(op rho)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.layout != self.layout {
            return Err(Error::Layout(format!(
                "operator on {} with state on {}",
                op.layout, self.layout
            )));
        }
        Ok(op
            .matrix
            .outer_iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .zip(self.matrix.column(i).iter())
                    .map(|(a, b)| a * b)
                    .sum::<C64>()
            })
            .sum())
    }

    pub fn diagnostics(&self) -> Result<DensityDiagnostics> {
        let hermiticity_error = linalg::hermiticity_error(&self.matrix);
        let trace_error = (self.trace() - ONE).norm();
        let mut herm = self.matrix.clone();
        linalg::hermitize(&mut herm);
        let min_eigenvalue = linalg::eigvalsh(&herm)?
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        Ok(DensityDiagnostics {
            hermiticity_error,
            trace_error,
            min_eigenvalue,
        })
    }
}

/// Trace out every mode not listed in `keep`; kept modes retain their order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    let keep = normalize_modes(layout, keep)?;
    let kept_layout = layout.subset(&keep)?;
    if keep.len() == layout.n_modes() {
        return Ok(rho.clone());
    }
    let dims = layout.dims();
    let n = layout.total_dim();
    let traced: Vec<usize> = (0..dims.len()).filter(|m| !keep.contains(m)).collect();
    let kept_dim = kept_layout.total_dim();
    let traced_dim: usize = traced.iter().map(|&m| dims[m]).product();

    // full[k * traced_dim + t] = flat index of (kept multi-index k, traced multi-index t)
    let mut full = vec![0usize; n];
    let mut digits = vec![0usize; dims.len()];
    for flat in 0..n {
        let mut rem = flat;
        for m in (0..dims.len()).rev() {
            digits[m] = rem % dims[m];
            rem /= dims[m];
        }
        let k = keep.iter().fold(0, |acc, &m| acc * dims[m] + digits[m]);
        let t = traced.iter().fold(0, |acc, &m| acc * dims[m] + digits[m]);
        full[k * traced_dim + t] = flat;
    }

    let m = rho.matrix();
    let mut out = Array2::zeros((kept_dim, kept_dim));
    for i in 0..kept_dim {
        for j in 0..kept_dim {
            let mut acc = ZERO;
            for t in 0..traced_dim {
                acc += m[[full[i * traced_dim + t], full[j * traced_dim + t]]];
            }
            out[[i, j]] = acc;
        }
    }
    DensityMatrix::from_matrix_unchecked(kept_layout, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::from(re)
    }

    #[test]
    fn destroy_entries() {
        let a = destroy(2).unwrap();
        assert_eq!(a.matrix()[[0, 1]], ONE);
        assert_eq!(a.matrix().iter().filter(|z| **z != ZERO).count(), 1);

        let a = destroy(4).unwrap();
        let out = a.apply(&fock_state(2, 4).unwrap()).unwrap();
        assert!((out[1] - c(2f64.sqrt())).norm() < 1e-15);
        assert!(out.iter().enumerate().all(|(i, z)| i == 1 || *z == ZERO));

        let n = &a.dagger() * &a;
        for k in 0..4 {
            assert!((n.matrix()[[k, k]] - c(k as f64)).norm() < 1e-14);
        }
        assert!(destroy(1).is_err());
    }

    #[test]
    fn commutator_is_identity_below_cutoff() {
        let d = 7;
        let a = destroy(d).unwrap();
        let ad = a.dagger();
        let comm = &(&a * &ad) - &(&ad * &a);
        for i in 0..d - 1 {
            for j in 0..d - 1 {
                let expected = if i == j { ONE } else { ZERO };
                assert!((comm.matrix()[[i, j]] - expected).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn parity_properties() {
        let p = parity(3).unwrap();
        assert_eq!(p.matrix().diag().to_vec(), vec![c(1.0), c(-1.0), c(1.0)]);
        let d = 9;
        let p = parity(d).unwrap();
        let pp = &p * &p;
        assert!(linalg::max_abs_diff(pp.matrix(), &linalg::identity(d)) == 0.0);
        let a = destroy(d).unwrap();
        let anti = &(&p * &a) + &(&a * &p);
        assert_eq!(linalg::max_abs(anti.matrix()), 0.0);
        for alpha in [0.5, 2.0, 3.1] {
            let cat = cat_state(c(alpha), Parity::Even, 30).unwrap();
            let v = DensityMatrix::from_pure(&cat)
                .expectation(&parity(30).unwrap())
                .unwrap();
            assert!((v - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn coherent_state_examples() {
        let vac = coherent_state(ZERO, 8).unwrap();
        assert!((vac.amplitudes()[0] - ONE).norm() < 1e-15);

        let plus = coherent_state(c(2.0), 25).unwrap();
        let minus = coherent_state(c(-2.0), 25).unwrap();
        let overlap = plus.inner(&minus).unwrap().norm();
        assert!((overlap - (-8.0f64).exp()).abs() < 1e-9, "{overlap}");
        assert!((overlap - 3.3546e-4).abs() < 1e-8);

        let n = DensityMatrix::from_pure(&plus)
            .expectation(&number(25).unwrap())
            .unwrap();
        assert!((n.re - 4.0).abs() < 1e-6);
        assert!(plus.truncation_loss() < 1e-8);
    }

    #[test]
    fn cat_state_examples() {
        let cat = cat_state(c(2.0), Parity::Even, 25).unwrap();
        let c0 = 2.0 * (-2.0f64).exp() / (2.0 * (1.0 + (-8.0f64).exp())).sqrt();
        assert!((cat.amplitudes()[0].re - c0).abs() < 1e-10);
        assert!((cat.amplitudes()[0].re - 0.1913609).abs() < 1e-6);
        assert!(cat
            .amplitudes()
            .iter()
            .skip(1)
            .step_by(2)
            .all(|z| *z == ZERO));

        let coh = coherent_state(c(2.0), 25).unwrap();
        let p = cat.inner(&coh).unwrap().norm_sqr();
        assert!((p - 0.5 * (1.0 + (-8.0f64).exp())).abs() < 1e-9);
        assert!((p - 0.500168).abs() < 1e-6);

        assert!(matches!(
            cat_state(ZERO, Parity::Odd, 10),
            Err(Error::ZeroVector(_))
        ));
        let even0 = cat_state(ZERO, Parity::Even, 10).unwrap();
        assert!((even0.amplitudes()[0] - ONE).norm() < 1e-15);
    }

    #[test]
    fn cats_are_orthogonal_and_rebuild_coherent_state() {
        let alpha = c(2.0);
        let even = cat_state(alpha, Parity::Even, 25).unwrap();
        let odd = cat_state(alpha, Parity::Odd, 25).unwrap();
        assert!(even.inner(&odd).unwrap().norm() < 1e-12);

        // |alpha> = N+ |C+> + N- |C->, N± = sqrt((1 ± e^{-2|alpha|^2}) / 2)
        let e = (-8.0f64).exp();
        let n_plus = (0.5 * (1.0 + e)).sqrt();
        let ratio = ((1.0 - e) / (1.0 + e)).sqrt();
        let rebuilt =
            (even.amplitudes() + &odd.amplitudes().mapv(|z| z * ratio)).mapv(|z| z * n_plus);
        let coh = coherent_state(alpha, 25).unwrap();
        let err = rebuilt
            .iter()
            .zip(coh.amplitudes().iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn jump_and_projector() {
        let j = jump(4, 5, 8).unwrap();
        let out = j.apply(&fock_state(5, 8).unwrap()).unwrap();
        assert_eq!(out[4], ONE);
        let out = j.apply(&fock_state(3, 8).unwrap()).unwrap();
        assert!(out.iter().all(|z| *z == ZERO));
        let jj = &j.dagger() * &j;
        assert_eq!(jj, fock_projector(5, 8).unwrap());
        assert!(matches!(
            jump(8, 1, 8),
            Err(Error::InvalidIndex { index: 8, dim: 8 })
        ));
    }

    #[test]
    fn embed_and_tensor() {
        let layout = ModeLayout::new(vec![2, 2]).unwrap();
        let a0 = embed(&destroy(2).unwrap(), 0, &layout).unwrap();
        let one_one = fock_state(1, 2).unwrap().tensor(&fock_state(1, 2).unwrap());
        let out = a0.apply(&one_one).unwrap();
        // |0>⊗|1> has flat index 1
        assert_eq!(out[1], ONE);
        assert_eq!(out.iter().filter(|z| **z != ZERO).count(), 1);

        let layout = ModeLayout::new(vec![3, 4]).unwrap();
        let x = embed(&destroy(3).unwrap(), 0, &layout).unwrap();
        let y = embed(&(&create(4).unwrap() + &number(4).unwrap()), 1, &layout).unwrap();
        assert!(linalg::max_abs_diff((&x * &y).matrix(), (&y * &x).matrix()) < 1e-14);

        let a = &number(3).unwrap() + &identity(3).unwrap();
        let b = &parity(4).unwrap() + &number(4).unwrap();
        let t = tensor(&a, &b);
        assert!((t.trace() - a.trace() * b.trace()).norm() < 1e-12);

        let single = ModeLayout::single(5).unwrap();
        let n5 = number(5).unwrap();
        assert_eq!(embed(&n5, 0, &single).unwrap(), n5);
        assert!(embed(&n5, 1, &layout).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let psi = coherent_state(C64::new(0.7, -0.2), 6).unwrap();
        let vac = fock_state(0, 3).unwrap();
        let rho = DensityMatrix::from_pure(&psi.tensor(&vac));
        let reduced = partial_trace(&rho, &[0]).unwrap();
        assert!(linalg::max_abs_diff(reduced.matrix(), &psi.outer()) < 1e-14);
        assert!((reduced.trace() - rho.trace()).norm() < 1e-12);

        let layout = ModeLayout::new(vec![2, 2]).unwrap();
        let mut amps = Array1::zeros(4);
        amps[0] = ONE;
        amps[3] = ONE;
        let bell = DensityMatrix::from_pure(&StateVector::new(layout, amps).unwrap());
        let r = partial_trace(&bell, &[1]).unwrap();
        assert!((r.matrix()[[0, 0]] - c(0.5)).norm() < 1e-15);
        assert!((r.matrix()[[1, 1]] - c(0.5)).norm() < 1e-15);
        assert!(r.matrix()[[0, 1]].norm() < 1e-15);
        assert!(partial_trace(&bell, &[]).is_err());
    }

    #[test]
    fn partial_trace_three_modes_keeps_order() {
        let a = coherent_state(c(0.4), 3).unwrap();
        let b = fock_state(1, 2).unwrap();
        let d = coherent_state(C64::new(0.0, 0.3), 4).unwrap();
        let rho = DensityMatrix::from_pure(&a.tensor(&b).tensor(&d));
        let r = partial_trace(&rho, &[2, 0]).unwrap();
        assert_eq!(r.layout().dims(), &[3, 4]);
        assert!(linalg::max_abs_diff(r.matrix(), &a.tensor(&d).outer()) < 1e-14);
    }

    #[test]
    fn density_validation() {
        let layout = ModeLayout::single(2).unwrap();
        let bad = Array2::from_diag(&Array1::from(vec![c(1.2), c(-0.2)]));
        assert!(DensityMatrix::new(layout.clone(), bad).is_err());
        let ok = Array2::from_diag(&Array1::from(vec![c(0.3), c(0.7)]));
        assert!(DensityMatrix::new(layout, ok).is_ok());
    }

    #[test]
    fn storage_truncation_rule() {
        assert_eq!(default_storage_dim(c(2.0)), 25);
        assert!(poisson_tail(c(2.0), 21) < TAIL_TOLERANCE);
        assert!(poisson_tail(c(2.0), 20) >= TAIL_TOLERANCE);
    }

    #[test]
    fn layout_serde() {
        let l: ModeLayout = serde_json::from_str("[20, 3, 3]").unwrap();
        assert_eq!(l.total_dim(), 180);
        assert!(serde_json::from_str::<ModeLayout>("[20, 1]").is_err());
        let p: Parity = serde_json::from_str("\"odd\"").unwrap();
        assert_eq!(p, Parity::Odd);
    }
}
