//! Concrete master equations for the stabilized storage mode and the
//! analytic engineered rates.
//!
//! Units: every rate and coupling is a multiple of the single-photon loss
//! rate, and time is measured in units of its inverse.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fock::{self, ModeLayout, Operator, Parity, StateVector, DEFAULT_READOUT_DIM};
use crate::linalg::{C64, I};
use crate::lindblad::LindbladModel;

/// A complex number in a config: `2.0`, `[re, im]` or `{"re": .., "im": ..}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexValue(pub C64);

#[derive(Deserialize)]
#[serde(untagged)]
enum ComplexRepr {
    Real(f64),
    Pair([f64; 2]),
    Object(ComplexObject),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexObject {
    re: f64,
    #[serde(default)]
    im: f64,
}

impl<'de> Deserialize<'de> for ComplexValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(ComplexValue(match ComplexRepr::deserialize(d)? {
            ComplexRepr::Real(re) => C64::new(re, 0.0),
            ComplexRepr::Pair([re, im]) => C64::new(re, im),
            ComplexRepr::Object(o) => C64::new(o.re, o.im),
        }))
    }
}

impl Serialize for ComplexValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.im == 0.0 {
            s.serialize_f64(self.0.re)
        } else {
            [self.0.re, self.0.im].serialize(s)
        }
    }
}

impl From<f64> for ComplexValue {
    fn from(x: f64) -> Self {
        ComplexValue(C64::new(x, 0.0))
    }
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "{name} = {value} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// Even integer nearest to `x`, ties broken downward.
pub fn nearest_even(x: f64) -> usize {
    let lo = 2.0 * (x / 2.0).floor();
    let even = if x - lo <= lo + 2.0 - x { lo } else { lo + 2.0 };
    even.max(0.0) as usize
}

/// Default `ñ`: half the even integer closest to `|alpha|²`.
pub fn default_n_tilde(alpha: C64) -> usize {
    nearest_even(alpha.norm_sqr()) / 2
}

/// Parameters of the single-mode stabilized model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveParams {
    pub kappa_1ph: f64,
    pub kappa_2ph: f64,
    pub kappa_ps: f64,
    pub eps_2ph: ComplexValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tilde: Option<usize>,
    #[serde(default)]
    pub target_parity: Parity,
    /// Storage truncation; defaults to the Poisson-tail rule at the cat amplitude.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_dim: Option<usize>,
}

impl EffectiveParams {
    /// Rates `κ_2ph`, `κ_ps`, `κ_1ph` with the drive chosen for amplitude `alpha`.
    pub fn for_alpha(alpha: f64, kappa_2ph: f64, kappa_ps: f64, kappa_1ph: f64) -> Self {
        Self {
            kappa_1ph,
            kappa_2ph,
            kappa_ps,
            eps_2ph: (0.5 * kappa_2ph * alpha * alpha).into(),
            n_tilde: None,
            target_parity: Parity::Even,
            storage_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("kappa_1ph", self.kappa_1ph)?;
        check_rate("kappa_2ph", self.kappa_2ph)?;
        check_rate("kappa_ps", self.kappa_ps)?;
        if !self.eps_2ph.0.re.is_finite() || !self.eps_2ph.0.im.is_finite() {
            return Err(Error::InvalidParameter("eps_2ph must be finite".into()));
        }
        if let Some(d) = self.storage_dim {
            if d < 2 {
                return Err(Error::InvalidDimension { dim: d });
            }
        }
        Ok(())
    }

    /// Cat amplitude `sqrt(2 ε_2ph / κ_2ph)`.
    pub fn alpha(&self) -> Result<C64> {
        if self.eps_2ph.0 == C64::default() {
            return Ok(C64::default());
        }
        if self.kappa_2ph == 0.0 {
            return Err(Error::ZeroDivisor(
                "kappa_2ph (cat amplitude needs two-photon loss)",
            ));
        }
        Ok((2.0 * self.eps_2ph.0 / self.kappa_2ph).sqrt())
    }

    pub fn n_tilde(&self) -> Result<usize> {
        match self.n_tilde {
            Some(n) => Ok(n),
            None => Ok(default_n_tilde(self.alpha()?)),
        }
    }

    pub fn storage_dim(&self) -> Result<usize> {
        match self.storage_dim {
            Some(d) => Ok(d),
            None => Ok(fock::default_storage_dim(self.alpha()?)),
        }
    }

    /// The cat state the model stabilizes.
    pub fn target_state(&self) -> Result<StateVector> {
        fock::cat_state(self.alpha()?, self.target_parity, self.storage_dim()?)
    }
}

/// Parity-selective jump for the target parity: `|2ñ><2ñ+1|` for even
/// targets and `|2ñ-1><2ñ|` for odd ones.
fn parity_jump(n_tilde: usize, parity: Parity, dim: usize) -> Result<Operator> {
    let two_n = 2 * n_tilde;
    match parity {
        Parity::Even => fock::jump(two_n, two_n + 1, dim),
        Parity::Odd => {
            if two_n == 0 {
                return Err(Error::InvalidParameter(
                    "odd target needs n_tilde >= 1".into(),
                ));
            }
            fock::jump(two_n - 1, two_n, dim)
        }
    }
}

/// `i (ε a†² - ε* a²)`.
fn two_photon_drive(a: &Operator, eps: C64) -> Operator {
    let a2 = a * a;
    let ad2 = a2.dagger();
    &ad2.scale(I * eps) + &a2.scale(-I * eps.conj())
}

/// Single-mode model: two-photon drive and loss, single-photon loss and
/// parity-selective loss.
pub fn effective_model(p: &EffectiveParams) -> Result<LindbladModel> {
    p.validate()?;
    let dim = p.storage_dim()?;
    let a = fock::destroy(dim)?;
    let h = two_photon_drive(&a, p.eps_2ph.0);
    let j = parity_jump(p.n_tilde()?, p.target_parity, dim)?;
    LindbladModel::new(
        h,
        vec![(p.kappa_2ph, &a * &a), (p.kappa_1ph, a), (p.kappa_ps, j)],
    )
}

/// Parameters of the storage plus two-readout circuit model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreeModeParams {
    pub g_2ph: f64,
    pub g_ps: f64,
    pub eps_r1: f64,
    pub chi_sr2: f64,
    pub kappa_r1: f64,
    pub kappa_r2: f64,
    pub kappa_1ph: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tilde: Option<usize>,
    /// Mode truncations: (storage, r1, r2) for the full model, (storage, r2)
    /// for the reduced one. Defaults follow the storage tail rule and
    /// three levels per readout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<ModeLayout>,
    #[serde(default)]
    pub include_self_kerr: bool,
    #[serde(default)]
    pub chi_ss: f64,
    #[serde(default)]
    pub chi_r1r1: f64,
    #[serde(default)]
    pub chi_r2r2: f64,
}

impl ThreeModeParams {
    fn base(g_2ph: f64, g_ps: f64, eps_r1: f64) -> Self {
        Self {
            g_2ph,
            g_ps,
            eps_r1,
            chi_sr2: 2.5e4,
            kappa_r1: 1000.0,
            kappa_r2: 1000.0,
            kappa_1ph: 1.0,
            n_tilde: None,
            layout: None,
            include_self_kerr: false,
            chi_ss: 0.0,
            chi_r1r1: 0.0,
            chi_r2r2: 0.0,
        }
    }

    /// Couplings of the best full-model fidelity (`g_2ph = 250`, `g_ps = 400`).
    pub fn optimum() -> Self {
        Self::base(250.0, 400.0, 1000.0)
    }

    /// Couplings where adiabatic elimination is most accurate
    /// (`g_2ph = 50`, `g_ps = 120`).
    pub fn adiabatic() -> Self {
        Self::base(50.0, 120.0, 200.0)
    }

    pub fn with_layout(mut self, dims: &[usize]) -> Result<Self> {
        self.layout = Some(ModeLayout::new(dims.to_vec())?);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("g_2ph", self.g_2ph),
            ("g_ps", self.g_ps),
            ("chi_sr2", self.chi_sr2),
            ("kappa_r1", self.kappa_r1),
            ("kappa_r2", self.kappa_r2),
            ("kappa_1ph", self.kappa_1ph),
        ] {
            check_rate(name, v)?;
        }
        for (name, v) in [
            ("eps_r1", self.eps_r1),
            ("chi_ss", self.chi_ss),
            ("chi_r1r1", self.chi_r1r1),
            ("chi_r2r2", self.chi_r2r2),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Cat amplitude `sqrt(ε_r1 / g_2ph)`.
    pub fn alpha(&self) -> Result<C64> {
        Ok(alpha_from_drive(self.eps_r1, self.g_2ph, self.kappa_r1)?.0)
    }

    pub fn n_tilde(&self) -> Result<usize> {
        match self.n_tilde {
            Some(n) => Ok(n),
            None => Ok(default_n_tilde(self.alpha()?)),
        }
    }

    fn storage_default(&self) -> Result<usize> {
        Ok(fock::default_storage_dim(self.alpha()?))
    }

    fn layout_for(&self, modes: usize) -> Result<ModeLayout> {
        let layout = match &self.layout {
            Some(l) => l.clone(),
            None => {
                let mut dims = vec![self.storage_default()?];
                dims.extend(std::iter::repeat(DEFAULT_READOUT_DIM).take(modes - 1));
                ModeLayout::new(dims)?
            }
        };
        if layout.n_modes() != modes {
            return Err(Error::Layout(format!(
                "expected a {modes}-mode layout, got {layout}"
            )));
        }
        Ok(layout)
    }

    /// Even cat target on the storage mode.
    pub fn target_state(&self, storage_dim: usize) -> Result<StateVector> {
        fock::cat_state(self.alpha()?, Parity::Even, storage_dim)
    }

    /// Effective single-mode parameters from the elimination formulas.
    pub fn effective(&self) -> Result<EffectiveParams> {
        self.validate()?;
        let storage_dim = match &self.layout {
            Some(l) => l.dims()[0],
            None => self.storage_default()?,
        };
        let kappa_2ph = rate_kappa_2ph(self.g_2ph, self.kappa_r1)?;
        let eps_2ph = eps_2ph_from_drive(self.eps_r1, self.g_2ph, self.kappa_r1)?;
        Ok(EffectiveParams {
            kappa_1ph: self.kappa_1ph,
            kappa_2ph,
            kappa_ps: rate_kappa_ps(self.g_ps, self.kappa_r2, self.n_tilde()?)?,
            eps_2ph: eps_2ph.into(),
            n_tilde: Some(self.n_tilde()?),
            target_parity: Parity::Even,
            storage_dim: Some(storage_dim),
        })
    }
}

/// `-χ/2 f†² f²` on one mode of `layout`.
fn self_kerr(chi: f64, mode: usize, layout: &ModeLayout) -> Result<Operator> {
    let f = fock::destroy(layout.dims()[mode])?;
    let f2 = &f * &f;
    fock::embed(&(&f2.dagger() * &f2).scale(-0.5 * chi), mode, layout)
}

/// Full storage / readout-1 / readout-2 model.
pub fn three_mode_model(p: &ThreeModeParams) -> Result<LindbladModel> {
    p.validate()?;
    let layout = p.layout_for(3)?;
    let two_n = 2.0 * p.n_tilde()? as f64;
    let a_s = fock::embed(&fock::destroy(layout.dims()[0])?, 0, &layout)?;
    let a_r1 = fock::embed(&fock::destroy(layout.dims()[1])?, 1, &layout)?;
    let a_r2 = fock::embed(&fock::destroy(layout.dims()[2])?, 2, &layout)?;
    let (ad_s, ad_r1, ad_r2) = (a_s.dagger(), a_r1.dagger(), a_r2.dagger());
    let id = Operator::identity(&layout);

    let two_photon = &(&(&ad_s * &ad_s) * &a_r1) + &(&(&a_s * &a_s) * &ad_r1);
    let drive = &a_r1 + &ad_r1;
    let beam_splitter = &(&a_s * &ad_r2) + &(&ad_s * &a_r2);
    let n_s = &ad_s * &a_s;
    let n_r2 = &ad_r2 * &a_r2;
    let cross_kerr = &(&id.scale(two_n) - &n_s) * &n_r2;

    let mut h =
        &(&two_photon.scale(p.g_2ph) - &drive.scale(p.eps_r1)) + &beam_splitter.scale(p.g_ps);
    h = &h + &cross_kerr.scale(p.chi_sr2);
    if p.include_self_kerr {
        for (mode, chi) in [(0, p.chi_ss), (1, p.chi_r1r1), (2, p.chi_r2r2)] {
            h = &h + &self_kerr(chi, mode, &layout)?;
        }
    }
    LindbladModel::new(
        h,
        vec![(p.kappa_r1, a_r1), (p.kappa_r2, a_r2), (p.kappa_1ph, a_s)],
    )
}

/// Storage / readout-2 model after eliminating readout 1, in the frame of
/// the cross-Kerr term with projector-conditioned couplings.
pub fn two_mode_reduced_model(p: &ThreeModeParams) -> Result<LindbladModel> {
    p.validate()?;
    let layout = p.layout_for(2)?;
    let (ds, dr) = (layout.dims()[0], layout.dims()[1]);
    let kappa_2ph = rate_kappa_2ph(p.g_2ph, p.kappa_r1)?;
    let eps_2ph = eps_2ph_from_drive(p.eps_r1, p.g_2ph, p.kappa_r1)?;
    let n_tilde = p.n_tilde()?;

    let a = fock::destroy(ds)?;
    let b = fock::destroy(dr)?;
    let vac_r = fock::fock_projector(0, dr)?;

    let mut h = fock::tensor(&two_photon_drive(&a, C64::from(eps_2ph)), &vac_r);
    let ad_b = fock::tensor(&a.dagger(), &b);
    let a_bd = fock::tensor(&a, &b.dagger());
    for j in 0..=(2 * n_tilde + 1) {
        let s_level = 2 * n_tilde + 1 - j;
        if s_level >= ds || j >= dr {
            continue;
        }
        let proj = fock::tensor(
            &fock::fock_projector(s_level, ds)?,
            &fock::fock_projector(j, dr)?,
        );
        let term = &(&proj * &ad_b) + &(&a_bd * &proj);
        h = &h + &term.scale(p.g_ps);
    }

    let mut collapse = vec![(kappa_2ph, fock::tensor(&(&a * &a), &vac_r))];
    for j in 0..ds {
        collapse.push((p.kappa_r2, fock::tensor(&fock::fock_projector(j, ds)?, &b)));
    }
    for j in 0..dr {
        collapse.push((p.kappa_1ph, fock::tensor(&a, &fock::fock_projector(j, dr)?)));
    }
    LindbladModel::new(h, collapse)
}

/// `κ_2ph = 4 g_2ph² / κ_r1`.
pub fn rate_kappa_2ph(g_2ph: f64, kappa_r1: f64) -> Result<f64> {
    if kappa_r1 == 0.0 {
        return Err(Error::ZeroDivisor("kappa_r1"));
    }
    Ok(4.0 * g_2ph * g_2ph / kappa_r1)
}

/// Parity-selective rate `4δ²(2ñ+1) / (1 + 4δ²(2ñ+1)) κ_r2`, `δ = g_ps/κ_r2`.
pub fn rate_kappa_ps(g_ps: f64, kappa_r2: f64, n_tilde: usize) -> Result<f64> {
    if kappa_r2 == 0.0 {
        return Err(Error::ZeroDivisor("kappa_r2"));
    }
    let delta = g_ps / kappa_r2;
    let x = 4.0 * delta * delta * (2 * n_tilde + 1) as f64;
    Ok(x / (1.0 + x) * kappa_r2)
}

/// `ε_2ph = 2 g_2ph ε_r1 / κ_r1`.
pub fn eps_2ph_from_drive(eps_r1: f64, g_2ph: f64, kappa_r1: f64) -> Result<f64> {
    if kappa_r1 == 0.0 {
        return Err(Error::ZeroDivisor("kappa_r1"));
    }
    Ok(2.0 * g_2ph * eps_r1 / kappa_r1)
}

/// Cat amplitude set by the readout drive, `sqrt(ε_r1/g_2ph)`, together with
/// the implied two-photon drive `ε_2ph`.
pub fn alpha_from_drive(eps_r1: f64, g_2ph: f64, kappa_r1: f64) -> Result<(C64, f64)> {
    if g_2ph == 0.0 {
        return Err(Error::ZeroDivisor("g_2ph"));
    }
    let eps = eps_2ph_from_drive(eps_r1, g_2ph, kappa_r1)?;
    Ok((C64::new(eps_r1 / g_2ph, 0.0).sqrt(), eps))
}

/// Pump settings of the circuit implementation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpParams {
    pub eps_p: f64,
    pub eps_p_prime: f64,
    pub omega_s: f64,
    pub omega_r1: f64,
    pub omega_r2: f64,
    pub omega_p: f64,
    pub omega_p_prime: f64,
    pub chi_sr1: f64,
    pub chi_r2r2: f64,
    pub chi_sr2: f64,
    #[serde(default)]
    pub chi_ss: f64,
    #[serde(default)]
    pub chi_r1r1: f64,
}

impl PumpParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("omega_s", self.omega_s),
            ("omega_r1", self.omega_r1),
            ("omega_r2", self.omega_r2),
            ("omega_p", self.omega_p),
            ("omega_p_prime", self.omega_p_prime),
        ] {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {w} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Two-photon pump frequency `2ω_s - ω_r1`.
pub fn design_omega_p(omega_s: f64, omega_r1: f64) -> f64 {
    2.0 * omega_s - omega_r1
}

/// Parity-selection pump frequency `(ω_r2 - ω_s - 2ñ χ_sr2) / 2`.
pub fn design_omega_p_prime(omega_s: f64, omega_r2: f64, chi_sr2: f64, n_tilde: usize) -> f64 {
    0.5 * (omega_r2 - omega_s - 2.0 * n_tilde as f64 * chi_sr2)
}

/// `g_2ph = ε_p / (ω_p - ω_r1) · χ_sr1 / 2`.
pub fn pump_g_2ph(pp: &PumpParams) -> Result<f64> {
    let detuning = pp.omega_p - pp.omega_r1;
    if detuning == 0.0 {
        return Err(Error::ZeroDivisor("omega_p - omega_r1 (resonant pump)"));
    }
    Ok(pp.eps_p / detuning * pp.chi_sr1 / 2.0)
}

/// `g_ps = sqrt(χ_r2r2 χ_sr2) · |ε_p' / (ω_p' - ω_r2)|²`.
pub fn pump_g_ps(pp: &PumpParams) -> Result<f64> {
    let detuning = pp.omega_p_prime - pp.omega_r2;
    if detuning == 0.0 {
        return Err(Error::ZeroDivisor(
            "omega_p_prime - omega_r2 (resonant pump)",
        ));
    }
    if pp.chi_r2r2 * pp.chi_sr2 < 0.0 {
        return Err(Error::InvalidParameter(
            "chi_r2r2 * chi_sr2 must be >= 0".into(),
        ));
    }
    Ok((pp.chi_r2r2 * pp.chi_sr2).sqrt() * (pp.eps_p_prime / detuning).powi(2))
}

/// A violated time-scale separation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierarchyWarning {
    pub condition: &'static str,
    pub ratio: f64,
    pub limit: f64,
}

impl fmt::Display for HierarchyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated: ratio {:.4} exceeds {}",
            self.condition, self.ratio, self.limit
        )
    }
}

/// Largest ratio accepted for a "much less than" condition.
pub const SEPARATION_RATIO: f64 = 0.2;

/// Check the separations the elimination relies on; one warning per violation.
pub fn check_rate_hierarchy(p: &ThreeModeParams) -> Vec<HierarchyWarning> {
    let ratio = |a: f64, b: f64| {
        if b == 0.0 {
            if a == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            a / b
        }
    };
    let checks = [
        (
            "kappa_1ph << kappa_r1",
            ratio(p.kappa_1ph, p.kappa_r1),
            SEPARATION_RATIO,
        ),
        (
            "kappa_1ph << kappa_r2",
            ratio(p.kappa_1ph, p.kappa_r2),
            SEPARATION_RATIO,
        ),
        (
            "kappa_r2 << chi_sr2 (number selectivity)",
            ratio(p.kappa_r2, p.chi_sr2),
            SEPARATION_RATIO,
        ),
        (
            "g_ps << chi_sr2 (number selectivity)",
            ratio(p.g_ps, p.chi_sr2),
            SEPARATION_RATIO,
        ),
        (
            "g_2ph <= kappa_r1 (adiabaticity)",
            ratio(p.g_2ph, p.kappa_r1),
            1.0,
        ),
    ];
    checks
        .into_iter()
        .filter(|(_, r, limit)| r > limit)
        .map(|(condition, ratio, limit)| HierarchyWarning {
            condition,
            ratio,
            limit,
        })
        .collect()
}
