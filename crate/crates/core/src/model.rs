//! Model families for a two-regime switching diffusion
//!
//! ```text
//! dX_t = b(X_t, Z_t) dt + σ(X_t, Z_t) dW_t,    Z_t ∈ {0, 1}
//! ```
//!
//! where `Z` leaves regime `z` at the state-dependent rate `λ_z(X_t)`.
//! Regime 0 is the recurrent regime (drift `b_-`), regime 1 the transient one
//! (drift `b_+`). Every family is a closed parametric variant so that the
//! constants entering the recurrence criterion (`r_-`, `r_+`, `λ̄`, `λ̲`, `‖b‖`)
//! are known exactly instead of being sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete component of the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Regime {
    /// Recurrent regime, drift `b_-`.
    Zero,
    /// Transient regime, drift `b_+`.
    One,
}

impl Regime {
    pub fn other(self) -> Regime {
        match self {
            Regime::Zero => Regime::One,
            Regime::One => Regime::Zero,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Regime::Zero => 0,
            Regime::One => 1,
        }
    }
}

impl TryFrom<u8> for Regime {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Regime::Zero),
            1 => Ok(Regime::One),
            other => Err(format!("regime must be 0 or 1, got {other}")),
        }
    }
}

impl From<Regime> for u8 {
    fn from(z: Regime) -> u8 {
        z.index() as u8
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Direction of a radial drift: `-1` points to the origin, `+1` away from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Orientation {
    Inward,
    Outward,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Inward => -1.0,
            Orientation::Outward => 1.0,
        }
    }
}

impl TryFrom<i8> for Orientation {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            -1 => Ok(Orientation::Inward),
            1 => Ok(Orientation::Outward),
            other => Err(format!("sign must be -1 or +1, got {other}")),
        }
    }
}

impl From<Orientation> for i8 {
    fn from(o: Orientation) -> i8 {
        match o {
            Orientation::Inward => -1,
            Orientation::Outward => 1,
        }
    }
}

/// Drift of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum DriftFamily {
    /// `b(x) = sign·rho·x / max(|x|², cap²)`; `x·b(x) = sign·rho` outside the cap.
    InverseRadial { rho: f64, sign: Orientation, cap: f64 },
    /// `b(x) = sign·rho·x / max(|x|, cap)`; constant magnitude `rho` outside the cap.
    ConstantRadial { rho: f64, sign: Orientation, cap: f64 },
    ZeroDrift,
}

impl DriftFamily {
    fn validate(&self, field: &str) -> Result<()> {
        match *self {
            DriftFamily::InverseRadial { rho, cap, .. }
            | DriftFamily::ConstantRadial { rho, cap, .. } => {
                positive(&format!("{field}.rho"), rho)?;
                positive(&format!("{field}.cap"), cap)?;
                Ok(())
            }
            DriftFamily::ZeroDrift => Ok(()),
        }
    }

    /// Writes `b(x)` into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let scale = match *self {
            DriftFamily::InverseRadial { rho, sign, cap } => {
                sign.sign() * rho / norm_sq(x).max(cap * cap)
            }
            DriftFamily::ConstantRadial { rho, sign, cap } => {
                sign.sign() * rho / norm_sq(x).sqrt().max(cap)
            }
            DriftFamily::ZeroDrift => 0.0,
        };
        for (o, xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// `sup_x |b(x)|`.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            DriftFamily::InverseRadial { rho, cap, .. } => rho / cap,
            DriftFamily::ConstantRadial { rho, .. } => rho,
            DriftFamily::ZeroDrift => 0.0,
        }
    }

    pub fn cap(&self) -> Option<f64> {
        match *self {
            DriftFamily::InverseRadial { cap, .. } | DriftFamily::ConstantRadial { cap, .. } => {
                Some(cap)
            }
            DriftFamily::ZeroDrift => None,
        }
    }

    /// `sup_{|x| ≥ m} x·b(x)` for `m` at least the family's cap.
    pub fn radial_sup(&self, m: f64) -> f64 {
        match *self {
            DriftFamily::InverseRadial { rho, sign, .. } => sign.sign() * rho,
            DriftFamily::ConstantRadial { rho, sign, .. } => match sign {
                Orientation::Inward => -rho * m,
                Orientation::Outward => f64::INFINITY,
            },
            DriftFamily::ZeroDrift => 0.0,
        }
    }
}

/// Rate at which the discrete component leaves a regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum IntensityFamily {
    Constant {
        lambda: f64,
    },
    /// `λ(x) = lo + (hi − lo) / (1 + exp(−slope·(|x| − center)))`.
    LogisticRadial {
        lambda_lo: f64,
        lambda_hi: f64,
        center: f64,
        slope: f64,
    },
}

impl IntensityFamily {
    fn validate(&self, field: &str) -> Result<()> {
        match *self {
            IntensityFamily::Constant { lambda } => positive(&format!("{field}.lambda"), lambda),
            IntensityFamily::LogisticRadial {
                lambda_lo,
                lambda_hi,
                center,
                slope,
            } => {
                positive(&format!("{field}.lambda_lo"), lambda_lo)?;
                positive(&format!("{field}.lambda_hi"), lambda_hi)?;
                if lambda_lo >= lambda_hi {
                    return Err(Error::range(
                        &format!("{field}.lambda_lo"),
                        format!("lambda_lo ({lambda_lo}) must be below lambda_hi ({lambda_hi})"),
                    ));
                }
                finite(&format!("{field}.center"), center)?;
                finite(&format!("{field}.slope"), slope)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            IntensityFamily::Constant { lambda } => lambda,
            IntensityFamily::LogisticRadial {
                lambda_lo,
                lambda_hi,
                center,
                slope,
            } => {
                let r = norm_sq(x).sqrt();
                let s = 1.0 / (1.0 + (-slope * (r - center)).exp());
                (lambda_lo + (lambda_hi - lambda_lo) * s).clamp(lambda_lo, lambda_hi)
            }
        }
    }

    /// `(λ̲, λ̄)`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            IntensityFamily::Constant { lambda } => (lambda, lambda),
            IntensityFamily::LogisticRadial {
                lambda_lo,
                lambda_hi,
                ..
            } => (lambda_lo, lambda_hi),
        }
    }
}

/// Diffusion coefficient `σ(x, z)`, constant in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum DiffusionFamily {
    UnitMatrix,
    /// `σ(x, z) = sigma_z · I`.
    ScalarPerRegime { sigma_0: f64, sigma_1: f64 },
}

impl DiffusionFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            DiffusionFamily::UnitMatrix => Ok(()),
            DiffusionFamily::ScalarPerRegime { sigma_0, sigma_1 } => {
                positive("diffusion.sigma_0", sigma_0)?;
                positive("diffusion.sigma_1", sigma_1)
            }
        }
    }

    #[inline]
    pub fn sigma(&self, z: Regime) -> f64 {
        match (*self, z) {
            (DiffusionFamily::UnitMatrix, _) => 1.0,
            (DiffusionFamily::ScalarPerRegime { sigma_0, .. }, Regime::Zero) => sigma_0,
            (DiffusionFamily::ScalarPerRegime { sigma_1, .. }, Regime::One) => sigma_1,
        }
    }

    /// `Tr a(x, z)` with `a = σσ*`.
    pub fn trace(&self, z: Regime, dim: usize) -> f64 {
        let s = self.sigma(z);
        dim as f64 * s * s
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, DiffusionFamily::UnitMatrix)
    }
}

/// Serializable model description; turned into a [`SwitchingDiffusionModel`] by [`build_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub drift_0: DriftFamily,
    pub drift_1: DriftFamily,
    pub intensity_0: IntensityFamily,
    pub intensity_1: IntensityFamily,
    #[serde(default = "unit_matrix")]
    pub diffusion: DiffusionFamily,
}

fn unit_matrix() -> DiffusionFamily {
    DiffusionFamily::UnitMatrix
}

/// Analytic constants derived from the family parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub lam0_hi: f64,
    pub lam0_lo: f64,
    pub lam1_hi: f64,
    pub lam1_lo: f64,
    /// `x·b_-(x) ≤ −r_minus` for `|x| ≥ m`.
    pub r_minus: f64,
    /// `x·b_+(x) ≤ r_plus` for `|x| ≥ m`; infinite when no finite bound exists.
    pub r_plus: f64,
    pub m: f64,
    /// `‖b‖ = sup_{x,z} |b(x, z)|`.
    pub drift_sup: f64,
    /// `R_- = 2 r_- − Tr a(·, 0)`.
    pub big_r_minus: f64,
    /// `R_+ = 2 r_+ + Tr a(·, 1)`.
    pub big_r_plus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingDiffusionModel {
    spec: ModelSpec,
    bounds: ModelBounds,
}

pub fn build_model(spec: &ModelSpec) -> Result<SwitchingDiffusionModel> {
    if spec.dim == 0 {
        return Err(Error::range("dim", "dimension must be at least 1"));
    }
    spec.drift_0.validate("drift_0")?;
    spec.drift_1.validate("drift_1")?;
    spec.intensity_0.validate("intensity_0")?;
    spec.intensity_1.validate("intensity_1")?;
    spec.diffusion.validate()?;
    Ok(SwitchingDiffusionModel {
        spec: *spec,
        bounds: derive_bounds(spec),
    })
}

fn derive_bounds(spec: &ModelSpec) -> ModelBounds {
    let (lam0_lo, lam0_hi) = spec.intensity_0.bounds();
    let (lam1_lo, lam1_hi) = spec.intensity_1.bounds();
    let m = match (spec.drift_0.cap(), spec.drift_1.cap()) {
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 1.0,
    };
    let r_minus = -spec.drift_0.radial_sup(m);
    let r_plus = spec.drift_1.radial_sup(m).max(0.0);
    let tr0 = spec.diffusion.trace(Regime::Zero, spec.dim);
    let tr1 = spec.diffusion.trace(Regime::One, spec.dim);
    ModelBounds {
        lam0_hi,
        lam0_lo,
        lam1_hi,
        lam1_lo,
        r_minus,
        r_plus,
        m,
        drift_sup: spec.drift_0.sup_norm().max(spec.drift_1.sup_norm()),
        big_r_minus: 2.0 * r_minus - tr0,
        big_r_plus: 2.0 * r_plus + tr1,
    }
}

impl SwitchingDiffusionModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn bounds(&self) -> &ModelBounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn drift(&self, z: Regime) -> &DriftFamily {
        match z {
            Regime::Zero => &self.spec.drift_0,
            Regime::One => &self.spec.drift_1,
        }
    }

    pub fn intensity(&self, z: Regime) -> &IntensityFamily {
        match z {
            Regime::Zero => &self.spec.intensity_0,
            Regime::One => &self.spec.intensity_1,
        }
    }

    pub fn diffusion(&self) -> &DiffusionFamily {
        &self.spec.diffusion
    }

    /// `b(x, z)`.
    pub fn drift_eval(&self, x: &[f64], z: Regime) -> Vec<f64> {
        self.drift(z).eval(x)
    }

    /// `λ_z(x)`.
    pub fn intensity_eval(&self, x: &[f64], z: Regime) -> f64 {
        self.intensity(z).eval(x)
    }

    /// Dominating rate for thinning, `max(λ̄_0, λ̄_1)`.
    pub fn lambda_bar(&self) -> f64 {
        self.bounds.lam0_hi.max(self.bounds.lam1_hi)
    }

    pub fn lambda_lo(&self, z: Regime) -> f64 {
        match z {
            Regime::Zero => self.bounds.lam0_lo,
            Regime::One => self.bounds.lam1_lo,
        }
    }

    pub fn lambda_hi(&self, z: Regime) -> f64 {
        match z {
            Regime::Zero => self.bounds.lam0_hi,
            Regime::One => self.bounds.lam1_hi,
        }
    }

    /// Copy of the model with both switching rates multiplied by `s`.
    pub fn with_scaled_intensities(&self, s: f64) -> Result<SwitchingDiffusionModel> {
        let scale = |f: IntensityFamily| match f {
            IntensityFamily::Constant { lambda } => IntensityFamily::Constant { lambda: s * lambda },
            IntensityFamily::LogisticRadial {
                lambda_lo,
                lambda_hi,
                center,
                slope,
            } => IntensityFamily::LogisticRadial {
                lambda_lo: s * lambda_lo,
                lambda_hi: s * lambda_hi,
                center,
                slope,
            },
        };
        let mut spec = self.spec;
        spec.intensity_0 = scale(spec.intensity_0);
        spec.intensity_1 = scale(spec.intensity_1);
        build_model(&spec)
    }

    pub fn check_recurrence_criterion(&self) -> CriterionReport {
        check_recurrence_criterion(self, None)
    }
}

/// Constants of the balance relation `λ̄_0(R_+ + ε) = q λ̲_1(R_- − ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConstants {
    pub eps: f64,
    pub q: f64,
    pub c: f64,
    /// Bound constant for `Z_0 = 0`: `E τ ≤ c_z0 · |x|²`.
    pub c_z0: f64,
    /// `1/c + 1/λ̲_1`, the constant in `E τ ≤ C (|x|² + 1)` for `Z_0 = 1`.
    pub c_z1: f64,
    /// `1/λ̲_1`, the bound on `E T_0` added for `Z_0 = 1`.
    pub z1_offset: f64,
    /// True when ε came from the default rule rather than the caller.
    pub eps_defaulted: bool,
}

impl BalanceConstants {
    /// Explicit bound on the embedded hitting time from `|x0|² = x_sq`.
    pub fn theory_bound(&self, x_sq: f64, z0: Regime) -> f64 {
        let base = self.c_z0 * x_sq;
        match z0 {
            Regime::Zero => base,
            Regime::One => base + self.z1_offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub recurrent: bool,
    pub reason: String,
    /// True when the diffusion is not the unit matrix and the trace form of the conditions applies.
    pub trace_form: bool,
    /// `λ̲_1 R_-` (`λ̲_1(2r_- − d)` for the unit diffusion).
    pub a: f64,
    /// `λ̄_0 R_+` (`λ̄_0(2r_+ + d)` for the unit diffusion).
    pub b: f64,
    pub constants: Option<BalanceConstants>,
}

impl CriterionReport {
    pub fn constants(&self) -> Result<&BalanceConstants> {
        self.constants
            .as_ref()
            .ok_or_else(|| Error::CriterionRefused(self.reason.clone()))
    }
}

/// Evaluates the positive-recurrence conditions; `eps` overrides the default ε.
pub fn check_recurrence_criterion(
    model: &SwitchingDiffusionModel,
    eps: Option<f64>,
) -> CriterionReport {
    let bd = model.bounds();
    let trace_form = !model.diffusion().is_unit();
    let a = bd.lam1_lo * bd.big_r_minus;
    let b = bd.lam0_hi * bd.big_r_plus;
    let mut report = CriterionReport {
        recurrent: false,
        reason: String::new(),
        trace_form,
        a,
        b,
        constants: None,
    };
    if !bd.r_plus.is_finite() {
        report.reason = "x·b_+(x) has no finite upper bound for |x| ≥ M".into();
        return report;
    }
    if bd.big_r_minus <= 0.0 {
        report.reason = if trace_form {
            format!("R_- = {} ≤ 0", bd.big_r_minus)
        } else {
            format!("2r_- ≤ d ({} ≤ {})", 2.0 * bd.r_minus, model.dim())
        };
        return report;
    }
    if a <= b {
        report.reason = format!("A ≤ B ({a} ≤ {b})");
        return report;
    }
    match balance_constants(bd.big_r_minus, bd.big_r_plus, bd.lam0_hi, bd.lam1_lo, eps) {
        Ok(k) => {
            report.recurrent = true;
            report.reason = format!("A > B ({a} > {b})");
            report.constants = Some(k);
        }
        Err(e) => report.reason = e.to_string(),
    }
    report
}

/// Balance constants for the unit-diffusion case, `R_- = 2r_- − d`, `R_+ = 2r_+ + d`.
pub fn compute_eps_q_c(
    r_minus: f64,
    r_plus: f64,
    dim: usize,
    lam0_hi: f64,
    lam1_lo: f64,
    eps: Option<f64>,
) -> Result<BalanceConstants> {
    let d = dim as f64;
    balance_constants(2.0 * r_minus - d, 2.0 * r_plus + d, lam0_hi, lam1_lo, eps)
}

/// Solves `λ̄_0(R_+ + ε) = q λ̲_1(R_- − ε)` for `q` and derives
/// `c = min((1−q)/(2q)·(R_+ + ε), (1−q)/2·(R_- − ε))`.
///
/// Without an explicit ε the default is `0.1·R_-`, reduced if needed so that
/// `q` keeps at least a tenth of the gap `1 − q(0)`.
pub fn balance_constants(
    recurrent_margin: f64,
    transient_margin: f64,
    lam0_hi: f64,
    lam1_lo: f64,
    eps: Option<f64>,
) -> Result<BalanceConstants> {
    let (rm, rp) = (recurrent_margin, transient_margin);
    let a = lam1_lo * rm;
    let b = lam0_hi * rp;
    if !(rm > 0.0) {
        return Err(Error::Infeasible(format!(
            "recurrent margin R_- = {rm} must be positive"
        )));
    }
    if !(a > b) {
        return Err(Error::Infeasible(format!(
            "λ̲_1 R_- > λ̄_0 R_+ fails ({a} ≤ {b})"
        )));
    }
    let q_of = |e: f64| lam0_hi * (rp + e) / (lam1_lo * (rm - e));
    let (eps, defaulted) = match eps {
        Some(e) => {
            if !(e > 0.0 && e < rm) {
                return Err(Error::Infeasible(format!(
                    "ε = {e} must lie in (0, R_-) = (0, {rm})"
                )));
            }
            (e, false)
        }
        None => {
            let q0 = b / a;
            let q_max = q0 + 0.9 * (1.0 - q0);
            let eps_cap = (q_max * lam1_lo * rm - lam0_hi * rp) / (lam0_hi + q_max * lam1_lo);
            ((0.1 * rm).min(eps_cap), true)
        }
    };
    let q = q_of(eps);
    if !(q < 1.0) {
        return Err(Error::Infeasible(format!(
            "ε = {eps} gives q = {q} ≥ 1 in λ̄_0(R_+ + ε) = q λ̲_1(R_- − ε)"
        )));
    }
    let c = ((1.0 - q) / (2.0 * q) * (rp + eps)).min((1.0 - q) / 2.0 * (rm - eps));
    Ok(BalanceConstants {
        eps,
        q,
        c,
        c_z0: 1.0 / c,
        c_z1: 1.0 / c + 1.0 / lam1_lo,
        z1_offset: 1.0 / lam1_lo,
        eps_defaulted: defaulted,
    })
}

#[inline]
pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::range(field, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::range(field, format!("must be finite, got {v}")))
    }
}

/// Reference model: d = 1, inward drift `2/x` in regime 0, outward drift `1/x`
/// in regime 1, rates 0.5 and 2, unit diffusion.
pub fn reference_spec() -> ModelSpec {
    ModelSpec {
        dim: 1,
        drift_0: DriftFamily::InverseRadial {
            rho: 2.0,
            sign: Orientation::Inward,
            cap: 1.0,
        },
        drift_1: DriftFamily::InverseRadial {
            rho: 1.0,
            sign: Orientation::Outward,
            cap: 1.0,
        },
        intensity_0: IntensityFamily::Constant { lambda: 0.5 },
        intensity_1: IntensityFamily::Constant { lambda: 2.0 },
        diffusion: DiffusionFamily::UnitMatrix,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn reference_bounds() {
        let m = build_model(&reference_spec()).unwrap();
        let b = m.bounds();
        assert_eq!(b.r_minus, 2.0);
        assert_eq!(b.r_plus, 1.0);
        assert_eq!((b.lam0_lo, b.lam0_hi), (0.5, 0.5));
        assert_eq!((b.lam1_lo, b.lam1_hi), (2.0, 2.0));
        assert_eq!(b.m, 1.0);
        assert_eq!(b.drift_sup, 2.0);
        assert_eq!(*b, derive_bounds(m.spec()));
    }

    #[test]
    fn zero_rate_rejected() {
        let mut s = reference_spec();
        s.intensity_0 = IntensityFamily::Constant { lambda: 0.0 };
        match build_model(&s) {
            Err(Error::ParameterRange { field, .. }) => assert_eq!(field, "intensity_0.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        let mut s = reference_spec();
        s.drift_0 = DriftFamily::InverseRadial {
            rho: -1.0,
            sign: Orientation::Inward,
            cap: 1.0,
        };
        assert!(build_model(&s).is_err());
        let mut s = reference_spec();
        s.drift_1 = DriftFamily::ConstantRadial {
            rho: 1.0,
            sign: Orientation::Inward,
            cap: 0.0,
        };
        assert!(build_model(&s).is_err());
        let mut s = reference_spec();
        s.intensity_1 = IntensityFamily::LogisticRadial {
            lambda_lo: 2.0,
            lambda_hi: 2.0,
            center: 0.0,
            slope: 1.0,
        };
        assert!(build_model(&s).is_err());
        let mut s = reference_spec();
        s.dim = 0;
        assert!(build_model(&s).is_err());
    }

    #[test]
    fn logistic_range_and_midpoint() {
        let f = IntensityFamily::LogisticRadial {
            lambda_lo: 1.0,
            lambda_hi: 2.0,
            center: 5.0,
            slope: 1.0,
        };
        assert_eq!(f.bounds(), (1.0, 2.0));
        assert_close(f.eval(&[5.0]), 1.5, 1e-15);
        assert_close(f.eval(&[3.0, 4.0]), 1.5, 1e-15);
        assert_close(f.eval(&[1e6]), 2.0, 1e-15);
        assert!(f.eval(&[-1e300]) <= 2.0);
    }

    #[test]
    fn drift_examples() {
        let f = DriftFamily::InverseRadial {
            rho: 1.0,
            sign: Orientation::Inward,
            cap: 1.0,
        };
        assert_eq!(f.eval(&[2.0, 0.0]), vec![-0.5, 0.0]);
        assert_eq!(DriftFamily::ZeroDrift.eval(&[3.0, -1.0]), vec![0.0, 0.0]);
        let f = DriftFamily::InverseRadial {
            rho: 2.0,
            sign: Orientation::Inward,
            cap: 1.0,
        };
        assert_eq!(f.eval(&[0.5]), vec![-1.0]);
        let f = DriftFamily::ConstantRadial {
            rho: 3.0,
            sign: Orientation::Outward,
            cap: 0.5,
        };
        assert_eq!(f.eval(&[0.0, -4.0]), vec![0.0, -3.0]);
    }

    #[test]
    fn criterion_examples() {
        let m = build_model(&reference_spec()).unwrap();
        let r = m.check_recurrence_criterion();
        assert!(r.recurrent, "{}", r.reason);
        assert_eq!((r.a, r.b), (6.0, 1.5));

        let mut s = reference_spec();
        s.dim = 3;
        s.drift_0 = DriftFamily::InverseRadial {
            rho: 1.0,
            sign: Orientation::Inward,
            cap: 1.0,
        };
        let r = build_model(&s).unwrap().check_recurrence_criterion();
        assert!(!r.recurrent);
        assert!(r.reason.contains("2r_- ≤ d"), "{}", r.reason);
        assert!(r.constants.is_none());

        let mut s = reference_spec();
        s.intensity_0 = IntensityFamily::Constant { lambda: 2.0 };
        s.intensity_1 = IntensityFamily::Constant { lambda: 0.5 };
        let r = build_model(&s).unwrap().check_recurrence_criterion();
        assert!(!r.recurrent);
        assert_eq!((r.a, r.b), (1.5, 6.0));
        assert!(r.reason.contains("A ≤ B"));
    }

    #[test]
    fn outward_constant_radial_has_no_finite_r_plus() {
        let mut s = reference_spec();
        s.drift_1 = DriftFamily::ConstantRadial {
            rho: 0.1,
            sign: Orientation::Outward,
            cap: 1.0,
        };
        let m = build_model(&s).unwrap();
        assert!(m.bounds().r_plus.is_infinite());
        assert!(!m.check_recurrence_criterion().recurrent);
    }

    #[test]
    fn trace_form_uses_diffusion_traces() {
        let mut s = reference_spec();
        s.diffusion = DiffusionFamily::ScalarPerRegime {
            sigma_0: 0.5,
            sigma_1: 2.0,
        };
        let m = build_model(&s).unwrap();
        let b = m.bounds();
        assert_eq!(b.big_r_minus, 4.0 - 0.25);
        assert_eq!(b.big_r_plus, 2.0 + 4.0);
        let r = m.check_recurrence_criterion();
        assert!(r.trace_form);
        assert_eq!(r.a, 2.0 * 3.75);
        assert_eq!(r.b, 0.5 * 6.0);
        assert!(r.recurrent);

        s.diffusion = DiffusionFamily::ScalarPerRegime {
            sigma_0: 2.0,
            sigma_1: 1.0,
        };
        let r = build_model(&s).unwrap().check_recurrence_criterion();
        assert!(!r.recurrent);
        assert!(r.reason.contains("R_-"));
    }

    #[test]
    fn eps_q_c_reference() {
        let k = compute_eps_q_c(2.0, 1.0, 1, 0.5, 2.0, Some(0.3)).unwrap();
        assert_close(k.q, 1.65 / 5.4, 1e-15);
        assert_close(k.c, 0.9375, 1e-12);
        assert_close(k.c_z0, 1.0 / 0.9375, 1e-12);
        assert_close(k.c_z1, 1.0 / 0.9375 + 0.5, 1e-12);
        assert_close(k.c_z0, 1.06667, 1e-5);
        assert_close(k.c_z1, 1.56667, 1e-5);
        assert!(!k.eps_defaulted);

        let d = compute_eps_q_c(2.0, 1.0, 1, 0.5, 2.0, None).unwrap();
        assert!(d.eps_defaulted);
        assert_close(d.eps, 0.3, 1e-15);
        assert_close(d.q, k.q, 1e-15);
        assert_close(d.c, k.c, 1e-15);
    }

    #[test]
    fn eps_q_c_infeasible() {
        for eps in [None, Some(0.1), Some(0.5)] {
            match compute_eps_q_c(1.0, 1.0, 1, 1.0, 1.0, eps) {
                Err(Error::Infeasible(msg)) => assert!(msg.contains("λ̲_1 R_- > λ̄_0 R_+")),
                other => panic!("{other:?}"),
            }
        }
        // feasible pair, but ε pushes q past 1
        assert!(matches!(
            compute_eps_q_c(2.0, 1.0, 1, 0.5, 2.0, Some(2.0)),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            compute_eps_q_c(2.0, 1.0, 1, 0.5, 2.0, Some(-0.1)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn default_eps_is_clipped_near_criticality() {
        // q(0) = 0.99: the 10% rule would push q above the gap margin
        let k = balance_constants(1.0, 0.99, 1.0, 1.0, None).unwrap();
        assert!(k.eps < 0.1);
        let q0 = 0.99;
        assert!(k.q <= q0 + 0.9 * (1.0 - q0) + 1e-12);
        assert!(k.q < 1.0 && k.c > 0.0);
    }

    #[test]
    fn model_spec_json_shape() {
        let text = r#"{
            "dim": 1,
            "drift_0": {"family": "InverseRadial", "rho": 2, "sign": -1, "cap": 1},
            "drift_1": {"family": "InverseRadial", "rho": 1, "sign": 1, "cap": 1},
            "intensity_0": {"family": "Constant", "lambda": 0.5},
            "intensity_1": {"family": "Constant", "lambda": 2},
            "diffusion": {"family": "UnitMatrix"}
        }"#;
        let spec: ModelSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec, reference_spec());
        let bad = text.replace("\"sign\": -1", "\"sign\": 0");
        assert!(serde_json::from_str::<ModelSpec>(&bad).is_err());
        let typo = text.replace("InverseRadial\", \"rho\": 2", "InverseRadail\", \"rho\": 2");
        assert!(serde_json::from_str::<ModelSpec>(&typo).is_err());
    }

    fn drift_strategy() -> impl Strategy<Value = DriftFamily> {
        let orient = prop_oneof![Just(Orientation::Inward), Just(Orientation::Outward)];
        prop_oneof![
            (0.01..10.0f64, orient.clone(), 0.01..10.0f64)
                .prop_map(|(rho, sign, cap)| DriftFamily::InverseRadial { rho, sign, cap }),
            (0.01..10.0f64, orient, 0.01..10.0f64)
                .prop_map(|(rho, sign, cap)| DriftFamily::ConstantRadial { rho, sign, cap }),
            Just(DriftFamily::ZeroDrift),
        ]
    }

    fn intensity_strategy() -> impl Strategy<Value = IntensityFamily> {
        prop_oneof![
            (0.01..10.0f64).prop_map(|lambda| IntensityFamily::Constant { lambda }),
            (0.01..5.0f64, 0.01..5.0f64, -5.0..20.0f64, -5.0..5.0f64).prop_map(
                |(lo, width, center, slope)| IntensityFamily::LogisticRadial {
                    lambda_lo: lo,
                    lambda_hi: lo + width,
                    center,
                    slope,
                }
            ),
        ]
    }

    // |b(x)| is computed through a norm; allow a few ulps against the exact cap
    const ULP_SLACK: f64 = 1.0 + 8.0 * f64::EPSILON;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn family_values_respect_cached_bounds(
            drift in drift_strategy(),
            intensity in intensity_strategy(),
            xs in proptest::collection::vec(proptest::collection::vec(-1e3..1e3f64, 2), 10_000),
        ) {
            let (lo, hi) = intensity.bounds();
            let sup = drift.sup_norm();
            for x in &xs {
                let l = intensity.eval(x);
                prop_assert!(lo <= l && l <= hi);
                let b = drift.eval(x);
                prop_assert!(norm_sq(&b).sqrt() <= sup * ULP_SLACK);
            }
        }

        #[test]
        fn inverse_radial_dot_product_outside_cap(
            rho in 0.01..10.0f64,
            cap in 0.01..10.0f64,
            dir in proptest::collection::vec(-1.0..1.0f64, 1..5),
            scale in 1.0..1e4f64,
            inward in any::<bool>(),
        ) {
            let n = norm_sq(&dir).sqrt();
            prop_assume!(n > 1e-3);
            let x: Vec<f64> = dir.iter().map(|v| v / n * cap * scale).collect();
            let sign = if inward { Orientation::Inward } else { Orientation::Outward };
            let f = DriftFamily::InverseRadial { rho, sign, cap };
            let dot: f64 = f.eval(&x).iter().zip(&x).map(|(b, xi)| b * xi).sum();
            prop_assert!((dot - sign.sign() * rho).abs() <= 1e-12 * rho);
        }

        #[test]
        fn balance_relation_holds(
            r_minus in 0.6..20.0f64,
            r_plus in 0.0..10.0f64,
            dim in 1usize..4,
            lam0 in 0.01..5.0f64,
            lam1 in 0.01..50.0f64,
        ) {
            let d = dim as f64;
            prop_assume!(2.0 * r_minus > d);
            prop_assume!(lam1 * (2.0 * r_minus - d) > lam0 * (2.0 * r_plus + d));
            let k = compute_eps_q_c(r_minus, r_plus, dim, lam0, lam1, None).unwrap();
            let lhs = lam0 * (2.0 * r_plus + d + k.eps);
            let rhs = k.q * lam1 * (2.0 * r_minus - d - k.eps);
            prop_assert!(((lhs - rhs) / lhs).abs() <= 1e-12);
            prop_assert!(k.q < 1.0 && k.q > 0.0);
            prop_assert!(k.c > 0.0);
        }

        #[test]
        fn verdict_invariant_under_rate_scaling(
            drift_0 in drift_strategy(),
            drift_1 in drift_strategy(),
            intensity_0 in intensity_strategy(),
            intensity_1 in intensity_strategy(),
            dim in 1usize..4,
            s in 0.01..100.0f64,
        ) {
            let spec = ModelSpec {
                dim, drift_0, drift_1, intensity_0, intensity_1,
                diffusion: DiffusionFamily::UnitMatrix,
            };
            let m = build_model(&spec).unwrap();
            let scaled = m.with_scaled_intensities(s).unwrap();
            let (r1, r2) = (m.check_recurrence_criterion(), scaled.check_recurrence_criterion());
            // skip instances that sit on the A = B boundary up to rounding
            prop_assume!((r1.a - r1.b).abs() > 1e-9 * r1.a.abs().max(r1.b.abs()).max(1.0) || !r1.a.is_finite() || !r1.b.is_finite());
            prop_assert_eq!(r1.recurrent, r2.recurrent);
        }
    }
}
