//! Isotropic Gaussian kernels and the robust loss family.
//!
//! All kernels are parameterised by their variance `v` (the `σ²` of
//! `N(z; a, σ²I)`), never by a standard deviation, so that the product of two
//! Gaussians integrates to a Gaussian whose variance is simply `v1 + v2`.
//!
//! The robust transport cost `c_G(y, ỹ) = A − N(y; ỹ, h_c² I)` and the
//! Welsch-Leclerc loss `ρ_G(ε) = 1 − exp(−ε²/(2σ²))` are related by
//!
//! ```text
//! c_G(y, ỹ) = A − (2π h_c²)^(−d/2) · (1 − ρ_G(‖y − ỹ‖))      with σ = h_c
//! ```
//!
//! Both forms are exposed; [`robust_cost_as_loss`] maps one onto the other.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{check_dim, Error, Result};

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log((2π v)^(−d/2))`.
#[inline]
pub(crate) fn log_normaliser(dim: usize, variance: f64) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI * variance).ln()
}

/// Gaussian value from a precomputed squared distance. No validation.
#[inline]
pub(crate) fn gauss_from_sq(dist_sq: f64, log_norm: f64, variance: f64) -> f64 {
    (log_norm - 0.5 * dist_sq / variance).exp()
}

/// `N(z; a, σ²I)` in `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoGaussian {
    dim: usize,
    variance: f64,
    log_norm: f64,
}

impl IsoGaussian {
    pub fn new(dim: usize, variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::Domain(format!(
                "variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self {
            dim,
            variance,
            log_norm: log_normaliser(dim, variance),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `(2π v)^(−d/2)`, the density at the mode.
    pub fn normaliser(&self) -> f64 {
        self.log_norm.exp()
    }

    /// Density at `z` of the Gaussian centred at `mean`.
    pub fn pdf(&self, z: &[f64], mean: &[f64]) -> Result<f64> {
        check_dim(self.dim, z.len())?;
        check_dim(self.dim, mean.len())?;
        Ok(self.pdf_unchecked(z, mean))
    }

    #[inline]
    pub(crate) fn pdf_unchecked(&self, z: &[f64], mean: &[f64]) -> f64 {
        gauss_from_sq(dist_sq(z, mean), self.log_norm, self.variance)
    }

    /// Density as a function of the squared distance `‖z − mean‖²`.
    #[inline]
    pub fn pdf_sq(&self, dist_sq: f64) -> f64 {
        gauss_from_sq(dist_sq, self.log_norm, self.variance)
    }
}

/// `N(z; mean, variance·I)`.
pub fn gaussian_pdf(z: &[f64], mean: &[f64], variance: f64) -> Result<f64> {
    check_dim(z.len(), mean.len())?;
    IsoGaussian::new(z.len(), variance)?.pdf(z, mean)
}

/// `∫ N(y; a, v1·I) N(y; b, v2·I) dy = N(0; a − b, (v1 + v2)·I)`.
///
/// Either variance may be zero (a Dirac kernel) but not both.
pub fn gaussian_conv_value(a: &[f64], b: &[f64], v1: f64, v2: f64) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if v1 < 0.0 || v2 < 0.0 {
        return Err(Error::Domain(format!(
            "variances must be nonnegative, got {v1} and {v2}"
        )));
    }
    if v1 + v2 <= 0.0 {
        return Err(Error::Domain(
            "product of two Dirac kernels is undefined".into(),
        ));
    }
    gaussian_pdf(a, b, v1 + v2)
}

/// Parameters of the robust transport cost `c_G = A − N(y; ỹ, h_c² I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustCostParams {
    hc: f64,
    offset: f64,
}

impl RobustCostParams {
    pub fn new(hc: f64) -> Result<Self> {
        Self::with_offset(hc, 0.0)
    }

    pub fn with_offset(hc: f64, offset: f64) -> Result<Self> {
        if !(hc > 0.0) || !hc.is_finite() {
            return Err(Error::Domain(format!("h_c must be positive, got {hc}")));
        }
        if !(offset >= 0.0) {
            return Err(Error::Domain(format!(
                "offset A must be nonnegative, got {offset}"
            )));
        }
        Ok(Self { hc, offset })
    }

    pub fn hc(&self) -> f64 {
        self.hc
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// `c_G(y, ỹ) = A − N(y; ỹ, h_c² I)`.
pub fn robust_cost(y: &[f64], y_tilde: &[f64], p: &RobustCostParams) -> Result<f64> {
    Ok(p.offset - gaussian_pdf(y, y_tilde, p.hc * p.hc)?)
}

/// Maps a robust cost value back onto the Welsch-Leclerc scale:
/// `ρ_G(ε) = 1 − (A − c_G) / (2π h_c²)^(−d/2)`.
pub fn robust_cost_as_loss(cost: f64, dim: usize, p: &RobustCostParams) -> f64 {
    let norm = log_normaliser(dim, p.hc * p.hc).exp();
    1.0 - (p.offset - cost) / norm
}

/// The loss family plotted against the residual `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    LeastSquares,
    Absolute,
    WelschLeclerc(f64),
    GemanMcClure(f64),
}

impl LossKind {
    pub fn scale(&self) -> Option<f64> {
        match *self {
            LossKind::WelschLeclerc(s) | LossKind::GemanMcClure(s) => Some(s),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.scale() {
            Some(s) if !(s > 0.0) || !s.is_finite() => {
                Err(Error::Domain(format!("loss scale must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }

    /// Leading-order small-residual approximation, for the scaled losses.
    pub fn taylor(&self, eps: f64) -> Option<f64> {
        match *self {
            LossKind::WelschLeclerc(s) => Some(eps * eps / (2.0 * s * s)),
            LossKind::GemanMcClure(s) => Some(eps * eps / (s * s)),
            _ => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::LeastSquares => write!(f, "least_squares"),
            LossKind::Absolute => write!(f, "absolute"),
            LossKind::WelschLeclerc(s) => write!(f, "welsch_{s}"),
            LossKind::GemanMcClure(s) => write!(f, "geman_mcclure_{s}"),
        }
    }
}

/// Accepts the display names, e.g. `welsch_0.5`, `geman_mcclure_2`.
impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let scaled = |rest: &str| -> Result<f64> {
            rest.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::Usage(format!("bad loss scale in '{s}'")))
        };
        match s {
            "least_squares" => Ok(LossKind::LeastSquares),
            "absolute" => Ok(LossKind::Absolute),
            _ => {
                if let Some(r) = s.strip_prefix("welsch_") {
                    Ok(LossKind::WelschLeclerc(scaled(r)?))
                } else if let Some(r) = s.strip_prefix("geman_mcclure_") {
                    Ok(LossKind::GemanMcClure(scaled(r)?))
                } else {
                    Err(Error::Usage(format!("unknown loss '{s}'")))
                }
            }
        }
    }
}

/// Evaluates `ρ(ε)` for the given loss.
pub fn rho(kind: LossKind, eps: f64) -> Result<f64> {
    kind.validate()?;
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!(
            "residual must be nonnegative, got {eps}"
        )));
    }
    Ok(match kind {
        LossKind::LeastSquares => eps * eps,
        LossKind::Absolute => eps,
        // -expm1 keeps precision for tiny residuals
        LossKind::WelschLeclerc(s) => -(-0.5 * (eps / s).powi(2)).exp_m1(),
        LossKind::GemanMcClure(s) => {
            let u = (eps / s).powi(2);
            u / (u + 1.0)
        }
    })
}

/// Tabulated loss curves, one row per residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub kinds: Vec<LossKind>,
    pub eps: Vec<f64>,
    /// `rows[i][k]` is `ρ_k(eps[i])`.
    pub values: Vec<Vec<f64>>,
    /// `taylor[i][k]` is the approximation for scaled kinds, `None` otherwise.
    pub taylor: Vec<Vec<Option<f64>>>,
}

pub fn emit_loss_curves(kinds: &[LossKind], eps_grid: &[f64]) -> Result<LossTable> {
    if eps_grid.is_empty() {
        return Err(Error::Usage("residual grid is empty".into()));
    }
    if kinds.is_empty() {
        return Err(Error::Usage("no loss kinds requested".into()));
    }
    if eps_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Usage("residual grid must be sorted ascending".into()));
    }
    let mut values = Vec::with_capacity(eps_grid.len());
    let mut taylor = Vec::with_capacity(eps_grid.len());
    for &e in eps_grid {
        values.push(
            kinds
                .iter()
                .map(|&k| rho(k, e))
                .collect::<Result<Vec<_>>>()?,
        );
        taylor.push(kinds.iter().map(|k| k.taylor(e)).collect());
    }
    Ok(LossTable {
        kinds: kinds.to_vec(),
        eps: eps_grid.to_vec(),
        values,
        taylor,
    })
}

/// Formats with 9 significant digits.
pub(crate) fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

impl LossTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps");
        for k in &self.kinds {
            out.push_str(&format!(",{k}"));
            if k.scale().is_some() {
                out.push_str(&format!(",{k}_taylor"));
            }
        }
        out.push('\n');
        for (i, e) in self.eps.iter().enumerate() {
            out.push_str(&fmt_sig9(*e));
            for (k, kind) in self.kinds.iter().enumerate() {
                out.push(',');
                out.push_str(&fmt_sig9(self.values[i][k]));
                if kind.scale().is_some() {
                    out.push(',');
                    out.push_str(&fmt_sig9(self.taylor[i][k].unwrap_or(f64::NAN)));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pdf_mode_values() {
        assert_relative_eq!(
            gaussian_pdf(&[0.0], &[0.0], 2.0).unwrap(),
            (4.0 * PI).powf(-0.5),
            max_relative = 1e-14
        );
        assert_relative_eq!(gaussian_pdf(&[0.0], &[0.0], 2.0).unwrap(), 0.2820948, epsilon = 1e-7);
        let h: f64 = 0.1;
        assert_relative_eq!(
            gaussian_pdf(&[0.0; 3], &[0.0; 3], 2.0 * h * h).unwrap(),
            (0.04 * PI).powf(-1.5),
            max_relative = 1e-12
        );
    }

    #[test]
    fn pdf_errors() {
        assert!(matches!(
            gaussian_pdf(&[0.0, 1.0], &[0.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(gaussian_pdf(&[0.0], &[0.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(gaussian_pdf(&[0.0], &[0.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn small_bandwidth_stays_finite() {
        let v = gaussian_pdf(&[0.0; 3], &[0.0; 3], 1e-4).unwrap();
        assert!(v.is_finite() && v > 6e4);
    }

    #[test]
    fn conv_special_cases() {
        let h2 = 0.04;
        let a = [0.3, -0.2];
        assert_relative_eq!(
            gaussian_conv_value(&a, &a, h2, h2).unwrap(),
            (4.0 * PI * h2).powf(-1.0),
            max_relative = 1e-13
        );
        let b = [0.1, 0.5];
        assert_eq!(
            gaussian_conv_value(&a, &b, h2, 0.0).unwrap(),
            gaussian_pdf(&b, &a, h2).unwrap()
        );
        assert!(gaussian_conv_value(&a, &b, 0.0, 0.0).is_err());
    }

    #[test]
    fn robust_cost_values() {
        let p = RobustCostParams::new(1.0).unwrap();
        assert_relative_eq!(robust_cost(&[0.2], &[0.2], &p).unwrap(), -0.3989423, epsilon = 1e-7);
        let far = robust_cost(&[0.0], &[1e3], &RobustCostParams::with_offset(1.0, 2.5).unwrap()).unwrap();
        assert_relative_eq!(far, 2.5, epsilon = 1e-12);
        assert!(RobustCostParams::new(0.0).is_err());
        assert!(RobustCostParams::with_offset(1.0, -1.0).is_err());
    }

    #[test]
    fn robust_cost_matches_welsch_after_renormalisation() {
        let p = RobustCostParams::with_offset(0.7, 0.3).unwrap();
        let y = [0.1, -0.4, 0.9];
        let yt = [0.5, 0.2, 0.1];
        let eps = dist_sq(&y, &yt).sqrt();
        let c = robust_cost(&y, &yt, &p).unwrap();
        let direct = rho(LossKind::WelschLeclerc(0.7), eps).unwrap();
        assert_relative_eq!(robust_cost_as_loss(c, 3, &p), direct, epsilon = 1e-12);
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho(LossKind::WelschLeclerc(1.0), 0.0).unwrap(), 0.0);
        assert_relative_eq!(rho(LossKind::GemanMcClure(1.0), 1.0).unwrap(), 0.5);
        assert_eq!(rho(LossKind::LeastSquares, 3.0).unwrap(), 9.0);
        assert_eq!(rho(LossKind::Absolute, 3.0).unwrap(), 3.0);
        let (e, s) = (0.3_f64, 3.0_f64);
        let r = rho(LossKind::WelschLeclerc(s), e).unwrap();
        let t = e * e / (2.0 * s * s);
        assert!(t - r >= 0.0 && t - r <= e.powi(4) / (8.0 * s.powi(4)));
        assert!(rho(LossKind::WelschLeclerc(0.0), 1.0).is_err());
        assert!(rho(LossKind::Absolute, -1.0).is_err());
    }

    #[test]
    fn loss_curves() {
        let kinds = [
            LossKind::LeastSquares,
            LossKind::WelschLeclerc(3.0),
            LossKind::GemanMcClure(1.0),
        ];
        let t = emit_loss_curves(&kinds, &[0.0]).unwrap();
        assert!(t.values[0].iter().all(|&v| v == 0.0));

        let grid: Vec<f64> = (0..=90).map(|i| i as f64 * 0.1).collect();
        let t = emit_loss_curves(&[LossKind::WelschLeclerc(3.0)], &grid).unwrap();
        for (i, &e) in grid.iter().enumerate() {
            if e <= 0.3 + 1e-12 && e > 0.0 {
                let (v, a) = (t.values[i][0], t.taylor[i][0].unwrap());
                assert!((a - v).abs() / v < 0.01);
            }
        }

        let t = emit_loss_curves(&[LossKind::WelschLeclerc(2.0)], &[0.0, 10.0]).unwrap();
        assert!(t.values[1][0] >= 0.999);

        assert!(matches!(emit_loss_curves(&kinds, &[]), Err(Error::Usage(_))));
        assert!(emit_loss_curves(&kinds, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn loss_csv_layout() {
        let t = emit_loss_curves(
            &[LossKind::Absolute, LossKind::GemanMcClure(1.0)],
            &[0.0, 1.0],
        )
        .unwrap();
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "eps,absolute,geman_mcclure_1,geman_mcclure_1_taylor");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "1.00000000e0,1.00000000e0,5.00000000e-1,1.00000000e0");
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0..2.0f64, 3)
    }

    proptest! {
        #[test]
        fn pdf_symmetric(z in vec3(), m in vec3(), v in 0.01..4.0f64) {
            prop_assert_eq!(gaussian_pdf(&z, &m, v).unwrap(), gaussian_pdf(&m, &z, v).unwrap());
        }

        #[test]
        fn conv_swap_and_translation(a in vec3(), b in vec3(), t in vec3(),
                                     v1 in 0.01..1.0f64, v2 in 0.0..1.0f64) {
            let x = gaussian_conv_value(&a, &b, v1, v2).unwrap();
            let y = gaussian_conv_value(&b, &a, v2, v1).unwrap();
            prop_assert!((x - y).abs() <= 1e-14 * x.abs());
            let at: Vec<f64> = a.iter().zip(&t).map(|(p, q)| p + q).collect();
            let bt: Vec<f64> = b.iter().zip(&t).map(|(p, q)| p + q).collect();
            let z = gaussian_conv_value(&at, &bt, v1, v2).unwrap();
            prop_assert!((x - z).abs() <= 1e-12 * x.abs().max(1e-300));
        }

        #[test]
        fn taylor_bound(eps in 0.0..10.0f64, sigma in 0.05..10.0f64) {
            let r = rho(LossKind::WelschLeclerc(sigma), eps).unwrap();
            let t = eps * eps / (2.0 * sigma * sigma);
            let slack = 1e-15 * t.max(1.0);
            prop_assert!(t - r >= -slack);
            prop_assert!(t - r <= eps.powi(4) / (8.0 * sigma.powi(4)) + slack);
        }

        #[test]
        fn redescending_losses_monotone_bounded(e1 in 0.0..50.0f64, e2 in 0.0..50.0f64, s in 0.1..5.0f64) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            for k in [LossKind::WelschLeclerc(s), LossKind::GemanMcClure(s)] {
                let (a, b) = (rho(k, lo).unwrap(), rho(k, hi).unwrap());
                prop_assert!(a <= b && b <= 1.0);
            }
        }

        #[test]
        fn offset_does_not_move_argmin(pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..8),
                                       offset in 0.0..5.0f64) {
            // argmin over a 1-D grid of shifts t applied to the second coordinate
            let grid: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
            let argmin = |a: f64| {
                let p = RobustCostParams::with_offset(0.3, a).unwrap();
                let mut best = (f64::INFINITY, 0usize);
                for (gi, t) in grid.iter().enumerate() {
                    let s: f64 = pts.iter().map(|(y, x)| robust_cost(&[*y], &[*x + t], &p).unwrap()).sum();
                    if s < best.0 { best = (s, gi); }
                }
                best.1
            };
            prop_assert_eq!(argmin(0.0), argmin(offset));
        }
    }

    #[test]
    fn loss_names_round_trip() {
        for k in [LossKind::LeastSquares, LossKind::Absolute, LossKind::WelschLeclerc(0.5), LossKind::GemanMcClure(2.0)] {
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
        assert!("welsch_-1".parse::<LossKind>().is_err());
        assert!("huber_1".parse::<LossKind>().is_err());
    }
}
