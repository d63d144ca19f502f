//! Every term of the objective, its robust-transport reading, and analytic
//! gradients with respect to the spline parameters.
//!
//! Two data-term modes exist:
//!
//! * [`DataTerm::Legacy`]: `T2 + λ1·T3` with `T2 = −(2/nñ) ΣΣ N(0; ỹ_i − y_j, v)`
//!   and `T3 = −(1/K) Σ_k N(0; φ(x_k) − y_k, v)`, `v = h² + h̃²`.
//! * [`DataTerm::Combined`]: `(1 − λ)⟨c_G|γ_u⟩ + λ⟨c_G|γ_s⟩` with the transport
//!   cost folded into the variance, `v = h² + h̃² + h_c²`. The transport terms
//!   are reported with a negative sign (`c_G = −N`, `A = 0`) so that both
//!   modes attract the clouds under minimisation.
//!
//! In both modes `t2`/`t3` of a [`CostBreakdown`] hold `term_t2`/`term_t3`
//! at the mode's variance, so in combined mode `⟨c_G|γ_u⟩ = t2 / 2` and
//! `⟨c_G|γ_s⟩ = t3`.
//!
//! Pair sums are reduced row by row: each row is summed sequentially in input
//! order and rows are then added in order, so results are bit-identical for
//! any number of worker threads.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::density::{CorrespondenceSet, KdeModel, PointCloud};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{dist_sq, gauss_from_sq, log_normaliser};
use crate::transform::{
    pullback_into, range_penalty, range_penalty_gradient, PenaltyParams, TpsTransform,
};

/// Rows below this many kernel evaluations are reduced on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Which data term enters the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataTerm {
    /// `T2 + λ1·T3`.
    Legacy { lambda1: f64 },
    /// `(1 − λ)⟨c_G|γ_u⟩ + λ⟨c_G|γ_s⟩`.
    Combined { lambda: f64 },
}

/// Bandwidths and weights of the objective. Bandwidths are stored squared.
#[derive(Debug, Clone, PartialEq)]
pub struct CostConfig {
    pub h_sq: f64,
    pub h_tilde_sq: f64,
    pub hc_sq: f64,
    pub data: DataTerm,
    pub include_t0: bool,
    pub include_t1: bool,
    /// Weight on the entropy terms `T0`/`T1` when included.
    pub entropy_weight: f64,
    /// Give the unsupervised model a free mass `w ∈ (0, 1]`, profiled out
    /// at every evaluation. Only used in combined mode with `T1` on.
    pub free_mass: bool,
}

impl CostConfig {
    /// Legacy weighting with `h = h̃`, `T1` on and `T0` off.
    pub fn legacy(h: f64, lambda1: f64) -> Self {
        Self {
            h_sq: h * h,
            h_tilde_sq: h * h,
            hc_sq: 0.0,
            data: DataTerm::Legacy { lambda1 },
            include_t0: false,
            include_t1: true,
            entropy_weight: 1.0,
            free_mass: false,
        }
    }

    /// Combined transport term with `h = h̃`, `T1` on at weight `(1 − λ)/2`.
    ///
    /// With this weight the unsupervised part of the objective is
    /// `(1 − λ)/2` times the L2 divergence between the smoothed clouds, so
    /// entropy and attraction balance for every `λ`.
    pub fn combined(h: f64, hc: f64, lambda: f64) -> Self {
        Self {
            h_sq: h * h,
            h_tilde_sq: h * h,
            hc_sq: hc * hc,
            data: DataTerm::Combined { lambda },
            include_t0: false,
            include_t1: true,
            entropy_weight: 0.5 * (1.0 - lambda),
            free_mass: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("h^2", self.h_sq), ("h~^2", self.h_tilde_sq), ("hc^2", self.hc_sq)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
            }
        }
        match self.data {
            DataTerm::Legacy { lambda1 } if !(lambda1 >= 0.0) => {
                Err(Error::Domain(format!("lambda1 must be nonnegative, got {lambda1}")))
            }
            DataTerm::Combined { lambda } if !(0.0..=1.0).contains(&lambda) => {
                Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")))
            }
            DataTerm::Combined { .. } if !(self.hc_sq > 0.0) => {
                Err(Error::Domain("combined mode needs a positive h_c".into()))
            }
            _ if !(self.data_variance() > 0.0) => Err(Error::Domain(
                "combined kernel variance of the data term is zero".into(),
            )),
            _ if !(self.entropy_weight >= 0.0) => Err(Error::Domain("entropy weight must be nonnegative".into())),
            _ => Ok(()),
        }
    }

    /// Variance of the Gaussian in the data terms for the current mode.
    pub fn data_variance(&self) -> f64 {
        match self.data {
            DataTerm::Legacy { .. } => self.h_sq + self.h_tilde_sq,
            DataTerm::Combined { .. } => self.h_sq + self.h_tilde_sq + self.hc_sq,
        }
    }

    /// `h² + h̃² + h_c²`, used by the transport terms in either mode.
    pub fn transport_variance(&self) -> f64 {
        self.h_sq + self.h_tilde_sq + self.hc_sq
    }

    /// Per-kernel variances `(target, source)` used by `T0`/`T1`. Combined
    /// mode folds half of `h_c²` into each side, so that with `h = h̃` the
    /// entropy and transport kernels have the same total variance.
    pub fn entropy_bandwidths(&self) -> (f64, f64) {
        match self.data {
            DataTerm::Legacy { .. } => (self.h_sq, self.h_tilde_sq),
            DataTerm::Combined { .. } => (self.h_sq + 0.5 * self.hc_sq, self.h_tilde_sq + 0.5 * self.hc_sq),
        }
    }

    /// Minimiser over `w ∈ (0, 1]` of `ew·w²·t1 + w·(1 − λ)·t2/2`; 1 when
    /// the mass is fixed or the minimiser is undefined.
    pub fn profiled_mass(&self, t1: f64, t2: f64) -> f64 {
        let DataTerm::Combined { lambda } = self.data else {
            return 1.0;
        };
        if !self.free_mass || !self.include_t1 {
            return 1.0;
        }
        let c = (1.0 - lambda) * (0.5 * t2);
        let a = self.entropy_weight * t1;
        if c < 0.0 && a > 0.0 {
            (-c / (2.0 * a)).min(1.0)
        } else {
            1.0
        }
    }

    fn with_data_variance_of_transport(&self) -> Self {
        let mut c = self.clone();
        c.data = DataTerm::Combined {
            lambda: match self.data {
                DataTerm::Combined { lambda } => lambda,
                DataTerm::Legacy { .. } => 0.0,
            },
        };
        c
    }
}

/// Per-term values of the objective plus its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
    /// The data term: `t2 + λ1·t3` (legacy) or `⟨c_G|γ_{s+u}⟩` (combined).
    pub combined: f64,
    pub total: f64,
    /// Profiled mass of the unsupervised model (1 unless `free_mass`).
    pub mass: f64,
    /// Gradient of `total` w.r.t. the flattened spline parameters.
    pub gradient: Vec<f64>,
    pub warnings: Vec<String>,
}

pub const BREAKDOWN_FIELDS: [&str; 8] = ["t0", "t1", "t2", "t3", "t4", "t5", "combined", "total"];

impl CostBreakdown {
    pub fn values(&self) -> [f64; 8] {
        [
            self.t0,
            self.t1,
            self.t2,
            self.t3,
            self.t4,
            self.t5,
            self.combined,
            self.total,
        ]
    }

    /// Recomputes the total from the stored components.
    pub fn recompute_total(&self, cfg: &CostConfig, penalties: &PenaltyParams) -> f64 {
        let m = self.mass;
        let entropy = (if cfg.include_t0 { self.t0 } else { 0.0 })
            + (if cfg.include_t1 { m * m * self.t1 } else { 0.0 });
        let data = match cfg.data {
            DataTerm::Combined { lambda } if m != 1.0 => m * ((1.0 - lambda) * (0.5 * self.t2)) + lambda * self.t3,
            _ => self.combined,
        };
        cfg.entropy_weight * entropy
            + data
            + penalties.lambda2 * self.t4
            + penalties.lambda3 * self.t5
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// `name = value` lines with 17 significant digits.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        for (k, v) in BREAKDOWN_FIELDS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k} = {v:.16e}");
        }
        let _ = writeln!(s, "mass = {:.16e}", self.mass);
        s
    }
}

/// `Σ_i Σ_j N(0; a_i − b_j, v·I)`. When `grad` is given, adds
/// `scale · ∂/∂a_i` of the sum into it (row-major, same layout as `a`).
fn cross_sum(a: &[f64], b: &[f64], dim: usize, v: f64, scale: f64, grad: Option<&mut [f64]>) -> f64 {
    let ln = log_normaliser(dim, v);
    let row = |ai: &[f64], g: Option<&mut [f64]>| -> f64 {
        let mut s = 0.0;
        match g {
            None => {
                for bj in b.chunks_exact(dim) {
                    s += gauss_from_sq(dist_sq(ai, bj), ln, v);
                }
            }
            Some(g) => {
                let mut acc = [0.0f64; 8];
                let acc = if dim <= 8 { &mut acc[..dim] } else { unreachable_dim() };
                for bj in b.chunks_exact(dim) {
                    let k = gauss_from_sq(dist_sq(ai, bj), ln, v);
                    s += k;
                    for t in 0..dim {
                        acc[t] -= k * (ai[t] - bj[t]);
                    }
                }
                for t in 0..dim {
                    g[t] += scale * acc[t] / v;
                }
            }
        }
        s
    };
    let work = a.len() / dim * (b.len() / dim);
    let sums: Vec<f64> = match grad {
        Some(g) if work >= PAR_THRESHOLD => a
            .par_chunks_exact(dim)
            .zip(g.par_chunks_exact_mut(dim))
            .map(|(ai, gi)| row(ai, Some(gi)))
            .collect(),
        Some(g) => a
            .chunks_exact(dim)
            .zip(g.chunks_exact_mut(dim))
            .map(|(ai, gi)| row(ai, Some(gi)))
            .collect(),
        None if work >= PAR_THRESHOLD => a.par_chunks_exact(dim).map(|ai| row(ai, None)).collect(),
        None => a.chunks_exact(dim).map(|ai| row(ai, None)).collect(),
    };
    sums.iter().sum()
}

#[cold]
fn unreachable_dim() -> &'static mut [f64] {
    panic!("point dimension above 8 is not supported by the pair kernels")
}

/// `Σ_k N(0; a_k − b_k, v·I)`, with optional `scale · ∂/∂a_k`.
fn paired_sum(a: &[f64], b: &[f64], dim: usize, v: f64, scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let ln = log_normaliser(dim, v);
    let mut s = 0.0;
    for (k, (ak, bk)) in a.chunks_exact(dim).zip(b.chunks_exact(dim)).enumerate() {
        let g = gauss_from_sq(dist_sq(ak, bk), ln, v);
        s += g;
        if let Some(gr) = grad.as_deref_mut() {
            for t in 0..dim {
                gr[k * dim + t] -= scale * g * (ak[t] - bk[t]) / v;
            }
        }
    }
    s
}

fn check_max_dim(dim: usize) -> Result<()> {
    if dim > 8 {
        return Err(Error::Usage(format!(
            "point dimension {dim} exceeds the supported maximum of 8"
        )));
    }
    Ok(())
}

fn self_term(cloud: &PointCloud, bandwidth_sq: f64) -> Result<f64> {
    check_max_dim(cloud.dim())?;
    if !(bandwidth_sq > 0.0) {
        return Err(Error::Domain(
            "entropy term is infinite for a Dirac kernel (zero bandwidth)".into(),
        ));
    }
    let n = cloud.len() as f64;
    let s = cross_sum(cloud.as_flat(), cloud.as_flat(), cloud.dim(), 2.0 * bandwidth_sq, 0.0, None);
    Ok(s / (n * n))
}

/// `T0 = ‖μ‖² = (1/n²) ΣΣ N(0; y_a − y_b, 2h²I)`.
pub fn term_t0(target: &PointCloud, h_sq: f64) -> Result<f64> {
    self_term(target, h_sq)
}

/// `T1 = ‖μ̃‖²` over the transformed source points.
pub fn term_t1(transformed_source: &PointCloud, h_tilde_sq: f64) -> Result<f64> {
    self_term(transformed_source, h_tilde_sq)
}

/// `T2 = −(2/nñ) ΣΣ N(0; ỹ_i − y_j, v·I)` at the mode's data variance.
pub fn term_t2(target: &PointCloud, transformed_source: &PointCloud, cfg: &CostConfig) -> Result<f64> {
    check_dim(target.dim(), transformed_source.dim())?;
    check_max_dim(target.dim())?;
    let v = cfg.data_variance();
    if !(v > 0.0) {
        return Err(Error::Domain("data-term variance is zero".into()));
    }
    let s = cross_sum(transformed_source.as_flat(), target.as_flat(), target.dim(), v, 0.0, None);
    Ok(-2.0 * s / (target.len() * transformed_source.len()) as f64)
}

fn supervised_sum(pairs: &CorrespondenceSet, transform: &TpsTransform, v: f64) -> Result<f64> {
    check_dim(transform.dim(), pairs.dim())?;
    check_max_dim(pairs.dim())?;
    if !(v > 0.0) {
        return Err(Error::Domain("data-term variance is zero".into()));
    }
    let moved = transform.apply_cloud(pairs.sources())?;
    let s = paired_sum(moved.as_flat(), pairs.targets().as_flat(), pairs.dim(), v, 0.0, None);
    Ok(-s / pairs.len() as f64)
}

/// `T3 = −(1/K) Σ_k N(0; φ(x_k) − y_k, v·I)`; zero when no pairs are given.
/// The weight `λ1` is applied by [`full_cost`], not here.
pub fn term_t3(pairs: Option<&CorrespondenceSet>, transform: &TpsTransform, cfg: &CostConfig) -> Result<f64> {
    match pairs {
        None => Ok(0.0),
        Some(p) => supervised_sum(p, transform, cfg.data_variance()),
    }
}

fn require_hc(cfg: &CostConfig) -> Result<()> {
    if !(cfg.hc_sq > 0.0) {
        return Err(Error::Domain("robust transport cost needs h_c > 0".into()));
    }
    Ok(())
}

/// `⟨c_G|γ_u⟩ = −(1/nñ) ΣΣ N(0; ỹ_i − y_j, (h² + h̃² + h_c²)I)`.
pub fn robust_ot_unsup(target: &PointCloud, transformed_source: &PointCloud, cfg: &CostConfig) -> Result<f64> {
    require_hc(cfg)?;
    Ok(0.5 * term_t2(target, transformed_source, &cfg.with_data_variance_of_transport())?)
}

/// `⟨c_G|γ_s⟩ = −(1/K) Σ_k N(0; φ(x_k) − y_k, (h² + h̃² + h_c²)I)`.
pub fn robust_ot_sup(pairs: Option<&CorrespondenceSet>, transform: &TpsTransform, cfg: &CostConfig) -> Result<f64> {
    require_hc(cfg)?;
    term_t3(pairs, transform, &cfg.with_data_variance_of_transport())
}

/// `⟨c_G|γ_{s+u}⟩ = (1 − λ)⟨c_G|γ_u⟩ + λ⟨c_G|γ_s⟩`.
pub fn robust_ot_combined(
    target: &PointCloud,
    transformed_source: &PointCloud,
    pairs: Option<&CorrespondenceSet>,
    transform: &TpsTransform,
    cfg: &CostConfig,
) -> Result<f64> {
    let lambda = match cfg.data {
        DataTerm::Combined { lambda } => lambda,
        DataTerm::Legacy { .. } => {
            return Err(Error::Usage("robust_ot_combined needs a combined-mode config".into()))
        }
    };
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let u = robust_ot_unsup(target, transformed_source, cfg)?;
    let s = robust_ot_sup(pairs, transform, cfg)?;
    Ok((1.0 - lambda) * u + lambda * s)
}

/// `‖μ − μ̃‖²` between two Gaussian mixtures, in closed form.
pub fn l2_divergence(a: &KdeModel, b: &KdeModel) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    check_max_dim(a.dim())?;
    if a.is_dirac() || b.is_dirac() {
        return Err(Error::Domain("L2 divergence of Dirac mixtures is undefined".into()));
    }
    let (sa, sb) = (a.support(), b.support());
    let d = a.dim();
    let v = a.bandwidth_sq() + b.bandwidth_sq();
    let n = (sa.len() * sb.len()) as f64;
    // both orders, so that swapping the arguments is bit-exact
    let ab = cross_sum(sa.as_flat(), sb.as_flat(), d, v, 0.0, None) / n;
    let ba = cross_sum(sb.as_flat(), sa.as_flat(), d, v, 0.0, None) / n;
    let cross = ab + ba;
    let aa = self_term(sa, a.bandwidth_sq())?;
    let bb = self_term(sb, b.bandwidth_sq())?;
    Ok(((aa + bb) - cross).max(0.0))
}

/// `(1/K²) ΣΣ N(y_{k1}; φ(x_{k2}), (h² + h̃²)I)`: the double sum a naive
/// `⟨μ|μ̃⟩` reading of the correspondence term would give. Diagnostic only.
pub fn crossproduct_diagnostic(
    pairs: &CorrespondenceSet,
    transform: &TpsTransform,
    h_sq: f64,
    h_tilde_sq: f64,
) -> Result<f64> {
    check_dim(transform.dim(), pairs.dim())?;
    check_max_dim(pairs.dim())?;
    let v = h_sq + h_tilde_sq;
    if !(v > 0.0) {
        return Err(Error::Domain("combined variance must be positive".into()));
    }
    let moved = transform.apply_cloud(pairs.sources())?;
    let k = pairs.len() as f64;
    Ok(cross_sum(pairs.targets().as_flat(), moved.as_flat(), pairs.dim(), v, 0.0, None) / (k * k))
}

/// A fixed data set with cached spline features, evaluated repeatedly for
/// different parameters of the same spline family.
#[derive(Debug, Clone)]
pub struct CostProblem {
    target: PointCloud,
    source: PointCloud,
    pairs: Option<CorrespondenceSet>,
    cfg: CostConfig,
    penalties: PenaltyParams,
    template: TpsTransform,
    source_radial: Vec<f64>,
    pair_radial: Vec<f64>,
    t0: f64,
}

impl CostProblem {
    pub fn new(
        target: PointCloud,
        source: PointCloud,
        pairs: Option<CorrespondenceSet>,
        template: &TpsTransform,
        cfg: CostConfig,
        penalties: PenaltyParams,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = target.dim();
        check_max_dim(d)?;
        check_dim(d, source.dim())?;
        check_dim(d, template.dim())?;
        check_dim(d, penalties.dim())?;
        if let Some(p) = &pairs {
            check_dim(d, p.dim())?;
        }
        let unsup_active = match cfg.data {
            DataTerm::Legacy { .. } => true,
            DataTerm::Combined { lambda } => lambda < 1.0,
        };
        let sup_active = pairs.is_some()
            && match cfg.data {
                DataTerm::Legacy { lambda1 } => lambda1 > 0.0,
                DataTerm::Combined { lambda } => lambda > 0.0,
            };
        if !unsup_active && !sup_active {
            return Err(Error::Usage(
                "no data term is active: supply correspondences or lower lambda".into(),
            ));
        }
        let radial = |cloud: &PointCloud| -> Vec<f64> {
            cloud.iter().flat_map(|p| template.radial_features(p)).collect()
        };
        let source_radial = radial(&source);
        let pair_radial = pairs.as_ref().map(|p| radial(p.sources())).unwrap_or_default();
        let t0 = if cfg.include_t0 { term_t0(&target, cfg.entropy_bandwidths().0)? } else { 0.0 };
        Ok(Self {
            target,
            source,
            pairs,
            cfg,
            penalties,
            template: template.clone(),
            source_radial,
            pair_radial,
            t0,
        })
    }

    pub fn config(&self) -> &CostConfig {
        &self.cfg
    }

    pub fn penalties(&self) -> &PenaltyParams {
        &self.penalties
    }

    pub fn target(&self) -> &PointCloud {
        &self.target
    }

    pub fn source(&self) -> &PointCloud {
        &self.source
    }

    pub fn pairs(&self) -> Option<&CorrespondenceSet> {
        self.pairs.as_ref()
    }

    pub fn template(&self) -> &TpsTransform {
        &self.template
    }

    /// Same data with different bandwidths; features are reused.
    pub fn with_config(&self, cfg: CostConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = self.clone();
        p.t0 = if cfg.include_t0 { term_t0(&p.target, cfg.entropy_bandwidths().0)? } else { 0.0 };
        p.cfg = cfg;
        Ok(p)
    }

    fn moved(&self, t: &TpsTransform, pts: &PointCloud, radial: &[f64]) -> Vec<f64> {
        let m = t.n_controls();
        let mut out = Vec::with_capacity(pts.as_flat().len());
        for (i, x) in pts.iter().enumerate() {
            out.extend(t.apply_with_features(x, &radial[i * m..(i + 1) * m]));
        }
        out
    }

    fn pullback(&self, pts: &PointCloud, radial: &[f64], g_points: &[f64], grad: &mut [f64]) {
        let d = pts.dim();
        let m = self.template.n_controls();
        for (i, x) in pts.iter().enumerate() {
            pullback_into(x, &radial[i * m..(i + 1) * m], &g_points[i * d..(i + 1) * d], grad);
        }
    }

    /// Evaluates the objective at a spline sharing the template's controls.
    pub fn evaluate(&self, t: &TpsTransform) -> Result<CostBreakdown> {
        if t.dim() != self.template.dim()
            || t.n_controls() != self.template.n_controls()
            || t.controls() != self.template.controls()
        {
            return Err(Error::Usage(
                "transform does not share the problem's control points".into(),
            ));
        }
        let cfg = &self.cfg;
        let d = self.target.dim();
        let n_src = self.source.len();
        let moved = self.moved(t, &self.source, &self.source_radial);
        let mut g1 = vec![0.0; moved.len()];
        let mut g2 = vec![0.0; moved.len()];
        let mut warnings = Vec::new();

        let t1 = if cfg.include_t1 {
            let bw = cfg.entropy_bandwidths().1;
            if !(bw > 0.0) {
                return Err(Error::Domain("T1 needs a positive h~".into()));
            }
            let v = 2.0 * bw;
            let inv = 1.0 / (n_src * n_src) as f64;
            // each unordered pair appears twice in the double sum
            cross_sum(&moved, &moved, d, v, 2.0 * inv, Some(&mut g1)) * inv
        } else {
            0.0
        };

        let v = cfg.data_variance();
        let (w2, w3) = match cfg.data {
            DataTerm::Legacy { lambda1 } => (1.0, lambda1),
            DataTerm::Combined { lambda } => (0.5 * (1.0 - lambda), lambda),
        };

        let t2 = if w2 > 0.0 {
            let c = -2.0 / (n_src * self.target.len()) as f64;
            c * cross_sum(&moved, self.target.as_flat(), d, v, c, Some(&mut g2))
        } else {
            term_t2(&self.target, &PointCloud::from_flat(d, moved.clone())?, cfg)?
        };

        // the profiled mass is stationary, so its own derivative drops out
        let mass = cfg.profiled_mass(t1, t2);
        let s1 = if cfg.include_t1 { cfg.entropy_weight * mass * mass } else { 0.0 };
        let s2 = w2 * mass;
        let mut g_src: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| s1 * a + s2 * b).collect();

        let mut grad = vec![0.0; t.n_params()];
        let t3 = match &self.pairs {
            None => {
                warnings.push("no correspondences: T3 is zero".to_string());
                0.0
            }
            Some(p) => {
                let mp = self.moved(t, p.sources(), &self.pair_radial);
                let c = -1.0 / p.len() as f64;
                let mut g_pairs = vec![0.0; mp.len()];
                let s = paired_sum(&mp, p.targets().as_flat(), d, v, w3 * c, Some(&mut g_pairs));
                if w3 != 0.0 {
                    self.pullback(p.sources(), &self.pair_radial, &g_pairs, &mut grad);
                }
                c * s
            }
        };

        let moved_cloud = PointCloud::from_flat(d, moved)?;
        let t4 = range_penalty(&moved_cloud, &self.penalties)?;
        if self.penalties.lambda2 > 0.0 && t4 > 0.0 {
            let g4 = range_penalty_gradient(&moved_cloud, &self.penalties)?;
            for (a, b) in g_src.iter_mut().zip(g4) {
                *a += self.penalties.lambda2 * b;
            }
        }
        self.pullback(&self.source, &self.source_radial, &g_src, &mut grad);

        let t5 = t.bending_energy();
        if self.penalties.lambda3 > 0.0 {
            for (a, b) in grad.iter_mut().zip(t.bending_energy_gradient()) {
                *a += self.penalties.lambda3 * b;
            }
        }

        let combined = match cfg.data {
            DataTerm::Legacy { lambda1 } => t2 + lambda1 * t3,
            DataTerm::Combined { lambda } => (1.0 - lambda) * (0.5 * t2) + lambda * t3,
        };
        let mut b = CostBreakdown {
            t0: self.t0,
            t1,
            t2,
            t3,
            t4,
            t5,
            combined,
            total: 0.0,
            mass,
            gradient: grad,
            warnings,
        };
        b.total = b.recompute_total(cfg, &self.penalties);
        Ok(b)
    }
}

/// Evaluates the full objective at `transform` (which defines the controls).
pub fn full_cost(
    target: &PointCloud,
    source: &PointCloud,
    pairs: Option<&CorrespondenceSet>,
    transform: &TpsTransform,
    cfg: &CostConfig,
    penalties: &PenaltyParams,
) -> Result<CostBreakdown> {
    CostProblem::new(
        target.clone(),
        source.clone(),
        pairs.cloned(),
        transform,
        cfg.clone(),
        penalties.clone(),
    )?
    .evaluate(transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_pdf;
    use crate::transform::{grid_controls, tps_fit_landmarks};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cloud(d: usize, v: &[f64]) -> PointCloud {
        PointCloud::from_flat(d, v.to_vec()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        PointCloud::from_flat(d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn t0_t1_single_point() {
        let h: f64 = 0.2;
        let c = cloud(3, &[0.1, 0.2, 0.3]);
        let expect = (4.0 * PI * h * h).powf(-1.5);
        assert_relative_eq!(term_t0(&c, h * h).unwrap(), expect, max_relative = 1e-13);
        assert_relative_eq!(term_t1(&c, h * h).unwrap(), expect, max_relative = 1e-13);
        assert!(term_t0(&c, 0.0).is_err());
    }

    #[test]
    fn t1_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cloud(&mut rng, 9, 2);
        let a = term_t1(&c, 0.01).unwrap();
        let b = term_t1(&c.translated(&[5.0, -3.0]).unwrap(), 0.01).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn t2_examples() {
        let h: f64 = 0.1;
        let cfg = CostConfig::legacy(h, 0.0);
        let c = cloud(2, &[0.5, 0.5]);
        assert_relative_eq!(
            term_t2(&c, &c, &cfg).unwrap(),
            -2.0 * (4.0 * PI * h * h).powf(-1.0),
            max_relative = 1e-13
        );
        let far = term_t2(&c, &cloud(2, &[50.0, 50.0]), &cfg).unwrap();
        assert!(far <= 0.0 && far > -1e-100);
    }

    #[test]
    fn t3_examples() {
        let cfg = CostConfig::legacy(0.1, 1.0);
        let v = cfg.data_variance();
        let pairs = CorrespondenceSet::new(cloud(2, &[0.2, 0.3, 0.6, 0.1]), cloud(2, &[0.2, 0.3, 0.6, 0.1])).unwrap();
        let id = TpsTransform::identity(2);
        assert_relative_eq!(
            term_t3(Some(&pairs), &id, &cfg).unwrap(),
            -(2.0 * PI * v).powf(-1.0),
            max_relative = 1e-13
        );
        let one = CorrespondenceSet::new(cloud(2, &[0.0, 0.0]), cloud(2, &[0.3, -0.1])).unwrap();
        assert_relative_eq!(
            term_t3(Some(&one), &id, &cfg).unwrap(),
            -gaussian_pdf(&[0.0, 0.0], &[0.3, -0.1], v).unwrap(),
            max_relative = 1e-13
        );
        assert_eq!(term_t3(None, &id, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn robust_terms_dirac_limit() {
        let hc: f64 = 0.3;
        let mut cfg = CostConfig::combined(0.0, hc, 0.0);
        cfg.include_t1 = false;
        let a = cloud(1, &[0.0, 0.5]);
        let b = cloud(1, &[0.1]);
        let direct = -(gaussian_pdf(&[0.1], &[0.0], hc * hc).unwrap() + gaussian_pdf(&[0.1], &[0.5], hc * hc).unwrap()) / 2.0;
        assert_relative_eq!(robust_ot_unsup(&a, &b, &cfg).unwrap(), direct, max_relative = 1e-13);

        let pairs = CorrespondenceSet::new(a.clone(), cloud(1, &[0.0, 0.5])).unwrap();
        let id = TpsTransform::identity(1);
        assert_relative_eq!(
            robust_ot_sup(Some(&pairs), &id, &cfg).unwrap(),
            -(2.0 * PI * hc * hc).powf(-0.5),
            max_relative = 1e-13
        );
        let no_hc = CostConfig::legacy(0.1, 1.0);
        assert!(robust_ot_unsup(&a, &b, &no_hc).is_err());
    }

    #[test]
    fn robust_unsup_is_half_of_t2_in_combined_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 5, 3);
        let b = random_cloud(&mut rng, 7, 3);
        let cfg = CostConfig::combined(0.1, 0.2, 0.3);
        assert_eq!(robust_ot_unsup(&a, &b, &cfg).unwrap(), 0.5 * term_t2(&a, &b, &cfg).unwrap());
    }

    #[test]
    fn combined_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tgt = random_cloud(&mut rng, 6, 2);
        let src = random_cloud(&mut rng, 6, 2);
        let pairs = CorrespondenceSet::new(random_cloud(&mut rng, 3, 2), random_cloud(&mut rng, 3, 2)).unwrap();
        let id = TpsTransform::identity(2);
        let at = |l: f64| {
            robust_ot_combined(&tgt, &src, Some(&pairs), &id, &CostConfig::combined(0.1, 0.2, l)).unwrap()
        };
        let cfg = CostConfig::combined(0.1, 0.2, 0.0);
        assert_eq!(at(0.0), robust_ot_unsup(&tgt, &src, &cfg).unwrap());
        assert_eq!(at(1.0), robust_ot_sup(Some(&pairs), &id, &cfg).unwrap());
        let mid = 0.5 * robust_ot_unsup(&tgt, &src, &cfg).unwrap() + 0.5 * robust_ot_sup(Some(&pairs), &id, &cfg).unwrap();
        assert!((at(0.5) - mid).abs() <= 2.0 * f64::EPSILON * mid.abs());
        assert!(robust_ot_combined(&tgt, &src, None, &id, &CostConfig::legacy(0.1, 1.0)).is_err());
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cloud(&mut rng, 20, 3);
        let mut cfg = CostConfig::legacy(0.1, 0.0);
        cfg.include_t0 = true;
        let pen = PenaltyParams::new(3, 0.0, 0.0).unwrap();
        let b = full_cost(&c, &c, None, &TpsTransform::identity(3), &cfg, &pen).unwrap();
        assert_eq!(b.t2, -2.0 * b.t0);
        assert!(b.total.abs() <= 1e-12 * b.t0);
        assert_eq!(b.total, b.recompute_total(&cfg, &pen));
        assert!(!b.warnings.is_empty());
    }

    #[test]
    fn l2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = KdeModel::new(random_cloud(&mut rng, 8, 2), 0.02).unwrap();
        let b = KdeModel::new(random_cloud(&mut rng, 5, 2), 0.03).unwrap();
        assert!(l2_divergence(&a, &a).unwrap() <= 1e-12);
        assert_eq!(l2_divergence(&a, &b).unwrap(), l2_divergence(&b, &a).unwrap());
        assert!(l2_divergence(&a, &b).unwrap() > 0.0);
        let dirac = KdeModel::new(random_cloud(&mut rng, 5, 2), 0.0).unwrap();
        assert!(l2_divergence(&a, &dirac).is_err());
    }

    #[test]
    fn crossproduct_differs_from_single_sum() {
        let pairs = CorrespondenceSet::new(cloud(1, &[0.0, 1.0]), cloud(1, &[0.1, 0.8])).unwrap();
        let id = TpsTransform::identity(1);
        let h_sq = 0.01;
        let cfg = CostConfig::legacy(0.1, 1.0);
        let single = -term_t3(Some(&pairs), &id, &cfg).unwrap();
        let double = crossproduct_diagnostic(&pairs, &id, h_sq, h_sq).unwrap();
        assert!((single - double).abs() > 1e-6);

        let one = CorrespondenceSet::new(cloud(1, &[0.0]), cloud(1, &[0.1])).unwrap();
        assert_relative_eq!(
            crossproduct_diagnostic(&one, &id, h_sq, h_sq).unwrap(),
            -term_t3(Some(&one), &id, &cfg).unwrap(),
            max_relative = 1e-14
        );
        let swapped = CorrespondenceSet::new(pairs.sources().clone(), pairs.targets().clone()).unwrap();
        assert_relative_eq!(
            crossproduct_diagnostic(&swapped, &id, h_sq, h_sq).unwrap(),
            double,
            max_relative = 1e-14
        );
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tgt = random_cloud(&mut rng, 10, 2);
        let src = random_cloud(&mut rng, 12, 2);
        let pairs = CorrespondenceSet::new(random_cloud(&mut rng, 4, 2), random_cloud(&mut rng, 4, 2)).unwrap();
        let fit = tps_fit_landmarks(&random_cloud(&mut rng, 6, 2), &random_cloud(&mut rng, 6, 2), 1e-2).unwrap();
        let shift = [2.0, -1.5];
        // φ'(x) = φ(x − s) + s  is a spline with shifted controls
        let src_s = src.translated(&shift).unwrap();
        let tgt_s = tgt.translated(&shift).unwrap();
        let pairs_s = CorrespondenceSet::new(
            pairs.targets().translated(&shift).unwrap(),
            pairs.sources().translated(&shift).unwrap(),
        )
        .unwrap();
        let ctrl_s = fit.controls().unwrap().translated(&shift).unwrap();
        let a = fit.affine_part();
        let b_s = fit.translation() - a * nalgebra::DVector::from_column_slice(&shift)
            + nalgebra::DVector::from_column_slice(&shift);
        let fit_s = TpsTransform::new(fit.kernel(), ctrl_s, a.clone(), b_s, fit.weights().clone()).unwrap();
        let pen = PenaltyParams::with_box(0.0, 0.0, vec![-10.0; 2], vec![10.0; 2]).unwrap();
        for cfg in [CostConfig::legacy(0.1, 0.7), CostConfig::combined(0.1, 0.15, 0.4)] {
            let x = full_cost(&tgt, &src, Some(&pairs), &fit, &cfg, &pen).unwrap();
            let y = full_cost(&tgt_s, &src_s, Some(&pairs_s), &fit_s, &cfg, &pen).unwrap();
            for (p, q) in [(x.t1, y.t1), (x.t2, y.t2), (x.t3, y.t3), (x.combined, y.combined)] {
                assert_relative_eq!(p, q, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn sign_structure_and_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for seed in 0..10u64 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let tgt = random_cloud(&mut r, 8, 3);
            let src = random_cloud(&mut r, 9, 3);
            let pairs = CorrespondenceSet::new(random_cloud(&mut r, 4, 3), random_cloud(&mut r, 4, 3)).unwrap();
            let t = tps_fit_landmarks(&random_cloud(&mut rng, 8, 3), &random_cloud(&mut rng, 8, 3).map(|p| p.iter().map(|v| 1.4 * v - 0.2).collect()).unwrap(), 1e-3).unwrap();
            let pen = PenaltyParams::new(3, 0.1, 1e-3).unwrap();
            for mut cfg in [CostConfig::legacy(0.1, 0.5), CostConfig::combined(0.1, 0.1, 0.5)] {
                cfg.include_t0 = true;
                let b = full_cost(&tgt, &src, Some(&pairs), &t, &cfg, &pen).unwrap();
                assert!(b.t0 > 0.0 && b.t1 > 0.0);
                assert!(b.t2 <= 0.0 && b.t3 <= 0.0 && b.combined <= 0.0);
                assert!(b.t4 >= 0.0 && b.t5 >= 0.0);
                assert_eq!(b.total, b.recompute_total(&cfg, &pen));
            }
        }
    }

    #[test]
    fn gradient_matches_fd_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let tgt = random_cloud(&mut rng, 7, 2);
        let src = random_cloud(&mut rng, 6, 2);
        let pairs = CorrespondenceSet::new(random_cloud(&mut rng, 3, 2), random_cloud(&mut rng, 3, 2)).unwrap();
        let base = TpsTransform::identity_with_controls(grid_controls(2, 3).unwrap()).unwrap();
        let pen = PenaltyParams::new(2, 0.5, 0.01).unwrap();
        let cfg = CostConfig::legacy(0.2, 0.8);
        let mut p0 = base.params();
        let proj = base.projector().unwrap().unwrap();
        for v in p0.iter_mut() {
            *v += 0.2 * (rng.random::<f64>() - 0.5);
        }
        proj.project_params(2, &mut p0);
        let t = base.with_params(&p0).unwrap();
        let prob = CostProblem::new(tgt, src, Some(pairs), &base, cfg, pen).unwrap();
        let g = prob.evaluate(&t).unwrap().gradient;
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut a = p0.clone();
            let mut b = p0.clone();
            a[i] += h;
            b[i] -= h;
            let fa = prob.evaluate(&base.with_params(&a).unwrap()).unwrap().total;
            let fb = prob.evaluate(&base.with_params(&b).unwrap()).unwrap().total;
            let fd = (fa - fb) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-2), "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn errors() {
        let c = cloud(2, &[0.1, 0.2]);
        let t = TpsTransform::identity(2);
        let pen = PenaltyParams::new(2, 0.0, 0.0).unwrap();
        let mut cfg = CostConfig::combined(0.1, 0.1, 1.0);
        // λ = 1 without correspondences leaves no data term
        assert!(matches!(full_cost(&c, &c, None, &t, &cfg, &pen), Err(Error::Usage(_))));
        cfg.data = DataTerm::Combined { lambda: 1.5 };
        assert!(full_cost(&c, &c, None, &t, &cfg, &pen).is_err());
        let zero = CostConfig::legacy(0.0, 0.0);
        assert!(term_t2(&c, &c, &zero).is_err());
        assert!(full_cost(&c, &cloud(3, &[0.0; 3]), None, &t, &CostConfig::legacy(0.1, 0.0), &pen).is_err());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let tgt = random_cloud(&mut rng, 300, 3);
        let src = random_cloud(&mut rng, 250, 3);
        let base = TpsTransform::identity_with_controls(grid_controls(3, 3).unwrap()).unwrap();
        let pen = PenaltyParams::new(3, 0.1, 1e-3).unwrap();
        let prob = CostProblem::new(tgt, src, None, &base, CostConfig::legacy(0.1, 0.0), pen).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| prob.evaluate(&base).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
