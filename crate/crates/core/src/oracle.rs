//! Brute-force reference computations: trapezoid quadrature of density
//! integrals in one and two dimensions, central finite differences, and a
//! finite-difference quadrature of the spline bending functional.
//!
//! None of this shares code paths with the closed forms in [`crate::cost`]
//! beyond pointwise density evaluation, so agreement between the two is a
//! meaningful check.

use crate::density::{JointModel, KdeModel, PointCloud};
use crate::error::{Error, Result};
use crate::kernel::gaussian_pdf;
use crate::transform::TpsTransform;

/// Half-width of the grid margin around the data, in bandwidths.
pub const MARGIN_BANDWIDTHS: f64 = 7.0;

/// Axis-aligned trapezoid grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl QuadratureGrid {
    /// Box covering every point of `clouds` plus a margin of
    /// [`MARGIN_BANDWIDTHS`] times `sqrt(max_variance)`, with enough nodes to
    /// keep the spacing at or below `sqrt(min_variance) / 4`.
    pub fn covering(clouds: &[&PointCloud], dim: usize, min_variance: f64, max_variance: f64) -> Result<Self> {
        if !(min_variance > 0.0 && max_variance >= min_variance) {
            return Err(Error::Config("quadrature needs positive bandwidths".into()));
        }
        let margin = MARGIN_BANDWIDTHS * max_variance.sqrt();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for c in clouds {
            for p in c.iter() {
                for k in 0..dim {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        lo.iter_mut().for_each(|v| *v -= margin);
        hi.iter_mut().for_each(|v| *v += margin);
        let default = if dim == 1 { 2001 } else { 401 };
        let widest = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let needed = (widest / (0.25 * min_variance.sqrt())).ceil() as usize + 1;
        Ok(Self {
            lo,
            hi,
            points_per_axis: default.max(needed),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.points_per_axis - 1) as f64
    }

    /// Same box, twice the resolution.
    pub fn refined(&self) -> Self {
        Self {
            points_per_axis: 2 * self.points_per_axis - 1,
            ..self.clone()
        }
    }

    fn check(&self, min_variance: f64) -> Result<()> {
        if self.points_per_axis < 3 {
            return Err(Error::Config("quadrature grid needs at least 3 nodes per axis".into()));
        }
        let limit = 0.25 * min_variance.sqrt() * (1.0 + 1e-12);
        for k in 0..self.dim() {
            if self.spacing(k) > limit {
                return Err(Error::Config(format!(
                    "grid spacing {:e} exceeds a quarter bandwidth ({:e})",
                    self.spacing(k),
                    limit
                )));
            }
        }
        Ok(())
    }

    fn nodes(&self, axis: usize) -> Vec<(f64, f64)> {
        let h = self.spacing(axis);
        let n = self.points_per_axis;
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                (self.lo[axis] + i as f64 * h, w)
            })
            .collect()
    }

    /// Trapezoid estimate of `∫ f` over the box (dimension 1 or 2).
    pub fn integrate<F: FnMut(&[f64]) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        match self.dim() {
            1 => {
                let mut s = 0.0;
                for (x, w) in self.nodes(0) {
                    s += w * f(&[x])?;
                }
                Ok(s)
            }
            2 => {
                let (xs, ys) = (self.nodes(0), self.nodes(1));
                let mut s = 0.0;
                for &(x, wx) in &xs {
                    let mut row = 0.0;
                    for &(y, wy) in &ys {
                        row += wy * f(&[x, y])?;
                    }
                    s += wx * row;
                }
                Ok(s)
            }
            d => Err(Error::Config(format!("quadrature supports d <= 2, got {d}"))),
        }
    }
}

/// Default grid for a pair of mixtures.
pub fn grid_for_models(a: &KdeModel, b: &KdeModel) -> Result<QuadratureGrid> {
    let (lo, hi) = minmax(&[a.bandwidth_sq(), b.bandwidth_sq()]);
    QuadratureGrid::covering(&[a.support(), b.support()], a.dim(), lo, hi)
}

fn minmax(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// `∫ (μ_a − μ_b)²` by trapezoid quadrature.
pub fn quad_l2(a: &KdeModel, b: &KdeModel, grid: &QuadratureGrid) -> Result<f64> {
    if a.dim() > 2 || a.dim() != b.dim() || grid.dim() != a.dim() {
        return Err(Error::Config("quad_l2 needs matching dimensions d <= 2".into()));
    }
    if a.is_dirac() || b.is_dirac() {
        return Err(Error::Domain("quadrature of Dirac mixtures is undefined".into()));
    }
    grid.check(a.bandwidth_sq().min(b.bandwidth_sq()))?;
    grid.integrate(|y| Ok((a.eval(y)? - b.eval(y)?).powi(2)))
}

/// `∫ μ_a μ_b` by trapezoid quadrature.
pub fn quad_inner(a: &KdeModel, b: &KdeModel, grid: &QuadratureGrid) -> Result<f64> {
    grid.check(a.bandwidth_sq().min(b.bandwidth_sq()))?;
    grid.integrate(|y| Ok(a.eval(y)? * b.eval(y)?))
}

/// Smallest and largest kernel variance appearing in a joint model.
fn joint_variances(joint: &JointModel) -> (f64, f64) {
    match joint {
        JointModel::Unsupervised {
            target,
            transformed_source,
        } => minmax(&[target.bandwidth_sq(), transformed_source.bandwidth_sq()]),
        JointModel::Supervised {
            h_sq, h_tilde_sq, ..
        } => minmax(&[*h_sq, *h_tilde_sq]),
        JointModel::SemiSupervised {
            unsupervised,
            supervised,
            ..
        } => {
            let (a, b) = joint_variances(unsupervised);
            let (c, d) = joint_variances(supervised);
            (a.min(c), b.max(d))
        }
    }
}

fn joint_points(joint: &JointModel) -> Vec<PointCloud> {
    match joint {
        JointModel::Unsupervised {
            target,
            transformed_source,
        } => vec![target.support().clone(), transformed_source.support().clone()],
        JointModel::Supervised { pairs, .. } => {
            vec![pairs.targets().clone(), pairs.sources().clone()]
        }
        JointModel::SemiSupervised {
            unsupervised,
            supervised,
            ..
        } => {
            let mut v = joint_points(unsupervised);
            v.extend(joint_points(supervised));
            v
        }
    }
}

/// Grid over `(y, ỹ)` for a 1-D joint model, also resolving a cost kernel of
/// variance `cost_variance`.
pub fn grid_for_joint(joint: &JointModel, cost_variance: f64) -> Result<QuadratureGrid> {
    let (lo, hi) = joint_variances(joint);
    let pts = joint_points(joint);
    if pts.iter().any(|p| p.dim() != 1) {
        return Err(Error::Config("joint quadrature supports one dimension per variable".into()));
    }
    let refs: Vec<&PointCloud> = pts.iter().collect();
    let g = QuadratureGrid::covering(&refs, 1, lo.min(cost_variance), hi)?;
    Ok(QuadratureGrid {
        lo: vec![g.lo[0]; 2],
        hi: vec![g.hi[0]; 2],
        points_per_axis: g.points_per_axis.min(4001).max(401),
    })
}

/// `∫∫ c(y, ỹ) γ(y, ỹ) dy dỹ` for scalar `y`, `ỹ`.
pub fn quad_expectation<C: Fn(f64, f64) -> f64>(cost: C, joint: &JointModel, grid: &QuadratureGrid) -> Result<f64> {
    if grid.dim() != 2 {
        return Err(Error::Config("expectation grid must span (y, ỹ)".into()));
    }
    grid.check(joint_variances(joint).0)?;
    grid.integrate(|p| Ok(cost(p[0], p[1]) * joint.eval(&p[..1], &p[1..])?))
}

/// The transport cost `c_G(y, ỹ) = −N(y; ỹ, h_c²)` on scalars.
pub fn robust_cost_1d(hc_sq: f64) -> impl Fn(f64, f64) -> f64 {
    move |y, yt| -gaussian_pdf(&[y], &[yt], hc_sq).unwrap_or(f64::NAN)
}

/// `γ_m(y, ỹ) = N(y; ỹ, h_c²) N(ỹ; 0, a)`, the conditional-times-flat-prior
/// model whose inner product with a plan is the negated transport cost up to
/// the constant `N(0; 0, a)`.
pub fn flat_prior_model_1d(hc_sq: f64, prior_variance: f64) -> impl Fn(f64, f64) -> f64 {
    move |y, yt| {
        gaussian_pdf(&[y], &[yt], hc_sq).unwrap_or(f64::NAN)
            * gaussian_pdf(&[yt], &[0.0], prior_variance).unwrap_or(f64::NAN)
    }
}

/// Central differences with per-coordinate step `step · max(|θ_i|, 1)`.
pub fn fd_gradient<F: FnMut(&[f64]) -> Result<f64>>(mut f: F, theta: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Domain("finite-difference step must be positive".into()));
    }
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = step * theta[i].abs().max(1.0);
        x[i] = theta[i] + h;
        let fp = f(&x)?;
        x[i] = theta[i] - h;
        let fm = f(&x)?;
        x[i] = theta[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Domain(format!("objective is not finite near coordinate {i}")));
        }
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// `∫ ‖∂²φ‖²_F` over the box `[lo, hi]²` from finite-difference Hessians on
/// an `n × n` cell-centred grid. Two-dimensional splines only.
pub fn quad_bending_energy_2d(t: &TpsTransform, lo: f64, hi: f64, n: usize) -> Result<f64> {
    if t.dim() != 2 {
        return Err(Error::Config("bending quadrature is two-dimensional".into()));
    }
    let cell = (hi - lo) / n as f64;
    let h = cell * 0.25;
    let f = |x: f64, y: f64| t.apply(&[x, y]);
    let mut total = 0.0;
    for i in 0..n {
        let x = lo + (i as f64 + 0.5) * cell;
        for j in 0..n {
            let y = lo + (j as f64 + 0.5) * cell;
            let c = f(x, y)?;
            let (xp, xm) = (f(x + h, y)?, f(x - h, y)?);
            let (yp, ym) = (f(x, y + h)?, f(x, y - h)?);
            let (pp, pm) = (f(x + h, y + h)?, f(x + h, y - h)?);
            let (mp, mm) = (f(x - h, y + h)?, f(x - h, y - h)?);
            for k in 0..2 {
                let fxx = (xp[k] - 2.0 * c[k] + xm[k]) / (h * h);
                let fyy = (yp[k] - 2.0 * c[k] + ym[k]) / (h * h);
                let fxy = (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h);
                total += (fxx * fxx + 2.0 * fxy * fxy + fyy * fyy) * cell * cell;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{l2_divergence, robust_ot_combined, robust_ot_sup, robust_ot_unsup, term_t0, term_t1, term_t2, CostConfig};
    use crate::density::CorrespondenceSet;
    use crate::transform::tps_fit_landmarks;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cloud1(v: &[f64]) -> PointCloud {
        PointCloud::from_flat(1, v.to_vec()).unwrap()
    }

    fn rand_cloud1(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        cloud1(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>())
    }

    #[test]
    fn pdf_normalises_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let mean = [rng.random::<f64>(), rng.random::<f64>()];
            let v = 0.01 + 0.1 * rng.random::<f64>();
            let c = PointCloud::from_flat(2, mean.to_vec()).unwrap();
            let g = QuadratureGrid::covering(&[&c], 2, v, v).unwrap();
            let mass = g.integrate(|z| gaussian_pdf(z, &mean, v)).unwrap();
            assert!((mass - 1.0).abs() <= 1e-6, "{mass}");
        }
    }

    #[test]
    fn conv_matches_product_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let (v1, v2) = (0.04, 0.09);
            let c = cloud1(&[a, b]);
            let g = QuadratureGrid::covering(&[&c], 1, v1, v2).unwrap();
            let q = g
                .integrate(|y| Ok(gaussian_pdf(y, &[a], v1)? * gaussian_pdf(y, &[b], v2)?))
                .unwrap();
            let closed = crate::kernel::gaussian_conv_value(&[a], &[b], v1, v2).unwrap();
            assert!((q - closed).abs() <= 1e-8);
        }
    }

    #[test]
    fn kde_and_joint_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = KdeModel::new(rand_cloud1(&mut rng, 5), 0.01).unwrap();
        let g = grid_for_models(&m, &m).unwrap();
        let mass = g.integrate(|y| m.eval(y)).unwrap();
        assert!((mass - 1.0).abs() <= 1e-5);

        let pairs = CorrespondenceSet::new(rand_cloud1(&mut rng, 3), rand_cloud1(&mut rng, 3)).unwrap();
        let joint = JointModel::Supervised { pairs, h_sq: 0.02, h_tilde_sq: 0.03 };
        let g = grid_for_joint(&joint, 0.02).unwrap();
        let mass = quad_expectation(|_, _| 1.0, &joint, &g).unwrap();
        assert!((mass - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn unsupervised_marginal_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = KdeModel::new(rand_cloud1(&mut rng, 4), 0.02).unwrap();
        let s = KdeModel::new(rand_cloud1(&mut rng, 3), 0.03).unwrap();
        let joint = JointModel::Unsupervised { target: t.clone(), transformed_source: s.clone() };
        let g = grid_for_models(&t, &s).unwrap();
        for _ in 0..10 {
            let y = rng.random::<f64>();
            let marg = g.integrate(|yt| joint.eval(&[y], yt)).unwrap();
            assert!((marg - t.eval(&[y]).unwrap()).abs() <= 1e-4);
            let marg = g.integrate(|yy| joint.eval(yy, &[y])).unwrap();
            assert!((marg - s.eval(&[y]).unwrap()).abs() <= 1e-4);
        }
    }

    #[test]
    fn t0_t1_t2_against_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h_sq = 0.01;
        let y = rand_cloud1(&mut rng, 4);
        let yt = rand_cloud1(&mut rng, 5);
        let (mu, mut_) = (KdeModel::new(y.clone(), h_sq).unwrap(), KdeModel::new(yt.clone(), h_sq).unwrap());
        let g = grid_for_models(&mu, &mut_).unwrap();
        assert!((term_t0(&y, h_sq).unwrap() - quad_inner(&mu, &mu, &g).unwrap()).abs() <= 1e-6);
        assert!((term_t1(&yt, h_sq).unwrap() - quad_inner(&mut_, &mut_, &g).unwrap()).abs() <= 1e-6);
        let cfg = CostConfig::legacy(h_sq.sqrt(), 0.0);
        assert!((term_t2(&y, &yt, &cfg).unwrap() + 2.0 * quad_inner(&mu, &mut_, &g).unwrap()).abs() <= 1e-6);

        let sym = cloud1(&[-0.2, 0.2]);
        let m = KdeModel::new(sym.clone(), h_sq).unwrap();
        let g = grid_for_models(&m, &m).unwrap();
        assert!((term_t0(&sym, h_sq).unwrap() - quad_inner(&m, &m, &g).unwrap()).abs() <= 1e-6);
        // −log T0 is the quadratic Rényi entropy of μ
        let renyi = -g.integrate(|z| Ok(m.eval(z)?.powi(2))).unwrap().ln();
        assert!((-term_t0(&sym, h_sq).unwrap().ln() - renyi).abs() <= 1e-6);
    }

    #[test]
    fn l2_oracle_self_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = KdeModel::new(rand_cloud1(&mut rng, 5), 0.02).unwrap();
        let b = KdeModel::new(rand_cloud1(&mut rng, 4), 0.05).unwrap();
        let g = grid_for_models(&a, &b).unwrap();
        assert!(quad_l2(&a, &a, &g).unwrap() <= 1e-10);
        let q = quad_l2(&a, &b, &g).unwrap();
        assert!((q - l2_divergence(&a, &b).unwrap()).abs() <= 1e-6);
        let q2 = quad_l2(&a, &b, &g.refined()).unwrap();
        assert!((q - q2).abs() < 1e-8);
        let coarse = QuadratureGrid { points_per_axis: 5, ..g };
        assert!(matches!(quad_l2(&a, &b, &coarse), Err(Error::Config(_))));
    }

    #[test]
    fn robust_terms_against_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h_sq, ht_sq, hc_sq) = (0.01f64, 0.02, 0.03f64);
        let mut cfg = CostConfig::combined(0.1, hc_sq.sqrt(), 0.3);
        cfg.h_tilde_sq = ht_sq;
        let y = rand_cloud1(&mut rng, 4);
        let yt = rand_cloud1(&mut rng, 3);
        let unsup = JointModel::Unsupervised {
            target: KdeModel::new(y.clone(), h_sq).unwrap(),
            transformed_source: KdeModel::new(yt.clone(), ht_sq).unwrap(),
        };
        let g = grid_for_joint(&unsup, hc_sq).unwrap();
        let q = quad_expectation(robust_cost_1d(hc_sq), &unsup, &g).unwrap();
        assert!((q - robust_ot_unsup(&y, &yt, &cfg).unwrap()).abs() <= 1e-5);

        let pairs = CorrespondenceSet::new(rand_cloud1(&mut rng, 2), rand_cloud1(&mut rng, 2)).unwrap();
        let id = TpsTransform::identity(1);
        let sup = JointModel::Supervised { pairs: pairs.clone(), h_sq, h_tilde_sq: ht_sq };
        let g = grid_for_joint(&sup, hc_sq).unwrap();
        let q = quad_expectation(robust_cost_1d(hc_sq), &sup, &g).unwrap();
        assert!((q - robust_ot_sup(Some(&pairs), &id, &cfg).unwrap()).abs() <= 1e-5);

        let semi = JointModel::semi_supervised(unsup, sup, 0.3).unwrap();
        let g = grid_for_joint(&semi, hc_sq).unwrap();
        let q = quad_expectation(robust_cost_1d(hc_sq), &semi, &g).unwrap();
        let c = robust_ot_combined(&y, &yt, Some(&pairs), &id, &cfg).unwrap();
        assert!((q - c).abs() <= 1e-5);
    }

    #[test]
    fn perfect_pair_closed_form() {
        let (h_sq, ht_sq, hc_sq) = (0.01f64, 0.02, 0.03f64);
        let pairs = CorrespondenceSet::new(cloud1(&[0.4]), cloud1(&[0.4])).unwrap();
        let sup = JointModel::Supervised { pairs, h_sq, h_tilde_sq: ht_sq };
        let g = grid_for_joint(&sup, hc_sq).unwrap();
        let q = quad_expectation(robust_cost_1d(hc_sq), &sup, &g).unwrap();
        assert!((q + (2.0 * PI * (h_sq + ht_sq + hc_sq)).powf(-0.5)).abs() <= 1e-6);
    }

    #[test]
    fn flat_prior_inner_product_matches_transport_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h_sq, hc_sq, a) = (0.01f64, 0.02f64, 1e4);
        let y = rand_cloud1(&mut rng, 4);
        let x = rand_cloud1(&mut rng, 4);
        let prior_peak = (2.0 * PI * a).powf(-0.5);
        let cfg = CostConfig::combined(h_sq.sqrt(), hc_sq.sqrt(), 0.0);
        // scan a shift family φ_s(x) = x + s: argmax of ⟨γ_m|γ_φ⟩ equals the argmin of the transport cost
        let mut best_q = (f64::NEG_INFINITY, 0.0);
        let mut best_c = (f64::INFINITY, 0.0);
        for k in 0..9 {
            let s = -0.4 + 0.1 * k as f64;
            let yt = x.translated(&[s]).unwrap();
            let joint = JointModel::Unsupervised {
                target: KdeModel::new(y.clone(), h_sq).unwrap(),
                transformed_source: KdeModel::new(yt.clone(), h_sq).unwrap(),
            };
            let g = grid_for_joint(&joint, hc_sq).unwrap();
            let q = quad_expectation(flat_prior_model_1d(hc_sq, a), &joint, &g).unwrap();
            let c = robust_ot_unsup(&y, &yt, &cfg).unwrap();
            assert!((q / prior_peak + c).abs() <= 1e-4 * c.abs());
            if q > best_q.0 {
                best_q = (q, s);
            }
            if c < best_c.0 {
                best_c = (c, s);
            }
        }
        assert_eq!(best_q.1, best_c.1);
    }

    #[test]
    fn fd_gradient_behaviour() {
        let g = fd_gradient(|x| Ok(3.0 * x[0] * x[0] + x[1]), &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-7 && (g[1] - 1.0).abs() < 1e-9);
        assert!(fd_gradient(|_| Ok(f64::NAN), &[0.0], 1e-5).is_err());
        assert!(fd_gradient(|_| Ok(0.0), &[0.0], 0.0).is_err());
        // second-order convergence: halving the step quarters the error
        let f = |x: &[f64]| Ok(x[0].sin() * x[0].exp());
        let exact = 0.7f64.cos() * 0.7f64.exp() + 0.7f64.sin() * 0.7f64.exp();
        let e1 = (fd_gradient(f, &[0.7], 1e-2).unwrap()[0] - exact).abs();
        let e2 = (fd_gradient(f, &[0.7], 5e-3).unwrap()[0] - exact).abs();
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn bending_energy_matches_hessian_quadrature() {
        let src = PointCloud::from_points(&[
            [0.2, 0.2], [0.8, 0.2], [0.2, 0.8], [0.8, 0.8], [0.5, 0.5], [0.35, 0.6],
        ])
        .unwrap();
        let dst = src
            .map(|p| vec![p[0] + 0.05 * (5.0 * p[1]).sin(), p[1] + 0.04 * (4.0 * p[0]).cos()])
            .unwrap();
        let t = tps_fit_landmarks(&src, &dst, 0.0).unwrap();
        let closed = t.kernel().energy_constant() * t.bending_energy();
        let quad = quad_bending_energy_2d(&t, -15.0, 16.0, 1240).unwrap();
        assert!((quad - closed).abs() <= 0.05 * closed, "quad {quad} closed {closed}");
        let affine = tps_fit_landmarks(&src, &src, 0.0).unwrap();
        assert!(quad_bending_energy_2d(&affine, 0.0, 1.0, 50).unwrap() < 1e-10);
    }
}
