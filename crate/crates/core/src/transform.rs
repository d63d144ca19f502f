//! Thin-plate spline transfer functions.
//!
//! `φ(x) = A x + b + Σ_m W[m,:] U(‖x − c_m‖)` with the side conditions
//! `Σ_m W[m,:] = 0` and `Σ_m c_m W[m,:]ᵀ = 0`. For fixed `x`, `φ` is linear
//! in `(A, b, W)`, so its parameter Jacobian is exact.
//!
//! Parameters are flattened as `[A (row-major, d²), b (d), W (row-major, m·d)]`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::density::PointCloud;
use crate::error::{check_dim, Error, Result};
use crate::kernel::dist_sq;

/// Radial basis of the spline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialKernel {
    /// `U(r) = r³`, the 1-D spline kernel.
    Cubic,
    /// `U(r) = r² log r`.
    ThinPlate,
    /// `U(r) = −r`.
    NegLinear,
}

impl RadialKernel {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => RadialKernel::Cubic,
            2 => RadialKernel::ThinPlate,
            _ => RadialKernel::NegLinear,
        }
    }

    /// `U` as a function of the squared distance.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        match self {
            RadialKernel::Cubic => r2 * r2.sqrt(),
            RadialKernel::ThinPlate => {
                if r2 > 0.0 {
                    0.5 * r2 * r2.ln()
                } else {
                    0.0
                }
            }
            RadialKernel::NegLinear => -r2.sqrt(),
        }
    }

    /// Constant `κ` with `∫ ‖∂²φ‖²_F = κ · trace(Wᵀ K W)` over the whole space.
    pub fn energy_constant(&self) -> f64 {
        match self {
            RadialKernel::Cubic => 12.0,
            RadialKernel::ThinPlate | RadialKernel::NegLinear => 8.0 * std::f64::consts::PI,
        }
    }
}

impl fmt::Display for RadialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadialKernel::Cubic => "r3",
            RadialKernel::ThinPlate => "r2logr",
            RadialKernel::NegLinear => "neg_r",
        })
    }
}

impl FromStr for RadialKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r3" => Ok(RadialKernel::Cubic),
            "r2logr" => Ok(RadialKernel::ThinPlate),
            "neg_r" => Ok(RadialKernel::NegLinear),
            other => Err(Error::Config(format!("unknown radial kernel `{other}`"))),
        }
    }
}

/// Regular `g^d` grid over the unit box.
pub fn grid_controls(dim: usize, per_axis: usize) -> Result<PointCloud> {
    if per_axis < 2 {
        return Err(Error::Usage("control grid needs at least 2 nodes per axis".into()));
    }
    let total = per_axis.pow(dim as u32);
    let mut data = Vec::with_capacity(total * dim);
    for mut idx in 0..total {
        for _ in 0..dim {
            data.push((idx % per_axis) as f64 / (per_axis - 1) as f64);
            idx /= per_axis;
        }
    }
    PointCloud::from_flat(dim, data)
}

/// Default control grid: 5 per axis in 3-D, 7 in 2-D, 9 in 1-D.
pub fn default_controls(dim: usize) -> Result<PointCloud> {
    let g = match dim {
        1 => 9,
        2 => 7,
        _ => 5,
    };
    grid_controls(dim, g)
}

fn kernel_matrix(kernel: RadialKernel, controls: &PointCloud) -> DMatrix<f64> {
    let m = controls.len();
    DMatrix::from_fn(m, m, |i, j| {
        kernel.eval_sq(dist_sq(controls.point(i), controls.point(j)))
    })
}

/// `[1, c_m]` stacked row-wise, `m × (d+1)`.
fn side_matrix(controls: &PointCloud) -> DMatrix<f64> {
    let d = controls.dim();
    DMatrix::from_fn(controls.len(), d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            controls.point(i)[j - 1]
        }
    })
}

fn affinely_independent(controls: &PointCloud) -> bool {
    let p = side_matrix(controls);
    if p.nrows() < p.ncols() {
        return false;
    }
    let sv = p.singular_values();
    let max = sv.max();
    sv.iter().all(|&s| s > 1e-10 * max.max(1.0))
}

/// Orthogonal projection of kernel weights onto the side-condition subspace.
#[derive(Debug, Clone)]
pub struct SideConditionProjector {
    /// Orthonormal basis of the column space of `[1, c]`.
    basis: DMatrix<f64>,
}

impl SideConditionProjector {
    pub fn new(controls: &PointCloud) -> Result<Self> {
        let p = side_matrix(controls);
        let qr = p.qr();
        let r = qr.r();
        if (0..r.nrows().min(r.ncols())).any(|i| r[(i, i)].abs() < 1e-12) {
            return Err(Error::Singular("control points are not affinely independent".into()));
        }
        Ok(Self { basis: qr.q() })
    }

    /// `W ← W − Q Qᵀ W`.
    pub fn project(&self, w: &mut DMatrix<f64>) {
        let c = self.basis.transpose() * &*w;
        *w -= &self.basis * c;
    }

    /// Projects the `W` block of a flattened parameter vector in place.
    pub fn project_params(&self, dim: usize, params: &mut [f64]) {
        let off = dim * dim + dim;
        let m = self.basis.nrows();
        let mut w = DMatrix::from_row_slice(m, dim, &params[off..]);
        self.project(&mut w);
        for i in 0..m {
            for j in 0..dim {
                params[off + i * dim + j] = w[(i, j)];
            }
        }
    }

    /// Orthonormal basis of the side-condition subspace, `m × (m − d − 1)`.
    fn null_basis(&self) -> DMatrix<f64> {
        let m = self.basis.nrows();
        let proj = DMatrix::identity(m, m) - &self.basis * self.basis.transpose();
        let eig = SymmetricEigen::new(proj);
        let cols: Vec<DVector<f64>> = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.5)
            .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }
}

/// Smooth parametric map `R^d → R^d`: affine part plus radial corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    dim: usize,
    kernel: RadialKernel,
    controls: Option<PointCloud>,
    affine: DMatrix<f64>,
    translation: DVector<f64>,
    weights: DMatrix<f64>,
}

impl TpsTransform {
    /// Pure affine map without control points.
    pub fn affine(affine: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let d = translation.len();
        if d == 0 || affine.nrows() != d || affine.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: affine.nrows(),
            });
        }
        Ok(Self {
            dim: d,
            kernel: RadialKernel::for_dim(d),
            controls: None,
            affine,
            translation,
            weights: DMatrix::zeros(0, d),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::affine(DMatrix::identity(dim, dim), DVector::zeros(dim))
            .expect("identity dimensions are consistent")
    }

    /// Identity map carrying the given control points (zero kernel weights).
    pub fn identity_with_controls(controls: PointCloud) -> Result<Self> {
        let d = controls.dim();
        let m = controls.len();
        Self::new(
            RadialKernel::for_dim(d),
            controls,
            DMatrix::identity(d, d),
            DVector::zeros(d),
            DMatrix::zeros(m, d),
        )
    }

    pub fn new(
        kernel: RadialKernel,
        controls: PointCloud,
        affine: DMatrix<f64>,
        translation: DVector<f64>,
        weights: DMatrix<f64>,
    ) -> Result<Self> {
        let d = controls.dim();
        let m = controls.len();
        check_dim(d, translation.len())?;
        check_dim(d, affine.nrows())?;
        check_dim(d, affine.ncols())?;
        check_dim(m, weights.nrows())?;
        check_dim(d, weights.ncols())?;
        if m < d + 1 || !affinely_independent(&controls) {
            return Err(Error::Singular(format!(
                "need at least {} affinely independent control points",
                d + 1
            )));
        }
        let t = Self {
            dim: d,
            kernel,
            controls: Some(controls),
            affine,
            translation,
            weights,
        };
        t.check_side_conditions()?;
        Ok(t)
    }

    fn check_side_conditions(&self) -> Result<()> {
        let Some(c) = &self.controls else { return Ok(()) };
        let resid = side_matrix(c).transpose() * &self.weights;
        let scale = self.weights.amax().max(1.0);
        if resid.amax() > 1e-8 * scale * c.len() as f64 {
            return Err(Error::Domain(format!(
                "kernel weights violate the side conditions (residual {:e})",
                resid.amax()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> RadialKernel {
        self.kernel
    }

    pub fn controls(&self) -> Option<&PointCloud> {
        self.controls.as_ref()
    }

    pub fn n_controls(&self) -> usize {
        self.weights.nrows()
    }

    pub fn affine_part(&self) -> &DMatrix<f64> {
        &self.affine
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_params(&self) -> usize {
        self.dim * self.dim + self.dim + self.n_controls() * self.dim
    }

    pub fn params(&self) -> Vec<f64> {
        let d = self.dim;
        let mut p = Vec::with_capacity(self.n_params());
        for i in 0..d {
            for j in 0..d {
                p.push(self.affine[(i, j)]);
            }
        }
        p.extend(self.translation.iter());
        for i in 0..self.n_controls() {
            for j in 0..d {
                p.push(self.weights[(i, j)]);
            }
        }
        p
    }

    /// Same controls and kernel, new parameters. Side conditions are not
    /// re-checked; use [`SideConditionProjector`] to enforce them.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_dim(self.n_params(), params.len())?;
        let d = self.dim;
        let m = self.n_controls();
        Ok(Self {
            dim: d,
            kernel: self.kernel,
            controls: self.controls.clone(),
            affine: DMatrix::from_row_slice(d, d, &params[..d * d]),
            translation: DVector::from_column_slice(&params[d * d..d * d + d]),
            weights: DMatrix::from_row_slice(m, d, &params[d * d + d..]),
        })
    }

    /// Radial features `U(‖x − c_m‖)` for every control.
    pub fn radial_features(&self, x: &[f64]) -> Vec<f64> {
        match &self.controls {
            Some(c) => c.iter().map(|cm| self.kernel.eval_sq(dist_sq(x, cm))).collect(),
            None => Vec::new(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let u = self.radial_features(x);
        Ok(self.apply_with_features(x, &u))
    }

    /// Evaluates `φ(x)` from precomputed radial features.
    pub fn apply_with_features(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (j, o) in out.iter_mut().enumerate() {
            let mut s = self.translation[j];
            for k in 0..d {
                s += self.affine[(j, k)] * x[k];
            }
            for (m, um) in u.iter().enumerate() {
                s += self.weights[(m, j)] * um;
            }
            *o = s;
        }
        out
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> Result<PointCloud> {
        check_dim(self.dim, cloud.dim())?;
        cloud.map(|p| {
            let u = self.radial_features(p);
            self.apply_with_features(p, &u)
        })
    }

    /// Exact parameter Jacobian of `φ(x)`.
    pub fn param_jacobian(&self, x: &[f64]) -> Result<ParamJacobian> {
        check_dim(self.dim, x.len())?;
        Ok(ParamJacobian {
            x: x.to_vec(),
            radial: self.radial_features(x),
        })
    }

    /// `trace(Wᵀ K W)` with `K[i,j] = U(‖c_i − c_j‖)`.
    pub fn bending_energy(&self) -> f64 {
        let Some(c) = &self.controls else { return 0.0 };
        let k = kernel_matrix(self.kernel, c);
        let kw = &k * &self.weights;
        self.weights.component_mul(&kw).sum()
    }

    /// Gradient of [`bending_energy`](Self::bending_energy) in flattened
    /// parameter layout: zero on `A, b`, `2 K W` on the weights.
    pub fn bending_energy_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        let Some(c) = &self.controls else { return g };
        let kw = kernel_matrix(self.kernel, c) * &self.weights;
        let off = self.dim * self.dim + self.dim;
        for i in 0..self.n_controls() {
            for j in 0..self.dim {
                g[off + i * self.dim + j] = 2.0 * kw[(i, j)];
            }
        }
        g
    }

    /// Projector for these control points, if any.
    pub fn projector(&self) -> Result<Option<SideConditionProjector>> {
        self.controls
            .as_ref()
            .map(SideConditionProjector::new)
            .transpose()
    }

    pub fn to_record(&self) -> String {
        self.to_record_with(&BTreeMap::new())
    }

    /// Serialises as `key = value` lines; `extras` are appended verbatim.
    pub fn to_record_with(&self, extras: &BTreeMap<String, String>) -> String {
        let f = |v: &f64| format!("{v:.16e}");
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| f(&v)).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::from("# thin-plate spline transform\n");
        let _ = writeln!(out, "format = tps-v1");
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "kernel = {}", self.kernel);
        let _ = writeln!(out, "n_controls = {}", self.n_controls());
        if let Some(c) = &self.controls {
            for p in c.iter() {
                let _ = writeln!(out, "control = {}", join(&mut p.iter().copied()));
            }
        }
        let d = self.dim;
        let _ = writeln!(
            out,
            "affine = {}",
            join(&mut (0..d * d).map(|i| self.affine[(i / d, i % d)]))
        );
        let _ = writeln!(out, "translation = {}", join(&mut self.translation.iter().copied()));
        for i in 0..self.n_controls() {
            let _ = writeln!(out, "weight = {}", join(&mut (0..d).map(|j| self.weights[(i, j)])));
        }
        for (k, v) in extras {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        Self::parse_record(text).map(|(t, _)| t)
    }

    /// Parses a record, returning unrecognised keys separately.
    pub fn parse_record(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let mut dim = None;
        let mut kernel = None;
        let mut n_controls = None;
        let mut controls = Vec::new();
        let mut affine = None;
        let mut translation = None;
        let mut weights = Vec::new();
        let mut extras = BTreeMap::new();
        let nums = |v: &str, line: usize| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("line {line}: {e}")))
                })
                .collect()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "format" if v == "tps-v1" => {}
                "format" => return Err(Error::Config(format!("unsupported format `{v}`"))),
                "dim" => {
                    dim = Some(v.parse::<usize>().map_err(|e| Error::Config(e.to_string()))?)
                }
                "kernel" => kernel = Some(v.parse::<RadialKernel>()?),
                "n_controls" => {
                    n_controls =
                        Some(v.parse::<usize>().map_err(|e| Error::Config(e.to_string()))?)
                }
                "control" => controls.extend(nums(v, i + 1)?),
                "affine" => affine = Some(nums(v, i + 1)?),
                "translation" => translation = Some(nums(v, i + 1)?),
                "weight" => weights.extend(nums(v, i + 1)?),
                _ => {
                    extras.insert(k.to_string(), v.to_string());
                }
            }
        }
        let missing = |what: &str| Error::Config(format!("transform record lacks `{what}`"));
        let d = dim.ok_or_else(|| missing("dim"))?;
        let m = n_controls.ok_or_else(|| missing("n_controls"))?;
        let affine = affine.ok_or_else(|| missing("affine"))?;
        let translation = translation.ok_or_else(|| missing("translation"))?;
        if affine.len() != d * d || translation.len() != d || controls.len() != m * d || weights.len() != m * d {
            return Err(Error::Config("transform record has inconsistent sizes".into()));
        }
        let a = DMatrix::from_row_slice(d, d, &affine);
        let b = DVector::from_vec(translation);
        let t = if m == 0 {
            let mut t = Self::affine(a, b)?;
            if let Some(k) = kernel {
                t.kernel = k;
            }
            t
        } else {
            Self::new(
                kernel.unwrap_or_else(|| RadialKernel::for_dim(d)),
                PointCloud::from_flat(d, controls)?,
                a,
                b,
                DMatrix::from_row_slice(m, d, &weights),
            )?
        };
        Ok((t, extras))
    }
}

/// `∂φ(x)/∂(A, b, W)`: output `j` depends on `A[j,:]`, `b[j]` and `W[:,j]`
/// through the features `[x, 1, U(‖x − c_m‖)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamJacobian {
    pub x: Vec<f64>,
    pub radial: Vec<f64>,
}

impl ParamJacobian {
    /// Output perturbation caused by a parameter perturbation.
    pub fn forward(&self, delta: &[f64]) -> Vec<f64> {
        let d = self.x.len();
        let off = d * d + d;
        (0..d)
            .map(|j| {
                let mut s = delta[d * d + j];
                for k in 0..d {
                    s += delta[j * d + k] * self.x[k];
                }
                for (m, u) in self.radial.iter().enumerate() {
                    s += delta[off + m * d + j] * u;
                }
                s
            })
            .collect()
    }

    /// Accumulates `Jᵀ g` into `grad`.
    pub fn pullback(&self, g: &[f64], grad: &mut [f64]) {
        pullback_into(&self.x, &self.radial, g, grad);
    }
}

#[inline]
pub(crate) fn pullback_into(x: &[f64], radial: &[f64], g: &[f64], grad: &mut [f64]) {
    let d = x.len();
    let off = d * d + d;
    for j in 0..d {
        let gj = g[j];
        if gj == 0.0 {
            continue;
        }
        for k in 0..d {
            grad[j * d + k] += gj * x[k];
        }
        grad[d * d + j] += gj;
        for (m, u) in radial.iter().enumerate() {
            grad[off + m * d + j] += gj * u;
        }
    }
}

fn check_landmarks(sources: &PointCloud, targets: &PointCloud) -> Result<()> {
    check_dim(sources.dim(), targets.dim())?;
    if sources.len() != targets.len() {
        return Err(Error::Usage(format!(
            "landmark counts differ: {} sources, {} targets",
            sources.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Fits a spline with control points at the sources, minimising squared
/// landmark error plus `ridge` times the bending energy. `ridge = 0`
/// interpolates.
pub fn tps_fit_landmarks(sources: &PointCloud, targets: &PointCloud, ridge: f64) -> Result<TpsTransform> {
    check_landmarks(sources, targets)?;
    if !(ridge >= 0.0) {
        return Err(Error::Domain(format!("ridge must be nonnegative, got {ridge}")));
    }
    let d = sources.dim();
    let n = sources.len();
    if n < d + 1 || !affinely_independent(sources) {
        return Err(Error::Singular(format!(
            "need at least {} affinely independent landmarks",
            d + 1
        )));
    }
    let kernel = RadialKernel::for_dim(d);
    let k = kernel_matrix(kernel, sources);
    let p = side_matrix(sources);
    let size = n + d + 1;
    let mut sys = DMatrix::zeros(size, size);
    sys.view_mut((0, 0), (n, n)).copy_from(&k);
    for i in 0..n {
        sys[(i, i)] += ridge;
    }
    sys.view_mut((0, n), (n, d + 1)).copy_from(&p);
    sys.view_mut((n, 0), (d + 1, n)).copy_from(&p.transpose());
    let mut rhs = DMatrix::zeros(size, d);
    for i in 0..n {
        for j in 0..d {
            rhs[(i, j)] = targets.point(i)[j];
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("landmark system is singular".into()))?;
    let mut w = sol.rows(0, n).into_owned();
    let tail = sol.rows(n, d + 1);
    let b = DVector::from_iterator(d, (0..d).map(|j| tail[(0, j)]));
    let a = DMatrix::from_fn(d, d, |j, kk| tail[(1 + kk, j)]);
    // clean rounding drift from the side conditions
    SideConditionProjector::new(sources)?.project(&mut w);
    TpsTransform::new(kernel, sources.clone(), a, b, w)
}

/// Least-squares spline on fixed `controls` fitted to landmark pairs:
/// minimises `(1/K) Σ ‖φ(x_k) − y_k‖² + ridge · trace(Wᵀ K W)` over the
/// side-condition subspace.
pub fn tps_fit_on_controls(
    controls: &PointCloud,
    sources: &PointCloud,
    targets: &PointCloud,
    ridge: f64,
) -> Result<TpsTransform> {
    check_landmarks(sources, targets)?;
    check_dim(controls.dim(), sources.dim())?;
    if !(ridge > 0.0) {
        return Err(Error::Domain("regression fit needs a positive ridge".into()));
    }
    let d = sources.dim();
    if sources.len() < d + 1 || !affinely_independent(sources) {
        return Err(Error::Singular(format!(
            "need at least {} affinely independent landmarks",
            d + 1
        )));
    }
    let base = TpsTransform::identity_with_controls(controls.clone())?;
    let proj = SideConditionProjector::new(controls)?;
    let null = proj.null_basis();
    let q = null.ncols();
    let nf = q + d + 1;
    let kn = sources.len();
    let mut f = DMatrix::zeros(kn, nf);
    let mut y = DMatrix::zeros(kn, d);
    for (r, (x, t)) in sources.iter().zip(targets.iter()).enumerate() {
        let u = DVector::from_vec(base.radial_features(x));
        let un = null.transpose() * u;
        for c in 0..q {
            f[(r, c)] = un[c];
        }
        f[(r, q)] = 1.0;
        for c in 0..d {
            f[(r, q + 1 + c)] = x[c];
            y[(r, c)] = t[c];
        }
    }
    let inv_n = 1.0 / kn as f64;
    let mut lhs = f.transpose() * &f * inv_n;
    let kmat = kernel_matrix(base.kernel, controls);
    let bend = null.transpose() * kmat * &null;
    for i in 0..q {
        for j in 0..q {
            lhs[(i, j)] += ridge * bend[(i, j)];
        }
        lhs[(i, i)] += 1e-12;
    }
    let rhs = f.transpose() * y * inv_n;
    let sol = lhs
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("regression system is singular".into()))?;
    let mut w = &null * sol.rows(0, q);
    proj.project(&mut w);
    let b = DVector::from_iterator(d, (0..d).map(|j| sol[(q, j)]));
    let a = DMatrix::from_fn(d, d, |j, k| sol[(q + 1 + k, j)]);
    TpsTransform::new(base.kernel, controls.clone(), a, b, w)
}

/// Weights and feasible box for the range and smoothness penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyParams {
    pub lambda2: f64,
    pub lambda3: f64,
    pub range_lo: Vec<f64>,
    pub range_hi: Vec<f64>,
}

impl PenaltyParams {
    pub fn new(dim: usize, lambda2: f64, lambda3: f64) -> Result<Self> {
        Self::with_box(lambda2, lambda3, vec![0.0; dim], vec![1.0; dim])
    }

    pub fn with_box(lambda2: f64, lambda3: f64, range_lo: Vec<f64>, range_hi: Vec<f64>) -> Result<Self> {
        if !(lambda2 >= 0.0 && lambda3 >= 0.0) {
            return Err(Error::Domain("penalty weights must be nonnegative".into()));
        }
        check_dim(range_lo.len(), range_hi.len())?;
        if range_lo.iter().zip(&range_hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Domain("range bounds need lo < hi in every dimension".into()));
        }
        Ok(Self {
            lambda2,
            lambda3,
            range_lo,
            range_hi,
        })
    }

    pub fn dim(&self) -> usize {
        self.range_lo.len()
    }
}

#[inline]
fn hinge(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        v - lo
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Mean over points of the squared distance outside the feasible box.
pub fn range_penalty(points: &PointCloud, p: &PenaltyParams) -> Result<f64> {
    check_dim(p.dim(), points.dim())?;
    let s: f64 = points
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(k, v)| hinge(*v, p.range_lo[k], p.range_hi[k]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(s / points.len() as f64)
}

/// Gradient of [`range_penalty`] w.r.t. every coordinate, row-major.
pub fn range_penalty_gradient(points: &PointCloud, p: &PenaltyParams) -> Result<Vec<f64>> {
    check_dim(p.dim(), points.dim())?;
    let scale = 2.0 / points.len() as f64;
    let d = points.dim();
    Ok(points
        .as_flat()
        .iter()
        .enumerate()
        .map(|(i, v)| scale * hinge(*v, p.range_lo[i % d], p.range_hi[i % d]))
        .collect())
}
