//! Point clouds, kernel density estimates and the joint transport-plan models.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::kernel::{dist_sq, log_normaliser, gauss_from_sq};

/// A non-empty set of points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("point dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::Usage("point cloud is empty".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("point cloud contains non-finite values".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Usage("point cloud is empty".into()))?;
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            check_dim(dim, p.as_ref().len())?;
            data.extend_from_slice(p.as_ref());
        }
        Self::from_flat(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// True when every coordinate lies in `[0, 1]`.
    pub fn in_unit_box(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Biased (1/n) sample covariance, row-major `d×d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for p in self.iter() {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (p[i] - m[i]) * (p[j] - m[j]);
                }
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|a| *a /= n);
        c
    }

    /// Applies `f` to every point.
    pub fn map<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<PointCloud> {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.iter() {
            let q = f(p);
            check_dim(self.dim, q.len())?;
            data.extend(q);
        }
        PointCloud::from_flat(self.dim, data)
    }

    pub fn translated(&self, t: &[f64]) -> Result<PointCloud> {
        check_dim(self.dim, t.len())?;
        self.map(|p| p.iter().zip(t).map(|(a, b)| a + b).collect())
    }
}

/// Paired samples `(y^(k), x^(k))`: a target point and the untransformed
/// source point that should map onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    targets: PointCloud,
    sources: PointCloud,
}

impl CorrespondenceSet {
    pub fn new(targets: PointCloud, sources: PointCloud) -> Result<Self> {
        check_dim(targets.dim(), sources.dim())?;
        if targets.len() != sources.len() {
            return Err(Error::Usage(format!(
                "correspondence sides differ in length: {} vs {}",
                targets.len(),
                sources.len()
            )));
        }
        Ok(Self { targets, sources })
    }

    pub fn dim(&self) -> usize {
        self.targets.dim()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &PointCloud {
        &self.targets
    }

    pub fn sources(&self) -> &PointCloud {
        &self.sources
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.targets.iter().zip(self.sources.iter())
    }

    /// Replaces each source point by `f(x)`, keeping the targets.
    pub fn map_sources<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        Self::new(self.targets.clone(), self.sources.map(f)?)
    }
}

/// Uniform-weight isotropic Gaussian mixture centred on a point cloud.
///
/// `bandwidth_sq == 0` is the empirical (Dirac) measure: moments are defined
/// but pointwise density evaluation is not.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    support: PointCloud,
    bandwidth_sq: f64,
}

impl KdeModel {
    pub fn new(support: PointCloud, bandwidth_sq: f64) -> Result<Self> {
        if !(bandwidth_sq >= 0.0) || !bandwidth_sq.is_finite() {
            return Err(Error::Domain(format!(
                "squared bandwidth must be nonnegative, got {bandwidth_sq}"
            )));
        }
        Ok(Self {
            support,
            bandwidth_sq,
        })
    }

    pub fn support(&self) -> &PointCloud {
        &self.support
    }

    pub fn bandwidth_sq(&self) -> f64 {
        self.bandwidth_sq
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn is_dirac(&self) -> bool {
        self.bandwidth_sq == 0.0
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        if self.is_dirac() {
            return Err(Error::Domain(
                "density of a Dirac mixture is undefined; use the moment or convolution APIs"
                    .into(),
            ));
        }
        let ln = log_normaliser(self.dim(), self.bandwidth_sq);
        let s: f64 = self
            .support
            .iter()
            .map(|c| gauss_from_sq(dist_sq(y, c), ln, self.bandwidth_sq))
            .sum();
        Ok(s / self.support.len() as f64)
    }

    pub fn mean(&self) -> Vec<f64> {
        self.support.mean()
    }

    /// Mixture covariance: empirical covariance plus `h²I`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let mut c = self.support.covariance();
        if self.bandwidth_sq > 0.0 {
            for i in 0..d {
                c[i * d + i] += self.bandwidth_sq;
            }
        }
        c
    }
}

/// Joint density over `(y, ỹ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum JointModel {
    /// `γ_u = μ_u(y) · μ̃_u(ỹ)`.
    Unsupervised {
        target: KdeModel,
        transformed_source: KdeModel,
    },
    /// `γ_s = (1/K) Σ_k N(y; y^(k), h²I) N(ỹ; ỹ^(k), h̃²I)`; the source side of
    /// `pairs` holds the already transformed points `ỹ^(k) = φ(x^(k))`.
    Supervised {
        pairs: CorrespondenceSet,
        h_sq: f64,
        h_tilde_sq: f64,
    },
    /// `γ_{s+u} = (1 − λ) γ_u + λ γ_s`.
    SemiSupervised {
        unsupervised: Box<JointModel>,
        supervised: Box<JointModel>,
        lambda: f64,
    },
}

impl JointModel {
    pub fn semi_supervised(unsupervised: JointModel, supervised: JointModel, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if !matches!(unsupervised, JointModel::Unsupervised { .. }) {
            return Err(Error::Usage("first component must be unsupervised".into()));
        }
        if !matches!(supervised, JointModel::Supervised { .. }) {
            return Err(Error::Usage("second component must be supervised".into()));
        }
        Ok(JointModel::SemiSupervised {
            unsupervised: Box::new(unsupervised),
            supervised: Box::new(supervised),
            lambda,
        })
    }

    pub fn eval(&self, y: &[f64], y_tilde: &[f64]) -> Result<f64> {
        match self {
            JointModel::Unsupervised {
                target,
                transformed_source,
            } => Ok(target.eval(y)? * transformed_source.eval(y_tilde)?),
            JointModel::Supervised {
                pairs,
                h_sq,
                h_tilde_sq,
            } => {
                check_dim(pairs.dim(), y.len())?;
                check_dim(pairs.dim(), y_tilde.len())?;
                if !(*h_sq > 0.0 && *h_tilde_sq > 0.0) {
                    return Err(Error::Domain(
                        "joint density with Dirac kernels is undefined".into(),
                    ));
                }
                if pairs.is_empty() {
                    return Ok(0.0);
                }
                let d = pairs.dim();
                let (l1, l2) = (log_normaliser(d, *h_sq), log_normaliser(d, *h_tilde_sq));
                let s: f64 = pairs
                    .pairs()
                    .map(|(yk, ytk)| {
                        gauss_from_sq(dist_sq(y, yk), l1, *h_sq)
                            * gauss_from_sq(dist_sq(y_tilde, ytk), l2, *h_tilde_sq)
                    })
                    .sum();
                Ok(s / pairs.len() as f64)
            }
            JointModel::SemiSupervised {
                unsupervised,
                supervised,
                lambda,
            } => Ok((1.0 - lambda) * unsupervised.eval(y, y_tilde)?
                + lambda * supervised.eval(y, y_tilde)?),
        }
    }
}

/// Per-dimension affine map into the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalisation {
    pub lo: Vec<f64>,
    pub scale: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Normalisation {
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(k, v)| {
                if self.degenerate[k] {
                    0.5
                } else {
                    (v - self.lo[k]) / self.scale[k]
                }
            })
            .collect()
    }

    pub fn invert(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(k, u)| {
                if self.degenerate[k] {
                    self.lo[k]
                } else {
                    self.lo[k] + u * self.scale[k]
                }
            })
            .collect()
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> Result<PointCloud> {
        check_dim(self.lo.len(), cloud.dim())?;
        cloud.map(|p| self.invert(p))
    }
}

/// Maps each coordinate affinely onto `[0, 1]`. A constant coordinate maps
/// to 0.5 and is flagged as degenerate.
pub fn normalize_cloud(raw: &PointCloud) -> Result<(PointCloud, Normalisation)> {
    let d = raw.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in raw.iter() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let degenerate: Vec<bool> = lo.iter().zip(&hi).map(|(a, b)| b <= a).collect();
    let scale = lo
        .iter()
        .zip(&hi)
        .zip(&degenerate)
        .map(|((a, b), &dg)| if dg { 0.0 } else { b - a })
        .collect();
    let norm = Normalisation {
        lo,
        scale,
        degenerate,
    };
    let cloud = raw.map(|p| norm.apply(p))?;
    Ok((cloud, norm))
}

/// Uniform sample without replacement of at most `max_n` points, keeping
/// input order. Deterministic for a given seed.
pub fn subsample(cloud: &PointCloud, max_n: usize, seed: u64) -> PointCloud {
    let n = cloud.len();
    if n <= max_n.max(1) {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, max_n.max(1)).into_vec();
    idx.sort_unstable();
    let mut data = Vec::with_capacity(idx.len() * cloud.dim());
    for i in idx {
        data.extend_from_slice(cloud.point(i));
    }
    PointCloud {
        dim: cloud.dim(),
        data,
    }
}

fn parse_rows(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                rows.push(v);
                lines.push(line);
            }
            // an unparseable first record is a header
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("invalid number: {e}"),
                })
            }
        }
    }
    Ok((rows, lines))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

fn rows_to_flat(path: &Path, rows: &[Vec<f64>], lines: &[u64], width: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (r, line) in rows.iter().zip(lines) {
        if r.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                reason: format!("expected {width} columns, found {}", r.len()),
            });
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                reason: format!("non-finite value {v}"),
            });
        }
        flat.extend_from_slice(r);
    }
    Ok(flat)
}

/// Reads a point cloud: one point per row, `d` columns, optional header.
pub fn read_point_csv(path: &Path) -> Result<PointCloud> {
    let (rows, lines) = parse_rows(path)?;
    let width = rows.first().map(Vec::len).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: "no data rows".into(),
    })?;
    let flat = rows_to_flat(path, &rows, &lines, width)?;
    PointCloud::from_flat(width, flat)
}

/// Reads correspondences: `2d` columns per row, the target `y` first and the
/// source `x` second.
pub fn read_correspondence_csv(path: &Path) -> Result<CorrespondenceSet> {
    let (rows, lines) = parse_rows(path)?;
    let width = rows.first().map(Vec::len).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: "no data rows".into(),
    })?;
    if width % 2 != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lines[0],
            reason: format!("correspondence rows need an even column count, found {width}"),
        });
    }
    let flat = rows_to_flat(path, &rows, &lines, width)?;
    let d = width / 2;
    let mut t = Vec::with_capacity(flat.len() / 2);
    let mut s = Vec::with_capacity(flat.len() / 2);
    for row in flat.chunks_exact(width) {
        t.extend_from_slice(&row[..d]);
        s.extend_from_slice(&row[d..]);
    }
    CorrespondenceSet::new(PointCloud::from_flat(d, t)?, PointCloud::from_flat(d, s)?)
}

pub fn write_point_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for p in cloud.iter() {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
