//! End-user workflows: colour transfer between PNG images, registration of
//! point files, cost inspection, plus run settings and manifests.
//!
//! Colour convention: the spline moves the colours of the image being
//! recoloured (the source cloud) onto the colours of the palette image (the
//! target cloud).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::{l2_divergence, CostBreakdown, CostConfig, CostProblem};
use crate::density::{read_correspondence_csv, subsample, CorrespondenceSet, KdeModel, Normalisation, PointCloud};
use crate::error::{check_dim, Error, Result};
use crate::solver::{evaluate_fit, solve, SolveReport, SolverConfig};
use crate::transform::{PenaltyParams, TpsTransform};

/// Bandwidth of the KDEs compared before and after a transfer.
pub const REPORT_BANDWIDTH: f64 = 0.05;

/// An RGB image with channels in `[0, 1]`, plus optional 8-bit alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<[f64; 3]>,
    alpha: Option<Vec<u8>>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain("image must have at least one pixel".into()));
        }
        check_dim(width as usize * height as usize, pixels.len())?;
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain("channels must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
            alpha: None,
        })
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        check_dim(width as usize * height as usize * 3, bytes.len())?;
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn with_alpha(mut self, alpha: Vec<u8>) -> Result<Self> {
        check_dim(self.pixels.len(), alpha.len())?;
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width(), img.height());
        if img.color().has_alpha() {
            let rgba = img.to_rgba8();
            let raw = rgba.as_raw();
            let rgb: Vec<u8> = raw.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
            let alpha = raw.chunks_exact(4).map(|p| p[3]).collect();
            Self::from_rgb8(w, h, &rgb)?.with_alpha(alpha)
        } else {
            Self::from_rgb8(w, h, img.to_rgb8().as_raw())
        }
    }

    /// Channels rounded to 8 bits.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let rgb = self.to_rgb8();
        let wrap = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        match &self.alpha {
            Some(a) => {
                let raw: Vec<u8> = rgb
                    .chunks_exact(3)
                    .zip(a)
                    .flat_map(|(c, &al)| [c[0], c[1], c[2], al])
                    .collect();
                image::RgbaImage::from_raw(self.width, self.height, raw)
                    .expect("buffer size checked at construction")
                    .save_with_format(path, image::ImageFormat::Png)
                    .map_err(wrap)
            }
            None => image::RgbImage::from_raw(self.width, self.height, rgb)
                .expect("buffer size checked at construction")
                .save_with_format(path, image::ImageFormat::Png)
                .map_err(wrap),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn alpha(&self) -> Option<&[u8]> {
        self.alpha.as_deref()
    }

    pub fn mean_colour(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.pixels {
            for k in 0..3 {
                m[k] += p[k];
            }
        }
        m.map(|v| v / self.pixels.len() as f64)
    }

    /// Mean over pixels and channels of `|a − b|`.
    pub fn mean_abs_deviation(&self, other: &ImageBuffer) -> Result<f64> {
        check_dim(self.pixels.len(), other.pixels.len())?;
        let s: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>())
            .sum();
        Ok(s / (3 * self.pixels.len()) as f64)
    }
}

/// One 3-D point per pixel, subsampled to at most `max_samples`.
pub fn image_to_cloud(img: &ImageBuffer, max_samples: usize, seed: u64) -> Result<PointCloud> {
    let full = PointCloud::from_flat(3, img.pixels.iter().flatten().copied().collect())?;
    Ok(subsample(&full, max_samples, seed))
}

/// Six-column colour pairs (target RGB, then source RGB). Values above 1
/// anywhere in the file switch the whole file to the 0–255 scale.
pub fn read_colour_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    let raw = read_correspondence_csv(path)?;
    if raw.dim() != 3 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("colour correspondences need 6 columns, found {}", 2 * raw.dim()),
        });
    }
    let max = raw
        .targets()
        .as_flat()
        .iter()
        .chain(raw.sources().as_flat())
        .fold(0.0f64, |a, &b| a.max(b));
    if max > 1.0 {
        let s = |c: &PointCloud| c.map(|p| p.iter().map(|v| v / 255.0).collect());
        CorrespondenceSet::new(s(raw.targets())?, s(raw.sources())?)
    } else {
        Ok(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Legacy,
    Combined,
}

/// Every tunable of a run, in the flat key-value form used by config files
/// and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub mode: Mode,
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_tilde: Option<f64>,
    pub hc: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub include_t0: bool,
    pub include_t1: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free_mass: Option<bool>,
    pub max_samples: usize,
    pub seed: u64,
    #[serde(alias = "stages")]
    pub max_outer: usize,
    #[serde(alias = "anneal")]
    pub anneal_factor: f64,
    pub initial_h: f64,
    pub inner_iters: usize,
    pub grad_tol: f64,
    pub anneal_hc: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls_per_axis: Option<usize>,
}

impl Default for RunSettings {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            mode: Mode::Combined,
            h: 0.02,
            h_tilde: None,
            hc: 0.05,
            lambda: 0.0,
            lambda1: 0.0,
            lambda2: 0.1,
            lambda3: 1e-3,
            include_t0: false,
            include_t1: true,
            entropy_weight: None,
            free_mass: None,
            max_samples: 3000,
            seed: 0,
            max_outer: s.max_outer,
            anneal_factor: s.anneal_factor,
            initial_h: s.initial_h,
            inner_iters: s.inner_iters,
            grad_tol: s.grad_tol,
            anneal_hc: s.anneal_hc,
            controls_per_axis: s.controls_per_axis,
        }
    }
}

/// Keys a manifest carries besides the settings.
const MANIFEST_KEYS: [&str; 3] = ["command", "inputs", "outputs"];

impl RunSettings {
    /// Parses a settings file. Manifests are accepted too, so a run can be
    /// repeated from its own manifest.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for k in MANIFEST_KEYS {
            table.remove(k);
        }
        let s: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        s.cost_config()?;
        s.solver_config().validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings are plain data")
    }

    pub fn cost_config(&self) -> Result<CostConfig> {
        let mut c = match self.mode {
            Mode::Legacy => CostConfig::legacy(self.h, self.lambda1),
            Mode::Combined => CostConfig::combined(self.h, self.hc, self.lambda),
        };
        if let Some(ht) = self.h_tilde {
            c.h_tilde_sq = ht * ht;
        }
        if self.mode == Mode::Legacy && self.hc > 0.0 {
            c.hc_sq = self.hc * self.hc;
        }
        c.include_t0 = self.include_t0;
        c.include_t1 = self.include_t1;
        if let Some(w) = self.entropy_weight {
            c.entropy_weight = w;
        }
        if let Some(f) = self.free_mass {
            c.free_mass = f;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_outer: self.max_outer,
            anneal_factor: self.anneal_factor,
            initial_h: self.initial_h,
            inner_iters: self.inner_iters,
            grad_tol: self.grad_tol,
            anneal_hc: self.anneal_hc,
            controls_per_axis: self.controls_per_axis,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }

    /// Penalties on the unit box.
    pub fn penalties(&self, dim: usize) -> Result<PenaltyParams> {
        PenaltyParams::new(dim, self.lambda2, self.lambda3)
    }
}

/// Applies `t` to every distinct colour once, then paints every pixel;
/// results are clamped to `[0, 1]`.
pub fn recolour(img: &ImageBuffer, t: &TpsTransform) -> Result<ImageBuffer> {
    check_dim(3, t.dim())?;
    let key = |p: &[f64; 3]| p.map(f64::to_bits);
    let unique: Vec<[f64; 3]> = img
        .pixels
        .iter()
        .map(|p| (key(p), *p))
        .collect::<BTreeMap<_, _>>()
        .into_values()
        .collect();
    let mapped: Vec<[f64; 3]> = unique
        .par_iter()
        .map(|p| {
            let q = t.apply(p)?;
            Ok([q[0], q[1], q[2]].map(|c| if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) }))
        })
        .collect::<Result<_>>()?;
    let memo: HashMap<[u64; 3], [f64; 3]> = unique.iter().map(key).zip(mapped).collect();
    let pixels = img.pixels.par_iter().map(|p| memo[&key(p)]).collect();
    Ok(ImageBuffer {
        pixels,
        ..img.clone()
    })
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub image: ImageBuffer,
    pub report: SolveReport,
    /// L2 divergence between the palette cloud and the image's colours,
    /// before and after recolouring.
    pub l2_before: f64,
    pub l2_after: f64,
}

/// Recolours `image` towards the colours of `palette`.
pub fn transfer(
    image: &ImageBuffer,
    palette: &ImageBuffer,
    pairs: Option<&CorrespondenceSet>,
    settings: &RunSettings,
) -> Result<TransferOutcome> {
    let source = image_to_cloud(image, settings.max_samples, settings.seed)?;
    let target = image_to_cloud(palette, settings.max_samples, settings.seed)?;
    if let Some(p) = pairs {
        check_dim(3, p.dim())?;
    }
    let report = solve(
        &target,
        &source,
        pairs,
        &settings.cost_config()?,
        &settings.penalties(3)?,
        &settings.solver_config(),
    )?;
    let out = recolour(image, &report.transform)?;
    let after = image_to_cloud(&out, settings.max_samples, settings.seed)?;
    let v = REPORT_BANDWIDTH * REPORT_BANDWIDTH;
    let pal = KdeModel::new(target, v)?;
    let l2_before = l2_divergence(&pal, &KdeModel::new(source, v)?)?;
    let l2_after = l2_divergence(&pal, &KdeModel::new(after, v)?)?;
    Ok(TransferOutcome {
        image: out,
        report,
        l2_before,
        l2_after,
    })
}

/// One isotropic map sending the joint bounding box of `clouds` into the
/// unit box (the longest side to `[0, 1]`).
pub fn shared_normalisation(clouds: &[&PointCloud]) -> Result<Normalisation> {
    let d = clouds.first().map(|c| c.dim()).ok_or_else(|| Error::Usage("no clouds".into()))?;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for c in clouds {
        check_dim(d, c.dim())?;
        for p in c.iter() {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
    }
    let side = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let scale = if side > 0.0 && side.is_finite() { side } else { 1.0 };
    Ok(Normalisation {
        lo,
        scale: vec![scale; d],
        degenerate: vec![false; d],
    })
}

fn normalise_pairs(p: &CorrespondenceSet, n: &Normalisation) -> Result<CorrespondenceSet> {
    CorrespondenceSet::new(p.targets().map(|x| n.apply(x))?, p.sources().map(|x| n.apply(x))?)
}

/// A spline fitted in normalised coordinates together with its
/// normalisation.
#[derive(Debug, Clone)]
pub struct FittedMap {
    pub transform: TpsTransform,
    pub normalisation: Option<Normalisation>,
}

impl FittedMap {
    pub fn apply_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.normalisation {
            Some(n) => Ok(n.invert(&self.transform.apply(&n.apply(x))?)),
            None => self.transform.apply(x),
        }
    }

    /// Transform record with the normalisation stored as extra keys.
    pub fn to_record(&self) -> String {
        let mut extras = BTreeMap::new();
        if let Some(n) = &self.normalisation {
            let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
            extras.insert("norm_lo".to_string(), join(&n.lo));
            extras.insert("norm_scale".to_string(), join(&n.scale));
        }
        self.transform.to_record_with(&extras)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (transform, extras) = TpsTransform::parse_record(text)?;
        let nums = |k: &str| -> Result<Option<Vec<f64>>> {
            extras
                .get(k)
                .map(|s| {
                    s.split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("{k}: {e}"))))
                        .collect()
                })
                .transpose()
        };
        let normalisation = match (nums("norm_lo")?, nums("norm_scale")?) {
            (Some(lo), Some(scale)) => {
                check_dim(transform.dim(), lo.len())?;
                check_dim(transform.dim(), scale.len())?;
                let degenerate = vec![false; lo.len()];
                Some(Normalisation { lo, scale, degenerate })
            }
            (None, None) => None,
            _ => return Err(Error::Config("norm_lo and norm_scale must appear together".into())),
        };
        Ok(Self {
            transform,
            normalisation,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// RMSE of `‖φ(x) − y‖` over raw-coordinate pairs.
    pub fn rmse(&self, pairs: &CorrespondenceSet) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Usage("fit evaluation needs at least one pair".into()));
        }
        if self.normalisation.is_none() {
            return evaluate_fit(&self.transform, pairs);
        }
        let mut s = 0.0;
        for (y, x) in pairs.pairs() {
            let p = self.apply_raw(x)?;
            s += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok((s / pairs.len() as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct RegisterOutcome {
    pub map: FittedMap,
    pub report: SolveReport,
    /// RMSE over the supplied correspondences, in raw coordinates.
    pub rmse: Option<f64>,
}

/// Registers `source` onto `target` after a shared isotropic normalisation.
pub fn register(
    target: &PointCloud,
    source: &PointCloud,
    pairs: Option<&CorrespondenceSet>,
    settings: &RunSettings,
) -> Result<RegisterOutcome> {
    check_dim(target.dim(), source.dim())?;
    if let Some(p) = pairs {
        check_dim(target.dim(), p.dim())?;
    }
    let norm = shared_normalisation(&[target, source])?;
    let t = subsample(&target.map(|p| norm.apply(p))?, settings.max_samples, settings.seed);
    let s = subsample(&source.map(|p| norm.apply(p))?, settings.max_samples, settings.seed);
    let np = pairs.map(|p| normalise_pairs(p, &norm)).transpose()?;
    let report = solve(
        &t,
        &s,
        np.as_ref(),
        &settings.cost_config()?,
        &settings.penalties(target.dim())?,
        &settings.solver_config(),
    )?;
    let map = FittedMap {
        transform: report.transform.clone(),
        normalisation: Some(norm),
    };
    let rmse = pairs.map(|p| map.rmse(p)).transpose()?;
    Ok(RegisterOutcome { map, report, rmse })
}

/// Cost breakdown of `map` (identity when absent). Data are normalised
/// with the map's normalisation when it has one.
pub fn eval_cost(
    target: &PointCloud,
    source: &PointCloud,
    pairs: Option<&CorrespondenceSet>,
    map: Option<&FittedMap>,
    settings: &RunSettings,
) -> Result<CostBreakdown> {
    let d = target.dim();
    check_dim(d, source.dim())?;
    let identity;
    let (t, norm) = match map {
        Some(m) => (&m.transform, m.normalisation.as_ref()),
        None => {
            identity = TpsTransform::identity(d);
            (&identity, None)
        }
    };
    let (tc, sc, pc) = match norm {
        Some(n) => (
            target.map(|p| n.apply(p))?,
            source.map(|p| n.apply(p))?,
            pairs.map(|p| normalise_pairs(p, n)).transpose()?,
        ),
        None => (target.clone(), source.clone(), pairs.cloned()),
    };
    CostProblem::new(tc, sc, pc, t, settings.cost_config()?, settings.penalties(d)?)?.evaluate(t)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to repeat a run: the resolved settings, input paths
/// with content hashes, and the outputs written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    #[serde(flatten)]
    pub settings: RunSettings,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &RunSettings) -> Self {
        Self {
            command: command.to_string(),
            settings: settings.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is plain data")
    }

    /// Writes `<output>.manifest.toml` next to `output`.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.toml");
        let path = PathBuf::from(name);
        fs::write(&path, self.to_toml()).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
