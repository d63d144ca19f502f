//! Coarse-to-fine minimisation of the objective over spline parameters.
//!
//! Each annealing stage runs limited-memory BFGS with an Armijo backtracking
//! line search, so totals never increase within a stage. Gradients are
//! projected onto the side-condition subspace before every step.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use crate::cost::{CostBreakdown, CostConfig, CostProblem, BREAKDOWN_FIELDS};
use crate::density::{CorrespondenceSet, PointCloud};
use crate::error::{check_dim, Error, Result};
use crate::transform::{default_controls, grid_controls, tps_fit_on_controls, PenaltyParams, TpsTransform};

/// Optimiser and annealing settings. Defaults are engineering choices for
/// data normalised to the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub anneal_factor: f64,
    pub initial_h: f64,
    pub inner_iters: usize,
    pub grad_tol: f64,
    /// Stop a stage once the relative decrease of one step falls below this.
    pub rel_tol: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub history: usize,
    /// Scale `h_c` along with `h` across stages.
    pub anneal_hc: bool,
    /// Control points per axis; `None` picks the dimension default.
    pub controls_per_axis: Option<usize>,
    pub warm_start_ridge: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 4,
            anneal_factor: 0.5,
            initial_h: 0.5,
            inner_iters: 200,
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 50,
            history: 8,
            anneal_hc: false,
            controls_per_axis: None,
            warm_start_ridge: 1e-4,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return bad("anneal_factor must lie in (0, 1)");
        }
        if self.max_outer == 0 || self.inner_iters == 0 || self.max_backtracks == 0 || self.history == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.initial_h > 0.0 && self.grad_tol > 0.0 && self.rel_tol > 0.0 && self.warm_start_ridge > 0.0) {
            return bad("bandwidths and tolerances must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return bad("sufficient_decrease must lie in (0, 1)");
        }
        if matches!(self.controls_per_axis, Some(g) if g < 2) {
            return bad("need at least 2 controls per axis");
        }
        Ok(())
    }
}

/// `initial_h · anneal_factor^s` for `s = 0..max_outer`.
pub fn anneal_schedule(cfg: &SolverConfig) -> Vec<f64> {
    (0..cfg.max_outer)
        .map(|s| cfg.initial_h * cfg.anneal_factor.powi(s as i32))
        .collect()
}

/// One row of the optimisation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub stage: usize,
    pub iterate: usize,
    pub step: f64,
    pub h: f64,
    pub terms: [f64; 8],
    pub mass: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartKind {
    Identity,
    WarmStart,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub transform: TpsTransform,
    pub trace: Vec<TraceRecord>,
    /// Index into `trace` of the first record of each stage.
    pub stage_starts: Vec<usize>,
    /// Whether the final stage stopped on a tolerance rather than the
    /// iteration cap.
    pub converged: bool,
    pub start: StartKind,
    /// Cost of the starting transform under the first stage's bandwidths.
    pub initial_cost: f64,
    pub final_breakdown: CostBreakdown,
    pub wall_time_secs: f64,
}

pub const TRACE_HEADER: &str = "stage,iterate,step,h,t0,t1,t2,t3,t4,t5,combined,total,mass,grad_norm";

impl SolveReport {
    /// CSV with a fixed column order, 17 significant digits.
    pub fn trace_csv(&self) -> String {
        debug_assert_eq!(BREAKDOWN_FIELDS.len(), 8);
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.trace {
            let _ = write!(s, "{},{},{:.16e},{:.16e}", r.stage, r.iterate, r.step, r.h);
            for v in r.terms {
                let _ = write!(s, ",{v:.16e}");
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", r.mass, r.grad_norm);
        }
        s
    }

    /// Trace rows belonging to stage `s`.
    pub fn stage(&self, s: usize) -> &[TraceRecord] {
        let lo = self.stage_starts[s];
        let hi = self.stage_starts.get(s + 1).copied().unwrap_or(self.trace.len());
        &self.trace[lo..hi]
    }
}

/// Root-mean-square of `‖φ(x_k) − y_k‖` over the pairs.
pub fn evaluate_fit(transform: &TpsTransform, pairs: &CorrespondenceSet) -> Result<f64> {
    check_dim(pairs.dim(), transform.dim())?;
    if pairs.is_empty() {
        return Err(Error::Usage("fit evaluation needs at least one pair".into()));
    }
    let mut s = 0.0;
    for (y, x) in pairs.pairs() {
        let p = transform.apply(x)?;
        s += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((s / pairs.len() as f64).sqrt())
}

/// Per-stage bandwidths: the schedule, floored at the configured `h`, with
/// `h̃` (and optionally `h_c`) scaled by the same ratio.
fn stage_configs(base: &CostConfig, cfg: &SolverConfig) -> Vec<(f64, CostConfig)> {
    let h_final = base.h_sq.sqrt();
    anneal_schedule(cfg)
        .into_iter()
        .map(|hs| {
            let h = hs.max(h_final);
            let r2 = if h_final > 0.0 { (h / h_final).powi(2) } else { 1.0 };
            let mut c = base.clone();
            c.h_sq = h * h;
            c.h_tilde_sq = base.h_tilde_sq * r2;
            if cfg.anneal_hc {
                c.hc_sq = base.hc_sq * r2;
            }
            (h, c)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(b: &CostBreakdown, stage: usize, iterate: usize) -> Result<()> {
    if !b.total.is_finite() {
        return Err(Error::Numerical {
            stage,
            iterate,
            reason: format!("non-finite cost {}", b.total),
        });
    }
    if b.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            stage,
            iterate,
            reason: "non-finite gradient".into(),
        });
    }
    Ok(())
}

struct Evaluator<'a> {
    problem: CostProblem,
    template: &'a TpsTransform,
    dim: usize,
}

impl Evaluator<'_> {
    fn eval(&self, params: &[f64]) -> Result<(TpsTransform, CostBreakdown)> {
        let t = self.template.with_params(params)?;
        let mut b = self.problem.evaluate(&t)?;
        if let Some(p) = t.projector()? {
            p.project_params(self.dim, &mut b.gradient);
        }
        Ok((t, b))
    }
}

/// Minimises the objective starting from the identity, or from a ridge
/// landmark fit when correspondences are available and it starts lower.
pub fn solve(
    target: &PointCloud,
    source: &PointCloud,
    pairs: Option<&CorrespondenceSet>,
    cost: &CostConfig,
    penalties: &PenaltyParams,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let clock = Instant::now();
    cfg.validate()?;
    cost.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Usage("target and source must be non-empty".into()));
    }
    let d = target.dim();
    check_dim(d, source.dim())?;
    let controls = match cfg.controls_per_axis {
        Some(g) => grid_controls(d, g)?,
        None => default_controls(d)?,
    };
    let identity = TpsTransform::identity_with_controls(controls.clone())?;
    let stages = stage_configs(cost, cfg);
    let base_problem = CostProblem::new(
        target.clone(),
        source.clone(),
        pairs.cloned(),
        &identity,
        stages[0].1.clone(),
        penalties.clone(),
    )?;

    let mut start = StartKind::Identity;
    let mut params = identity.params();
    let mut initial_cost = base_problem.evaluate(&identity)?.total;
    if let Some(p) = pairs {
        if let Ok(w) = tps_fit_on_controls(&controls, p.sources(), p.targets(), cfg.warm_start_ridge) {
            if let Ok(b) = base_problem.evaluate(&w) {
                if b.total.is_finite() && b.total <= initial_cost {
                    initial_cost = b.total;
                    params = w.params();
                    start = StartKind::WarmStart;
                }
            }
        }
    }

    let mut trace = Vec::new();
    let mut stage_starts = Vec::new();
    let mut converged = false;
    let mut last = None;
    for (s, (h, stage_cost)) in stages.iter().enumerate() {
        let ev = Evaluator {
            problem: base_problem.with_config(stage_cost.clone())?,
            template: &identity,
            dim: d,
        };
        stage_starts.push(trace.len());
        let (p, t, b, conv) = run_stage(&ev, params, s, *h, cfg, &mut trace)?;
        params = p;
        converged = conv;
        last = Some((t, b));
    }
    let (transform, final_breakdown) = last.expect("at least one stage");
    Ok(SolveReport {
        transform,
        trace,
        stage_starts,
        converged,
        start,
        initial_cost,
        final_breakdown,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    })
}

fn record(stage: usize, iterate: usize, step: f64, h: f64, b: &CostBreakdown) -> TraceRecord {
    TraceRecord {
        stage,
        iterate,
        step,
        h,
        terms: b.values(),
        mass: b.mass,
        grad_norm: b.gradient_norm(),
    }
}

type StageOutcome = (Vec<f64>, TpsTransform, CostBreakdown, bool);

fn run_stage(
    ev: &Evaluator<'_>,
    mut x: Vec<f64>,
    stage: usize,
    h: f64,
    cfg: &SolverConfig,
    trace: &mut Vec<TraceRecord>,
) -> Result<StageOutcome> {
    let (mut t, mut b) = ev.eval(&x)?;
    check_finite(&b, stage, 0)?;
    trace.push(record(stage, 0, 0.0, h, &b));
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for it in 1..=cfg.inner_iters {
        let g = &b.gradient;
        let gnorm = b.gradient_norm();
        if gnorm <= cfg.grad_tol {
            return Ok((x, t, b, true));
        }
        let mut dir = two_loop(g, &hist);
        let mut slope = dot(g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut alpha = if hist.is_empty() { (0.1 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, p)| a + alpha * p).collect();
            let (tt, bt) = ev.eval(&trial)?;
            if bt.total.is_finite() && bt.total <= b.total + cfg.sufficient_decrease * alpha * slope {
                check_finite(&bt, stage, it)?;
                accepted = Some((trial, tt, bt));
                break;
            }
            alpha *= cfg.shrink;
        }
        let Some((xn, tn, bn)) = accepted else {
            // no descent left at machine resolution
            return Ok((x, t, b, true));
        };

        let sv: Vec<f64> = xn.iter().zip(&x).map(|(a, c)| a - c).collect();
        let yv: Vec<f64> = bn.gradient.iter().zip(&b.gradient).map(|(a, c)| a - c).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() {
            if hist.len() == cfg.history {
                hist.pop_front();
            }
            hist.push_back((sv, yv, 1.0 / sy));
        }
        let decrease = b.total - bn.total;
        trace.push(record(stage, it, alpha, h, &bn));
        x = xn;
        t = tn;
        b = bn;
        if decrease <= cfg.rel_tol * b.total.abs().max(1.0) {
            return Ok((x, t, b, true));
        }
    }
    Ok((x, t, b, false))
}

/// L-BFGS two-loop recursion giving `−H g`.
fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
