//! Nonsmooth local optimization and the fixed-order synthesis driver.
//!
//! `minimize_nonsmooth` runs BFGS with a weak Wolfe line search and falls
//! back to gradient sampling once the line search fails or the iterates
//! stagnate. `synthesize` first drives the spectral abscissa below
//! `-margin` and then minimizes the H-infinity norm from the stabilized
//! point, over several seeded random starts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grad::{hinf_gradient_closed_loop, hinf_gradient_controller, ControllerGradient};
use crate::hinf::{hinf_norm, HinfOptions, HinfResult};
use crate::linalg::RMat;
use crate::model::{assemble_closed_loop, ControllerRealization, TimeDelayPlant};
use crate::stability::{abscissa_gradient, spectral_abscissa, StabilityReport};

/// Flat controller parameters: `AK`, then `BK`, then `CK`, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVector(pub Vec<f64>);

impl DecisionVector {
    pub fn len_for(nk: usize, ny: usize, nu: usize) -> usize {
        nk * nk + nk * ny + nu * nk
    }

    pub fn pack(k: &ControllerRealization) -> Self {
        let mut v = Vec::with_capacity(k.ak.len() + k.bk.len() + k.ck.len());
        for m in [&k.ak, &k.bk, &k.ck] {
            for r in 0..m.nrows() {
                v.extend(m.row(r).iter());
            }
        }
        Self(v)
    }

    pub fn unpack(&self, nk: usize, ny: usize, nu: usize) -> Result<ControllerRealization> {
        let want = Self::len_for(nk, ny, nu);
        if self.0.len() != want {
            return Err(Error::Dimension(format!(
                "decision vector has length {}, expected {want} for nK={nk}, ny={ny}, nu={nu}",
                self.0.len()
            )));
        }
        let (a, rest) = self.0.split_at(nk * nk);
        let (b, c) = rest.split_at(nk * ny);
        ControllerRealization::new(
            RMat::from_row_slice(nk, nk, a),
            RMat::from_row_slice(nk, ny, b),
            RMat::from_row_slice(nu, nk, c),
        )
    }

    fn from_gradient(g: &ControllerGradient) -> Vec<f64> {
        let k = ControllerRealization { ak: g.d_ak.clone(), bk: g.d_bk.clone(), ck: g.d_ck.clone() };
        Self::pack(&k).0
    }
}

/// One objective evaluation. A non-finite `value` marks an infeasible point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub smooth: bool,
}

impl Evaluation {
    pub fn infeasible(dim: usize) -> Self {
        Self { value: f64::INFINITY, gradient: vec![f64::NAN; dim], smooth: false }
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Bfgs,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerStatus {
    GradientSmall,
    LineSearchFail,
    MaxIter,
    SamplingConverged,
    TargetReached,
}

/// Weak Wolfe conditions at an accepted BFGS step, with the numbers needed to
/// re-check them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WolfeCertificate {
    pub f0: f64,
    pub slope0: f64,
    pub f_new: f64,
    pub slope_new: f64,
    pub t: f64,
    pub armijo: bool,
    pub curvature: bool,
}

impl WolfeCertificate {
    pub fn recheck(&self, c1: f64, c2: f64) -> bool {
        self.f_new <= self.f0 + c1 * self.t * self.slope0 && self.slope_new >= c2 * self.slope0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub gradient_norm: f64,
    /// Length of the accepted step, zero for the initial record.
    pub step: f64,
    pub phase: Phase,
    pub wolfe: Option<WolfeCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerTrace {
    pub records: Vec<IterationRecord>,
    pub status: OptimizerStatus,
    pub evaluations: usize,
}

impl OptimizerTrace {
    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Relative decrease below which BFGS counts as stagnated.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Gradient samples per sampling iteration; `None` means `2 dim + 1`.
    pub sample_count: Option<usize>,
    /// Sampling radii relative to `1 + ||x0||`.
    pub sampling_radii: Vec<f64>,
    pub max_sampling_iter: usize,
    pub sampling_tol: f64,
    /// Stop as soon as the objective drops below this value.
    pub target: Option<f64>,
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-10,
            f_tol: 1e-15,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 60,
            sample_count: None,
            sampling_radii: vec![1e-2, 1e-3, 1e-4],
            max_sampling_iter: 100,
            sampling_tol: 1e-8,
            target: None,
            seed: 0,
        }
    }
}

struct Counted<F> {
    f: F,
    count: usize,
}

impl<F: FnMut(&[f64]) -> Evaluation> Counted<F> {
    fn eval(&mut self, x: &DVector<f64>) -> Evaluation {
        self.count += 1;
        (self.f)(x.as_slice())
    }
}

enum LineSearch {
    Accepted { x: DVector<f64>, eval: Evaluation, cert: WolfeCertificate },
    Failed,
}

fn weak_wolfe<F: FnMut(&[f64]) -> Evaluation>(
    f: &mut Counted<F>,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
    opts: &OptimOptions,
) -> LineSearch {
    let slope0 = g0.dot(d);
    let (mut lo, mut hi, mut t) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..opts.max_line_search {
        let xt = x + d * t;
        let ev = f.eval(&xt);
        if !ev.is_finite() || ev.value > f0 + opts.c1 * t * slope0 {
            hi = t;
        } else {
            let slope = DVector::from_column_slice(&ev.gradient).dot(d);
            if slope < opts.c2 * slope0 {
                lo = t;
            } else {
                let cert = WolfeCertificate {
                    f0,
                    slope0,
                    f_new: ev.value,
                    slope_new: slope,
                    t,
                    armijo: true,
                    curvature: true,
                };
                return LineSearch::Accepted { x: xt, eval: ev, cert };
            }
        }
        t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo };
        if hi.is_finite() && hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
    }
    LineSearch::Failed
}

/// Minimum-norm point of the convex hull of the columns of `g`, by projected
/// gradient on the simplex.
fn min_norm_convex_combination(g: &DMatrix<f64>) -> DVector<f64> {
    let k = g.ncols();
    let q = g.transpose() * g;
    let lip = q.diagonal().sum().max(f64::MIN_POSITIVE);
    let mut lam = DVector::from_element(k, 1.0 / k as f64);
    for _ in 0..2000 {
        let grad = &q * &lam;
        let next = project_simplex(&(&lam - grad / lip));
        let change = (&next - &lam).amax();
        lam = next;
        if change <= 1e-15 {
            break;
        }
    }
    g * lam
}

fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = dir.norm().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir * (r / norm)
}

/// BFGS with weak Wolfe line search, then gradient sampling.
pub fn minimize_nonsmooth<F>(f: F, x0: &[f64], opts: &OptimOptions) -> Result<(Vec<f64>, OptimizerTrace)>
where
    F: FnMut(&[f64]) -> Evaluation,
{
    let dim = x0.len();
    let mut f = Counted { f, count: 0 };
    let mut x = DVector::from_column_slice(x0);
    let mut ev = f.eval(&x);
    if !ev.is_finite() || ev.gradient.len() != dim {
        return Err(Error::InvalidArgument("objective is not finite at the starting point".into()));
    }
    let mut g = DVector::from_column_slice(&ev.gradient);
    let mut records = vec![IterationRecord {
        objective: ev.value,
        gradient_norm: g.norm(),
        step: 0.0,
        phase: Phase::Bfgs,
        wolfe: None,
    }];
    let reached = |v: f64| opts.target.map(|t| v < t).unwrap_or(false);
    let finish = |records, status, count| OptimizerTrace { records, status, evaluations: count };
    if reached(ev.value) {
        return Ok((x.as_slice().to_vec(), finish(records, OptimizerStatus::TargetReached, f.count)));
    }
    if dim == 0 {
        return Ok((vec![], finish(records, OptimizerStatus::GradientSmall, f.count)));
    }

    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut first_update = true;
    let mut status = OptimizerStatus::MaxIter;
    for _ in 0..opts.max_iter {
        if g.norm() <= opts.grad_tol {
            status = OptimizerStatus::GradientSmall;
            break;
        }
        let mut d = -(&h * &g);
        if g.dot(&d) >= 0.0 || !d.iter().all(|v| v.is_finite()) {
            h = DMatrix::identity(dim, dim);
            first_update = true;
            d = -g.clone();
        }
        match weak_wolfe(&mut f, &x, ev.value, &g, &d, opts) {
            LineSearch::Failed => {
                status = OptimizerStatus::LineSearchFail;
                break;
            }
            LineSearch::Accepted { x: xn, eval, cert } => {
                let gn = DVector::from_column_slice(&eval.gradient);
                let s = &xn - &x;
                let y = &gn - &g;
                let sy = s.dot(&y);
                // curvature holds under weak Wolfe but may be lost to rounding
                if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
                    if first_update {
                        h = DMatrix::identity(dim, dim) * (sy / y.dot(&y));
                        first_update = false;
                    }
                    let rho = 1.0 / sy;
                    let hy = &h * &y;
                    let yhy = y.dot(&hy);
                    h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
                }
                let decrease = ev.value - eval.value;
                x = xn;
                ev = eval;
                g = gn;
                records.push(IterationRecord {
                    objective: ev.value,
                    gradient_norm: g.norm(),
                    step: s.norm(),
                    phase: Phase::Bfgs,
                    wolfe: Some(cert),
                });
                if reached(ev.value) {
                    return Ok((x.as_slice().to_vec(), finish(records, OptimizerStatus::TargetReached, f.count)));
                }
                if decrease <= opts.f_tol * ev.value.abs().max(1.0) {
                    status = OptimizerStatus::LineSearchFail;
                    break;
                }
            }
        }
    }
    if status == OptimizerStatus::GradientSmall || status == OptimizerStatus::MaxIter {
        return Ok((x.as_slice().to_vec(), finish(records, status, f.count)));
    }

    // gradient sampling
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let samples = opts.sample_count.unwrap_or(2 * dim + 1).max(1);
    let scale = 1.0 + DVector::from_column_slice(x0).norm();
    for &radius in &opts.sampling_radii {
        let eps = radius * scale;
        for _ in 0..opts.max_sampling_iter {
            let mut cols = vec![g.clone()];
            for _ in 0..samples {
                let xs = &x + sample_ball(&mut rng, dim, eps);
                let es = f.eval(&xs);
                if es.is_finite() {
                    cols.push(DVector::from_column_slice(&es.gradient));
                }
            }
            let gm = DMatrix::from_columns(&cols);
            let d = min_norm_convex_combination(&gm);
            let dn = d.norm();
            if dn <= opts.sampling_tol {
                break;
            }
            // Armijo backtracking along -d
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..opts.max_line_search {
                let xt = &x - &d * t;
                let et = f.eval(&xt);
                if et.is_finite() && et.value < ev.value - opts.c1 * t * dn * dn {
                    accepted = Some((xt, et));
                    break;
                }
                t *= 0.5;
            }
            let Some((xn, en)) = accepted else { break };
            let step = (&xn - &x).norm();
            x = xn;
            ev = en;
            g = DVector::from_column_slice(&ev.gradient);
            records.push(IterationRecord {
                objective: ev.value,
                gradient_norm: g.norm(),
                step,
                phase: Phase::Sampling,
                wolfe: None,
            });
            if reached(ev.value) {
                return Ok((x.as_slice().to_vec(), finish(records, OptimizerStatus::TargetReached, f.count)));
            }
        }
    }
    Ok((x.as_slice().to_vec(), finish(records, OptimizerStatus::SamplingConverged, f.count)))
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub starts: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Required stability margin: the result satisfies `abscissa < -margin`.
    pub margin: f64,
    pub stabilize: OptimOptions,
    pub minimize: OptimOptions,
    pub hinf: HinfOptions,
    /// Worker cap; `0` means one per available core.
    pub threads: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 42,
            init_scale: 1.0,
            margin: 1e-3,
            stabilize: OptimOptions { max_iter: 200, ..OptimOptions::default() },
            minimize: OptimOptions {
                max_iter: 100,
                grad_tol: 1e-8,
                f_tol: 1e-12,
                max_line_search: 30,
                max_sampling_iter: 10,
                sampling_tol: 1e-6,
                ..OptimOptions::default()
            },
            hinf: HinfOptions::default(),
            threads: threads_from_env(),
        }
    }
}

/// Reads `DELAY_HINF_THREADS`; unset, empty or malformed means `0` (auto).
pub fn threads_from_env() -> usize {
    std::env::var("DELAY_HINF_THREADS").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub stabilized: bool,
    pub abscissa: f64,
    /// Certified norm, when phase 2 ran and certification succeeded.
    pub norm: Option<f64>,
    pub stabilization: Option<OptimizerTrace>,
    pub minimization: Option<OptimizerTrace>,
    #[serde(skip)]
    pub controller: Option<ControllerRealization>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisResult {
    #[serde(skip)]
    pub controller: ControllerRealization,
    pub norm: HinfResult,
    pub abscissa: StabilityReport,
    pub starts_tried: usize,
    pub starts: Vec<StartSummary>,
}

fn abscissa_objective<'a>(
    plant: &'a TimeDelayPlant,
    nk: usize,
    opts: &'a SynthesisOptions,
) -> impl FnMut(&[f64]) -> Evaluation + 'a {
    let (ny, nu) = (plant.ny(), plant.nu());
    move |x: &[f64]| {
        let dim = x.len();
        let eval = || -> Result<Evaluation> {
            let k = DecisionVector(x.to_vec()).unpack(nk, ny, nu)?;
            let cl = assemble_closed_loop(plant, &k)?;
            let rep = spectral_abscissa(&cl, &opts.hinf.stability)?;
            let g = abscissa_gradient(plant, &k, &rep)?;
            Ok(Evaluation { value: rep.abscissa, gradient: DecisionVector::from_gradient(&g), smooth: g.smooth })
        };
        eval().unwrap_or_else(|_| Evaluation::infeasible(dim))
    }
}

fn norm_objective<'a>(
    plant: &'a TimeDelayPlant,
    nk: usize,
    opts: &'a SynthesisOptions,
) -> impl FnMut(&[f64]) -> Evaluation + 'a {
    let (ny, nu) = (plant.ny(), plant.nu());
    let mut n_warm = opts.hinf.n_start;
    move |x: &[f64]| {
        let dim = x.len();
        let mut hopts = opts.hinf.clone();
        hopts.check_stability = true;
        hopts.stability_margin = opts.margin;
        hopts.n_start = n_warm;
        hopts.single_pass = true;
        let mut eval = || -> Result<Evaluation> {
            let k = DecisionVector(x.to_vec()).unpack(nk, ny, nu)?;
            let cl = assemble_closed_loop(plant, &k)?;
            let res = hinf_norm(&cl, &hopts)?;
            n_warm = res.n_used;
            let clg = hinf_gradient_closed_loop(&cl, &res)?;
            let g = hinf_gradient_controller(plant, &k, &clg)?;
            Ok(Evaluation { value: res.norm, gradient: DecisionVector::from_gradient(&g), smooth: g.smooth })
        };
        eval().unwrap_or_else(|_| Evaluation::infeasible(dim))
    }
}

fn run_start(plant: &TimeDelayPlant, nk: usize, opts: &SynthesisOptions, start: usize) -> StartSummary {
    let dim = DecisionVector::len_for(nk, plant.ny(), plant.nu());
    let seed = opts.seed.wrapping_add(start as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..dim).map(|_| opts.init_scale * rng.random_range(-1.0..=1.0)).collect();
    let mut summary = StartSummary {
        start,
        stabilized: false,
        abscissa: f64::INFINITY,
        norm: None,
        stabilization: None,
        minimization: None,
        controller: None,
    };

    let mut p1 = opts.stabilize.clone();
    p1.target = Some(-opts.margin);
    p1.seed = seed;
    let Ok((x1, trace1)) = minimize_nonsmooth(abscissa_objective(plant, nk, opts), &x0, &p1) else {
        return summary;
    };
    summary.abscissa = trace1.final_objective();
    summary.stabilized = summary.abscissa < -opts.margin;
    summary.stabilization = Some(trace1);
    if !summary.stabilized {
        return summary;
    }

    let mut p2 = opts.minimize.clone();
    p2.seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let x2 = match minimize_nonsmooth(norm_objective(plant, nk, opts), &x1, &p2) {
        Ok((x2, trace2)) => {
            summary.minimization = Some(trace2);
            x2
        }
        Err(_) => x1,
    };
    let Ok(k) = DecisionVector(x2).unpack(nk, plant.ny(), plant.nu()) else { return summary };
    if let Ok(cl) = assemble_closed_loop(plant, &k) {
        let mut hopts = opts.hinf.clone();
        hopts.check_stability = true;
        hopts.stability_margin = opts.margin;
        if let Ok(res) = hinf_norm(&cl, &hopts) {
            summary.norm = Some(res.norm);
            summary.controller = Some(k);
        }
        if let Ok(rep) = spectral_abscissa(&cl, &opts.hinf.stability) {
            summary.abscissa = rep.abscissa;
        }
    }
    summary
}

/// Multi-start two-phase synthesis of an order-`nk` controller.
pub fn synthesize(plant: &TimeDelayPlant, nk: usize, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    plant.validate()?;
    if nk == 0 {
        return Err(Error::InvalidArgument("order must be ≥ 1".into()));
    }
    if opts.starts == 0 {
        return Err(Error::InvalidArgument("at least one start is required".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut starts: Vec<StartSummary> =
        pool.install(|| (0..opts.starts).into_par_iter().map(|s| run_start(plant, nk, opts, s)).collect());
    starts.sort_by_key(|s| s.start);

    let best = starts
        .iter()
        .filter(|s| s.norm.is_some() && s.controller.is_some())
        .min_by(|a, b| a.norm.unwrap().total_cmp(&b.norm.unwrap()).then(a.start.cmp(&b.start)));
    let Some(best) = best else {
        let best_abscissa = starts.iter().map(|s| s.abscissa).fold(f64::INFINITY, f64::min);
        return Err(Error::StabilizationFailed { order: nk, best_abscissa });
    };
    let controller = best.controller.clone().expect("filtered");
    let cl = assemble_closed_loop(plant, &controller)?;
    let mut hopts = opts.hinf.clone();
    hopts.check_stability = true;
    hopts.stability_margin = opts.margin;
    let norm = hinf_norm(&cl, &hopts)?;
    let abscissa = spectral_abscissa(&cl, &opts.hinf.stability)?;
    Ok(SynthesisResult { controller, norm, abscissa, starts_tried: opts.starts, starts })
}
