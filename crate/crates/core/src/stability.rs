//! Rightmost characteristic roots of the closed loop.
//!
//! Roots are first approximated by the eigenvalues of a Chebyshev collocation
//! of the solution-operator generator on `[-tau_max, 0]` and then refined by
//! Newton's method on the bordered system `{M(lambda) x = 0, c^* x = 1}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grad::{controller_gradient_from_closed_loop, ControllerGradient};
use crate::linalg::{eigenvalues, lu_solve, smallest_singular, spectral_norm, CMat, CVec, RMat, C64};
use crate::model::{assemble_closed_loop, ClosedLoopSystem, ControllerRealization, TimeDelayPlant};
use crate::spectral::{build_interval_mesh, differentiation_matrix, discretize_block_operator};

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    pub n_start: usize,
    pub n_max: usize,
    /// Agreement of the corrected abscissa between `N` and `2N`.
    pub abs_tol: f64,
    /// Width of the search window left of the rightmost approximate root,
    /// relative to `1 + |alpha|`.
    pub window: f64,
    pub max_candidates: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { n_start: 10, n_max: 160, abs_tol: 1e-8, window: 0.1, max_candidates: 24 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CharacteristicRoot {
    pub re: f64,
    pub im: f64,
    #[serde(skip)]
    pub x: CVec,
    #[serde(skip)]
    pub y: CVec,
    pub converged: bool,
}

impl CharacteristicRoot {
    pub fn lambda(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub abscissa: f64,
    /// Roots with `Im >= 0`, rightmost first.
    pub rightmost_roots: Vec<CharacteristicRoot>,
    pub n_used: usize,
    pub converged: bool,
    /// Two distinct roots (not a conjugate pair) share the maximal real part.
    pub nonsmooth: bool,
}

impl StabilityReport {
    /// The root that defines the abscissa; on ties the one with the largest
    /// imaginary part.
    pub fn dominant(&self) -> Option<&CharacteristicRoot> {
        let top = self.rightmost_roots.first()?;
        self.rightmost_roots
            .iter()
            .filter(|r| (r.re - top.re).abs() <= 1e-8)
            .max_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
    }
}

/// Result of Newton refinement of one root.
#[derive(Debug, Clone)]
pub struct NewtonRoot {
    pub lambda: C64,
    pub x: CVec,
    pub y: CVec,
    pub iterations: usize,
    pub converged: bool,
}

fn certified(cl: &ClosedLoopSystem, lambda: C64, x: &CVec, rel: f64) -> bool {
    let m = cl.characteristic_matrix(lambda);
    (&m * x).norm() <= rel * spectral_norm(&m).max(1.0) * x.norm()
}

/// Newton on `{M(lambda) x = 0, c^* x = 1}` with `c` the initial null vector.
pub fn newton_correct_root(cl: &ClosedLoopSystem, lambda0: C64) -> NewtonRoot {
    let n = cl.n();
    let (_, _, x0) = smallest_singular(&cl.characteristic_matrix(lambda0));
    let c = x0.clone();
    let mut x = x0;
    let mut lambda = lambda0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 50 {
        let m = cl.characteristic_matrix(lambda);
        let mp = cl.characteristic_derivative(lambda);
        let mut jac = CMat::zeros(n + 1, n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(&m);
        jac.view_mut((0, n), (n, 1)).copy_from(&(&mp * &x));
        jac.view_mut((n, 0), (1, n)).copy_from(&c.adjoint());
        let mut rhs = CMat::zeros(n + 1, 1);
        rhs.view_mut((0, 0), (n, 1)).copy_from(&(-(&m * &x)));
        rhs[(n, 0)] = C64::new(1.0, 0.0) - c.dotc(&x);
        let Some(step) = lu_solve(&jac, &rhs) else { break };
        iterations += 1;
        for k in 0..n {
            x[k] += step[(k, 0)];
        }
        let dl = step[(n, 0)];
        lambda += dl;
        if !(lambda.re.is_finite() && lambda.im.is_finite()) {
            break;
        }
        if dl.norm() <= 1e-14 * (1.0 + lambda.norm()) {
            converged = true;
            break;
        }
    }
    if converged || certified(cl, lambda, &x, 1e-12) {
        converged = certified(cl, lambda, &x, 1e-8);
    }
    let (_, y, xr) = smallest_singular(&cl.characteristic_matrix(lambda));
    let x = if converged {
        let nx = x.norm();
        x / C64::new(nx, 0.0)
    } else {
        xr
    };
    NewtonRoot { lambda, x, y, iterations, converged }
}

/// Collocation matrix of the DDE generator on `[-tau_max, 0]` with `2N+1` nodes.
pub fn discretize_generator(cl: &ClosedLoopSystem, n_mesh: usize) -> Result<RMat> {
    let n = cl.n();
    let tau_max = cl.tau_max();
    if tau_max == 0.0 {
        return Ok(cl.a.iter().fold(RMat::zeros(n, n), |acc, a| acc + a));
    }
    let mesh = build_interval_mesh(n_mesh, -tau_max, 0.0)?;
    let diff = differentiation_matrix(&mesh);
    let count = mesh.len();
    let last = count - 1;
    let mut row = RMat::zeros(n, count * n);
    row.view_mut((0, last * n), (n, n)).copy_from(&cl.a[0]);
    for (a, &tau) in cl.a[1..].iter().zip(&cl.delays) {
        let l = mesh.lagrange_row(-tau);
        for (k, &lk) in l.iter().enumerate() {
            if lk != 0.0 {
                let mut blk = row.view_mut((0, k * n), (n, n));
                blk += a * lk;
            }
        }
    }
    discretize_block_operator(&diff, n, last, &row)
}

fn rightmost_at(cl: &ClosedLoopSystem, n_mesh: usize, opts: &StabilityOptions) -> Result<Vec<CharacteristicRoot>> {
    let gen = discretize_generator(cl, n_mesh)?;
    let mut ev: Vec<C64> = eigenvalues(&gen)?
        .into_iter()
        .filter(|z| z.im >= -1e-10 * (1.0 + z.norm()))
        .collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re));
    let Some(top) = ev.first().map(|z| z.re) else { return Ok(Vec::new()) };
    let cutoff = top - opts.window * (1.0 + top.abs());
    let mut roots: Vec<CharacteristicRoot> = Vec::new();
    for z in ev.into_iter().filter(|z| z.re >= cutoff).take(opts.max_candidates) {
        let start = if z.im.abs() <= 1e-10 * (1.0 + z.norm()) { C64::new(z.re, 0.0) } else { z };
        let nr = newton_correct_root(cl, start);
        if !nr.converged {
            continue;
        }
        let mut lambda = nr.lambda;
        if lambda.im < 0.0 {
            lambda = lambda.conj();
        }
        if lambda.im.abs() <= 1e-12 * (1.0 + lambda.norm()) {
            lambda.im = 0.0;
        }
        if roots
            .iter()
            .any(|r| (r.lambda() - lambda).norm() <= 1e-8 * (1.0 + lambda.norm()))
        {
            continue;
        }
        let (x, y) = if nr.lambda.im < 0.0 { (nr.x.conjugate(), nr.y.conjugate()) } else { (nr.x, nr.y) };
        roots.push(CharacteristicRoot { re: lambda.re, im: lambda.im, x, y, converged: true });
    }
    roots.sort_by(|a, b| b.re.total_cmp(&a.re));
    Ok(roots)
}

/// Spectral abscissa with Newton-certified rightmost roots.
pub fn spectral_abscissa(cl: &ClosedLoopSystem, opts: &StabilityOptions) -> Result<StabilityReport> {
    let mut n_mesh = opts.n_start.max(1);
    let mut previous: Option<f64> = None;
    loop {
        let roots = rightmost_at(cl, n_mesh, opts)?;
        let alpha = roots.first().map(|r| r.re).unwrap_or(f64::NEG_INFINITY);
        let settled = cl.tau_max() == 0.0
            || previous.map(|p| (p - alpha).abs() <= opts.abs_tol || p == alpha).unwrap_or(false);
        if settled && !roots.is_empty() {
            let nonsmooth = roots.len() > 1 && (roots[0].re - roots[1].re).abs() <= 1e-8;
            return Ok(StabilityReport {
                abscissa: alpha,
                rightmost_roots: roots,
                n_used: n_mesh,
                converged: true,
                nonsmooth,
            });
        }
        if n_mesh * 2 > opts.n_max {
            return Err(Error::DiscretizationCap { n_max: opts.n_max, best: alpha });
        }
        previous = Some(alpha);
        n_mesh *= 2;
    }
}

/// Gradient of the spectral abscissa with respect to `(AK, BK, CK)`.
///
/// With `M(lambda) x = 0`, `y^* M(lambda) = 0`, a simple root moves as
/// `d lambda = y^* (dA0 + sum_i dAi exp(-lambda tau_i)) x / (y^* M'(lambda) x)`.
pub fn abscissa_gradient(
    plant: &TimeDelayPlant,
    controller: &ControllerRealization,
    report: &StabilityReport,
) -> Result<ControllerGradient> {
    let cl = assemble_closed_loop(plant, controller)?;
    let root = report.dominant().ok_or(Error::NoPeak)?;
    let lambda = root.lambda();
    let (x, y) = (&root.x, &root.y);
    let denom = y.dotc(&(cl.characteristic_derivative(lambda) * x));
    let scale = y.norm() * x.norm() * spectral_norm(&cl.characteristic_derivative(lambda)).max(1.0);
    if denom.norm() <= 1e-10 * scale {
        return Err(Error::DefectiveRoot { re: lambda.re, im: lambda.im });
    }
    let base = y.conjugate() * x.transpose() / denom;
    let mut d_acl = Vec::with_capacity(cl.a.len());
    d_acl.push(base.map(|z| z.re));
    for &tau in &cl.delays {
        let e = (-lambda * tau).exp();
        d_acl.push(base.map(|z| (z * e).re));
    }
    let n = cl.n();
    let zero_b = RMat::zeros(n, cl.nw());
    let zero_c = RMat::zeros(cl.nz(), n);
    let mut g = controller_gradient_from_closed_loop(plant, controller, &d_acl, &zero_b, &zero_c)?;
    g.smooth = !report.nonsmooth;
    Ok(g)
}

/// Convenience: abscissa of `plant` closed by `controller`.
pub fn closed_loop_abscissa(
    plant: &TimeDelayPlant,
    controller: &ControllerRealization,
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    spectral_abscissa(&assemble_closed_loop(plant, controller)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> RMat {
        RMat::from_element(1, 1, x)
    }

    fn scalar(a0: f64, a1: f64, tau: f64) -> ClosedLoopSystem {
        ClosedLoopSystem::new(vec![s(a0), s(a1)], vec![tau], s(1.0), s(1.0), s(0.0)).unwrap()
    }

    #[test]
    fn delay_free_scalar() {
        let rep = spectral_abscissa(&scalar(-1.0, 0.0, 0.0), &StabilityOptions::default()).unwrap();
        assert!((rep.abscissa + 1.0).abs() < 1e-14);
    }

    #[test]
    fn inactive_delay_term() {
        let rep = spectral_abscissa(&scalar(-1.0, 0.0, 1.0), &StabilityOptions::default()).unwrap();
        assert!((rep.abscissa + 1.0).abs() < 1e-10);
    }

    #[test]
    fn pure_delay_lambert_w() {
        // lambda exp(lambda) = -1: W_0(-1) = -0.318131505204764 + 1.337235701430689 j
        let rep = spectral_abscissa(&scalar(0.0, -1.0, 1.0), &StabilityOptions::default()).unwrap();
        let r = &rep.rightmost_roots[0];
        assert!((r.re + 0.318131505204764).abs() < 1e-10, "{}", r.re);
        assert!((r.im - 1.337235701430689).abs() < 1e-10, "{}", r.im);
        let m = scalar(0.0, -1.0, 1.0).characteristic_matrix(r.lambda());
        assert!((&m * &r.x).norm() < 1e-12);
    }

    #[test]
    fn newton_on_simple_pole() {
        let r = newton_correct_root(&scalar(-1.0, 0.0, 0.0), C64::new(-0.9, 0.0));
        assert!(r.converged);
        assert!((r.lambda - C64::new(-1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn newton_on_lambert_root() {
        let r = newton_correct_root(&scalar(0.0, -1.0, 1.0), C64::new(-0.3, 1.3));
        assert!(r.converged);
        assert!((r.lambda.re + 0.3181).abs() < 1e-4);
        assert!((r.lambda.im - 1.3372).abs() < 1e-4);
    }

    #[test]
    fn newton_divergence_is_flagged() {
        // lambda + exp(-lambda) has no real root; real iterates never settle
        let r = newton_correct_root(&scalar(0.0, -1.0, 1.0), C64::new(50.0, 0.0));
        assert!(!r.converged);
    }

    #[test]
    fn defining_derivative_matches_finite_differences() {
        let cl = ClosedLoopSystem::new(
            vec![RMat::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]), RMat::from_row_slice(2, 2, &[0.3, 0.0, 0.1, -0.4])],
            vec![1.3],
            RMat::zeros(2, 1),
            RMat::zeros(1, 2),
            s(0.0),
        )
        .unwrap();
        let lam = C64::new(0.2, 0.7);
        let h = 1e-6;
        let fd = (cl.characteristic_matrix(lam + h) - cl.characteristic_matrix(lam - h)) / C64::new(2.0 * h, 0.0);
        assert!((fd - cl.characteristic_derivative(lam)).norm() < 1e-8);
    }

    #[test]
    fn scalar_gain_gradient_is_one() {
        // decoupled controller state: alpha = ak, so d alpha / d ak = 1
        let plant = TimeDelayPlant::new(
            vec![],
            0.0,
            0.0,
            vec![s(-3.0)],
            s(1.0),
            s(0.0),
            s(1.0),
            s(0.0),
            s(0.0),
            s(0.0),
            s(0.0),
            s(0.0),
        )
        .unwrap();
        let k = ControllerRealization::new(s(-1.0), s(0.0), s(0.0)).unwrap();
        let rep = closed_loop_abscissa(&plant, &k, &StabilityOptions::default()).unwrap();
        assert!((rep.abscissa + 1.0).abs() < 1e-12);
        let g = abscissa_gradient(&plant, &k, &rep).unwrap();
        assert!((g.d_ak[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
