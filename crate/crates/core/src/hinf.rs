//! H-infinity norm of a retarded closed loop by prediction and correction.
//!
//! The level `xi` is a singular value of `T_zw(j omega)` exactly when
//! `lambda = j omega` is an eigenvalue of a delay-Hamiltonian operator whose
//! characteristic matrix is
//!
//! ```text
//! H_xi(lambda) = lambda I - M0 - sum_i (M_i exp(-lambda tau_i) + M_{-i} exp(lambda tau_i)).
//! ```
//!
//! The predictor runs a level-set iteration on a Chebyshev collocation
//! matrix of that operator on `[-tau_max, tau_max]`. The corrector solves the
//! finite nonlinear system characterizing a peak (a double imaginary-axis
//! eigenvalue of `H_xi`) by Gauss-Newton in the unknowns `(u, v, omega, xi)`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, lstsq, real_spectral_norm, smallest_singular, CMat, CVec, RMat, C64, J};
use crate::model::{max_singular_value, sigma_max, triple_from_matrix, ClosedLoopSystem, SingularTriple};
use crate::spectral::{build_mesh, differentiation_matrix, discretize_block_operator};
use crate::stability::{spectral_abscissa, StabilityOptions};

/// `M0`, `M_i`, `M_{-i}` at a fixed level `xi`.
///
/// `M_i` carries `A_cl,i` in its upper-left block and `M_{-i}` carries
/// `-A_cl,i^T` in its lower-right block; only the `A_cl,i` are stored.
#[derive(Debug, Clone)]
pub struct HamiltonianTriple {
    pub xi: f64,
    pub m0: RMat,
    /// `d M0 / d xi`.
    pub dm0_dxi: RMat,
    /// `A_cl,1 .. A_cl,m+2`.
    pub a_delayed: Vec<RMat>,
    pub delays: Vec<f64>,
    /// `D_cl^T D_cl - xi^2 I`.
    pub d_xi: RMat,
}

fn min_abs_eigenvalue_sym(m: &RMat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

pub fn build_hamiltonian_triple(cl: &ClosedLoopSystem, xi: f64) -> Result<HamiltonianTriple> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidArgument(format!("level must be positive, got {xi}")));
    }
    let n = cl.n();
    let (nw, nz) = (cl.nw(), cl.nz());
    let (a0, b, c, d) = (&cl.a[0], &cl.b, &cl.c, &cl.d);
    let xi2 = xi * xi;
    let r = d.transpose() * d - RMat::identity(nw, nw) * xi2;
    let s = d * d.transpose() - RMat::identity(nz, nz) * xi2;
    let guard = 1e-10 * xi2.max(1.0);
    if min_abs_eigenvalue_sym(&r) <= guard || min_abs_eigenvalue_sym(&s) <= guard {
        return Err(Error::SingularFeedthroughLevel { xi });
    }
    let ri = r.clone().try_inverse().ok_or(Error::SingularFeedthroughLevel { xi })?;
    let si = s.try_inverse().ok_or(Error::SingularFeedthroughLevel { xi })?;
    let dri = &ri * &ri * (2.0 * xi);
    let dsi = &si * &si * (2.0 * xi);

    let bt = b.transpose();
    let ct = c.transpose();
    let dt = d.transpose();

    let m11 = a0 - b * &ri * &dt * c;
    let m12 = -(b * &ri * &bt);
    let m21 = &ct * &si * c * xi2;
    let m22 = -a0.transpose() + &ct * d * &ri * &bt;

    let dm11 = -(b * &dri * &dt * c);
    let dm12 = -(b * &dri * &bt);
    let dm21 = &ct * &si * c * (2.0 * xi) + &ct * &dsi * c * xi2;
    let dm22 = &ct * d * &dri * &bt;

    let mut m0 = RMat::zeros(2 * n, 2 * n);
    let mut dm0 = RMat::zeros(2 * n, 2 * n);
    for (dst, blocks) in [(&mut m0, [m11, m12, m21, m22]), (&mut dm0, [dm11, dm12, dm21, dm22])] {
        let [p, q, r_, s_] = blocks;
        dst.view_mut((0, 0), (n, n)).copy_from(&p);
        dst.view_mut((0, n), (n, n)).copy_from(&q);
        dst.view_mut((n, 0), (n, n)).copy_from(&r_);
        dst.view_mut((n, n), (n, n)).copy_from(&s_);
    }
    Ok(HamiltonianTriple {
        xi,
        m0,
        dm0_dxi: dm0,
        a_delayed: cl.a[1..].to_vec(),
        delays: cl.delays.clone(),
        d_xi: r,
    })
}

impl HamiltonianTriple {
    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }

    fn half(&self) -> usize {
        self.m0.nrows() / 2
    }

    /// `M_i` as a full `2n x 2n` matrix (`i` is 1-based).
    pub fn m_pos(&self, i: usize) -> RMat {
        let n = self.half();
        let mut m = RMat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a_delayed[i - 1]);
        m
    }

    /// `M_{-i}` as a full `2n x 2n` matrix (`i` is 1-based).
    pub fn m_neg(&self, i: usize) -> RMat {
        let n = self.half();
        let mut m = RMat::zeros(2 * n, 2 * n);
        m.view_mut((n, n), (n, n)).copy_from(&(-self.a_delayed[i - 1].transpose()));
        m
    }

    /// `H_xi(lambda)`.
    pub fn h(&self, lambda: C64) -> CMat {
        let n = self.half();
        let mut h = self.m0.map(|x| C64::new(-x, 0.0));
        for k in 0..2 * n {
            h[(k, k)] += lambda;
        }
        for (a, &tau) in self.a_delayed.iter().zip(&self.delays) {
            let em = (-lambda * tau).exp();
            let ep = (lambda * tau).exp();
            for r in 0..n {
                for c in 0..n {
                    h[(r, c)] -= em * a[(r, c)];
                    // M_{-i} = diag(0, -A^T)
                    h[(n + r, n + c)] += ep * a[(c, r)];
                }
            }
        }
        h
    }

    /// `H_xi'(lambda) = I + sum_i tau_i (M_i exp(-lambda tau_i) - M_{-i} exp(lambda tau_i))`.
    pub fn h_derivative(&self, lambda: C64) -> CMat {
        let n = self.half();
        let mut h = CMat::identity(2 * n, 2 * n);
        for (a, &tau) in self.a_delayed.iter().zip(&self.delays) {
            let em = (-lambda * tau).exp() * tau;
            let ep = (lambda * tau).exp() * tau;
            for r in 0..n {
                for c in 0..n {
                    h[(r, c)] += em * a[(r, c)];
                    h[(n + r, n + c)] += ep * a[(c, r)];
                }
            }
        }
        h
    }

    /// `P(omega) = I + sum_i tau_i A_cl,i exp(-j omega tau_i)`, the upper-left
    /// block of `H_xi'(j omega)`.
    fn p_block(&self, omega: f64) -> (CMat, CMat) {
        let n = self.half();
        let mut p = CMat::identity(n, n);
        let mut dp = CMat::zeros(n, n);
        for (a, &tau) in self.a_delayed.iter().zip(&self.delays) {
            let e = (-J * omega * tau).exp();
            let c = e * tau;
            let dc = e * (-J * tau * tau);
            p.zip_apply(a, |z, x| *z += c * x);
            dp.zip_apply(a, |z, x| *z += dc * x);
        }
        (p, dp)
    }

    /// The collocation matrix `L_xi^N` on the symmetric mesh with `2N+1` nodes.
    pub fn discretize(&self, n_mesh: usize, tau_max: f64) -> Result<RMat> {
        let dim = self.dim();
        let n = self.half();
        if tau_max == 0.0 {
            // no delays at all: the operator reduces to the Hamiltonian matrix
            let mut h = self.m0.clone();
            for i in 1..=self.a_delayed.len() {
                h += self.m_pos(i) + self.m_neg(i);
            }
            return Ok(h);
        }
        let mesh = build_mesh(n_mesh, tau_max)?;
        let diff = differentiation_matrix(&mesh);
        let count = mesh.len();
        let center = mesh.center();
        let mut row = RMat::zeros(dim, count * dim);
        row.view_mut((0, center * dim), (dim, dim)).copy_from(&self.m0);
        for (a, &tau) in self.a_delayed.iter().zip(&self.delays) {
            let lm = mesh.lagrange_row(-tau);
            let lp = mesh.lagrange_row(tau);
            for k in 0..count {
                if lm[k] != 0.0 {
                    let mut blk = row.view_mut((0, k * dim), (n, n));
                    blk += a * lm[k];
                }
                if lp[k] != 0.0 {
                    let mut blk = row.view_mut((n, k * dim + n), (n, n));
                    blk -= a.transpose() * lp[k];
                }
            }
        }
        discretize_block_operator(&diff, dim, center, &row)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Peak {
    /// `f64::INFINITY` when the supremum is the feedthrough level reached as
    /// `omega -> infinity`.
    pub omega: f64,
    pub sigma: f64,
    #[serde(skip)]
    pub triple: SingularTriple,
}

#[derive(Debug, Clone, Serialize)]
pub struct HinfResult {
    pub norm: f64,
    /// Sorted by frequency.
    pub peaks: Vec<Peak>,
    pub n_used: usize,
    pub corrector_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct HinfOptions {
    pub n_start: usize,
    pub n_max: usize,
    /// Relative agreement of corrected norms at `N` and `2N`.
    pub rel_tol: f64,
    pub eps_level: f64,
    pub axis_tol: f64,
    pub corrector_tol: f64,
    /// Run `spectral_abscissa` first and refuse unstable closed loops.
    pub check_stability: bool,
    pub stability_margin: f64,
    /// Stop after the first `N` instead of doubling until agreement.
    pub single_pass: bool,
    pub stability: StabilityOptions,
}

impl Default for HinfOptions {
    fn default() -> Self {
        Self {
            n_start: 10,
            n_max: 160,
            rel_tol: 1e-6,
            eps_level: 1e-4,
            axis_tol: 1e-6,
            corrector_tol: 1e-10,
            check_stability: true,
            stability_margin: 0.0,
            single_pass: false,
            stability: StabilityOptions::default(),
        }
    }
}

/// Outcome of the level-set predictor.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub xi: f64,
    /// Candidate peak frequencies, best first.
    pub candidates: Vec<f64>,
    pub iterations: usize,
}

fn feedthrough_norm(cl: &ClosedLoopSystem) -> f64 {
    real_spectral_norm(&cl.d)
}

fn seed_frequencies(cl: &ClosedLoopSystem) -> Vec<f64> {
    let scale = 1.0 + cl.state_scale();
    let mut out = vec![0.0];
    let count = 60;
    for k in 0..count {
        let e = -3.0 + 5.0 * k as f64 / (count - 1) as f64;
        out.push(scale * 10f64.powf(e));
    }
    out
}

/// Imaginary-axis eigenvalues of `L_xi^N` as nonnegative frequencies.
pub fn axis_crossings(cl: &ClosedLoopSystem, xi: f64, n_mesh: usize, axis_tol: f64) -> Result<Vec<f64>> {
    let ham = build_hamiltonian_triple(cl, xi)?;
    let l = ham.discretize(n_mesh, cl.tau_max())?;
    let ev = eigenvalues(&l)?;
    let mut w: Vec<f64> = ev
        .iter()
        .filter(|z| z.re.abs() <= axis_tol * (1.0 + z.norm()))
        .map(|z| z.im.abs())
        .collect();
    w.sort_by(f64::total_cmp);
    w.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    Ok(w)
}

fn nudge_level(cl: &ClosedLoopSystem, xi: f64) -> f64 {
    let mut level = xi;
    for _ in 0..8 {
        if build_hamiltonian_triple(cl, level).is_ok() {
            return level;
        }
        level *= 1.0 + 1e-8;
    }
    level
}

/// Level-set predictor on `L_xi^N`.
pub fn predict_norm(cl: &ClosedLoopSystem, n_mesh: usize, opts: &HinfOptions) -> Result<Prediction> {
    let d_norm = feedthrough_norm(cl);
    let mut evaluated: Vec<(f64, f64)> = Vec::new();
    for w in seed_frequencies(cl) {
        let s = sigma_max(cl, w);
        if !s.is_finite() {
            return Err(Error::SingularResolvent { omega: w });
        }
        evaluated.push((w, s));
    }
    let (mut best_w, mut xi) = evaluated
        .iter()
        .copied()
        .fold((f64::INFINITY, d_norm), |acc, p| if p.1 > acc.1 { p } else { acc });
    if xi == 0.0 {
        return Ok(Prediction { xi: 0.0, candidates: vec![0.0], iterations: 0 });
    }

    let mut iterations = 0;
    for _ in 0..50 {
        iterations += 1;
        let level = nudge_level(cl, xi * (1.0 + 2.0 * opts.eps_level));
        let crossings = axis_crossings(cl, level, n_mesh, opts.axis_tol)?;
        if crossings.is_empty() {
            break;
        }
        let mut probes = vec![0.0];
        probes.extend(crossings.iter().copied());
        probes.extend(crossings.windows(2).map(|p| 0.5 * (p[0] + p[1])));
        let mut improved = xi;
        let mut improved_w = best_w;
        for w in probes {
            let s = sigma_max(cl, w);
            if !s.is_finite() {
                continue;
            }
            evaluated.push((w, s));
            if s > improved {
                improved = s;
                improved_w = w;
            }
        }
        let gain = improved - xi;
        if improved > xi {
            xi = improved;
            best_w = improved_w;
        }
        if gain <= opts.eps_level * xi {
            break;
        }
    }

    // Distinct candidate frequencies near the top, best first.
    evaluated.retain(|p| p.0.is_finite() && p.1 >= 0.9 * xi);
    evaluated.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut candidates: Vec<f64> = Vec::new();
    if best_w.is_finite() {
        candidates.push(best_w);
    }
    for (w, _) in evaluated {
        if candidates.len() >= 6 {
            break;
        }
        if candidates.iter().all(|&c| (c - w).abs() > 1e-3 * (1.0 + c.abs())) {
            candidates.push(w);
        }
    }
    Ok(Prediction { xi, candidates, iterations })
}

/// Residual and Jacobian of the peak system at `(z, omega, xi)`.
struct PeakSystem<'a> {
    cl: &'a ClosedLoopSystem,
    pin: usize,
}

impl PeakSystem<'_> {
    fn unpack(&self, p: &DVector<f64>) -> (CVec, f64, f64) {
        let dim = 2 * self.cl.n();
        let z = CVec::from_fn(dim, |k, _| C64::new(p[k], p[dim + k]));
        (z, p[2 * dim], p[2 * dim + 1])
    }

    fn residual(&self, p: &DVector<f64>) -> Result<(DVector<f64>, RMat)> {
        let n = self.cl.n();
        let dim = 2 * n;
        let (z, omega, xi) = self.unpack(p);
        let ham = build_hamiltonian_triple(self.cl, xi)?;
        let lam = J * omega;
        let h = ham.h(lam);
        let hp = ham.h_derivative(lam);
        let hz = &h * &z;
        let dz_omega = (&hp * &z) * J;
        let dz_xi = -(ham.dm0_dxi.map(|x| C64::new(x, 0.0)) * &z);

        let (pm, dpm) = ham.p_block(omega);
        let u = z.rows(0, n).into_owned();
        let v = z.rows(n, n).into_owned();
        let pu = &pm * &u;
        let g = v.dotc(&pu).im;
        let c_u = v.adjoint() * &pm;
        let g_omega = v.dotc(&(&dpm * &u)).im;

        let rows = 2 * dim + 3;
        let cols = 2 * dim + 2;
        let mut f = DVector::zeros(rows);
        let mut jac = RMat::zeros(rows, cols);
        for r in 0..dim {
            f[r] = hz[r].re;
            f[dim + r] = hz[r].im;
            for c in 0..dim {
                let e = h[(r, c)];
                jac[(r, c)] = e.re;
                jac[(r, dim + c)] = -e.im;
                jac[(dim + r, c)] = e.im;
                jac[(dim + r, dim + c)] = e.re;
            }
            jac[(r, 2 * dim)] = dz_omega[r].re;
            jac[(dim + r, 2 * dim)] = dz_omega[r].im;
            jac[(r, 2 * dim + 1)] = dz_xi[r].re;
            jac[(dim + r, 2 * dim + 1)] = dz_xi[r].im;
        }
        let nr = 2 * dim;
        f[nr] = z.norm_squared() - 1.0;
        for k in 0..dim {
            jac[(nr, k)] = 2.0 * z[k].re;
            jac[(nr, dim + k)] = 2.0 * z[k].im;
        }
        f[nr + 1] = z[self.pin].im;
        jac[(nr + 1, dim + self.pin)] = 1.0;
        f[nr + 2] = g;
        for k in 0..n {
            jac[(nr + 2, k)] = c_u[k].im;
            jac[(nr + 2, dim + k)] = c_u[k].re;
            jac[(nr + 2, n + k)] = pu[k].im;
            jac[(nr + 2, dim + n + k)] = -pu[k].re;
        }
        jac[(nr + 2, 2 * dim)] = g_omega;
        Ok((f, jac))
    }
}

/// Result of correcting a single candidate.
#[derive(Debug, Clone)]
pub struct CorrectedPeak {
    pub omega: f64,
    pub xi: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Gauss-Newton on the peak system from `(xi0, omega0)`.
pub fn correct_peak(
    cl: &ClosedLoopSystem,
    xi0: f64,
    omega0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CorrectedPeak> {
    let n = cl.n();
    let dim = 2 * n;
    let ham = build_hamiltonian_triple(cl, xi0)?;
    let (_, _, mut z) = smallest_singular(&ham.h(J * omega0));
    let pin = (0..dim)
        .max_by(|&a, &b| z[a].norm().total_cmp(&z[b].norm()))
        .unwrap_or(0);
    let phase = z[pin].conj() / z[pin].norm();
    z *= phase;
    z /= C64::new(z.norm(), 0.0);
    let sys = PeakSystem { cl, pin };
    let mut p = DVector::zeros(2 * dim + 2);
    for k in 0..dim {
        p[k] = z[k].re;
        p[dim + k] = z[k].im;
    }
    p[2 * dim] = omega0;
    p[2 * dim + 1] = xi0;

    let scale = 1.0 + real_spectral_norm(&ham.m0);
    let mut iterations = 0;
    loop {
        let (f, jac) = sys.residual(&p)?;
        let res = f.norm();
        if res <= tol * scale {
            return Ok(CorrectedPeak {
                omega: p[2 * dim].abs(),
                xi: p[2 * dim + 1],
                iterations,
                residual_norm: res,
                converged: true,
            });
        }
        if iterations >= max_iter {
            return Ok(CorrectedPeak {
                omega: p[2 * dim].abs(),
                xi: p[2 * dim + 1],
                iterations,
                residual_norm: res,
                converged: false,
            });
        }
        let step = match lstsq(&jac, &(-&f)) {
            Some(s) => s,
            None => {
                return Ok(CorrectedPeak {
                    omega: p[2 * dim].abs(),
                    xi: p[2 * dim + 1],
                    iterations,
                    residual_norm: res,
                    converged: false,
                })
            }
        };
        p += &step;
        iterations += 1;
        if !(p[2 * dim + 1] > 0.0) || !p.iter().all(|x| x.is_finite()) {
            return Ok(CorrectedPeak {
                omega: omega0,
                xi: xi0,
                iterations,
                residual_norm: f64::INFINITY,
                converged: false,
            });
        }
        // a converged step below roundoff also counts
        if step.norm() <= 1e-15 * (1.0 + p.norm()) {
            let (f, _) = sys.residual(&p)?;
            return Ok(CorrectedPeak {
                omega: p[2 * dim].abs(),
                xi: p[2 * dim + 1],
                iterations,
                residual_norm: f.norm(),
                converged: f.norm() <= 1e-8 * scale,
            });
        }
    }
}

/// Local maximizer of `omega -> sigma_1(T(j omega))` near `omega0`
/// (bracket expansion, then golden section), restricted to `omega >= 0`.
pub fn refine_peak_scalar(cl: &ClosedLoopSystem, omega0: f64) -> (f64, f64) {
    let f = |w: f64| sigma_max(cl, w.abs());
    let mut h = 1e-3 * (1.0 + omega0);
    let f0 = f(omega0);
    let (mut a, mut b);
    if f(omega0 + h) >= f0 {
        a = omega0;
        let mut x = omega0 + h;
        let mut fx = f(x);
        loop {
            h *= 2.0;
            let y = x + h;
            let fy = f(y);
            if fy < fx || h > 1e6 * (1.0 + omega0) {
                b = y;
                break;
            }
            a = x;
            x = y;
            fx = fy;
        }
    } else if omega0 > 0.0 && f((omega0 - h).max(0.0)) >= f0 {
        b = omega0;
        let mut x = (omega0 - h).max(0.0);
        let mut fx = f(x);
        loop {
            h *= 2.0;
            let y = (x - h).max(0.0);
            if y == 0.0 {
                a = 0.0;
                break;
            }
            let fy = f(y);
            if fy < fx {
                a = y;
                break;
            }
            b = x;
            x = y;
            fx = fy;
        }
    } else {
        a = (omega0 - h).max(0.0);
        b = omega0 + h;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut best = (omega0, f0);
    for w in [a, b, c, d] {
        let v = f(w);
        if v > best.1 {
            best = (w, v);
        }
    }
    if omega0 != 0.0 && f(0.0) > best.1 && a == 0.0 {
        best = (0.0, f(0.0));
    }
    best
}

/// Corrects every candidate and keeps the largest peak value.
pub fn correct_peaks(
    cl: &ClosedLoopSystem,
    xi0: f64,
    freqs: &[f64],
    tol: f64,
) -> Result<HinfResult> {
    let d_norm = feedthrough_norm(cl);
    let mut found: Vec<(f64, f64)> = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    for &w0 in freqs {
        // start from the exact singular value at the candidate so that the
        // initial eigenvector of H_xi(j w0) is a true null vector
        let s0 = sigma_max(cl, w0);
        let start_xi = if s0.is_finite() && s0 > 0.0 { s0 } else { xi0 };
        let corrected = correct_peak(cl, start_xi, w0, tol, 50);
        let mut accepted = None;
        if let Ok(cp) = &corrected {
            iterations += cp.iterations;
            if cp.converged {
                let s = sigma_max(cl, cp.omega);
                let delta = 1e-4 * (1.0 + cp.omega);
                let is_max = sigma_max(cl, cp.omega + delta) <= s * (1.0 + 1e-12)
                    && sigma_max(cl, (cp.omega - delta).max(0.0)) <= s * (1.0 + 1e-12);
                if s.is_finite()
                    && (s - cp.xi).abs() <= 1e-7 * s.max(1e-300)
                    && is_max
                    && s >= start_xi * (1.0 - 1e-12)
                {
                    accepted = Some((cp.omega, s));
                }
            }
        }
        let peak = match accepted {
            Some(p) => p,
            None => {
                converged = false;
                refine_peak_scalar(cl, w0)
            }
        };
        found.push(peak);
    }
    let best = found.iter().map(|p| p.1).fold(d_norm, f64::max);
    let mut peaks: Vec<Peak> = Vec::new();
    let push_peak = |omega: f64, peaks: &mut Vec<Peak>| -> Result<()> {
        if peaks.iter().any(|p| (p.omega - omega).abs() <= 1e-6 * (1.0 + omega.abs())) {
            return Ok(());
        }
        let triple = if omega.is_finite() {
            max_singular_value(cl, omega)?
        } else {
            triple_from_matrix(&cl.d.map(|x| C64::new(x, 0.0)), omega)
        };
        peaks.push(Peak { omega, sigma: triple.sigma, triple });
        Ok(())
    };
    for &(w, s) in &found {
        if s >= best * (1.0 - 1e-6) {
            push_peak(w, &mut peaks)?;
        }
    }
    if peaks.is_empty() || d_norm >= best * (1.0 - 1e-6) && d_norm > 0.0 && found.iter().all(|p| p.1 < d_norm * (1.0 + 1e-12)) {
        push_peak(f64::INFINITY, &mut peaks)?;
    }
    peaks.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    let norm = peaks.iter().map(|p| p.sigma).fold(0.0, f64::max).max(best);
    Ok(HinfResult { norm, peaks, n_used: 0, corrector_iterations: iterations, converged })
}

/// `||T_zw||_inf` by prediction on `L_xi^N` and correction, doubling `N`
/// until two corrected values agree.
pub fn hinf_norm(cl: &ClosedLoopSystem, opts: &HinfOptions) -> Result<HinfResult> {
    if opts.check_stability {
        let rep = spectral_abscissa(cl, &opts.stability)?;
        if rep.abscissa >= -opts.stability_margin {
            return Err(Error::Unstable { abscissa: rep.abscissa });
        }
    }
    let mut n_mesh = opts.n_start.max(1);
    let mut previous: Option<f64> = None;
    let mut best: Option<HinfResult> = None;
    loop {
        let pred = predict_norm(cl, n_mesh, opts)?;
        let mut res = correct_peaks(cl, pred.xi, &pred.candidates, opts.corrector_tol)?;
        res.n_used = n_mesh;
        if res.norm < pred.xi {
            // the predictor's value is itself a sampled sigma_1; never report less
            res.norm = pred.xi;
        }
        if opts.single_pass {
            return Ok(res);
        }
        let agreed = previous
            .map(|p| (res.norm - p).abs() <= opts.rel_tol * res.norm.max(f64::MIN_POSITIVE))
            .unwrap_or(false);
        let keep = best.as_ref().map(|b| res.norm >= b.norm).unwrap_or(true);
        previous = Some(res.norm);
        if keep {
            best = Some(res);
        }
        if agreed || cl.tau_max() == 0.0 {
            return Ok(best.expect("at least one pass"));
        }
        if n_mesh * 2 > opts.n_max {
            return Err(Error::DiscretizationCap {
                n_max: opts.n_max,
                best: best.map(|b| b.norm).unwrap_or(f64::NAN),
            });
        }
        n_mesh *= 2;
    }
}
