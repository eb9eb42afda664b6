//! Gradients of the H-infinity norm with respect to the closed-loop matrices
//! and, through the interconnection structure, the controller matrices.
//!
//! At a peak `(omega, xi)` with unit singular vectors `w_l`, `w_r` and
//! resolvent `M = (j omega I - A0 - sum_i Ai exp(-j omega tau_i))^{-1}`:
//!
//! ```text
//! df/dA0  = Re(M^* C^T w_l w_r^* B^T M^*) / (w_r^* w_r)
//! df/dAi  = Re(M^* C^T w_l w_r^* B^T M^* exp(j omega tau_i)) / (w_r^* w_r)
//! df/dB   = Re(M^* C^T w_l w_r^*) / (w_r^* w_r)
//! df/dC   = Re(w_l w_r^* B^T M^*) / (w_r^* w_r)
//! df/dD   = Re(w_l w_r^*) / (w_r^* w_r)
//! ```

use crate::error::{Error, Result};
use crate::hinf::{HinfResult, Peak};
use crate::linalg::{lu_solve_vec, to_complex, CMat, RMat, J};
use crate::model::{ClosedLoopSystem, ControllerRealization, TimeDelayPlant};

/// Relative tie tolerance between peaks.
pub const PEAK_TIE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ClosedLoopGradient {
    /// `df/dA_cl,0 .. df/dA_cl,m+2`.
    pub d_acl: Vec<RMat>,
    pub d_bcl: RMat,
    pub d_ccl: RMat,
    pub d_dcl: RMat,
    pub omega: f64,
    pub xi: f64,
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGradient {
    pub d_ak: RMat,
    pub d_bk: RMat,
    pub d_ck: RMat,
    pub smooth: bool,
}

impl ControllerGradient {
    pub fn norm(&self) -> f64 {
        (self.d_ak.norm_squared() + self.d_bk.norm_squared() + self.d_ck.norm_squared()).sqrt()
    }
}

fn pick_peak(result: &HinfResult) -> Option<&Peak> {
    result
        .peaks
        .iter()
        .max_by(|a, b| a.sigma.total_cmp(&b.sigma).then(b.omega.total_cmp(&a.omega)))
}

pub fn hinf_gradient_closed_loop(cl: &ClosedLoopSystem, result: &HinfResult) -> Result<ClosedLoopGradient> {
    let peak = pick_peak(result).ok_or(Error::NoPeak)?;
    let tr = &peak.triple;
    let n = cl.n();
    let wrwr = tr.w_r.norm_squared();
    let tied = result
        .peaks
        .iter()
        .filter(|p| p.sigma >= peak.sigma * (1.0 - PEAK_TIE))
        .count()
        > 1;
    let smooth = !tied && !tr.multiple;
    // w_l w_r^*
    let outer = &tr.w_l * tr.w_r.adjoint();
    let d_dcl = outer.map(|z| z.re / wrwr);

    if !peak.omega.is_finite() {
        // supremum reached only as omega -> infinity: only D_cl matters
        return Ok(ClosedLoopGradient {
            d_acl: vec![RMat::zeros(n, n); cl.a.len()],
            d_bcl: RMat::zeros(n, cl.nw()),
            d_ccl: RMat::zeros(cl.nz(), n),
            d_dcl,
            omega: peak.omega,
            xi: peak.sigma,
            smooth,
        });
    }

    let omega = peak.omega;
    let m_inv = cl.characteristic_matrix(J * omega);
    let ct = to_complex(&cl.c.transpose());
    // p = M^* C^T w_l  solves  (j omega I - A(j omega))^* p = C^T w_l
    let p = lu_solve_vec(&m_inv.adjoint(), &(ct * &tr.w_l)).ok_or(Error::SingularResolvent { omega })?;
    // q = M B w_r, so that w_r^* B^T M^* = q^*
    let q = lu_solve_vec(&m_inv, &(to_complex(&cl.b) * &tr.w_r)).ok_or(Error::SingularResolvent { omega })?;
    let core: CMat = &p * q.adjoint();
    let mut d_acl = Vec::with_capacity(cl.a.len());
    d_acl.push(core.map(|z| z.re / wrwr));
    for &tau in &cl.delays {
        let e = (J * omega * tau).exp();
        d_acl.push(core.map(|z| (z * e).re / wrwr));
    }
    let d_bcl = (&p * tr.w_r.adjoint()).map(|z| z.re / wrwr);
    let d_ccl = (&tr.w_l * q.adjoint()).map(|z| z.re / wrwr);
    Ok(ClosedLoopGradient { d_acl, d_bcl, d_ccl, d_dcl, omega, xi: peak.sigma, smooth })
}

/// Maps closed-loop sensitivities to the controller matrices.
pub fn controller_gradient_from_closed_loop(
    plant: &TimeDelayPlant,
    controller: &ControllerRealization,
    d_acl: &[RMat],
    d_bcl: &RMat,
    d_ccl: &RMat,
) -> Result<ControllerGradient> {
    controller.check_against(plant)?;
    let n = plant.n();
    let nk = controller.nk();
    let m = plant.m();
    if d_acl.len() != m + 3 {
        return Err(Error::Dimension(format!(
            "{} closed-loop state gradients, expected {}",
            d_acl.len(),
            m + 3
        )));
    }
    for (i, g) in d_acl.iter().enumerate() {
        if g.shape() != (n + nk, n + nk) {
            return Err(Error::Dimension(format!("dA_cl[{i}] has wrong shape")));
        }
    }
    if d_bcl.shape() != (n + nk, plant.nw()) || d_ccl.shape() != (plant.nz(), n + nk) {
        return Err(Error::Dimension("dB_cl or dC_cl has wrong shape".into()));
    }
    let a0 = &d_acl[0];
    let a_in = &d_acl[m + 1];
    let a_fb = &d_acl[m + 2];
    // [0 I] dA [0; I] etc.
    let lower_right = |g: &RMat| g.view((n, n), (nk, nk)).into_owned();
    let lower_left = |g: &RMat| g.view((n, 0), (nk, n)).into_owned();
    let upper_right = |g: &RMat| g.view((0, n), (n, nk)).into_owned();

    let d_ak = lower_right(a0);
    let d_bk = lower_left(a0) * plant.c2.transpose()
        + lower_right(a_fb) * controller.ck.transpose() * plant.d22.transpose()
        + d_bcl.view((n, 0), (nk, plant.nw())) * plant.d21.transpose();
    let d_ck = plant.b2.transpose() * upper_right(a_in)
        + plant.d22.transpose() * controller.bk.transpose() * lower_right(a_fb)
        + plant.d12.transpose() * d_ccl.view((0, n), (plant.nz(), nk));
    Ok(ControllerGradient { d_ak, d_bk, d_ck, smooth: true })
}

pub fn hinf_gradient_controller(
    plant: &TimeDelayPlant,
    controller: &ControllerRealization,
    clg: &ClosedLoopGradient,
) -> Result<ControllerGradient> {
    let mut g = controller_gradient_from_closed_loop(plant, controller, &clg.d_acl, &clg.d_bcl, &clg.d_ccl)?;
    g.smooth = clg.smooth;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hinf::{hinf_norm, HinfOptions};
    use crate::model::assemble_closed_loop;

    fn s(x: f64) -> RMat {
        RMat::from_element(1, 1, x)
    }

    #[test]
    fn static_gain() {
        let cl = ClosedLoopSystem::new(vec![s(-1.0)], vec![], s(0.0), s(0.0), s(0.7)).unwrap();
        let r = hinf_norm(&cl, &HinfOptions::default()).unwrap();
        let g = hinf_gradient_closed_loop(&cl, &r).unwrap();
        assert!((g.d_dcl[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn first_order_lag_state_derivative() {
        // f(a) = -1/a at a = -1, df/da = 1/a^2 = 1
        let cl = ClosedLoopSystem::new(vec![s(-1.0), s(0.0)], vec![0.5], s(1.0), s(1.0), s(0.0)).unwrap();
        let r = hinf_norm(&cl, &HinfOptions::default()).unwrap();
        let g = hinf_gradient_closed_loop(&cl, &r).unwrap();
        assert!((g.d_acl[0][(0, 0)] - 1.0).abs() < 1e-8);
        // omega = 0: delayed blocks share the undelayed gradient
        assert!((g.d_acl[1][(0, 0)] - g.d_acl[0][(0, 0)]).abs() < 1e-8);
        assert!((g.d_bcl[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((g.d_ccl[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn chain_rule_drops_vanishing_terms() {
        let plant = TimeDelayPlant::new(
            vec![],
            0.1,
            0.2,
            vec![RMat::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -2.0])],
            RMat::from_row_slice(2, 1, &[1.0, 0.0]),
            RMat::from_row_slice(2, 1, &[0.0, 1.0]),
            RMat::from_row_slice(1, 2, &[1.0, 1.0]),
            RMat::from_row_slice(1, 2, &[1.0, 0.0]),
            s(0.0),
            s(1.0),
            s(0.0),
            s(0.0),
        )
        .unwrap();
        let k = ControllerRealization::new(s(-1.0), s(0.3), s(-0.2)).unwrap();
        let ncl = 3;
        let d_acl: Vec<RMat> = (0..3).map(|i| RMat::from_fn(ncl, ncl, |r, c| (i * 9 + r * 3 + c) as f64)).collect();
        let d_b = RMat::from_fn(ncl, 1, |r, _| 100.0 + r as f64);
        let d_c = RMat::from_fn(1, ncl, |_, c| 200.0 + c as f64);
        let g = controller_gradient_from_closed_loop(&plant, &k, &d_acl, &d_b, &d_c).unwrap();
        // lower-left of dA0 is row 2, cols 0..2 = [6, 7]; C2^T = [1; 0]
        assert_eq!(g.d_bk[(0, 0)], 6.0);
        assert_eq!(g.d_ak[(0, 0)], 8.0);
        let _ = assemble_closed_loop(&plant, &k).unwrap();
    }
}
