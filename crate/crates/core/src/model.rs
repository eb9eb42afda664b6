//! Plant, controller and closed-loop data types.
//!
//! The plant is the retarded time-delay system
//!
//! ```text
//! x'(t) = A0 x(t) + sum_i Ai x(t - tau_i) + B1 w(t) + B2 u(t - tau_in)
//! z(t)  = C1 x(t) + D11 w(t) + D12 u(t)
//! y(t)  = C2 x(t) + D21 w(t) + D22 u(t - tau_fb)
//! ```
//!
//! closed by the strictly proper controller `xK' = AK xK + BK y`, `u = CK xK`.
//! The closed loop keeps one delay entry per plant delay plus the input and
//! feedthrough delays, even when those are zero.

use crate::error::{Error, Result};
use crate::linalg::{lu_solve, svd, to_complex, CMat, CVec, RMat, C64, J};

/// Relative gap below which the largest singular value is treated as repeated.
pub const MULTIPLICITY_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDelayPlant {
    /// `tau_1 .. tau_m`.
    pub state_delays: Vec<f64>,
    /// `tau_{m+1}`, acting on `u` in the state equation.
    pub input_delay: f64,
    /// `tau_{m+2}`, acting on `u` in the measured output.
    pub feedthrough_delay: f64,
    /// `A0 .. Am`.
    pub a: Vec<RMat>,
    pub b1: RMat,
    pub b2: RMat,
    pub c1: RMat,
    pub c2: RMat,
    pub d11: RMat,
    pub d12: RMat,
    pub d21: RMat,
    pub d22: RMat,
}

fn check_shape(name: &str, m: &RMat, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_delay(name: &str, tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be finite and nonnegative, got {tau}"
        )));
    }
    Ok(())
}

impl TimeDelayPlant {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_delays: Vec<f64>,
        input_delay: f64,
        feedthrough_delay: f64,
        a: Vec<RMat>,
        b1: RMat,
        b2: RMat,
        c1: RMat,
        c2: RMat,
        d11: RMat,
        d12: RMat,
        d21: RMat,
        d22: RMat,
    ) -> Result<Self> {
        let plant = Self {
            state_delays,
            input_delay,
            feedthrough_delay,
            a,
            b1,
            b2,
            c1,
            c2,
            d11,
            d12,
            d21,
            d22,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.state_delays.len() + 1 {
            return Err(Error::Dimension(format!(
                "A has {} matrices but there are {} state delays (expected {})",
                self.a.len(),
                self.state_delays.len(),
                self.state_delays.len() + 1
            )));
        }
        for (i, &tau) in self.state_delays.iter().enumerate() {
            check_delay(&format!("state_delays[{i}]"), tau)?;
        }
        check_delay("input_delay", self.input_delay)?;
        check_delay("feedthrough_delay", self.feedthrough_delay)?;

        let n = self.a[0].nrows();
        for (i, ai) in self.a.iter().enumerate() {
            check_shape(&format!("A[{i}]"), ai, n, n)?;
        }
        let (nw, nu, nz, ny) = (self.b1.ncols(), self.b2.ncols(), self.c1.nrows(), self.c2.nrows());
        check_shape("B1", &self.b1, n, nw)?;
        check_shape("B2", &self.b2, n, nu)?;
        check_shape("C1", &self.c1, nz, n)?;
        check_shape("C2", &self.c2, ny, n)?;
        check_shape("D11", &self.d11, nz, nw)?;
        check_shape("D12", &self.d12, nz, nu)?;
        check_shape("D21", &self.d21, ny, nw)?;
        check_shape("D22", &self.d22, ny, nu)?;
        let finite = self
            .a
            .iter()
            .chain([&self.b1, &self.b2, &self.c1, &self.c2, &self.d11, &self.d12, &self.d21, &self.d22])
            .all(|m| m.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("plant matrices contain non-finite entries".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn nw(&self) -> usize {
        self.b1.ncols()
    }
    pub fn nu(&self) -> usize {
        self.b2.ncols()
    }
    pub fn nz(&self) -> usize {
        self.c1.nrows()
    }
    pub fn ny(&self) -> usize {
        self.c2.nrows()
    }
    /// Number of state delays `m`.
    pub fn m(&self) -> usize {
        self.state_delays.len()
    }
}

/// Strictly proper dynamic controller of order `nK`.
///
/// `nK = 0` is accepted and means `u = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub ak: RMat,
    pub bk: RMat,
    pub ck: RMat,
}

impl ControllerRealization {
    pub fn new(ak: RMat, bk: RMat, ck: RMat) -> Result<Self> {
        let nk = ak.nrows();
        check_shape("AK", &ak, nk, nk)?;
        if bk.nrows() != nk {
            return Err(Error::Dimension(format!("BK has {} rows, expected {nk}", bk.nrows())));
        }
        if ck.ncols() != nk {
            return Err(Error::Dimension(format!("CK has {} columns, expected {nk}", ck.ncols())));
        }
        Ok(Self { ak, bk, ck })
    }

    /// The `u = 0` controller of order zero for `plant`.
    pub fn zero_order(plant: &TimeDelayPlant) -> Self {
        Self {
            ak: RMat::zeros(0, 0),
            bk: RMat::zeros(0, plant.ny()),
            ck: RMat::zeros(plant.nu(), 0),
        }
    }

    pub fn nk(&self) -> usize {
        self.ak.nrows()
    }

    pub fn check_against(&self, plant: &TimeDelayPlant) -> Result<()> {
        let nk = self.nk();
        check_shape("AK", &self.ak, nk, nk)?;
        check_shape("BK", &self.bk, nk, plant.ny())?;
        check_shape("CK", &self.ck, plant.nu(), nk)?;
        Ok(())
    }
}

/// Retarded closed loop `x' = A0 x + sum_i Ai x(t - tau_i) + B w`, `z = C x + D w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    /// `tau_1 .. tau_{m+2}`; zeros kept.
    pub delays: Vec<f64>,
    /// `A_cl,0 .. A_cl,m+2`.
    pub a: Vec<RMat>,
    pub b: RMat,
    pub c: RMat,
    pub d: RMat,
}

impl ClosedLoopSystem {
    /// Builds a closed loop directly from its matrices. `a.len()` must equal
    /// `delays.len() + 1`.
    pub fn new(a: Vec<RMat>, delays: Vec<f64>, b: RMat, c: RMat, d: RMat) -> Result<Self> {
        if a.is_empty() || a.len() != delays.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} state matrices for {} delays",
                a.len(),
                delays.len()
            )));
        }
        for (i, &tau) in delays.iter().enumerate() {
            check_delay(&format!("delays[{i}]"), tau)?;
        }
        let n = a[0].nrows();
        for (i, ai) in a.iter().enumerate() {
            check_shape(&format!("A_cl[{i}]"), ai, n, n)?;
        }
        check_shape("B_cl", &b, n, b.ncols())?;
        check_shape("C_cl", &c, c.nrows(), n)?;
        check_shape("D_cl", &d, c.nrows(), b.ncols())?;
        Ok(Self { delays, a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }
    pub fn nw(&self) -> usize {
        self.b.ncols()
    }
    pub fn nz(&self) -> usize {
        self.c.nrows()
    }
    pub fn tau_max(&self) -> f64 {
        self.delays.iter().copied().fold(0.0, f64::max)
    }

    /// `A(lambda) = A0 + sum_i Ai exp(-lambda tau_i)`.
    pub fn delayed_state_matrix(&self, lambda: C64) -> CMat {
        let mut m = to_complex(&self.a[0]);
        for (ai, &tau) in self.a[1..].iter().zip(&self.delays) {
            let e = (-lambda * tau).exp();
            m.zip_apply(ai, |z, x| *z += e * x);
        }
        m
    }

    /// Characteristic matrix `M(lambda) = lambda I - A0 - sum_i Ai exp(-lambda tau_i)`.
    pub fn characteristic_matrix(&self, lambda: C64) -> CMat {
        let n = self.n();
        let mut m = -self.delayed_state_matrix(lambda);
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        m
    }

    /// `dM/dlambda = I + sum_i tau_i Ai exp(-lambda tau_i)`.
    pub fn characteristic_derivative(&self, lambda: C64) -> CMat {
        let n = self.n();
        let mut m = CMat::identity(n, n);
        for (ai, &tau) in self.a[1..].iter().zip(&self.delays) {
            let e = (-lambda * tau).exp() * tau;
            m.zip_apply(ai, |z, x| *z += e * x);
        }
        m
    }

    /// Sum of 2-norms of all state matrices.
    pub fn state_scale(&self) -> f64 {
        self.a.iter().map(crate::linalg::real_spectral_norm).sum()
    }
}

fn put(dst: &mut RMat, r: usize, c: usize, src: &RMat) {
    dst.view_mut((r, c), src.shape()).copy_from(src);
}

/// Interconnects `plant` and `controller`.
pub fn assemble_closed_loop(
    plant: &TimeDelayPlant,
    controller: &ControllerRealization,
) -> Result<ClosedLoopSystem> {
    plant.validate()?;
    controller.check_against(plant)?;
    let n = plant.n();
    let nk = controller.nk();
    let ncl = n + nk;
    let (ak, bk, ck) = (&controller.ak, &controller.bk, &controller.ck);

    let mut a = Vec::with_capacity(plant.m() + 3);
    let mut a0 = RMat::zeros(ncl, ncl);
    put(&mut a0, 0, 0, &plant.a[0]);
    put(&mut a0, n, 0, &(bk * &plant.c2));
    put(&mut a0, n, n, ak);
    a.push(a0);
    for ai in &plant.a[1..] {
        let mut m = RMat::zeros(ncl, ncl);
        put(&mut m, 0, 0, ai);
        a.push(m);
    }
    let mut a_in = RMat::zeros(ncl, ncl);
    put(&mut a_in, 0, n, &(&plant.b2 * ck));
    a.push(a_in);
    let mut a_fb = RMat::zeros(ncl, ncl);
    put(&mut a_fb, n, n, &(bk * &plant.d22 * ck));
    a.push(a_fb);

    let mut b = RMat::zeros(ncl, plant.nw());
    put(&mut b, 0, 0, &plant.b1);
    put(&mut b, n, 0, &(bk * &plant.d21));
    let mut c = RMat::zeros(plant.nz(), ncl);
    put(&mut c, 0, 0, &plant.c1);
    put(&mut c, 0, n, &(&plant.d12 * ck));

    let mut delays = plant.state_delays.clone();
    delays.push(plant.input_delay);
    delays.push(plant.feedthrough_delay);

    ClosedLoopSystem::new(a, delays, b, c, plant.d11.clone())
}

/// `T_zw(j omega)`, via one LU solve of the resolvent against `B_cl`.
pub fn evaluate_transfer(cl: &ClosedLoopSystem, omega: f64) -> Result<CMat> {
    let s = J * omega;
    let m = cl.characteristic_matrix(s);
    let x = if cl.n() == 0 {
        CMat::zeros(0, cl.nw())
    } else {
        lu_solve(&m, &to_complex(&cl.b)).ok_or(Error::SingularResolvent { omega })?
    };
    Ok(to_complex(&cl.c) * x + to_complex(&cl.d))
}

/// Largest singular value of `T_zw(j omega)` with unit singular vectors:
/// `T w_r = sigma w_l`, `w_l^* T = sigma w_r^*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriple {
    pub omega: f64,
    pub sigma: f64,
    pub w_l: CVec,
    pub w_r: CVec,
    /// Set when the second singular value lies within `MULTIPLICITY_GAP * sigma`.
    pub multiple: bool,
}

pub fn max_singular_value(cl: &ClosedLoopSystem, omega: f64) -> Result<SingularTriple> {
    let t = evaluate_transfer(cl, omega)?;
    Ok(triple_from_matrix(&t, omega))
}

pub(crate) fn triple_from_matrix(t: &CMat, omega: f64) -> SingularTriple {
    if t.is_empty() {
        return SingularTriple {
            omega,
            sigma: 0.0,
            w_l: CVec::zeros(t.nrows()),
            w_r: CVec::zeros(t.ncols()),
            multiple: false,
        };
    }
    let d = svd(t);
    let sigma = d.s[0];
    let multiple = d.s.len() > 1 && (sigma - d.s[1]) < MULTIPLICITY_GAP * sigma;
    SingularTriple {
        omega,
        sigma,
        w_l: d.u.column(0).into_owned(),
        w_r: d.v.column(0).into_owned(),
        multiple,
    }
}

/// All singular values of `T_zw(j omega)`, descending.
pub fn singular_values(cl: &ClosedLoopSystem, omega: f64) -> Result<Vec<f64>> {
    let t = evaluate_transfer(cl, omega)?;
    Ok(svd(&t).s)
}

/// `sigma_1(T_zw(j omega))`, or `+inf` where the resolvent is singular.
pub fn sigma_max(cl: &ClosedLoopSystem, omega: f64) -> f64 {
    match evaluate_transfer(cl, omega) {
        Ok(t) if t.is_empty() => 0.0,
        Ok(t) => svd(&t).s[0],
        Err(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> RMat {
        RMat::from_element(1, 1, x)
    }

    pub(crate) fn example1_plant() -> TimeDelayPlant {
        TimeDelayPlant::new(
            vec![1.0],
            0.0,
            0.0,
            vec![s(-1.0), s(-0.5)],
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
            s(0.0),
            s(1.0),
            s(1.0),
            s(0.0),
        )
        .unwrap()
    }

    fn example1_controller() -> ControllerRealization {
        ControllerRealization::new(s(-3.61), s(1.39), s(-0.83)).unwrap()
    }

    #[test]
    fn example1_closed_loop_blocks() {
        let cl = assemble_closed_loop(&example1_plant(), &example1_controller()).unwrap();
        assert_eq!(cl.delays, vec![1.0, 0.0, 0.0]);
        assert_eq!(cl.a[0], RMat::from_row_slice(2, 2, &[-1.0, 0.0, 1.39, -3.61]));
        assert_eq!(cl.a[1], RMat::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 0.0]));
        assert_eq!(cl.a[2], RMat::from_row_slice(2, 2, &[0.0, -0.83, 0.0, 0.0]));
        assert_eq!(cl.a[3], RMat::zeros(2, 2));
        assert_eq!(cl.b, RMat::from_row_slice(2, 1, &[1.0, 1.39]));
        assert_eq!(cl.c, RMat::from_row_slice(1, 2, &[1.0, -0.83]));
        assert_eq!(cl.d, s(0.0));
    }

    #[test]
    fn example1_dc_gain() {
        let cl = assemble_closed_loop(&example1_plant(), &example1_controller()).unwrap();
        let t = evaluate_transfer(&cl, 0.0).unwrap();
        // M(0) = [[1.5, 0.83], [-1.39, 3.61]], x = M(0)^{-1} [1; 1.39],
        // det = 5.415 + 1.1537 = 6.5687, x1 = (3.61 - 1.1537)/det, x2 = (1.5*1.39 + 1.39)/det
        let det = 1.5 * 3.61 + 0.83 * 1.39;
        let x1 = (3.61 * 1.0 - 0.83 * 1.39) / det;
        let x2 = (1.5 * 1.39 + 1.39 * 1.0) / det;
        let expected = x1 - 0.83 * x2;
        assert!((t[(0, 0)].re - expected).abs() < 1e-14);
        assert!(t[(0, 0)].im.abs() < 1e-14);
        assert!((expected + 0.0652).abs() < 1e-3);
    }

    #[test]
    fn controller_dimension_error_names_matrix() {
        let bad = ControllerRealization::new(s(-1.0), RMat::zeros(1, 2), s(1.0)).unwrap();
        let err = assemble_closed_loop(&example1_plant(), &bad).unwrap_err();
        assert!(err.to_string().contains("BK"), "{err}");
    }

    #[test]
    fn zero_coupling_gives_open_loop_transfer() {
        let plant = example1_plant();
        let k = ControllerRealization::new(s(-2.0), s(0.0), s(0.0)).unwrap();
        let cl = assemble_closed_loop(&plant, &k).unwrap();
        let open = assemble_closed_loop(&plant, &ControllerRealization::zero_order(&plant)).unwrap();
        for &w in &[0.0, 0.3, 2.0, 11.0] {
            let a = evaluate_transfer(&cl, w).unwrap();
            let b = evaluate_transfer(&open, w).unwrap();
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_output_matrix_gives_feedthrough() {
        let d = RMat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let cl = ClosedLoopSystem::new(
            vec![s(-1.0), RMat::zeros(1, 1)],
            vec![0.5],
            RMat::from_element(1, 2, 1.0),
            RMat::zeros(2, 1),
            d.clone(),
        )
        .unwrap();
        for &w in &[0.0, 1.0, 100.0] {
            assert!((evaluate_transfer(&cl, w).unwrap() - to_complex(&d)).norm() < 1e-15);
        }
        let t = max_singular_value(&cl, 0.7).unwrap();
        assert!((t.sigma - 2.0).abs() < 1e-14);
        assert!((t.w_l[0].norm() - 1.0).abs() < 1e-14);
        assert!((t.w_r[0].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn first_order_lag() {
        let cl = ClosedLoopSystem::new(vec![s(-1.0)], vec![], s(1.0), s(1.0), s(0.0)).unwrap();
        assert!((evaluate_transfer(&cl, 0.0).unwrap()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((max_singular_value(&cl, 0.0).unwrap().sigma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_resolvent_is_reported() {
        let cl = ClosedLoopSystem::new(vec![s(0.0)], vec![], s(1.0), s(1.0), s(0.0)).unwrap();
        assert!(matches!(evaluate_transfer(&cl, 0.0), Err(Error::SingularResolvent { .. })));
    }

    #[test]
    fn singular_triple_relations() {
        let cl = assemble_closed_loop(&example1_plant(), &example1_controller()).unwrap();
        let t = evaluate_transfer(&cl, 0.9).unwrap();
        let tr = max_singular_value(&cl, 0.9).unwrap();
        let lhs = &t * &tr.w_r;
        let rhs = tr.w_l.clone() * C64::new(tr.sigma, 0.0);
        assert!((lhs - rhs).norm() < 1e-13);
    }
}
