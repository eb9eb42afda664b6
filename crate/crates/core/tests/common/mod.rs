#![allow(dead_code)]

use std::path::PathBuf;

use delay_hinf::grad::{hinf_gradient_closed_loop, hinf_gradient_controller};
use delay_hinf::hinf::{hinf_norm, HinfOptions, HinfResult};
use delay_hinf::io::{read_controller, read_plant};
use delay_hinf::linalg::RMat;
use delay_hinf::model::{assemble_closed_loop, sigma_max, ClosedLoopSystem, ControllerRealization, TimeDelayPlant};
use delay_hinf::optim::DecisionVector;
use delay_hinf::stability::{abscissa_gradient, spectral_abscissa, StabilityOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(plant: &str, controller: &str) -> (TimeDelayPlant, ControllerRealization) {
    let p = read_plant(fixture(plant)).unwrap();
    let k = read_controller(fixture(controller), &p).unwrap();
    (p, k)
}

pub fn example1() -> (TimeDelayPlant, ControllerRealization) {
    load("example1_plant.json", "example1_controller.json")
}

pub fn example2() -> (TimeDelayPlant, ControllerRealization) {
    load("example2_plant.json", "example2_controller.json")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> RMat {
    RMat::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Random closed loop with `n <= 4` states and at most two delays, shifted
/// until its spectral abscissa is below `-0.05`.
pub fn random_stable_closed_loop(rng: &mut ChaCha8Rng) -> ClosedLoopSystem {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(0..=2);
    let nw = rng.random_range(1..=2);
    let nz = rng.random_range(1..=2);
    let mut a = vec![rand_mat(rng, n, n, 1.0)];
    for _ in 0..m {
        a.push(rand_mat(rng, n, n, 0.5));
    }
    let delays: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
    let b = rand_mat(rng, n, nw, 1.0);
    let c = rand_mat(rng, nz, n, 1.0);
    let d = if rng.random_bool(0.5) { rand_mat(rng, nz, nw, 0.3) } else { RMat::zeros(nz, nw) };
    let mut shift = 0.0;
    loop {
        let mut a_shifted = a.clone();
        a_shifted[0] -= RMat::identity(n, n) * shift;
        let cl = ClosedLoopSystem::new(a_shifted, delays.clone(), b.clone(), c.clone(), d.clone()).unwrap();
        let alpha = spectral_abscissa(&cl, &StabilityOptions::default()).unwrap().abscissa;
        if alpha < -0.05 {
            return cl;
        }
        shift += alpha + 0.3;
    }
}

/// Random plant and controller (`n <= 3`, `nK <= 2`, at most two distinct
/// delays: one state delay and a shared input/feedback delay).
pub fn random_plant_controller(rng: &mut ChaCha8Rng) -> (TimeDelayPlant, ControllerRealization) {
    let n = rng.random_range(1..=3);
    let nk = rng.random_range(1..=2);
    let m = rng.random_range(0..=1);
    let (nw, nu, nz, ny) = (rng.random_range(1..=2), 1, rng.random_range(1..=2), 1);
    let mut a = vec![rand_mat(rng, n, n, 1.0) - RMat::identity(n, n) * 2.0];
    for _ in 0..m {
        a.push(rand_mat(rng, n, n, 0.3));
    }
    let state_delays: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
    let io_delay = rng.random_range(0.0..0.5);
    let plant = TimeDelayPlant::new(
        state_delays,
        io_delay,
        io_delay,
        a,
        rand_mat(rng, n, nw, 1.0),
        rand_mat(rng, n, nu, 1.0),
        rand_mat(rng, nz, n, 1.0),
        rand_mat(rng, ny, n, 1.0),
        rand_mat(rng, nz, nw, 0.2),
        rand_mat(rng, nz, nu, 0.5),
        rand_mat(rng, ny, nw, 0.5),
        rand_mat(rng, ny, nu, 0.3),
    )
    .unwrap();
    let ak = rand_mat(rng, nk, nk, 0.5) - RMat::identity(nk, nk) * 1.5;
    let k = ControllerRealization::new(ak, rand_mat(rng, nk, ny, 0.5), rand_mat(rng, nu, nk, 0.5)).unwrap();
    (plant, k)
}

pub fn norm_of(plant: &TimeDelayPlant, k: &ControllerRealization) -> Option<HinfResult> {
    let cl = assemble_closed_loop(plant, k).ok()?;
    hinf_norm(&cl, &HinfOptions::default()).ok()
}

pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[derive(Debug)]
pub struct GradientCase {
    pub seed: u64,
    pub rel_error: f64,
}

fn unpack(plant: &TimeDelayPlant, nk: usize, x: &[f64]) -> ControllerRealization {
    DecisionVector(x.to_vec()).unpack(nk, plant.ny(), plant.nu()).unwrap()
}

/// H-infinity controller gradients against central differences on `count`
/// random instances with a unique finite peak and simple top singular value.
pub fn hinf_gradient_suite(count: usize) -> Vec<GradientCase> {
    let mut cases = Vec::new();
    let mut seed = 1000;
    while cases.len() < count {
        seed += 1;
        let mut r = rng(seed);
        let (plant, k) = random_plant_controller(&mut r);
        let Some(res) = norm_of(&plant, &k) else { continue };
        let cl = assemble_closed_loop(&plant, &k).unwrap();
        let clg = hinf_gradient_closed_loop(&cl, &res).unwrap();
        // smooth instances only: one finite peak, simple sigma_1, no rival
        // local maximum close in value
        let rivals = res.peaks.iter().filter(|p| p.sigma >= res.norm * (1.0 - 1e-3)).count();
        if !clg.smooth || !clg.omega.is_finite() || rivals > 1 {
            continue;
        }
        let g = hinf_gradient_controller(&plant, &k, &clg).unwrap();
        let analytic = DecisionVector::pack(&ControllerRealization { ak: g.d_ak, bk: g.d_bk, ck: g.d_ck }).0;
        let x = DecisionVector::pack(&k).0;
        let nk = k.nk();
        let mut ok = true;
        let fd = central_difference(&x, 1e-6, |xp| match norm_of(&plant, &unpack(&plant, nk, xp)) {
            Some(r) => r.norm,
            None => {
                ok = false;
                f64::NAN
            }
        });
        if !ok {
            continue;
        }
        cases.push(GradientCase { seed, rel_error: relative_error(&analytic, &fd) });
    }
    cases
}

/// Spectral abscissa controller gradients against central differences on
/// `count` random instances whose rightmost root is simple and unique.
pub fn abscissa_gradient_suite(count: usize) -> Vec<GradientCase> {
    let opts = StabilityOptions::default();
    let alpha = |plant: &TimeDelayPlant, k: &ControllerRealization| {
        spectral_abscissa(&assemble_closed_loop(plant, k).unwrap(), &opts).map(|r| r.abscissa).unwrap_or(f64::NAN)
    };
    let mut cases = Vec::new();
    let mut seed = 5000;
    while cases.len() < count {
        seed += 1;
        let mut r = rng(seed);
        let (plant, k) = random_plant_controller(&mut r);
        let cl = assemble_closed_loop(&plant, &k).unwrap();
        let Ok(rep) = spectral_abscissa(&cl, &opts) else { continue };
        // skip ties between distinct rightmost roots, including a real root
        // level with a complex pair
        let top = rep.rightmost_roots[0].re;
        let tied = rep.rightmost_roots.iter().filter(|r| r.re >= top - 1e-4).count() > 1;
        if rep.nonsmooth || tied {
            continue;
        }
        let Ok(g) = abscissa_gradient(&plant, &k, &rep) else { continue };
        let analytic = DecisionVector::pack(&ControllerRealization { ak: g.d_ak, bk: g.d_bk, ck: g.d_ck }).0;
        let x = DecisionVector::pack(&k).0;
        let nk = k.nk();
        let fd = central_difference(&x, 1e-6, |xp| alpha(&plant, &unpack(&plant, nk, xp)));
        if fd.iter().any(|v| !v.is_finite()) {
            continue;
        }
        cases.push(GradientCase { seed, rel_error: relative_error(&analytic, &fd) });
    }
    cases
}

/// `[0, omega_cap]` grid maximum of the top singular value.
pub fn grid_maximum(cl: &ClosedLoopSystem, points: usize) -> f64 {
    let mut cap = delay_hinf::linalg::real_spectral_norm(&cl.a[0]);
    for a in &cl.a[1..] {
        cap += delay_hinf::linalg::real_spectral_norm(a);
    }
    let cap = 10.0 * cap.max(1e-3);
    (0..points).map(|i| sigma_max(cl, cap * i as f64 / (points - 1) as f64)).fold(0.0, f64::max)
}

/// Every system the oracle and invariant suites run on: the fixture closed
/// loops followed by `random` seeded random stable closed loops.
pub fn corpus(random: usize) -> Vec<(String, ClosedLoopSystem)> {
    let mut out = Vec::new();
    for (name, (p, k)) in [("example1", example1()), ("example2", example2())] {
        out.push((name.to_string(), assemble_closed_loop(&p, &k).unwrap()));
    }
    for name in ["decay_plant.json", "delayed_decay_plant.json"] {
        let p = read_plant(fixture(name)).unwrap();
        let k = ControllerRealization::zero_order(&p);
        out.push((name.to_string(), assemble_closed_loop(&p, &k).unwrap()));
    }
    let mut r = rng(77);
    for i in 0..random {
        out.push((format!("random-{i}"), random_stable_closed_loop(&mut r)));
    }
    out
}

use delay_hinf::hinf::{axis_crossings, build_hamiltonian_triple};
use delay_hinf::linalg::{smallest_singular, spectral_norm, C64};
use delay_hinf::model::singular_values;

/// For random stable closed loops, random `omega` and `xi` equal to one of
/// the singular values of `T(j omega)`, `H_xi(j omega)` is singular.
/// Returns the worst ratio `sigma_min(H) / ||H||`.
pub fn singular_level_trials(trials: usize) -> f64 {
    let mut r = rng(4242);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let cl = random_stable_closed_loop(&mut r);
        let omega = r.random_range(0.0..5.0);
        let sv = singular_values(&cl, omega).unwrap();
        let xi = sv[r.random_range(0..sv.len())];
        let Ok(ham) = build_hamiltonian_triple(&cl, xi) else { continue };
        let h = ham.h(C64::new(0.0, omega));
        let (smin, _, _) = smallest_singular(&h);
        worst = worst.max(smin / spectral_norm(&h));
        done += 1;
    }
    worst
}

/// `sigma_min(H_xi(lambda)) = sigma_min(H_xi(-lambda))` on the corpus.
pub fn hamiltonian_symmetry_failures(corpus: &[(String, ClosedLoopSystem)]) -> Vec<String> {
    let mut r = rng(99);
    let mut failures = Vec::new();
    for (name, cl) in corpus {
        for _ in 0..5 {
            let xi = r.random_range(0.1..3.0);
            let Ok(ham) = build_hamiltonian_triple(cl, xi) else { continue };
            let lambda = C64::new(r.random_range(-1.0..1.0), r.random_range(-5.0..5.0));
            let (a, _, _) = smallest_singular(&ham.h(lambda));
            let (b, _, _) = smallest_singular(&ham.h(-lambda));
            if (a - b).abs() > 1e-10 * a.max(b) {
                failures.push(format!("{name}: xi = {xi}, lambda = {lambda}: {a} vs {b}"));
            }
        }
    }
    failures
}

/// Axis crossings of `L_xi^N` just below the norm and none just above.
pub fn bracketing_failures(corpus: &[(String, ClosedLoopSystem)]) -> Vec<String> {
    let opts = HinfOptions::default();
    let mut failures = Vec::new();
    for (name, cl) in corpus {
        let res = hinf_norm(cl, &opts).unwrap();
        let xi = res.norm;
        let d = delay_hinf::linalg::real_spectral_norm(&cl.d);
        if xi <= d * (1.0 + 1e-3) {
            continue;
        }
        let below = axis_crossings(cl, xi * (1.0 - 1e-3), res.n_used, opts.axis_tol).unwrap();
        let above = axis_crossings(cl, xi * (1.0 + 1e-3), res.n_used, opts.axis_tol).unwrap();
        if below.is_empty() {
            failures.push(format!("{name}: no crossing below xi = {xi}"));
        }
        if !above.is_empty() {
            failures.push(format!("{name}: crossings {above:?} above xi = {xi}"));
        }
    }
    failures
}

/// Dense-grid maximum lies in `[xi (1 - 1e-3), xi + 1e-6]`.
pub fn oracle_failures(corpus: &[(String, ClosedLoopSystem)]) -> Vec<String> {
    let mut failures = Vec::new();
    for (name, cl) in corpus {
        let xi = hinf_norm(cl, &HinfOptions::default()).unwrap().norm;
        let grid = grid_maximum(cl, 10_000);
        if !(grid <= xi + 1e-6 && grid >= xi * (1.0 - 1e-3)) {
            failures.push(format!("{name}: norm {xi}, grid maximum {grid}"));
        }
    }
    failures
}

/// Corrected peaks are local maxima of the top singular value.
pub fn local_max_failures(corpus: &[(String, ClosedLoopSystem)]) -> Vec<String> {
    let mut failures = Vec::new();
    for (name, cl) in corpus {
        let res = hinf_norm(cl, &HinfOptions::default()).unwrap();
        for p in res.peaks.iter().filter(|p| p.omega.is_finite()) {
            let delta = 1e-4 * (1.0 + p.omega);
            for w in [p.omega + delta, (p.omega - delta).max(0.0)] {
                let s = sigma_max(cl, w);
                if s > res.norm + 1e-10 {
                    failures.push(format!("{name}: sigma({w}) = {s} exceeds {}", res.norm));
                }
            }
        }
    }
    failures
}
