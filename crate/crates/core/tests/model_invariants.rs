mod common;

use common::*;
use delay_hinf::linalg::{svd, C64};
use delay_hinf::model::{assemble_closed_loop, evaluate_transfer, max_singular_value};
use rand::Rng;

#[test]
fn conjugate_symmetry() {
    let mut r = rng(11);
    for _ in 0..5 {
        let cl = random_stable_closed_loop(&mut r);
        for _ in 0..20 {
            let w = r.random_range(0.0..10.0);
            let pos = evaluate_transfer(&cl, w).unwrap();
            let neg = evaluate_transfer(&cl, -w).unwrap();
            assert!((pos.map(|z: C64| z.conj()) - neg).camax() <= 1e-12 * (1.0 + pos.camax()));
        }
    }
}

#[test]
fn top_singular_value_matches_reference_svd() {
    let mut r = rng(12);
    for _ in 0..10 {
        let cl = random_stable_closed_loop(&mut r);
        let w = r.random_range(0.0..10.0);
        let t = evaluate_transfer(&cl, w).unwrap();
        let reference = t.clone().svd(false, false).singular_values.max();
        let ours = max_singular_value(&cl, w).unwrap().sigma;
        assert!((ours - reference).abs() <= 1e-12 * reference, "{ours} vs {reference}");
        assert_eq!(svd(&t).s[0], ours);
    }
}

#[test]
fn assembly_blocks_for_random_pairs() {
    let mut r = rng(13);
    for _ in 0..10 {
        let (p, k) = random_plant_controller(&mut r);
        let cl = assemble_closed_loop(&p, &k).unwrap();
        let (n, m) = (p.n(), p.m());
        assert_eq!(cl.a.len(), m + 3);
        assert_eq!(cl.delays.len(), m + 2);
        assert_eq!(cl.a[0].view((0, 0), (n, n)), p.a[0]);
        assert_eq!(cl.a[0].view((n, 0), (k.nk(), n)), &k.bk * &p.c2);
        assert_eq!(cl.a[0].view((n, n), (k.nk(), k.nk())), k.ak);
        assert_eq!(cl.a[m + 1].view((0, n), (n, k.nk())), &p.b2 * &k.ck);
        assert_eq!(cl.a[m + 2].view((n, n), (k.nk(), k.nk())), &k.bk * &p.d22 * &k.ck);
        assert_eq!(cl.c.view((0, n), (p.nz(), k.nk())), &p.d12 * &k.ck);
        assert_eq!(cl.d, p.d11);
    }
}

#[test]
fn example1_dc_gain() {
    // steady state of the sign-corrected loop, worked by hand
    let (p, k) = example1();
    let cl = assemble_closed_loop(&p, &k).unwrap();
    let t0 = evaluate_transfer(&cl, 0.0).unwrap()[(0, 0)];
    assert!((t0.re + 0.065149877449).abs() < 1e-9, "{t0}");
    assert!(t0.im.abs() < 1e-15);
}
