mod common;

use common::*;
use kreinmap_core::factorization::{factorize, is_accelerant, solve_glm, glm_residual};
use kreinmap_core::fields::sharp;
use kreinmap_core::forward_map::{build_F_h, theta};
use kreinmap_core::inverse_map::{eta_boundary, eta_characteristic, reciprocity, resolvent_volterra};
use kreinmap_core::quadops::{adjoint_op, gp_norm, invert_identity_plus, lp_field_norm, op_from_kernel};
use kreinmap_core::{Support, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn gp_norm_is_a_norm(seed in any::<u64>(), s in -3.0f64..3.0, n in 1usize..3) {
        let mut r = rng(seed);
        let g = grid(8);
        let a = random_kernel(&mut r, n, g, Support::Full, 1.0);
        let b = random_kernel(&mut r, n, g, Support::Lower, 0.7);
        let scaled = a.map_blocks(|x| x.iter().map(|z| z * s).collect());
        prop_assert!((gp_norm(&scaled, 1.0) - s.abs() * gp_norm(&a, 1.0)).abs() < 1e-12);
        let sum = a.axpy(c(1.0), &b).unwrap();
        prop_assert!(gp_norm(&sum, 1.0) <= gp_norm(&a, 1.0) + gp_norm(&b, 1.0) + 1e-12);
        prop_assert!(gp_norm(&sum, 2.0) <= gp_norm(&a, 2.0) + gp_norm(&b, 2.0) + 1e-12);
    }

    #[test]
    fn sharp_is_an_involution(seed in any::<u64>(), r in 1usize..3) {
        let mut rg = rng(seed);
        let h = random_accelerant(&mut rg, r, grid(8), 1.0);
        prop_assert_eq!(sharp(&sharp(&h)), h);
    }

    #[test]
    fn decimation_keeps_shared_samples(seed in any::<u64>(), f in 1usize..5) {
        let mut rg = rng(seed);
        let h = random_accelerant(&mut rg, 2, grid(8 * f), 1.0);
        let d = h.decimate(f).unwrap();
        for k in 0..d.len() {
            prop_assert_eq!(d.sample(k), h.sample(k * f));
        }
    }

    #[test]
    fn adjoint_is_an_involution(seed in any::<u64>(), n in 1usize..3) {
        let mut r = rng(seed);
        let k = random_kernel(&mut r, n, grid(8), Support::Full, 1.0);
        let op = op_from_kernel(&k);
        let back = adjoint_op(&adjoint_op(&op));
        prop_assert!((back.m - op.m).camax() < 1e-13);
    }

    #[test]
    fn volterra_resolvent_is_reciprocal(seed in any::<u64>(), n in 1usize..3, s in 0.1f64..4.0) {
        let mut r = rng(seed);
        let k = random_kernel(&mut r, n, grid(8), Support::Lower, s);
        let (a, b) = reciprocity(&k).unwrap();
        let scale = 1.0 + k.max_abs() * k.max_abs();
        prop_assert!(a < 1e-10 * scale && b < 1e-10 * scale, "{} {}", a, b);
        let back = resolvent_volterra(&resolvent_volterra(&k).unwrap()).unwrap();
        prop_assert!(back.sub(&k).unwrap().max_abs() < 1e-10 * scale);
    }

    #[test]
    fn discrete_resolvent_identity(seed in any::<u64>(), n in 1usize..3) {
        let mut r = rng(seed);
        let g = grid(8);
        let a1 = op_from_kernel(&random_kernel(&mut r, n, g, Support::Full, 0.4));
        let a2 = op_from_kernel(&random_kernel(&mut r, n, g, Support::Full, 0.4));
        let (g1, g2) = (invert_identity_plus(&a1).unwrap(), invert_identity_plus(&a2).unwrap());
        let id = DMatrix::<C64>::identity(a1.dim(), a1.dim());
        let rhs = (&id + &g1.m) * (&a2.m - &a1.m) * (&id + &g2.m);
        prop_assert!((&g1.m - &g2.m - rhs).camax() < 1e-10);
    }

    #[test]
    fn glm_solution_satisfies_its_equation(seed in any::<u64>(), n in 1usize..4) {
        let mut r = rng(seed);
        let f = random_kernel(&mut r, n, grid(10), Support::Full, 0.45);
        let x = solve_glm(&f).unwrap();
        prop_assert!(glm_residual(&f, &x) < 1e-12);
        let fac = factorize(&f).unwrap();
        prop_assert!(fac.reconstruction < 1e-10 && fac.leakage < 1e-10);
    }

    #[test]
    fn eta_inverts_f_h(seed in any::<u64>(), r in 1usize..3) {
        let mut rg = rng(seed);
        let h = random_accelerant(&mut rg, r, grid(8), 1.0);
        let f = build_F_h(&h);
        let b = eta_boundary(&f);
        prop_assert_eq!(b.values(), h.values());
        let e = eta_characteristic(&f);
        prop_assert!(max_diff(e.values(), h.values()) < 1e-14);
    }

    #[test]
    fn detector_agrees_on_reflection(seed in any::<u64>(), scale in 0.2f64..3.0) {
        let mut rg = rng(seed);
        let h = smooth_accelerant(&mut rg, 2, grid(12), scale);
        let a = is_accelerant(&h, 1e-8);
        let b = is_accelerant(&sharp(&h), 1e-8);
        prop_assert_eq!(a.accepted, b.accepted);
        prop_assert!((a.min_singular_value - b.min_singular_value).abs() < 1e-10);
    }

    #[test]
    fn theta_is_off_diagonal_with_odd_linear_part(seed in any::<u64>()) {
        let mut rg = rng(seed);
        let h = smooth_accelerant(&mut rg, 1, grid(16), 1.0);
        // Θ(εh) + Θ(-εh) is even in ε, so halving ε divides it by about 4.
        let even = |eps: f64| {
            let a = theta(&h.map_values(|z| z * eps)).unwrap();
            let b = theta(&h.map_values(|z| -z * eps)).unwrap();
            lp_field_norm(&a.axpy(c(1.0), &b).unwrap(), 1.0)
        };
        let ratio = even(0.02) / even(0.01);
        prop_assert!((3.9..4.1).contains(&ratio), "ratio {}", ratio);
        let q = theta(&h.map_values(|z| z * 0.1)).unwrap();
        for i in 0..=16 {
            let full = q.full(i);
            prop_assert!(full[0] == C64::new(0.0, 0.0) && full[3] == C64::new(0.0, 0.0));
        }
    }
}
