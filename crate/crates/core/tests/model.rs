mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selection_dr::model::*;

fn theta(beta: &[f64], delta: &[f64]) -> ThetaAtY {
    ThetaAtY { y: 0.0, beta: beta.to_vec(), delta: delta.to_vec() }
}

#[test]
fn link_examples() {
    let l = rho_link(0.0);
    assert_eq!((l.rho, l.d1, l.d2), (0.0, 1.0, 0.0));
    let l = rho_link(0.5);
    assert!((l.rho - 0.46211715726000974).abs() < 1e-12);
    assert!((l.d1 - 0.7864477329659274).abs() < 1e-12);
    // derivatives against differences of tanh
    assert!((l.d1 - fd1(f64::tanh, 0.5, 1e-5)).abs() < 1e-9);
    assert!((l.d2 - fd1(|u| rho_link(u).d1, 0.5, 1e-5)).abs() < 1e-9);
    for u in [-3.0, -0.2, 0.7, 12.0] {
        assert_eq!(rho_link(u).rho, -rho_link(-u).rho);
        assert!(rho_link(u).rho.abs() < 1.0);
        assert!(rho_link(u).d1 > 0.0);
    }
}

#[test]
fn saturated_outcome_index() {
    let s = 0.4;
    let pi = [s];
    // Φ(−x′β) → 0 as x′β → +∞, so the below-y cell empties
    let c = cell_probs(&theta(&[40.0], &[0.3]), &pi, &[1.0], &[1.0], &[0]);
    assert_eq!(c.p_d1_below, 0.0);
    assert!((c.p_d1_above - phi_cdf_erfc(s)).abs() < 1e-15);
    // and as x′β → −∞ every selected unit is below y
    let c = cell_probs(&theta(&[-40.0], &[0.3]), &pi, &[1.0], &[1.0], &[0]);
    assert!((c.p_d1_below - phi_cdf_erfc(s)).abs() < 1e-15);
    assert!(c.p_d1_above.abs() < 1e-15);
}

#[test]
fn zero_sorting_index_factorizes() {
    let (a, s) = (0.35, -0.6);
    let c = cells_from_index(a, 0.0, s);
    assert!((c.p_d1_below - phi_cdf_erfc(-a) * phi_cdf_erfc(s)).abs() < 1e-15);
}

#[test]
fn cells_match_oracle() {
    // β = (0.2, −0.5), δ = (0.4, 0.3), π = (0.1, 0.8, −0.3); x = (1, 0.7), z = (1, −0.4, 0.7)
    let t = theta(&[0.2, -0.5], &[0.4, 0.3]);
    let pi = [0.1, 0.8, -0.3];
    let x = [1.0, 0.7];
    let z = [1.0, -0.4, 0.7];
    let c = cell_probs(&t, &pi, &x, &z, &[0, 1]);
    let a = 0.2 - 0.5 * 0.7;
    let u = 0.4 + 0.3 * 0.7;
    let s = 0.1 - 0.8 * 0.4 - 0.3 * 0.7;
    let below = bvn_oracle(-a, s, -f64::tanh(u));
    let sel = phi_cdf_quad(s);
    assert!((c.p_d1_below - below).abs() <= 1e-10);
    assert!((c.p_d1_above - (sel - below)).abs() <= 1e-10);
    assert!((c.p_d0 - (1.0 - sel)).abs() <= 1e-10);

    let l_below = loglik_row(&t, &pi, true, true, &x, &z, &[0, 1]);
    let l_above = loglik_row(&t, &pi, true, false, &x, &z, &[0, 1]);
    let l_out = loglik_row(&t, &pi, false, false, &x, &z, &[0, 1]);
    assert!((l_below - below.ln()).abs() <= 1e-10);
    assert!((l_above - (sel - below).ln()).abs() <= 1e-10);
    assert!((l_out - (1.0 - sel).ln()).abs() <= 1e-10);
}

#[test]
fn loglik_factorizes_without_sorting() {
    let t = theta(&[0.8], &[0.0]);
    let pi = [0.25];
    let l = loglik_row(&t, &pi, true, true, &[1.0], &[1.0], &[0]);
    let expect = phi_cdf_erfc(-0.8).ln() + phi_cdf_erfc(0.25).ln();
    assert!((l - expect).abs() < 1e-14);
}

#[test]
fn loglik_finite_at_vanishing_cells() {
    let t = theta(&[60.0], &[0.0]);
    let l = loglik_row(&t, &[0.0], true, true, &[1.0], &[1.0], &[0]);
    assert!(l.is_finite());
    assert!((l - 1e-300f64.ln()).abs() < 1e-9);
}

#[test]
fn latent_cdf_examples() {
    assert_eq!(conditional_latent_cdf(&theta(&[0.0], &[0.0]), &[1.0]), 0.5);
    assert_eq!(conditional_latent_cdf(&theta(&[f64::NEG_INFINITY], &[0.0]), &[1.0]), 1.0);
    let v = conditional_latent_cdf(&theta(&[1.2], &[0.0]), &[1.0]);
    assert!((v - phi_cdf_quad(-1.2)).abs() < 1e-14);
    assert!((v - 0.1150697).abs() < 1e-7);
}

#[test]
fn simplex_on_ten_thousand_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let a = rng.random_range(-6.0..6.0);
        let u = rng.random_range(-4.0..4.0);
        let s = rng.random_range(-6.0..6.0);
        let c = cells_from_index(a, u, s);
        assert!(c.p_d0 >= 0.0 && c.p_d1_below >= 0.0 && c.p_d1_above >= 0.0);
        assert!((c.p_d0 + c.p_d1_below + c.p_d1_above - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn selection_bias_identity(a in -2.5..2.5f64, u in -2.0..2.0f64, s in -2.0..2.0f64) {
        let sel = phi_cdf_erfc(s);
        let observed = cells_from_index(a, u, s).p_d1_below / sel;
        let latent = phi_cdf_erfc(-a);
        if u == 0.0 {
            prop_assert!((observed - latent).abs() <= 1e-12);
        }
        // a nonzero sorting correlation shifts the selected distribution
        if u.abs() > 0.05 {
            prop_assert!((observed - latent).abs() > 1e-6);
        }
        let zero = cells_from_index(a, 0.0, s).p_d1_below / sel;
        prop_assert!((zero - latent).abs() <= 1e-12);
    }

    #[test]
    fn hsm_nesting(
        y in -2.0..3.0f64,
        b0 in -1.0..1.0f64,
        b1 in -1.0..1.0f64,
        sigma in 0.3..2.0f64,
        rho in -0.9..0.9f64,
        x1 in -1.5..1.5f64,
        s in -1.5..1.5f64,
    ) {
        // Y* = x′β + σU, D = 1(z′π + V ≥ 0), corr(U, V) = ρ
        let t = ThetaAtY::from_hsm(y, &[b0, b1], sigma, rho, 1);
        let c = cell_probs(&t, &[s], &[1.0, x1], &[1.0], &[0]);
        let w = (y - b0 - b1 * x1) / sigma;
        // Pr(Y* ≤ y, D* ≤ 0) from the Heckman form, i.e. the non-selected part of Φ(w)
        let not_selected = bvn_oracle(w, -s, rho);
        let latent = conditional_latent_cdf(&t, &[1.0, x1]);
        prop_assert!((latent - phi_cdf_erfc(w)).abs() <= 1e-14);
        prop_assert!((latent - c.p_d1_below - not_selected).abs() <= 1e-12);
    }
}

#[test]
fn spec_rejects_bad_roles() {
    let grid = ThresholdGrid::new(vec![0.0, 1.0]).unwrap();
    let ok = ModelSpec::new(vec!["x1".into()], vec!["z1".into()], vec!["intercept".into(), "x1".into()], grid.clone());
    assert!(ok.is_ok());
    assert!(ModelSpec::new(vec!["x1".into()], vec![], vec!["intercept".into()], grid.clone()).is_err());
    assert!(ModelSpec::new(vec!["x1".into()], vec!["x1".into()], vec!["intercept".into()], grid.clone()).is_err());
    assert!(ModelSpec::new(vec!["x1".into()], vec!["z1".into()], vec!["z1".into()], grid).is_err());
    assert!(ThresholdGrid::new(vec![1.0, 0.5]).is_err());
}

#[test]
fn default_grid_indexes() {
    let t = ThresholdGrid::default_indexes();
    assert_eq!(t.len(), 81);
    assert_eq!(t[0], 0.1);
    assert_eq!(t[80], 0.9);
    assert_eq!(t[40], 0.5);
}

#[test]
fn small_upper_cell_keeps_relative_accuracy() {
    // Pr(Y > y, D = 1) ≈ 9.3e-14 while Φ(s) ≈ 0.64
    let (a, u, s) = (-2.5834232760094706, -1.7716006446126877, 0.3529984595204811);
    let c = cells_from_index(a, u, s);
    let oracle = bvn_oracle(a, s, u.tanh());
    assert!((c.p_d1_above - oracle).abs() <= 1e-6 * oracle, "{:e} vs {oracle:e}", c.p_d1_above);
    let d = selection_dr::estimate::cell_derivatives(a, u, s, false);
    assert!(!d.clamped);
    assert!((d.ll - oracle.ln()).abs() <= 1e-6);
}
