mod common;

use common::*;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usct::adjoint::{adjoint_fields, gradient, objective, objective_and_gradient, simulate, GradientOptions};
use usct::cbs::cbs_solve;
use usct::geometry::{forward_simulate, make_sources, MeasurementMatrix, View};
use usct::grid::{ComplexField, Grid2D, RealField, SoundSpeedField};
use usct::oracle::fd_gradient;
use usct::phantom::{random_phantom, roi_mask, ScatteringClass, DEFAULT_ROI_FRACTION};

fn small_grid() -> Grid2D {
    Grid2D::centered(48, 48, DESK_H, (0.0, 0.0)).unwrap()
}

fn misfit(speed: &SoundSpeedField, observed: &MeasurementMatrix, array: &usct::geometry::TransducerArray, tol: f64) -> f64 {
    let (pred, _) = simulate(speed, array, &tight(tol), None).unwrap();
    objective(&pred, observed).unwrap().value
}

fn perturbed(speed: &SoundSpeedField, dir: &[f64], alpha: f64) -> SoundSpeedField {
    let vals = speed.values().iter().zip(dir).map(|(c, d)| c + alpha * d).collect();
    SoundSpeedField::new(RealField::from_values(*speed.grid(), vals).unwrap()).unwrap()
}

#[test]
fn reciprocity_on_heterogeneous_medium() {
    let g = desk_grid();
    let s = random_phantom(4, &g, ScatteringClass::Strong);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let tol = 1e-8;
    let (data, batch) = forward_simulate(&s, &a, &tight(tol)).unwrap();
    assert!(batch.all_converged());
    let ymax = batch.fields[0].iter().flat_map(|w| w.interior.values().iter().map(|v| v.norm())).fold(0.0, f64::max);
    for m in 0..8 {
        for n in 0..8 {
            assert!((data.get(m, n) - data.get(n, m)).norm() / ymax <= 10.0 * tol);
        }
    }
}

#[test]
fn zero_sources_give_zero_data() {
    let g = small_grid();
    let s = random_phantom(1, &g, ScatteringClass::Weak);
    let (w, _) = cbs_solve(&s, &ComplexField::zeros(g), &tight(1e-8)).unwrap();
    assert!(w.interior.values().iter().all(|v| v.norm() == 0.0));
}

#[test]
fn linear_combination_matches_adjoint_solve() {
    let g = small_grid();
    let truth = random_phantom(3, &g, ScatteringClass::Strong);
    let guess = random_phantom(4, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 4 });
    let tol = 1e-10;
    let cfg = tight(tol);
    let (obs, _) = forward_simulate(&truth, &a, &cfg).unwrap();
    let (pred, batch) = forward_simulate(&guess, &a, &cfg).unwrap();
    let resid = objective(&pred, &obs).unwrap().residual;
    let fields: Vec<ComplexField> = batch.fields[0].iter().map(|w| w.interior.clone()).collect();
    let lambda = adjoint_fields(&fields, &resid).unwrap();
    let sources = make_sources(&a, &g).unwrap();
    for n in 0..a.len() {
        let mut rhs = ComplexField::zeros(g);
        for (m, src) in sources.iter().enumerate() {
            let w = resid.get(m, n).conj();
            rhs.values_mut().iter_mut().zip(src.field.values()).for_each(|(r, s)| *r += w * s);
        }
        let (sol, _) = cbs_solve(&guess, &rhs, &cfg).unwrap();
        let explicit: Vec<Complex64> = sol.interior.values().iter().map(|v| -v).collect();
        assert!(rel_l2(lambda[n].values(), &explicit) <= 10.0 * tol, "source {n}");
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let g = small_grid();
    let truth = random_phantom(5, &g, ScatteringClass::Weak);
    let guess = random_phantom(6, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let cfg = tight(1e-12);
    let (obs, _) = forward_simulate(&truth, &a, &cfg).unwrap();
    let eval = objective_and_gradient(&guess, &obs, &a, &cfg, &GradientOptions::default(), None).unwrap();
    let mask = roi_mask(&g, DEFAULT_ROI_FRACTION);
    let mut nodes: Vec<usize> = (0..g.len()).filter(|&k| mask[k]).collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    nodes.truncate(6);
    let fd = fd_gradient(&guess, &obs, &a, &nodes, 0.01, &cfg).unwrap();
    for (&k, f) in nodes.iter().zip(fd) {
        let adj = eval.gradient.values()[k];
        assert!((adj - f).abs() <= 1e-3 * f.abs(), "node {k}: adjoint {adj}, fd {f}");
    }
}

#[test]
fn flipped_conjugation_breaks_agreement() {
    let g = small_grid();
    let truth = random_phantom(5, &g, ScatteringClass::Weak);
    let guess = random_phantom(6, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let cfg = tight(1e-10);
    let (obs, _) = forward_simulate(&truth, &a, &cfg).unwrap();
    let good = objective_and_gradient(&guess, &obs, &a, &cfg, &GradientOptions::default(), None).unwrap();
    let flipped =
        objective_and_gradient(&guess, &obs, &a, &cfg, &GradientOptions { flip_conjugation: true, ..Default::default() }, None).unwrap();
    let diff: Vec<Complex64> = good.gradient.values().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let other: Vec<Complex64> = flipped.gradient.values().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    assert!(rel_l2(&other, &diff) > 0.1);
}

#[test]
fn directional_derivative_and_descent() {
    let g = small_grid();
    let truth = random_phantom(7, &g, ScatteringClass::Strong);
    let guess = random_phantom(8, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let tol = 1e-12;
    let (obs, _) = forward_simulate(&truth, &a, &tight(tol)).unwrap();
    let eval = objective_and_gradient(&guess, &obs, &a, &tight(tol), &GradientOptions::default(), None).unwrap();
    let h2 = g.h * g.h;

    // smooth bump direction
    let dir: Vec<f64> = (0..g.len())
        .map(|k| {
            let p = g.node(k % g.nx, k / g.nx);
            (-(p.0 * p.0 + (p.1 - 0.002).powi(2)) / (2.0 * 0.004f64.powi(2))).exp()
        })
        .collect();
    let alpha = 0.05;
    let fd = (misfit(&perturbed(&guess, &dir, alpha), &obs, &a, tol) - misfit(&perturbed(&guess, &dir, -alpha), &obs, &a, tol)) / (2.0 * alpha);
    let predicted: f64 = eval.gradient.values().iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() * h2;
    assert!((fd - predicted).abs() <= 1e-3 * predicted.abs(), "fd {fd} vs adjoint {predicted}");

    // a small step against the gradient lowers the misfit
    let gmax = eval.gradient.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let step: Vec<f64> = eval.gradient.values().iter().map(|v| -v / gmax).collect();
    assert!(misfit(&perturbed(&guess, &step, 0.5), &obs, &a, tol) < eval.objective.value);
}

#[test]
fn inverse_crime_start_is_stationary() {
    let g = small_grid();
    let s = random_phantom(9, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let cfg = tight(1e-8);
    let (obs, _) = forward_simulate(&s, &a, &cfg).unwrap();
    let eval = objective_and_gradient(&s, &obs, &a, &cfg, &GradientOptions::default(), None).unwrap();
    assert_eq!(eval.npe(), 1);
    assert!(eval.objective.value <= 1e-8 * obs.energy());
    assert!(eval.gradient.values().iter().all(|v| *v == 0.0));
}

#[test]
fn gradient_is_linear_in_the_residual() {
    let g = small_grid();
    let truth = random_phantom(10, &g, ScatteringClass::Weak);
    let guess = SoundSpeedField::homogeneous(g, 1500.0).unwrap();
    let a = desk_array(&g, View::FullRing { count: 6 });
    let cfg = tight(1e-8);
    let (obs, _) = forward_simulate(&truth, &a, &cfg).unwrap();
    let (pred, batch) = forward_simulate(&guess, &a, &cfg).unwrap();
    let obj = objective(&pred, &obs).unwrap();
    let fields: Vec<ComplexField> = batch.fields[0].iter().map(|w| w.interior.clone()).collect();
    let g1 = gradient(&guess, &fields, &obj.residual, cfg.omega, &GradientOptions::default()).unwrap();
    let mut scaled = obj.residual.clone();
    scaled.values.iter_mut().for_each(|v| *v *= -2.5);
    let g2 = gradient(&guess, &fields, &scaled, cfg.omega, &GradientOptions::default()).unwrap();
    let gmax = g1.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g1.values().iter().zip(g2.values()) {
        assert!((-2.5 * a - b).abs() <= 1e-12 * gmax);
    }
    let energy: f64 = scaled.values.iter().map(|v| v.norm_sqr()).sum();
    assert!((energy - 6.25 * obj.value).abs() <= 1e-12 * energy);

    let masked = gradient(&guess, &fields, &obj.residual, cfg.omega, &GradientOptions { mask: Some(roi_mask(&g, 0.5)), ..Default::default() }).unwrap();
    let mask = roi_mask(&g, 0.5);
    assert!(masked.values().iter().zip(&mask).all(|(v, inside)| *inside || *v == 0.0));
}

#[test]
fn fd_step_sweep_is_v_shaped() {
    let g = small_grid();
    let truth = random_phantom(9, &g, ScatteringClass::Weak);
    let guess = random_phantom(10, &g, ScatteringClass::Weak);
    let a = desk_array(&g, View::FullRing { count: 8 });
    let cfg = tight(1e-10);
    let (obs, _) = forward_simulate(&truth, &a, &cfg).unwrap();
    let eval = objective_and_gradient(&guess, &obs, &a, &cfg, &GradientOptions::default(), None).unwrap();
    let node = (0..g.len()).max_by(|&i, &j| eval.gradient.values()[i].abs().total_cmp(&eval.gradient.values()[j].abs())).unwrap();
    let adj = eval.gradient.values()[node];
    let err = |step: f64| (fd_gradient(&guess, &obs, &a, &[node], step, &cfg).unwrap()[0] - adj).abs() / adj.abs();
    // truncation grows like step², solve noise like tol/step
    let (coarse, mid, fine) = (err(30.0), err(1.0), err(1e-3));
    assert!(mid < 0.1 * coarse && mid < 0.1 * fine, "errors {coarse:.2e} {mid:.2e} {fine:.2e}");
}
