mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use num_rational::Ratio;
use proptest::prelude::*;
use twoscale_wave::direct::{solve_wave, EpsilonMedium, RecordPlan};
use twoscale_wave::grid::TimeGrid;
use twoscale_wave::macro_solver::solve_low_frequency_homogenized;
use twoscale_wave::spectrum::{build_first_order_modes, solve_cell_eigen};
use twoscale_wave::two_scale::{
    admissible_sequence, build_initial_condition, decomposition_for_cells, epsilon_decomposition, fiber_pair,
    initial_amplitude, reconstruct, relative_error, shaped_envelope, AnalyticEnvelope, EnvelopeShape, Slice,
    TwoScaleApproximation, TwoScaleTerm,
};
use twoscale_wave::CellCoefficients;

#[test]
fn decomposition_of_the_reference_setup() {
    let d = epsilon_decomposition(0.16, 1.0, 0.1).unwrap();
    assert_eq!((d.h, d.l_exact), (1, Ratio::new(3, 5)));
    assert!(epsilon_decomposition(0.16, 1.0, 0.03).is_err());
}

#[test]
fn round_trip_error_halves_with_epsilon() {
    let e: Vec<f64> = [25, 50, 100].iter().map(|&n| common::round_trip_error(n)).collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=2.5).contains(&ratio), "errors {e:?}");
    }
}

/// Relative first-component gap at `t = 0` between the built data and its
/// reconstruction from the constructed amplitudes.
fn reconstruction_gap(n_cells: u64) -> f64 {
    let cell = CellCoefficients::sine(256).unwrap();
    let medium = EpsilonMedium::new(cell.clone(), 1.0, n_cells).unwrap();
    let grid = medium.aligned_grid(64).unwrap();
    let shape = EnvelopeShape::Bump {
        amplitude: 1.0,
        center: 0.5,
        half_width: 0.3,
    };
    let mut plus_modes = Vec::new();
    let mut thetas = Vec::new();
    let mut terms = Vec::new();
    for sigma in fiber_pair(0.16) {
        let modes = build_first_order_modes(&solve_cell_eigen(&cell, sigma, 2, 64).unwrap()[1..], &cell).unwrap();
        let theta = shaped_envelope(&modes[0], shape, &medium, grid.nodes()).unwrap();
        for m in &modes {
            let amp = initial_amplitude(m, &theta, medium.epsilon());
            terms.push(TwoScaleTerm {
                mode: m.clone(),
                envelope: Arc::new(AnalyticEnvelope(move |_t: f64, x: f64| amp.eval(x))),
            });
        }
        plus_modes.push(modes[0].clone());
        thetas.push(theta);
    }
    let pairs: Vec<_> = plus_modes.iter().zip(thetas.iter()).collect();
    let init = build_initial_condition(&pairs, &medium, &grid).unwrap();
    let time = TimeGrid::new(2.0 * grid.h() / 3f64.sqrt(), 4).unwrap();
    let plan = RecordPlan {
        snapshot_steps: vec![0],
        probe_nodes: vec![],
    };
    let reference = solve_wave(&medium, &grid, &init.u0, &init.v0, None, &time, &plan).unwrap();
    let approx = TwoScaleApproximation::new(0.16, &medium, terms, None).unwrap();
    relative_error(&reference, &approx, &grid, Slice::Space { step: 0 }).unwrap()
}

#[test]
fn reconstruction_of_built_data_is_first_order() {
    let coarse = reconstruction_gap(20);
    let fine = reconstruction_gap(40);
    assert!(coarse < 1e-1 && fine < coarse, "{coarse:e} -> {fine:e}");
    let ratio = coarse / fine;
    assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
}

/// `chi(y) = int_0^y (a* / a - 1)`, periodic because the integrand has zero mean.
fn cell_corrector(y: f64) -> f64 {
    let frac = y - y.floor();
    let steps = 2000;
    let h = frac / steps as f64;
    let f = |s: f64| common::sine_a_harmonic_mean() / common::sine_a(s) - 1.0;
    (0..steps).map(|i| h * f((i as f64 + 0.5) * h)).sum()
}

#[test]
fn low_frequency_corrector_tracks_the_direct_solution() {
    let cell = CellCoefficients::sine(256).unwrap();
    let mut gaps = Vec::new();
    for n_cells in [10, 20] {
        let medium = EpsilonMedium::new(cell.clone(), 1.0, n_cells).unwrap();
        let grid = medium.aligned_grid(200 / n_cells as usize * 10).unwrap();
        let x = grid.nodes();
        // well-prepared data: sin(pi x) plus its first-order cell corrector
        let eps = medium.epsilon();
        let u0: Vec<f64> = x
            .iter()
            .map(|&x| (PI * x).sin() + eps * cell_corrector(x / eps) * PI * (PI * x).cos())
            .collect();
        let v0 = vec![0.0; x.len()];
        let steps = (0.4 * 3f64.sqrt() / (0.9 * grid.h())).ceil() as usize;
        let time = TimeGrid::new(0.4, steps).unwrap();
        let plan = RecordPlan {
            snapshot_steps: vec![steps],
            probe_nodes: vec![],
        };
        let reference = solve_wave(&medium, &grid, &u0, &v0, None, &time, &plan).unwrap();
        let u_h: Vec<f64> = x.iter().map(|&x| (PI * x).sin()).collect();
        let homogenized = solve_low_frequency_homogenized(&cell, 1.0, &grid, &u_h, &v0, None, &time, &plan).unwrap();
        let approx = TwoScaleApproximation::new(0.0, &medium, vec![], Some(Arc::new(homogenized))).unwrap();
        let field = reconstruct(&approx, &grid, time.t(steps)).unwrap();
        gaps.push(common::rel_l2(&reference.snapshots[0].u1, &field.first));
    }
    assert!(gaps[0] < 0.1 && gaps[1] < 0.7 * gaps[0], "gaps {gaps:?}");
}

#[test]
fn low_frequency_part_is_rejected_off_the_zero_fiber() {
    let cell = CellCoefficients::sine(64).unwrap();
    let medium = EpsilonMedium::new(cell, 1.0, 10).unwrap();
    let grid = medium.aligned_grid(16).unwrap();
    let x = grid.nodes();
    let zero = vec![0.0; x.len()];
    let time = TimeGrid::new(0.01, 2).unwrap();
    let lf = solve_wave(&medium, &grid, &zero, &zero, None, &time, &RecordPlan::default()).unwrap();
    assert!(TwoScaleApproximation::new(0.16, &medium, vec![], Some(Arc::new(lf))).is_err());
}

proptest! {
    #[test]
    fn decomposition_is_exact(p in -50i64..=50, q in 1i64..=50, n in 1u64..400) {
        prop_assume!(2 * p.abs() <= q);
        let k = p as f64 / q as f64;
        let d = decomposition_for_cells(k, 1.0, n).unwrap();
        let kn = Ratio::new(p, q) * Ratio::from_integer(n as i64);
        prop_assert_eq!(Ratio::from_integer(d.h) + d.l_exact, kn);
        prop_assert!(d.l_exact >= Ratio::from_integer(0) && d.l_exact < Ratio::from_integer(1));
        prop_assert!((d.epsilon - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn doubling_keeps_a_zero_phase(p in 1i64..=12, base in 1u64..10) {
        // k = p / 25 with N = 25 base 2^j: kN is an integer, so l = 0 throughout
        let k = p as f64 / 25.0;
        let ns: Vec<u64> = (0..4).map(|j| 25 * base * (1 << j)).collect();
        let seq = admissible_sequence(k, 1.0, &ns).unwrap();
        prop_assert!(seq.iter().all(|d| d.l == 0.0));
    }

    #[test]
    fn fiber_pairs_are_symmetric(k in -0.5f64..=0.5) {
        let pair = fiber_pair(k);
        let sum: f64 = pair.iter().sum();
        if pair.len() == 2 {
            prop_assert!(sum.abs() < 1e-15);
        }
        prop_assert!(pair.iter().all(|s| (s.abs() - k.abs()).abs() < 1e-15));
    }

    #[test]
    fn built_data_is_real_and_compatible(k in 0.05f64..0.45, center in 0.35f64..0.65, amp in 0.1f64..3.0) {
        let cell = CellCoefficients::sine(64).unwrap();
        let medium = EpsilonMedium::new(cell.clone(), 1.0, 8).unwrap();
        let grid = medium.aligned_grid(32).unwrap();
        let shape = EnvelopeShape::Bump { amplitude: amp, center, half_width: 0.3 };
        let mut modes = Vec::new();
        let mut thetas = Vec::new();
        for sigma in fiber_pair(k) {
            let m = solve_cell_eigen(&cell, sigma, 2, 32).unwrap().remove(1);
            thetas.push(shaped_envelope(&m, shape, &medium, grid.nodes()).unwrap());
            modes.push(m);
        }
        let pairs: Vec<_> = modes.iter().zip(thetas.iter()).collect();
        let init = build_initial_condition(&pairs, &medium, &grid).unwrap();
        prop_assert!(init.imaginary_ratio < 1e-10);
        prop_assert!(init.boundary_mismatch.iter().all(|&m| m < 1e-12));
        // u0 is twice the real part of the +k term
        let probe = grid.n_intervals / 3;
        let x = grid.x(probe);
        let want = 2.0 * (thetas[0].eval(x) * modes[0].phi.eval(x / medium.epsilon())).re;
        prop_assert!((init.u0[probe] - want).abs() < 1e-10 * amp.max(1.0));
    }
}
