//! Independent oracles: shooting on the cell ODE with a classical RK4
//! integrator, closed forms for the homogeneous medium, and small helpers.
#![allow(dead_code)]

use std::f64::consts::PI;

pub fn sine_a(y: f64) -> f64 {
    ((2.0 * PI * y).sin() + 2.0) / 3.0
}

/// Harmonic mean of `sine_a`: `(int 3 / (sin + 2))^-1 = 1 / sqrt(3)`.
pub fn sine_a_harmonic_mean() -> f64 {
    1.0 / 3f64.sqrt()
}

/// Transfer matrix over one cell of `(u, a u')` for `(a u')' + lambda rho u = 0`.
pub fn monodromy(a: impl Fn(f64) -> f64, rho: impl Fn(f64) -> f64, lambda: f64, steps: usize) -> [[f64; 2]; 2] {
    let h = 1.0 / steps as f64;
    let rhs = |y: f64, s: [f64; 2]| [s[1] / a(y), -lambda * rho(y) * s[0]];
    let mut cols = [[1.0, 0.0], [0.0, 1.0]];
    for col in cols.iter_mut() {
        let mut s = *col;
        for i in 0..steps {
            let y = i as f64 * h;
            let k1 = rhs(y, s);
            let k2 = rhs(y + 0.5 * h, [s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
            let k3 = rhs(y + 0.5 * h, [s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
            let k4 = rhs(y + h, [s[0] + h * k3[0], s[1] + h * k3[1]]);
            s[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            s[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        }
        *col = s;
    }
    // columns are the images of (1, 0) and (0, 1)
    [[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]]
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Sign-change roots of `f` on `(lo, hi)`, scanning with step `step`.
pub fn roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64, max: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x0 = lo;
    let mut f0 = f(x0);
    while x0 < hi && out.len() < max {
        let x1 = x0 + step;
        let f1 = f(x1);
        if f0 == 0.0 {
            out.push(x0);
        } else if (f0 < 0.0) != (f1 < 0.0) {
            out.push(bisect(&f, x0, x1));
        }
        x0 = x1;
        f0 = f1;
    }
    out
}

/// The first `n` Bloch eigenvalues at a fiber away from 0 and 1/2 (simple
/// roots of `tr T(lambda) = 2 cos(2 pi k)`).
pub fn bloch_eigenvalues(
    a: impl Fn(f64) -> f64 + Copy,
    rho: impl Fn(f64) -> f64 + Copy,
    k: f64,
    n: usize,
) -> Vec<f64> {
    let target = 2.0 * (2.0 * PI * k).cos();
    let f = |lambda: f64| {
        let t = monodromy(a, rho, lambda, 2000);
        t[0][0] + t[1][1] - target
    };
    let found = roots(f, 1e-9, 4000.0, 0.25, n);
    assert_eq!(found.len(), n, "oracle found {} of {n} bands at k={k}", found.len());
    found
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// The first `n` Dirichlet eigenvalues of `-(a(x/eps) u')' = lambda rho(x/eps) u`
/// on `(0, n_cells eps)`: roots of the `(u, a u')` entry of `T^N`, rescaled by `eps^-2`.
pub fn dirichlet_eigenvalues(
    a: impl Fn(f64) -> f64 + Copy,
    rho: impl Fn(f64) -> f64 + Copy,
    n_cells: usize,
    eps: f64,
    n: usize,
) -> Vec<f64> {
    let f = |lambda: f64| {
        let t = monodromy(a, rho, lambda, 1000);
        let mut p = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..n_cells {
            p = mat_mul(t, p);
        }
        p[0][1]
    };
    let step = 0.02 / n_cells as f64;
    roots(f, 1e-9, 400.0, step, n).into_iter().map(|l| l / (eps * eps)).collect()
}

/// `(2 pi (m + k))^2` for the `n` smallest `|m + k|`.
pub fn homogeneous_eigenvalues(k: f64, n: usize, a: f64, rho: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (-50..=50)
        .map(|m| (2.0 * PI * (m as f64 + k)).powi(2) * a / rho)
        .collect();
    v.sort_by(f64::total_cmp);
    v.truncate(n);
    v
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

/// Build-then-project round trip along `alpha / N`: the relative `L2` gap
/// over cell centers between `projection sqrt(2) eps / (i s sqrt(lambda))`
/// and `b theta`, for a bump envelope on the `n = 2` pair at `k = 0.16`.
pub fn round_trip_error(n_cells: u64) -> f64 {
    use num_complex::Complex64;
    use twoscale_wave::direct::EpsilonMedium;
    use twoscale_wave::spectrum::{build_first_order_modes, solve_cell_eigen};
    use twoscale_wave::two_scale::{
        build_initial_condition, decomposition_for_cells, fiber_pair, project_initial_data, shaped_envelope,
        EnvelopeShape, ProjectionMethod,
    };
    use twoscale_wave::CellCoefficients;

    let k = 0.16;
    let cell = CellCoefficients::sine(256).unwrap();
    let medium = EpsilonMedium::new(cell.clone(), 1.0, n_cells).unwrap();
    let grid = medium.aligned_grid(64).unwrap();
    let decomposition = decomposition_for_cells(k, 1.0, n_cells).unwrap();
    let shape = EnvelopeShape::Bump {
        amplitude: 1.0,
        center: 0.5,
        half_width: 0.3,
    };
    let mut modes = Vec::new();
    let mut thetas = Vec::new();
    for sigma in fiber_pair(k) {
        let m = build_first_order_modes(&solve_cell_eigen(&cell, sigma, 2, 64).unwrap()[1..], &cell).unwrap();
        thetas.push(shaped_envelope(&m[0], shape, &medium, grid.nodes()).unwrap());
        modes.extend(m);
    }
    let positive: Vec<_> = modes.iter().filter(|m| m.n > 0).collect();
    let terms: Vec<_> = positive.iter().copied().zip(thetas.iter()).collect();
    let init = build_initial_condition(&terms, &medium, &grid).unwrap();
    let zero = vec![0.0; init.u0.len()];
    let strain = twoscale_wave::direct::strain_field(&medium, &grid, &init.u0);
    let projected =
        project_initial_data([&strain, &zero], &medium, &grid, &modes, &decomposition, ProjectionMethod::PairResolved)
            .unwrap();
    let eps = medium.epsilon();
    let (mut num, mut den) = (0.0, 0.0);
    for (mode, env) in modes.iter().zip(&projected) {
        let theta = &thetas[if mode.k > 0.0 { 0 } else { 1 }];
        let scale = Complex64::new(0.0, mode.sign() * mode.lambda.sqrt()) / (std::f64::consts::SQRT_2 * eps);
        for (x, v) in env.x.iter().zip(&env.values) {
            // b = 1 for the normalized modes of a unit density
            let want = theta.eval(*x);
            num += (v / scale - want).norm_sqr();
            den += want.norm_sqr();
        }
    }
    (num / den).sqrt()
}
