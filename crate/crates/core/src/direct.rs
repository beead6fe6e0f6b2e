//! Fine-grid reference solver for `rho^eps u_tt - (a^eps u_x)_x = f` on
//! `(0, alpha)` with homogeneous Dirichlet ends, and the physical Dirichlet
//! eigenproblem of the same operator.

use std::io::Write;

use num_complex::Complex64;

use crate::cell::CellCoefficients;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, UniformGrid};

/// The periodic medium `a(x / eps)`, `rho(x / eps)` on `(0, alpha)` made of
/// `n_cells` whole cells, so `eps = alpha / n_cells`.
#[derive(Clone, Debug)]
pub struct EpsilonMedium {
    cell: CellCoefficients,
    alpha: f64,
    n_cells: u64,
}

impl EpsilonMedium {
    pub fn new(cell: CellCoefficients, alpha: f64, n_cells: u64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("domain length must be positive, got {alpha}")));
        }
        if n_cells == 0 {
            return Err(Error::invalid("the domain needs at least one cell"));
        }
        Ok(Self { cell, alpha, n_cells })
    }

    /// Accepts `epsilon` only when `alpha / epsilon` is an integer.
    pub fn from_epsilon(cell: CellCoefficients, alpha: f64, epsilon: f64) -> Result<Self> {
        let ratio = alpha / epsilon;
        let n = ratio.round();
        if !(epsilon > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * n {
            return Err(Error::invalid(format!(
                "alpha/epsilon = {ratio} is not a positive integer"
            )));
        }
        Self::new(cell, alpha, n as u64)
    }

    pub fn cell(&self) -> &CellCoefficients {
        &self.cell
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_cells(&self) -> u64 {
        self.n_cells
    }

    pub fn epsilon(&self) -> f64 {
        self.alpha / self.n_cells as f64
    }

    pub fn a_at(&self, x: f64) -> f64 {
        self.cell.a_at(x / self.epsilon())
    }

    pub fn rho_at(&self, x: f64) -> f64 {
        self.cell.rho_at(x / self.epsilon())
    }

    /// Fine grid with `points_per_cell` intervals in every cell.
    pub fn aligned_grid(&self, points_per_cell: usize) -> Result<UniformGrid> {
        UniformGrid::new(self.alpha, points_per_cell * self.n_cells as usize)
    }

    fn check_grid(&self, grid: &UniformGrid) -> Result<()> {
        if (grid.length - self.alpha).abs() > 1e-12 * self.alpha {
            return Err(Error::invalid("fine grid does not span the medium"));
        }
        let n_cells = self.n_cells as usize;
        if grid.n_intervals < 16 * n_cells {
            return Err(Error::invalid(format!(
                "{} intervals under-resolve {n_cells} cells (need 16 per cell)",
                grid.n_intervals
            )));
        }
        if grid.n_intervals % n_cells != 0 {
            log::warn!(
                "fine grid ({} intervals) is not aligned with {n_cells} cells; coefficients are sampled at midpoints",
                grid.n_intervals
            );
        }
        Ok(())
    }
}

/// Explicit leapfrog state. Stepping backward in time is a swap of the two
/// stored levels.
#[derive(Clone, Debug)]
pub struct LeapfrogSolver {
    h: f64,
    dt: f64,
    rho: Vec<f64>,
    a_mid: Vec<f64>,
    prev: Vec<f64>,
    curr: Vec<f64>,
    next: Vec<f64>,
    step: usize,
}

/// Source term `f(t, x)`.
pub type SourceFn<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

impl LeapfrogSolver {
    /// Builds the solver and takes the Taylor first step
    /// `u^1 = u^0 + dt v0 + dt^2/2 (L u^0 + f(0)) / rho`.
    pub fn new(
        medium: &EpsilonMedium,
        grid: &UniformGrid,
        dt: f64,
        u0: &[f64],
        v0: &[f64],
        source: Option<SourceFn>,
    ) -> Result<Self> {
        medium.check_grid(grid)?;
        let n = grid.n_nodes();
        if u0.len() != n || v0.len() != n {
            return Err(Error::invalid(format!(
                "initial data has {} / {} samples, grid has {n} nodes",
                u0.len(),
                v0.len()
            )));
        }
        let h = grid.h();
        let (_, a1) = medium.cell().a_bounds();
        let (rho0, _) = medium.cell().rho_bounds();
        let speed = (a1 / rho0).sqrt();
        if dt * speed > h * (1.0 + 1e-12) {
            return Err(Error::Cfl(format!(
                "dt*sqrt(a1/rho0) = {:.6e} exceeds dx = {h:.6e}",
                dt * speed
            )));
        }
        let rho: Vec<f64> = (0..n).map(|j| medium.rho_at(grid.x(j))).collect();
        let a_mid: Vec<f64> = (0..n - 1).map(|j| medium.a_at((j as f64 + 0.5) * h)).collect();
        let mut solver = Self {
            h,
            dt,
            rho,
            a_mid,
            prev: u0.to_vec(),
            curr: vec![0.0; n],
            next: vec![0.0; n],
            step: 0,
        };
        solver.prev[0] = 0.0;
        solver.prev[n - 1] = 0.0;
        let mut lu = vec![0.0; n];
        solver.apply_operator(&solver.prev, &mut lu);
        for j in 1..n - 1 {
            let f = source.map_or(0.0, |f| f(0.0, grid.x(j)));
            solver.curr[j] = solver.prev[j] + dt * v0[j] + 0.5 * dt * dt * (lu[j] + f) / solver.rho[j];
        }
        solver.step = 1;
        Ok(solver)
    }

    /// `(a u_x)_x` by the conservative three-point stencil; zero at the ends.
    fn apply_operator(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for j in 1..n - 1 {
            out[j] = (self.a_mid[j] * (u[j + 1] - u[j]) - self.a_mid[j - 1] * (u[j] - u[j - 1])) * inv_h2;
        }
    }

    /// Advances one step; `forcing` holds `f` at the current time level.
    pub fn advance(&mut self, forcing: Option<&[f64]>) {
        let n = self.curr.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        let dt2 = self.dt * self.dt;
        let (u, a) = (&self.curr, &self.a_mid);
        for j in 1..n - 1 {
            let lu = (a[j] * (u[j + 1] - u[j]) - a[j - 1] * (u[j] - u[j - 1])) * inv_h2;
            let f = forcing.map_or(0.0, |f| f[j]);
            self.next[j] = 2.0 * u[j] - self.prev[j] + dt2 * (lu + f) / self.rho[j];
        }
        self.next[0] = 0.0;
        self.next[n - 1] = 0.0;
        std::mem::swap(&mut self.prev, &mut self.curr);
        std::mem::swap(&mut self.curr, &mut self.next);
        self.step += 1;
    }

    /// Reverses the direction of time.
    pub fn reverse(&mut self) {
        std::mem::swap(&mut self.prev, &mut self.curr);
    }

    pub fn previous(&self) -> &[f64] {
        &self.prev
    }

    pub fn current(&self) -> &[f64] {
        &self.curr
    }

    /// Steps taken since `u^0`; `current()` holds `u^step`.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Staggered energy
    /// `1/2 sum rho h ((u^{n+1} - u^n)/dt)^2 + 1/2 sum a h (D u^{n+1})(D u^n)`,
    /// exactly conserved by the scheme when `f = 0`.
    pub fn staggered_energy(&self) -> f64 {
        let (old, new) = (&self.prev, &self.curr);
        let kinetic: f64 = self
            .rho
            .iter()
            .zip(new.iter().zip(old))
            .map(|(r, (a, b))| r * ((a - b) / self.dt).powi(2))
            .sum();
        let potential: f64 = self
            .a_mid
            .iter()
            .enumerate()
            .map(|(j, a)| a * (new[j + 1] - new[j]) * (old[j + 1] - old[j]) / (self.h * self.h))
            .sum();
        0.5 * self.h * (kinetic + potential)
    }
}

/// Which levels and points a run records.
#[derive(Clone, Debug, Default)]
pub struct RecordPlan {
    /// Step indices at which full snapshots are stored.
    pub snapshot_steps: Vec<usize>,
    /// Node indices whose first-order field is stored at every step.
    pub probe_nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ProbeSeries {
    pub node: usize,
    pub x: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// Samples of `u^eps` and `U^eps = (sqrt(a) u_x, sqrt(rho) u_t)`.
#[derive(Clone, Debug)]
pub struct WaveTrajectory {
    pub x: Vec<f64>,
    pub time: TimeGrid,
    pub snapshots: Vec<Snapshot>,
    pub probes: Vec<ProbeSeries>,
    /// Staggered energy between steps `n` and `n + 1`.
    pub energy: Vec<f64>,
}

impl WaveTrajectory {
    pub fn snapshot(&self, step: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.step == step)
    }

    pub fn probe(&self, node: usize) -> Option<&ProbeSeries> {
        self.probes.iter().find(|p| p.node == node)
    }

    /// `max |E - E_0| / E_0`.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy.first().copied().unwrap_or(0.0);
        if e0 == 0.0 {
            return 0.0;
        }
        self.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0
    }

    pub fn write_snapshots_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "u", "U1", "U2"])?;
        for s in &self.snapshots {
            for (j, x) in self.x.iter().enumerate() {
                w.write_record([
                    format!("{:.12e}", s.t),
                    format!("{x:.12e}"),
                    format!("{:.12e}", s.u[j]),
                    format!("{:.12e}", s.u1[j]),
                    format!("{:.12e}", s.u2[j]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `sqrt(a) u_x` by centered differences, one-sided second order at the ends.
pub fn strain_field(medium: &EpsilonMedium, grid: &UniformGrid, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = grid.h();
    (0..n)
        .map(|j| {
            let du = if j == 0 {
                (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
            } else if j == n - 1 {
                (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
            } else {
                (u[j + 1] - u[j - 1]) / (2.0 * h)
            };
            medium.a_at(grid.x(j)).sqrt() * du
        })
        .collect()
}

/// Leapfrog trajectory with homogeneous Dirichlet ends.
///
/// `U2` at step `n` is the centered difference `(u^{n+1} - u^{n-1}) / (2 dt)`,
/// and `sqrt(rho) v0` at `n = 0`.
pub fn solve_wave(
    medium: &EpsilonMedium,
    grid: &UniformGrid,
    u0: &[f64],
    v0: &[f64],
    source: Option<SourceFn>,
    time: &TimeGrid,
    plan: &RecordPlan,
) -> Result<WaveTrajectory> {
    let mut solver = LeapfrogSolver::new(medium, grid, time.dt, u0, v0, source)?;
    let n = grid.n_nodes();
    if let Some(&bad) = plan.probe_nodes.iter().find(|&&j| j >= n) {
        return Err(Error::invalid(format!("probe node {bad} outside the grid")));
    }
    let x = grid.nodes();
    let sqrt_rho: Vec<f64> = x.iter().map(|&x| medium.rho_at(x).sqrt()).collect();
    let sqrt_a: Vec<f64> = x.iter().map(|&x| medium.a_at(x).sqrt()).collect();
    let h = grid.h();

    let mut probes: Vec<ProbeSeries> = plan
        .probe_nodes
        .iter()
        .map(|&node| ProbeSeries {
            node,
            x: x[node],
            u1: Vec::with_capacity(time.n_steps + 1),
            u2: Vec::with_capacity(time.n_steps + 1),
        })
        .collect();
    let mut snapshots = Vec::new();
    let mut energy = Vec::with_capacity(time.n_steps);

    let strain_at = |u: &[f64], j: usize| -> f64 {
        let du = if j == 0 {
            (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
        } else if j == n - 1 {
            (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
        } else {
            (u[j + 1] - u[j - 1]) / (2.0 * h)
        };
        sqrt_a[j] * du
    };
    let mut record = |step: usize, u: &[f64], velocity: &dyn Fn(usize) -> f64| {
        for p in probes.iter_mut() {
            p.u1.push(strain_at(u, p.node));
            p.u2.push(sqrt_rho[p.node] * velocity(p.node));
        }
        if plan.snapshot_steps.contains(&step) {
            snapshots.push(Snapshot {
                step,
                t: time.t(step),
                u: u.to_vec(),
                u1: (0..n).map(|j| strain_at(u, j)).collect(),
                u2: (0..n).map(|j| sqrt_rho[j] * velocity(j)).collect(),
            });
        }
    };

    let start = solver.previous().to_vec();
    record(0, &start, &|j| if j == 0 || j == n - 1 { 0.0 } else { v0[j] });

    // the solver holds (u^{m-1}, u^m); one extra step supplies the velocity at T
    let mut older = start;
    let dt = time.dt;
    let mut forcing = vec![0.0; n];
    for m in 1..=time.n_steps {
        energy.push(solver.staggered_energy());
        let t_m = time.t(m);
        if let Some(f) = source {
            for (j, v) in forcing.iter_mut().enumerate() {
                *v = f(t_m, x[j]);
            }
        }
        let middle = solver.current().to_vec();
        solver.advance(source.map(|_| forcing.as_slice()));
        let newer = solver.current();
        record(m, &middle, &|j| (newer[j] - older[j]) / (2.0 * dt));
        older = middle;
    }
    Ok(WaveTrajectory {
        x,
        time: *time,
        snapshots,
        probes,
        energy,
    })
}

/// A Dirichlet eigenpair of `-(a^eps v')' = lambda rho^eps v` on `(0, alpha)`,
/// normalized so that `int v^2 dx = 1`.
#[derive(Clone, Debug)]
pub struct PhysicalMode {
    pub lambda: f64,
    pub v: Vec<f64>,
}

impl PhysicalMode {
    /// `V = (1/sqrt 2)(-i s / sqrt(lambda) sqrt(a) v', sqrt(rho) v)` on the grid.
    pub fn first_order(
        &self,
        medium: &EpsilonMedium,
        grid: &UniformGrid,
        sign: f64,
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let strain = strain_field(medium, grid, &self.v);
        let scale = Complex64::new(0.0, -sign / (2.0 * self.lambda).sqrt());
        let first = strain.iter().map(|s| scale * s).collect();
        let second = grid
            .nodes()
            .iter()
            .zip(&self.v)
            .map(|(&x, v)| Complex64::new(medium.rho_at(x).sqrt() * v / 2f64.sqrt(), 0.0))
            .collect();
        (first, second)
    }
}

/// The symmetric tridiagonal `R^{-1/2} A R^{-1/2}` on interior nodes.
struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm count).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.diag.len() {
            let off_sq = if i == 0 { 0.0 } else { self.off[i - 1] * self.off[i - 1] };
            d = self.diag[i] - x - off_sq / d;
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + x.abs());
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    fn eigenvalue(&self, index: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > index {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - shift) x = b` by Gaussian elimination with partial pivoting.
    fn solve_shifted(&self, shift: f64, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        // rows stored as (main, upper, upper2) after elimination
        let mut main: Vec<f64> = self.diag.iter().map(|d| d - shift).collect();
        let mut upper: Vec<f64> = self.off.clone();
        upper.push(0.0);
        let mut upper2 = vec![0.0; n];
        let mut lower: Vec<f64> = self.off.clone();
        let mut rhs = b.to_vec();
        for i in 0..n - 1 {
            if lower[i].abs() > main[i].abs() {
                // swap rows i and i+1
                let (m0, u0, u20, r0) = (main[i], upper[i], upper2[i], rhs[i]);
                main[i] = lower[i];
                upper[i] = main[i + 1];
                upper2[i] = upper[i + 1];
                rhs[i] = rhs[i + 1];
                lower[i] = m0;
                main[i + 1] = u0;
                upper[i + 1] = u20;
                rhs[i + 1] = r0;
            }
            let pivot = if main[i] == 0.0 { f64::EPSILON } else { main[i] };
            let factor = lower[i] / pivot;
            main[i + 1] -= factor * upper[i];
            upper[i + 1] -= factor * upper2[i];
            rhs[i + 1] -= factor * rhs[i];
            main[i] = pivot;
        }
        if main[n - 1] == 0.0 {
            main[n - 1] = f64::EPSILON;
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = rhs[i];
            if i + 1 < n {
                s -= upper[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= upper2[i] * x[i + 2];
            }
            x[i] = s / main[i];
        }
        x
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Lowest `n_modes` Dirichlet eigenpairs on the fine grid, by Sturm bisection
/// and inverse iteration on the symmetrized three-point operator.
pub fn physical_eigenmodes(
    medium: &EpsilonMedium,
    n_modes: usize,
    grid: &UniformGrid,
) -> Result<Vec<PhysicalMode>> {
    medium.check_grid(grid)?;
    let interior = grid.n_intervals - 1;
    if n_modes == 0 || n_modes > interior {
        return Err(Error::invalid(format!("cannot extract {n_modes} modes from {interior} unknowns")));
    }
    let h = grid.h();
    let a_mid: Vec<f64> = (0..grid.n_intervals).map(|j| medium.a_at((j as f64 + 0.5) * h)).collect();
    let inv_sqrt_rho: Vec<f64> = (1..grid.n_intervals).map(|j| 1.0 / medium.rho_at(grid.x(j)).sqrt()).collect();
    let h2 = h * h;
    let diag = (0..interior)
        .map(|i| (a_mid[i] + a_mid[i + 1]) / h2 * inv_sqrt_rho[i] * inv_sqrt_rho[i])
        .collect();
    let off = (0..interior - 1)
        .map(|i| -a_mid[i + 1] / h2 * inv_sqrt_rho[i] * inv_sqrt_rho[i + 1])
        .collect();
    let t = Tridiagonal { diag, off };

    let mut found: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    let mut out = Vec::with_capacity(n_modes);
    for index in 0..n_modes {
        let lambda = t.eigenvalue(index);
        let shift = lambda * (1.0 + 1e-13) + 1e-300;
        let mut w: Vec<f64> = (0..interior).map(|i| 1.0 + ((i * 7919 + index * 104729) % 1000) as f64 * 1e-3).collect();
        normalize(&mut w);
        for _ in 0..4 {
            w = t.solve_shifted(shift, &w);
            for prev in &found {
                let dot: f64 = prev.iter().zip(&w).map(|(p, x)| p * x).sum();
                w.iter_mut().zip(prev).for_each(|(x, p)| *x -= dot * p);
            }
            normalize(&mut w);
        }
        let tw = multiply(&t, &w);
        let residual = tw
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / lambda.abs().max(1.0);
        if !residual.is_finite() || residual > 1e-6 {
            return Err(Error::NumericalFailure {
                message: format!("inverse iteration did not converge for Dirichlet mode {}", index + 1),
                residual,
            });
        }
        found.push(w.clone());

        let mut v = vec![0.0; grid.n_nodes()];
        for i in 0..interior {
            v[i + 1] = w[i] * inv_sqrt_rho[i];
        }
        let norm = (v.iter().map(|x| x * x).sum::<f64>() * h).sqrt();
        // sign convention: positive slope at x = 0
        let sign = if v[1] < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|x| *x *= sign / norm);
        out.push(PhysicalMode { lambda, v });
    }
    Ok(out)
}

fn multiply(t: &Tridiagonal, w: &[f64]) -> Vec<f64> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let mut s = t.diag[i] * w[i];
            if i > 0 {
                s += t.off[i - 1] * w[i - 1];
            }
            if i + 1 < n {
                s += t.off[i] * w[i + 1];
            }
            s
        })
        .collect()
}

pub fn write_eigenmodes_csv<W: Write>(
    out: W,
    grid: &UniformGrid,
    modes: &[PhysicalMode],
    header_comment: Option<&str>,
) -> Result<()> {
    let mut out = out;
    if let Some(c) = header_comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["x".to_string()];
    header.extend((1..=modes.len()).map(|l| format!("v_{l}")));
    w.write_record(&header)?;
    for (j, x) in grid.nodes().iter().enumerate() {
        let mut rec = vec![format!("{x:.12e}")];
        rec.extend(modes.iter().map(|m| format!("{:.12e}", m.v[j])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
