//! Homogenized envelope transport `B dU/dt = s C dU/dx + F` on `(0, alpha)`
//! with the phase-coupled boundary condition
//! `sum_p u_p^sigma phi_p^sigma(0) e^{sign(sigma) 2 i pi l x / alpha} = 0`
//! at both ends, plus the classical low-frequency homogenized wave equation.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::cell::CellCoefficients;
use crate::direct::{solve_wave, EpsilonMedium, RecordPlan, SourceFn, WaveTrajectory};
use crate::envelope::{interpolate_cubic, Envelope};
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, UniformGrid};
use crate::spectrum::{BlochMode, ModeCluster};

/// Orientation fixed by the direct-solver calibration: with `s = +1` the
/// envelope of `(k, n)` travels at `-c/b`, the group velocity of its packet.
pub const CALIBRATED_ORIENTATION: f64 = 1.0;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Source envelopes `F(t, x)`, one entry per component.
pub type MacroSource = Arc<dyn Fn(f64, f64, &mut [Complex64]) + Send + Sync>;

/// One unknown `u_p^sigma` of the macro system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub sigma: f64,
    /// Signed mode index `p`.
    pub n: i32,
    /// Boundary trace `phi_|p|^sigma(0)`, stored as `[re, im]`.
    #[serde(serialize_with = "serialize_complex")]
    pub phi0: Complex64,
}

fn serialize_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    [z.re, z.im].serialize(s)
}

/// The assembled macro system for one eigenvalue level across the fiber pair.
#[derive(Clone)]
pub struct CouplingSystem {
    pub k: f64,
    pub orientation: f64,
    pub components: Vec<Component>,
    pub b: DMatrix<Complex64>,
    pub c: DMatrix<Complex64>,
    pub l_k: f64,
    pub alpha: f64,
    /// Right-hand side `U0` of `B U(0) = U0`, per component.
    pub initial: Vec<Envelope>,
    pub source: Option<MacroSource>,
    /// False when every boundary trace vanishes.
    pub boundary_applicable: bool,
    /// Characteristic basis: `W^H B W = I`, `W^H C W = diag(mu)`.
    characteristic: DMatrix<Complex64>,
    mu: Vec<f64>,
}

impl std::fmt::Debug for CouplingSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CouplingSystem")
            .field("k", &self.k)
            .field("orientation", &self.orientation)
            .field("components", &self.components)
            .field("b", &self.b)
            .field("c", &self.c)
            .field("l_k", &self.l_k)
            .field("alpha", &self.alpha)
            .field("speeds", &self.speeds())
            .finish_non_exhaustive()
    }
}

impl CouplingSystem {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Characteristic speeds `-s mu_i`, where `mu` solves `C w = mu B w`.
    pub fn speeds(&self) -> Vec<f64> {
        self.mu.iter().map(|m| -self.orientation * m).collect()
    }

    pub fn max_speed(&self) -> f64 {
        self.mu.iter().map(|m| m.abs()).fold(0.0, f64::max)
    }

    pub fn characteristic_basis(&self) -> &DMatrix<Complex64> {
        &self.characteristic
    }

    /// Boundary row `phi_p^sigma(0) e^{sign(sigma) 2 i pi l x / alpha}` at `x`.
    pub fn boundary_row(&self, x: f64) -> Vec<Complex64> {
        self.components
            .iter()
            .map(|c| c.phi0 * Complex64::cis(sign(c.sigma) * 2.0 * PI * self.l_k * x / self.alpha))
            .collect()
    }

    pub fn with_source(mut self, source: MacroSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_orientation(mut self, orientation: f64) -> Self {
        self.orientation = orientation.signum();
        self
    }

    pub fn summary(&self) -> SystemSummary {
        let to_rows = |m: &DMatrix<Complex64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect()
        };
        SystemSummary {
            k: self.k,
            orientation: self.orientation,
            l_k: self.l_k,
            alpha: self.alpha,
            components: self.components.clone(),
            b: to_rows(&self.b),
            c: to_rows(&self.c),
            speeds: self.speeds(),
            boundary_applicable: self.boundary_applicable,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Plain report of an assembled system.
#[derive(Clone, Debug, Serialize)]
pub struct SystemSummary {
    pub k: f64,
    pub orientation: f64,
    pub l_k: f64,
    pub alpha: f64,
    pub components: Vec<Component>,
    pub b: Vec<Vec<[f64; 2]>>,
    pub c: Vec<Vec<[f64; 2]>>,
    pub speeds: Vec<f64>,
    pub boundary_applicable: bool,
}

impl SystemSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary is plain data")
    }
}

/// Builds the block-diagonal system over the fiber pair from the clusters
/// of one signed eigenvalue level, one cluster per fiber.
///
/// `initial` holds one envelope per component: the members of the `+k`
/// cluster first, then those of `-k`.
pub fn assemble_macro_system(
    clusters: &[ModeCluster],
    modes: &[BlochMode],
    l_k: f64,
    alpha: f64,
    initial: Vec<Envelope>,
) -> Result<CouplingSystem> {
    let first = clusters
        .first()
        .ok_or_else(|| Error::invalid("no clusters supplied"))?;
    let k = first.k.abs();
    if !(0.0..1.0).contains(&l_k) {
        return Err(Error::invalid(format!("l_k = {l_k} outside [0, 1)")));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("domain length must be positive"));
    }
    let single_fiber = k < 1e-14 || (k - 0.5).abs() < 1e-14;
    if single_fiber && l_k != 0.0 && k < 1e-14 {
        return Err(Error::invalid("l_k must vanish on the k=0 fiber"));
    }
    if !single_fiber {
        for target in [k, -k] {
            if !clusters.iter().any(|c| (c.k - target).abs() < 1e-14) {
                return Err(Error::IncompletePair { missing: target });
            }
        }
    }
    for c in clusters {
        if !c.has_coefficients() {
            return Err(Error::invalid("cluster coefficients have not been computed"));
        }
        if (c.lambda - first.lambda).abs() > 1e-8 * first.lambda {
            return Err(Error::invalid(format!(
                "clusters mix eigenvalue levels {} and {}",
                first.lambda, c.lambda
            )));
        }
        if c.sign() != first.sign() {
            return Err(Error::invalid("clusters mix mode signs"));
        }
    }
    // fiber order: +k first, then -k
    let mut ordered: Vec<&ModeCluster> = clusters.iter().collect();
    ordered.sort_by(|a, b| b.k.total_cmp(&a.k));

    let dim: usize = ordered.iter().map(|c| c.len()).sum();
    let mut b = DMatrix::zeros(dim, dim);
    let mut cm = DMatrix::zeros(dim, dim);
    let mut components = Vec::with_capacity(dim);
    let mut offset = 0;
    for cl in &ordered {
        let members = cl.members(modes)?;
        for (i, m) in members.iter().enumerate() {
            components.push(Component {
                sigma: cl.k,
                n: m.n,
                phi0: m.phi.eval(0.0),
            });
            for j in 0..cl.len() {
                b[(offset + i, offset + j)] = cl.b_matrix[(i, j)];
                cm[(offset + i, offset + j)] = cl.c_matrix[(i, j)];
            }
        }
        offset += cl.len();
    }
    if initial.len() != dim {
        return Err(Error::invalid(format!(
            "{} initial envelopes for {dim} components",
            initial.len()
        )));
    }

    let scale = b.norm().max(cm.norm());
    if (&b - b.adjoint()).norm() > 1e-10 * scale {
        return Err(Error::invalid("B is not Hermitian"));
    }
    if (&cm - cm.adjoint()).norm() > 1e-8 * scale {
        return Err(Error::invalid("C is not Hermitian; the system is not hyperbolic"));
    }
    let b = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
    let cm = (&cm + cm.adjoint()) * Complex64::new(0.5, 0.0);
    let (characteristic, mu) = characteristic_decomposition(&b, &cm)?;

    let boundary_applicable = components.iter().any(|c| c.phi0.norm() > 1e-12);
    if !boundary_applicable {
        log::warn!("boundary condition inapplicable: every trace phi(0) vanishes; using zero inflow");
    }
    Ok(CouplingSystem {
        k,
        orientation: CALIBRATED_ORIENTATION,
        components,
        b,
        c: cm,
        l_k,
        alpha,
        initial,
        source: None,
        boundary_applicable,
        characteristic,
        mu,
    })
}

fn characteristic_decomposition(
    b: &DMatrix<Complex64>,
    c: &DMatrix<Complex64>,
) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    let chol = Cholesky::new(b.clone()).ok_or_else(|| Error::NumericalFailure {
        message: "B is not positive definite".into(),
        residual: f64::NAN,
    })?;
    let l = chol.l();
    let singular = || Error::NumericalFailure {
        message: "singular Cholesky factor of B".into(),
        residual: f64::NAN,
    };
    let y = l.solve_lower_triangular(c).ok_or_else(singular)?;
    let reduced = l.solve_lower_triangular(&y.adjoint()).ok_or_else(singular)?.adjoint();
    let reduced = (&reduced + reduced.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(reduced, f64::EPSILON, 10_000).ok_or_else(|| Error::NumericalFailure {
        message: "characteristic decomposition did not converge".into(),
        residual: f64::NAN,
    })?;
    let w = l.adjoint().solve_upper_triangular(&eig.eigenvectors).ok_or_else(singular)?;
    Ok((w, eig.eigenvalues.iter().copied().collect()))
}

/// Numerical flux for the characteristic variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Upwind,
    /// Second-order Lax-Wendroff correction with a flux limiter.
    LimitedLaxWendroff(Limiter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limiter {
    /// Unlimited Lax-Wendroff.
    None,
    Minmod,
    VanLeer,
}

impl Limiter {
    fn apply(self, r: f64) -> f64 {
        match self {
            Limiter::None => 1.0,
            Limiter::Minmod => r.clamp(0.0, 1.0),
            Limiter::VanLeer => (r + r.abs()) / (1.0 + r.abs()),
        }
    }
}

/// Solver settings for [`solve_macro`].
#[derive(Clone, Copy, Debug)]
pub struct MacroOptions {
    pub scheme: Scheme,
    /// Store every `record_every`-th step (the last step is always stored).
    pub record_every: usize,
}

impl Default for MacroOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Upwind,
            record_every: 1,
        }
    }
}

/// Envelopes `u_p^sigma(t, x)` on a uniform space-time grid.
#[derive(Clone, Debug)]
pub struct MacroField {
    pub components: Vec<Component>,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[r][p * n_x + i]` is component `p` at `t[r]`, `x[i]`.
    values: Vec<Vec<Complex64>>,
    /// Discrete energy `sum U^H B U dx` at each recorded time.
    pub energy: Vec<f64>,
    /// Largest normalized residual of the boundary condition over steps `>= 1`.
    pub boundary_residual: f64,
    /// Largest `|incoming| / |outgoing|` deviation from 1 at `x = 0`, for
    /// 2-component systems with one incoming characteristic.
    pub reflection_modulus_error: f64,
}

impl MacroField {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn value(&self, record: usize, component: usize, node: usize) -> Complex64 {
        self.values[record][component * self.x.len() + node]
    }

    pub fn slice(&self, record: usize, component: usize) -> &[Complex64] {
        let n = self.x.len();
        &self.values[record][component * n..(component + 1) * n]
    }

    /// Cubic interpolation in `x`, linear in `t`.
    pub fn sample(&self, component: usize, t: f64, x: f64) -> Complex64 {
        let r = self.t.partition_point(|&ti| ti <= t).clamp(1, self.t.len().max(2) - 1);
        if self.t.len() == 1 {
            return interpolate_cubic(&self.x, self.slice(0, component), x);
        }
        let (t0, t1) = (self.t[r - 1], self.t[r]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let v0 = interpolate_cubic(&self.x, self.slice(r - 1, component), x);
        let v1 = interpolate_cubic(&self.x, self.slice(r, component), x);
        v0 * (1.0 - w) + v1 * w
    }

    pub fn write_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "x".to_string()];
        for c in &self.components {
            header.push(format!("re_u[{}|{}]", c.sigma, c.n));
            header.push(format!("im_u[{}|{}]", c.sigma, c.n));
        }
        w.write_record(&header)?;
        for (r, t) in self.t.iter().enumerate() {
            for (i, x) in self.x.iter().enumerate() {
                let mut rec = vec![format!("{t:.12e}"), format!("{x:.12e}")];
                for p in 0..self.n_components() {
                    let v = self.value(r, p, i);
                    rec.push(format!("{:.12e}", v.re));
                    rec.push(format!("{:.12e}", v.im));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Explicit characteristic transport with the boundary condition solved for
/// the incoming characteristics at each end.
pub fn solve_macro(
    system: &CouplingSystem,
    grid: &UniformGrid,
    time: &TimeGrid,
    options: MacroOptions,
) -> Result<MacroField> {
    if (grid.length - system.alpha).abs() > 1e-12 * system.alpha {
        return Err(Error::invalid("macro grid does not span the domain"));
    }
    let dx = grid.h();
    let dt = time.dt;
    let courant = dt * system.max_speed() / dx;
    if courant > 1.0 + 1e-12 {
        return Err(Error::Cfl(format!(
            "dt*max|speed|/dx = {courant:.4} exceeds 1"
        )));
    }
    if options.record_every == 0 {
        return Err(Error::invalid("record_every must be at least 1"));
    }
    let dim = system.dim();
    let nx = grid.n_nodes();
    let xs = grid.nodes();
    let w = system.characteristic_basis();
    let w_adj = w.adjoint();
    let speeds = system.speeds();

    // characteristic variables V = W^{-1} U = W^H B U = W^H U0
    let mut v: Vec<DVector<Complex64>> = xs
        .iter()
        .map(|&x| {
            let u0 = DVector::from_fn(dim, |p, _| system.initial[p].eval(x));
            &w_adj * u0
        })
        .collect();

    let left = BoundarySolve::new(system, 0.0, &speeds, 1.0)?;
    let right = BoundarySolve::new(system, system.alpha, &speeds, -1.0)?;

    let mut field = MacroField {
        components: system.components.clone(),
        x: xs.clone(),
        t: Vec::new(),
        values: Vec::new(),
        energy: Vec::new(),
        boundary_residual: 0.0,
        reflection_modulus_error: 0.0,
    };
    let record = |field: &mut MacroField, v: &[DVector<Complex64>], t: f64| {
        let mut values = vec![ZERO; dim * nx];
        let mut energy = 0.0;
        for (i, vi) in v.iter().enumerate() {
            let u = w * vi;
            for p in 0..dim {
                values[p * nx + i] = u[p];
            }
            let weight = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
            energy += weight * vi.norm_squared() * dx;
        }
        field.t.push(t);
        field.values.push(values);
        field.energy.push(energy);
    };
    record(&mut field, &v, 0.0);

    let mut forcing = vec![ZERO; dim];
    let mut next = v.clone();
    for step in 1..=time.n_steps {
        for q in 0..dim {
            let nu = speeds[q] * dt / dx;
            for i in 0..nx {
                next[i][q] = transport(&v, q, i, nu, options.scheme);
            }
        }
        if let Some(src) = &system.source {
            let t_prev = time.t(step - 1);
            for (i, &x) in xs.iter().enumerate() {
                src(t_prev, x, &mut forcing);
                let g = &w_adj * DVector::from_column_slice(&forcing);
                next[i] += g * Complex64::new(dt, 0.0);
            }
        }
        let res_l = left.enforce(&mut next[0], w);
        let res_r = right.enforce(&mut next[nx - 1], w);
        field.boundary_residual = field.boundary_residual.max(res_l).max(res_r);
        if let Some(err) = left.reflection_error(&next[0]) {
            field.reflection_modulus_error = field.reflection_modulus_error.max(err);
        }
        std::mem::swap(&mut v, &mut next);
        if step % options.record_every == 0 || step == time.n_steps {
            record(&mut field, &v, time.t(step));
        }
    }
    Ok(field)
}

/// New value of characteristic `q` at node `i`. Inflow nodes keep their
/// value until the boundary solve overwrites them.
fn transport(v: &[DVector<Complex64>], q: usize, i: usize, nu: f64, scheme: Scheme) -> Complex64 {
    let n = v.len() as isize;
    let here = v[i][q];
    if nu == 0.0 {
        return here;
    }
    // information travels along +dir
    let dir: isize = if nu > 0.0 { 1 } else { -1 };
    let get = |j: isize| (0..n).contains(&j).then(|| v[j as usize][q]);
    let i = i as isize;
    let c = nu.abs();
    let Some(up1) = get(i - dir) else {
        return here;
    };
    let upwind = here - (here - up1) * c;
    match scheme {
        Scheme::Upwind => upwind,
        Scheme::LimitedLaxWendroff(limiter) => {
            let Some(down1) = get(i + dir) else {
                return upwind;
            };
            let up2 = get(i - 2 * dir);
            // real and imaginary parts are limited separately
            let face = |lo: Complex64, hi: Complex64, before: Option<Complex64>| -> Complex64 {
                let d = hi - lo;
                let limit = |d: f64, p: Option<f64>| match (limiter, p) {
                    (Limiter::None, _) => d,
                    (_, Some(p)) if d != 0.0 => limiter.apply(p / d) * d,
                    _ => 0.0,
                };
                let p = before.map(|b| lo - b);
                Complex64::new(limit(d.re, p.map(|p| p.re)), limit(d.im, p.map(|p| p.im)))
            };
            let f_hi = face(here, down1, Some(up1));
            let f_lo = face(up1, here, up2);
            upwind - (f_hi - f_lo) * (0.5 * c * (1.0 - c))
        }
    }
}

/// Boundary row restricted to characteristic variables at one endpoint.
struct BoundarySolve {
    row: Vec<Complex64>,
    boundary_row: DVector<Complex64>,
    incoming: Vec<usize>,
    outgoing: Vec<usize>,
    zero_inflow: bool,
}

impl BoundarySolve {
    /// `inward` is +1 at `x = 0` and -1 at `x = alpha`.
    fn new(system: &CouplingSystem, x: f64, speeds: &[f64], inward: f64) -> Result<Self> {
        let phi = DVector::from_vec(system.boundary_row(x));
        let row_vec = phi.transpose() * system.characteristic_basis();
        let row: Vec<Complex64> = row_vec.iter().copied().collect();
        let incoming: Vec<usize> = (0..speeds.len()).filter(|&q| speeds[q] * inward > 0.0).collect();
        let outgoing: Vec<usize> = (0..speeds.len()).filter(|&q| speeds[q] * inward <= 0.0).collect();
        let scale = row.iter().map(|r| r.norm()).fold(0.0, f64::max);
        let in_norm = incoming.iter().map(|&q| row[q].norm_sqr()).sum::<f64>().sqrt();
        let zero_inflow = !system.boundary_applicable;
        if !zero_inflow {
            if incoming.is_empty() {
                log::info!("no incoming characteristic at x={x}; boundary condition imposes nothing");
            } else if in_norm <= 1e-12 * scale {
                return Err(Error::BoundaryDegeneracy { x, coefficient: in_norm });
            } else if incoming.len() > 1 {
                log::info!(
                    "{} incoming characteristics at x={x}; using the minimum-norm boundary solve",
                    incoming.len()
                );
            }
        }
        Ok(Self {
            row,
            boundary_row: phi,
            incoming,
            outgoing,
            zero_inflow,
        })
    }

    /// Overwrites the incoming values; returns the normalized residual
    /// `|Phi . U| / (|Phi| |U|)`.
    fn enforce(&self, v: &mut DVector<Complex64>, w: &DMatrix<Complex64>) -> f64 {
        if self.zero_inflow {
            for &q in &self.incoming {
                v[q] = ZERO;
            }
            return 0.0;
        }
        if !self.incoming.is_empty() {
            let rhs: Complex64 = -self.outgoing.iter().map(|&q| self.row[q] * v[q]).sum::<Complex64>();
            let norm_sq: f64 = self.incoming.iter().map(|&q| self.row[q].norm_sqr()).sum();
            for &q in &self.incoming {
                v[q] = rhs * self.row[q].conj() / norm_sq;
            }
        }
        let u = w * &*v;
        let residual = (self.boundary_row.transpose() * &u)[(0, 0)].norm();
        let scale = self.boundary_row.norm() * u.norm();
        if scale == 0.0 {
            0.0
        } else {
            residual / scale
        }
    }

    /// `| |incoming| / |outgoing| - 1 |` for a single reflection pair.
    fn reflection_error(&self, v: &DVector<Complex64>) -> Option<f64> {
        if self.zero_inflow || self.incoming.len() != 1 || self.outgoing.len() != 1 {
            return None;
        }
        let (vin, vout) = (v[self.incoming[0]].norm(), v[self.outgoing[0]].norm());
        (vout > 1e-12).then(|| (vin / vout - 1.0).abs())
    }
}

/// The factor `r` with `V_in = r V_out` at `x = 0` for a two-fiber singleton
/// system; its modulus is one under conjugate pairing.
pub fn reflection_factor(system: &CouplingSystem) -> Option<Complex64> {
    if system.dim() != 2 {
        return None;
    }
    let speeds = system.speeds();
    let phi = DVector::from_vec(system.boundary_row(0.0));
    let row = phi.transpose() * system.characteristic_basis();
    let (qin, qout) = if speeds[0] > 0.0 { (0, 1) } else { (1, 0) };
    (speeds[qin] > 0.0 && speeds[qout] < 0.0).then(|| -row[qout] / row[qin])
}

/// Effective stiffness (harmonic mean of `a`) and density (mean of `rho`).
pub fn effective_coefficients(cell: &CellCoefficients) -> (f64, f64) {
    (cell.harmonic_mean_a(), cell.mean_rho())
}

/// The low-frequency homogenized wave equation
/// `rho* u_tt - a* u_xx = f` with Dirichlet ends.
pub fn solve_low_frequency_homogenized(
    cell: &CellCoefficients,
    alpha: f64,
    grid: &UniformGrid,
    u0: &[f64],
    v0: &[f64],
    source: Option<SourceFn>,
    time: &TimeGrid,
    plan: &RecordPlan,
) -> Result<WaveTrajectory> {
    let (a_star, rho_star) = effective_coefficients(cell);
    let homogenized = CellCoefficients::homogeneous(8, a_star, rho_star)?;
    let medium = EpsilonMedium::new(homogenized, alpha, 1)?;
    solve_wave(&medium, grid, u0, v0, source, time, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{build_first_order_modes, coupling_coefficients, detect_clusters, solve_cell_eigen, CLUSTER_REL_TOL};

    fn pair_system(cell: &CellCoefficients, k: f64, n: i32, l: f64, init: impl Fn(usize) -> Envelope) -> CouplingSystem {
        let mut modes = Vec::new();
        let mut clusters = Vec::new();
        for sigma in [k, -k] {
            let m = build_first_order_modes(&solve_cell_eigen(cell, sigma, n.unsigned_abs() as usize, 16).unwrap(), cell).unwrap();
            let cl = detect_clusters(&m, sigma, CLUSTER_REL_TOL)
                .into_iter()
                .find(|c| c.indices == vec![n])
                .unwrap();
            clusters.push(coupling_coefficients(&cl, &m, cell).unwrap());
            modes.extend(m);
        }
        assemble_macro_system(&clusters, &modes, l, 1.0, (0..2).map(init).collect()).unwrap()
    }

    fn zero_env(_: usize) -> Envelope {
        Envelope::zeros(vec![0.0, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn unit_medium_speeds_are_unit() {
        let cell = CellCoefficients::homogeneous(32, 1.0, 1.0).unwrap();
        let sys = pair_system(&cell, 0.16, 1, 0.0, zero_env);
        let mut s = sys.speeds();
        s.sort_by(f64::total_cmp);
        assert!((s[0] + 1.0).abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12);
        let summary = sys.summary().to_json();
        assert!(summary.contains("\"speeds\""));
    }

    #[test]
    fn zero_data_stays_zero() {
        let cell = CellCoefficients::sine(64).unwrap();
        let sys = pair_system(&cell, 0.16, 2, 0.6, zero_env);
        let grid = UniformGrid::new(1.0, 50).unwrap();
        let time = TimeGrid::new(0.5, 40).unwrap();
        let f = solve_macro(&sys, &grid, &time, MacroOptions::default()).unwrap();
        assert!(f.values.iter().flatten().all(|v| *v == ZERO));
    }

    #[test]
    fn missing_fiber_is_reported() {
        let cell = CellCoefficients::sine(64).unwrap();
        let m = build_first_order_modes(&solve_cell_eigen(&cell, 0.16, 2, 16).unwrap(), &cell).unwrap();
        let cl = detect_clusters(&m, 0.16, CLUSTER_REL_TOL).into_iter().find(|c| c.indices == vec![2]).unwrap();
        let cl = coupling_coefficients(&cl, &m, &cell).unwrap();
        let err = assemble_macro_system(&[cl], &m, 0.0, 1.0, vec![zero_env(0)]).unwrap_err();
        assert!(matches!(err, Error::IncompletePair { .. }));
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let cell = CellCoefficients::homogeneous(32, 1.0, 1.0).unwrap();
        let sys = pair_system(&cell, 0.16, 1, 0.0, zero_env);
        let grid = UniformGrid::new(1.0, 10).unwrap();
        let time = TimeGrid::new(1.0, 5).unwrap();
        assert!(matches!(solve_macro(&sys, &grid, &time, MacroOptions::default()), Err(Error::Cfl(_))));
    }

    #[test]
    fn harmonic_mean_of_constant() {
        let cell = CellCoefficients::homogeneous(16, 2.5, 3.0).unwrap();
        let (a, rho) = effective_coefficients(&cell);
        assert!((a - 2.5).abs() < 1e-14 && (rho - 3.0).abs() < 1e-14);
    }

    #[test]
    fn limiters() {
        assert_eq!(Limiter::Minmod.apply(2.0), 1.0);
        assert_eq!(Limiter::Minmod.apply(-1.0), 0.0);
        assert!((Limiter::VanLeer.apply(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(Limiter::None.apply(-3.0), 1.0);
    }
}
