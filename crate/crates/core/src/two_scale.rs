//! Epsilon arithmetic, cell projections of physical data onto Bloch modes,
//! the Bloch-mode initial condition and the two-scale reconstruction
//!
//! ```text
//! U(t, x) ~ chi0(k) U_H(t, x) + sum_sigma sum_n u_n^sigma(t, x) e^{i s_n sqrt(lambda) t / eps} e_n^sigma(x / eps)
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::cell::CellCoefficients;
use crate::direct::{EpsilonMedium, WaveTrajectory};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::grid::{TimeGrid, UniformGrid};
use crate::macro_solver::MacroField;
use crate::spectrum::BlochMode;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// The split `alpha k / eps = h + l` with `h` integer and `l` in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonDecomposition {
    pub k: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub n_cells: u64,
    pub h: i64,
    pub l: f64,
    pub l_exact: Ratio<i64>,
    /// Limit phase `l^k` along the admissible sequence this member belongs to.
    pub l_limit: f64,
}

fn exact_fiber(k: f64) -> Result<Ratio<i64>> {
    Ratio::<i64>::approximate_float(k)
        .filter(|r| (r.to_f64().unwrap_or(f64::NAN) - k).abs() <= 1e-12)
        .ok_or_else(|| Error::invalid(format!("fiber k={k} has no exact rational form")))
}

/// Decomposition for `eps = alpha / n_cells`. Because `alpha / eps` is the
/// integer `n_cells`, the split is exact on the rational form of `k`.
pub fn decomposition_for_cells(k: f64, alpha: f64, n_cells: u64) -> Result<EpsilonDecomposition> {
    if !(-0.5..=0.5).contains(&k) {
        return Err(Error::invalid(format!("fiber k={k} outside [-1/2, 1/2]")));
    }
    if n_cells == 0 || !(alpha > 0.0) {
        return Err(Error::invalid("need alpha > 0 and at least one cell"));
    }
    let ratio = exact_fiber(k)? * Ratio::from_integer(n_cells as i64);
    let h = ratio.floor();
    let l_exact = ratio - h;
    let l = l_exact.to_f64().unwrap_or(0.0);
    Ok(EpsilonDecomposition {
        k,
        alpha,
        epsilon: alpha / n_cells as f64,
        n_cells,
        h: h.to_integer(),
        l,
        l_exact,
        l_limit: l,
    })
}

/// Decomposition for a given `eps`, which must be `alpha / N` for an integer `N`.
pub fn epsilon_decomposition(k: f64, alpha: f64, epsilon: f64) -> Result<EpsilonDecomposition> {
    let ratio = alpha / epsilon;
    let n = ratio.round();
    if !(epsilon > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * n {
        return Err(Error::invalid(format!(
            "epsilon={epsilon} is not alpha/N for an integer N (alpha/epsilon={ratio})"
        )));
    }
    let mut d = decomposition_for_cells(k, alpha, n as u64)?;
    d.epsilon = epsilon;
    Ok(d)
}

/// Decompositions along `alpha / N` for each `N`, all sharing one phase `l`.
pub fn admissible_sequence(k: f64, alpha: f64, n_cells: &[u64]) -> Result<Vec<EpsilonDecomposition>> {
    let list: Vec<EpsilonDecomposition> = n_cells
        .iter()
        .map(|&n| decomposition_for_cells(k, alpha, n))
        .collect::<Result<_>>()?;
    if let Some(first) = list.first() {
        if let Some(bad) = list.iter().find(|d| d.l_exact != first.l_exact) {
            return Err(Error::InvalidSequence(format!(
                "l = {} at N = {} but l = {} at N = {}",
                first.l_exact, first.n_cells, bad.l_exact, bad.n_cells
            )));
        }
    }
    Ok(list)
}

/// The coupled fibers: `{k, -k}`, or `{k}` on the real fibers 0 and 1/2.
pub fn fiber_pair(k: f64) -> Vec<f64> {
    if k.abs() < 1e-14 || (k.abs() - 0.5).abs() < 1e-14 {
        vec![k]
    } else {
        vec![k.abs(), -k.abs()]
    }
}

/// The fiber `j / (2N)` nearest `k`: Dirichlet eigenmodes of an `N`-cell
/// domain combine Bloch waves of these fibers.
pub fn nearest_dirichlet_fiber(k: f64, n_cells: u64) -> f64 {
    let two_n = 2.0 * n_cells as f64;
    (k * two_n).round() / two_n
}

/// How the per-cell projection treats the conjugate fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMethod {
    /// `e^{-2 i pi sigma j} int_Y U(x_j + eps y) conj(e(y)) dy` for each mode alone.
    CellAverage,
    /// Solves the per-cell Gram system of all supplied modes, so the
    /// cross-fiber overlap of real data does not leak between `+k` and `-k`.
    /// The result is reported in the same `B`-weighted form as `CellAverage`.
    PairResolved,
}

fn trapezoid_weights(p: usize) -> Vec<f64> {
    let mut w = vec![1.0 / p as f64; p + 1];
    w[0] *= 0.5;
    w[p] *= 0.5;
    w
}

fn points_per_cell(medium: &EpsilonMedium, grid: &UniformGrid) -> Result<usize> {
    let n = medium.n_cells() as usize;
    if grid.n_intervals % n != 0 || (grid.length - medium.alpha()).abs() > 1e-12 * medium.alpha() {
        return Err(Error::MisalignedGrid(format!(
            "{} intervals on length {} do not tile {n} cells",
            grid.n_intervals, grid.length
        )));
    }
    Ok(grid.n_intervals / n)
}

/// Cell centers `x_j + eps / 2`, where projected envelopes are sampled.
pub fn cell_centers(medium: &EpsilonMedium) -> Vec<f64> {
    let eps = medium.epsilon();
    (0..medium.n_cells()).map(|j| (j as f64 + 0.5) * eps).collect()
}

struct CellQuadrature {
    weights: Vec<f64>,
    /// `e[m][q]` is mode `m` at `y_q = q / P`.
    e: Vec<Vec<[Complex64; 2]>>,
}

impl CellQuadrature {
    fn new(cell: &CellCoefficients, modes: &[BlochMode], p: usize) -> Self {
        let e = modes
            .iter()
            .map(|m| (0..=p).map(|q| m.e_at(cell, q as f64 / p as f64)).collect())
            .collect();
        Self {
            weights: trapezoid_weights(p),
            e,
        }
    }

    fn gram(&self) -> DMatrix<Complex64> {
        let n = self.e.len();
        DMatrix::from_fn(n, n, |m, k| {
            self.weights
                .iter()
                .enumerate()
                .map(|(q, w)| {
                    let (a, b) = (self.e[k][q], self.e[m][q]);
                    (a[0] * b[0].conj() + a[1] * b[1].conj()) * *w
                })
                .sum()
        })
    }
}

fn check_first_order(modes: &[BlochMode]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::invalid("no modes to project on"));
    }
    match modes.iter().find(|m| !m.has_first_order()) {
        Some(m) => Err(Error::MissingMode(format!(
            "first-order mode n={} at k={} was not built",
            m.n, m.k
        ))),
        None => Ok(()),
    }
}

/// Solves `G~ u = P` cell by cell, with `G~ = D G D^H` and
/// `D = diag(e^{-2 i pi sigma_m j})`. Returns the mode amplitudes `u`.
fn solve_cells(gram: &DMatrix<Complex64>, modes: &[BlochMode], raw: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
    let dim = modes.len();
    let lu = gram.clone().lu();
    let n_cells = raw[0].len();
    let mut out = vec![vec![Complex64::zero(); n_cells]; dim];
    for j in 0..n_cells {
        let d: Vec<Complex64> = modes.iter().map(|m| Complex64::cis(-2.0 * PI * m.k * j as f64)).collect();
        let rhs = DVector::from_fn(dim, |m, _| d[m].conj() * raw[m][j]);
        let z = lu.solve(&rhs).ok_or_else(|| Error::NumericalFailure {
            message: "singular cell Gram matrix; the projected modes are not independent".into(),
            residual: f64::NAN,
        })?;
        for m in 0..dim {
            out[m][j] = d[m] * z[m];
        }
    }
    Ok(out)
}

/// Applies the same-fiber blocks of the Gram matrix, giving the `B`-weighted
/// form `B U(0)`.
fn weight_same_fiber(gram: &DMatrix<Complex64>, modes: &[BlochMode], u: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    let dim = modes.len();
    let n_cells = u[0].len();
    let mut out = vec![vec![Complex64::zero(); n_cells]; dim];
    for j in 0..n_cells {
        for m in 0..dim {
            out[m][j] = (0..dim)
                .filter(|&n| (modes[m].k - modes[n].k).abs() < 1e-14)
                .map(|n| gram[(m, n)] * u[n][j])
                .sum();
        }
    }
    out
}

fn raw_projection(
    fields: [&[Complex64]; 2],
    quad: &CellQuadrature,
    modes: &[BlochMode],
    n_cells: usize,
    p: usize,
) -> Vec<Vec<Complex64>> {
    modes
        .iter()
        .zip(&quad.e)
        .map(|(mode, e)| {
            (0..n_cells)
                .map(|j| {
                    let integral: Complex64 = (0..=p)
                        .map(|q| {
                            let node = j * p + q;
                            (e[q][0].conj() * fields[0][node] + e[q][1].conj() * fields[1][node]) * quad.weights[q]
                        })
                        .sum();
                    Complex64::cis(-2.0 * PI * mode.k * j as f64) * integral
                })
                .collect()
        })
        .collect()
}

fn to_complex(f: &[f64]) -> Vec<Complex64> {
    f.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Projects a first-order field `U0 = (U0_1, U0_2)` sampled on `grid` onto
/// each mode. Returns one envelope per mode, sampled at the cell centers,
/// in the `B`-weighted form.
pub fn project_initial_data(
    fields: [&[f64]; 2],
    medium: &EpsilonMedium,
    grid: &UniformGrid,
    modes: &[BlochMode],
    decomposition: &EpsilonDecomposition,
    method: ProjectionMethod,
) -> Result<Vec<Envelope>> {
    check_first_order(modes)?;
    if decomposition.n_cells != medium.n_cells() {
        return Err(Error::invalid("decomposition and medium disagree on the cell count"));
    }
    let p = points_per_cell(medium, grid)?;
    if fields.iter().any(|f| f.len() != grid.n_nodes()) {
        return Err(Error::invalid("field samples do not match the fine grid"));
    }
    let n_cells = medium.n_cells() as usize;
    let quad = CellQuadrature::new(medium.cell(), modes, p);
    let fields = [to_complex(fields[0]), to_complex(fields[1])];
    let raw = raw_projection([&fields[0], &fields[1]], &quad, modes, n_cells, p);
    let centers = cell_centers(medium);
    let values = match method {
        ProjectionMethod::CellAverage => raw,
        ProjectionMethod::PairResolved => {
            let gram = quad.gram();
            weight_same_fiber(&gram, modes, solve_cells(&gram, modes, &raw)?)
        }
    };
    values.into_iter().map(|v| Envelope::new(centers.clone(), v)).collect()
}

/// Projected source envelopes, one time window of length `eps alpha_n` per row.
#[derive(Clone, Debug)]
pub struct SourceProjection {
    /// Per mode, the window centers.
    pub t: Vec<Vec<f64>>,
    /// Per mode, the covered fraction of each window (1 except possibly the last).
    pub weight: Vec<Vec<f64>>,
    /// `values[m][w]` is the envelope of mode `m` in window `w`.
    pub values: Vec<Vec<Envelope>>,
}

/// Mean of the piecewise-linear interpolant of `(times, values)` over `[a, b]`.
fn window_mean(times: &[f64], values: &[Complex64], a: f64, b: f64) -> Complex64 {
    let mut acc = Complex64::zero();
    for n in 0..times.len() - 1 {
        let (t0, t1) = (times[n], times[n + 1]);
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let at = |t: f64| values[n] + (values[n + 1] - values[n]) * ((t - t0) / (t1 - t0));
        acc += (at(lo) + at(hi)) * (0.5 * (hi - lo));
    }
    acc / (b - a)
}

/// Projects a physical source `f(t_n, x_i)` (rows over `time` steps) onto the
/// modes: the cell projection of the first-order source `(0, f / sqrt(rho))`
/// is averaged against `e^{-i s_n sqrt(lambda) t / eps}` over consecutive
/// windows of one micro-period. A trailing partial window is averaged over its
/// covered part and reported with its fractional weight.
pub fn project_source(
    f: &[Vec<f64>],
    time: &TimeGrid,
    medium: &EpsilonMedium,
    grid: &UniformGrid,
    modes: &[BlochMode],
    decomposition: &EpsilonDecomposition,
) -> Result<SourceProjection> {
    check_first_order(modes)?;
    if decomposition.n_cells != medium.n_cells() {
        return Err(Error::invalid("decomposition and medium disagree on the cell count"));
    }
    if f.len() != time.n_steps + 1 {
        return Err(Error::invalid(format!(
            "source has {} time rows, expected {}",
            f.len(),
            time.n_steps + 1
        )));
    }
    let p = points_per_cell(medium, grid)?;
    let n_cells = medium.n_cells() as usize;
    let eps = medium.epsilon();
    let quad = CellQuadrature::new(medium.cell(), modes, p);
    let x = grid.nodes();
    let inv_sqrt_rho: Vec<f64> = x.iter().map(|&x| 1.0 / medium.rho_at(x).sqrt()).collect();
    let zeros = vec![Complex64::zero(); grid.n_nodes()];

    // projections[n][m][j] at every time step
    let projections: Vec<Vec<Vec<Complex64>>> = f
        .iter()
        .map(|row| {
            let second: Vec<f64> = row.iter().zip(&inv_sqrt_rho).map(|(f, s)| f * s).collect();
            raw_projection([&zeros, &to_complex(&second)], &quad, modes, n_cells, p)
        })
        .collect();
    let times: Vec<f64> = (0..=time.n_steps).map(|n| time.t(n)).collect();
    let t_final = time.t_final();
    let centers = cell_centers(medium);

    let mut out = SourceProjection {
        t: Vec::new(),
        weight: Vec::new(),
        values: Vec::new(),
    };
    for (m, mode) in modes.iter().enumerate() {
        let omega = mode.omega() / eps;
        let window = eps * mode.alpha();
        let n_windows = (t_final / window).ceil().max(1.0) as usize;
        let mut t_mode = Vec::with_capacity(n_windows);
        let mut w_mode = Vec::with_capacity(n_windows);
        let mut v_mode = Vec::with_capacity(n_windows);
        for w in 0..n_windows {
            let a = w as f64 * window;
            let b = ((w + 1) as f64 * window).min(t_final);
            if b - a <= 1e-12 * window {
                continue;
            }
            let values: Vec<Complex64> = (0..n_cells)
                .map(|j| {
                    let series: Vec<Complex64> = times
                        .iter()
                        .enumerate()
                        .map(|(n, &t)| Complex64::cis(-mode.sign() * omega * t) * projections[n][m][j])
                        .collect();
                    window_mean(&times, &series, a, b)
                })
                .collect();
            t_mode.push(0.5 * (a + b));
            w_mode.push((b - a) / window);
            v_mode.push(Envelope::new(centers.clone(), values)?);
        }
        out.t.push(t_mode);
        out.weight.push(w_mode);
        out.values.push(v_mode);
    }
    Ok(out)
}

/// Physical initial data built from Bloch envelopes.
#[derive(Clone, Debug)]
pub struct InitialCondition {
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    /// `max |Im| / max |Re|` of the complex combination before the real part.
    pub imaginary_ratio: f64,
    /// Relative combined trace at `x = 0` and `x = alpha`.
    pub boundary_mismatch: [f64; 2],
}

/// `u0(x) = Re sum theta_n^sigma(x) phi_n^sigma(x / eps)` and `v0 = 0`.
/// Envelopes violating the Dirichlet compatibility only produce a warning.
pub fn build_initial_condition(
    terms: &[(&BlochMode, &Envelope)],
    medium: &EpsilonMedium,
    grid: &UniformGrid,
) -> Result<InitialCondition> {
    let eps = medium.epsilon();
    let x = grid.nodes();
    let mut combo = vec![Complex64::zero(); x.len()];
    for (mode, theta) in terms {
        if theta.is_zero() {
            continue;
        }
        for (c, &xi) in combo.iter_mut().zip(&x) {
            *c += theta.eval(xi) * mode.phi.eval(xi / eps);
        }
    }
    let max_re = combo.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let max_im = combo.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let imaginary_ratio = if max_re > 0.0 { max_im / max_re } else { 0.0 };
    let scale = combo.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let rel = |c: Complex64| if scale > 0.0 { c.norm() / scale } else { 0.0 };
    let boundary_mismatch = [rel(combo[0]), rel(combo[x.len() - 1])];
    if imaginary_ratio > 1e-8 {
        log::warn!("envelopes are not conjugate-symmetric across the fiber pair (Im/Re = {imaginary_ratio:.2e})");
    }
    if boundary_mismatch.iter().any(|&m| m > 1e-6) {
        log::warn!(
            "envelopes violate the Dirichlet compatibility: traces {:.2e}, {:.2e}",
            boundary_mismatch[0],
            boundary_mismatch[1]
        );
    }
    let n = combo.len();
    let mut u0: Vec<f64> = combo.iter().map(|c| c.re).collect();
    u0[0] = 0.0;
    u0[n - 1] = 0.0;
    Ok(InitialCondition {
        u0,
        v0: vec![0.0; n],
        imaginary_ratio,
        boundary_mismatch,
    })
}

/// Envelope profiles whose combination with the conjugate fiber has zero
/// trace at `x = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeShape {
    /// `A i conj(phi(0)) / |phi(0)| e^{2 i pi (k' - k) x / eps}` with `k'` the
    /// nearest Dirichlet fiber, which makes `u0` a physical eigenmode.
    Standing { amplitude: f64 },
    /// `A i conj(phi(0)) / |phi(0)| g(x)` with a smooth bump `g` supported on
    /// `[center - half_width, center + half_width]`.
    Bump { amplitude: f64, center: f64, half_width: f64 },
}

fn smooth_bump(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

/// Macro amplitude `u_n^sigma(0) = i s_n sqrt(lambda) / (eps sqrt 2) theta`
/// of a signed mode in the data built by [`build_initial_condition`], whose
/// velocity vanishes, to leading order in `eps`.
pub fn initial_amplitude(mode: &BlochMode, theta: &Envelope, epsilon: f64) -> Envelope {
    let c = I * (mode.sign() * mode.lambda.sqrt() / (epsilon * std::f64::consts::SQRT_2));
    theta.map(|v| c * v)
}

/// The envelope `theta^sigma` of `mode` for `shape`; for `sigma < 0` it is the
/// conjugate of the `+|sigma|` envelope, so `u0` is real.
pub fn shaped_envelope(
    mode: &BlochMode,
    shape: EnvelopeShape,
    medium: &EpsilonMedium,
    x: Vec<f64>,
) -> Result<Envelope> {
    // the +|k| trace, whichever fiber the mode sits on
    let phi0 = if mode.k < 0.0 { mode.phi.eval(0.0).conj() } else { mode.phi.eval(0.0) };
    if phi0.norm() < 1e-12 {
        return Err(Error::invalid(format!(
            "phi(0) vanishes for n={} at k={}; no boundary-compatible phase",
            mode.n, mode.k
        )));
    }
    let phase = I * phi0.conj() / phi0.norm();
    let k = mode.k.abs();
    let eps = medium.epsilon();
    let positive: Box<dyn Fn(f64) -> Complex64> = match shape {
        EnvelopeShape::Standing { amplitude } => {
            let dk = nearest_dirichlet_fiber(k, medium.n_cells()) - k;
            Box::new(move |x| phase * amplitude * Complex64::cis(2.0 * PI * dk * x / eps))
        }
        EnvelopeShape::Bump {
            amplitude,
            center,
            half_width,
        } => Box::new(move |x| phase * amplitude * smooth_bump((x - center) / half_width)),
    };
    if mode.k < 0.0 {
        Envelope::from_fn(x, |x| positive(x).conj())
    } else {
        Envelope::from_fn(x, positive)
    }
}

/// A complex envelope `u(t, x)`.
pub trait EnvelopeField: Send + Sync {
    fn value(&self, t: f64, x: f64) -> Complex64;
}

/// One component of a solved macro system.
#[derive(Clone, Debug)]
pub struct MacroComponent {
    pub field: Arc<MacroField>,
    pub component: usize,
}

impl EnvelopeField for MacroComponent {
    fn value(&self, t: f64, x: f64) -> Complex64 {
        self.field.sample(self.component, t, x)
    }
}

/// A closed-form envelope, mostly for checks.
pub struct AnalyticEnvelope<F>(pub F);

impl<F: Fn(f64, f64) -> Complex64 + Send + Sync> EnvelopeField for AnalyticEnvelope<F> {
    fn value(&self, t: f64, x: f64) -> Complex64 {
        (self.0)(t, x)
    }
}

/// `u_n^sigma` paired with its first-order mode `e_n^sigma`.
#[derive(Clone)]
pub struct TwoScaleTerm {
    pub mode: BlochMode,
    pub envelope: Arc<dyn EnvelopeField>,
}

/// The reconstruction data for one fiber pair.
#[derive(Clone)]
pub struct TwoScaleApproximation {
    k: f64,
    epsilon: f64,
    cell: CellCoefficients,
    /// Harmonic mean of `a` and mean of `rho`.
    effective: [f64; 2],
    terms: Vec<TwoScaleTerm>,
    /// The low-frequency part, present only on the k=0 fiber.
    low_frequency: Option<Arc<WaveTrajectory>>,
}

impl TwoScaleApproximation {
    pub fn new(
        k: f64,
        medium: &EpsilonMedium,
        terms: Vec<TwoScaleTerm>,
        low_frequency: Option<Arc<WaveTrajectory>>,
    ) -> Result<Self> {
        let pair = fiber_pair(k);
        if k.abs() >= 1e-14 && low_frequency.is_some() {
            return Err(Error::invalid("a low-frequency part only enters on the k=0 fiber"));
        }
        for t in &terms {
            if !pair.iter().any(|s| (s - t.mode.k).abs() < 1e-14) {
                return Err(Error::invalid(format!("mode at k={} is outside the fiber pair", t.mode.k)));
            }
            if t.mode.lambda <= 0.0 {
                return Err(Error::DegenerateMode {
                    k: t.mode.k,
                    n: t.mode.n,
                    lambda: t.mode.lambda,
                });
            }
        }
        Ok(Self {
            k,
            epsilon: medium.epsilon(),
            cell: medium.cell().clone(),
            effective: [medium.cell().harmonic_mean_a(), medium.cell().mean_rho()],
            terms,
            low_frequency,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `chi0(k)`: whether the low-frequency part enters.
    pub fn has_low_frequency(&self) -> bool {
        self.low_frequency.is_some()
    }

    pub fn terms(&self) -> &[TwoScaleTerm] {
        &self.terms
    }

    /// Weights turning the homogenized `(sqrt(a*) u_x, sqrt(rho*) u_t)` into the
    /// oscillating corrector `(a* / sqrt(a(y)) u_x, sqrt(rho(y)) u_t)`.
    fn low_frequency_weights(&self, x: f64) -> [f64; 2] {
        let y = x / self.epsilon;
        [
            (self.effective[0] / self.cell.a_at(y)).sqrt(),
            (self.cell.rho_at(y) / self.effective[1]).sqrt(),
        ]
    }

    fn carrier(&self, mode: &BlochMode, t: f64) -> Complex64 {
        Complex64::cis(mode.sign() * mode.omega() * t / self.epsilon)
    }
}

/// Real first-order field on a slice.
#[derive(Clone, Debug)]
pub struct ReconstructedField {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// `max |Im| / max |Re|` of the complex sum; small for conjugate-symmetric data.
    pub imaginary_ratio: f64,
}

fn finish(sum: Vec<[Complex64; 2]>) -> ReconstructedField {
    let max_re = sum.iter().map(|v| v[0].re.abs().max(v[1].re.abs())).fold(0.0, f64::max);
    let max_im = sum.iter().map(|v| v[0].im.abs().max(v[1].im.abs())).fold(0.0, f64::max);
    ReconstructedField {
        first: sum.iter().map(|v| v[0].re).collect(),
        second: sum.iter().map(|v| v[1].re).collect(),
        imaginary_ratio: if max_re > 0.0 { max_im / max_re } else { 0.0 },
    }
}

/// The two-scale field on every node of `grid` at time `t`.
pub fn reconstruct(approx: &TwoScaleApproximation, grid: &UniformGrid, t: f64) -> Result<ReconstructedField> {
    let x = grid.nodes();
    let mut sum = vec![[Complex64::zero(); 2]; x.len()];
    if let Some(lf) = &approx.low_frequency {
        let snap = lf
            .snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::MissingMode(format!("no low-frequency snapshot at t={t}")))?;
        if snap.u1.len() != x.len() {
            return Err(Error::invalid("low-frequency snapshot is on a different grid"));
        }
        for (i, s) in sum.iter_mut().enumerate() {
            let [w1, w2] = approx.low_frequency_weights(x[i]);
            s[0] += w1 * snap.u1[i];
            s[1] += w2 * snap.u2[i];
        }
    }
    for term in &approx.terms {
        let carrier = approx.carrier(&term.mode, t);
        for (s, &xi) in sum.iter_mut().zip(&x) {
            let amp = term.envelope.value(t, xi);
            if amp == Complex64::zero() {
                continue;
            }
            let e = term.mode.e_at(&approx.cell, xi / approx.epsilon);
            let w = amp * carrier;
            s[0] += w * e[0];
            s[1] += w * e[1];
        }
    }
    Ok(finish(sum))
}

/// The two-scale field at one point `x` (grid node `node` of the reference
/// run, for the low-frequency lookup) over the steps of `time`.
pub fn reconstruct_at_point(
    approx: &TwoScaleApproximation,
    x: f64,
    node: usize,
    time: &TimeGrid,
) -> Result<ReconstructedField> {
    let times: Vec<f64> = (0..=time.n_steps).map(|n| time.t(n)).collect();
    let mut sum = vec![[Complex64::zero(); 2]; times.len()];
    if let Some(lf) = &approx.low_frequency {
        let probe = lf
            .probe(node)
            .ok_or_else(|| Error::MissingMode(format!("no low-frequency probe at node {node}")))?;
        if probe.u1.len() != times.len() {
            return Err(Error::invalid("low-frequency probe has a different time grid"));
        }
        let [w1, w2] = approx.low_frequency_weights(x);
        for (n, s) in sum.iter_mut().enumerate() {
            s[0] += w1 * probe.u1[n];
            s[1] += w2 * probe.u2[n];
        }
    }
    for term in &approx.terms {
        let e = term.mode.e_at(&approx.cell, x / approx.epsilon);
        for (s, &t) in sum.iter_mut().zip(&times) {
            let w = term.envelope.value(t, x) * approx.carrier(&term.mode, t);
            s[0] += w * e[0];
            s[1] += w * e[1];
        }
    }
    Ok(finish(sum))
}

/// `||reference - approx||_2 / ||reference||_2`.
pub fn relative_l2(reference: &[f64], approx: &[f64]) -> Result<f64> {
    if reference.len() != approx.len() {
        return Err(Error::invalid(format!(
            "slice lengths differ: {} vs {}",
            reference.len(),
            approx.len()
        )));
    }
    let norm: f64 = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let diff: f64 = reference
        .iter()
        .zip(approx)
        .map(|(r, a)| (r - a).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Where a relative error is measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slice {
    /// All nodes at a recorded step.
    Space { step: usize },
    /// All steps at a probed node.
    Time { node: usize },
}

/// Relative L2 error of the first component `sqrt(a) u_x` on a slice.
pub fn relative_error(
    reference: &WaveTrajectory,
    approx: &TwoScaleApproximation,
    grid: &UniformGrid,
    slice: Slice,
) -> Result<f64> {
    match slice {
        Slice::Space { step } => {
            let snap = reference
                .snapshot(step)
                .ok_or_else(|| Error::invalid(format!("step {step} was not recorded")))?;
            let field = reconstruct(approx, grid, snap.t)?;
            relative_l2(&snap.u1, &field.first)
        }
        Slice::Time { node } => {
            let probe = reference
                .probe(node)
                .ok_or_else(|| Error::invalid(format!("node {node} was not probed")))?;
            let field = reconstruct_at_point(approx, probe.x, node, &reference.time)?;
            relative_l2(&probe.u1, &field.first)
        }
    }
}
