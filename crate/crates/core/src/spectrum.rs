//! Bloch cell spectra: `-(a phi')' = lambda rho phi` on Y with
//! `phi(y + 1) = e^{2 i pi k} phi(y)`.
//!
//! The eigenproblem is discretized in the plane-wave basis
//! `phi(y) = sum_m c_m e^{2 i pi (m + k) y}`, which makes the quasi-periodic
//! constraint exact. Stiffness and mass matrices are Toeplitz in the Fourier
//! coefficients of `a` and `rho`:
//!
//! ```text
//! K_ij = (2 pi)^2 kappa_i kappa_j a_(m_i - m_j)      M_ij = rho_(m_i - m_j)
//! ```
//!
//! with `kappa = m + k`. The generalized Hermitian problem is reduced with a
//! Cholesky factor of `M` and solved densely. Modes at `-k` are the complex
//! conjugates of the modes at `k`, so band symmetry and the antisymmetry of
//! the diagonal transport coefficient hold to rounding.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::cell::{cell_grid, CellCoefficients};
use crate::error::{Error, Result};

/// Relative eigenvalue gap below which two levels are treated as one.
pub const CLUSTER_REL_TOL: f64 = 1e-8;

const RESIDUAL_TOL: f64 = 1e-8;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// A k-quasi-periodic function stored by its plane-wave coefficients.
#[derive(Clone, Debug)]
pub struct BlochFunction {
    k: f64,
    kappa: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl BlochFunction {
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Wavenumbers `m + k` of the stored terms.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.kappa
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn eval(&self, y: f64) -> Complex64 {
        self.kappa
            .iter()
            .zip(&self.coeffs)
            .map(|(&q, &c)| c * Complex64::cis(2.0 * PI * q * y))
            .sum()
    }

    /// `(phi(y), phi'(y))`.
    pub fn eval_with_derivative(&self, y: f64) -> (Complex64, Complex64) {
        let mut v = Complex64::new(0.0, 0.0);
        let mut d = Complex64::new(0.0, 0.0);
        for (&q, &c) in self.kappa.iter().zip(&self.coeffs) {
            let t = c * Complex64::cis(2.0 * PI * q * y);
            v += t;
            d += t * I * (2.0 * PI * q);
        }
        (v, d)
    }

    /// `L^2(Y)` norm via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn conj(&self) -> Self {
        Self {
            k: -self.k,
            kappa: self.kappa.iter().map(|q| -q).collect(),
            coeffs: self.coeffs.iter().map(|c| c.conj()).collect(),
        }
    }

    fn scale(&mut self, s: Complex64) {
        self.coeffs.iter_mut().for_each(|c| *c *= s);
    }

    /// Drops terms far below rounding to speed up pointwise evaluation.
    fn pruned(mut self) -> Self {
        let max = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let keep: Vec<bool> = self.coeffs.iter().map(|c| c.norm() > 1e-17 * max).collect();
        let mut it = keep.iter();
        self.kappa.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.coeffs.retain(|_| *it.next().unwrap());
        self
    }
}

/// One Bloch eigenpair and, once built, its first-order mode `e_n^k`.
#[derive(Clone, Debug)]
pub struct BlochMode {
    pub k: f64,
    /// Signed mode index; the sign selects the time orientation of `e_n^k`.
    pub n: i32,
    pub lambda: f64,
    pub phi: BlochFunction,
    /// Uniform sample grid `y_j = j / grid_size`.
    pub grid: Vec<f64>,
    pub phi_samples: Vec<Complex64>,
    pub e_first: Vec<Complex64>,
    pub e_second: Vec<Complex64>,
}

impl BlochMode {
    pub fn sign(&self) -> f64 {
        if self.n < 0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn omega(&self) -> f64 {
        self.lambda.max(0.0).sqrt()
    }

    /// Micro time period `2 pi / sqrt(lambda)`.
    pub fn alpha(&self) -> f64 {
        2.0 * PI / self.omega()
    }

    pub fn has_first_order(&self) -> bool {
        !self.e_first.is_empty()
    }

    /// `e_n^k(y)` at any `y`, extended quasi-periodically.
    pub fn e_at(&self, cell: &CellCoefficients, y: f64) -> [Complex64; 2] {
        let (phi, dphi) = self.phi.eval_with_derivative(y);
        first_order_pair(self.sign(), self.lambda, cell.a_at(y), cell.rho_at(y), phi, dphi)
    }
}

fn first_order_pair(
    sign: f64,
    lambda: f64,
    a: f64,
    rho: f64,
    phi: Complex64,
    dphi: Complex64,
) -> [Complex64; 2] {
    let first = -I * sign / (2.0 * lambda).sqrt() * a.sqrt() * dphi;
    let second = rho.sqrt() * phi / 2f64.sqrt();
    [first, second]
}

fn is_real_fiber(k: f64) -> bool {
    k.abs() < 1e-14 || (k.abs() - 0.5).abs() < 1e-14
}

/// Eigenvalue floor under which a mode is treated as the k=0 kernel.
pub fn lambda_floor(cell: &CellCoefficients) -> f64 {
    1e-8 * (2.0 * PI).powi(2) * cell.a_bounds().0 / cell.rho_bounds().1
}

struct PlaneWaveBasis {
    m: Vec<i64>,
    kappa: Vec<f64>,
}

impl PlaneWaveBasis {
    /// Wavenumbers `m + k` with `|m + k| <= half_width + 1/2`; the set is
    /// symmetric under `kappa -> -kappa` for `k` in {0, 1/2} and maps onto the
    /// set for `-k` otherwise.
    fn new(k: f64, half_width: i64) -> Self {
        let bound = half_width as f64 + 0.5 + 1e-12;
        let (m, kappa) = (-half_width - 1..=half_width + 1)
            .filter_map(|m| {
                let q = m as f64 + k;
                (q.abs() <= bound).then_some((m, q))
            })
            .unzip();
        Self { m, kappa }
    }

    fn len(&self) -> usize {
        self.m.len()
    }
}

struct FiberSolution {
    lambdas: Vec<f64>,
    vectors: Vec<DVector<Complex64>>,
    basis: PlaneWaveBasis,
    mass: DMatrix<Complex64>,
}

fn solve_fiber(cell: &CellCoefficients, k: f64, n_modes: usize) -> Result<FiberSolution> {
    let half_width = (cell.max_harmonic() - 1) / 2;
    if half_width < 1 {
        return Err(Error::invalid("cell grid too coarse for the plane-wave basis"));
    }
    let basis = PlaneWaveBasis::new(k, half_width);
    let dim = basis.len();
    if n_modes > dim / 2 {
        return Err(Error::invalid(format!(
            "{n_modes} modes requested but the {}-point cell grid resolves only {}",
            cell.len(),
            dim / 2
        )));
    }
    let two_pi_sq = (2.0 * PI).powi(2);
    let stiffness = DMatrix::from_fn(dim, dim, |i, j| {
        cell.a_fourier(basis.m[i] - basis.m[j]) * (two_pi_sq * basis.kappa[i] * basis.kappa[j])
    });
    let mass = DMatrix::from_fn(dim, dim, |i, j| cell.rho_fourier(basis.m[i] - basis.m[j]));

    let chol = Cholesky::new(mass.clone()).ok_or_else(|| Error::NumericalFailure {
        message: "density mass matrix is not positive definite".into(),
        residual: f64::NAN,
    })?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&stiffness)
        .ok_or_else(|| Error::NumericalFailure {
            message: "singular Cholesky factor".into(),
            residual: f64::NAN,
        })?;
    let reduced = l
        .solve_lower_triangular(&y.adjoint())
        .ok_or_else(|| Error::NumericalFailure {
            message: "singular Cholesky factor".into(),
            residual: f64::NAN,
        })?
        .adjoint();
    let reduced = (&reduced + reduced.adjoint()) * Complex64::new(0.5, 0.0);

    let eigen = SymmetricEigen::try_new(reduced, f64::EPSILON, 100_000).ok_or_else(|| {
        Error::NumericalFailure {
            message: format!("Hermitian eigensolver did not converge at k={k}"),
            residual: f64::NAN,
        }
    })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));

    let lt = l.adjoint();
    let mut lambdas = Vec::with_capacity(n_modes);
    let mut vectors = Vec::with_capacity(n_modes);
    for &idx in order.iter().take(n_modes) {
        let lambda = eigen.eigenvalues[idx];
        let q = eigen.eigenvectors.column(idx).into_owned();
        let c = lt.solve_upper_triangular(&q).ok_or_else(|| Error::NumericalFailure {
            message: "singular Cholesky factor".into(),
            residual: f64::NAN,
        })?;
        let kc = &stiffness * &c;
        let mc = &mass * &c;
        // the k=0 kernel has lambda ~ 0, so scale by the first nonzero level
        let scale = lambda.abs().max(two_pi_sq * cell.a_bounds().0 / cell.rho_bounds().1);
        let residual = (&kc - &mc * Complex64::new(lambda, 0.0)).norm() / (kc.norm() + scale * mc.norm());
        if residual > RESIDUAL_TOL {
            return Err(Error::NumericalFailure {
                message: format!("eigen-residual too large for mode at k={k}"),
                residual,
            });
        }
        lambdas.push(lambda);
        vectors.push(c);
    }
    Ok(FiberSolution {
        lambdas,
        vectors,
        basis,
        mass,
    })
}

fn level_groups(lambdas: &[f64], floor: f64, rel_tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in lambdas.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if same_level(lambdas[g[0]], l, floor, rel_tol) => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn same_level(l0: f64, l1: f64, floor: f64, rel_tol: f64) -> bool {
    if l0.abs() <= floor && l1.abs() <= floor {
        return true;
    }
    if l0.abs() <= floor || l1.abs() <= floor {
        return false;
    }
    (l1 - l0).abs() / l0.abs().max(l1.abs()) < rel_tol
}

/// Replaces each eigenspace at a real fiber by a basis of real functions,
/// rho-orthogonalized and normalized in `L^2(Y)`.
fn realify(sol: &mut FiberSolution, floor: f64) {
    let index_of: HashMap<i64, usize> = sol.basis.m.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    // kappa_j = -kappa_i  <=>  m_j = -m_i - 2k
    let shift = (2.0 * sol.basis.kappa[0] - 2.0 * sol.basis.m[0] as f64).round() as i64;
    let partner: Vec<usize> = sol.basis.m.iter().map(|&m| index_of[&(-m - shift)]).collect();
    let conj_map = |c: &DVector<Complex64>| -> DVector<Complex64> {
        DVector::from_fn(c.len(), |i, _| c[partner[i]].conj())
    };
    let rho_dot = |u: &DVector<Complex64>, v: &DVector<Complex64>| (v.adjoint() * &sol.mass * u)[(0, 0)];

    for group in level_groups(&sol.lambdas, floor, CLUSTER_REL_TOL) {
        let mut candidates: Vec<DVector<Complex64>> = Vec::with_capacity(2 * group.len());
        for &g in &group {
            let c = &sol.vectors[g];
            let jc = conj_map(c);
            candidates.push((c + &jc) * Complex64::new(0.5, 0.0));
            candidates.push((c - &jc) * Complex64::new(0.0, -0.5));
        }
        candidates.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        let mut accepted: Vec<DVector<Complex64>> = Vec::with_capacity(group.len());
        for cand in candidates {
            if accepted.len() == group.len() {
                break;
            }
            let start = rho_dot(&cand, &cand).re.sqrt();
            let mut v = cand;
            for u in &accepted {
                let proj = rho_dot(&v, u) / rho_dot(u, u);
                v -= u * proj;
            }
            if rho_dot(&v, &v).re.sqrt() > 1e-6 * start {
                accepted.push(v);
            }
        }
        if accepted.len() == group.len() {
            for (&g, v) in group.iter().zip(accepted) {
                let norm = v.norm();
                sol.vectors[g] = v / Complex64::new(norm, 0.0);
            }
        } else {
            log::warn!("could not build a real basis for a level of multiplicity {}", group.len());
        }
    }
}

fn to_function(k: f64, basis: &PlaneWaveBasis, c: &DVector<Complex64>) -> BlochFunction {
    BlochFunction {
        k,
        kappa: basis.kappa.clone(),
        coeffs: c.iter().copied().collect(),
    }
}

/// Rotates `phi` so that its largest-magnitude sample on `grid` is real positive.
fn fix_phase(phi: &mut BlochFunction, grid: &[f64]) {
    let samples: Vec<Complex64> = grid.iter().map(|&y| phi.eval(y)).collect();
    let max = samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    // first sample within rounding of the maximum, so that ties resolve to the lowest y
    let pivot = samples
        .iter()
        .find(|s| s.norm() >= max * (1.0 - 1e-9))
        .copied()
        .unwrap_or(samples[0]);
    phi.scale(pivot.conj() / pivot.norm());
}

/// The `n_modes` lowest Bloch eigenpairs at fiber `k`, sorted by eigenvalue,
/// `L^2(Y)`-normalized and phase-fixed. Indices are `n = 1..=n_modes`.
///
/// For `k < 0` the modes are the complex conjugates of the modes at `-k`.
/// At `k` in {0, +-1/2} each eigenspace is spanned by real functions.
pub fn solve_cell_eigen(
    cell: &CellCoefficients,
    k: f64,
    n_modes: usize,
    grid_size: usize,
) -> Result<Vec<BlochMode>> {
    if !(-0.5..=0.5).contains(&k) {
        return Err(Error::invalid(format!("fiber k={k} outside [-1/2, 1/2]")));
    }
    if n_modes == 0 {
        return Err(Error::invalid("n_modes must be at least 1"));
    }
    if grid_size < 8 {
        return Err(Error::invalid("grid_size must be at least 8"));
    }
    let grid = cell_grid(grid_size);
    let k_solve = k.abs();
    let mut sol = solve_fiber(cell, k_solve, n_modes)?;
    if is_real_fiber(k_solve) {
        realify(&mut sol, lambda_floor(cell));
    }
    let mut modes = Vec::with_capacity(n_modes);
    for (i, (lambda, c)) in sol.lambdas.iter().zip(&sol.vectors).enumerate() {
        let mut phi = to_function(k_solve, &sol.basis, c);
        let norm = phi.l2_norm();
        phi.scale(Complex64::new(1.0 / norm, 0.0));
        fix_phase(&mut phi, &grid);
        let phi = phi.pruned();
        let phi = if k < 0.0 { phi.conj() } else { phi };
        let phi_samples = grid.iter().map(|&y| phi.eval(y)).collect();
        modes.push(BlochMode {
            k,
            n: i as i32 + 1,
            lambda: *lambda,
            phi,
            grid: grid.clone(),
            phi_samples,
            e_first: Vec::new(),
            e_second: Vec::new(),
        });
    }
    Ok(modes)
}

/// Builds `e_n^k = (1/sqrt 2)(-i s_n / sqrt(lambda) sqrt(a) phi', sqrt(rho) phi)`
/// for both signed indices `+-n` of every input mode.
pub fn build_first_order_modes(modes: &[BlochMode], cell: &CellCoefficients) -> Result<Vec<BlochMode>> {
    let floor = lambda_floor(cell);
    let mut out = Vec::with_capacity(2 * modes.len());
    for mode in modes {
        if mode.lambda <= floor {
            return Err(Error::DegenerateMode {
                k: mode.k,
                n: mode.n,
                lambda: mode.lambda,
            });
        }
        for sign in [1i32, -1] {
            let s = sign as f64;
            let (e_first, e_second) = mode
                .grid
                .iter()
                .map(|&y| {
                    let (phi, dphi) = mode.phi.eval_with_derivative(y);
                    let [e1, e2] = first_order_pair(s, mode.lambda, cell.a_at(y), cell.rho_at(y), phi, dphi);
                    (e1, e2)
                })
                .unzip();
            out.push(BlochMode {
                n: sign * mode.n.abs(),
                e_first,
                e_second,
                ..mode.clone()
            });
        }
    }
    Ok(out)
}

/// Drops the kernel (zero-eigenvalue) mode of the k=0 fiber.
pub fn exclude_kernel(modes: Vec<BlochMode>, cell: &CellCoefficients) -> Vec<BlochMode> {
    let floor = lambda_floor(cell);
    modes.into_iter().filter(|m| m.lambda > floor).collect()
}

/// A set of signed indices sharing one eigenvalue and one sign, with the
/// coupling matrices `b(k, n, m)` and `c(k, n, m)` once computed.
#[derive(Clone, Debug)]
pub struct ModeCluster {
    pub k: f64,
    pub indices: Vec<i32>,
    pub lambda: f64,
    pub b_matrix: DMatrix<Complex64>,
    pub c_matrix: DMatrix<Complex64>,
}

impl ModeCluster {
    pub fn sign(&self) -> f64 {
        if self.indices[0] < 0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn has_coefficients(&self) -> bool {
        self.b_matrix.nrows() == self.indices.len() && !self.indices.is_empty()
    }

    /// The mode of each cluster member, in member order.
    pub fn members<'a>(&self, modes: &'a [BlochMode]) -> Result<Vec<&'a BlochMode>> {
        self.indices
            .iter()
            .map(|&n| {
                modes
                    .iter()
                    .find(|m| m.n == n && (m.k - self.k).abs() < 1e-14)
                    .ok_or_else(|| Error::MissingMode(format!("mode n={n} at k={}", self.k)))
            })
            .collect()
    }
}

/// Partitions signed modes into clusters of equal eigenvalue (relative gap
/// below `rel_tol`) and equal sign. Kernel modes are excluded.
pub fn detect_clusters(modes: &[BlochMode], k: f64, rel_tol: f64) -> Vec<ModeCluster> {
    let floor = modes
        .iter()
        .map(|m| m.lambda.abs())
        .fold(0.0, f64::max)
        .max(1.0)
        * 1e-12;
    let mut clusters = Vec::new();
    for sign in [1.0, -1.0] {
        let mut members: Vec<&BlochMode> = modes
            .iter()
            .filter(|m| m.sign() == sign && m.lambda > floor && (m.k - k).abs() < 1e-14)
            .collect();
        members.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.n.abs().cmp(&b.n.abs())));
        let lambdas: Vec<f64> = members.iter().map(|m| m.lambda).collect();
        for group in level_groups(&lambdas, floor, rel_tol) {
            let indices: Vec<i32> = group.iter().map(|&i| members[i].n).collect();
            let lambda = group.iter().map(|&i| members[i].lambda).sum::<f64>() / group.len() as f64;
            if is_real_fiber(k) && indices.len() > 2 {
                log::warn!("unexpected multiplicity {} at k={k}: {:?}", indices.len(), indices);
            } else if !is_real_fiber(k) && indices.len() > 1 {
                log::warn!("multiple eigenvalue at generic fiber k={k}: {:?}", indices);
            }
            clusters.push(ModeCluster {
                k,
                indices,
                lambda,
                b_matrix: DMatrix::zeros(0, 0),
                c_matrix: DMatrix::zeros(0, 0),
            });
        }
    }
    clusters.sort_by_key(|c| (c.indices[0].abs(), c.indices[0] < 0));
    clusters
}

/// Fills `b(k,n,m) = int rho phi_n conj(phi_m)` and
/// `c(k,n,m) = i s_n / (2 sqrt lambda) int (phi_n a conj(phi_m') - a phi_n' conj(phi_m))`
/// by periodic trapezoidal quadrature on the cell grid.
///
/// The matrices are stored in operator form, `b_matrix[(p, q)] = b(k, q, p)`,
/// so that row `p` of `B dU/dt = s C dU/dx` is the equation tested against
/// member `p`. Both are Hermitian, so this only matters inside clusters.
pub fn coupling_coefficients(
    cluster: &ModeCluster,
    modes: &[BlochMode],
    cell: &CellCoefficients,
) -> Result<ModeCluster> {
    let members = cluster.members(modes)?;
    let grid = cell.grid();
    let weight = 1.0 / grid.len() as f64;
    let samples: Vec<Vec<(Complex64, Complex64)>> = members
        .iter()
        .map(|m| grid.iter().map(|&y| m.phi.eval_with_derivative(y)).collect())
        .collect();
    let dim = members.len();
    let mut b = DMatrix::zeros(dim, dim);
    let mut c = DMatrix::zeros(dim, dim);
    for (p, mp) in members.iter().enumerate() {
        let prefactor = I * mp.sign() / (2.0 * mp.lambda.sqrt());
        for q in 0..dim {
            let mut bsum = Complex64::new(0.0, 0.0);
            let mut csum = Complex64::new(0.0, 0.0);
            for (j, (&(fp, dp), &(fq, dq))) in samples[p].iter().zip(&samples[q]).enumerate() {
                let a = cell.a_samples()[j];
                let rho = cell.rho_samples()[j];
                bsum += rho * fp * fq.conj();
                csum += fp * a * dq.conj() - a * dp * fq.conj();
            }
            b[(q, p)] = bsum * weight;
            c[(q, p)] = prefactor * csum * weight;
        }
    }
    Ok(ModeCluster {
        b_matrix: b,
        c_matrix: c,
        ..cluster.clone()
    })
}

/// Dispersion bands `omega_n(k) = sqrt(lambda_n^k)` over a fiber grid.
#[derive(Clone, Debug)]
pub struct DispersionTable {
    pub k: Vec<f64>,
    /// `omega[i][n]` is band `n + 1` at `k[i]`.
    pub omega: Vec<Vec<f64>>,
}

impl DispersionTable {
    pub fn bands(&self) -> usize {
        self.omega.first().map_or(0, Vec::len)
    }

    pub fn band(&self, n: usize) -> Vec<f64> {
        self.omega.iter().map(|row| row[n - 1]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W, header_comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = header_comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.bands()).map(|n| format!("omega_{n}")));
        w.write_record(&header)?;
        for (k, row) in self.k.iter().zip(&self.omega) {
            let mut rec = vec![format!("{k:.12e}")];
            rec.extend(row.iter().map(|o| format!("{o:.12e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn dispersion_sweep(cell: &CellCoefficients, k_grid: &[f64], n_modes: usize) -> Result<DispersionTable> {
    let omega = k_grid
        .par_iter()
        .map(|&k| {
            if !(-0.5..=0.5).contains(&k) {
                return Err(Error::invalid(format!("fiber k={k} outside [-1/2, 1/2]")));
            }
            let modes = solve_cell_eigen(cell, k, n_modes, 8)?;
            Ok(modes.iter().map(BlochMode::omega).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(DispersionTable {
        k: k_grid.to_vec(),
        omega,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_cell() -> CellCoefficients {
        CellCoefficients::homogeneous(64, 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_medium_periodic_spectrum() {
        let modes = solve_cell_eigen(&unit_cell(), 0.0, 5, 32).unwrap();
        let two_pi = 2.0 * PI;
        let expected = [0.0, two_pi.powi(2), two_pi.powi(2), (2.0 * two_pi).powi(2), (2.0 * two_pi).powi(2)];
        assert!(modes[0].lambda.abs() < 1e-10);
        for (m, e) in modes.iter().zip(expected).skip(1) {
            assert_relative_eq!(m.lambda, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_medium_quasi_periodic_spectrum() {
        let k = 0.16;
        let modes = solve_cell_eigen(&unit_cell(), k, 6, 32).unwrap();
        let mut expected: Vec<f64> = (-4..=4).map(|m| (2.0 * PI * (m as f64 + k)).powi(2)).collect();
        expected.sort_by(f64::total_cmp);
        for (m, e) in modes.iter().zip(expected) {
            assert_relative_eq!(m.lambda, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_medium_first_order_mode_plug_in() {
        let cell = unit_cell();
        let k = 0.16;
        let modes = solve_cell_eigen(&cell, k, 1, 16).unwrap();
        let e = build_first_order_modes(&modes, &cell).unwrap();
        let plus = e.iter().find(|m| m.n == 1).unwrap();
        for (j, &y) in plus.grid.iter().enumerate() {
            let carrier = Complex64::cis(2.0 * PI * k * y);
            // -i s / sqrt(lambda) * phi' with phi' = 2 i pi k phi gives s sign(k) phi
            let want_first = carrier / 2f64.sqrt();
            let want_second = carrier / 2f64.sqrt();
            assert!((plus.e_first[j] - want_first).norm() < 1e-12);
            assert!((plus.e_second[j] - want_second).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_mode_is_rejected() {
        let cell = unit_cell();
        let modes = solve_cell_eigen(&cell, 0.0, 2, 16).unwrap();
        assert!(matches!(
            build_first_order_modes(&modes, &cell),
            Err(Error::DegenerateMode { n: 1, .. })
        ));
        let kept = exclude_kernel(modes, &cell);
        assert_eq!(kept.len(), 1);
        assert!(build_first_order_modes(&kept, &cell).is_ok());
    }

    #[test]
    fn normalization_and_quasi_periodicity() {
        let cell = CellCoefficients::sine(128).unwrap();
        let k = 0.16;
        for m in solve_cell_eigen(&cell, k, 4, 64).unwrap() {
            let norm_sq: f64 = cell
                .grid()
                .iter()
                .map(|&y| m.phi.eval(y).norm_sqr())
                .sum::<f64>()
                / cell.len() as f64;
            assert_relative_eq!(norm_sq, 1.0, max_relative = 1e-12);
            let seam = m.phi.eval(1.0) - m.phi.eval(0.0) * Complex64::cis(2.0 * PI * k);
            assert!(seam.norm() < 1e-12);
        }
    }

    #[test]
    fn phase_fix_makes_max_sample_real_positive() {
        let cell = CellCoefficients::sine(128).unwrap();
        for m in solve_cell_eigen(&cell, 0.3, 3, 64).unwrap() {
            let max = m.phi_samples.iter().map(|s| s.norm()).fold(0.0, f64::max);
            let pivot = m.phi_samples.iter().find(|s| s.norm() >= max * (1.0 - 1e-9)).unwrap();
            assert!(pivot.im.abs() < 1e-12 && pivot.re > 0.0);
        }
    }

    #[test]
    fn negative_fiber_is_conjugate() {
        let cell = CellCoefficients::sine(128).unwrap();
        let plus = solve_cell_eigen(&cell, 0.21, 3, 32).unwrap();
        let minus = solve_cell_eigen(&cell, -0.21, 3, 32).unwrap();
        for (p, m) in plus.iter().zip(&minus) {
            assert_eq!(p.lambda, m.lambda);
            for (a, b) in p.phi_samples.iter().zip(&m.phi_samples) {
                assert!((a.conj() - b).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn real_fiber_modes_are_real() {
        let cell = CellCoefficients::sine(128).unwrap();
        for k in [0.0, 0.5, -0.5] {
            for m in solve_cell_eigen(&cell, k, 5, 64).unwrap() {
                let max_im = m.phi_samples.iter().map(|s| s.im.abs()).fold(0.0, f64::max);
                assert!(max_im < 1e-10, "k={k} n={} has imaginary part {max_im}", m.n);
            }
        }
    }

    #[test]
    fn clusters_are_singletons_at_generic_fiber() {
        let cell = CellCoefficients::sine(128).unwrap();
        let k = 0.16;
        let modes = build_first_order_modes(&solve_cell_eigen(&cell, k, 4, 32).unwrap(), &cell).unwrap();
        let clusters = detect_clusters(&modes, k, CLUSTER_REL_TOL);
        assert_eq!(clusters.len(), 8);
        assert!(clusters.iter().all(|c| c.len() == 1));
        assert!(clusters.iter().any(|c| c.indices == vec![2]));
        assert!(clusters.iter().any(|c| c.indices == vec![-2]));
    }

    #[test]
    fn constant_medium_pairs_at_zero_fiber() {
        let cell = unit_cell();
        let modes = exclude_kernel(solve_cell_eigen(&cell, 0.0, 5, 32).unwrap(), &cell);
        let modes = build_first_order_modes(&modes, &cell).unwrap();
        let clusters = detect_clusters(&modes, 0.0, CLUSTER_REL_TOL);
        assert_eq!(clusters.len(), 4);
        for c in &clusters {
            assert_eq!(c.len(), 2);
            assert!(c.indices.iter().all(|&n| n.signum() == c.indices[0].signum()));
        }
        assert_eq!(clusters[0].indices, vec![2, 3]);
        assert_relative_eq!(clusters[0].lambda, (2.0 * PI).powi(2), max_relative = 1e-12);
    }

    #[test]
    fn unit_medium_coefficients() {
        let cell = unit_cell();
        for k in [0.16, -0.16, 0.4] {
            let modes = build_first_order_modes(&solve_cell_eigen(&cell, k, 3, 16).unwrap(), &cell).unwrap();
            for cl in detect_clusters(&modes, k, CLUSTER_REL_TOL) {
                let cl = coupling_coefficients(&cl, &modes, &cell).unwrap();
                let m = cl.members(&modes).unwrap()[0];
                let kappa = m.phi.wavenumbers()[0];
                assert_relative_eq!(cl.b_matrix[(0, 0)].re, 1.0, max_relative = 1e-12);
                // c = s_n sign(m + k) for a single Fourier mode
                assert_relative_eq!(cl.c_matrix[(0, 0)].re, m.sign() * kappa.signum(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn b_is_hermitian_positive_on_real_cluster() {
        let cell = unit_cell();
        let modes = exclude_kernel(solve_cell_eigen(&cell, 0.0, 5, 32).unwrap(), &cell);
        let modes = build_first_order_modes(&modes, &cell).unwrap();
        for cl in detect_clusters(&modes, 0.0, CLUSTER_REL_TOL) {
            let cl = coupling_coefficients(&cl, &modes, &cell).unwrap();
            let b = &cl.b_matrix;
            assert!((b - b.adjoint()).norm() < 1e-13);
            assert!(b[(0, 0)].re > 0.0 && b[(1, 1)].re > 0.0);
            assert!(Cholesky::new(b.clone()).is_some());
            // real eigenvectors: zero diagonal, nonzero off-diagonal
            assert!(cl.c_matrix[(0, 0)].norm() < 1e-12);
            assert!(cl.c_matrix[(0, 1)].norm() > 0.5);
        }
    }

    #[test]
    fn rejects_out_of_zone_fiber() {
        assert!(solve_cell_eigen(&unit_cell(), 0.7, 2, 16).is_err());
        assert!(solve_cell_eigen(&unit_cell(), 0.1, 0, 16).is_err());
    }

    #[test]
    fn dispersion_constant_medium() {
        let ks = [-0.5, -0.25, 0.0, 0.1, 0.5];
        let table = dispersion_sweep(&unit_cell(), &ks, 3).unwrap();
        for (row, &k) in table.omega.iter().zip(&ks) {
            let mut expected: Vec<f64> = (-3..=3).map(|m| (2.0 * PI * (m as f64 + k)).abs()).collect();
            expected.sort_by(f64::total_cmp);
            for (o, e) in row.iter().zip(expected) {
                assert!((o - e).abs() < 1e-9 * e.max(1.0));
            }
        }
        let mut buf = Vec::new();
        table.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,omega_1,omega_2,omega_3\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
