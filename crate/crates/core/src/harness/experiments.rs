//! The experiment pipelines behind the CLI subcommands.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;

use super::config::{ExperimentConfig, InitialData, Orientation};
use super::output::{config_hash, svg_plot, ArtifactWriter, Series};
use crate::cell::CellCoefficients;
use crate::direct::{physical_eigenmodes, solve_wave, write_eigenmodes_csv, EpsilonMedium, PhysicalMode, RecordPlan, WaveTrajectory};
use crate::envelope::Envelope;
use crate::error::{Error, Result, StageExt};
use crate::grid::{TimeGrid, UniformGrid};
use crate::macro_solver::{assemble_macro_system, solve_low_frequency_homogenized, solve_macro, CouplingSystem, MacroField, MacroOptions};
use crate::spectrum::{
    build_first_order_modes, coupling_coefficients, detect_clusters, dispersion_sweep, exclude_kernel, solve_cell_eigen,
    BlochMode, DispersionTable, ModeCluster, CLUSTER_REL_TOL,
};
use crate::two_scale::{
    admissible_sequence, build_initial_condition, initial_amplitude, decomposition_for_cells, fiber_pair, project_initial_data,
    relative_error, shaped_envelope, EnvelopeShape, EpsilonDecomposition, MacroComponent, Slice,
    TwoScaleApproximation, TwoScaleTerm,
};

/// Cell-grid resolution used for the sampled Bloch data.
const MODE_GRID: usize = 64;

/// Signed first-order modes and their coupling clusters on one fiber.
#[derive(Clone, Debug)]
pub struct FiberSpectrum {
    pub sigma: f64,
    pub modes: Vec<BlochMode>,
    pub clusters: Vec<ModeCluster>,
}

impl FiberSpectrum {
    pub fn mode(&self, n: i32) -> Result<&BlochMode> {
        self.modes
            .iter()
            .find(|m| m.n == n)
            .ok_or_else(|| Error::MissingMode(format!("mode n={n} at k={}", self.sigma)))
    }

    pub fn cluster_of(&self, n: i32) -> Result<&ModeCluster> {
        self.clusters
            .iter()
            .find(|c| c.indices.contains(&n))
            .ok_or_else(|| Error::MissingMode(format!("no cluster holds n={n} at k={}", self.sigma)))
    }
}

/// Spectra of every fiber of the pair `I^k` up to band `max_band`.
pub fn fiber_spectra(cell: &CellCoefficients, k: f64, max_band: usize) -> Result<Vec<FiberSpectrum>> {
    fiber_pair(k)
        .into_iter()
        .map(|sigma| {
            // one extra band so a level at the top of the list keeps its partner
            let modes = solve_cell_eigen(cell, sigma, max_band + 1, MODE_GRID)?;
            let modes = build_first_order_modes(&exclude_kernel(modes, cell), cell)?;
            let clusters = detect_clusters(&modes, sigma, CLUSTER_REL_TOL)
                .iter()
                .map(|c| coupling_coefficients(c, &modes, cell))
                .collect::<Result<Vec<_>>>()?;
            Ok(FiberSpectrum { sigma, modes, clusters })
        })
        .collect()
}

/// Outcome of the direct-solver orientation calibration.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub orientation: f64,
    pub observed_velocity: f64,
    /// `-c/b` of the launched mode, the envelope speed for orientation `+1`.
    pub predicted_velocity: f64,
}

/// Launches a single-mode Bloch packet (`sigma = k`, `s = +1`) in the direct
/// solver and compares the motion of its energy centroid with `-c/b`.
pub fn calibrate_orientation(cell: &CellCoefficients, k: f64) -> Result<Calibration> {
    let k = if k.abs() < 0.05 || k.abs() > 0.45 { 0.25 } else { k.abs() };
    let n_cells = 40;
    let medium = EpsilonMedium::new(cell.clone(), 1.0, n_cells)?;
    let grid = medium.aligned_grid(64)?;
    let eps = medium.epsilon();
    let spectra = fiber_spectra(cell, k, 2)?;
    let mode = spectra[0].mode(2)?.clone();
    let cluster = spectra[0].cluster_of(2)?;
    let predicted = -(cluster.c_matrix[(0, 0)].re / cluster.b_matrix[(0, 0)].re);

    let omega = mode.omega() / eps;
    let x = grid.nodes();
    let bump = |x: f64| {
        let r = (x - 0.5) / 0.2;
        if r.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    };
    let (u0, v0): (Vec<f64>, Vec<f64>) = x
        .iter()
        .map(|&x| {
            let w = bump(x) * mode.phi.eval(x / eps);
            (w.re, (Complex64::new(0.0, omega) * w).re)
        })
        .unzip();
    let (_, a1) = cell.a_bounds();
    let (rho0, _) = cell.rho_bounds();
    let speed = (a1 / rho0).sqrt();
    let t_final = 0.12;
    let steps = (t_final * speed / (0.9 * grid.h())).ceil() as usize;
    let time = TimeGrid::new(t_final, steps)?;
    let plan = RecordPlan {
        snapshot_steps: vec![0, steps],
        probe_nodes: vec![],
    };
    let traj = solve_wave(&medium, &grid, &u0, &v0, None, &time, &plan)?;
    let centroid = |step: usize| -> f64 {
        let s = traj.snapshot(step).expect("recorded");
        let (mut num, mut den) = (0.0, 0.0);
        for (j, &xj) in x.iter().enumerate() {
            let e = s.u1[j] * s.u1[j] + s.u2[j] * s.u2[j];
            num += xj * e;
            den += e;
        }
        num / den
    };
    let observed = (centroid(steps) - centroid(0)) / t_final;
    if observed.abs() < 0.25 * predicted.abs() || predicted == 0.0 {
        return Err(Error::NumericalFailure {
            message: format!("calibration packet did not move clearly (observed {observed:.3}, predicted {predicted:.3})"),
            residual: observed,
        });
    }
    Ok(Calibration {
        orientation: (observed / predicted).signum(),
        observed_velocity: observed,
        predicted_velocity: predicted,
    })
}

/// Relative errors and run metadata of one validation.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub k: f64,
    pub n_cells: u64,
    pub epsilon: f64,
    pub h: i64,
    pub l: f64,
    pub orientation: f64,
    pub modes: Vec<i32>,
    pub space_error: f64,
    pub t_star: f64,
    pub time_error: f64,
    pub x_star: f64,
    pub initial_error: f64,
    /// Relative gap between the projected and the constructed initial envelopes.
    pub projection_mismatch: f64,
    pub fine_intervals: usize,
    pub fine_steps: usize,
    pub fine_dt: f64,
    pub macro_intervals: usize,
    pub macro_steps: usize,
    pub boundary_residual: f64,
    pub reflection_modulus_error: f64,
    pub direct_energy_drift: f64,
    pub macro_energy_drift: f64,
    pub reconstruction_imaginary_ratio: f64,
    pub wall_clock_seconds: f64,
}

/// Everything a validation run produced.
pub struct ValidationOutcome {
    pub report: ErrorReport,
    pub decomposition: EpsilonDecomposition,
    pub medium: EpsilonMedium,
    pub fine_grid: UniformGrid,
    pub time: TimeGrid,
    pub spectra: Vec<FiberSpectrum>,
    pub theta: Vec<((f64, i32), Envelope)>,
    pub projections: Vec<((f64, i32), Envelope)>,
    pub constructed: Vec<((f64, i32), Envelope)>,
    pub systems: Vec<CouplingSystem>,
    pub fields: Vec<Arc<MacroField>>,
    pub reference: WaveTrajectory,
    pub approximation: TwoScaleApproximation,
    pub space_step: usize,
    pub probe_node: usize,
}

/// Fine time grid: the configured step count when it satisfies the CFL
/// bound, otherwise the smallest count meeting `grids.cfl`.
fn fine_time_grid(cfg: &ExperimentConfig, medium: &EpsilonMedium, grid: &UniformGrid, use_configured: bool) -> Result<TimeGrid> {
    let (_, a1) = medium.cell().a_bounds();
    let (rho0, _) = medium.cell().rho_bounds();
    let speed = (a1 / rho0).sqrt();
    let t_final = cfg.grids.t_final;
    if use_configured {
        if let Some(steps) = cfg.grids.fine_steps {
            let time = TimeGrid::new(t_final, steps)?;
            if time.dt * speed <= grid.h() {
                return Ok(time);
            }
            log::warn!("configured fine_steps={steps} violates the CFL bound; deriving from cfl");
        }
    }
    let steps = (t_final * speed / (cfg.grids.cfl * grid.h())).ceil() as usize;
    TimeGrid::new(t_final, steps.max(1))
}

pub fn run_validate(cfg: &ExperimentConfig) -> Result<ValidationOutcome> {
    run_validate_cells(cfg, cfg.n_cells()?, true)
}

/// The full pipeline for `n_cells` cells.
pub fn run_validate_cells(cfg: &ExperimentConfig, n_cells: u64, use_configured_steps: bool) -> Result<ValidationOutcome> {
    let started = Instant::now();
    let cell = cfg.cell().stage("medium")?;
    let k = cfg.fiber.k;
    let alpha = cfg.medium.alpha;
    let decomposition = decomposition_for_cells(k, alpha, n_cells).stage("epsilon decomposition")?;
    let signed = cfg.signed_modes();
    let max_band = signed.iter().map(|n| n.unsigned_abs() as usize).max().unwrap_or(1);
    let spectra = fiber_spectra(&cell, k, max_band).stage("cell spectrum")?;

    let orientation = match cfg.orientation()? {
        Orientation::Fixed(s) => s,
        Orientation::Calibrate => calibrate_orientation(&cell, k).stage("calibration")?.orientation,
    };

    let medium = EpsilonMedium::new(cell.clone(), alpha, n_cells).stage("medium")?;
    let fine_grid = medium.aligned_grid(cfg.grids.fine_points_per_cell).stage("direct solve")?;
    let x_fine = fine_grid.nodes();
    let shape = cfg.envelope_shape()?;

    // envelopes of the positive-index modes, one per fiber and band
    let mut bands: Vec<u32> = signed.iter().map(|n| n.unsigned_abs()).collect();
    bands.sort_unstable();
    bands.dedup();
    let real_fiber = spectra.len() == 1;
    let mut theta = Vec::new();
    for fs in &spectra {
        for &band in &bands {
            let mode = fs.mode(band as i32).stage("initial condition")?;
            let env = if real_fiber {
                real_fiber_envelope(shape, alpha, x_fine.clone())?
            } else {
                shaped_envelope(mode, shape, &medium, x_fine.clone()).stage("initial condition")?
            };
            theta.push(((fs.sigma, band as i32), env));
        }
    }
    let terms: Vec<(&BlochMode, &Envelope)> = theta
        .iter()
        .map(|((sigma, n), env)| Ok((spectrum_at(&spectra, *sigma)?.mode(*n)?, env)))
        .collect::<Result<_>>()
        .stage("initial condition")?;
    let initial = build_initial_condition(&terms, &medium, &fine_grid).stage("initial condition")?;

    let time = fine_time_grid(cfg, &medium, &fine_grid, use_configured_steps)?;
    let space_step = time.nearest_step(cfg.slices.t_star);
    let probe_node = ((cfg.slices.x_star / fine_grid.h()).round() as usize).min(fine_grid.n_intervals);
    let plan = RecordPlan {
        snapshot_steps: vec![0, space_step],
        probe_nodes: vec![probe_node],
    };
    let reference = solve_wave(&medium, &fine_grid, &initial.u0, &initial.v0, None, &time, &plan).stage("direct solve")?;

    // the systems: one per cluster of each requested signed index
    let mut system_keys: Vec<Vec<i32>> = Vec::new();
    for &n in &signed {
        let indices = spectra[0].cluster_of(n).stage("macro assembly")?.indices.clone();
        if !system_keys.contains(&indices) {
            system_keys.push(indices);
        }
    }
    let proj_modes: Vec<BlochMode> = spectra
        .iter()
        .flat_map(|fs| {
            system_keys
                .iter()
                .flatten()
                .filter_map(move |&n| fs.mode(n).ok().cloned())
        })
        .collect();
    let snap0 = reference.snapshot(0).expect("step 0 recorded");
    let method = cfg.projection()?;
    let projected = project_initial_data([&snap0.u1, &snap0.u2], &medium, &fine_grid, &proj_modes, &decomposition, method)
        .stage("data projection")?;
    let projections: Vec<((f64, i32), Envelope)> = proj_modes.iter().map(|m| (m.k, m.n)).zip(projected).collect();
    let constructed = constructed_amplitudes(&spectra, &proj_modes, &theta, medium.epsilon()).stage("data projection")?;
    let projection_mismatch = mismatch(&projections, &constructed);
    let initial_source = match cfg.initial_data()? {
        InitialData::Constructed => &constructed,
        InitialData::Projected => &projections,
    };

    let macro_grid = UniformGrid::new(alpha, cfg.grids.macro_intervals).stage("macro solve")?;
    let mut systems = Vec::new();
    for key in &system_keys {
        let clusters: Vec<ModeCluster> = spectra
            .iter()
            .map(|fs| fs.cluster_of(key[0]).cloned())
            .collect::<Result<_>>()
            .stage("macro assembly")?;
        let modes: Vec<BlochMode> = spectra.iter().flat_map(|fs| fs.modes.iter().cloned()).collect();
        // component order of the assembled system: +k members, then -k members
        let mut ordered: Vec<&ModeCluster> = clusters.iter().collect();
        ordered.sort_by(|a, b| b.k.total_cmp(&a.k));
        let envelopes = ordered
            .iter()
            .flat_map(|c| c.indices.iter().map(move |&n| (c.k, n)))
            .map(|key| lookup(initial_source, key).cloned())
            .collect::<Result<Vec<_>>>()
            .stage("macro assembly")?;
        let system = assemble_macro_system(&clusters, &modes, decomposition.l, alpha, envelopes)
            .stage("macro assembly")?
            .with_orientation(orientation);
        systems.push(system);
    }
    let max_speed = systems.iter().map(CouplingSystem::max_speed).fold(0.0, f64::max);
    let macro_steps = ((cfg.grids.t_final * max_speed / (cfg.grids.macro_cfl * macro_grid.h())).ceil() as usize).max(1);
    let macro_time = TimeGrid::new(cfg.grids.t_final, macro_steps)?;
    let options = MacroOptions {
        scheme: cfg.scheme()?,
        record_every: cfg.grids.macro_record_every,
    };
    let fields: Vec<Arc<MacroField>> = systems
        .iter()
        .map(|s| solve_macro(s, &macro_grid, &macro_time, options).map(Arc::new))
        .collect::<Result<_>>()
        .stage("macro solve")?;

    let mut approx_terms = Vec::new();
    for (system, field) in systems.iter().zip(&fields) {
        for (p, comp) in system.components.iter().enumerate() {
            let mode = spectrum_at(&spectra, comp.sigma)?.mode(comp.n)?.clone();
            approx_terms.push(TwoScaleTerm {
                mode,
                envelope: Arc::new(MacroComponent {
                    field: field.clone(),
                    component: p,
                }),
            });
        }
    }
    let low_frequency = if k.abs() < 1e-14 {
        let u_h = cell_averaged(&medium, &fine_grid, &initial.u0);
        let zeros = vec![0.0; u_h.len()];
        Some(Arc::new(
            solve_low_frequency_homogenized(&cell, alpha, &fine_grid, &u_h, &zeros, None, &time, &plan)
                .stage("low-frequency solve")?,
        ))
    } else {
        None
    };
    let approximation = TwoScaleApproximation::new(k, &medium, approx_terms, low_frequency).stage("reconstruction")?;

    let space_error =
        relative_error(&reference, &approximation, &fine_grid, Slice::Space { step: space_step }).stage("error slices")?;
    let time_error =
        relative_error(&reference, &approximation, &fine_grid, Slice::Time { node: probe_node }).stage("error slices")?;
    let initial_error =
        relative_error(&reference, &approximation, &fine_grid, Slice::Space { step: 0 }).stage("error slices")?;
    let imag = crate::two_scale::reconstruct(&approximation, &fine_grid, time.t(space_step))?.imaginary_ratio;

    let macro_energy_drift = fields
        .iter()
        .map(|f| {
            let e0 = f.energy[0];
            if e0 == 0.0 {
                0.0
            } else {
                f.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0
            }
        })
        .fold(0.0, f64::max);

    let report = ErrorReport {
        k,
        n_cells,
        epsilon: medium.epsilon(),
        h: decomposition.h,
        l: decomposition.l,
        orientation,
        modes: signed.clone(),
        space_error,
        t_star: time.t(space_step),
        time_error,
        x_star: fine_grid.x(probe_node),
        initial_error,
        projection_mismatch,
        fine_intervals: fine_grid.n_intervals,
        fine_steps: time.n_steps,
        fine_dt: time.dt,
        macro_intervals: macro_grid.n_intervals,
        macro_steps,
        boundary_residual: fields.iter().map(|f| f.boundary_residual).fold(0.0, f64::max),
        reflection_modulus_error: fields.iter().map(|f| f.reflection_modulus_error).fold(0.0, f64::max),
        direct_energy_drift: reference.energy_drift(),
        macro_energy_drift,
        reconstruction_imaginary_ratio: imag,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(ValidationOutcome {
        report,
        decomposition,
        medium,
        fine_grid,
        time,
        spectra,
        theta,
        projections,
        constructed,
        systems,
        fields,
        reference,
        approximation,
        space_step,
        probe_node,
    })
}

/// `B`-weighted modal amplitudes of the built initial condition, per cluster.
fn constructed_amplitudes(
    spectra: &[FiberSpectrum],
    modes: &[BlochMode],
    theta: &[((f64, i32), Envelope)],
    epsilon: f64,
) -> Result<Vec<((f64, i32), Envelope)>> {
    let amplitude = |sigma: f64, n: i32| -> Result<Envelope> {
        let mode = spectrum_at(spectra, sigma)?.mode(n)?;
        Ok(match lookup(theta, (sigma, n.abs())) {
            Ok(t) => initial_amplitude(mode, t, epsilon),
            Err(_) => Envelope::zeros(theta[0].1.x.clone())?,
        })
    };
    modes
        .iter()
        .map(|m| {
            let cluster = spectrum_at(spectra, m.k)?.cluster_of(m.n)?;
            let row = cluster.indices.iter().position(|&n| n == m.n).expect("member");
            let mut acc = Envelope::zeros(theta[0].1.x.clone())?;
            for (col, &n) in cluster.indices.iter().enumerate() {
                let a = amplitude(m.k, n)?;
                let b = cluster.b_matrix[(row, col)];
                for (v, w) in acc.values.iter_mut().zip(&a.values) {
                    *v += b * w;
                }
            }
            Ok(((m.k, m.n), acc))
        })
        .collect()
}

fn mismatch(projected: &[((f64, i32), Envelope)], constructed: &[((f64, i32), Envelope)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((_, p), (_, c)) in projected.iter().zip(constructed) {
        for (x, v) in p.x.iter().zip(&p.values) {
            let w = c.eval(*x);
            num += (v - w).norm_sqr();
            den += w.norm_sqr();
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn spectrum_at(spectra: &[FiberSpectrum], sigma: f64) -> Result<&FiberSpectrum> {
    spectra
        .iter()
        .find(|f| (f.sigma - sigma).abs() < 1e-14)
        .ok_or_else(|| Error::MissingMode(format!("no spectrum for fiber {sigma}")))
}

fn lookup(list: &[((f64, i32), Envelope)], key: (f64, i32)) -> Result<&Envelope> {
    list.iter()
        .find(|((s, n), _)| (s - key.0).abs() < 1e-14 && *n == key.1)
        .map(|(_, e)| e)
        .ok_or_else(|| Error::MissingMode(format!("no projection for n={} at k={}", key.1, key.0)))
}

/// Real envelopes for the real fibers, where the conjugate fiber is the
/// fiber itself and no phase rotation is needed. The standing shape is the
/// slowest Dirichlet-compatible profile `sin(pi x / alpha)`.
fn real_fiber_envelope(shape: EnvelopeShape, alpha: f64, x: Vec<f64>) -> Result<Envelope> {
    match shape {
        EnvelopeShape::Standing { amplitude } => {
            Envelope::from_fn(x, |x| Complex64::new(amplitude * (std::f64::consts::PI * x / alpha).sin(), 0.0))
        }
        EnvelopeShape::Bump {
            amplitude,
            center,
            half_width,
        } => Envelope::from_fn(x, |x| {
            let r = (x - center) / half_width;
            let g = if r.abs() < 1.0 { (1.0 - 1.0 / (1.0 - r * r)).exp() } else { 0.0 };
            Complex64::new(amplitude * g, 0.0)
        }),
    }
}

/// Per-cell means of `u`, linearly interpolated between cell centers and
/// pinned to zero at the ends.
fn cell_averaged(medium: &EpsilonMedium, grid: &UniformGrid, u: &[f64]) -> Vec<f64> {
    let n = medium.n_cells() as usize;
    let p = grid.n_intervals / n;
    let eps = medium.epsilon();
    let mut xs = vec![0.0];
    let mut means = vec![0.0];
    for j in 0..n {
        let slice = &u[j * p..=(j + 1) * p];
        let mean = (slice.iter().sum::<f64>() - 0.5 * (slice[0] + slice[p])) / p as f64;
        xs.push((j as f64 + 0.5) * eps);
        means.push(mean);
    }
    xs.push(medium.alpha());
    means.push(0.0);
    grid.nodes()
        .iter()
        .map(|&x| {
            let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
            let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            means[i - 1] * (1.0 - w) + means[i] * w
        })
        .collect()
}

fn stage_writer(cfg: &ExperimentConfig, out: &Path) -> Result<ArtifactWriter> {
    let hash = config_hash(&cfg.to_toml());
    ArtifactWriter::new(out, hash)
}

/// Writes the report, slices, envelopes, systems and plots of a validation.
pub fn write_validation(cfg: &ExperimentConfig, outcome: &ValidationOutcome, out: &Path) -> Result<()> {
    let mut w = stage_writer(cfg, out)?;
    let reference = &outcome.reference;
    let snap = reference.snapshot(outcome.space_step).expect("recorded");
    let field = crate::two_scale::reconstruct(&outcome.approximation, &outcome.fine_grid, snap.t)?;
    let x = outcome.fine_grid.nodes();
    w.csv("space_slice.csv", "error slices", |buf, header| {
        writeln!(buf, "# {header}")?;
        let mut c = csv::Writer::from_writer(buf);
        c.write_record(["x", "U1_reference", "U1_two_scale"])?;
        for (i, xi) in x.iter().enumerate() {
            c.write_record([format!("{xi:.10e}"), format!("{:.10e}", snap.u1[i]), format!("{:.10e}", field.first[i])])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let probe = reference.probe(outcome.probe_node).expect("probed");
    let series = crate::two_scale::reconstruct_at_point(&outcome.approximation, probe.x, outcome.probe_node, &outcome.time)?;
    w.csv("time_slice.csv", "error slices", |buf, header| {
        writeln!(buf, "# {header}")?;
        let mut c = csv::Writer::from_writer(buf);
        c.write_record(["t", "U1_reference", "U1_two_scale"])?;
        for (n, (r, a)) in probe.u1.iter().zip(&series.first).enumerate() {
            c.write_record([format!("{:.10e}", outcome.time.t(n)), format!("{r:.10e}"), format!("{a:.10e}")])?;
        }
        c.flush()?;
        Ok(())
    })?;
    w.csv("initial_envelopes.csv", "data projection", |buf, header| {
        writeln!(buf, "# {header}")?;
        let mut c = csv::Writer::from_writer(buf);
        let mut head = vec!["x".to_string()];
        for ((s, n), _) in &outcome.projections {
            head.push(format!("re[{s}|{n}]"));
            head.push(format!("im[{s}|{n}]"));
        }
        c.write_record(&head)?;
        let xs = &outcome.projections[0].1.x;
        for (j, xj) in xs.iter().enumerate() {
            let mut rec = vec![format!("{xj:.10e}")];
            for (_, env) in &outcome.projections {
                rec.push(format!("{:.10e}", env.values[j].re));
                rec.push(format!("{:.10e}", env.values[j].im));
            }
            c.write_record(&rec)?;
        }
        c.flush()?;
        Ok(())
    })?;
    if cfg.output.snapshot_csv {
        w.csv("snapshots.csv", "direct solve", |buf, header| reference.write_snapshots_csv(buf, Some(header)))?;
        for (i, f) in outcome.fields.iter().enumerate() {
            let name = format!("macro_field_{i}.csv");
            w.csv(&name, "macro solve", |buf, header| f.write_csv(buf, Some(header)))?;
        }
    }
    let summaries: Vec<_> = outcome.systems.iter().map(|s| s.summary()).collect();
    w.text("systems.json", "macro assembly", &serde_json::to_string_pretty(&summaries).expect("plain data"))?;
    let stride = (x.len() / 2000).max(1);
    let svg = svg_plot(
        &format!("U1 at t = {:.4}", snap.t),
        "x",
        "U1",
        &[
            Series {
                label: "direct".into(),
                points: x.iter().zip(&snap.u1).step_by(stride).map(|(a, b)| (*a, *b)).collect(),
            },
            Series {
                label: "two-scale".into(),
                points: x.iter().zip(&field.first).step_by(stride).map(|(a, b)| (*a, *b)).collect(),
            },
        ],
    );
    w.text("space_slice.svg", "plots", &svg)?;
    let t_stride = (probe.u1.len() / 2000).max(1);
    let times: Vec<f64> = (0..probe.u1.len()).map(|n| outcome.time.t(n)).collect();
    let svg = svg_plot(
        &format!("U1 at x = {:.4}", probe.x),
        "t",
        "U1",
        &[
            Series {
                label: "direct".into(),
                points: times.iter().zip(&probe.u1).step_by(t_stride).map(|(a, b)| (*a, *b)).collect(),
            },
            Series {
                label: "two-scale".into(),
                points: times.iter().zip(&series.first).step_by(t_stride).map(|(a, b)| (*a, *b)).collect(),
            },
        ],
    );
    w.text("time_slice.svg", "plots", &svg)?;
    let mut report = serde_json::to_value(&outcome.report).expect("plain data");
    report["config_hash"] = serde_json::Value::String(config_hash(&cfg.to_toml()));
    w.text("report.json", "report", &serde_json::to_string_pretty(&report).expect("plain data"))?;
    record_report(&mut w, &outcome.report);
    for fs in &outcome.spectra {
        for m in fs.modes.iter().filter(|m| m.n > 0) {
            let phi0 = m.phi.eval(0.0);
            w.record(&format!("phi0[{}|{}]", fs.sigma, m.n), format!("{:.12e}{:+.12e}i", phi0.re, phi0.im));
            w.record(&format!("lambda[{}|{}]", fs.sigma, m.n), format!("{:.12e}", m.lambda));
        }
    }
    for ((s, n), env) in &outcome.theta {
        let norm = (env.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / env.len() as f64).sqrt();
        w.record(&format!("theta_rms[{s}|{n}]"), format!("{norm:.12e}"));
    }
    w.finish()?;
    Ok(())
}

fn record_report(w: &mut ArtifactWriter, r: &ErrorReport) {
    let value = serde_json::to_value(r).expect("plain data");
    if let serde_json::Value::Object(map) = value {
        let sorted: BTreeMap<_, _> = map.into_iter().filter(|(k, _)| k != "wall_clock_seconds").collect();
        for (k, v) in sorted {
            w.record(&k, v);
        }
    }
}

/// One row of the epsilon sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub n_cells: u64,
    pub epsilon: f64,
    pub l: f64,
    pub space_error: f64,
    pub time_error: f64,
    pub initial_error: f64,
}

/// Validations along an admissible sequence `alpha / N`.
pub fn run_sweep_epsilon(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    admissible_sequence(cfg.fiber.k, cfg.medium.alpha, &cfg.sweep.n_cells).stage("epsilon sequence")?;
    cfg.sweep
        .n_cells
        .iter()
        .map(|&n| {
            let o = run_validate_cells(cfg, n, false)?;
            Ok(SweepRow {
                n_cells: n,
                epsilon: o.report.epsilon,
                l: o.report.l,
                space_error: o.report.space_error,
                time_error: o.report.time_error,
                initial_error: o.report.initial_error,
            })
        })
        .collect()
}

pub fn write_sweep(cfg: &ExperimentConfig, rows: &[SweepRow], out: &Path) -> Result<()> {
    let mut w = stage_writer(cfg, out)?;
    w.csv("sweep_epsilon.csv", "sweep", |buf, header| {
        writeln!(buf, "# {header}")?;
        let mut c = csv::Writer::from_writer(buf);
        c.write_record(["n_cells", "epsilon", "l", "space_error", "time_error", "initial_error"])?;
        for r in rows {
            c.write_record([
                r.n_cells.to_string(),
                format!("{:.10e}", r.epsilon),
                format!("{:.10e}", r.l),
                format!("{:.10e}", r.space_error),
                format!("{:.10e}", r.time_error),
                format!("{:.10e}", r.initial_error),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let svg = svg_plot(
        "relative error against epsilon",
        "epsilon",
        "error",
        &[
            Series {
                label: "space slice".into(),
                points: rows.iter().map(|r| (r.epsilon, r.space_error)).collect(),
            },
            Series {
                label: "time slice".into(),
                points: rows.iter().map(|r| (r.epsilon, r.time_error)).collect(),
            },
        ],
    );
    w.text("sweep_epsilon.svg", "plots", &svg)?;
    w.record("rows", rows.len());
    w.finish()?;
    Ok(())
}

/// Uniform fiber grid over `[-1/2, 1/2]`.
pub fn k_grid(points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|i| -0.5 + i as f64 / (points - 1) as f64).collect()
}

pub fn run_dispersion(cfg: &ExperimentConfig) -> Result<DispersionTable> {
    let cell = cfg.cell().stage("medium")?;
    dispersion_sweep(&cell, &k_grid(cfg.dispersion.k_points), cfg.dispersion.bands).stage("dispersion")
}

pub fn write_dispersion(cfg: &ExperimentConfig, table: &DispersionTable, out: &Path) -> Result<()> {
    let mut w = stage_writer(cfg, out)?;
    w.csv("dispersion.csv", "dispersion", |buf, header| table.write_csv(buf, Some(header)))?;
    let series: Vec<Series> = (1..=table.bands())
        .map(|n| Series {
            label: format!("omega_{n}"),
            points: table.k.iter().copied().zip(table.band(n)).collect(),
        })
        .collect();
    w.text("dispersion.svg", "plots", &svg_plot("Bloch bands", "k", "omega", &series))?;
    w.record("bands", table.bands());
    w.record("k_points", table.k.len());
    w.finish()?;
    Ok(())
}

pub fn run_modes(cfg: &ExperimentConfig) -> Result<(EpsilonMedium, UniformGrid, Vec<PhysicalMode>)> {
    let cell = cfg.cell().stage("medium")?;
    let medium = EpsilonMedium::new(cell, cfg.medium.alpha, cfg.n_cells()?).stage("medium")?;
    let grid = medium.aligned_grid(cfg.grids.fine_points_per_cell).stage("modes")?;
    let modes = physical_eigenmodes(&medium, cfg.modes.count, &grid).stage("modes")?;
    Ok((medium, grid, modes))
}

pub fn write_modes(cfg: &ExperimentConfig, grid: &UniformGrid, modes: &[PhysicalMode], out: &Path) -> Result<()> {
    let mut w = stage_writer(cfg, out)?;
    w.csv("eigenmodes.csv", "modes", |buf, header| write_eigenmodes_csv(buf, grid, modes, Some(header)))?;
    w.csv("eigenvalues.csv", "modes", |buf, header| {
        writeln!(buf, "# {header}")?;
        let mut c = csv::Writer::from_writer(buf);
        c.write_record(["l", "lambda", "omega"])?;
        for (l, m) in modes.iter().enumerate() {
            c.write_record([(l + 1).to_string(), format!("{:.12e}", m.lambda), format!("{:.12e}", m.lambda.sqrt())])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let x = grid.nodes();
    let stride = (x.len() / 2000).max(1);
    let series: Vec<Series> = modes
        .iter()
        .take(4)
        .enumerate()
        .map(|(l, m)| Series {
            label: format!("v_{}", l + 1),
            points: x.iter().zip(&m.v).step_by(stride).map(|(a, b)| (*a, *b)).collect(),
        })
        .collect();
    w.text("eigenmodes.svg", "plots", &svg_plot("Dirichlet eigenmodes", "x", "v", &series))?;
    w.record("count", modes.len());
    w.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_grid_is_symmetric() {
        let g = k_grid(21);
        assert_eq!(g.len(), 21);
        for (a, b) in g.iter().zip(g.iter().rev()) {
            assert!((a + b).abs() < 1e-15);
        }
        assert_eq!(k_grid(1), vec![0.0]);
    }

    #[test]
    fn calibration_picks_positive_orientation() {
        let cell = CellCoefficients::sine(128).unwrap();
        let c = calibrate_orientation(&cell, 0.16).unwrap();
        assert_eq!(c.orientation, 1.0);
        assert!(c.predicted_velocity > 0.0);
    }
}
