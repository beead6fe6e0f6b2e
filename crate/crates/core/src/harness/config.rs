//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::CellCoefficients;
use crate::error::{Error, Result};
use crate::macro_solver::{Limiter, Scheme};
use crate::two_scale::{admissible_sequence, EnvelopeShape, ProjectionMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Dispersion,
    Validate,
    SweepEpsilon,
    Modes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub medium: MediumConfig,
    pub fiber: FiberConfig,
    pub grids: GridConfig,
    pub envelope: EnvelopeConfig,
    pub slices: SliceConfig,
    #[serde(rename = "macro")]
    pub macro_: MacroConfig,
    pub sweep: SweepConfig,
    pub dispersion: DispersionConfig,
    pub modes: ModesConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumConfig {
    /// `sine`, `homogeneous`, `expression` or `csv`.
    pub profile: String,
    pub a: Option<String>,
    pub rho: Option<String>,
    pub csv: Option<PathBuf>,
    pub cell_points: usize,
    pub alpha: f64,
    pub n_cells: Option<u64>,
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberConfig {
    pub k: f64,
    /// Bloch pairs `n`; each contributes the signed indices `+n` and `-n`.
    pub pairs: Vec<u32>,
    /// Explicit signed indices, used instead of `pairs` when non-empty.
    pub modes: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub fine_points_per_cell: usize,
    pub t_final: f64,
    /// Fine time steps; derived from `cfl` when absent.
    pub fine_steps: Option<usize>,
    pub cfl: f64,
    pub macro_intervals: usize,
    pub macro_cfl: f64,
    pub macro_record_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    /// `standing` or `bump`.
    pub shape: String,
    pub amplitude: f64,
    pub center: f64,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    pub t_star: f64,
    pub x_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    /// `upwind`, `lax-wendroff`, `minmod` or `van-leer`.
    pub scheme: String,
    /// `pair-resolved` or `cell-average`.
    pub projection: String,
    /// Macro initial data: `constructed` uses the modal amplitudes of the
    /// built initial condition, `projected` projects the sampled field.
    pub initial: String,
    /// `calibrate`, `+1` or `-1`.
    pub orientation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_cells: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispersionConfig {
    pub k_points: usize,
    pub bands: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesConfig {
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_csv: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Validate,
            medium: MediumConfig::default(),
            fiber: FiberConfig::default(),
            grids: GridConfig::default(),
            envelope: EnvelopeConfig::default(),
            slices: SliceConfig::default(),
            macro_: MacroConfig::default(),
            sweep: SweepConfig::default(),
            dispersion: DispersionConfig::default(),
            modes: ModesConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Default for MediumConfig {
    fn default() -> Self {
        Self {
            profile: "sine".into(),
            a: None,
            rho: None,
            csv: None,
            cell_points: 256,
            alpha: 1.0,
            n_cells: None,
            epsilon: None,
        }
    }
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self {
            k: 0.16,
            pairs: vec![2],
            modes: Vec::new(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            fine_points_per_cell: 1000,
            t_final: 1.0,
            fine_steps: Some(11500),
            cfl: 0.9,
            macro_intervals: 1000,
            macro_cfl: 0.9,
            macro_record_every: 5,
        }
    }
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            shape: "standing".into(),
            amplitude: 1.0,
            center: 0.5,
            half_width: 0.3,
        }
    }
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            t_star: 0.466,
            x_star: 0.699,
        }
    }
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            scheme: "upwind".into(),
            projection: "pair-resolved".into(),
            initial: "constructed".into(),
            orientation: "calibrate".into(),
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_cells: vec![25, 50, 100],
        }
    }
}

impl Default for DispersionConfig {
    fn default() -> Self {
        Self { k_points: 101, bands: 6 }
    }
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self { count: 12 }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_csv: false,
        }
    }
}

/// Cells in the domain when neither `n_cells` nor `epsilon` is given.
pub const DEFAULT_CELLS: u64 = 10;

/// Source of the macro initial envelopes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialData {
    Constructed,
    Projected,
}

/// How the macro orientation is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Orientation {
    Calibrate,
    Fixed(f64),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// The number of cells `alpha / eps`, from `n_cells` or `epsilon`.
    pub fn n_cells(&self) -> Result<u64> {
        match (self.medium.n_cells, self.medium.epsilon) {
            (Some(n), None) => Ok(n),
            (Some(n), Some(eps)) => {
                if (self.medium.alpha / n as f64 - eps).abs() > 1e-12 * eps {
                    return Err(Error::Config(format!(
                        "n_cells = {n} and epsilon = {eps} disagree"
                    )));
                }
                Ok(n)
            }
            (None, Some(eps)) => {
                let ratio = self.medium.alpha / eps;
                let n = ratio.round();
                if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
                    return Err(Error::Config(format!(
                        "epsilon = {eps} is not alpha/N for an integer N"
                    )));
                }
                Ok(n as u64)
            }
            (None, None) => Ok(DEFAULT_CELLS),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(-0.5..=0.5).contains(&self.fiber.k) {
            return bad(format!("fiber k = {} outside [-1/2, 1/2]", self.fiber.k));
        }
        if !(self.medium.alpha > 0.0) {
            return bad("medium.alpha must be positive".into());
        }
        self.n_cells()?;
        if self.medium.cell_points < 8 {
            return bad("medium.cell_points must be at least 8".into());
        }
        if self.fiber.pairs.is_empty() && self.fiber.modes.is_empty() {
            return bad("fiber needs pairs or modes".into());
        }
        if self.fiber.pairs.contains(&0) || self.fiber.modes.contains(&0) {
            return bad("mode indices are nonzero".into());
        }
        if self.grids.fine_points_per_cell < 16 {
            return bad("grids.fine_points_per_cell must be at least 16".into());
        }
        if !(self.grids.t_final > 0.0) {
            return bad("grids.t_final must be positive".into());
        }
        if !(self.grids.cfl > 0.0 && self.grids.cfl <= 1.0) || !(self.grids.macro_cfl > 0.0 && self.grids.macro_cfl <= 1.0) {
            return bad("CFL numbers must lie in (0, 1]".into());
        }
        if self.grids.macro_intervals < 4 || self.grids.macro_record_every == 0 {
            return bad("grids.macro_intervals >= 4 and macro_record_every >= 1 required".into());
        }
        if !(0.0..=self.grids.t_final).contains(&self.slices.t_star) {
            return bad("slices.t_star outside [0, T]".into());
        }
        if !(0.0..=self.medium.alpha).contains(&self.slices.x_star) {
            return bad("slices.x_star outside the domain".into());
        }
        self.scheme()?;
        self.projection()?;
        self.initial_data()?;
        self.orientation()?;
        self.envelope_shape()?;
        if self.kind == ExperimentKind::SweepEpsilon {
            if self.sweep.n_cells.is_empty() {
                return bad("sweep.n_cells is empty".into());
            }
            admissible_sequence(self.fiber.k, self.medium.alpha, &self.sweep.n_cells)?;
        }
        Ok(())
    }

    pub fn cell(&self) -> Result<CellCoefficients> {
        let n = self.medium.cell_points;
        match self.medium.profile.as_str() {
            "sine" => CellCoefficients::sine(n),
            "homogeneous" => {
                let parse = |v: &Option<String>| -> Result<f64> {
                    v.as_deref()
                        .unwrap_or("1")
                        .trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("homogeneous coefficient: {e}")))
                };
                CellCoefficients::homogeneous(n, parse(&self.medium.a)?, parse(&self.medium.rho)?)
            }
            "expression" => {
                let a = self.medium.a.as_deref().ok_or_else(|| Error::Config("expression profile needs medium.a".into()))?;
                let rho = self.medium.rho.as_deref().unwrap_or("1");
                CellCoefficients::from_expressions(n, a, rho)
            }
            "csv" => {
                let path = self.medium.csv.as_deref().ok_or_else(|| Error::Config("csv profile needs medium.csv".into()))?;
                CellCoefficients::from_csv(path)
            }
            other => Err(Error::Config(format!("unknown profile `{other}`"))),
        }
    }

    /// Signed mode indices of the experiment.
    pub fn signed_modes(&self) -> Vec<i32> {
        if !self.fiber.modes.is_empty() {
            return self.fiber.modes.clone();
        }
        self.fiber
            .pairs
            .iter()
            .flat_map(|&p| [p as i32, -(p as i32)])
            .collect()
    }

    pub fn scheme(&self) -> Result<Scheme> {
        match self.macro_.scheme.as_str() {
            "upwind" => Ok(Scheme::Upwind),
            "lax-wendroff" => Ok(Scheme::LimitedLaxWendroff(Limiter::None)),
            "minmod" => Ok(Scheme::LimitedLaxWendroff(Limiter::Minmod)),
            "van-leer" => Ok(Scheme::LimitedLaxWendroff(Limiter::VanLeer)),
            other => Err(Error::Config(format!("unknown macro scheme `{other}`"))),
        }
    }

    pub fn projection(&self) -> Result<ProjectionMethod> {
        match self.macro_.projection.as_str() {
            "pair-resolved" => Ok(ProjectionMethod::PairResolved),
            "cell-average" => Ok(ProjectionMethod::CellAverage),
            other => Err(Error::Config(format!("unknown projection `{other}`"))),
        }
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        match self.macro_.initial.as_str() {
            "constructed" => Ok(InitialData::Constructed),
            "projected" => Ok(InitialData::Projected),
            other => Err(Error::Config(format!("initial data `{other}` is not constructed or projected"))),
        }
    }

    pub fn orientation(&self) -> Result<Orientation> {
        match self.macro_.orientation.trim() {
            "calibrate" => Ok(Orientation::Calibrate),
            "+1" | "1" => Ok(Orientation::Fixed(1.0)),
            "-1" => Ok(Orientation::Fixed(-1.0)),
            other => Err(Error::Config(format!("orientation `{other}` is not calibrate, +1 or -1"))),
        }
    }

    pub fn envelope_shape(&self) -> Result<EnvelopeShape> {
        let e = &self.envelope;
        match e.shape.as_str() {
            "standing" => Ok(EnvelopeShape::Standing { amplitude: e.amplitude }),
            "bump" => {
                if !(e.half_width > 0.0) {
                    return Err(Error::Config("bump envelope needs half_width > 0".into()));
                }
                Ok(EnvelopeShape::Bump {
                    amplitude: e.amplitude,
                    center: e.center,
                    half_width: e.half_width,
                })
            }
            other => Err(Error::Config(format!("unknown envelope shape `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_experiment() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_cells().unwrap(), 10);
        assert_eq!(cfg.signed_modes(), vec![2, -2]);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            kind = "sweep-epsilon"
            [medium]
            profile = "expression"
            a = "(sin(2*pi*y) + 2)/3"
            epsilon = 0.04
            [fiber]
            k = 0.16
            pairs = [2, 3]
            [sweep]
            n_cells = [25, 50]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::SweepEpsilon);
        assert_eq!(cfg.n_cells().unwrap(), 25);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[fiber]\nk = 0.7",
            "[medium]\nepsilon = 0.3\nn_cells = 10",
            "[macro]\nscheme = \"spectral\"",
            "unknown = 1",
            "kind = \"sweep-epsilon\"\n[sweep]\nn_cells = [10, 25]",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
