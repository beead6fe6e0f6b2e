//! Periodic cell coefficients `a(y)` (stiffness) and `rho(y)` (density) on Y = (0, 1).
//!
//! Samples live on the uniform grid `y_j = j / n`, `j = 0..n`. Evaluation at
//! arbitrary `y` wraps into Y; it uses the closed form when the profile has
//! one and periodic linear interpolation of the samples otherwise.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables,
    DefaultNumericTypes, EvalexprError, Function, HashMapContext, Node, Value,
};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct CellCoefficients {
    a: Vec<f64>,
    rho: Vec<f64>,
    a0: f64,
    a1: f64,
    rho0: f64,
    rho1: f64,
    a_hat: Vec<Complex64>,
    rho_hat: Vec<Complex64>,
    closed_form: Option<(ProfileFn, ProfileFn)>,
    label: String,
}

impl fmt::Debug for CellCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CellCoefficients")
            .field("label", &self.label)
            .field("samples", &self.a.len())
            .field("a_bounds", &(self.a0, self.a1))
            .field("rho_bounds", &(self.rho0, self.rho1))
            .finish()
    }
}

impl CellCoefficients {
    /// Builds a cell from samples, taking the bounds as the sample extrema.
    pub fn from_samples(a: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        let (a0, a1) = extrema(&a);
        let (rho0, rho1) = extrema(&rho);
        Self::with_bounds(a, rho, [a0, a1], [rho0, rho1])
    }

    pub fn with_bounds(
        a: Vec<f64>,
        rho: Vec<f64>,
        a_bounds: [f64; 2],
        rho_bounds: [f64; 2],
    ) -> Result<Self> {
        if a.len() != rho.len() {
            return Err(Error::invalid(format!(
                "a has {} samples but rho has {}",
                a.len(),
                rho.len()
            )));
        }
        if a.len() < 4 {
            return Err(Error::invalid("a cell needs at least 4 samples"));
        }
        let [a0, a1] = a_bounds;
        let [rho0, rho1] = rho_bounds;
        if !(a0 > 0.0 && rho0 > 0.0 && a0 <= a1 && rho0 <= rho1) {
            return Err(Error::invalid(format!(
                "bounds must satisfy 0 < a0 <= a1 and 0 < rho0 <= rho1, got a in [{a0}, {a1}], rho in [{rho0}, {rho1}]"
            )));
        }
        for (j, (&aj, &rj)) in a.iter().zip(&rho).enumerate() {
            if !aj.is_finite() || !rj.is_finite() || aj <= 0.0 || rj <= 0.0 {
                return Err(Error::invalid(format!(
                    "non-positive coefficient sample at j={j}: a={aj}, rho={rj}"
                )));
            }
            // allow for rounding in the bound check
            let slack = 1e-12;
            if aj < a0 * (1.0 - slack) || aj > a1 * (1.0 + slack) {
                return Err(Error::invalid(format!(
                    "a sample {aj} at j={j} outside [{a0}, {a1}]"
                )));
            }
            if rj < rho0 * (1.0 - slack) || rj > rho1 * (1.0 + slack) {
                return Err(Error::invalid(format!(
                    "rho sample {rj} at j={j} outside [{rho0}, {rho1}]"
                )));
            }
        }
        let a_hat = dft(&a);
        let rho_hat = dft(&rho);
        Ok(Self {
            a,
            rho,
            a0,
            a1,
            rho0,
            rho1,
            a_hat,
            rho_hat,
            closed_form: None,
            label: "samples".into(),
        })
    }

    /// Samples closed-form profiles on an `n`-point cell grid and keeps the
    /// closed forms for off-grid evaluation.
    pub fn from_fn<A, R>(n: usize, a: A, rho: R) -> Result<Self>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        R: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let grid = cell_grid(n);
        let a_s: Vec<f64> = grid.iter().map(|&y| a(y)).collect();
        let r_s: Vec<f64> = grid.iter().map(|&y| rho(y)).collect();
        let mut cell = Self::from_samples(a_s, r_s)?;
        cell.closed_form = Some((Arc::new(a), Arc::new(rho)));
        cell.label = "closed-form".into();
        Ok(cell)
    }

    /// The default profile: `a = (sin(2 pi y) + 2) / 3`, `rho = 1`.
    pub fn sine(n: usize) -> Result<Self> {
        let mut cell = Self::from_fn(n, |y| ((2.0 * PI * y).sin() + 2.0) / 3.0, |_| 1.0)?;
        // exact bounds of the closed form, not of the samples
        cell.a0 = 1.0 / 3.0;
        cell.a1 = 1.0;
        cell.label = "sine".into();
        Ok(cell)
    }

    pub fn homogeneous(n: usize, a: f64, rho: f64) -> Result<Self> {
        let mut cell = Self::from_fn(n, move |_| a, move |_| rho)?;
        cell.label = format!("homogeneous(a={a}, rho={rho})");
        Ok(cell)
    }

    /// Builds a cell from expression strings over `y`, e.g. `"(sin(2*pi*y)+2)/3"`.
    pub fn from_expressions(n: usize, a_expr: &str, rho_expr: &str) -> Result<Self> {
        let a = Expression::parse(a_expr)?;
        let rho = Expression::parse(rho_expr)?;
        // surface evaluation errors up front instead of inside the closures
        for &y in &cell_grid(n) {
            a.eval(y)?;
            rho.eval(y)?;
        }
        let label = format!("a={a_expr}; rho={rho_expr}");
        let mut cell = Self::from_fn(
            n,
            move |y| a.eval(y).unwrap_or(f64::NAN),
            move |y| rho.eval(y).unwrap_or(f64::NAN),
        )?;
        cell.label = label;
        Ok(cell)
    }

    /// Reads a CSV table with columns `y, a, rho` sampled on the uniform cell grid.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::invalid(format!("{}: missing column '{name}'", path.display())))
        };
        let (iy, ia, ir) = (col("y")?, col("a")?, col("rho")?);
        let mut ys = Vec::new();
        let mut a = Vec::new();
        let mut rho = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("{}: bad number in row {record:?}", path.display())))
            };
            ys.push(parse(iy)?);
            a.push(parse(ia)?);
            rho.push(parse(ir)?);
        }
        let n = ys.len();
        for (j, &y) in ys.iter().enumerate() {
            if (y - j as f64 / n as f64).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "{}: rows must sample y_j = j/{n}, row {j} has y={y}",
                    path.display()
                )));
            }
        }
        let mut cell = Self::from_samples(a, rho)?;
        cell.label = format!("table:{}", path.display());
        Ok(cell)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn a_samples(&self) -> &[f64] {
        &self.a
    }

    pub fn rho_samples(&self) -> &[f64] {
        &self.rho
    }

    pub fn grid(&self) -> Vec<f64> {
        cell_grid(self.len())
    }

    pub fn a_bounds(&self) -> (f64, f64) {
        (self.a0, self.a1)
    }

    pub fn rho_bounds(&self) -> (f64, f64) {
        (self.rho0, self.rho1)
    }

    /// Fourier coefficient `a_j` with `a(y) = sum_j a_j e^{2 i pi j y}`, for `|j| < n/2`.
    pub fn a_fourier(&self, j: i64) -> Complex64 {
        fourier_at(&self.a_hat, j)
    }

    pub fn rho_fourier(&self, j: i64) -> Complex64 {
        fourier_at(&self.rho_hat, j)
    }

    /// Largest `|j|` for which the sampled Fourier coefficients are available without aliasing.
    pub fn max_harmonic(&self) -> i64 {
        (self.len() as i64 - 1) / 2
    }

    pub fn a_at(&self, y: f64) -> f64 {
        let y = wrap(y);
        match &self.closed_form {
            Some((a, _)) => a(y),
            None => periodic_lerp(&self.a, y),
        }
    }

    pub fn rho_at(&self, y: f64) -> f64 {
        let y = wrap(y);
        match &self.closed_form {
            Some((_, rho)) => rho(y),
            None => periodic_lerp(&self.rho, y),
        }
    }

    /// Harmonic mean of `a` over the cell.
    pub fn harmonic_mean_a(&self) -> f64 {
        let n = self.len() as f64;
        n / self.a.iter().map(|a| 1.0 / a).sum::<f64>()
    }

    pub fn mean_rho(&self) -> f64 {
        self.rho.iter().sum::<f64>() / self.len() as f64
    }
}

pub fn cell_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / n as f64).collect()
}

/// Wraps `y` into [0, 1).
pub fn wrap(y: f64) -> f64 {
    let w = y - y.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn extrema(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn periodic_lerp(samples: &[f64], y: f64) -> f64 {
    let n = samples.len();
    let s = y * n as f64;
    let j = (s.floor() as usize) % n;
    let t = s - s.floor();
    samples[j] * (1.0 - t) + samples[(j + 1) % n] * t
}

fn dft(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

fn fourier_at(hat: &[Complex64], j: i64) -> Complex64 {
    let n = hat.len() as i64;
    if 2 * j.abs() >= n {
        return Complex64::new(0.0, 0.0);
    }
    hat[j.rem_euclid(n) as usize]
}

/// A closed-form expression in the variable `y`, with `pi` and the usual
/// elementary functions (`sin`, `cos`, `exp`, `sqrt`, ...).
#[derive(Clone)]
pub struct Expression {
    source: String,
    tree: Node<DefaultNumericTypes>,
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

const UNARY_FUNCTIONS: &[(&str, fn(f64) -> f64)] = &[
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("tan", f64::tan),
    ("exp", f64::exp),
    ("ln", f64::ln),
    ("sqrt", f64::sqrt),
    ("abs", f64::abs),
    ("tanh", f64::tanh),
    ("cosh", f64::cosh),
    ("sinh", f64::sinh),
    ("floor", f64::floor),
];

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let tree = build_operator_tree::<DefaultNumericTypes>(&floatify_literals(source))
            .map_err(|e| Error::invalid(format!("cannot parse expression '{source}': {e}")))?;
        Ok(Self {
            source: source.to_string(),
            tree,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        let ctx = Self::context(y)
            .map_err(|e| Error::invalid(format!("expression context: {e}")))?;
        self.tree
            .eval_number_with_context(&ctx)
            .map_err(|e| Error::invalid(format!("cannot evaluate '{}' at y={y}: {e}", self.source)))
    }

    fn context(
        y: f64,
    ) -> std::result::Result<HashMapContext<DefaultNumericTypes>, EvalexprError<DefaultNumericTypes>>
    {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        ctx.set_value("y".into(), Value::from_float(y))?;
        ctx.set_value("pi".into(), Value::from_float(PI))?;
        for &(name, f) in UNARY_FUNCTIONS {
            ctx.set_function(
                name.into(),
                Function::new(move |arg| Ok(Value::from_float(f(arg.as_number()?)))),
            )?;
        }
        Ok(ctx)
    }
}

/// Rewrites bare integer literals as floats so that `1/3` divides in floating point.
fn floatify_literals(src: &str) -> String {
    let bytes = src.as_bytes();
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let prev_ident = i > 0 && {
            let p = bytes[i - 1] as char;
            p.is_ascii_alphanumeric() || p == '_' || p == '.'
        };
        if c.is_ascii_digit() && !prev_ident {
            let start = i;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            let next = bytes.get(i).map(|&b| b as char);
            out.push_str(&src[start..i]);
            if !matches!(next, Some('.') | Some('e') | Some('E')) {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_non_positive_samples() {
        let err = CellCoefficients::from_samples(vec![1.0, 0.0, 1.0, 1.0], vec![1.0; 4]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        let err = CellCoefficients::from_samples(vec![1.0; 4], vec![1.0, 1.0, -2.0, 1.0]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_samples_outside_bounds() {
        let err = CellCoefficients::with_bounds(vec![1.0, 2.0, 1.0, 1.0], vec![1.0; 4], [0.5, 1.5], [1.0, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn sine_profile_bounds_and_wrap() {
        let cell = CellCoefficients::sine(64).unwrap();
        assert_eq!(cell.a_bounds(), (1.0 / 3.0, 1.0));
        for &y in &[0.1, 0.37, 0.9] {
            assert_relative_eq!(cell.a_at(y), cell.a_at(y + 3.0), epsilon = 1e-13);
            assert_relative_eq!(cell.a_at(y), cell.a_at(y - 2.0), epsilon = 1e-13);
        }
        assert!(cell.a_samples().iter().all(|&a| (1.0 / 3.0..=1.0).contains(&a)));
    }

    #[test]
    fn fourier_coefficients_of_sine_profile() {
        let cell = CellCoefficients::sine(32).unwrap();
        assert_relative_eq!(cell.a_fourier(0).re, 2.0 / 3.0, epsilon = 1e-14);
        // sin(2 pi y)/3 = (e^{i} - e^{-i}) / (6i)
        assert_relative_eq!(cell.a_fourier(1).im, -1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(cell.a_fourier(-1).im, 1.0 / 6.0, epsilon = 1e-14);
        assert!(cell.a_fourier(2).norm() < 1e-15);
        assert_eq!(cell.a_fourier(40), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn expression_matches_named_profile() {
        let named = CellCoefficients::sine(128).unwrap();
        let expr = CellCoefficients::from_expressions(128, "(sin(2*pi*y)+2)/3", "1").unwrap();
        for (a, b) in named.a_samples().iter().zip(expr.a_samples()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert_relative_eq!(expr.a_at(1.25), named.a_at(0.25), epsilon = 1e-14);
    }

    #[test]
    fn integer_division_is_floating() {
        let e = Expression::parse("1/3 + 2^2").unwrap();
        assert_relative_eq!(e.eval(0.0).unwrap(), 1.0 / 3.0 + 4.0, epsilon = 1e-15);
        let e = Expression::parse("1.5e1*y").unwrap();
        assert_relative_eq!(e.eval(2.0).unwrap(), 30.0, epsilon = 1e-15);
    }

    #[test]
    fn bad_expression_is_rejected() {
        assert!(Expression::parse("sin(").is_err());
        assert!(CellCoefficients::from_expressions(16, "foo(y)", "1").is_err());
    }

    #[test]
    fn csv_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cell.csv");
        let mut text = String::from("y,a,rho\n");
        for j in 0..16 {
            let y = j as f64 / 16.0;
            text.push_str(&format!("{y},{},{}\n", 1.0 + 0.5 * (2.0 * PI * y).cos(), 2.0));
        }
        std::fs::write(&path, text).unwrap();
        let cell = CellCoefficients::from_csv(&path).unwrap();
        assert_eq!(cell.len(), 16);
        assert_relative_eq!(cell.mean_rho(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(cell.a_at(1.0 + 1.0 / 16.0), cell.a_samples()[1], epsilon = 1e-14);
    }

    #[test]
    fn harmonic_mean_of_constant() {
        let cell = CellCoefficients::homogeneous(16, 2.5, 1.0).unwrap();
        assert_relative_eq!(cell.harmonic_mean_a(), 2.5, epsilon = 1e-14);
    }
}
