//! Sampled complex envelopes with cubic interpolation.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A slowly varying complex amplitude sampled at increasing abscissae.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub x: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl Envelope {
    pub fn new(x: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if x.len() != values.len() || x.is_empty() {
            return Err(Error::invalid(format!(
                "envelope needs matching non-empty samples, got {} abscissae and {} values",
                x.len(),
                values.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("envelope abscissae must be strictly increasing"));
        }
        Ok(Self { x, values })
    }

    pub fn from_fn(x: Vec<f64>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = x.iter().map(|&x| f(x)).collect();
        Self::new(x, values)
    }

    pub fn zeros(x: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new(x, vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.norm() == 0.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Four-point Lagrange interpolation; the end stencils extrapolate.
    pub fn eval(&self, x: f64) -> Complex64 {
        interpolate_cubic(&self.x, &self.values, x)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            x: self.x.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Writes `x, re, im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "re", "im"])?;
        for (x, v) in self.x.iter().zip(&self.values) {
            w.write_record([format!("{x:.12e}"), format!("{:.12e}", v.re), format!("{:.12e}", v.im)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut x = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::invalid("envelope row needs x, re, im"))?
                    .trim()
                    .parse()
                    .map_err(|e| Error::invalid(format!("bad envelope value: {e}")))
            };
            x.push(field(0)?);
            values.push(Complex64::new(field(1)?, field(2)?));
        }
        Self::new(x, values)
    }
}

/// Cubic Lagrange interpolation of `(xs, ys)` at `x`, falling back to lower
/// degree on fewer than four samples.
pub fn interpolate_cubic(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let width = n.min(4);
    let i = xs.partition_point(|&xi| xi <= x).saturating_sub(1);
    let start = i.saturating_sub(1).min(n - width);
    let mut acc = Complex64::new(0.0, 0.0);
    for a in start..start + width {
        let mut w = 1.0;
        for b in start..start + width {
            if a != b {
                w *= (x - xs[b]) / (xs[a] - xs[b]);
            }
        }
        acc += ys[a] * w;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_is_exact_on_cubics() {
        let x: Vec<f64> = (0..9).map(|i| 0.1 + 0.13 * i as f64).collect();
        let f = |x: f64| Complex64::new(x * x * x - 2.0 * x, 0.5 * x * x);
        let env = Envelope::from_fn(x, f).unwrap();
        for t in [0.0, 0.11, 0.5, 0.77, 1.2, 1.3] {
            assert!((env.eval(t) - f(t)).norm() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn short_envelopes_degrade_gracefully() {
        let env = Envelope::new(vec![0.0, 1.0], vec![Complex64::new(1.0, 0.0), Complex64::new(3.0, 0.0)]).unwrap();
        assert!((env.eval(0.5).re - 2.0).abs() < 1e-15);
        let single = Envelope::new(vec![0.3], vec![Complex64::new(0.0, 2.0)]).unwrap();
        assert_eq!(single.eval(7.0), Complex64::new(0.0, 2.0));
    }

    #[test]
    fn rejects_unsorted_or_mismatched() {
        assert!(Envelope::new(vec![0.0, 0.0], vec![Complex64::new(0.0, 0.0); 2]).is_err());
        assert!(Envelope::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let env = Envelope::from_fn(vec![0.0, 0.5, 1.0], |x| Complex64::new(x, -x)).unwrap();
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let back = Envelope::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, env);
    }
}
