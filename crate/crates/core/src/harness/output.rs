//! Artifact writing: CSV tables with a provenance header, minimal SVG line
//! plots and a `key=value` manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Writes files into one output directory and records them in a manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    hash: String,
    files: Vec<(String, String)>,
    entries: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, config_hash: String) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: config_hash,
            files: Vec::new(),
            entries: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// The comment line that opens every CSV.
    pub fn header(&self, stage: &str) -> String {
        format!("config={} stage={stage} version={VERSION}", self.hash)
    }

    /// Writes a CSV through `fill`, which receives the header comment.
    pub fn csv(
        &mut self,
        name: &str,
        stage: &str,
        fill: impl FnOnce(&mut Vec<u8>, &str) -> Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        let header = self.header(stage);
        fill(&mut buf, &header)?;
        self.write_bytes(name, stage, &buf)
    }

    pub fn text(&mut self, name: &str, stage: &str, body: &str) -> Result<PathBuf> {
        self.write_bytes(name, stage, body.as_bytes())
    }

    fn write_bytes(&mut self, name: &str, stage: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.push((name.to_string(), stage.to_string()));
        Ok(path)
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Writes `manifest.txt` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash={}", self.hash);
        let _ = writeln!(out, "version={VERSION}");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        for (name, stage) in &self.files {
            let _ = writeln!(out, "file.{name}=stage:{stage} config:{} version:{VERSION}", self.hash);
        }
        let path = self.dir.join("manifest.txt");
        fs::write(&path, out)?;
        Ok(path)
    }
}

/// One polyline of a plot.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A polyline plot with a frame, min/max tick labels and a legend.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, margin) = (640.0, 420.0, 50.0);
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * margin,
        h - 2.0 * margin
    );
    let _ = writeln!(svg, r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", margin, h - margin + 16.0),
        (x1, "end", w - margin, h - margin + 16.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#);
    }
    for (v, y) in [(y0, h - margin), (y1, margin + 10.0)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{v:.3}</text>"#, margin - 4.0);
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        let ly = margin + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#,
            w - margin - 110.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("kind = \"validate\"");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("kind = \"validate\""));
        assert_ne!(h, config_hash("kind = \"modes\""));
    }

    #[test]
    fn svg_contains_each_series() {
        let s = vec![
            Series { label: "a".into(), points: vec![(0.0, 0.0), (1.0, 1.0)] },
            Series { label: "b<2>".into(), points: vec![(0.0, 1.0), (1.0, 0.0)] },
        ];
        let svg = svg_plot("t", "x", "y", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;2&gt;"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path(), "abc".into()).unwrap();
        w.csv("t.csv", "demo", |buf, header| {
            use std::io::Write;
            writeln!(buf, "# {header}")?;
            Ok(())
        })
        .unwrap();
        w.record("k", 0.16);
        let manifest = std::fs::read_to_string(w.finish().unwrap()).unwrap();
        assert!(manifest.contains("config_hash=abc"));
        assert!(manifest.contains("k=0.16"));
        assert!(manifest.contains("file.t.csv=stage:demo"));
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(csv.starts_with("# config=abc stage=demo version="));
    }
}
