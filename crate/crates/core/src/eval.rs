//! Confusion matrices, accuracy and macro-F1, repeated-run aggregation,
//! report tables and the real-vs-synthetic overlay file.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Counts with rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n: n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != n_classes * n_classes {
            return Err(Error::Argument(format!(
                "{} counts do not form a {n_classes}x{n_classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { n: n_classes, counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Argument(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::Argument(format!("class ({t}, {p}) outside [0, {n_classes})")));
            }
            cm.counts[t * n_classes + p] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Relabel classes: class `c` becomes `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.n);
        for t in 0..self.n {
            for p in 0..self.n {
                out.counts[perm[t] * self.n + perm[p]] = self.get(t, p);
            }
        }
        out
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.total() == 0 {
            return Err(Error::Argument("metrics need a non-empty confusion matrix".into()));
        }
        Ok(())
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.counts.iter().map(|c| c.to_string().len()).max().unwrap_or(1);
        for row in self.counts.chunks(self.n.max(1)) {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    let trace: u64 = (0..cm.n).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / cm.total() as f64)
}

/// `2PR / (P + R)` per class; zero when `P + R = 0`.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    cm.check()?;
    Ok((0..cm.n)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted: u64 = (0..cm.n).map(|t| cm.get(t, c)).sum();
            let actual: u64 = (0..cm.n).map(|p| cm.get(c, p)).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .collect())
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let f1 = per_class_f1(cm)?;
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

/// Mean and sample standard deviation (ddof 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

pub fn aggregate_runs(values: &[f64]) -> Result<MeanStd> {
    if values.len() < 2 {
        return Err(Error::Argument(format!("aggregation needs >= 2 runs, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MeanStd { mean, std: var.sqrt(), n: values.len() })
}

/// Scientific notation with nine significant digits, enough to
/// round-trip any `f32`.
pub fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

pub fn json_f32_array(values: &[f32]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt_f32(*v)).collect();
    format!("[{}]", parts.join(","))
}

/// One real/synthetic pair of the overlay file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayPair {
    pub class: u32,
    pub real: Vec<f32>,
    pub synthetic: Vec<f32>,
}

pub fn overlay_ndjson(pairs: &[OverlayPair]) -> Result<String> {
    let mut out = String::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.real.len() != p.synthetic.len() {
            return Err(Error::Argument(format!(
                "overlay pair {i}: real length {} differs from synthetic length {}",
                p.real.len(),
                p.synthetic.len()
            )));
        }
        out.push_str(&format!(
            "{{\"class\":{},\"real\":{},\"synthetic\":{}}}\n",
            p.class,
            json_f32_array(&p.real),
            json_f32_array(&p.synthetic)
        ));
    }
    Ok(out)
}

/// Pair real and synthetic windows (equal counts, equal lengths) and write
/// them as NDJSON.
pub fn emit_overlay(classes: &[u32], real: &[Vec<f32>], synthetic: &[Vec<f32>], path: &Path) -> Result<()> {
    if real.len() != synthetic.len() || real.len() != classes.len() {
        return Err(Error::Argument(format!(
            "overlay needs equal counts: {} classes, {} real, {} synthetic",
            classes.len(),
            real.len(),
            synthetic.len()
        )));
    }
    let pairs: Vec<OverlayPair> = classes
        .iter()
        .zip(real.iter().zip(synthetic))
        .map(|(&class, (r, s))| OverlayPair { class, real: r.clone(), synthetic: s.clone() })
        .collect();
    write_atomic(path, overlay_ndjson(&pairs)?.as_bytes())
}

pub fn parse_overlay(text: &str) -> Result<Vec<OverlayPair>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Argument(format!("overlay line {}: {e}", i + 1))))
        .collect()
}

/// A table with a header row; rendered as CSV or aligned Markdown.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory");
        for r in &self.rows {
            w.write_record(r).expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8 input")
    }

    pub fn to_markdown(&self) -> String {
        let cols = self.header.len();
        let width: Vec<usize> = (0..cols)
            .map(|c| {
                std::iter::once(&self.header[c])
                    .chain(self.rows.iter().map(|r| &r[c]))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
                    .max(3)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&width)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = line(&self.header);
        let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&line(&rule));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}
