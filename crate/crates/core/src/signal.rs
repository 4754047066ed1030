//! Raw accelerometer recordings, windowing, subject splits, and the seeded
//! synthetic activity corpus used for desk-scale runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub timestamp: f64,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub subject_id: String,
    /// Hz; estimated from timestamps when loaded from CSV.
    pub sample_rate: f64,
    pub samples: Vec<Sample>,
    /// One activity id per sample.
    pub labels: Vec<u32>,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn norm_series(&self) -> Vec<f32> {
        self.samples.iter().map(|s| euclid_norm(s.x, s.y, s.z)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One fixed-length segment of the norm signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub values: Vec<f32>,
    pub label: Option<u32>,
    pub subject_id: String,
    /// Stable identity derived from subject and position.
    pub id: u64,
    /// Provenance tag set by [`subject_split`].
    pub split: Option<Split>,
}

impl Window {
    pub fn new(values: Vec<f32>, label: Option<u32>, subject_id: impl Into<String>) -> Self {
        let subject_id = subject_id.into();
        let id = window_id(&subject_id, u64::MAX);
        Self { values, label, subject_id, id, split: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn window_id(subject: &str, start: u64) -> u64 {
    let h = subject
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    rng::child_seed(h, "window", start)
}

pub fn euclid_norm(x: f32, y: f32, z: f32) -> f32 {
    ((x as f64).powi(2) + (y as f64).powi(2) + (z as f64).powi(2)).sqrt() as f32
}

/// Most frequent label; ties go to the smallest id.
pub fn majority_label(labels: &[u32]) -> Option<u32> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates ascending, so `>` keeps the smallest id on ties.
    let mut best: Option<(u32, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((l, c));
        }
    }
    best.map(|(l, _)| l)
}

/// Slice the recording's norm signal into windows of `width` every `stride` samples.
pub fn segment_windows(recording: &RawRecording, width: usize, stride: usize) -> Result<Vec<Window>> {
    if width == 0 || stride == 0 {
        return Err(Error::Argument(format!("window width {width} and stride {stride} must be positive")));
    }
    let n = recording.len();
    if n < width {
        return Ok(Vec::new());
    }
    let norm = recording.norm_series();
    let count = (n - width) / stride + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * stride;
            let label = majority_label(&recording.labels[start..start + width]);
            Window {
                values: norm[start..start + width].to_vec(),
                label,
                subject_id: recording.subject_id.clone(),
                id: window_id(&recording.subject_id, start as u64),
                split: None,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub labeled_fraction: f64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "labeled fraction {} must lie in (0, 1]",
                self.labeled_fraction
            )));
        }
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for (split, list) in [
            (Split::Train, &self.train_subjects),
            (Split::Val, &self.val_subjects),
            (Split::Test, &self.test_subjects),
        ] {
            for s in list {
                if let Some(prev) = seen.insert(s, split) {
                    return Err(crate::error::ConfigError::Invalid(format!(
                        "subject `{s}` assigned to both {prev} and {split}"
                    ))
                    .into());
                }
            }
        }
        Ok(())
    }

    fn split_of(&self, subject: &str) -> Option<Split> {
        if self.train_subjects.iter().any(|s| s == subject) {
            Some(Split::Train)
        } else if self.val_subjects.iter().any(|s| s == subject) {
            Some(Split::Val)
        } else if self.test_subjects.iter().any(|s| s == subject) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Windows partitioned by subject, plus the labeled subset of train.
#[derive(Clone, Debug, Default)]
pub struct SplitSets {
    pub train: Vec<Window>,
    /// Subset of `train` the classifier may use labels from.
    pub labeled: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

impl SplitSets {
    /// Subjects appearing in more than one partition (always empty for sets
    /// built by [`subject_split`]).
    pub fn leaked_subjects(&self) -> Vec<String> {
        let subjects = |ws: &[Window]| ws.iter().map(|w| w.subject_id.clone()).collect::<BTreeSet<_>>();
        let (tr, va, te) = (subjects(&self.train), subjects(&self.val), subjects(&self.test));
        tr.intersection(&va)
            .chain(tr.intersection(&te))
            .chain(va.intersection(&te))
            .cloned()
            .collect()
    }
}

/// Partition by subject and draw the seeded, class-stratified labeled subset.
pub fn subject_split(windows: &[Window], spec: &SplitSpec, seed: u64) -> Result<SplitSets> {
    spec.validate()?;
    let mut sets = SplitSets::default();
    for w in windows {
        let split = spec.split_of(&w.subject_id).ok_or_else(|| {
            crate::error::ConfigError::Invalid(format!("subject `{}` is not assigned to any split", w.subject_id))
        })?;
        let mut w = w.clone();
        w.split = Some(split);
        match split {
            Split::Train => sets.train.push(w),
            Split::Val => sets.val.push(w),
            Split::Test => sets.test.push(w),
        }
    }
    let picked = stratified_subset(&sets.train, spec.labeled_fraction, seed);
    sets.labeled = picked.into_iter().map(|i| sets.train[i].clone()).collect();
    Ok(sets)
}

/// Indices of a class-stratified subset holding `round(fraction * n)` labeled
/// windows; per-class quotas use largest remainders (ties to smaller ids).
pub fn stratified_subset(windows: &[Window], fraction: f64, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        if let Some(l) = w.label {
            by_class.entry(l).or_default().push(i);
        }
    }
    let n: usize = by_class.values().map(Vec::len).sum();
    if fraction >= 1.0 {
        let mut all: Vec<usize> = by_class.into_values().flatten().collect();
        all.sort_unstable();
        return all;
    }
    let total = ((fraction * n as f64).round() as usize).min(n);
    let mut quotas: Vec<(u32, usize, f64)> = by_class
        .iter()
        .map(|(&c, idx)| {
            let exact = fraction * idx.len() as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = total.saturating_sub(quotas.iter().map(|q| q.1).sum());
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    for &i in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[i].1 < by_class[&quotas[i].0].len() {
            quotas[i].1 += 1;
            remaining -= 1;
        }
    }
    let mut chosen = Vec::with_capacity(total);
    for (class, quota, _) in quotas {
        let idx = &by_class[&class];
        let perm = rng::permutation(&mut rng::stream(seed, "labeled-subset", class as u64), idx.len());
        chosen.extend(perm.into_iter().take(quota).map(|p| idx[p]));
    }
    chosen.sort_unstable();
    chosen
}

pub const CSV_HEADER: [&str; 6] = ["subject", "timestamp", "x", "y", "z", "label"];

/// Load one recording from the `subject,timestamp,x,y,z,label` CSV schema.
pub fn load_csv_recording(path: &Path) -> Result<RawRecording> {
    let data_err = |e: DataError| Error::Data(e);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| {
            data_err(DataError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            })
        })?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(DataError::Parse { path: path.into(), line: 1, detail: e.to_string() }))?
        .clone();
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(DataError::MissingColumn { path: path.into(), column: name }))?;
    }

    let mut rec = RawRecording {
        subject_id: String::new(),
        sample_rate: 0.0,
        samples: Vec::new(),
        labels: Vec::new(),
    };
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(DataError::Parse { path: path.into(), line, detail: e.to_string() })
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |detail: String| data_err(DataError::Parse { path: path.into(), line, detail });
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let float = |i: usize| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| parse_err(format!("column `{}`: cannot parse `{}`", CSV_HEADER[i], field(i))))?;
            if !v.is_finite() {
                return Err(parse_err(format!("column `{}`: non-finite value", CSV_HEADER[i])));
            }
            Ok(v)
        };
        let subject = field(0);
        if rec.samples.is_empty() {
            rec.subject_id = subject.to_string();
        } else if subject != rec.subject_id {
            return Err(parse_err(format!(
                "subject `{subject}` differs from `{}`; one recording per file",
                rec.subject_id
            )));
        }
        let timestamp = float(1)?;
        let (x, y, z) = (float(2)?, float(3)?, float(4)?);
        let label: u32 = field(5)
            .parse()
            .map_err(|_| parse_err(format!("column `label`: expected integer >= 0, got `{}`", field(5))))?;
        if let Some(prev) = rec.samples.last() {
            if timestamp < prev.timestamp {
                return Err(data_err(DataError::NonMonotone { path: path.into(), line, value: timestamp }));
            }
        }
        rec.samples.push(Sample { timestamp, x: x as f32, y: y as f32, z: z as f32 });
        rec.labels.push(label);
    }
    if rec.samples.is_empty() {
        return Err(data_err(DataError::Empty { path: path.into() }));
    }
    rec.sample_rate = estimate_rate(&rec.samples);
    Ok(rec)
}

fn estimate_rate(samples: &[Sample]) -> f64 {
    let mut dts: Vec<f64> = samples
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .filter(|d| *d > 0.0)
        .collect();
    if dts.is_empty() {
        return 0.0;
    }
    dts.sort_by(f64::total_cmp);
    1.0 / dts[dts.len() / 2]
}

pub fn recording_to_csv(rec: &RawRecording) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for (s, l) in rec.samples.iter().zip(&rec.labels) {
        out.push_str(&format!("{},{},{},{},{},{}\n", rec.subject_id, s.timestamp, s.x, s.y, s.z, l));
    }
    out
}

/// Load every `*.csv` in `dir` (sorted by file name).
pub fn load_csv_dir(dir: &Path) -> Result<Vec<RawRecording>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(DataError::Io { path: dir.into(), source: e }))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(DataError::Invalid(format!("{}: no .csv recordings found", dir.display())).into());
    }
    paths.iter().map(|p| load_csv_recording(p)).collect()
}

/// Waveform parameters of one synthetic activity class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWave {
    pub freq: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_subjects: usize,
    pub windows_per_class_per_subject: usize,
    pub window: usize,
    pub sample_rate: f64,
    pub classes: Vec<ClassWave>,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    /// Three classes, four subjects, 200-sample windows at 50 Hz.
    pub fn desk_default() -> Self {
        Self {
            n_subjects: 4,
            windows_per_class_per_subject: 16,
            window: 200,
            sample_rate: 50.0,
            classes: vec![
                ClassWave { freq: 1.0, amplitude: 0.30, offset: 1.00, noise: 0.25 },
                ClassWave { freq: 1.6, amplitude: 0.35, offset: 1.05, noise: 0.25 },
                ClassWave { freq: 2.2, amplitude: 0.40, offset: 1.00, noise: 0.25 },
            ],
            seed: 7,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn subject_ids(&self) -> Vec<String> {
        (0..self.n_subjects).map(|s| format!("s{:02}", s + 1)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.n_subjects == 0 || self.window == 0 || self.windows_per_class_per_subject == 0 {
            return Err(Error::Argument("synthetic corpus needs classes, subjects, and windows".into()));
        }
        if self.sample_rate.is_nan() || self.sample_rate <= 0.0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        for (i, a) in self.classes.iter().enumerate() {
            if a.noise.is_nan() || a.noise < 0.0 || ![a.freq, a.amplitude, a.offset].iter().all(|v| v.is_finite()) {
                return Err(Error::Argument(format!("class {i}: invalid waveform parameters")));
            }
            for b in &self.classes[i + 1..] {
                if a.freq == b.freq && a.amplitude == b.amplitude {
                    return Err(Error::Argument(format!(
                        "classes share (frequency, amplitude) = ({}, {})",
                        a.freq, a.amplitude
                    )));
                }
            }
        }
        Ok(())
    }

    /// Samples per subject recording.
    pub fn samples_per_subject(&self) -> usize {
        self.classes.len() * self.windows_per_class_per_subject * self.window
    }
}

/// Deterministic corpus: per subject, one contiguous block per class of
/// `offset + amplitude * sin(2 pi f t + phase(subject)) + noise`, spread over
/// a subject-specific unit axis so the norm recovers the waveform.
pub fn make_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<RawRecording>> {
    spec.validate()?;
    let block = spec.windows_per_class_per_subject * spec.window;
    spec.subject_ids()
        .into_iter()
        .enumerate()
        .map(|(s, subject_id)| {
            let mut rng = rng::stream(spec.seed, "synthetic-corpus", s as u64);
            let phase = std::f64::consts::TAU * (s as f64 * 0.618_033_988_75).fract();
            let axis = {
                let v: [f64; 3] = [rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            };
            let mut samples = Vec::with_capacity(spec.samples_per_subject());
            let mut labels = Vec::with_capacity(spec.samples_per_subject());
            for (c, wave) in spec.classes.iter().enumerate() {
                let noise = Normal::new(0.0, wave.noise).map_err(|e| Error::Argument(e.to_string()))?;
                for _ in 0..block {
                    let i = samples.len();
                    let t = i as f64 / spec.sample_rate;
                    let v = wave.offset
                        + wave.amplitude * (std::f64::consts::TAU * wave.freq * t + phase).sin()
                        + noise.sample(&mut rng);
                    samples.push(Sample {
                        timestamp: t,
                        x: (v * axis[0]) as f32,
                        y: (v * axis[1]) as f32,
                        z: (v * axis[2]) as f32,
                    });
                    labels.push(c as u32);
                }
            }
            Ok(RawRecording { subject_id, sample_rate: spec.sample_rate, samples, labels })
        })
        .collect()
}

/// Window every recording.
pub fn window_all(recordings: &[RawRecording], width: usize, stride: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for r in recordings {
        out.extend(segment_windows(r, width, stride)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: usize, labels: impl Fn(usize) -> u32) -> RawRecording {
        RawRecording {
            subject_id: "a".into(),
            sample_rate: 1.0,
            samples: (0..n).map(|i| Sample { timestamp: i as f64, x: i as f32, y: 0.0, z: 0.0 }).collect(),
            labels: (0..n).map(labels).collect(),
        }
    }

    #[test]
    fn norms() {
        assert_eq!(euclid_norm(3.0, 4.0, 0.0), 5.0);
        assert_eq!(euclid_norm(0.0, 0.0, 0.0), 0.0);
        assert_eq!(euclid_norm(1.0, 2.0, 2.0), 3.0);
    }

    #[test]
    fn window_counts_follow_floor_arithmetic() {
        let r = rec(1000, |_| 0);
        assert_eq!(segment_windows(&r, 400, 400).unwrap().len(), 2);
        assert_eq!(segment_windows(&r, 400, 200).unwrap().len(), 4);
        assert!(segment_windows(&rec(399, |_| 0), 400, 400).unwrap().is_empty());
    }

    #[test]
    fn windows_are_exact_slices_of_the_norm_series() {
        let r = rec(37, |i| (i / 10) as u32);
        let norm = r.norm_series();
        for (i, w) in segment_windows(&r, 8, 3).unwrap().iter().enumerate() {
            for (j, &v) in w.values.iter().enumerate() {
                assert_eq!(v, norm[i * 3 + j]);
            }
        }
    }

    #[test]
    fn majority_with_ties_to_smallest_id() {
        assert_eq!(majority_label(&[4, 4, 9]), Some(4));
        assert_eq!(majority_label(&[9, 4]), Some(4));
        assert_eq!(majority_label(&[9, 9, 9]), Some(9));
        assert_eq!(majority_label(&[]), None);
    }

    fn labeled(n: usize, classes: u32) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let mut w = Window::new(vec![i as f32; 4], Some(i as u32 % classes), format!("s{}", i % 3));
                w.id = i as u64;
                w
            })
            .collect()
    }

    #[test]
    fn split_by_subject_and_full_fraction() {
        let ws = labeled(30, 3);
        let spec = SplitSpec {
            train_subjects: vec!["s0".into()],
            val_subjects: vec!["s1".into()],
            test_subjects: vec!["s2".into()],
            labeled_fraction: 1.0,
        };
        let sets = subject_split(&ws, &spec, 0).unwrap();
        assert!(sets.train.iter().all(|w| w.subject_id == "s0" && w.split == Some(Split::Train)));
        assert!(sets.val.iter().all(|w| w.subject_id == "s1"));
        assert!(sets.test.iter().all(|w| w.subject_id == "s2"));
        assert_eq!(sets.labeled, sets.train);
        assert!(sets.leaked_subjects().is_empty());
    }

    #[test]
    fn overlapping_subjects_rejected() {
        let spec = SplitSpec {
            train_subjects: vec!["s0".into()],
            val_subjects: vec!["s0".into()],
            test_subjects: vec![],
            labeled_fraction: 0.5,
        };
        assert!(matches!(subject_split(&labeled(3, 1), &spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn stratified_fraction_counts() {
        // 100 windows over 3 classes: 34 / 33 / 33.
        let ws = labeled(100, 3);
        for seed in 0..5 {
            let idx = stratified_subset(&ws, 0.2, seed);
            assert_eq!(idx.len(), 20);
            for c in 0..3u32 {
                let have = idx.iter().filter(|&&i| ws[i].label == Some(c)).count() as f64;
                let total = ws.iter().filter(|w| w.label == Some(c)).count() as f64;
                assert!((have - 0.2 * total).abs() <= 1.0, "class {c}: {have}");
            }
        }
        assert_ne!(stratified_subset(&ws, 0.2, 0), stratified_subset(&ws, 0.2, 1));
        assert_eq!(stratified_subset(&ws, 0.2, 3), stratified_subset(&ws, 0.2, 3));
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_windows_add_up() {
        let spec = SyntheticCorpusSpec {
            n_subjects: 2,
            windows_per_class_per_subject: 10,
            window: 20,
            sample_rate: 20.0,
            classes: vec![
                ClassWave { freq: 1.0, amplitude: 0.2, offset: 1.0, noise: 0.05 },
                ClassWave { freq: 2.0, amplitude: 0.3, offset: 2.0, noise: 0.05 },
                ClassWave { freq: 3.0, amplitude: 0.4, offset: 3.0, noise: 0.05 },
            ],
            seed: 7,
        };
        let a = make_synthetic_corpus(&spec).unwrap();
        assert_eq!(a, make_synthetic_corpus(&spec).unwrap());
        let ws = window_all(&a, 20, 20).unwrap();
        // 3 classes x 2 subjects x 10 windows, each block a whole number of windows.
        assert_eq!(ws.len(), 60);
        for c in 0..3u32 {
            assert_eq!(ws.iter().filter(|w| w.label == Some(c)).count(), 20);
        }
    }

    #[test]
    fn class_means_concentrate_on_offsets() {
        // Each block spans whole periods (f * block / rate is an integer), so
        // the sine term sums to zero and only noise moves the mean.
        let spec = SyntheticCorpusSpec {
            n_subjects: 1,
            windows_per_class_per_subject: 50,
            window: 20,
            sample_rate: 20.0,
            classes: vec![
                ClassWave { freq: 1.0, amplitude: 0.2, offset: 1.0, noise: 0.1 },
                ClassWave { freq: 2.0, amplitude: 0.3, offset: 1.5, noise: 0.1 },
            ],
            seed: 11,
        };
        let r = &make_synthetic_corpus(&spec).unwrap()[0];
        let norm = r.norm_series();
        let block = 50 * 20;
        for (c, wave) in spec.classes.iter().enumerate() {
            let seg = &norm[c * block..(c + 1) * block];
            let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / block as f64;
            assert!((mean - wave.offset).abs() < 3.0 * wave.noise / (block as f64).sqrt(), "class {c}: {mean}");
        }
    }

    #[test]
    fn duplicate_class_waves_rejected() {
        let mut spec = SyntheticCorpusSpec::desk_default();
        spec.classes[1].freq = spec.classes[0].freq;
        spec.classes[1].amplitude = spec.classes[0].amplitude;
        assert!(spec.validate().is_err());
    }
}
