//! Dataset generation: non-overlapping windows of `bpf` peaks per record,
//! chronological train/test assignment per subject, and the on-disk layout
//! `<root>/{train,test}/<subject>/ekm_<index>.png` plus `manifest.csv`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::render::{render_heatmap, EkmImage, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use super::{build_ekm, standardize, EkmError, EkmParams};
use crate::sigproc::{condition, ConditionedEcg, PanTompkins, RPeakList, SigprocError};
use crate::wfdb::EcgRecord;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationConfig {
    /// Maximum EKMs per subject; `None` exhausts the signal.
    pub cap_per_subject: Option<usize>,
    pub out_h: usize,
    pub out_w: usize,
    /// Leading fraction of each subject's EKM stream assigned to training.
    pub train_fraction: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            cap_per_subject: None,
            out_h: DEFAULT_HEIGHT,
            out_w: DEFAULT_WIDTH,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = EkmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(EkmError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// Number of leading EKMs that go to training when a subject has `n`.
/// At least one EKM stays on each side whenever `n >= 2`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
}

/// A record after detection and conditioning.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub subject_id: String,
    pub source: String,
    pub ecg: ConditionedEcg,
    pub peaks: RPeakList,
}

pub fn prepare_record(record: &EcgRecord, detector: &PanTompkins) -> Result<PreparedRecord, SigprocError> {
    let (ecg, peaks) = condition(record, detector)?;
    Ok(PreparedRecord {
        subject_id: record.subject_id.clone(),
        source: record.source.clone(),
        ecg,
        peaks,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratedEkm {
    pub subject_id: String,
    /// Chronological position within the subject's EKM stream.
    pub index: usize,
    pub split: Split,
    pub window_start_peak: usize,
    pub mu: f64,
    pub image: EkmImage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubjectStats {
    pub subject_id: String,
    pub ekms: usize,
    pub train: usize,
    pub test: usize,
    pub skipped_out_of_bounds: usize,
    pub skipped_constant: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub params: EkmParams,
    pub ekms: Vec<GeneratedEkm>,
    /// One entry per subject in first-appearance order, including subjects
    /// that produced nothing.
    pub stats: Vec<SubjectStats>,
}

impl GeneratedDataset {
    pub fn zero_yield_subjects(&self) -> Vec<&str> {
        self.stats
            .iter()
            .filter(|s| s.ekms == 0)
            .map(|s| s.subject_id.as_str())
            .collect()
    }
}

struct RecordYield {
    items: Vec<(usize, EkmImage)>,
    out_of_bounds: usize,
    constant: usize,
}

fn record_ekms(rec: &PreparedRecord, params: &EkmParams, cfg: &GenerationConfig) -> Result<RecordYield, EkmError> {
    let mut y = RecordYield {
        items: Vec::new(),
        out_of_bounds: 0,
        constant: 0,
    };
    let mut start = 0;
    while start + params.bpf <= rec.peaks.len() {
        if cfg.cap_per_subject.is_some_and(|cap| y.items.len() >= cap) {
            break;
        }
        match build_ekm(&rec.ecg, &rec.peaks, start, params, &rec.subject_id) {
            Ok(m) => match standardize(&m) {
                Ok(s) => y.items.push((start, render_heatmap(&s, cfg.out_h, cfg.out_w)?)),
                Err(EkmError::ConstantMatrix) => y.constant += 1,
                Err(e) => return Err(e),
            },
            Err(EkmError::WindowOutOfBounds { .. }) => y.out_of_bounds += 1,
            Err(e) => return Err(e),
        }
        start += params.bpf;
    }
    Ok(y)
}

/// Generate all EKM images for the given records. Records are processed in
/// parallel; output order is deterministic (subject first-appearance order,
/// then record order, then window order).
pub fn generate_ekms(
    records: &[PreparedRecord],
    params: &EkmParams,
    cfg: &GenerationConfig,
) -> Result<GeneratedDataset, EkmError> {
    params.validate()?;
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(EkmError::InvalidParams(format!(
            "train fraction must lie in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let yields = records
        .par_iter()
        .map(|r| record_ekms(r, params, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<&str> = Vec::new();
    let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        by_subject
            .entry(r.subject_id.as_str())
            .or_insert_with(|| {
                order.push(r.subject_id.as_str());
                Vec::new()
            })
            .push(i);
    }

    let mut ekms = Vec::new();
    let mut stats = Vec::new();
    for subject in order {
        let mut st = SubjectStats {
            subject_id: subject.to_string(),
            ..Default::default()
        };
        let mut stream: Vec<(usize, f64, EkmImage)> = Vec::new();
        for &ri in &by_subject[subject] {
            let y = &yields[ri];
            st.skipped_out_of_bounds += y.out_of_bounds;
            st.skipped_constant += y.constant;
            let mu = records[ri].ecg.mu;
            stream.extend(y.items.iter().map(|(w, img)| (*w, mu, img.clone())));
        }
        if let Some(cap) = cfg.cap_per_subject {
            stream.truncate(cap);
        }
        let n_train = train_count(stream.len(), cfg.train_fraction);
        st.ekms = stream.len();
        st.train = n_train;
        st.test = stream.len() - n_train;
        for (index, (window_start_peak, mu, image)) in stream.into_iter().enumerate() {
            ekms.push(GeneratedEkm {
                subject_id: subject.to_string(),
                index,
                split: if index < n_train { Split::Train } else { Split::Test },
                window_start_peak,
                mu,
                image,
            });
        }
        stats.push(st);
    }
    Ok(GeneratedDataset {
        params: *params,
        ekms,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub split: Split,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub window_start_peak: usize,
    pub bpf: usize,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Subject ids in first-appearance order; this is the class vocabulary.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for e in &self.entries {
            if !seen.iter().any(|s| s == &e.subject_id) {
                seen.push(e.subject_id.clone());
            }
        }
        seen
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EkmError + '_ {
    move |source| EkmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(e: csv::Error) -> EkmError {
    EkmError::Manifest(e.to_string())
}

/// Write images, `manifest.csv` and the run configuration under `root`.
pub fn write_dataset(root: &Path, data: &GeneratedDataset, run_config: &str) -> Result<DatasetManifest, EkmError> {
    let mut entries = Vec::with_capacity(data.ekms.len());
    for e in &data.ekms {
        let rel = format!("{}/{}/ekm_{}.png", e.split, e.subject_id, e.index);
        let path = root.join(&rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        entries.push(ManifestEntry {
            subject_id: e.subject_id.clone(),
            split: e.split,
            path: rel,
            window_start_peak: e.window_start_peak,
            bpf: data.params.bpf,
            mu: e.mu,
        });
    }
    data.ekms
        .par_iter()
        .zip(entries.par_iter())
        .try_for_each(|(e, m)| e.image.write_png(&root.join(&m.path)))?;

    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        entries,
    };
    write_manifest(&manifest)?;
    let cfg_path = root.join(RUN_CONFIG_FILE);
    fs::write(&cfg_path, run_config).map_err(io_err(&cfg_path))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest) -> Result<(), EkmError> {
    let path = manifest.root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["subject_id", "split", "path", "window_start_peak", "bpf", "mu"])
        .map_err(csv_err)?;
    for e in &manifest.entries {
        w.write_record([
            e.subject_id.clone(),
            e.split.to_string(),
            e.path.clone(),
            e.window_start_peak.to_string(),
            e.bpf.to_string(),
            format!("{}", e.mu),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest, EkmError> {
    let path = root.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    let mut entries = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| EkmError::Manifest(format!("row {}: missing column {i}", line + 2)))
        };
        let num = |i: usize| -> Result<usize, EkmError> {
            field(i)?
                .parse()
                .map_err(|_| EkmError::Manifest(format!("row {}: bad integer in column {i}", line + 2)))
        };
        entries.push(ManifestEntry {
            subject_id: field(0)?.to_string(),
            split: field(1)?.parse()?,
            path: field(2)?.to_string(),
            window_start_peak: num(3)?,
            bpf: num(4)?,
            mu: field(5)?
                .parse()
                .map_err(|_| EkmError::Manifest(format!("row {}: bad mu", line + 2)))?,
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prepared(subject: &str, n_peaks: usize) -> PreparedRecord {
        let mu = 100.0;
        let n = (n_peaks + 2) * 100;
        let norm_samples = (0..n).map(|i| (i % 100) as f64 / 99.0).collect();
        PreparedRecord {
            subject_id: subject.into(),
            source: subject.into(),
            ecg: ConditionedEcg { norm_samples, fs: 100.0, mu },
            peaks: RPeakList {
                indices: (1..=n_peaks).map(|k| k * 100 + 30).collect(),
                fs: 100.0,
            },
        }
    }

    #[test]
    fn thirty_five_peaks_give_eleven_windows() {
        let data = generate_ekms(&[prepared("a", 35)], &EkmParams::default(), &GenerationConfig::default()).unwrap();
        assert_eq!(data.ekms.len(), 11);
        let starts: Vec<usize> = data.ekms.iter().map(|e| e.window_start_peak).collect();
        assert_eq!(starts, (0..11).map(|k| 3 * k).collect::<Vec<_>>());
    }

    #[test]
    fn cap_limits_subject_stream_and_split_is_chronological() {
        let cfg = GenerationConfig {
            cap_per_subject: Some(10),
            ..Default::default()
        };
        let recs = [prepared("a", 20), prepared("a", 20), prepared("b", 60)];
        let data = generate_ekms(&recs, &EkmParams::default(), &cfg).unwrap();
        assert_eq!(data.stats.len(), 2);
        for st in &data.stats {
            assert_eq!((st.ekms, st.train, st.test), (10, 8, 2));
        }
        let a: Vec<_> = data.ekms.iter().filter(|e| e.subject_id == "a").collect();
        assert!(a[..8].iter().all(|e| e.split == Split::Train));
        assert!(a[8..].iter().all(|e| e.split == Split::Test));
        // second record of "a" continues the stream
        assert_eq!(a[6].window_start_peak, 0);
    }

    #[test]
    fn out_of_bounds_windows_are_counted() {
        let mut rec = prepared("a", 9);
        rec.peaks.indices[0] = 5;
        let data = generate_ekms(&[rec], &EkmParams::default(), &GenerationConfig::default()).unwrap();
        assert_eq!(data.ekms.len(), 2);
        assert_eq!(data.stats[0].skipped_out_of_bounds, 1);
    }

    #[test]
    fn zero_yield_subjects_are_reported() {
        let data = generate_ekms(&[prepared("a", 2), prepared("b", 6)], &EkmParams::default(), &GenerationConfig::default())
            .unwrap();
        assert_eq!(data.zero_yield_subjects(), vec!["a"]);
    }

    #[test]
    fn windows_are_disjoint_and_consecutive() {
        let data = generate_ekms(&[prepared("a", 50)], &EkmParams::new(5, 0.2, 0.3).unwrap(), &GenerationConfig::default())
            .unwrap();
        for w in data.ekms.windows(2) {
            assert_eq!(w[1].window_start_peak, w[0].window_start_peak + 5);
        }
    }

    #[test]
    fn train_count_rule() {
        assert_eq!(train_count(100, 0.8), 80);
        assert_eq!(train_count(3000, 0.8), 2400);
        assert_eq!(train_count(300, 0.9), 270);
        assert_eq!(train_count(2, 0.9), 1);
        assert_eq!(train_count(1, 0.8), 1);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_ekms(&[prepared("a", 30), prepared("b", 30)], &EkmParams::default(), &GenerationConfig::default())
            .unwrap();
        let written = write_dataset(dir.path(), &data, "seed=1\n").unwrap();
        let read = read_manifest(dir.path()).unwrap();
        assert_eq!(written, read);
        assert_eq!(read.subjects(), vec!["a", "b"]);
        assert_eq!(read.entries[0].path, "train/a/ekm_0.png");
        assert!(dir.path().join("test/b/ekm_9.png").exists());
        let img = EkmImage::read_png(&read.image_path(&read.entries[3]), "a").unwrap();
        assert_eq!((img.height, img.width), (25, 37));
    }
}
