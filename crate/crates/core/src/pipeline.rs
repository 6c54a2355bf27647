//! End-to-end flows: records to dataset, dataset to model, model to report.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cnn::{evaluate_set, init_model, save_model, train_epochs, EpochRecord, Model, ModelConfig};
use crate::config::{ConfigError, DatabaseKind, RunConfig};
use crate::dataset::synth::{synth_ecg, SynthSubjectParams};
use crate::dataset::{split_dataset, LabelVocab, SampleSet, DEFAULT_CACHE_BUDGET};
use crate::ekm::{
    generate_ekms, prepare_record, read_manifest, write_dataset, DatasetManifest, GeneratedDataset, PreparedRecord,
    Split, SubjectStats,
};
use crate::eval::{evaluate_scores, EvalReport, ReportRow};
use crate::sigproc::PanTompkins;
use crate::wfdb::{self, EcgRecord, LoadOptions, PlaintextOptions};
use crate::Error;

/// Records named by the configuration, one per subject for WFDB input.
pub fn load_records(cfg: &RunConfig) -> Result<Vec<EcgRecord>, Error> {
    match cfg.database {
        DatabaseKind::Synthetic => Ok(synthetic_records(cfg)?.into_iter().map(|(r, _)| r).collect()),
        DatabaseKind::Wfdb => {
            let dir = required_input(cfg)?;
            let headers = wfdb::find_headers(dir)?;
            let metas = headers
                .iter()
                .map(|h| wfdb::read_header(h))
                .collect::<Result<Vec<_>, _>>()?;
            let kept = if cfg.pathology.is_empty() {
                wfdb::one_record_per_subject(&metas)
            } else {
                let allow: Vec<&str> = cfg.pathology.iter().map(String::as_str).collect();
                wfdb::filter_subjects_by_pathology(&metas, &allow)
            };
            let opts = LoadOptions {
                verify_checksum: cfg.verify_checksum,
            };
            let chosen: Vec<&PathBuf> = headers
                .iter()
                .zip(&metas)
                .filter(|(_, m)| kept.iter().any(|k| k.subject_id == m.subject_id && k.record_name == m.record_name))
                .map(|(h, _)| h)
                .collect();
            chosen
                .par_iter()
                .map(|h| wfdb::load_record(h, cfg.channel, opts).map_err(Error::from))
                .collect()
        }
        DatabaseKind::Plaintext => {
            let input = required_input(cfg)?;
            let opts = PlaintextOptions {
                column: cfg.plaintext_column,
            };
            let files = if input.is_dir() {
                let mut v: Vec<PathBuf> = fs::read_dir(input)
                    .map_err(|source| Error::Io {
                        path: input.to_path_buf(),
                        source,
                    })?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                v.sort();
                v
            } else {
                vec![input.to_path_buf()]
            };
            files
                .iter()
                .map(|f| wfdb::load_plaintext_with(f, cfg.fs, opts).map_err(Error::from))
                .collect()
        }
    }
}

fn required_input(cfg: &RunConfig) -> Result<&Path, Error> {
    cfg.input
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid(format!("{} database needs an input path", cfg.database)).into())
}

/// Synthetic subjects `synth_00, synth_01, ...` with random morphology and
/// a heart rate in 60..100 bpm, all derived from the run seed.
pub fn synthetic_records(cfg: &RunConfig) -> Result<Vec<(EcgRecord, crate::sigproc::RPeakList)>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let plans: Vec<(String, u64, f64, u64)> = (0..cfg.synth_subjects)
        .map(|i| (format!("synth_{i:02}"), rng.random(), rng.random_range(60.0..100.0), rng.random()))
        .collect();
    plans
        .into_par_iter()
        .map(|(id, subject_seed, hr, signal_seed)| {
            let params = SynthSubjectParams::random_subject(subject_seed, hr);
            synth_ecg(&params, cfg.fs, cfg.synth_duration, signal_seed, &id).map_err(Error::from)
        })
        .collect()
}

/// A record that could not be conditioned, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRecord {
    pub source: String,
    pub reason: String,
}

pub struct Generated {
    pub data: GeneratedDataset,
    pub skipped: Vec<SkippedRecord>,
}

/// Detect, condition and render every record in memory.
pub fn generate(cfg: &RunConfig) -> Result<Generated, Error> {
    cfg.validate()?;
    let records = load_records(cfg)?;
    let detector = PanTompkins::default();
    let prepared: Vec<Result<PreparedRecord, SkippedRecord>> = records
        .par_iter()
        .map(|r| {
            prepare_record(r, &detector).map_err(|e| SkippedRecord {
                source: r.source.clone(),
                reason: e.to_string(),
            })
        })
        .collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for p in prepared {
        match p {
            Ok(r) => ok.push(r),
            Err(s) => {
                log::warn!("skipping {}: {}", s.source, s.reason);
                skipped.push(s);
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Data("no usable records".into()));
    }
    let data = generate_ekms(&ok, &cfg.ekm, &cfg.generation)?;
    Ok(Generated { data, skipped })
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub manifest: DatasetManifest,
    pub stats: Vec<SubjectStats>,
    pub skipped: Vec<SkippedRecord>,
}

/// Generate and write a dataset under `out`. The directory must be absent
/// or empty; it is removed again if the build fails.
pub fn build_dataset(cfg: &RunConfig, out: &Path) -> Result<BuildSummary, Error> {
    cfg.validate()?;
    let existed = out.exists();
    if existed {
        let empty = fs::read_dir(out)
            .map_err(|source| Error::Io {
                path: out.to_path_buf(),
                source,
            })?
            .next()
            .is_none();
        if !empty {
            return Err(ConfigError::Invalid(format!("output directory {} is not empty", out.display())).into());
        }
    }
    let result = (|| {
        let g = generate(cfg)?;
        for s in g.data.zero_yield_subjects() {
            log::warn!("subject {s} produced no EKMs");
        }
        let manifest = write_dataset(out, &g.data, &cfg.to_text())?;
        Ok(BuildSummary {
            manifest,
            stats: g.data.stats,
            skipped: g.skipped,
        })
    })();
    if result.is_err() && out.exists() {
        if existed {
            let _ = fs::read_dir(out).map(|it| {
                for e in it.flatten() {
                    let p = e.path();
                    let _ = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
                }
            });
        } else {
            let _ = fs::remove_dir_all(out);
        }
    }
    result
}

/// The configuration a dataset was built with.
pub fn dataset_config(dataset: &Path) -> Result<RunConfig, Error> {
    let path = dataset.join(crate::ekm::generate::RUN_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
    Ok(RunConfig::from_text(&text)?)
}

pub struct DatasetSets {
    pub vocab: LabelVocab,
    pub train: SampleSet,
    pub validation: SampleSet,
}

pub fn load_training_sets(cfg: &RunConfig, dataset: &Path) -> Result<DatasetSets, Error> {
    let manifest = read_manifest(dataset)?;
    let vocab = LabelVocab::from_manifest(&manifest);
    let splits = split_dataset(&manifest, &cfg.split)?;
    let (h, w) = (cfg.generation.out_h, cfg.generation.out_w);
    let train = SampleSet::from_entries(&manifest, &splits.train, &vocab, h, w, DEFAULT_CACHE_BUDGET)?;
    let validation = SampleSet::from_entries(&manifest, &splits.validation, &vocab, h, w, DEFAULT_CACHE_BUDGET)?;
    Ok(DatasetSets {
        vocab,
        train,
        validation,
    })
}

pub fn new_model(cfg: &RunConfig, vocab: &LabelVocab) -> Result<Model<f32>, Error> {
    let mut mc = ModelConfig::new(vocab.len());
    mc.input_h = cfg.generation.out_h;
    mc.input_w = cfg.generation.out_w;
    mc.dropout = cfg.dropout;
    let mut model = init_model(&mc, cfg.seed())?;
    model.vocab = vocab.names().to_vec();
    for (k, v) in cfg.pairs() {
        model.set_metadata(&k, v);
    }
    Ok(model)
}

/// Train on a dataset, calling `checkpoint` after each epoch listed in
/// `checkpoints` (sorted ascending; the last entry is the total).
pub fn train_with_checkpoints(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoints: &[usize],
    mut checkpoint: impl FnMut(usize, &Model<f32>, &[EpochRecord]) -> Result<(), Error>,
) -> Result<(Model<f32>, Vec<EpochRecord>), Error> {
    cfg.validate()?;
    let sets = load_training_sets(cfg, dataset)?;
    let mut model = new_model(cfg, &sets.vocab)?;
    let mut history = Vec::new();
    let mut done = 0;
    for &stop in checkpoints {
        if stop > done {
            history.extend(train_epochs(&mut model, &sets.train, &sets.validation, &cfg.train, done + 1..=stop)?);
            done = stop;
        }
        model.set_metadata("epochs", stop.to_string());
        checkpoint(stop, &model, &history)?;
    }
    Ok((model, history))
}

pub fn train_model(cfg: &RunConfig, dataset: &Path) -> Result<(Model<f32>, Vec<EpochRecord>), Error> {
    train_with_checkpoints(cfg, dataset, &[cfg.train.epochs], |_, _, _| Ok(()))
}

/// `epoch,train_loss,val_loss,val_acc` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{},{}\n",
            r.epoch,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_accuracy)
        ));
    }
    out
}

/// Metrics on the dataset's test split.
pub fn evaluate_model(model: &Model<f32>, dataset: &Path, batch_size: usize) -> Result<EvalReport, Error> {
    let manifest = read_manifest(dataset)?;
    let test: Vec<_> = manifest.entries.iter().filter(|e| e.split == Split::Test).cloned().collect();
    let vocab = LabelVocab::new(model.vocab.clone());
    let set = SampleSet::from_entries(
        &manifest,
        &test,
        &vocab,
        model.config.input_h,
        model.config.input_w,
        DEFAULT_CACHE_BUDGET,
    )?;
    let ev = evaluate_set(model, &set, batch_size)?;
    let scores: Vec<Vec<f32>> = ev.predictions.into_iter().map(|p| p.probs).collect();
    Ok(evaluate_scores(&scores, &ev.targets, model.config.classes, ev.loss)?)
}

/// bpf values and epoch counts to sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub bpf: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Grid {
    /// `bpf=3,5,7` and `epochs=100,150` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut grid = Grid {
            bpf: Vec::new(),
            epochs: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: line.to_string(),
            })?;
            let values = v
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|e| ConfigError::InvalidValue {
                        key: k.trim().to_string(),
                        value: s.trim().to_string(),
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            match k.trim() {
                "bpf" => grid.bpf = values,
                "epochs" => grid.epochs = values,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        if grid.bpf.is_empty() || grid.epochs.is_empty() || grid.epochs.contains(&0) {
            return Err(ConfigError::Invalid("grid needs non-empty bpf and positive epochs lists".into()));
        }
        grid.epochs.sort_unstable();
        grid.epochs.dedup();
        Ok(grid)
    }
}

/// Build one dataset per bpf under `out/bpf_<n>`, train once to the largest
/// epoch count and evaluate at every listed epoch count.
pub fn reproduce(cfg: &RunConfig, grid: &Grid, out: &Path) -> Result<Vec<ReportRow>, Error> {
    let mut rows = Vec::new();
    for &bpf in &grid.bpf {
        let mut c = cfg.clone();
        c.ekm.bpf = bpf;
        c.train.epochs = *grid.epochs.last().expect("non-empty grid");
        c.validate()?;
        let dir = out.join(format!("bpf_{bpf}"));
        let summary = build_dataset(&c, &dir)?;
        log::info!("bpf {bpf}: {} EKMs", summary.manifest.entries.len());
        train_with_checkpoints(&c, &dir, &grid.epochs, |epochs, model, _| {
            save_model(model, &dir.join(format!("model_e{epochs}.ekmn")))?;
            let report = evaluate_model(model, &dir, c.train.batch_size)?;
            log::info!("bpf {bpf}, {epochs} epochs: accuracy {:.4}", report.accuracy);
            rows.push(ReportRow {
                database: c.name.clone(),
                bpf,
                epochs,
                report,
            });
            Ok(())
        })?;
    }
    Ok(rows)
}
