//! WFDB header/signal parsing and plain-text ECG ingestion.
//!
//! Supports single-segment records whose signals are stored in format 212
//! (packed 12-bit pairs, MIT-BIH) or format 16 (little-endian 16-bit, PTB).
//! Annotation files and multi-segment records are not handled.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Gain substituted when a signal line omits it or gives zero (WFDB default).
pub const DEFAULT_GAIN: f64 = 200.0;

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported signal format {0} (supported: 212, 16)")]
    UnsupportedFormat(u32),
    #[error("signal truncated: need {needed} bytes for {samples} samples, have {available}")]
    TruncatedSignal {
        samples: usize,
        needed: usize,
        available: usize,
    },
    #[error("channel {channel} out of range for record with {n_signals} signals")]
    ChannelOutOfRange { channel: usize, n_signals: usize },
    #[error("checksum mismatch on signal {signal}: header {expected}, computed {actual}")]
    ChecksumMismatch {
        signal: usize,
        expected: i32,
        actual: i32,
    },
    #[error("empty recording: {0}")]
    EmptyFile(PathBuf),
    #[error("non-numeric sample on line {line}: {text:?}")]
    NonNumericSample { line: usize, text: String },
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid sampling frequency {0}")]
    InvalidFrequency(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WfdbError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Format212,
    Format16,
}

impl SignalFormat {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            212 => Ok(Self::Format212),
            16 => Ok(Self::Format16),
            other => Err(WfdbError::UnsupportedFormat(other)),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Self::Format212 => 212,
            Self::Format16 => 16,
        }
    }

    /// Bytes needed to hold `n` interleaved samples.
    pub fn byte_len(self, n: usize) -> usize {
        match self {
            Self::Format212 => (n * 3).div_ceil(2),
            Self::Format16 => n * 2,
        }
    }

    /// Whole samples contained in `bytes` bytes.
    pub fn samples_in(self, bytes: usize) -> usize {
        match self {
            Self::Format212 => bytes / 3 * 2 + usize::from(bytes % 3 == 2),
            Self::Format16 => bytes / 2,
        }
    }
}

/// One signal specification line of a header.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: SignalFormat,
    /// Byte offset into the signal file (`212+512` style suffix).
    pub byte_offset: usize,
    /// ADC units per physical unit.
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: Option<u32>,
    pub adc_zero: i32,
    pub initial_value: Option<i32>,
    pub checksum: Option<i32>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub record_name: String,
    pub n_signals: usize,
    pub sampling_frequency: f64,
    /// Samples per signal; `None` when the header leaves it out.
    pub n_samples: Option<usize>,
    pub signals: Vec<SignalSpec>,
    /// Comment lines in file order, without the leading `#`.
    pub comments: Vec<String>,
    /// Subject this record belongs to. Defaults to the record name; the
    /// file loaders replace it with the parent directory for PTB-style
    /// `patientNNN/` layouts.
    pub subject_id: String,
}

impl RecordMeta {
    pub fn format_codes(&self) -> Vec<u32> {
        self.signals.iter().map(|s| s.format.code()).collect()
    }

    /// Pathology text found in comments, e.g. PTB's "Reason for admission".
    pub fn label_hint(&self) -> Option<String> {
        self.comments.iter().find_map(|c| {
            let lower = c.to_ascii_lowercase();
            lower
                .starts_with("reason for admission")
                .then(|| c.split_once(':').map_or("", |(_, v)| v).trim().to_string())
        })
    }
}

/// One channel of calibrated ECG.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub subject_id: String,
    /// Samples in millivolts.
    pub samples: Vec<f64>,
    pub fs: f64,
    pub source: String,
    pub label_hint: Option<String>,
}

impl EcgRecord {
    pub fn new(subject_id: impl Into<String>, samples: Vec<f64>, fs: f64) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(WfdbError::InvalidFrequency(fs));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WfdbError::NonFiniteSample(i));
        }
        let subject_id = subject_id.into();
        if samples.is_empty() {
            return Err(WfdbError::EmptyFile(PathBuf::from(&subject_id)));
        }
        Ok(Self {
            source: subject_id.clone(),
            subject_id,
            samples,
            fs,
            label_hint: None,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

fn malformed(msg: impl Into<String>) -> WfdbError {
    WfdbError::MalformedHeader(msg.into())
}

/// Parse the text of a `.hea` file.
pub fn parse_header(header_text: &str) -> Result<RecordMeta> {
    let mut comments = Vec::new();
    let mut lines = Vec::new();
    for raw in header_text.lines() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            comments.push(comment.trim_start().to_string());
        } else if !line.is_empty() {
            lines.push(line);
        }
    }

    let record_line = lines.first().ok_or_else(|| malformed("no record line"))?;
    let mut fields = record_line.split_whitespace();
    let name_field = fields.next().ok_or_else(|| malformed("missing record name"))?;
    if name_field.contains('/') {
        return Err(malformed(format!(
            "multi-segment record {name_field} is not supported"
        )));
    }
    let n_signals: usize = fields
        .next()
        .ok_or_else(|| malformed("missing signal count"))?
        .parse()
        .map_err(|_| malformed("non-numeric signal count"))?;
    if n_signals == 0 {
        return Err(malformed("record declares zero signals"));
    }
    let fs_field = fields
        .next()
        .ok_or_else(|| malformed("missing sampling frequency"))?;
    // "360", "360/1", "250(0)" are all legal; only the leading number matters.
    let fs_text = fs_field
        .split(['/', '('])
        .next()
        .unwrap_or_default();
    let sampling_frequency: f64 = fs_text
        .parse()
        .map_err(|_| malformed(format!("non-numeric sampling frequency {fs_field:?}")))?;
    if !(sampling_frequency.is_finite() && sampling_frequency > 0.0) {
        return Err(malformed(format!(
            "sampling frequency must be positive, got {fs_field:?}"
        )));
    }
    let n_samples = match fields.next() {
        Some(f) => Some(
            f.parse::<usize>()
                .map_err(|_| malformed(format!("non-numeric sample count {f:?}")))?,
        ),
        None => None,
    };

    let spec_lines = &lines[1..];
    if spec_lines.len() < n_signals {
        return Err(malformed(format!(
            "expected {n_signals} signal lines, found {}",
            spec_lines.len()
        )));
    }
    let signals = spec_lines[..n_signals]
        .iter()
        .map(|l| parse_signal_line(l))
        .collect::<Result<Vec<_>>>()?;

    Ok(RecordMeta {
        subject_id: name_field.to_string(),
        record_name: name_field.to_string(),
        n_signals,
        sampling_frequency,
        n_samples,
        signals,
        comments,
    })
}

fn parse_int<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<Option<T>> {
    field
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| malformed(format!("non-numeric {what} {f:?}")))
        })
        .transpose()
}

fn parse_signal_line(line: &str) -> Result<SignalSpec> {
    let mut fields = line.split_whitespace();
    let file_name = fields
        .next()
        .ok_or_else(|| malformed("empty signal line"))?
        .to_string();
    let fmt_field = fields
        .next()
        .ok_or_else(|| malformed(format!("signal {file_name} has no format")))?;
    let digits_end = fmt_field
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(fmt_field.len());
    let code: u32 = fmt_field[..digits_end]
        .parse()
        .map_err(|_| malformed(format!("bad format field {fmt_field:?}")))?;
    let format = SignalFormat::from_code(code)?;
    let suffix = &fmt_field[digits_end..];
    let byte_offset = if suffix.is_empty() {
        0
    } else if let Some(off) = suffix.strip_prefix('+') {
        off.parse()
            .map_err(|_| malformed(format!("bad byte offset in {fmt_field:?}")))?
    } else {
        return Err(malformed(format!(
            "unsupported format modifiers {fmt_field:?}"
        )));
    };

    let mut gain = DEFAULT_GAIN;
    let mut explicit_baseline = None;
    let mut units = String::from("mV");
    if let Some(gain_field) = fields.next() {
        let (rest, unit_part) = match gain_field.split_once('/') {
            Some((r, u)) => (r, Some(u)),
            None => (gain_field, None),
        };
        let (gain_text, baseline_text) = match rest.split_once('(') {
            Some((g, b)) => (g, Some(b.trim_end_matches(')'))),
            None => (rest, None),
        };
        let g: f64 = gain_text
            .parse()
            .map_err(|_| malformed(format!("bad gain {gain_field:?}")))?;
        if g > 0.0 {
            gain = g;
        }
        if let Some(b) = baseline_text {
            explicit_baseline = Some(
                b.parse::<i32>()
                    .map_err(|_| malformed(format!("bad baseline {gain_field:?}")))?,
            );
        }
        if let Some(u) = unit_part {
            units = u.to_string();
        }
    }
    let adc_resolution = parse_int::<u32>(fields.next(), "ADC resolution")?;
    let adc_zero = parse_int::<i32>(fields.next(), "ADC zero")?.unwrap_or(0);
    let initial_value = parse_int::<i32>(fields.next(), "initial value")?;
    let checksum = parse_int::<i32>(fields.next(), "checksum")?;
    let _block_size = parse_int::<i64>(fields.next(), "block size")?;
    let description = fields.collect::<Vec<_>>().join(" ");

    Ok(SignalSpec {
        file_name,
        format,
        byte_offset,
        gain,
        // WFDB: baseline defaults to the ADC zero when not given.
        baseline: explicit_baseline.unwrap_or(adc_zero),
        units,
        adc_resolution,
        adc_zero,
        initial_value,
        checksum,
        description,
    })
}

fn check_len(format: SignalFormat, bytes: &[u8], n_samples: usize) -> Result<()> {
    let needed = format.byte_len(n_samples);
    if bytes.len() < needed {
        return Err(WfdbError::TruncatedSignal {
            samples: n_samples,
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

/// Unpack `n_samples` 12-bit values from format-212 bytes.
pub fn decode_format212(bytes: &[u8], n_samples: usize) -> Result<Vec<i16>> {
    check_len(SignalFormat::Format212, bytes, n_samples)?;
    let sign_extend = |v: u16| ((v << 4) as i16) >> 4;
    let mut out = Vec::with_capacity(n_samples);
    for k in 0..n_samples.div_ceil(2) {
        let b0 = u16::from(bytes[3 * k]);
        let b1 = u16::from(bytes[3 * k + 1]);
        out.push(sign_extend(((b1 & 0x0F) << 8) | b0));
        if out.len() == n_samples {
            break;
        }
        let b2 = u16::from(bytes[3 * k + 2]);
        out.push(sign_extend(((b1 & 0xF0) << 4) | b2));
    }
    Ok(out)
}

/// Pack 12-bit values into format-212 bytes. Values outside
/// `-2048..=2047` are truncated to their low 12 bits.
pub fn encode_format212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(SignalFormat::Format212.byte_len(samples.len()));
    for pair in samples.chunks(2) {
        let a = (pair[0] as u16) & 0x0FFF;
        out.push((a & 0xFF) as u8);
        match pair.get(1) {
            Some(&b) => {
                let b = (b as u16) & 0x0FFF;
                out.push(((a >> 8) as u8) | (((b >> 8) as u8) << 4));
                out.push((b & 0xFF) as u8);
            }
            None => out.push((a >> 8) as u8),
        }
    }
    out
}

pub fn decode_format16(bytes: &[u8], n_samples: usize) -> Result<Vec<i16>> {
    check_len(SignalFormat::Format16, bytes, n_samples)?;
    Ok(bytes[..2 * n_samples]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect())
}

pub fn encode_format16(samples: &[i16]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| WfdbError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| WfdbError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `patientNNN/s0010_re.hea` style layouts name the subject by directory.
fn subject_for(header_path: &Path, record_name: &str) -> String {
    header_path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .filter(|n| {
            n.strip_prefix("patient")
                .is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
        })
        .map_or_else(|| record_name.to_string(), str::to_string)
}

/// Read and parse a header file, resolving the subject from its location.
pub fn read_header(header_path: &Path) -> Result<RecordMeta> {
    let mut meta = parse_header(&read_text(header_path)?)?;
    meta.subject_id = subject_for(header_path, &meta.record_name);
    Ok(meta)
}

/// Raw ADC values for one channel. Signals sharing a file are interleaved
/// frame by frame, so the whole group is decoded and then strided.
pub fn read_raw_channel(meta: &RecordMeta, dat_path: &Path, channel: usize) -> Result<Vec<i16>> {
    let spec = meta
        .signals
        .get(channel)
        .ok_or(WfdbError::ChannelOutOfRange {
            channel,
            n_signals: meta.n_signals,
        })?;
    let group: Vec<usize> = (0..meta.signals.len())
        .filter(|&i| meta.signals[i].file_name == spec.file_name)
        .collect();
    if group.iter().any(|&i| meta.signals[i].format != spec.format) {
        return Err(malformed(format!(
            "signals in {} mix storage formats",
            spec.file_name
        )));
    }
    let position = group.iter().position(|&i| i == channel).unwrap_or(0);
    let stride = group.len();

    let bytes = read_bytes(dat_path)?;
    let bytes = bytes.get(spec.byte_offset..).unwrap_or(&[]);
    let frames = match meta.n_samples {
        Some(n) if n > 0 => n,
        _ => spec.format.samples_in(bytes.len()) / stride,
    };
    let total = frames * stride;
    let interleaved = match spec.format {
        SignalFormat::Format212 => decode_format212(bytes, total)?,
        SignalFormat::Format16 => decode_format16(bytes, total)?,
    };
    Ok(interleaved
        .into_iter()
        .skip(position)
        .step_by(stride)
        .collect())
}

/// WFDB checksum: 16-bit two's-complement sum of all samples.
pub fn checksum(raw: &[i16]) -> i32 {
    let sum = raw.iter().fold(0i64, |acc, &v| acc + i64::from(v));
    i32::from(sum as u16 as i16)
}

pub fn verify_checksum(meta: &RecordMeta, channel: usize, raw: &[i16]) -> Result<()> {
    if let Some(expected) = meta.signals.get(channel).and_then(|s| s.checksum) {
        let actual = checksum(raw);
        if actual != expected {
            return Err(WfdbError::ChecksumMismatch {
                signal: channel,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

/// Convert ADC values to millivolts.
pub fn calibrate(raw: &[i16], spec: &SignalSpec) -> Vec<f64> {
    let scale = match spec.units.to_ascii_lowercase().as_str() {
        "uv" | "µv" => 1e-3,
        "v" => 1e3,
        _ => 1.0,
    };
    raw.iter()
        .map(|&r| (f64::from(r) - f64::from(spec.baseline)) / spec.gain * scale)
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub verify_checksum: bool,
}

/// Load one calibrated channel of a WFDB record.
pub fn load_channel(header_path: &Path, dat_path: &Path, channel: usize) -> Result<EcgRecord> {
    load_channel_with(header_path, dat_path, channel, LoadOptions::default())
}

pub fn load_channel_with(
    header_path: &Path,
    dat_path: &Path,
    channel: usize,
    opts: LoadOptions,
) -> Result<EcgRecord> {
    let meta = read_header(header_path)?;
    if channel >= meta.n_signals {
        return Err(WfdbError::ChannelOutOfRange {
            channel,
            n_signals: meta.n_signals,
        });
    }
    let raw = read_raw_channel(&meta, dat_path, channel)?;
    if opts.verify_checksum {
        verify_checksum(&meta, channel, &raw)?;
    }
    if raw.is_empty() {
        return Err(WfdbError::EmptyFile(dat_path.to_path_buf()));
    }
    let samples = calibrate(&raw, &meta.signals[channel]);
    Ok(EcgRecord {
        label_hint: meta.label_hint(),
        subject_id: meta.subject_id,
        samples,
        fs: meta.sampling_frequency,
        source: format!("{}#{channel}", dat_path.display()),
    })
}

/// Load a record given its header; the signal file is resolved next to it.
pub fn load_record(header_path: &Path, channel: usize, opts: LoadOptions) -> Result<EcgRecord> {
    let meta = read_header(header_path)?;
    let spec = meta.signals.get(channel).ok_or(WfdbError::ChannelOutOfRange {
        channel,
        n_signals: meta.n_signals,
    })?;
    let dat_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&spec.file_name);
    load_channel_with(header_path, &dat_path, channel, opts)
}

/// All `.hea` files under `dir`, sorted by path.
pub fn find_headers(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|source| WfdbError::Io {
            path: d.clone(),
            source,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|source| WfdbError::Io {
                    path: d.clone(),
                    source,
                })?
                .path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "hea") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PlaintextOptions {
    /// Zero-based column when lines carry several values.
    pub column: usize,
}

/// Load a plain-text recording: one sample per line, or whitespace/comma
/// separated columns. Blank lines and `#` comments are ignored.
pub fn load_plaintext(path: &Path, fs: f64) -> Result<EcgRecord> {
    load_plaintext_with(path, fs, PlaintextOptions::default())
}

pub fn load_plaintext_with(path: &Path, fs: f64, opts: PlaintextOptions) -> Result<EcgRecord> {
    let text = read_text(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || WfdbError::NonNumericSample {
            line: i + 1,
            text: line.to_string(),
        };
        let field = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .nth(opts.column)
            .ok_or_else(bad)?;
        let v: f64 = field.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(WfdbError::EmptyFile(path.to_path_buf()));
    }
    let subject_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("subject")
        .to_string();
    let mut record = EcgRecord::new(subject_id, samples, fs)?;
    record.source = path.display().to_string();
    Ok(record)
}

/// Pathologies studied in the CVD-only PTB experiment.
pub const CVD_ALLOWLIST: [&str; 6] = [
    "bundle branch block",
    "cardiomyopathy",
    "dysrhythmia",
    "myocardial infarction",
    "myocarditis",
    "valvular heart disease",
];

/// Keep records whose comments mention an allowlisted pathology, then keep
/// one record per subject (the lexicographically first record name).
pub fn filter_subjects_by_pathology(metas: &[RecordMeta], allowlist: &[&str]) -> Vec<RecordMeta> {
    let needles: Vec<String> = allowlist.iter().map(|s| s.to_lowercase()).collect();
    let mut kept: Vec<RecordMeta> = metas
        .iter()
        .filter(|m| {
            m.comments.iter().any(|c| {
                let c = c.to_lowercase();
                needles.iter().any(|n| c.contains(n.as_str()))
            })
        })
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then_with(|| a.record_name.cmp(&b.record_name))
    });
    kept.dedup_by(|later, first| later.subject_id == first.subject_id);
    kept
}

/// One record per subject, no pathology filter.
pub fn one_record_per_subject(metas: &[RecordMeta]) -> Vec<RecordMeta> {
    let mut kept = metas.to_vec();
    kept.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then_with(|| a.record_name.cmp(&b.record_name))
    });
    kept.dedup_by(|later, first| later.subject_id == first.subject_id);
    kept
}
