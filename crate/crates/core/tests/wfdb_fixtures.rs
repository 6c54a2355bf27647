use std::fs;
use std::path::Path;

use ekm_core::dataset::{synth_ecg, SynthSubjectParams};
use ekm_core::pipeline::{build_dataset, load_records};
use ekm_core::wfdb::{self, checksum, encode_format16, encode_format212, LoadOptions, WfdbError};
use ekm_core::RunConfig;

const GAIN: f64 = 200.0;
const BASELINE: i32 = 1024;

fn quantize(mv: &[f64]) -> Vec<i16> {
    mv.iter().map(|v| (v * GAIN).round() as i16 + BASELINE as i16).collect()
}

/// Two-channel record; channel 1 is channel 0 negated.
fn write_record(dir: &Path, name: &str, format: u32, ch0: &[i16], fs: f64, comments: &[&str]) {
    fs::create_dir_all(dir).unwrap();
    let ch1: Vec<i16> = ch0.iter().map(|&v| 2 * BASELINE as i16 - v).collect();
    let mut inter = Vec::with_capacity(ch0.len() * 2);
    for (a, b) in ch0.iter().zip(&ch1) {
        inter.push(*a);
        inter.push(*b);
    }
    let bytes = if format == 212 { encode_format212(&inter) } else { encode_format16(&inter) };
    fs::write(dir.join(format!("{name}.dat")), bytes).unwrap();
    let mut hea = format!("{name} 2 {fs} {}\n", ch0.len());
    for (i, ch) in [ch0, &ch1[..]].iter().enumerate() {
        hea += &format!(
            "{name}.dat {format} {GAIN}({BASELINE})/mV 12 0 {} {} 0 lead{i}\n",
            ch[0],
            checksum(ch)
        );
    }
    for c in comments {
        hea += &format!("# {c}\n");
    }
    fs::write(dir.join(format!("{name}.hea")), hea).unwrap();
}

fn synth(seed: u64, fs: f64, secs: f64) -> Vec<i16> {
    let p = SynthSubjectParams::random_subject(seed, 72.0);
    quantize(&synth_ecg(&p, fs, secs, seed + 1, "x").unwrap().0.samples)
}

#[test]
fn loads_both_formats_with_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let raw: Vec<i16> = vec![1024, 1224, 824, 2000, 100, 1025, 1023];
    for format in [212, 16] {
        let name = format!("r{format}");
        write_record(dir.path(), &name, format, &raw, 250.0, &[]);
        let hea = dir.path().join(format!("{name}.hea"));
        let opts = LoadOptions { verify_checksum: true };
        let r0 = wfdb::load_record(&hea, 0, opts).unwrap();
        let expected: Vec<f64> = raw.iter().map(|&v| (f64::from(v) - 1024.0) / 200.0).collect();
        assert_eq!(r0.samples, expected, "format {format}");
        assert_eq!(r0.fs, 250.0);
        let r1 = wfdb::load_record(&hea, 1, opts).unwrap();
        assert!(r1.samples.iter().zip(&expected).all(|(a, b)| (a + b).abs() < 1e-12));
        assert!(matches!(
            wfdb::load_record(&hea, 2, opts),
            Err(WfdbError::ChannelOutOfRange { .. })
        ));
    }
}

#[test]
fn corrupted_samples_fail_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    write_record(dir.path(), "c", 16, &[1000, 1100, 1200, 1300], 360.0, &[]);
    let dat = dir.path().join("c.dat");
    let mut bytes = fs::read(&dat).unwrap();
    bytes[0] ^= 0x01;
    fs::write(&dat, bytes).unwrap();
    let hea = dir.path().join("c.hea");
    assert!(wfdb::load_record(&hea, 0, LoadOptions::default()).is_ok());
    assert!(matches!(
        wfdb::load_record(&hea, 0, LoadOptions { verify_checksum: true }),
        Err(WfdbError::ChecksumMismatch { .. })
    ));
}

#[test]
fn truncated_signal_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_record(dir.path(), "t", 212, &[1, 2, 3, 4, 5, 6], 360.0, &[]);
    let dat = dir.path().join("t.dat");
    let bytes = fs::read(&dat).unwrap();
    fs::write(&dat, &bytes[..bytes.len() - 4]).unwrap();
    assert!(wfdb::load_record(&dir.path().join("t.hea"), 0, LoadOptions::default()).is_err());
}

#[test]
fn pathology_filter_keeps_one_record_per_matching_patient() {
    let root = tempfile::tempdir().unwrap();
    let short = vec![1024i16; 50];
    let mi = "Reason for admission: Myocardial infarction";
    write_record(&root.path().join("patient001"), "s0020", 16, &short, 1000.0, &[mi]);
    write_record(&root.path().join("patient001"), "s0010", 16, &short, 1000.0, &[mi]);
    write_record(&root.path().join("patient002"), "s0030", 16, &short, 1000.0, &["Reason for admission: Healthy control"]);
    write_record(&root.path().join("patient003"), "s0040", 16, &short, 1000.0, &["Reason for admission: Cardiomyopathy"]);

    let mut cfg = RunConfig::default();
    cfg.set("database", "wfdb").unwrap();
    cfg.set("input", root.path().to_str().unwrap()).unwrap();
    cfg.set("pathology", "myocardial infarction,cardiomyopathy").unwrap();
    let mut got: Vec<(String, String)> = load_records(&cfg)
        .unwrap()
        .into_iter()
        .map(|r| (r.subject_id, Path::new(&r.source).file_name().unwrap().to_string_lossy().into_owned()))
        .collect();
    got.sort();
    assert_eq!(
        got,
        [
            ("patient001".to_string(), "s0010.dat#0".to_string()),
            ("patient003".to_string(), "s0040.dat#0".to_string())
        ]
    );

    cfg.set("pathology", "none").unwrap();
    cfg.pathology.clear();
    assert_eq!(load_records(&cfg).unwrap().len(), 3);
}

#[test]
fn builds_a_dataset_from_a_wfdb_directory() {
    let root = tempfile::tempdir().unwrap();
    let db = root.path().join("db");
    for (i, format) in [(0u64, 212), (1, 16), (2, 212)] {
        write_record(&db, &format!("1{i:02}"), format, &synth(i * 10, 360.0, 90.0), 360.0, &[]);
    }
    let mut cfg = RunConfig::default();
    cfg.set("database", "wfdb").unwrap();
    cfg.set("input", db.to_str().unwrap()).unwrap();
    cfg.set("bpf", "3").unwrap();
    let out = root.path().join("out");
    let summary = build_dataset(&cfg, &out).unwrap();
    assert_eq!(summary.manifest.subjects(), ["100", "101", "102"]);
    for s in &summary.stats {
        // roughly 105 beats at 72 bpm in 90 s
        assert!((30..=36).contains(&s.ekms), "{}: {}", s.subject_id, s.ekms);
        assert_eq!(s.train + s.test, s.ekms);
    }
    assert!(summary.skipped.is_empty());
}
