use std::fs;

use proptest::prelude::*;
use stressnet::data::interchange::MANIFEST_FILE;
use stressnet::data::synth::stress_plan;
use stressnet::data::{
    generate_synthetic_with, load_recording, quantize_label, roundtrip_check, save_recording, segment,
    train_test_split, validate_manifest, Modality, SegmentationSpec, SynthConfig,
};
use stressnet::Tensor2D;

#[test]
fn quantization_is_exact_and_strictly_monotone() {
    let expected = [0.25f32, 0.5, 0.75, 1.0];
    for (likert, want) in (1..=4).zip(expected) {
        assert_eq!(quantize_label(likert).unwrap(), want);
    }
    for pair in expected.windows(2) {
        assert!(pair[0] < pair[1]);
    }
    for bad in [i64::MIN, -1, 0, 5, 7, i64::MAX] {
        assert!(quantize_label(bad).is_err(), "{bad}");
    }
}

fn window_rms(series: &Tensor2D, start: usize, len: usize) -> f64 {
    let mean = (start..start + len).map(|t| series.get(t, 0) as f64).sum::<f64>() / len as f64;
    let ss: f64 = (start..start + len).map(|t| (series.get(t, 0) as f64 - mean).powi(2)).sum();
    (ss / len as f64).sqrt()
}

#[test]
fn ecg_energy_rises_with_the_stress_level() {
    let (seed, duration, window) = (11, 700_000, 700);
    let config = SynthConfig {
        stress_segments: 16,
        ..SynthConfig::default()
    };
    let rec = generate_synthetic_with(seed, duration, &config).unwrap();
    let ecg = rec.signal(Modality::Ecg).unwrap();
    let mut by_level = [(); 4].map(|_| Vec::new());
    for (span, level) in stress_plan(seed, duration, config.stress_segments).unwrap() {
        let mut start = span.start;
        while start + window <= span.end {
            by_level[level as usize - 1].push(window_rms(ecg, start, window));
            start += window;
        }
    }
    let means: Vec<f64> = by_level
        .iter()
        .map(|v| {
            assert!(v.len() >= 100, "only {} windows at one level", v.len());
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    for pair in means.windows(2) {
        assert!(pair[0] < pair[1], "window RMS by level: {means:?}");
    }
}

#[test]
fn synthetic_recordings_pass_the_reload_check() {
    let rec = generate_synthetic_with(2, 1500, &SynthConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_recording(&rec, tmp.path()).unwrap();
    assert!(validate_manifest(tmp.path()).unwrap().is_clean());
    assert!(roundtrip_check(tmp.path()).unwrap().is_clean());
}

#[test]
fn reload_check_flags_an_unrepresentable_rate() {
    let rec = generate_synthetic_with(3, 1000, &SynthConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_recording(&rec, tmp.path()).unwrap();
    let path = tmp.path().join(MANIFEST_FILE);
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    manifest["sample_rate"] = serde_json::json!(700.1);
    fs::write(&path, manifest.to_string()).unwrap();
    let report = roundtrip_check(tmp.path()).unwrap();
    assert!(report.to_string().contains("not representable as float32"), "{report}");
}

#[test]
fn reload_check_reports_truncation() {
    let rec = generate_synthetic_with(4, 1000, &SynthConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_recording(&rec, tmp.path()).unwrap();
    let file = tmp.path().join(Modality::Temp.file_name());
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 2]).unwrap();
    let report = roundtrip_check(tmp.path()).unwrap();
    assert!(!report.is_clean());
    assert!(report.to_string().contains("TEMP"), "{report}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_then_load_is_lossless(seed in any::<u64>(), len in 8usize..600, segments in 1usize..5, rate in 1.0f32..2000.0) {
        let config = SynthConfig { stress_segments: segments.min(len), sample_rate: rate, ..SynthConfig::default() };
        let rec = generate_synthetic_with(seed, len, &config).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_recording(&rec, tmp.path()).unwrap();
        let back = load_recording(tmp.path()).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert!(roundtrip_check(tmp.path()).unwrap().is_clean());
    }

    #[test]
    fn split_is_temporally_disjoint(
        window in 1usize..20, stride in 1usize..10, horizon in 0usize..5, extra in 0usize..300, frac in 0.0f64..=1.0
    ) {
        let len = window + horizon + extra;
        let ds = segment(&Tensor2D::zeros(len, 1), SegmentationSpec { window, stride, horizon }).unwrap();
        let test_count = (ds.len() as f64 * frac).floor() as usize;
        let (train, test) = train_test_split(&ds, test_count).unwrap();
        prop_assert_eq!(test.len(), test_count);
        prop_assert_eq!(train.len() + test.len(), ds.len());
        if let (Some(a), Some(b)) = (train.entries().last(), test.entries().first()) {
            prop_assert!(a.start < b.start);
        }
        let tail: Vec<usize> = ds.indices()[ds.len() - test_count..].to_vec();
        prop_assert_eq!(test.indices(), tail);
        prop_assert!(train_test_split(&ds, ds.len() + 1).is_err());
    }
}
