use std::io::Write;

use frae_prune::core::data::{generate_synthetic, PatternSequence};
use frae_prune::core::frae::{FraeConfig, FraeModel};
use frae_prune::core::params::{ParamVector, PruningMask, Scope};
use frae_prune::format::{self, FormatError, PatternLimits};
use proptest::prelude::*;

fn not_a_panic<T: std::fmt::Debug>(result: Result<T, FormatError>) -> FormatError {
    result.expect_err("damaged input must not decode")
}

proptest! {
    #[test]
    fn params_round_trip(values in prop::collection::vec(-1e6f64..1e6, 0..200)) {
        let w = ParamVector::new(values).unwrap();
        let bytes = format::encode_params(&w);
        prop_assert_eq!(bytes.len(), 16 + 8 * w.len());
        let back = format::decode_params(&bytes).unwrap();
        let a: Vec<u64> = w.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        for cut in 0..bytes.len() {
            let err = not_a_panic(format::decode_params(&bytes[..cut]));
            let is_truncated = matches!(err, FormatError::Truncated { .. });
            prop_assert!(is_truncated, "cut {}: {}", cut, err);
        }
    }

    #[test]
    fn mask_round_trip(
        picks in prop::collection::btree_set(0usize..5000, 0..100),
        rate in 0.0f64..=1.0,
        decoder in any::<bool>(),
    ) {
        let scope = if decoder { Scope::DecoderOnly } else { Scope::WholeModel };
        let mask = PruningMask::from_parts(picks.into_iter().collect(), rate, scope).unwrap();
        let bytes = format::encode_mask(&mask);
        prop_assert_eq!(format::decode_mask(&bytes).unwrap(), mask);
        for cut in 0..bytes.len() {
            not_a_panic(format::decode_mask(&bytes[..cut]));
        }
    }

    #[test]
    fn patterns_round_trip(seed in any::<u64>(), count in 0usize..5, frames in 0usize..40) {
        let data = generate_synthetic(count, frames, seed);
        let bytes = format::encode_patterns(&data, PatternLimits::default()).unwrap();
        let back = format::decode_patterns(&bytes, PatternLimits::default()).unwrap();
        prop_assert_eq!(&back, &data);
        for cut in (0..bytes.len()).step_by(7) {
            not_a_panic(format::decode_patterns(&bytes[..cut], PatternLimits::default()));
        }
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), hidden in 1usize..8, bits in 1u32..5) {
        let config = FraeConfig {
            encoder_hidden: hidden,
            decoder_hidden: hidden + 1,
            codebook_bits: bits,
            ..FraeConfig::default()
        };
        let model = FraeModel::init(config, seed).unwrap();
        let bytes = format::encode_checkpoint(&model);
        let back = format::decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.config(), model.config());
        prop_assert_eq!(back.params(), model.params());
        for cut in (0..bytes.len()).step_by(5) {
            not_a_panic(format::decode_checkpoint(&bytes[..cut]));
        }
    }
}

#[test]
fn checkpoint_with_wrong_parameter_count_is_rejected() {
    let model = FraeModel::init(FraeConfig::default(), 1).unwrap();
    let mut bytes = format::encode_checkpoint(&model);
    // encoder_hidden lives at byte 16
    bytes[16..20].copy_from_slice(&13u32.to_le_bytes());
    match format::decode_checkpoint(&bytes) {
        Err(FormatError::Invalid { offset: 32, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(3, 25, 9);
    let path = dir.path().join("data.stim");
    format::save_patterns(&path, &data).unwrap();
    assert_eq!(format::load_patterns(&path).unwrap(), data);

    let empty = dir.path().join("empty.stim");
    format::save_patterns(&empty, &[]).unwrap();
    assert!(format::load_patterns(&empty).unwrap().is_empty());

    let model = FraeModel::init(FraeConfig::default(), 4).unwrap();
    let ckpt = dir.path().join("m.frae");
    format::save_checkpoint(&ckpt, &model).unwrap();
    assert_eq!(
        format::load_checkpoint(&ckpt).unwrap().params(),
        model.params()
    );

    assert!(matches!(
        format::load_params(&dir.path().join("missing.pawv")),
        Err(FormatError::Io(_))
    ));
    assert!(matches!(
        format::load_params(&ckpt),
        Err(FormatError::BadMagic { offset: 0, .. })
    ));
}

#[test]
fn twenty_three_channel_file_is_rejected() {
    let limits = PatternLimits {
        channels: 23,
        max_active: 8,
    };
    let seq = PatternSequence::new(
        23,
        8,
        900.0,
        vec![0.25; 23 * 4]
            .into_iter()
            .enumerate()
            .map(|(i, v)| if i % 23 < 8 { v } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let bytes = format::encode_patterns(&[seq], limits).unwrap();
    let err = format::decode_patterns(&bytes, PatternLimits::default()).unwrap_err();
    assert!(err.to_string().contains("23 channels"), "{err}");
}

fn write_csv(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::File::create(&path)
        .unwrap()
        .write_all(text.as_bytes())
        .unwrap();
    path
}

fn csv_row(active: &[(usize, f32)]) -> String {
    let mut row = vec!["0".to_string(); 22];
    for &(ch, v) in active {
        row[ch] = v.to_string();
    }
    row.join(",")
}

#[test]
fn csv_import() {
    let dir = tempfile::tempdir().unwrap();
    let header = (0..22)
        .map(|c| format!("ch{c}"))
        .collect::<Vec<_>>()
        .join(",");
    let body = [
        csv_row(&[(0, 0.5), (3, 1.0)]),
        csv_row(&[]),
        csv_row(&[(21, 0.125)]),
    ]
    .join("\n");
    let limits = PatternLimits::default();

    let with_header = write_csv(dir.path(), "a.csv", &format!("{header}\n{body}\n"));
    let seq = format::import_csv(&with_header, 900.0, limits).unwrap();
    assert_eq!(seq.len(), 3);
    assert_eq!(seq.frame(0).unwrap()[3], 1.0);
    assert_eq!(seq.frame(2).unwrap()[21], 0.125);

    let plain = write_csv(dir.path(), "b.csv", &format!("{body}\n"));
    assert_eq!(format::import_csv(&plain, 900.0, limits).unwrap(), seq);

    let wide = write_csv(dir.path(), "c.csv", &format!("{body},0\n"));
    assert!(matches!(
        format::import_csv(&wide, 900.0, limits),
        Err(FormatError::Csv { .. })
    ));

    let dense: Vec<(usize, f32)> = (0..9).map(|c| (c, 0.5)).collect();
    let too_many = write_csv(
        dir.path(),
        "d.csv",
        &format!("{body}\n{}\n", csv_row(&dense)),
    );
    match format::import_csv(&too_many, 900.0, limits) {
        Err(FormatError::Csv { line: 4, .. }) => {}
        other => panic!("{other:?}"),
    }

    let garbage = write_csv(dir.path(), "e.csv", &format!("{body}\n{}\n", header));
    assert!(matches!(
        format::import_csv(&garbage, 900.0, limits),
        Err(FormatError::Csv { .. })
    ));
}
