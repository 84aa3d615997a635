//! Parity-bundle format checks on toy weights, plus the real-weight check
//! when `CLOUDGATE_PARITY` and `CLOUDGATE_WEIGHTS` point at exported files.

use std::path::PathBuf;

use cloudgate::encoder::{encode_image, encode_text};
use cloudgate::ingest::{preprocess_image, BandComposite, Modality, Normalization};
use cloudgate::parity::{verify_parity, ParityBundle, ParityError, ParityImage, ParityPrompt};
use cloudgate::tensorstore::{load_archive, Tensor, TensorArchive};
use cloudgate::tokenizer::{load_vocabulary, tokenize_to_length, Vocabulary};
use cloudgate::toy::{toy_archive, toy_vocabulary, ToyConfig};
use cloudgate::zeroshot::{DEFAULT_NEGATIVE_PROMPT, DEFAULT_POSITIVE_PROMPT};

/// A bundle whose reference values come from this engine itself.
fn self_bundle(archive: &TensorArchive, vocab: &Vocabulary) -> ParityBundle {
    let prompts = [DEFAULT_POSITIVE_PROMPT, DEFAULT_NEGATIVE_PROMPT, "a photo"]
        .iter()
        .map(|&text| {
            let t = tokenize_to_length(text, vocab, 77);
            ParityPrompt {
                text: text.into(),
                token_ids: t.ids[..=t.eot_position()].to_vec(),
                embedding: encode_text(&t, archive).unwrap().into_values(),
            }
        })
        .collect();
    let norm = Normalization::from_archive(archive).unwrap();
    let images = (0..2)
        .map(|k| {
            let (w, h) = (12 + k, 9);
            let channels: Vec<f32> = (0..3 * w * h).map(|i| ((i * 31 + k * 7) % 97) as f32 / 96.0).collect();
            let c = BandComposite {
                modality: Modality::S2Rgb,
                width: w,
                height: h,
                channels: channels.clone(),
            };
            let px = preprocess_image(&c, 32, &norm);
            ParityImage {
                composite: Tensor::new(vec![3, h, w], channels).unwrap(),
                pixels: Tensor::new(vec![3, 32, 32], px.clone()).unwrap(),
                embedding: encode_image(&px, archive).unwrap().into_values(),
            }
        })
        .collect();
    ParityBundle { prompts, images }
}

#[test]
fn self_generated_bundle_round_trips_and_passes() {
    let archive = toy_archive(&ToyConfig::default(), 8);
    let vocab = toy_vocabulary();
    let bundle = self_bundle(&archive, &vocab);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("parity.bundle");
    bundle.save(&path).unwrap();
    let loaded = ParityBundle::load(&path).unwrap();
    assert_eq!(loaded, bundle);
    let report = verify_parity(&loaded, &archive, &vocab).unwrap();
    assert!(report.passes(), "{report:?}");
    assert_eq!(report.max_pixel_error, 0.0);

    // other weights fail the cosine check
    let other = toy_archive(&ToyConfig::default(), 9);
    assert!(!verify_parity(&loaded, &other, &vocab).unwrap().passes());
}

#[test]
fn corrupted_or_incomplete_bundles_are_rejected() {
    let archive = toy_archive(&ToyConfig::default(), 8);
    let vocab = toy_vocabulary();
    let bundle = self_bundle(&archive, &vocab);
    let mut bytes = bundle.to_archive().to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(TensorArchive::from_bytes(&bytes).is_err());

    let mut missing = bundle.clone();
    missing.prompts.remove(1);
    assert!(matches!(
        ParityBundle::from_archive(&missing.to_archive()),
        Err(ParityError::Invalid(m)) if m.contains("clear sky")
    ));
    let mut scaled = bundle.clone();
    scaled.images[0].embedding.iter_mut().for_each(|v| *v *= 1.1);
    assert!(ParityBundle::from_archive(&scaled.to_archive()).is_err());

    let mut wrong_ids = bundle;
    wrong_ids.prompts[0].token_ids[1] += 1;
    let report = verify_parity(&wrong_ids, &archive, &vocab).unwrap();
    assert_eq!(report.token_mismatches, [DEFAULT_POSITIVE_PROMPT]);
}

#[test]
fn exported_weights_match_reference_bundle() {
    let (Some(bundle), Some(weights)) = (
        std::env::var_os("CLOUDGATE_PARITY").map(PathBuf::from),
        std::env::var_os("CLOUDGATE_WEIGHTS").map(PathBuf::from),
    ) else {
        eprintln!("SKIP: set CLOUDGATE_PARITY and CLOUDGATE_WEIGHTS to run the exporter parity check");
        return;
    };
    let vocab_path = std::env::var_os("CLOUDGATE_VOCAB")
        .map(PathBuf::from)
        .unwrap_or_else(|| weights.with_file_name("vocab.bundle"));
    let bundle = ParityBundle::load(&bundle).unwrap();
    let archive = load_archive(&weights).unwrap();
    let vocab = load_vocabulary(&vocab_path).unwrap();
    let report = verify_parity(&bundle, &archive, &vocab).unwrap();
    eprintln!("{report:?}");
    assert!(report.passes(), "{report:?}");
}
