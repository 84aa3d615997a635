use std::collections::BTreeMap;
use std::fs;

use cloudgate::ingest::manifest::LoadedScene;
use cloudgate::ingest::raster::{write_png_u16, write_tiff_f32};
use cloudgate::ingest::resample::resize_bicubic;
use cloudgate::ingest::{
    compose_bands, derive_label, label_from_fraction, load_manifest, preprocess_image, sar_composite, DerivedLabel,
    IngestError, LabelThresholds, MaskScheme, Modality, Normalization, Radiometry, Raster, Scene, SceneLabel, Sensor,
    Split,
};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct ResampleCase {
    width: usize,
    height: usize,
    out_width: usize,
    out_height: usize,
    input: Vec<f32>,
    output: Vec<f32>,
}

#[derive(Deserialize)]
struct ResampleGolden {
    cases: Vec<ResampleCase>,
}

#[test]
fn bicubic_matches_reference_resampler() {
    let golden: ResampleGolden =
        serde_json::from_str(include_str!("data/resample_golden.json")).unwrap();
    for c in &golden.cases {
        let out = resize_bicubic(&c.input, c.width, c.height, c.out_width, c.out_height);
        let worst = out
            .iter()
            .zip(&c.output)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(
            worst <= 1e-5,
            "{}x{} -> {}x{}: max error {worst:e}",
            c.width,
            c.height,
            c.out_width,
            c.out_height
        );
    }
}

/// Every band's pixels hold a value that identifies the band.
fn tagged_scene(bands: &[(&str, f32)], w: usize, h: usize) -> Scene {
    Scene {
        id: "tagged".into(),
        sensor: Sensor::Landsat8,
        bands: bands
            .iter()
            .map(|&(n, v)| (n.to_string(), Raster::filled(w, h, v)))
            .collect(),
        label: SceneLabel::Unknown,
        cloud_fraction: None,
    }
}

#[test]
fn false_color_channel_order_is_swir_nir_red() {
    let mut scene = tagged_scene(&[("B2", 2.0), ("B3", 3.0), ("B4", 4.0), ("B5", 5.0), ("B6", 6.0)], 10, 10);
    // one extreme pixel per band keeps the 2-98 stretch from clipping the tags
    for raster in scene.bands.values_mut() {
        raster.data[0] = 0.0;
        raster.data[99] = 10.0;
    }
    let c = compose_bands(&scene, Modality::L8B6B5B4, &Radiometry::default()).unwrap();
    let mid = |ch: usize| c.channel(ch)[50];
    assert!(mid(0) > mid(1) && mid(1) > mid(2), "{} {} {}", mid(0), mid(1), mid(2));
    // recover the band tags through the shared linear stretch
    let pooled: Vec<f32> = ["B6", "B5", "B4"]
        .iter()
        .flat_map(|b| scene.bands[*b].data.clone())
        .collect();
    let lo = cloudgate::ingest::percentile(&pooled, 2.0);
    let hi = cloudgate::ingest::percentile(&pooled, 98.0);
    for (ch, tag) in [6.0f32, 5.0, 4.0].into_iter().enumerate() {
        assert!((mid(ch) * (hi - lo) + lo - tag).abs() < 1e-5);
    }

    let rgb = compose_bands(&scene, Modality::L8Rgb, &Radiometry::default()).unwrap();
    let m = |ch: usize| rgb.channel(ch)[50];
    assert!(m(0) > m(1) && m(1) > m(2));
}

#[test]
fn sentinel2_rgb_uses_b4_b3_b2() {
    let scene = tagged_scene(&[("B2", 300.0), ("B3", 600.0), ("B4", 900.0)], 4, 4);
    let c = compose_bands(&scene, Modality::S2Rgb, &Radiometry::default()).unwrap();
    assert!((c.channel(0)[0] - 0.3).abs() < 1e-6);
    assert!((c.channel(1)[0] - 0.2).abs() < 1e-6);
    assert!((c.channel(2)[0] - 0.1).abs() < 1e-6);
    let bright = tagged_scene(&[("B2", 3000.0), ("B3", 4000.0), ("B4", 20000.0)], 2, 2);
    let c = compose_bands(&bright, Modality::S2Rgb, &Radiometry::default()).unwrap();
    assert!(c.channels.iter().all(|&v| v == 1.0));
}

#[test]
fn missing_band_is_reported() {
    let scene = tagged_scene(&[("B4", 1.0), ("B5", 1.0)], 2, 2);
    assert!(matches!(
        compose_bands(&scene, Modality::L8B6B5B4, &Radiometry::default()),
        Err(IngestError::MissingBand { band, .. }) if band == "B6"
    ));
}

proptest! {
    #[test]
    fn sar_third_channel_is_exact_mean(
        vv in prop::collection::vec(-40.0f32..10.0, 16),
        vh in prop::collection::vec(-40.0f32..10.0, 16),
    ) {
        let mut scene = tagged_scene(&[], 4, 4);
        scene.bands.insert("VV".into(), Raster::new(4, 4, vv));
        scene.bands.insert("VH".into(), Raster::new(4, 4, vh));
        let c = sar_composite(&scene, &Radiometry::default()).unwrap();
        for i in 0..16 {
            let (a, b, m) = (c.channel(0)[i], c.channel(1)[i], c.channel(2)[i]);
            prop_assert_eq!(m, (a + b) * 0.5);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn composites_stay_in_unit_range(values in prop::collection::vec(-1e4f32..3e4, 27), m in 0usize..4) {
        let modality = Modality::ALL[m];
        let names: Vec<&str> = match modality {
            Modality::S1SarFc => vec!["VV", "VH"],
            other => other.bands().to_vec(),
        };
        let mut scene = tagged_scene(&[], 3, 3);
        for (k, n) in names.iter().enumerate() {
            scene.bands.insert(n.to_string(), Raster::new(3, 3, values[k * 9..(k + 1) * 9].to_vec()));
        }
        let c = compose_bands(&scene, modality, &Radiometry::default()).unwrap();
        prop_assert_eq!(c.channels.len(), 27);
        prop_assert!(c.channels.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn more_cloud_never_flips_cloudy_to_clear(a in 0.0f32..=1.0, b in 0.0f32..=1.0) {
        let t = LabelThresholds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rank = |l: DerivedLabel| match l {
            DerivedLabel::Clear => 0,
            DerivedLabel::Excluded => 1,
            DerivedLabel::Cloudy => 2,
        };
        prop_assert!(rank(label_from_fraction(lo, &t)) <= rank(label_from_fraction(hi, &t)));
    }
}

#[test]
fn mask_thresholds() {
    let t = LabelThresholds::default();
    let mut mask = Raster::filled(10, 10, 0.0);
    assert_eq!(derive_label(&mask, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Clear);
    // shadow pixels are not cloud
    mask.data[..50].iter_mut().for_each(|v| *v = 3.0);
    assert_eq!(derive_label(&mask, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Clear);
    mask.data[0] = 2.0;
    assert_eq!(derive_label(&mask, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Excluded);
    mask.data[1..5].iter_mut().for_each(|v| *v = 1.0);
    assert_eq!(derive_label(&mask, MaskScheme::CloudSen12, &t).unwrap(), DerivedLabel::Cloudy);
    let mut sparcs = Raster::filled(4, 5, 4.0);
    sparcs.data[0] = 5.0;
    assert_eq!(derive_label(&sparcs, MaskScheme::Sparcs, &t).unwrap(), DerivedLabel::Cloudy);
    sparcs.data[1] = 9.0;
    assert!(matches!(
        derive_label(&sparcs, MaskScheme::Sparcs, &t),
        Err(IngestError::UnknownMaskClass { .. })
    ));
}

#[test]
fn preprocess_shape_and_standardization() {
    let scene = tagged_scene(&[("B2", 0.0), ("B3", 1500.0), ("B4", 3000.0)], 7, 5);
    let c = compose_bands(&scene, Modality::S2Rgb, &Radiometry::default()).unwrap();
    let norm = Normalization {
        mean: [0.5, 0.5, 0.5],
        std: [0.5, 0.25, 0.5],
    };
    let px = preprocess_image(&c, 8, &norm);
    assert_eq!(px.len(), 3 * 64);
    assert!(px[..64].iter().all(|&v| (v - 1.0).abs() < 1e-5));
    assert!(px[64..128].iter().all(|&v| v.abs() < 1e-5));
    assert!(px[128..].iter().all(|&v| (v + 1.0).abs() < 1e-5));
}

#[test]
fn manifest_scenes_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir(root.join("bands")).unwrap();
    write_tiff_f32(&root.join("bands/a_B4.tif"), &Raster::filled(8, 8, 900.0)).unwrap();
    write_tiff_f32(&root.join("bands/a_B3.tif"), &Raster::filled(8, 8, 600.0)).unwrap();
    // lower-resolution band gets resampled up to 8x8
    write_png_u16(&root.join("bands/a_B2.png"), &Raster::filled(4, 4, 300.0)).unwrap();
    let mut mask = Raster::filled(8, 8, 0.0);
    mask.data[..10].iter_mut().for_each(|v| *v = 1.0);
    write_png_u16(&root.join("a_mask.png"), &mask).unwrap();
    write_tiff_f32(&root.join("bands/b_VV.tif"), &Raster::filled(4, 4, -10.0)).unwrap();
    let lines = [
        r#"{"id":"a","dataset":"cloudsen12","split":"train","bands":{"B4":"bands/a_B4.tif","B3":"bands/a_B3.tif","B2":"bands/a_B2.png"},"mask":"a_mask.png"}"#,
        r#"{"id":"b","dataset":"custom","split":"test","label":"clear","bands":{"VV":"bands/b_VV.tif"}}"#,
    ];
    fs::write(root.join("m.jsonl"), lines.join("\n")).unwrap();

    let manifest = load_manifest(root.join("m.jsonl")).unwrap();
    let t = LabelThresholds::default();
    let LoadedScene { scene, excluded } = manifest.load_scene(&manifest.records[0], &t).unwrap();
    assert!(!excluded);
    assert_eq!(scene.label, SceneLabel::Cloudy);
    assert_eq!(scene.cloud_fraction, Some(10.0 / 64.0));
    let dims: BTreeMap<_, _> = scene.bands.iter().map(|(k, r)| (k.clone(), (r.width, r.height))).collect();
    assert!(dims.values().all(|&d| d == (8, 8)));
    assert!(scene.bands["B2"].data.iter().all(|&v| (v - 300.0).abs() < 1e-3));

    let b = manifest.split(Split::Test).next().unwrap();
    assert_eq!(manifest.load_scene(b, &t).unwrap().scene.label, SceneLabel::Clear);

    let problems = manifest.validate_files(&t);
    // scene a lacks the SAR bands that cloudsen12 scenes carry
    assert!(problems.iter().any(|p| p.contains("missing band VV")), "{problems:?}");
    fs::remove_file(root.join("bands/a_B3.tif")).unwrap();
    assert!(manifest.validate_files(&t).iter().any(|p| p.contains("a_B3.tif")));
}
