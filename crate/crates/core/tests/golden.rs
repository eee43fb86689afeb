//! Frozen artifacts: conformance vectors, a model file and an encoded frame.
//!
//! Regenerate with `cargo test -p lean3d --test golden -- --ignored`; any
//! diff in the checked-in files is a wire-format change.

use std::fs;
use std::path::{Path, PathBuf};

use lean3d::codec::{decode_frame, encode_frame, CodecConfig};
use lean3d::entropy::vectors::{
    check_cdf_vectors, check_rans_vectors, load_cdf_vectors, load_rans_vectors, write_vectors,
    CDF_VECTOR_FILE, RANS_VECTOR_FILE,
};
use lean3d::entropy::TEMPLATE_COUNTS;
use lean3d::geometry::{parse_kitti_bin, quantize, write_kitti_bin, PointCloud};
use lean3d::hierarchy::{build_pyramid, default_depth};
use lean3d::predictor::{fit_table, LogitTableModel};
use lean3d::synth::structured_scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POINTS: &str = "golden_points.bin";
const MODEL: &str = "golden_model.l3m";
const FRAME: &str = "golden_frame.l3d";
const POS_Q: u32 = 4;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn read(name: &str) -> Vec<u8> {
    fs::read(data_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn golden_points() -> PointCloud {
    parse_kitti_bin(&read(POINTS)).unwrap()
}

fn golden_model() -> LogitTableModel {
    LogitTableModel::from_bytes(&read(MODEL)).unwrap()
}

#[test]
#[ignore]
fn regenerate() {
    let dir = data_dir();
    write_vectors(&dir, 200, 50).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cloud = structured_scene(&mut rng, 4000, 400.0);
    fs::write(dir.join(POINTS), write_kitti_bin(&cloud)).unwrap();

    let corpus: Vec<_> = (0..3)
        .map(|_| {
            let q = quantize(&structured_scene(&mut rng, 4000, 400.0), POS_Q as f64).unwrap();
            let pyr = build_pyramid(&q.voxels, default_depth(&q.voxels)).unwrap();
            let l = pyr.depth();
            (pyr, l)
        })
        .collect();
    let model = fit_table(&corpus).unwrap();
    model.save(&dir.join(MODEL)).unwrap();

    // Round through f32 exactly as the checked-in points will be read back.
    let cloud = golden_points();
    let bytes = encode_frame(&cloud, &CodecConfig::with_pos_q(POS_Q), &model).unwrap();
    fs::write(dir.join(FRAME), bytes).unwrap();
}

#[test]
fn cdf_vectors_match() {
    let v = load_cdf_vectors(&data_dir().join(CDF_VECTOR_FILE)).unwrap();
    assert!(v.len() >= 100, "only {} vectors", v.len());
    assert_eq!(v[0].logits, [0; 16]);
    assert_eq!(v[0].cdf[1], 60000);
    assert_eq!(v[0].cdf[16], 65536);
    check_cdf_vectors(&v).unwrap();
    let mut expected = TEMPLATE_COUNTS.to_vec();
    expected.sort_unstable();
    for rec in &v {
        let mut counts: Vec<u32> = rec.cdf.windows(2).map(|w| w[1] - w[0]).collect();
        counts.sort_unstable();
        assert_eq!(counts, expected);
    }
}

#[test]
fn rans_vectors_match() {
    let v = load_rans_vectors(&data_dir().join(RANS_VECTOR_FILE)).unwrap();
    assert!(v.len() > 10);
    check_rans_vectors(&v).unwrap();
}

#[test]
fn model_file_is_canonical() {
    let bytes = read(MODEL);
    let model = LogitTableModel::from_bytes(&bytes).unwrap();
    assert!(!model.is_empty());
    assert_eq!(model.to_bytes(), bytes);
}

#[test]
fn frame_decodes_to_quantized_points() {
    let dec = decode_frame(&read(FRAME), &golden_model()).unwrap();
    let expect = quantize(&golden_points(), POS_Q as f64).unwrap();
    assert_eq!(dec.cloud, expect);
}

#[test]
fn frame_reencodes_byte_identically() {
    let bytes = encode_frame(&golden_points(), &CodecConfig::with_pos_q(POS_Q), &golden_model()).unwrap();
    assert_eq!(bytes, read(FRAME));
}

#[test]
fn frame_rejects_uniform_model() {
    let err = decode_frame(&read(FRAME), &LogitTableModel::uniform()).unwrap_err();
    assert!(err.is_integrity(), "{err}");
}
