//! Bit-exact round trips and fault injection for every on-disk format.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visocc_cli::formats::*;
use visocc_core::queries::QueryMeta;
use visocc_core::{generate_queries, OffsetMode, PointCloud, QueryKind, QuerySet, Vec3};
use visocc_model::{Head, LossWeighting, Model, ModelConfig, ObjectiveConfig};
use visocc_nn::{AdamWConfig, AdamWState};
use visocc_train::Scan;

fn random_scan(seed: u64, n: usize, intensity: bool, labels: bool) -> Scan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = |lo: f64, hi: f64| f64::from(rng.random_range(lo..hi) as f32);
    let points: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(f(-50.0, 50.0), f(-50.0, 50.0), f(-3.0, 8.0)))
        .collect();
    let intensities = intensity.then(|| (0..n).map(|_| f(0.0, 1.0)).collect());
    let labels = labels.then(|| (0..n as u32).map(|i| i % 5).collect());
    let cloud = PointCloud::new(
        Vec3::new(0.0, 0.0, f64::from(1.8f32)),
        points,
        intensities,
        labels,
    )
    .unwrap();
    Scan { index: seed, cloud }
}

fn roundtrip_scan(scan: &Scan) -> Scan {
    let header = ScanHeader::parse(&ScanHeader::of(scan).render()).unwrap();
    let labels = scan.cloud.labels().map(encode_labels);
    decode_scan(
        &encode_scan_payload(&scan.cloud),
        &header,
        labels.as_deref(),
    )
    .unwrap()
}

fn bits(cloud: &PointCloud) -> Vec<u64> {
    let mut v: Vec<u64> = cloud
        .points()
        .iter()
        .flat_map(|p| [p.x, p.y, p.z])
        .map(f64::to_bits)
        .collect();
    v.extend(
        cloud
            .intensities()
            .unwrap_or(&[])
            .iter()
            .map(|i| i.to_bits()),
    );
    v
}

#[test]
fn thousand_point_scan_roundtrips_bitwise() {
    let scan = random_scan(3, 1000, true, true);
    let back = roundtrip_scan(&scan);
    assert_eq!(bits(&back.cloud), bits(&scan.cloud));
    assert_eq!(back.cloud.labels(), scan.cloud.labels());
    assert_eq!(back.cloud.sensor_origin(), scan.cloud.sensor_origin());
    assert_eq!(back.index, scan.index);
}

#[test]
fn empty_and_truncated_payloads_are_rejected() {
    let header = ScanHeader::of(&random_scan(1, 4, true, false));
    assert_eq!(
        decode_scan(&[], &header, None).unwrap_err().to_string(),
        "empty scan"
    );
    let payload = encode_scan_payload(&random_scan(1, 4, true, false).cloud);
    let err = decode_scan(&payload[..payload.len() - 3], &header, None).unwrap_err();
    assert!(
        matches!(
            err,
            FormatError::Truncated {
                len: 61,
                record: 16
            }
        ),
        "{err}"
    );
}

#[test]
fn zero_intensities_stay_present() {
    let mut scan = random_scan(5, 10, false, false);
    scan.cloud = PointCloud::new(
        scan.cloud.sensor_origin(),
        scan.cloud.points().to_vec(),
        Some(vec![0.0; 10]),
        None,
    )
    .unwrap();
    let back = roundtrip_scan(&scan);
    assert_eq!(back.cloud.intensities(), Some(&[0.0; 10][..]));
    let absent = roundtrip_scan(&random_scan(5, 10, false, false));
    assert_eq!(absent.cloud.intensities(), None);
}

#[test]
fn scan_files_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scan = random_scan(9, 50, true, true);
    let path = write_scan(dir.path(), &scan).unwrap();
    assert_eq!(read_scan(&path).unwrap(), scan);
    assert_eq!(read_scan_dir(dir.path()).unwrap(), vec![scan]);
}

fn sample_queries(seed: u64) -> QuerySet {
    let scan = random_scan(seed, 200, true, false);
    generate_queries(&scan.cloud, 0.1, OffsetMode::Uniform, seed)
        .queries
        .quantized_f32()
}

#[test]
fn query_sets_roundtrip_and_sentinel_means_none() {
    let qs = sample_queries(11);
    assert!(qs.intensity_target.iter().any(Option::is_none));
    let back = decode_queries(&encode_queries(&qs)).unwrap();
    assert_eq!(back, qs);
    assert_eq!(encode_queries(&back), encode_queries(&qs));

    let mut one = QuerySet::empty(QueryMeta {
        delta: 0.1,
        mode: OffsetMode::Fixed,
        seed: 1,
    });
    one.positions.push(Vec3::new(0.0, 0.0, 0.5));
    one.occupancy.push(false);
    one.intensity_target.push(None);
    one.kind.push(QueryKind::Sight);
    one.source_index.push(0);
    let bytes = encode_queries(&one);
    // x, y, z, occupancy byte, then the intensity float.
    let at = bytes.len() - 32 - 22 + 13;
    assert_eq!(
        f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()),
        -1.0
    );
    assert_eq!(decode_queries(&bytes).unwrap().intensity_target, vec![None]);
}

#[test]
fn none_intensity_is_masked_from_the_intensity_loss() {
    let cloud = PointCloud::new(
        Vec3::new(0.0, 0.0, 1.8),
        vec![Vec3::new(1.0, 0.0, 0.0)],
        Some(vec![0.5]),
        None,
    )
    .unwrap();
    let mut qs = QuerySet::empty(QueryMeta {
        delta: 0.1,
        mode: OffsetMode::Fixed,
        seed: 0,
    });
    for (z, occ, i, kind) in [
        (0.05, true, Some(0.5), QueryKind::Behind),
        (0.3, false, None, QueryKind::Front),
    ] {
        qs.positions.push(Vec3::new(1.0, 0.0, z));
        qs.occupancy.push(occ);
        qs.intensity_target.push(i);
        qs.kind.push(kind);
        qs.source_index.push(0);
    }
    let qs = decode_queries(&encode_queries(&qs)).unwrap();
    let model = Model::<f64>::init(
        ModelConfig {
            k: 1,
            ..Default::default()
        },
        0,
    );
    let scan = model.prepare(&cloud, &qs);
    assert_eq!(scan.targets.intensity, vec![Some(f64::from(0.5f32)), None]);
    let w = visocc_model::objective_weights(&[&scan.targets], LossWeighting::PerBall).unwrap();
    assert_eq!(w[0].intensity, vec![1.0, 0.0]);
}

#[test]
fn corrupted_query_file_fails_checksum() {
    let bytes = encode_queries(&sample_queries(2));
    for at in [0, 10, bytes.len() / 2, bytes.len() - 33, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[at] ^= 0x01;
        assert!(
            matches!(decode_queries(&bad), Err(FormatError::Checksum)),
            "byte {at}"
        );
    }
}

fn trained_snapshot() -> (Model<f32>, AdamWState<f32>) {
    let mut model = Model::<f32>::init(ModelConfig::default(), 4);
    let mut opt = AdamWState::new(AdamWConfig::default());
    let scan = random_scan(4, 120, true, false);
    let qs = generate_queries(&scan.cloud, 0.1, OffsetMode::Uniform, 4).queries;
    let prepared = model.prepare(&scan.cloud, &qs);
    let w = visocc_model::objective_weights(&[&prepared.targets], LossWeighting::PerBall).unwrap();
    for _ in 0..2 {
        model.zero_grad();
        model
            .accumulate(&prepared, &w[0], &ObjectiveConfig::default())
            .unwrap();
        opt.step(&mut model.params_mut(), 1e-3).unwrap();
    }
    (model, opt)
}

fn param_bits(m: &Model<f32>) -> Vec<u32> {
    m.layers()
        .flat_map(|l| {
            l.weight
                .data()
                .iter()
                .chain(&l.bias)
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn fresh_model_checkpoint_roundtrips_bitwise() {
    let model = Model::<f32>::init(ModelConfig::default(), 17);
    let opt = AdamWState::new(AdamWConfig::default());
    let snap = decode_checkpoint(&encode_checkpoint(&model, &opt)).unwrap();
    assert_eq!(param_bits(&snap.model), param_bits(&model));
    assert_eq!(snap.model.config, model.config);
    assert_eq!(snap.optimizer, opt);
}

#[test]
fn trained_checkpoint_keeps_optimizer_state() {
    let (model, opt) = trained_snapshot();
    let bytes = encode_checkpoint(&model, &opt);
    let snap = decode_checkpoint(&bytes).unwrap();
    assert_eq!(param_bits(&snap.model), param_bits(&model));
    assert_eq!(snap.optimizer, opt);
    assert_eq!(snap.optimizer.step, 2);
    assert_eq!(encode_checkpoint(&snap.model, &snap.optimizer), bytes);
}

#[test]
fn checkpoint_faults_are_hard_errors() {
    let (model, opt) = trained_snapshot();
    let bytes = encode_checkpoint(&model, &opt);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..32 {
        let at = rng.random_range(0..bytes.len());
        let mut bad = bytes.clone();
        bad[at] = bad[at].wrapping_add(1);
        assert!(
            matches!(decode_checkpoint(&bad), Err(FormatError::Checksum)),
            "byte {at}"
        );
    }
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());

    // A different version with a valid checksum.
    let body = &bytes[..bytes.len() - 32];
    let mut v2 = body.to_vec();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    v2.extend_from_slice(&sha2_digest(&v2));
    assert!(matches!(
        decode_checkpoint(&v2),
        Err(FormatError::Version {
            found: 2,
            expected: 1
        })
    ));

    let other = ModelConfig {
        head: Head::BallMax,
        ..ModelConfig::default()
    };
    let err = decode_checkpoint_for(&bytes, &other).unwrap_err();
    assert!(matches!(err, FormatError::Architecture(_)), "{err}");
    assert!(err.to_string().contains("head"));
    decode_checkpoint_for(&bytes, &ModelConfig::default()).unwrap();
}

fn sha2_digest(bytes: &[u8]) -> Vec<u8> {
    hex_decode(&sha256_hex(bytes))
}

fn hex_decode(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn ply_lists_every_vertex_and_reads_back() {
    let vertices: Vec<PlyVertex> = (0..25)
        .map(|i| PlyVertex {
            position: Vec3::new(f64::from(i as f32 * 0.5), -1.25, 3.0),
            color: [i as u8, 2, 3],
            occupancy: if i < 10 { -1.0 } else { i as f32 / 25.0 },
            source: u8::from(i >= 10),
        })
        .collect();
    let text = encode_ply(&vertices);
    assert!(text.starts_with("ply\nformat ascii 1.0\n"));
    assert!(text.contains("element vertex 25\n"));
    assert_eq!(decode_ply(&text).unwrap(), vertices);
}

#[test]
fn manifest_is_sorted_and_skips_itself() {
    let dir = tempfile::tempdir().unwrap();
    write_file(&dir.path().join("b.txt"), b"bee").unwrap();
    write_file(&dir.path().join("a/z.txt"), b"zed").unwrap();
    write_manifest(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    let names: Vec<&str> = text
        .lines()
        .map(|l| l.split_once("  ").unwrap().1)
        .collect();
    assert_eq!(names, ["a/z.txt", "b.txt"]);
    assert!(text.starts_with(&sha256_hex(b"zed")));
    assert_eq!(manifest(dir.path()).unwrap(), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scans_roundtrip(seed in any::<u64>(), n in 1usize..300, intensity in any::<bool>(), labels in any::<bool>()) {
        let scan = random_scan(seed, n, intensity, labels);
        let back = roundtrip_scan(&scan);
        prop_assert_eq!(bits(&back.cloud), bits(&scan.cloud));
        prop_assert_eq!(back.cloud.labels(), scan.cloud.labels());
    }

    #[test]
    fn query_sets_roundtrip(seed in any::<u64>()) {
        let qs = sample_queries(seed);
        prop_assert_eq!(decode_queries(&encode_queries(&qs)).unwrap(), qs);
    }

    #[test]
    fn checkpoints_roundtrip(seed in any::<u64>(), k in 1usize..24, head in 0usize..3, intensity in any::<bool>()) {
        let config = ModelConfig { k, head: Head::ALL[head], use_intensity: intensity, ..Default::default() };
        let model = Model::<f32>::init(config, seed);
        let opt = AdamWState::new(AdamWConfig::default());
        let bytes = encode_checkpoint(&model, &opt);
        let snap = decode_checkpoint_for(&bytes, &config).unwrap();
        prop_assert_eq!(param_bits(&snap.model), param_bits(&model));
        prop_assert_eq!(encode_checkpoint(&snap.model, &snap.optimizer), bytes);
    }
}
