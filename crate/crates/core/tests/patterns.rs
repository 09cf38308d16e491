use proptest::prelude::*;
use qread::discriminators::{build_exact_rule, classical_threshold_rule, pc_classical_error, quantum_pc_error_exact};
use qread::patterns::{
    build_noisy_dataset, decode_qrbd, encode_qrbd, make_bit_pools, read_qrbd, read_sidecar, record_len, sidecar_path,
    write_qrbd, BinaryImage, ImageNoise, LabeledDataset, NoiseStrategy, Provenance, ReadoutStrategy,
};
use qread::photonstats::{ReadoutParams, Truncation};

fn dataset(d: usize, bits: &[Vec<u8>], labels: &[u8]) -> LabeledDataset {
    let images = bits.iter().map(|b| BinaryImage::from_bits(d, b).unwrap()).collect();
    LabeledDataset::new(images, labels.to_vec(), Provenance::Test).unwrap()
}

#[test]
fn hand_assembled_container_decodes() {
    // two 3×3 records: a diagonal labelled 7 and a full square labelled 2
    let mut bytes = b"QRBD".to_vec();
    bytes.extend(1u16.to_le_bytes());
    bytes.extend(3u16.to_le_bytes());
    bytes.extend(2u32.to_le_bytes());
    bytes.extend([0, 0, 0, 0]);
    bytes.extend([7, 0b1000_1000, 0b1000_0000]);
    bytes.extend([2, 0xff, 0b1000_0000]);
    let (header, images, labels) = decode_qrbd(&bytes).unwrap();
    assert_eq!((header.version, header.d, header.count), (1, 3, 2));
    assert_eq!(header.strategy, NoiseStrategy::Clean);
    assert_eq!(labels, vec![7, 2]);
    assert_eq!(images[0].to_bits(), vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
    assert_eq!(images[1].count_ones(), 9);
    let ds = dataset(3, &[images[0].to_bits(), images[1].to_bits()], &[7, 2]);
    assert_eq!(encode_qrbd(&ds, None).unwrap(), bytes);
}

#[test]
fn malformed_containers_are_rejected() {
    let ds = dataset(3, &[vec![1; 9]], &[4]);
    let good = encode_qrbd(&ds, None).unwrap();
    let mut padding = good.clone();
    *padding.last_mut().unwrap() |= 1;
    let mut reserved = good.clone();
    reserved[14] = 1;
    let mut magic = good.clone();
    magic[0] = b'X';
    let mut label = good.clone();
    label[16] = 10;
    for bad in [padding, reserved, magic, label, good[..good.len() - 1].to_vec(), [good.clone(), vec![0]].concat()] {
        assert!(decode_qrbd(&bad).is_err());
    }
}

#[test]
fn mnist_sized_test_container() {
    let n = 10_000;
    let blank = vec![vec![0u8; 784]; n];
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let bytes = encode_qrbd(&dataset(28, &blank, &labels), None).unwrap();
    assert_eq!(record_len(28), 99);
    assert_eq!(bytes.len(), 16 + n * 99);
}

#[test]
fn files_carry_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.qrbd");
    let ds = dataset(2, &[vec![1, 0, 0, 1], vec![0, 1, 1, 0]], &[3, 8]);
    write_qrbd(&path, &ds, None).unwrap();
    assert_eq!(read_qrbd(&path).unwrap(), ds);
    assert!(sidecar_path(&path).exists());
    let side = read_sidecar(&path).unwrap();
    assert_eq!((side.d, side.count), (2, 2));
}

fn arb_dataset() -> impl Strategy<Value = LabeledDataset> {
    (1usize..30, 0usize..12).prop_flat_map(|(d, n)| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(0u8..2, d * d), n),
            prop::collection::vec(0u8..10, n),
        )
            .prop_map(|(d, bits, labels)| dataset(d, &bits, &labels))
    })
}

proptest! {
    #[test]
    fn containers_round_trip(ds in arb_dataset()) {
        let d = ds.side().unwrap_or(5);
        let bytes = encode_qrbd(&ds, Some(d)).unwrap();
        prop_assert_eq!(bytes.len(), 16 + ds.len() * record_len(d));
        let (header, images, labels) = decode_qrbd(&bytes).unwrap();
        prop_assert_eq!(header.count as usize, ds.len());
        prop_assert_eq!(&images, &ds.images);
        prop_assert_eq!(&labels, &ds.labels);
        let again = dataset(d, &images.iter().map(|i| i.to_bits()).collect::<Vec<_>>(), &labels);
        prop_assert_eq!(encode_qrbd(&again, Some(d)).unwrap(), bytes);
    }
}

#[test]
fn quantum_pools_match_the_exact_error() {
    let params = ReadoutParams::new(5.0, 50, 0.5, 1.0).unwrap().with_efficiencies(0.9, 0.9).unwrap();
    let rule = build_exact_rule(&params, Truncation::Adaptive).unwrap();
    let pools = make_bit_pools(8, &params, &rule, 100_000, 100_000, ReadoutStrategy::Quantum).unwrap();
    let exact = quantum_pc_error_exact(&params, Truncation::Adaptive).unwrap().value;
    assert!((pools.pooled_error() - exact).abs() <= 3.0 * pools.pooled_stderr());
}

#[test]
fn classical_pools_match_photon_counting() {
    let params = ReadoutParams::new(20.0, 1, 0.25, 1.0).unwrap().with_efficiencies(0.8, 1.0).unwrap();
    let rule = classical_threshold_rule(&params).unwrap();
    let pools = make_bit_pools(9, &params, &rule, 100_000, 100_000, ReadoutStrategy::Classical).unwrap();
    let closed = pc_classical_error(16.0, 0.25, 1.0).unwrap().value;
    assert!((pools.pooled_error() - closed).abs() <= 3.0 * pools.pooled_stderr());
}

#[test]
fn pool_error_shrinks_as_one_over_root_size() {
    let params = ReadoutParams::new(5.0, 50, 0.5, 1.0).unwrap();
    let rule = build_exact_rule(&params, Truncation::Adaptive).unwrap();
    let se: Vec<f64> = [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&k| make_bit_pools(1, &params, &rule, k, k, ReadoutStrategy::Quantum).unwrap().pooled_stderr())
        .collect();
    for w in se.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 10f64.sqrt()).abs() < 0.3, "{ratio}");
    }
}

#[test]
fn corrupted_images_flip_at_the_pool_rate() {
    let params = ReadoutParams::new(3.0, 30, 0.4, 1.0).unwrap();
    let rule = build_exact_rule(&params, Truncation::Adaptive).unwrap();
    let pools = make_bit_pools(4, &params, &rule, 50_000, 50_000, ReadoutStrategy::Quantum).unwrap();
    let bits: Vec<u8> = (0..196).map(|k| ((k * 7) % 3 == 0) as u8).collect();
    let clean = dataset(14, &[bits], &[1]);
    let noisy = build_noisy_dataset(12, &clean, ImageNoise::Pools(&pools), None, 1000).unwrap();
    let mut wrong = [0u64; 2];
    let mut cells = [0u64; 2];
    for img in &noisy.images {
        for k in 0..img.len() {
            let truth = clean.images[0].get_index(k) as usize;
            cells[truth] += 1;
            wrong[truth] += (img.get_index(k) as usize != truth) as u64;
        }
    }
    for (bit, p_hat) in [(0, pools.p_hat0), (1, pools.p_hat1)] {
        let rate = wrong[bit] as f64 / cells[bit] as f64;
        let se = (p_hat * (1.0 - p_hat) / cells[bit] as f64).sqrt();
        assert!((rate - p_hat).abs() <= 3.0 * se, "bit {bit}: {rate} vs {p_hat}");
    }
    // a relabelled copy of the image sees the same per-bit rates
    let shuffled: Vec<u8> = (0..196).map(|k| clean.images[0].get_index((k * 31) % 196)).collect();
    let other = dataset(14, &[shuffled], &[1]);
    let noisy2 = build_noisy_dataset(13, &other, ImageNoise::Pools(&pools), None, 1000).unwrap();
    let ones: u64 = noisy2.images.iter().map(|i| i.count_ones() as u64).sum();
    let ones1: u64 = noisy.images.iter().map(|i| i.count_ones() as u64).sum();
    let total = (196 * 1000) as f64;
    let (a, b) = (ones as f64 / total, ones1 as f64 / total);
    let se = (a * (1.0 - a) / total).sqrt() * 2f64.sqrt();
    assert!((a - b).abs() <= 3.0 * se, "{a} vs {b}");
}
