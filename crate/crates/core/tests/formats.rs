use gsd_core::data::{decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, EmbeddingBatch};
use gsd_core::model::{decode_model, encode_model, read_model, write_model, Architecture, EncoderKind, HeadKind, Model};
use gsd_core::GsdError;

fn sample_model() -> Model {
    let arch = Architecture {
        encoder: EncoderKind::Mlp1,
        input_dim: 3,
        hidden_dim: 4,
        feature_dim: 2,
        num_classes: 3,
    };
    let mut m = Model::init(arch, HeadKind::Gsd, 11).unwrap();
    m.head.alpha = 1.25;
    m.head.beta = -0.5;
    m
}

#[test]
fn empty_and_single_sample_batches_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let empty = EmbeddingBatch::new(vec![], 4, vec![], 3).unwrap();
    let single = EmbeddingBatch::new(vec![0.5, -1.0, f32::MIN_POSITIVE, 3.0e38], 4, vec![2], 3).unwrap();
    for (name, batch) in [("empty", empty), ("single", single)] {
        let path = dir.path().join(format!("{name}.gsde"));
        write_embeddings(&batch, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, encode_embeddings(&batch));
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back, batch);
        assert_eq!(encode_embeddings(&back), bytes);
    }
}

#[test]
fn every_gsde_truncation_is_a_named_error() {
    let batch = EmbeddingBatch::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, vec![0, 1], 2).unwrap();
    let bytes = encode_embeddings(&batch);
    for len in 0..bytes.len() {
        let err = decode_embeddings(&bytes[..len]).unwrap_err();
        match err {
            GsdError::Parse { offset, .. } => assert!(offset as usize <= len, "len {len}: {err}"),
            other => panic!("len {len}: unexpected {other:?}"),
        }
    }
}

#[test]
fn gsde_header_errors() {
    let batch = EmbeddingBatch::new(vec![1.0, 2.0], 2, vec![0], 1).unwrap();
    let bytes = encode_embeddings(&batch);

    let mut v = bytes.clone();
    v[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert!(decode_embeddings(&v).unwrap_err().to_string().contains("version"));

    let mut d = bytes.clone();
    d[12..16].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_embeddings(&d), Err(GsdError::Parse { offset: 12, .. })));

    let mut nan = bytes.clone();
    nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_embeddings(&nan), Err(GsdError::Parse { offset: 20, .. })));

    let err = decode_embeddings(b"GSDM\x01\x00\x00\x00").unwrap_err();
    assert!(matches!(err, GsdError::MagicMismatch { .. }));
    assert!(err.to_string().contains("GSDE"));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = sample_model();
    let path = dir.path().join("m.gsdm");
    write_model(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = read_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_model(&back), bytes);
    assert_eq!(back.head.beta.to_bits(), (-0.5f64).to_bits());
}

#[test]
fn every_checkpoint_truncation_is_a_named_error() {
    let bytes = encode_model(&sample_model());
    for len in 0..bytes.len() {
        match decode_model(&bytes[..len]) {
            Err(GsdError::Parse { .. }) => {}
            other => panic!("len {len}: unexpected {other:?}"),
        }
    }
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0]);
    let err = decode_model(&trailing).unwrap_err();
    assert!(err.to_string().contains("trailing"), "{err}");
}

#[test]
fn checkpoint_header_errors() {
    let bytes = encode_model(&sample_model());

    let mut magic = bytes.clone();
    magic[..4].copy_from_slice(b"GSDE");
    assert!(matches!(decode_model(&magic), Err(GsdError::MagicMismatch { .. })));

    let mut enc = bytes.clone();
    enc[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(decode_model(&enc), Err(GsdError::Parse { offset: 8, .. })));

    let mut head = bytes.clone();
    head[12..16].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(decode_model(&head), Err(GsdError::Parse { offset: 12, .. })));

    let mut count = bytes.clone();
    count[20..24].copy_from_slice(&3u32.to_le_bytes());
    assert!(matches!(decode_model(&count), Err(GsdError::Parse { offset: 20, .. })));

    // alpha is the second-to-last f64
    let mut alpha = bytes.clone();
    let at = alpha.len() - 16;
    alpha[at..at + 8].copy_from_slice(&0.0f64.to_le_bytes());
    assert!(decode_model(&alpha).is_err());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_model(dir.path().join("nope.gsdm")), Err(GsdError::Io(_))));
    assert!(matches!(read_embeddings(dir.path().join("nope.gsde")), Err(GsdError::Io(_))));
}
