//! IDX loader tests against the checked-in 3-image fixture.

use pacbound_core::data::{mnist_load, MnistPaths};
use pacbound_core::error::Error;
use std::path::PathBuf;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn paths(images: &str, labels: &str) -> MnistPaths {
    MnistPaths {
        train_images: fixture(images),
        train_labels: fixture(labels),
        test_images: fixture(images),
        test_labels: fixture(labels),
    }
}

#[test]
fn loads_three_image_fixture() {
    let (train, heldout) =
        mnist_load(&paths("t3-images-idx3-ubyte", "t3-labels-idx1-ubyte"), None).unwrap();
    assert_eq!(train.len(), 3);
    assert_eq!(train.dim, 784);
    assert_eq!(heldout.len(), 3);
    // Stored labels 5, 0, 9 shift to the 1-based convention.
    assert_eq!(train.labels, vec![6, 1, 10]);
    // Pixel pattern (i*83 + r*7 + c*3) % 256, scaled by 255.
    assert_eq!(train.input(0)[0], 0.0);
    assert!((train.input(0)[1] - 3.0 / 255.0).abs() < 1e-15);
    assert!((train.input(1)[0] - 83.0 / 255.0).abs() < 1e-15);
    assert!(train.inputs.iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn gzip_and_raw_agree() {
    let raw = mnist_load(&paths("t3-images-idx3-ubyte", "t3-labels-idx1-ubyte"), None).unwrap();
    let gz = mnist_load(
        &paths("t3-images-idx3-ubyte.gz", "t3-labels-idx1-ubyte.gz"),
        None,
    )
    .unwrap();
    assert_eq!(raw.0, gz.0);
    assert_eq!(raw.1, gz.1);
}

#[test]
fn limit_truncates_from_the_front() {
    let (train, _) = mnist_load(
        &paths("t3-images-idx3-ubyte", "t3-labels-idx1-ubyte"),
        Some(2),
    )
    .unwrap();
    assert_eq!(train.len(), 2);
    assert_eq!(train.labels, vec![6, 1]);
    let (full, _) =
        mnist_load(&paths("t3-images-idx3-ubyte", "t3-labels-idx1-ubyte"), None).unwrap();
    assert_eq!(&full.inputs[..2 * 784], &train.inputs[..]);
}

#[test]
fn wrong_magic_is_reported() {
    let err = mnist_load(&paths("bad-magic-idx3-ubyte", "t3-labels-idx1-ubyte"), None).unwrap_err();
    match err {
        Error::BadMagic { expected, found } => {
            assert_eq!(expected, 0x0000_0803);
            assert_eq!(found, 0x0000_0999);
        }
        other => panic!("expected BadMagic, got {other:?}"),
    }
}

#[test]
fn truncated_payload_is_reported() {
    let err = mnist_load(&paths("truncated-idx3-ubyte", "t3-labels-idx1-ubyte"), None).unwrap_err();
    assert!(matches!(err, Error::Truncated(_)), "got {err:?}");
}

#[test]
fn image_label_count_mismatch_is_reported() {
    let err = mnist_load(&paths("t3-images-idx3-ubyte", "t2-labels-idx1-ubyte"), None).unwrap_err();
    match err {
        Error::CountMismatch { images, labels } => {
            assert_eq!(images, 3);
            assert_eq!(labels, 2);
        }
        other => panic!("expected CountMismatch, got {other:?}"),
    }
}
