//! Dataset generation and ingestion: the SYNTH generator, random-label
//! variants, MNIST IDX reading (optionally gzipped), deterministic minibatch
//! streams, and CSV/JSON persistence for generated datasets.

use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    True,
    Random,
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelMode::True => write!(f, "true"),
            LabelMode::Random => write!(f, "random"),
        }
    }
}

/// An immutable labelled dataset. Inputs are stored row-major as an
/// n x dim matrix; labels are 1-based class indices in {1..K}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub n_classes: usize,
    pub split: Split,
    pub label_mode: LabelMode,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        n_classes: usize,
        split: Split,
        label_mode: LabelMode,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("dataset must be nonempty".to_string()));
        }
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: inputs.len(),
            });
        }
        if labels.iter().any(|&y| y == 0 || y > n_classes) {
            return Err(Error::Data(format!("labels must lie in 1..={n_classes}")));
        }
        Ok(Dataset {
            inputs,
            labels,
            dim,
            n_classes,
            split,
            label_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, idx: usize) -> &[f64] {
        &self.inputs[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// SYNTH generator settings. Defaults: 50 training and 100 heldout points of
/// dimension 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_heldout: usize,
    pub d: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 50,
            n_heldout: 100,
            d: 4,
            seed: 0,
        }
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates the SYNTH datasets: inputs are standard Gaussian in d
/// dimensions, labels come from a random linear separator through the
/// origin. The separator direction is uniform on the sphere and its norm is
/// the absolute value of a standard normal draw. Label 1 is the nonnegative
/// side, label 2 the negative side.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset, Vec<f64>)> {
    if cfg.n_train == 0 || cfg.n_heldout == 0 || cfg.d == 0 {
        return Err(Error::config("SYNTH sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut direction = standard_normal_vec(&mut rng, cfg.d);
    let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Data("degenerate separator direction".to_string()));
    }
    let scale: f64 = rng.sample::<f64, _>(StandardNormal);
    let scale = scale.abs();
    for v in direction.iter_mut() {
        *v *= scale / norm;
    }

    let mut make = |n: usize, split: Split| -> Dataset {
        let inputs = standard_normal_vec(&mut rng, n * cfg.d);
        let labels = (0..n)
            .map(|i| {
                let x = &inputs[i * cfg.d..(i + 1) * cfg.d];
                let dot: f64 = x.iter().zip(direction.iter()).map(|(a, b)| a * b).sum();
                if dot >= 0.0 {
                    1
                } else {
                    2
                }
            })
            .collect();
        Dataset {
            inputs,
            labels,
            dim: cfg.d,
            n_classes: 2,
            split,
            label_mode: LabelMode::True,
        }
    };

    let train = make(cfg.n_train, Split::Train);
    let heldout = make(cfg.n_heldout, Split::Heldout);
    Ok((train, heldout, direction))
}

/// Replaces the labels with i.i.d. uniform draws from {1..K}, leaving the
/// inputs untouched.
pub fn randomize_labels(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::config("need at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..ds.len())
        .map(|_| 1 + (rng.gen::<u64>() % k as u64) as usize)
        .collect();
    Ok(Dataset {
        inputs: ds.inputs.clone(),
        labels,
        dim: ds.dim,
        n_classes: k,
        split: ds.split,
        label_mode: LabelMode::Random,
    })
}

/// Paths to the four MNIST IDX files (raw or gzip-compressed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MnistPaths {
    pub train_images: std::path::PathBuf,
    pub train_labels: std::path::PathBuf,
    pub test_images: std::path::PathBuf,
    pub test_labels: std::path::PathBuf,
}

// Opens a file, transparently decompressing if the gzip magic is present.
fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let full = std::io::Cursor::new(magic[..n].to_vec()).chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(full)))
    } else {
        Ok(Box::new(full))
    }
}

fn read_u32_be(reader: &mut dyn Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::Truncated(format!("{what}: missing header word")))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_idx_images(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut reader = open_maybe_gzip(path)?;
    let magic = read_u32_be(reader.as_mut(), "image file")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(reader.as_mut(), "image count")? as usize;
    let rows = read_u32_be(reader.as_mut(), "image rows")? as usize;
    let cols = read_u32_be(reader.as_mut(), "image cols")? as usize;
    let dim = rows * cols;
    let mut raw = vec![0u8; count * dim];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Truncated(format!("image payload: expected {} bytes", count * dim)))?;
    let inputs = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((inputs, count, dim))
}

fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = open_maybe_gzip(path)?;
    let magic = read_u32_be(reader.as_mut(), "label file")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(reader.as_mut(), "label count")? as usize;
    let mut raw = vec![0u8; count];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Truncated(format!("label payload: expected {count} bytes")))?;
    // Stored labels are 0..=9; shift to the crate-wide 1-based convention.
    Ok(raw.iter().map(|&b| b as usize + 1).collect())
}

fn load_idx_pair(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let (mut inputs, count, dim) = read_idx_images(images)?;
    let mut labels = read_idx_labels(labels)?;
    if count != labels.len() {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if let Some(limit) = limit {
        let keep = limit.min(count);
        if keep == 0 {
            return Err(Error::Data(
                "limit must keep at least one example".to_string(),
            ));
        }
        inputs.truncate(keep * dim);
        labels.truncate(keep);
    }
    Dataset::new(inputs, labels, dim, 10, split, LabelMode::True)
}

/// Loads the MNIST train/heldout pair from IDX files. `limit` truncates both
/// splits deterministically from the front for desk-scale runs.
pub fn mnist_load(paths: &MnistPaths, limit: Option<usize>) -> Result<(Dataset, Dataset)> {
    let train = load_idx_pair(
        &paths.train_images,
        &paths.train_labels,
        limit,
        Split::Train,
    )?;
    let heldout = load_idx_pair(
        &paths.test_images,
        &paths.test_labels,
        limit,
        Split::Heldout,
    )?;
    Ok((train, heldout))
}

/// A seeded permutation of 0..n partitioned into ceil(n/batch_size) batches;
/// the last batch may be short. Every index appears exactly once.
pub fn minibatch_stream(n: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || batch_size == 0 || batch_size > n {
        return Err(Error::config(format!(
            "need 1 <= batch_size <= n, got batch_size={batch_size}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    Ok(perm.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Sidecar metadata written next to generated SYNTH CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub config: SynthConfig,
    pub hyperplane: Vec<f64>,
    pub label_mode: LabelMode,
    pub label_seed: Option<u64>,
}

/// Writes a dataset as CSV with header `x1..xd,label`.
pub fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    let mut header: Vec<String> = (1..=ds.dim).map(|i| format!("x{i}")).collect();
    header.push("label".to_string());
    writeln!(file, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.input(i).iter().map(|v| format!("{v}")).collect();
        row.push(ds.labels[i].to_string());
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(
    path: &Path,
    n_classes: usize,
    split: Split,
    label_mode: LabelMode,
) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let dim = reader.headers()?.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Data(format!(
            "{}: no feature columns",
            path.display()
        )));
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(Error::Data(format!(
                "{}: row has {} fields, expected {}",
                path.display(),
                record.len(),
                dim + 1
            )));
        }
        for field in record.iter().take(dim) {
            inputs.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: bad feature: {e}", path.display())))?,
            );
        }
        labels.push(
            record[dim]
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("{}: bad label: {e}", path.display())))?,
        );
    }
    Dataset::new(inputs, labels, dim, n_classes, split, label_mode)
}

pub fn write_sidecar(sidecar: &SynthSidecar, path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    serde_json::to_writer_pretty(&mut file, sidecar)?;
    file.write_all(b"\n")?;
    Ok(())
}
