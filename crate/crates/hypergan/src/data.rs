//! Dataset ingestion and batching: IDX (MNIST/notMNIST), CIFAR-10 binary
//! batches, grayscale PNG class trees, and the synthetic 1D regression set.
//! Loaded inputs always land in [0,1]; no further normalization is applied
//! so attack budgets stay in pixel units.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {reason} (at byte {offset})")]
    Format {
        path: PathBuf,
        reason: String,
        offset: usize,
    },
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Class indices for classification, real targets for regression.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<u32>),
    Values(Vec<f32>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[u32]> {
        match self {
            Targets::Classes(v) => Some(v),
            Targets::Values(_) => None,
        }
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// In-memory dataset; inputs shape `[n, ...]`, row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(name: &str, inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.shape()[0] != targets.len() {
            return Err(DataError::Input(format!(
                "{} inputs vs {} targets",
                inputs.shape()[0],
                targets.len()
            )));
        }
        Ok(Dataset {
            name: name.to_string(),
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-example element count (product of non-batch dims).
    pub fn row_len(&self) -> usize {
        self.inputs.shape()[1..].iter().product()
    }

    /// Copy the selected rows into a new dataset, preserving order.
    pub fn gather(&self, idx: &[usize]) -> Dataset {
        let row = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idx.len();
        Dataset {
            name: self.name.clone(),
            inputs: Tensor::from_vec(&shape, data).expect("gather shape"),
            targets: self.targets.gather(idx),
        }
    }

    /// First `n` rows (no shuffling).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx)
    }

    /// Seeded epoch iterator: fresh shuffle per call, final short batch
    /// included.
    pub fn batches(&self, batch_size: usize, seed: u64) -> BatchIter<'_> {
        assert!(batch_size >= 1);
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        BatchIter {
            ds: self,
            order,
            batch_size,
            pos: 0,
        }
    }
}

pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor, Targets);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let b = self.ds.gather(idx);
        Some((b.inputs, b.targets))
    }
}

// ── IDX ──────────────────────────────────────────────────────────────

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    // transparent gzip
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|source| DataError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
            offset,
        })
}

/// Parse an IDX image/label file pair into a `[n,1,h,w]` dataset with
/// pixel values mapped to [0,1].
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format {
            path: images_path.to_path_buf(),
            reason: format!("bad magic 0x{magic:08x}, want 0x{IDX_IMAGES_MAGIC:08x}"),
            offset: 0,
        });
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let h = be_u32(&img, 8, images_path)? as usize;
    let w = be_u32(&img, 12, images_path)? as usize;
    let want = 16 + n * h * w;
    if img.len() < want {
        return Err(DataError::Format {
            path: images_path.to_path_buf(),
            reason: format!("truncated payload, want {want} bytes, have {}", img.len()),
            offset: img.len(),
        });
    }
    let pixels: Vec<f32> = img[16..want].iter().map(|&b| b as f32 / 255.0).collect();

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format {
            path: labels_path.to_path_buf(),
            reason: format!("bad magic 0x{magic:08x}, want 0x{IDX_LABELS_MAGIC:08x}"),
            offset: 0,
        });
    }
    let ln = be_u32(&lab, 4, labels_path)? as usize;
    if ln != n {
        return Err(DataError::Format {
            path: labels_path.to_path_buf(),
            reason: format!("{ln} labels for {n} images"),
            offset: 4,
        });
    }
    if lab.len() < 8 + n {
        return Err(DataError::Format {
            path: labels_path.to_path_buf(),
            reason: "truncated payload".into(),
            offset: lab.len(),
        });
    }
    let labels: Vec<u32> = lab[8..8 + n].iter().map(|&b| b as u32).collect();
    let inputs = Tensor::from_vec(&[n, 1, h, w], pixels).expect("idx shape");
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(&name, inputs, Targets::Classes(labels))
}

/// Re-encode a `[n,1,h,w]` dataset as an IDX pair; inverse of
/// [`load_mnist_idx`] up to the u8 quantization the loader started from.
pub fn save_mnist_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = ds.inputs.shape();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    img.extend(ds.inputs.data().iter().map(|&v| (v * 255.0).round() as u8));
    std::fs::write(images_path, img).map_err(|source| DataError::Io {
        path: images_path.to_path_buf(),
        source,
    })?;

    let labels = ds
        .targets
        .classes()
        .ok_or_else(|| DataError::Input("classification labels required".into()))?;
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend(labels.iter().map(|&l| l as u8));
    std::fs::write(labels_path, lab).map_err(|source| DataError::Io {
        path: labels_path.to_path_buf(),
        source,
    })
}

// ── CIFAR-10 binary ──────────────────────────────────────────────────

const CIFAR_RECORD: usize = 3073;

/// Parse CIFAR-10 binary batch files (1 label byte + 3072 plane-major RGB
/// bytes per record) into a `[n,3,32,32]` dataset in [0,1].
pub fn load_cifar10_binary(paths: &[PathBuf]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(DataError::Input("no CIFAR batch files given".into()));
    }
    let mut pixels: Vec<f32> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for path in paths {
        let raw = read_file(path)?;
        if raw.is_empty() || raw.len() % CIFAR_RECORD != 0 {
            return Err(DataError::Format {
                path: path.clone(),
                reason: format!("size {} not a multiple of {CIFAR_RECORD}", raw.len()),
                offset: raw.len(),
            });
        }
        for rec in raw.chunks_exact(CIFAR_RECORD) {
            labels.push(rec[0] as u32);
            pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    let inputs = Tensor::from_vec(&[n, 3, 32, 32], pixels).expect("cifar shape");
    Dataset::new("cifar10", inputs, Targets::Classes(labels))
}

// ── PNG class tree ───────────────────────────────────────────────────

/// Files skipped by [`load_image_dir`] and why.
#[derive(Debug, Default)]
pub struct SkipReport {
    pub skipped: Vec<(PathBuf, String)>,
}

/// Load a directory of class subdirectories of 28x28 grayscale images.
/// Classes are assigned by sorted subdirectory name (A-J maps to 0-9).
/// Undecodable or wrongly sized files are skipped and reported.
pub fn load_image_dir(root: &Path) -> Result<(Dataset, SkipReport)> {
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|source| DataError::Io {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(DataError::Input(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut report = SkipReport::default();
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|source| DataError::Io {
                path: dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            match image::open(&file) {
                Ok(img) => {
                    let gray = img.to_luma8();
                    if gray.width() != 28 || gray.height() != 28 {
                        report.skipped.push((
                            file,
                            format!("size {}x{}", gray.width(), gray.height()),
                        ));
                        continue;
                    }
                    pixels.extend(gray.pixels().map(|p| p.0[0] as f32 / 255.0));
                    labels.push(class as u32);
                }
                Err(e) => report.skipped.push((file, e.to_string())),
            }
        }
    }
    let n = labels.len();
    let inputs = Tensor::from_vec(&[n, 1, 28, 28], pixels).expect("image dir shape");
    let ds = Dataset::new("image_dir", inputs, Targets::Classes(labels))?;
    Ok((ds, report))
}

// ── subsetting ───────────────────────────────────────────────────────

/// Keep only the given classes, remapping labels to 0..k by the sorted
/// order of `classes`.
pub fn class_subset(ds: &Dataset, classes: &[u32]) -> Result<Dataset> {
    if classes.is_empty() {
        return Err(DataError::Input("class subset must be nonempty".into()));
    }
    let labels = ds
        .targets
        .classes()
        .ok_or_else(|| DataError::Input("class_subset needs classification labels".into()))?;
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&max) = labels.iter().max() {
        for &c in &sorted {
            if c > max {
                return Err(DataError::Input(format!("unknown class id {c}")));
            }
        }
    }
    let remap = |l: u32| sorted.binary_search(&l).ok().map(|i| i as u32);
    let idx: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| remap(l).is_some())
        .map(|(i, _)| i)
        .collect();
    let mut out = ds.gather(&idx);
    if let Targets::Classes(ref mut ls) = out.targets {
        for l in ls.iter_mut() {
            *l = remap(*l).expect("filtered");
        }
    }
    out.name = format!("{}[{}cls]", ds.name, sorted.len());
    Ok(out)
}

/// Seeded, class-stratified sample of `n` examples without replacement.
pub fn take_n(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(DataError::Input(format!(
            "cannot take {n} from {} examples",
            ds.len()
        )));
    }
    let labels = ds
        .targets
        .classes()
        .ok_or_else(|| DataError::Input("take_n needs classification labels".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = (*labels.iter().max().unwrap_or(&0) + 1) as usize;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    for group in per_class.iter_mut() {
        group.shuffle(&mut rng);
    }
    // quota: floor(n/k) each, remainder spread over the lowest class ids
    let base = n / k;
    let rem = n % k;
    let mut idx = Vec::with_capacity(n);
    for (c, group) in per_class.iter().enumerate() {
        let want = base + usize::from(c < rem);
        if want > group.len() {
            return Err(DataError::Input(format!(
                "class {c} has only {} examples, need {want}",
                group.len()
            )));
        }
        idx.extend_from_slice(&group[..want]);
    }
    idx.shuffle(&mut rng);
    let mut out = ds.gather(&idx);
    out.name = format!("{}[{n}]", ds.name);
    Ok(out)
}

// ── synthetic regression ─────────────────────────────────────────────

pub const REGRESSION_NOISE_STD: f32 = 3.0;

/// 20 points x ~ U[-4,4], y = x^3 + eps, eps ~ N(0, 3^2).
#[derive(Debug, Clone)]
pub struct RegressionSet {
    pub x: Tensor,
    pub y: Tensor,
    pub seed: u64,
}

pub fn make_regression_set(seed: u64) -> RegressionSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xs: Vec<f32> = (0..20).map(|_| rng.gen_range(-4.0f32..4.0)).collect();
    let ys: Vec<f32> = xs
        .iter()
        .map(|&x| {
            let eps: f32 = rng.sample::<f32, _>(StandardNormal) * REGRESSION_NOISE_STD;
            x * x * x + eps
        })
        .collect();
    RegressionSet {
        x: Tensor::from_vec(&[20, 1], xs).expect("regression x"),
        y: Tensor::from_vec(&[20, 1], ys).expect("regression y"),
        seed,
    }
}

impl RegressionSet {
    pub fn dataset(&self) -> Dataset {
        Dataset {
            name: format!("regress1d[{}]", self.seed),
            inputs: self.x.clone(),
            targets: Targets::Values(self.y.data().to_vec()),
        }
    }
}

/// Dense grid on [-6,6] for band plotting; 401 points.
pub fn regression_eval_grid() -> Tensor {
    let n = 401;
    let xs: Vec<f32> = (0..n)
        .map(|i| -6.0 + 12.0 * i as f32 / (n - 1) as f32)
        .collect();
    Tensor::from_vec(&[n, 1], xs).expect("grid")
}

// ── fetch support ────────────────────────────────────────────────────

/// Hex SHA-256 of a file, for download verification.
pub fn sha256_file(path: &Path) -> Result<String> {
    let raw = read_raw(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&raw);
    Ok(hex_string(&hasher.finalize()))
}

fn read_raw(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ── standard file layouts ────────────────────────────────────────────

fn existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for name in names {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(DataError::Input(format!(
        "none of {names:?} found under {}",
        dir.display()
    )))
}

/// Load MNIST-layout IDX files (`train-*` / `t10k-*`, optionally .gz)
/// from a directory.
pub fn load_idx_dir(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let images = existing(
        dir,
        &[
            &format!("{prefix}-images-idx3-ubyte"),
            &format!("{prefix}-images-idx3-ubyte.gz"),
        ],
    )?;
    let labels = existing(
        dir,
        &[
            &format!("{prefix}-labels-idx1-ubyte"),
            &format!("{prefix}-labels-idx1-ubyte.gz"),
        ],
    )?;
    load_mnist_idx(&images, &labels)
}

/// Load the CIFAR-10 train batches (1..=5) or the test batch from a
/// directory laid out like the extracted cifar-10-batches-bin archive.
pub fn load_cifar_dir(dir: &Path, train: bool) -> Result<Dataset> {
    let paths: Vec<PathBuf> = if train {
        (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect()
    } else {
        vec![dir.join("test_batch.bin")]
    };
    load_cifar10_binary(&paths)
}
