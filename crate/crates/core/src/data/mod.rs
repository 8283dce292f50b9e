//! Dataset ingestion, labeled/unlabeled/validation splitting, and paired
//! batch iteration.

mod cifar;
mod synthetic;

pub use synthetic::SyntheticSpec;

use std::path::PathBuf;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::patch::ImageTensor;
use crate::{Error, Result};

/// Where a dataset comes from and what it claims to contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub source: DataSource,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Per-channel normalization stats; computed from the training set
    /// when absent.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// CIFAR-style binary archives (1 label byte + channel-major pixels).
    CifarBinary {
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
        /// Optional sha256 hex digests, parallel to train_files ++ test_files.
        #[serde(default)]
        checksums: Option<Vec<String>>,
    },
    /// A directory of images plus `filename,label_id` index files.
    ImageDirectory {
        dir: PathBuf,
        train_index: PathBuf,
        test_index: PathBuf,
    },
    /// Deterministic generated data.
    Synthetic(SyntheticSpec),
}

/// An in-memory dataset. Images are stored normalized (per-channel zero
/// mean / unit variance under the training statistics); `mean`/`std`
/// support denormalization for display.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Maps a normalized image back to raw [0,1] pixel values.
    pub fn denormalize(&self, image: &ImageTensor) -> ImageTensor {
        let mut out = image.clone();
        for c in 0..self.std.len() {
            let (m, s) = (self.mean[c], self.std[c]);
            out.data
                .slice_mut(ndarray::s![.., .., c])
                .mapv_inplace(|v| (v * s + m).clamp(0.0, 1.0));
        }
        out
    }
}

/// Train and test sets, both normalized with training-set statistics.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub train: Dataset,
    pub test: Dataset,
}

fn verify_checksums(files: &[PathBuf], checksums: &[String]) -> Result<()> {
    if files.len() != checksums.len() {
        return Err(Error::Data(format!(
            "{} checksums for {} files",
            checksums.len(),
            files.len()
        )));
    }
    for (path, expected) in files.iter().zip(checksums) {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let got = crate::sha256_hex(&bytes);
        if &got != expected {
            return Err(Error::Data(format!(
                "{}: checksum mismatch (expected {expected}, got {got})",
                path.display()
            )));
        }
    }
    Ok(())
}

fn read_index(
    dir: &std::path::Path,
    index: &std::path::Path,
) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let text = std::fs::read_to_string(index)
        .map_err(|e| Error::Data(format!("{}: {e}", index.display())))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, label) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("{}: malformed line {line:?}", index.display()))
        })?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad label in {line:?}", index.display())))?;
        let path = dir.join(name.trim());
        let img = image::open(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
            img.get_pixel(j as u32, i as u32).0[c] as f64 / 255.0
        });
        images.push(ImageTensor::new(data));
        labels.push(label);
    }
    Ok((images, labels))
}

fn bilinear_resize(image: &ImageTensor, size: usize) -> ImageTensor {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    if h == size && w == size {
        return image.clone();
    }
    let mut out = Array3::zeros((size, size, c));
    for i in 0..size {
        for j in 0..size {
            let y = (i as f64 + 0.5) * h as f64 / size as f64 - 0.5;
            let x = (j as f64 + 0.5) * w as f64 / size as f64 - 0.5;
            let (y0, x0) = (y.floor().max(0.0) as usize, x.floor().max(0.0) as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = ((y - y0 as f64).clamp(0.0, 1.0), (x - x0 as f64).clamp(0.0, 1.0));
            for ch in 0..c {
                let top = image.data[(y0, x0, ch)] * (1.0 - fx) + image.data[(y0, x1, ch)] * fx;
                let bot = image.data[(y1, x0, ch)] * (1.0 - fx) + image.data[(y1, x1, ch)] * fx;
                out[(i, j, ch)] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    ImageTensor::new(out)
}

fn channel_stats(images: &[ImageTensor], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    let mut count = 0usize;
    for img in images {
        count += img.height() * img.width();
        for (c, m) in mean.iter_mut().enumerate() {
            *m += img.data.slice(ndarray::s![.., .., c]).sum();
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    for img in images {
        for c in 0..channels {
            var[c] += img
                .data
                .slice(ndarray::s![.., .., c])
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(1e-6))
        .collect();
    (mean, std)
}

fn normalize_in_place(images: &mut [ImageTensor], mean: &[f64], std: &[f64]) {
    for img in images {
        for c in 0..std.len() {
            let (m, s) = (mean[c], std[c]);
            img.data
                .slice_mut(ndarray::s![.., .., c])
                .mapv_inplace(|v| (v - m) / s);
        }
    }
}

/// Loads (and optionally resizes) the manifest's data, computes the
/// normalization statistics once from the training set, and returns
/// normalized train/test datasets.
pub fn load_dataset(manifest: &DatasetManifest, target_size: Option<usize>) -> Result<DataBundle> {
    let ((mut train_images, train_labels), (mut test_images, test_labels)) =
        match &manifest.source {
            DataSource::CifarBinary {
                train_files,
                test_files,
                checksums,
            } => {
                if let Some(sums) = checksums {
                    let all: Vec<PathBuf> =
                        train_files.iter().chain(test_files).cloned().collect();
                    verify_checksums(&all, sums)?;
                }
                let mut train = (Vec::new(), Vec::new());
                for f in train_files {
                    let (im, la) =
                        cifar::read_records(f, manifest.height, manifest.width, manifest.channels)?;
                    train.0.extend(im);
                    train.1.extend(la);
                }
                let mut test = (Vec::new(), Vec::new());
                for f in test_files {
                    let (im, la) =
                        cifar::read_records(f, manifest.height, manifest.width, manifest.channels)?;
                    test.0.extend(im);
                    test.1.extend(la);
                }
                (train, test)
            }
            DataSource::ImageDirectory {
                dir,
                train_index,
                test_index,
            } => (read_index(dir, train_index)?, read_index(dir, test_index)?),
            DataSource::Synthetic(spec) => spec.generate(),
        };
    if train_images.is_empty() {
        return Err(Error::Data(format!("dataset {} has no training images", manifest.name)));
    }
    if let Some(bad) = train_labels
        .iter()
        .chain(&test_labels)
        .find(|&&l| l >= manifest.num_classes)
    {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} classes",
            manifest.num_classes
        )));
    }
    if let Some(size) = target_size {
        train_images = train_images.iter().map(|i| bilinear_resize(i, size)).collect();
        test_images = test_images.iter().map(|i| bilinear_resize(i, size)).collect();
    }
    let (mean, std) = match (&manifest.mean, &manifest.std) {
        (Some(m), Some(s)) => (m.clone(), s.clone()),
        _ => channel_stats(&train_images, manifest.channels),
    };
    normalize_in_place(&mut train_images, &mean, &std);
    normalize_in_place(&mut test_images, &mean, &std);
    Ok(DataBundle {
        train: Dataset {
            images: train_images,
            labels: train_labels,
            num_classes: manifest.num_classes,
            mean: mean.clone(),
            std: std.clone(),
        },
        test: Dataset {
            images: test_images,
            labels: test_labels,
            num_classes: manifest.num_classes,
            mean,
            std,
        },
    })
}

/// Which fraction of the training set carries labels, and how much of the
/// labeled pool is held out for the gate's validation monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub labeled_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction_of_labeled: f64,
    pub seed: u64,
}

fn default_val_fraction() -> f64 {
    0.10
}

/// Disjoint index sets covering the training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub val: Vec<usize>,
}

/// Largest-remainder apportionment of `total` across weights.
fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| w as f64 * total as f64 / sum as f64)
        .collect();
    let mut shares: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<(usize, f64)> = exact
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e - e.floor()))
        .collect();
    rest.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = shares.iter().sum();
    for (i, _) in rest.iter().take(total.saturating_sub(assigned)) {
        shares[*i] += 1;
    }
    shares
}

/// Stratified labeled/unlabeled/validation split: |labeled ∪ val| =
/// round(frac·N), per-class counts within ±1 of proportional, validation
/// carved from inside the labeled pool. Pure function of (dataset, spec).
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitIndices> {
    if !(0.0..=1.0).contains(&spec.labeled_fraction) || spec.labeled_fraction == 0.0 {
        return Err(Error::Config(format!(
            "labeled_fraction {} outside (0, 1]",
            spec.labeled_fraction
        )));
    }
    if !(0.0..1.0).contains(&spec.val_fraction_of_labeled) {
        return Err(Error::Config(format!(
            "val_fraction_of_labeled {} outside [0, 1)",
            spec.val_fraction_of_labeled
        )));
    }
    let n = dataset.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    for (c, members) in by_class.iter_mut().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed.wrapping_add(c as u64));
        members.shuffle(&mut rng);
    }
    let class_counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let pool_total = (spec.labeled_fraction * n as f64).round() as usize;
    let pool_shares = apportion(&class_counts, pool_total);
    let val_total = (spec.val_fraction_of_labeled * pool_total as f64).round() as usize;
    let val_shares = apportion(&pool_shares, val_total);
    let mut out = SplitIndices {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        val: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let pool = pool_shares[c].min(members.len());
        let val = val_shares[c].min(pool);
        if pool - val == 0 && !members.is_empty() {
            return Err(Error::Config(format!(
                "class {c} has no labeled samples at fraction {}; raise the fraction",
                spec.labeled_fraction
            )));
        }
        out.labeled.extend(&members[..pool - val]);
        out.val.extend(&members[pool - val..pool]);
        out.unlabeled.extend(&members[pool..]);
    }
    out.labeled.sort_unstable();
    out.val.sort_unstable();
    out.unlabeled.sort_unstable();
    Ok(out)
}

/// One training step's worth of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPair {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// One epoch of paired batches: every unlabeled sample appears exactly
/// once; the labeled stream cycles with a reshuffle between passes. With
/// no unlabeled data the epoch degenerates to labeled-only steps.
pub fn iterate_batch_pairs(
    splits: &SplitIndices,
    batch_labeled: usize,
    batch_unlabeled: usize,
    seed: u64,
) -> Result<Vec<BatchPair>> {
    if batch_labeled == 0 || batch_unlabeled == 0 {
        return Err(Error::Config("batch sizes must be positive".into()));
    }
    if splits.labeled.is_empty() {
        return Err(Error::Config("no labeled samples".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut unlabeled = splits.unlabeled.clone();
    unlabeled.shuffle(&mut rng);
    let steps = if unlabeled.is_empty() {
        splits.labeled.len().div_ceil(batch_labeled)
    } else {
        unlabeled.len().div_ceil(batch_unlabeled)
    };
    let mut labeled_stream = splits.labeled.clone();
    labeled_stream.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut pairs = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut labeled = Vec::with_capacity(batch_labeled);
        for _ in 0..batch_labeled {
            if cursor == labeled_stream.len() {
                labeled_stream.shuffle(&mut rng);
                cursor = 0;
            }
            labeled.push(labeled_stream[cursor]);
            cursor += 1;
        }
        let lo = s * batch_unlabeled;
        let hi = ((s + 1) * batch_unlabeled).min(unlabeled.len());
        pairs.push(BatchPair {
            labeled,
            unlabeled: unlabeled.get(lo..hi).unwrap_or(&[]).to_vec(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_dataset(n: usize, k: usize) -> Dataset {
        let images = (0..n)
            .map(|i| ImageTensor::new(Array3::from_elem((4, 4, 1), i as f64)))
            .collect();
        let labels = (0..n).map(|i| i % k).collect();
        Dataset {
            images,
            labels,
            num_classes: k,
            mean: vec![0.0],
            std: vec![1.0],
        }
    }

    #[test]
    fn split_example_counts() {
        let ds = balanced_dataset(100, 2);
        let spec = SplitSpec {
            labeled_fraction: 0.10,
            val_fraction_of_labeled: 0.10,
            seed: 1,
        };
        let s = split(&ds, &spec).unwrap();
        assert_eq!(s.labeled.len(), 9);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.unlabeled.len(), 90);
    }

    #[test]
    fn split_full_fraction_has_no_unlabeled() {
        let ds = balanced_dataset(40, 4);
        let spec = SplitSpec {
            labeled_fraction: 1.0,
            val_fraction_of_labeled: 0.10,
            seed: 0,
        };
        let s = split(&ds, &spec).unwrap();
        assert!(s.unlabeled.is_empty());
        assert_eq!(s.labeled.len() + s.val.len(), 40);
    }

    #[test]
    fn split_deterministic() {
        let ds = balanced_dataset(60, 3);
        let spec = SplitSpec {
            labeled_fraction: 0.3,
            val_fraction_of_labeled: 0.1,
            seed: 9,
        };
        assert_eq!(split(&ds, &spec).unwrap(), split(&ds, &spec).unwrap());
    }

    #[test]
    fn split_disjoint_cover_randomized() {
        let ds = balanced_dataset(97, 5);
        for trial in 0..100 {
            let spec = SplitSpec {
                labeled_fraction: 0.2 + 0.6 * (trial as f64 / 100.0),
                val_fraction_of_labeled: 0.1,
                seed: trial,
            };
            let s = split(&ds, &spec).unwrap();
            let mut all: Vec<usize> = s
                .labeled
                .iter()
                .chain(&s.unlabeled)
                .chain(&s.val)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..97).collect::<Vec<_>>(), "trial {trial}");
        }
    }

    #[test]
    fn split_stratification_within_one() {
        let ds = balanced_dataset(200, 4);
        let spec = SplitSpec {
            labeled_fraction: 0.25,
            val_fraction_of_labeled: 0.1,
            seed: 3,
        };
        let s = split(&ds, &spec).unwrap();
        let mut counts = vec![0i64; 4];
        for &i in s.labeled.iter().chain(&s.val) {
            counts[ds.labels[i]] += 1;
        }
        let share = (s.labeled.len() + s.val.len()) as i64 / 4;
        for c in counts {
            assert!((c - share).abs() <= 1, "{c} vs {share}");
        }
    }

    #[test]
    fn split_rejects_starved_class() {
        let ds = balanced_dataset(100, 50);
        let spec = SplitSpec {
            labeled_fraction: 0.02,
            val_fraction_of_labeled: 0.0,
            seed: 0,
        };
        assert!(split(&ds, &spec).is_err());
    }

    #[test]
    fn batch_pairs_cover_unlabeled_exactly_once() {
        let splits = SplitIndices {
            labeled: (0..8).collect(),
            unlabeled: (8..72).collect(),
            val: vec![],
        };
        let pairs = iterate_batch_pairs(&splits, 16, 32, 0).unwrap();
        assert_eq!(pairs.len(), 2);
        let mut seen: Vec<usize> = pairs.iter().flat_map(|p| p.unlabeled.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (8..72).collect::<Vec<_>>());
        for p in &pairs {
            assert_eq!(p.labeled.len(), 16);
        }
    }

    #[test]
    fn labeled_stream_cycles_with_reshuffle() {
        let splits = SplitIndices {
            labeled: (0..8).collect(),
            unlabeled: (8..40).collect(),
            val: vec![],
        };
        let pairs = iterate_batch_pairs(&splits, 16, 32, 4).unwrap();
        // 8 labeled samples cycled into a 16-sample batch: each exactly twice
        let mut counts = vec![0; 8];
        for &i in &pairs[0].labeled {
            counts[i] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2), "{counts:?}");
    }

    #[test]
    fn batch_pairs_deterministic_by_seed() {
        let splits = SplitIndices {
            labeled: (0..20).collect(),
            unlabeled: (20..100).collect(),
            val: vec![],
        };
        assert_eq!(
            iterate_batch_pairs(&splits, 4, 8, 7).unwrap(),
            iterate_batch_pairs(&splits, 4, 8, 7).unwrap()
        );
    }

    #[test]
    fn empty_unlabeled_degenerates_to_labeled_steps() {
        let splits = SplitIndices {
            labeled: (0..10).collect(),
            unlabeled: vec![],
            val: vec![],
        };
        let pairs = iterate_batch_pairs(&splits, 4, 8, 0).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.unlabeled.is_empty()));
    }
}
