//! Episodic N-way K-shot task generation.
//!
//! A [`TaskSource`] is an immutable distribution over episodes, tagged with
//! the meta-split it belongs to. Classification sources (Gaussian blobs,
//! image directories) hold a fixed class set; meta-train and meta-test class
//! sets are always disjoint. Sampling consumes only the caller's RNG stream,
//! so episodes are a pure function of (source parameters, stream).

mod pgm;

pub use pgm::read_pgm;

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndcore::{Targets, Tensor};
use crate::stream::StreamRng;

/// Which side of the meta class split a source draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    MetaTrain,
    MetaTest,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::MetaTrain => "train",
            Split::MetaTest => "test",
        }
    }
}

/// One episode: support set for adaptation, query set for evaluation.
/// Classification: exactly K support and Q query samples per class, labels
/// remapped to `0..N`. Regression: K support and Q query (x, target) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEpisode {
    pub support_x: Tensor,
    pub support_y: Targets,
    pub query_x: Tensor,
    pub query_y: Targets,
}

/// Gaussian-cluster corpus parameters. Class centers are drawn once, at
/// source construction, uniform in `[-5, 5]^d`.
#[derive(Debug, Clone, Copy)]
pub struct BlobsParams {
    pub classes: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
}

impl Default for BlobsParams {
    fn default() -> Self {
        BlobsParams {
            classes: 10,
            input_dim: 2,
            noise_sigma: 1.0,
        }
    }
}

/// Sinusoid regression family: each episode fixes one (amplitude, phase)
/// and targets are `y = A sin(x + phi)`.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidParams {
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub x_range: (f64, f64),
}

impl Default for SinusoidParams {
    fn default() -> Self {
        SinusoidParams {
            amplitude: (0.1, 5.0),
            phase: (0.0, std::f64::consts::PI),
            x_range: (-5.0, 5.0),
        }
    }
}

#[derive(Debug, Clone)]
struct ImageClass {
    name: String,
    /// Each image flattened row-major, pixels scaled to [0, 1].
    images: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
enum SourceKind {
    Blobs {
        /// Full `C x d` center table, shared between the two splits.
        centers: Arc<Vec<f64>>,
        /// Global class ids owned by this split.
        class_ids: Vec<usize>,
        input_dim: usize,
        noise_sigma: f64,
    },
    Sinusoid(SinusoidParams),
    ImageDir {
        classes: Arc<Vec<ImageClass>>,
        input_dim: usize,
    },
}

/// Immutable episode distribution for one meta-split.
#[derive(Debug, Clone)]
pub struct TaskSource {
    kind: SourceKind,
    split: Split,
}

impl TaskSource {
    /// Sinusoid sources have no class structure; the split tag only routes
    /// them through the harness.
    pub fn sinusoid(params: SinusoidParams, split: Split) -> TaskSource {
        TaskSource {
            kind: SourceKind::Sinusoid(params),
            split,
        }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Number of classes available to this split (0 for regression sources).
    pub fn class_count(&self) -> usize {
        match &self.kind {
            SourceKind::Blobs { class_ids, .. } => class_ids.len(),
            SourceKind::Sinusoid(_) => 0,
            SourceKind::ImageDir { classes, .. } => classes.len(),
        }
    }

    /// Global class identifiers (blob ids or directory names).
    pub fn class_names(&self) -> Vec<String> {
        match &self.kind {
            SourceKind::Blobs { class_ids, .. } => {
                class_ids.iter().map(|c| c.to_string()).collect()
            }
            SourceKind::Sinusoid(_) => Vec::new(),
            SourceKind::ImageDir { classes, .. } => {
                classes.iter().map(|c| c.name.clone()).collect()
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            SourceKind::Blobs { input_dim, .. } => *input_dim,
            SourceKind::Sinusoid(_) => 1,
            SourceKind::ImageDir { input_dim, .. } => *input_dim,
        }
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.kind, SourceKind::Sinusoid(_))
    }

    /// Gaussian center of a class this split owns (testing hook).
    pub fn blob_center(&self, slot: usize) -> Option<&[f64]> {
        match &self.kind {
            SourceKind::Blobs {
                centers,
                class_ids,
                input_dim,
                ..
            } => {
                let id = *class_ids.get(slot)?;
                Some(&centers[id * input_dim..(id + 1) * input_dim])
            }
            _ => None,
        }
    }
}

/// Builds the meta-train/meta-test pair of blob sources. Class centers are
/// drawn once; the class set is shuffled and split disjointly with
/// `floor(fraction * C)` train classes, clamped so both sides stay non-empty.
pub fn make_blobs_source(
    params: BlobsParams,
    meta_split_fraction: f64,
    rng: &mut StreamRng,
) -> Result<(TaskSource, TaskSource)> {
    if !(meta_split_fraction > 0.0 && meta_split_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1), got {meta_split_fraction}"
        )));
    }
    if params.classes < 2 {
        return Err(Error::DegenerateSplit(format!(
            "need at least 2 classes to split, got {}",
            params.classes
        )));
    }
    if params.input_dim == 0 {
        return Err(Error::InvalidArgument("input_dim must be positive".into()));
    }
    if !(params.noise_sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma must be positive, got {}",
            params.noise_sigma
        )));
    }
    let c = params.classes;
    let d = params.input_dim;
    let centers: Vec<f64> = (0..c * d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let centers = Arc::new(centers);

    let mut ids: Vec<usize> = (0..c).collect();
    shuffle(&mut ids, rng);
    let n_train = ((meta_split_fraction * c as f64).floor() as usize).clamp(1, c - 1);
    let (train_ids, test_ids) = ids.split_at(n_train);

    let make = |class_ids: Vec<usize>, split| TaskSource {
        kind: SourceKind::Blobs {
            centers: Arc::clone(&centers),
            class_ids,
            input_dim: d,
            noise_sigma: params.noise_sigma,
        },
        split,
    };
    Ok((
        make(train_ids.to_vec(), Split::MetaTrain),
        make(test_ids.to_vec(), Split::MetaTest),
    ))
}

/// Loads a class-per-subdirectory corpus of binary PGM (P5) images. Classes
/// are subdirectory names in lexicographic order; every image must share one
/// common dimension; pixels are scaled to `[0, 1]`.
pub fn make_imagedir_source(path: &Path, split: Split) -> Result<TaskSource> {
    let entries = std::fs::read_dir(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut dirs: Vec<std::path::PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no class subdirectories under {}",
            path.display()
        )));
    }
    let mut classes = Vec::with_capacity(dirs.len());
    let mut dims: Option<(usize, usize)> = None;
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class directory {} has no images",
                dir.display()
            )));
        }
        let mut images = Vec::with_capacity(files.len());
        for file in files {
            let img = read_pgm(&file)?;
            match dims {
                None => dims = Some((img.width, img.height)),
                Some((w, h)) if (w, h) != (img.width, img.height) => {
                    return Err(Error::Pgm {
                        path: file,
                        reason: format!(
                            "dimensions {}x{} differ from corpus {}x{}",
                            img.width, img.height, w, h
                        ),
                    });
                }
                _ => {}
            }
            images.push(img.pixels);
        }
        classes.push(ImageClass { name, images });
    }
    let (w, h) = dims.expect("at least one class with one image");
    Ok(TaskSource {
        kind: SourceKind::ImageDir {
            classes: Arc::new(classes),
            input_dim: w * h,
        },
        split,
    })
}

/// In-place Fisher-Yates shuffle driven by the caller's stream.
fn shuffle<T>(items: &mut [T], rng: &mut StreamRng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Draws the first `n` elements of a random permutation of `0..len`.
fn choose_indices(len: usize, n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Samples one N-way K-shot episode with Q query shots per class
/// (regression sources ignore `n` and produce K support / Q query pairs).
pub fn sample_episode(
    source: &TaskSource,
    n: usize,
    k: usize,
    q: usize,
    rng: &mut StreamRng,
) -> Result<TaskEpisode> {
    if n == 0 || k == 0 || q == 0 {
        return Err(Error::InvalidArgument(
            "episode needs n, k, q all >= 1".into(),
        ));
    }
    match &source.kind {
        SourceKind::Blobs {
            centers,
            class_ids,
            input_dim,
            noise_sigma,
        } => {
            if n > class_ids.len() {
                return Err(Error::NotEnoughClasses {
                    requested: n,
                    available: class_ids.len(),
                });
            }
            let d = *input_dim;
            let slots = choose_indices(class_ids.len(), n, rng);
            let mut draw_block = |per_class: usize| -> Result<(Tensor, Vec<usize>)> {
                let mut xs = Vec::with_capacity(n * per_class * d);
                let mut ys = Vec::with_capacity(n * per_class);
                for (label, &slot) in slots.iter().enumerate() {
                    let id = class_ids[slot];
                    let center = &centers[id * d..(id + 1) * d];
                    for _ in 0..per_class {
                        for &c in center {
                            let z: f64 = StandardNormal.sample(rng);
                            xs.push(c + noise_sigma * z);
                        }
                        ys.push(label);
                    }
                }
                Ok((Tensor::matrix(n * per_class, d, xs)?, ys))
            };
            let (support_x, support_y) = draw_block(k)?;
            let (query_x, query_y) = draw_block(q)?;
            Ok(TaskEpisode {
                support_x,
                support_y: Targets::Labels(support_y),
                query_x,
                query_y: Targets::Labels(query_y),
            })
        }
        SourceKind::Sinusoid(params) => {
            let amplitude = rng.random_range(params.amplitude.0..params.amplitude.1);
            let phase = rng.random_range(params.phase.0..params.phase.1);
            let mut draw_block = |points: usize| -> Result<(Tensor, Tensor)> {
                let xs: Vec<f64> = (0..points)
                    .map(|_| rng.random_range(params.x_range.0..params.x_range.1))
                    .collect();
                let ys: Vec<f64> = xs.iter().map(|x| amplitude * (x + phase).sin()).collect();
                Ok((Tensor::matrix(points, 1, xs)?, Tensor::matrix(points, 1, ys)?))
            };
            let (support_x, support_y) = draw_block(k)?;
            let (query_x, query_y) = draw_block(q)?;
            Ok(TaskEpisode {
                support_x,
                support_y: Targets::Values(support_y),
                query_x,
                query_y: Targets::Values(query_y),
            })
        }
        SourceKind::ImageDir { classes, input_dim } => {
            if n > classes.len() {
                return Err(Error::NotEnoughClasses {
                    requested: n,
                    available: classes.len(),
                });
            }
            let d = *input_dim;
            let slots = choose_indices(classes.len(), n, rng);
            // Per class, draw K+Q distinct images: first K support, next Q query.
            let mut picks: Vec<Vec<usize>> = Vec::with_capacity(n);
            for &slot in &slots {
                let class = &classes[slot];
                if class.images.len() < k + q {
                    return Err(Error::ClassTooFewImages {
                        class: class.name.clone(),
                        have: class.images.len(),
                        need: k + q,
                    });
                }
                picks.push(choose_indices(class.images.len(), k + q, rng));
            }
            let gather = |offset: usize, per_class: usize| -> Result<(Tensor, Vec<usize>)> {
                let mut xs = Vec::with_capacity(n * per_class * d);
                let mut ys = Vec::with_capacity(n * per_class);
                for (label, &slot) in slots.iter().enumerate() {
                    for j in 0..per_class {
                        let img = &classes[slot].images[picks[label][offset + j]];
                        xs.extend_from_slice(img);
                        ys.push(label);
                    }
                }
                Ok((Tensor::matrix(n * per_class, d, xs)?, ys))
            };
            let (support_x, support_y) = gather(0, k)?;
            let (query_x, query_y) = gather(k, q)?;
            Ok(TaskEpisode {
                support_x,
                support_y: Targets::Labels(support_y),
                query_x,
                query_y: Targets::Labels(query_y),
            })
        }
    }
}
