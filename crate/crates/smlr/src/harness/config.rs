//! Experiment configuration: flat `key = value` files.
//!
//! Grammar: UTF-8 lines, one `key = value` pair per line, blank lines and
//! lines starting with `#` ignored. Unknown and duplicate keys are rejected
//! so typos fail loudly. Every key has a default except the image-directory
//! paths, which are required when `source = imagedir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ndcore::{LossKind, Network};
use crate::pruning::PruneSchedule;
use crate::reptile::MetaConfig;
use crate::stream::{self, StreamRng};
use crate::tasks::{make_blobs_source, make_imagedir_source, BlobsParams, SinusoidParams, Split, TaskSource};

/// Which corpus episodes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Blobs {
        classes: usize,
        input_dim: usize,
        noise_sigma: f64,
        split_fraction: f64,
    },
    Sinusoid,
    ImageDir {
        train_dir: PathBuf,
        test_dir: PathBuf,
    },
}

/// What the accuracy column carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    /// Regression sources report negative query MSE.
    NegMse,
}

/// Episodic evaluation protocol settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub eval_tasks: usize,
    pub eval_inner_iterations: usize,
    pub eval_inner_batch: usize,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceSpec,
    /// Hidden layer widths of the MLP; input/output dims come from the
    /// source and the episode shape.
    pub hidden: Vec<usize>,
    pub meta: MetaConfig,
    pub schedule: PruneSchedule,
    pub rate: f64,
    pub prune_biases: bool,
    pub master_seed: u64,
    pub eval: EvalSettings,
    pub metric: Metric,
    pub csv_name: String,
    pub checkpoint_name: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: SourceSpec::Blobs {
                classes: 10,
                input_dim: 2,
                noise_sigma: 1.0,
                split_fraction: 0.6,
            },
            hidden: vec![64, 64],
            meta: MetaConfig::default(),
            schedule: PruneSchedule::dsd(300, 500, 200),
            rate: 0.0,
            prune_biases: false,
            master_seed: 0,
            eval: EvalSettings {
                eval_tasks: 600,
                eval_inner_iterations: 50,
                eval_inner_batch: 5,
                eval_every: 50,
            },
            metric: Metric::Accuracy,
            csv_name: "metrics.csv".to_string(),
            checkpoint_name: "final.ckpt".to_string(),
        }
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(pairs)
}

struct KeyBag {
    pairs: BTreeMap<String, String>,
}

impl KeyBag {
    fn take(&mut self, key: &str) -> Option<String> {
        self.pairs.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key '{key}': unparseable value '{v}'"))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<ExperimentConfig> {
        let mut bag = KeyBag {
            pairs: parse_pairs(text)?,
        };
        let defaults = ExperimentConfig::default();

        let source_kind = bag.take("source").unwrap_or_else(|| "blobs".to_string());
        let classes: usize = bag.parse("classes", 10)?;
        let input_dim: usize = bag.parse("input_dim", 2)?;
        let noise_sigma: f64 = bag.parse("noise_sigma", 1.0)?;
        let split_fraction: f64 = bag.parse("split_fraction", 0.6)?;
        let train_dir = bag.take("train_dir");
        let test_dir = bag.take("test_dir");
        let source = match source_kind.as_str() {
            "blobs" => SourceSpec::Blobs {
                classes,
                input_dim,
                noise_sigma,
                split_fraction,
            },
            "sinusoid" => SourceSpec::Sinusoid,
            "imagedir" => {
                let train_dir = train_dir.ok_or_else(|| {
                    Error::Config("source = imagedir requires 'train_dir'".into())
                })?;
                let test_dir = test_dir
                    .ok_or_else(|| Error::Config("source = imagedir requires 'test_dir'".into()))?;
                SourceSpec::ImageDir {
                    train_dir: PathBuf::from(train_dir),
                    test_dir: PathBuf::from(test_dir),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "key 'source': unknown kind '{other}' (blobs, sinusoid, imagedir)"
                )))
            }
        };

        let hidden = match bag.take("hidden") {
            None => defaults.hidden,
            Some(v) if v.is_empty() => Vec::new(),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key 'hidden': bad width '{s}'")))
                })
                .collect::<Result<Vec<usize>>>()?,
        };

        let is_regression = source == SourceSpec::Sinusoid;
        let loss = match bag.take("loss") {
            None => {
                if is_regression {
                    LossKind::Mse
                } else {
                    LossKind::CrossEntropy
                }
            }
            Some(v) => match v.as_str() {
                "cross_entropy" => LossKind::CrossEntropy,
                "mse" => LossKind::Mse,
                "margin_ramp" => LossKind::MarginRamp {
                    gamma: bag.parse("margin_gamma", 1.0)?,
                },
                other => {
                    return Err(Error::Config(format!(
                        "key 'loss': unknown kind '{other}' (cross_entropy, mse, margin_ramp)"
                    )))
                }
            },
        };
        // margin_gamma without margin_ramp would silently do nothing.
        if bag.pairs.contains_key("margin_gamma") {
            return Err(Error::Config(
                "key 'margin_gamma' requires loss = margin_ramp".into(),
            ));
        }
        if is_regression && loss != LossKind::Mse {
            return Err(Error::Config(
                "sinusoid source requires loss = mse".into(),
            ));
        }
        if !is_regression && loss == LossKind::Mse {
            return Err(Error::Config(
                "classification sources need cross_entropy or margin_ramp".into(),
            ));
        }

        let metric = match bag.take("metric") {
            None => {
                if is_regression {
                    Metric::NegMse
                } else {
                    Metric::Accuracy
                }
            }
            Some(v) => match v.as_str() {
                "accuracy" => Metric::Accuracy,
                "mse" => Metric::NegMse,
                other => {
                    return Err(Error::Config(format!(
                        "key 'metric': unknown kind '{other}' (accuracy, mse)"
                    )))
                }
            },
        };
        if (metric == Metric::NegMse) != is_regression {
            return Err(Error::Config(
                "metric = mse goes with the sinusoid source, accuracy with classification".into(),
            ));
        }

        let pretrain_iters = bag.parse("pretrain_iters", defaults.schedule.pretrain_iters)?;
        let rounds = bag.parse("rounds", 1usize)?;
        let explicit_prune = bag.pairs.contains_key("prune_iters");
        let explicit_retrain = bag.pairs.contains_key("retrain_iters");
        let schedule = match (bag.take("interval_iters"), bag.take("ratio")) {
            (Some(interval), Some(ratio)) => {
                if explicit_prune || explicit_retrain {
                    return Err(Error::Config(
                        "give either interval_iters+ratio or prune_iters+retrain_iters, not both"
                            .into(),
                    ));
                }
                let interval: usize = interval.parse().map_err(|_| {
                    Error::Config(format!("key 'interval_iters': unparseable '{interval}'"))
                })?;
                let ratio: f64 = ratio
                    .parse()
                    .map_err(|_| Error::Config(format!("key 'ratio': unparseable '{ratio}'")))?;
                PruneSchedule::iht(pretrain_iters, rounds, interval, ratio)?
            }
            (None, None) => {
                let prune_iters = bag.parse("prune_iters", defaults.schedule.prune_iters)?;
                let retrain_iters = bag.parse("retrain_iters", defaults.schedule.retrain_iters)?;
                PruneSchedule::with_rounds(pretrain_iters, prune_iters, retrain_iters, rounds)
            }
            _ => {
                return Err(Error::Config(
                    "interval_iters and ratio must be given together".into(),
                ))
            }
        };

        let meta = MetaConfig {
            inner_lr: bag.parse("inner_lr", defaults.meta.inner_lr)?,
            outer_lr: bag.parse("outer_lr", defaults.meta.outer_lr)?,
            meta_batch: bag.parse("meta_batch", defaults.meta.meta_batch)?,
            inner_iterations: bag.parse("inner_iterations", defaults.meta.inner_iterations)?,
            inner_batch: bag.parse("inner_batch", defaults.meta.inner_batch)?,
            n_way: bag.parse("n_way", defaults.meta.n_way)?,
            k_shot: bag.parse("k_shot", defaults.meta.k_shot)?,
            query: bag.parse("query", defaults.meta.query)?,
            loss,
            total_meta_iterations: schedule.total_iters(),
        };

        let eval = EvalSettings {
            eval_tasks: bag.parse("eval_tasks", defaults.eval.eval_tasks)?,
            eval_inner_iterations: bag
                .parse("eval_inner_iterations", defaults.eval.eval_inner_iterations)?,
            eval_inner_batch: bag.parse("eval_inner_batch", defaults.eval.eval_inner_batch)?,
            eval_every: bag.parse("eval_every", defaults.eval.eval_every)?,
        };

        let config = ExperimentConfig {
            source,
            hidden,
            meta,
            schedule,
            rate: bag.parse("rate", 0.0)?,
            prune_biases: bag.parse("prune_biases", false)?,
            master_seed: bag.parse("master_seed", defaults.master_seed)?,
            eval,
            metric,
            csv_name: bag.take("csv").unwrap_or(defaults.csv_name),
            checkpoint_name: bag.take("checkpoint").unwrap_or(defaults.checkpoint_name),
        };

        if let Some(unknown) = bag.pairs.keys().next() {
            return Err(Error::Config(format!("unknown key '{unknown}'")));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        if self.eval.eval_tasks < 2 {
            return Err(Error::Config(
                "eval_tasks must be at least 2 (the interval needs a spread)".into(),
            ));
        }
        if self.eval.eval_every == 0 || self.eval.eval_inner_batch == 0 {
            return Err(Error::Config(
                "eval_every and eval_inner_batch must be positive".into(),
            ));
        }
        if let SourceSpec::Blobs { classes, .. } = &self.source {
            if self.meta.n_way > *classes {
                return Err(Error::Config(format!(
                    "n_way {} exceeds blob classes {}",
                    self.meta.n_way, classes
                )));
            }
        }
        Ok(())
    }

    /// Builds the meta-train and meta-test sources. Blob centers and the
    /// class split come from the master seed, so reruns are identical.
    pub fn build_sources(&self) -> Result<(TaskSource, TaskSource)> {
        match &self.source {
            SourceSpec::Blobs {
                classes,
                input_dim,
                noise_sigma,
                split_fraction,
            } => {
                let mut rng: StreamRng =
                    stream::derive(self.master_seed, &[stream::tag::SOURCE]);
                make_blobs_source(
                    BlobsParams {
                        classes: *classes,
                        input_dim: *input_dim,
                        noise_sigma: *noise_sigma,
                    },
                    *split_fraction,
                    &mut rng,
                )
            }
            SourceSpec::Sinusoid => Ok((
                TaskSource::sinusoid(SinusoidParams::default(), Split::MetaTrain),
                TaskSource::sinusoid(SinusoidParams::default(), Split::MetaTest),
            )),
            SourceSpec::ImageDir {
                train_dir,
                test_dir,
            } => Ok((
                make_imagedir_source(train_dir, Split::MetaTrain)?,
                make_imagedir_source(test_dir, Split::MetaTest)?,
            )),
        }
    }

    /// Output dimension of the model: N for classification, 1 for regression.
    pub fn model_out_dim(&self) -> usize {
        if self.metric == Metric::NegMse {
            1
        } else {
            self.meta.n_way
        }
    }

    /// Fresh seeded network matching the source dimensions.
    pub fn build_network(&self, source: &TaskSource) -> Result<Network> {
        let mut rng = stream::derive(self.master_seed, &[stream::tag::INIT]);
        Network::mlp(
            source.input_dim(),
            &self.hidden,
            self.model_out_dim(),
            &mut rng,
        )
    }
}
