use std::collections::HashMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::metrics::{axis_accuracy, axis_macro_f1};
use crate::encoders::{ImageEncoderConfig, ImageEncoderParams, TextEncoderConfig, Vocab, MAX_IMAGES};
use crate::error::{Error, Result};
use crate::fusion::{bce_loss, ImageView, ProfileInput, Profiler, ProfilerConfig, ViewMode};
use crate::mbti::{Axis, MbtiType};
use crate::store::model::UserProfile;
use crate::tensor::{accumulate, Adam, AdamConfig, Params, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Length of each view vector.
    pub view_dim: usize,
    pub image_channels: Vec<usize>,
    pub image_size: usize,
    pub head_hidden: usize,
    pub max_vocab: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            view_dim: 32,
            image_channels: vec![16, 32, 64, 64],
            image_size: 64,
            head_hidden: 128,
            max_vocab: 5000,
        }
    }
}

impl ModelDims {
    pub fn image_config(&self) -> ImageEncoderConfig {
        ImageEncoderConfig {
            channels: self.image_channels.clone(),
            input_size: self.image_size,
            out_dim: self.view_dim,
        }
    }

    pub fn profiler_config(&self, mode: ViewMode, vocab_size: usize) -> ProfilerConfig {
        ProfilerConfig {
            mode,
            text: TextEncoderConfig {
                vocab_size,
                embed_dim: self.embed_dim,
                hidden: self.hidden,
                out_dim: self.view_dim,
            },
            image: self.image_config(),
            hidden: self.head_hidden,
        }
    }
}

/// Numeric precision of training. Only 64-bit is implemented; the field
/// exists so configs state it explicitly and a future `f32` path can be
/// selected without a format change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Keep the conv backbone at its seeded initialisation and train on
    /// cached backbone features.
    pub freeze_backbone: bool,
    #[serde(default)]
    pub precision: Precision,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 16,
            max_epochs: 60,
            patience: 5,
            seed: 7,
            freeze_backbone: true,
            precision: Precision::F64,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::invalid("adam", "learning rate and eps must be positive, betas in [0,1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size", "batch size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 80/10/10 shuffle split.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5917));
    let n_train = ((n as f64) * 0.8).round() as usize;
    let n_val = ((n as f64) * 0.1).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

/// Backbone features per image name.
pub type FeatureCache = HashMap<String, Tensor>;

/// The seeded conv backbone shared by every view mode of one run.
pub fn seeded_backbone(dims: &ModelDims, seed: u64) -> Result<ImageEncoderParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    ImageEncoderParams::init(&dims.image_config(), &mut rng)
}

pub fn cache_features(corpus: &Corpus, backbone: &ImageEncoderParams) -> Result<FeatureCache> {
    let mut cache = FeatureCache::new();
    for ex in &corpus.examples {
        for name in ex.profile.recent_images(MAX_IMAGES) {
            if !cache.contains_key(&name) {
                let f = backbone.features(corpus.image(&name)?)?;
                cache.insert(name, f);
            }
        }
    }
    Ok(cache)
}

/// Backbone features of every image referenced by the given users.
fn split_features(
    corpus: &Corpus,
    idx: &[usize],
    backbone: &ImageEncoderParams,
    cache: Option<&FeatureCache>,
) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    for &i in idx {
        for name in corpus.examples[i].profile.recent_images(MAX_IMAGES) {
            out.push(match cache.and_then(|c| c.get(&name)) {
                Some(f) => f.clone(),
                None => backbone.features(corpus.image(&name)?)?,
            });
        }
    }
    Ok(out)
}

/// Model input for one profile. Images come from the cache when given,
/// otherwise from `lookup`.
pub fn profile_input(
    profile: &UserProfile,
    vocab: &Vocab,
    cache: Option<&FeatureCache>,
    lookup: &dyn Fn(&str) -> Result<Tensor>,
) -> Result<ProfileInput> {
    let posts = profile.texts().map(|t| vocab.tokenize(t)).collect();
    let names = profile.recent_images(MAX_IMAGES);
    let images = if names.is_empty() {
        ImageView::Missing
    } else if let Some(cache) = cache {
        ImageView::Features(
            names
                .iter()
                .map(|n| {
                    cache
                        .get(n)
                        .cloned()
                        .ok_or_else(|| Error::NotFound(format!("cached features for {n}")))
                })
                .collect::<Result<_>>()?,
        )
    } else {
        ImageView::Pixels(names.iter().map(|n| lookup(n)).collect::<Result<_>>()?)
    };
    Ok(ProfileInput { posts, images })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: ProfileInput,
    pub truth: MbtiType,
}

fn prepare(corpus: &Corpus, idx: &[usize], vocab: &Vocab, cache: Option<&FeatureCache>) -> Result<Vec<Example>> {
    let lookup = |n: &str| corpus.image(n).cloned();
    idx.iter()
        .map(|&i| {
            let ex = &corpus.examples[i];
            Ok(Example {
                input: profile_input(&ex.profile, vocab, cache, &lookup)?,
                truth: ex.truth,
            })
        })
        .collect()
}

/// One pass over `data` in a seeded order; returns the mean example loss.
pub fn fit_epoch(
    profiler: &mut Profiler,
    adam: &mut Adam,
    data: &[Example],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for (step, batch) in order.chunks(batch_size).enumerate() {
        let diverged = |detail: String| Error::Diverged { epoch, step, detail };
        let mut grads = None;
        for &i in batch {
            let mut tape = Tape::new();
            let probs = profiler.forward(&mut tape, &data[i].input).map_err(|e| diverged(e.to_string()))?;
            let loss = bce_loss(&mut tape, probs, data[i].truth.labels()).map_err(|e| diverged(e.to_string()))?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(diverged(format!("loss {value}")));
            }
            total += value;
            tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
            accumulate(&mut grads, profiler.params.grads_from(&tape))?;
        }
        let scale = 1.0 / batch.len() as f64;
        let grads: Vec<Tensor> = grads
            .unwrap_or_default()
            .into_iter()
            .map(|g| g.map(|v| v * scale))
            .collect();
        adam.step(&mut profiler.params, &grads)?;
        if !profiler.params.is_finite() {
            return Err(diverged("parameters became non-finite".into()));
        }
    }
    Ok(total / data.len().max(1) as f64)
}

pub fn predict_all(profiler: &Profiler, data: &[Example]) -> Result<Vec<MbtiType>> {
    data.iter().map(|e| profiler.predict(&e.input)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean over the four axes of validation macro F1.
    pub val_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: ViewMode,
    pub test_macro_f1: [f64; 4],
    pub test_accuracy: [f64; 4],
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub profiler: Profiler,
    pub result: ModeResult,
}

/// Trains one view mode with early stopping on validation macro F1 and
/// reports test metrics of the best snapshot.
pub fn train(corpus: &Corpus, mode: ViewMode, config: &TrainConfig) -> Result<TrainOutcome> {
    let backbone = seeded_backbone(&config.dims, config.seed)?;
    let cache = if config.freeze_backbone && mode.uses_image() {
        Some(cache_features(corpus, &backbone)?)
    } else {
        None
    };
    train_with(corpus, mode, config, &backbone, cache.as_ref())
}

pub fn train_with(
    corpus: &Corpus,
    mode: ViewMode,
    config: &TrainConfig,
    backbone: &ImageEncoderParams,
    cache: Option<&FeatureCache>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty corpus".into()));
    }
    let split = split_indices(corpus.len(), config.seed);
    let vocab = Vocab::build(
        split
            .train
            .iter()
            .flat_map(|&i| corpus.examples[i].profile.texts()),
        Some(config.dims.max_vocab),
    );
    let cache = if config.freeze_backbone { cache } else { None };
    let train_set = prepare(corpus, &split.train, &vocab, cache)?;
    let val_set = prepare(corpus, &split.val, &vocab, cache)?;
    let test_set = prepare(corpus, &split.test, &vocab, cache)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pc = config.dims.profiler_config(mode, vocab.len());
    let mut profiler = Profiler::init(pc, vocab, &mut rng)?;
    profiler.params.image.blocks = backbone.blocks.clone();
    if mode.uses_image() {
        let feats = split_features(corpus, &split.train, backbone, cache)?;
        if !feats.is_empty() {
            profiler.params.image.fit_standardizer(&feats.iter().collect::<Vec<_>>())?;
        }
    }
    let mut adam = Adam::new(config.adam);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Profiler)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let loss = fit_epoch(&mut profiler, &mut adam, &train_set, config.batch_size, &mut rng, epoch)?;
        let val = if val_set.is_empty() {
            None
        } else {
            let preds = predict_all(&profiler, &val_set)?;
            let truths: Vec<MbtiType> = val_set.iter().map(|e| e.truth).collect();
            let f1 = axis_macro_f1(&preds, &truths)?;
            Some(f1.iter().sum::<f64>() / 4.0)
        };
        debug!("{} epoch {epoch}: loss {loss:.4} val {val:?}", mode.name());
        history.push(EpochStats {
            epoch,
            train_loss: loss,
            val_macro_f1: val,
        });
        match val {
            Some(v) if best.as_ref().is_none_or(|(b, _, _)| v > *b) => {
                best = Some((v, epoch, profiler.clone()));
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            None => {}
        }
    }
    let (best_epoch, profiler) = match best {
        Some((_, e, p)) => (e, p),
        None => (history.len(), profiler),
    };

    let (test_macro_f1, test_accuracy) = if test_set.is_empty() {
        ([0.0; 4], [0.0; 4])
    } else {
        let preds = predict_all(&profiler, &test_set)?;
        let truths: Vec<MbtiType> = test_set.iter().map(|e| e.truth).collect();
        let f1 = axis_macro_f1(&preds, &truths)?;
        let acc = Axis::ALL.map(|a| axis_accuracy(&preds, &truths, a));
        (f1, acc)
    };
    info!(
        "{} trained {} epochs (best {best_epoch}); test macro F1 {:?}",
        mode.name(),
        history.len(),
        test_macro_f1
    );
    Ok(TrainOutcome {
        profiler,
        result: ModeResult {
            mode,
            test_macro_f1,
            test_accuracy,
            best_epoch,
            history,
            train_size: train_set.len(),
            val_size: val_set.len(),
            test_size: test_set.len(),
        },
    })
}
