//! Direct-product fusion of the text and image views and the MBTI head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::encoders::{
    encode_images, encode_text, project_features, ImageEncoderConfig, ImageEncoderParams, TextEncoderConfig,
    TextEncoderParams, TokenizedPost, Vocab,
};
use crate::error::{Error, Result};
use crate::impl_params;
use crate::mbti::MbtiType;
use crate::tensor::{Checkpoint, Params, Tape, Tensor, Var};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Which views feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Text,
    Image,
    Fused,
}

impl ViewMode {
    pub const ALL: [ViewMode; 3] = [ViewMode::Text, ViewMode::Image, ViewMode::Fused];

    pub fn name(self) -> &'static str {
        match self {
            ViewMode::Text => "text",
            ViewMode::Image => "image",
            ViewMode::Fused => "fused",
        }
    }

    pub fn uses_text(self) -> bool {
        self != ViewMode::Image
    }

    pub fn uses_image(self) -> bool {
        self != ViewMode::Text
    }
}

/// Flattened outer product: element `i * len(v) + j` is `t[i] * v[j]`.
pub fn direct_product(tape: &mut Tape<'_>, t: Var, v: Var) -> Result<Var> {
    let (a, b) = (tape.shape(t), tape.shape(v));
    if a.len() != 1 || a != b {
        return Err(Error::dim(format!("direct product needs equal-length vectors, got {a:?} and {b:?}")));
    }
    tape.outer(t, v)
}

/// Hidden relu layer followed by one sigmoid unit per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl_params!(FusionParams { hidden_w, hidden_b, out_w, out_b });

impl FusionParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            hidden_w: Tensor::zeros(&[input, hidden]),
            hidden_b: Tensor::zeros(&[1, hidden]),
            out_w: Tensor::zeros(&[hidden, 4]),
            out_b: Tensor::zeros(&[1, 4]),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden_w: Tensor::randn(&[input, hidden], (2.0 / input as f64).sqrt(), rng),
            hidden_b: Tensor::full(&[1, hidden], 0.01),
            out_w: Tensor::randn(&[hidden, 4], (1.0 / hidden as f64).sqrt(), rng),
            out_b: Tensor::zeros(&[1, 4]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_w.shape()[0]
    }

    /// Maps a fused vector `[input]` to four probabilities `[4]`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, x: Var) -> Result<Var> {
        let x = tape.reshape(x, &[1, self.input_dim()])?;
        let (w1, b1) = (tape.param(&self.hidden_w), tape.param(&self.hidden_b));
        let h = tape.linear(x, w1, b1)?;
        let h = tape.relu(h)?;
        let (w2, b2) = (tape.param(&self.out_w), tape.param(&self.out_b));
        let logits = tape.linear(h, w2, b2)?;
        let p = tape.sigmoid(logits)?;
        tape.reshape(p, &[4])
    }
}

/// Summed binary cross-entropy over the four axes. `labels[i]` is true
/// when the first pole is the truth.
pub fn bce_loss(tape: &mut Tape<'_>, probabilities: Var, labels: [bool; 4]) -> Result<Var> {
    if tape.shape(probabilities) != [4] {
        return Err(Error::dim(format!("expected [4] probabilities, got {:?}", tape.shape(probabilities))));
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let y_not: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = tape.constant(Tensor::vector(y));
    let y_not = tape.constant(Tensor::vector(y_not));
    let p = tape.clamp(probabilities, BCE_EPS, 1.0 - BCE_EPS)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let ln_p = tape.ln(p)?;
    let ln_q = tape.ln(q)?;
    let a = tape.mul(y, ln_p)?;
    let b = tape.mul(y_not, ln_q)?;
    let s = tape.add(a, b)?;
    let s = tape.sum(s)?;
    tape.scale(s, -1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilerConfig {
    pub mode: ViewMode,
    pub text: TextEncoderConfig,
    pub image: ImageEncoderConfig,
    pub hidden: usize,
}

impl ProfilerConfig {
    pub fn new(mode: ViewMode, vocab_size: usize) -> Self {
        Self {
            mode,
            text: TextEncoderConfig::with_vocab(vocab_size),
            image: ImageEncoderConfig::default(),
            hidden: 128,
        }
    }

    /// Width of the vector entering the head. Single-view modes feed the
    /// view vector directly; fused mode feeds the direct product.
    pub fn head_input(&self) -> usize {
        match self.mode {
            ViewMode::Text => self.text.out_dim,
            ViewMode::Image => self.image.out_dim,
            ViewMode::Fused => self.text.out_dim * self.image.out_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfilerParams {
    pub text: TextEncoderParams,
    pub image: ImageEncoderParams,
    pub head: FusionParams,
}

impl_params!(ProfilerParams { text, image, head });

/// A user's image view, either raw pixels or cached backbone features.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ImageView {
    #[default]
    Missing,
    Pixels(Vec<Tensor>),
    Features(Vec<Tensor>),
}

impl ImageView {
    pub fn is_missing(&self) -> bool {
        match self {
            ImageView::Missing => true,
            ImageView::Pixels(v) | ImageView::Features(v) => v.is_empty(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileInput {
    /// Posts, most recent first.
    pub posts: Vec<TokenizedPost>,
    /// Images, most recent first.
    pub images: ImageView,
}

/// The full personality profiler: vocabulary, both encoders and the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Profiler {
    pub config: ProfilerConfig,
    pub vocab: Vocab,
    pub params: ProfilerParams,
}

impl Profiler {
    pub fn init(config: ProfilerConfig, vocab: Vocab, rng: &mut impl Rng) -> Result<Self> {
        if config.text.vocab_size != vocab.len() {
            return Err(Error::invalid(
                "vocab_size",
                format!("config says {} but vocabulary has {}", config.text.vocab_size, vocab.len()),
            ));
        }
        let text = TextEncoderParams::init(config.text, rng);
        let image = ImageEncoderParams::init(&config.image, rng)?;
        let head = FusionParams::init(config.head_input(), config.hidden, rng);
        Ok(Self {
            config,
            vocab,
            params: ProfilerParams { text, image, head },
        })
    }

    pub fn mode(&self) -> ViewMode {
        self.config.mode
    }

    /// Tokenizes raw post texts with this profiler's vocabulary.
    pub fn tokenize<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vec<TokenizedPost> {
        texts.into_iter().map(|t| self.vocab.tokenize(t)).collect()
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p>, input: &ProfileInput) -> Result<Var> {
        forward_with(tape, &self.config, &self.params, input)
    }

    pub fn predict(&self, input: &ProfileInput) -> Result<MbtiType> {
        let mut tape = Tape::new();
        let p = self.forward(&mut tape, input)?;
        let v = tape.value(p).data();
        MbtiType::from_probabilities([v[0], v[1], v[2], v[3]])
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_params(&self.params, "");
        ck.meta.insert("kind".into(), "profiler".into());
        ck.meta.insert("config".into(), serde_json::to_value(&self.config)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Vocab) -> Result<Self> {
        if ck.meta.get("kind").and_then(|v| v.as_str()) != Some("profiler") {
            return Err(Error::Checkpoint("not a profiler checkpoint".into()));
        }
        let config: ProfilerConfig = serde_json::from_value(
            ck.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("profiler checkpoint has no config".into()))?,
        )?;
        let mut params = ProfilerParams {
            text: TextEncoderParams::zeros(config.text),
            image: ImageEncoderParams::init(&config.image, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?,
            head: FusionParams::zeros(config.head_input(), config.hidden),
        };
        ck.load_into(&mut params, "")?;
        if vocab.len() != config.text.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, checkpoint expects {}",
                vocab.len(),
                config.text.vocab_size
            )));
        }
        Ok(Self { config, vocab, params })
    }

    /// Writes `profiler.ckpt` and `vocab.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.vocab.save(&dir.join("vocab.json"))?;
        self.to_checkpoint()?.save(&dir.join("profiler.ckpt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocab::load(&dir.join("vocab.json"))?;
        Self::from_checkpoint(&Checkpoint::load(&dir.join("profiler.ckpt"))?, vocab)
    }

    pub fn is_finite(&self) -> bool {
        self.params.is_finite()
    }
}

/// Full forward pass to four probabilities. A missing view contributes a
/// zero vector; a profile with neither posts nor images is rejected.
pub fn forward_with<'p>(
    tape: &mut Tape<'p>,
    config: &ProfilerConfig,
    params: &'p ProfilerParams,
    input: &ProfileInput,
) -> Result<Var> {
    if input.posts.is_empty() && input.images.is_missing() {
        return Err(Error::InsufficientData("profile has neither posts nor images".into()));
    }
    let mode = config.mode;
    let text = if !mode.uses_text() {
        None
    } else if input.posts.is_empty() {
        Some(tape.constant(Tensor::zeros(&[config.text.out_dim])))
    } else {
        Some(encode_text(tape, &input.posts, &params.text)?)
    };
    let image = if !mode.uses_image() {
        None
    } else {
        Some(match &input.images {
            ImageView::Pixels(imgs) if !imgs.is_empty() => encode_images(tape, imgs, &params.image)?,
            ImageView::Features(feats) if !feats.is_empty() => {
                let vars: Vec<Var> = feats
                    .iter()
                    .take(crate::encoders::MAX_IMAGES)
                    .map(|f| tape.constant(f.clone()))
                    .collect();
                project_features(tape, &vars, &params.image)?
            }
            _ => tape.constant(Tensor::zeros(&[config.image.out_dim])),
        })
    };
    let x = match (text, image) {
        (Some(t), Some(v)) => direct_product(tape, t, v)?,
        (Some(t), None) => t,
        (None, Some(v)) => v,
        (None, None) => unreachable!("every mode uses at least one view"),
    };
    params.head.forward(tape, x)
}
