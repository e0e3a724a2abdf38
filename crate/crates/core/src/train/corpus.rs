//! Labeled multi-view corpora: the synthetic generator and the on-disk
//! `users.jsonl` + `images/` layout.
//!
//! Generative recipe of the synthetic corpus:
//!
//! * every axis label is balanced (exactly half the users per pole, up to
//!   one for odd counts) and shuffled independently of the other axes;
//! * a `Text` axis puts one word from its pole lexicon into every post;
//! * an `Image` axis picks the foreground palette (warm for the first
//!   pole, cool for the second), or the shape kind for a second image axis;
//! * a `Conjunction` axis draws a uniform text bit `a` (marker words in
//!   every post) and sets the image background to light iff
//!   `label XOR a`; each bit alone is independent of the label;
//! * a `Noise` axis writes the pole lexicon of a marker that agrees with
//!   the label only with the stated probability.
//!
//! Unassigned image attributes are drawn at random per image.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{load_png_sized, save_png, tensor_from_rgb};
use crate::mbti::{Axis, MbtiType};
use crate::store::model::{Platform, SocialPost, UserProfile};
use crate::tensor::Tensor;

/// Where an axis's signal is planted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Text,
    Image,
    Conjunction,
    Noise { agreement: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan(pub [Signal; 4]);

impl Default for SignalPlan {
    /// EI in text, SN in images, TF as a text-image conjunction and JP as
    /// a weak text marker.
    fn default() -> Self {
        Self([
            Signal::Text,
            Signal::Image,
            Signal::Conjunction,
            Signal::Noise { agreement: 0.55 },
        ])
    }
}

impl SignalPlan {
    fn validate(&self) -> Result<()> {
        let count = |pred: fn(&Signal) -> bool| self.0.iter().filter(|s| pred(s)).count();
        if count(|s| matches!(s, Signal::Image)) > 2 {
            return Err(Error::invalid("signal", "at most two axes can be planted in images"));
        }
        if count(|s| matches!(s, Signal::Conjunction)) > 1 {
            return Err(Error::invalid("signal", "at most one conjunction axis is supported"));
        }
        for s in &self.0 {
            if let Signal::Noise { agreement } = s {
                if !(0.0..=1.0).contains(agreement) {
                    return Err(Error::invalid("agreement", format!("{agreement} outside [0,1]")));
                }
            }
        }
        Ok(())
    }

    pub fn planted_axes(&self) -> Vec<Axis> {
        Axis::ALL
            .into_iter()
            .filter(|a| !matches!(self.0[a.index()], Signal::Noise { .. }))
            .collect()
    }

    pub fn noise_axes(&self) -> Vec<Axis> {
        Axis::ALL
            .into_iter()
            .filter(|a| matches!(self.0[a.index()], Signal::Noise { .. }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_users: usize,
    pub seed: u64,
    pub plan: SignalPlan,
    pub posts_per_user: usize,
    pub images_per_user: usize,
    /// Inclusive range of signal-free words added to each post.
    pub filler_words: (usize, usize),
    pub image_size: usize,
}

impl CorpusConfig {
    pub fn new(n_users: usize, seed: u64) -> Self {
        Self {
            n_users,
            seed,
            plan: SignalPlan::default(),
            posts_per_user: 3,
            images_per_user: 2,
            filler_words: (1, 3),
            image_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub profile: UserProfile,
    pub truth: MbtiType,
}

/// Labeled users plus the images they reference, keyed by file name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub examples: Vec<LabeledExample>,
    pub images: BTreeMap<String, Tensor>,
}

const LEXICONS: [[&[&str]; 2]; 4] = [
    [
        &["party", "friends", "crowd", "festival", "dancing", "team", "cheers", "meetup"],
        &["book", "quiet", "alone", "tea", "journal", "library", "reading", "solitude"],
    ],
    [
        &["detail", "fact", "practical", "recipe", "measure", "routine", "checklist", "hands"],
        &["dream", "idea", "imagine", "vision", "theory", "wonder", "symbol", "possibility"],
    ],
    [
        &["logic", "analysis", "debate", "metrics", "efficient", "reason", "proof", "strategy"],
        &["feel", "heart", "kindness", "care", "hug", "empathy", "grateful", "warmth"],
    ],
    [
        &["schedule", "deadline", "plan", "organized", "agenda", "prepared", "calendar", "tidy"],
        &["spontaneous", "wander", "improvise", "whatever", "roadtrip", "maybe", "adventure", "flexible"],
    ],
];

const MARKERS: [&[&str]; 2] = [
    &["mountain", "river", "forest", "sunrise", "meadow", "lake"],
    &["subway", "neon", "downtown", "traffic", "skyline", "concrete"],
];

const FILLER: &[&str] = &[
    "the", "a", "today", "really", "just", "with", "my", "this", "so", "and", "new", "post", "time", "day", "photo",
    "love", "great", "week", "morning", "coffee", "weekend", "good", "look", "out", "at", "on", "of", "for", "some",
    "more",
];

const WARM: [[u8; 3]; 4] = [[220, 60, 40], [240, 140, 30], [230, 200, 50], [200, 40, 90]];
const COOL: [[u8; 3]; 4] = [[40, 90, 220], [30, 170, 180], [110, 60, 200], [50, 160, 110]];

/// Image attributes; `None` means random per image.
#[derive(Clone, Copy, Default)]
struct Look {
    warm: Option<bool>,
    light: Option<bool>,
    square: Option<bool>,
}

fn balanced(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    v.shuffle(rng);
    v
}

/// A shapes picture with every attribute drawn at random.
pub(crate) fn random_shapes(size: usize, rng: &mut impl Rng) -> RgbImage {
    draw(Look::default(), size, rng)
}

fn draw(look: Look, size: usize, rng: &mut impl Rng) -> RgbImage {
    let warm = look.warm.unwrap_or_else(|| rng.random());
    let light = look.light.unwrap_or_else(|| rng.random());
    let base: i32 = if light { 205 } else { 45 } + rng.random_range(-15..=15);
    let tint: [i32; 3] = std::array::from_fn(|_| rng.random_range(-8..=8));
    let palette = if warm { &WARM } else { &COOL };
    let s = size as i32;
    let mut img = RgbImage::from_fn(size as u32, size as u32, |_, _| {
        Rgb(std::array::from_fn(|c| (base + tint[c]).clamp(0, 255) as u8))
    });
    for _ in 0..rng.random_range(4..=6) {
        let square = look.square.unwrap_or_else(|| rng.random());
        let color = palette[rng.random_range(0..palette.len())];
        let r = rng.random_range(s / 8..=s / 4).max(1);
        let (cx, cy) = (rng.random_range(0..s), rng.random_range(0..s));
        for y in (cy - r).max(0)..(cy + r + 1).min(s) {
            for x in (cx - r).max(0)..(cx + r + 1).min(s) {
                let inside = square || (x - cx).pow(2) + (y - cy).pow(2) <= r * r;
                if inside {
                    img.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
    }
    for px in img.pixels_mut() {
        for c in px.0.iter_mut() {
            *c = (*c as i32 + rng.random_range(-6..=6)).clamp(0, 255) as u8;
        }
    }
    img
}

/// Deterministic synthetic corpus for `config.seed`.
pub fn synthesize_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.plan.validate()?;
    if config.n_users == 0 {
        return Err(Error::invalid("n_users", "must be at least 1"));
    }
    if config.filler_words.0 > config.filler_words.1 {
        return Err(Error::invalid("filler_words", "lower bound exceeds upper bound"));
    }
    let n = config.n_users;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels: Vec<Vec<bool>> = (0..4).map(|_| balanced(n, &mut rng)).collect();
    let marker_bits = balanced(n, &mut rng);

    let mut corpus = Corpus::default();
    for u in 0..n {
        let truth = MbtiType::from_labels(std::array::from_fn(|a| labels[a][u]));
        let mut words_per_post: Vec<&str> = Vec::new();
        let mut look = Look::default();
        let mut image_axes = 0;
        for axis in Axis::ALL {
            let first = labels[axis.index()][u];
            let pole = |first: bool| if first { 0 } else { 1 };
            match config.plan.0[axis.index()] {
                Signal::Text => words_per_post.push(pick(LEXICONS[axis.index()][pole(first)], &mut rng)),
                Signal::Image => {
                    if image_axes == 0 {
                        look.warm = Some(first);
                    } else {
                        look.square = Some(first);
                    }
                    image_axes += 1;
                }
                Signal::Conjunction => {
                    let a = marker_bits[u];
                    words_per_post.push(pick(MARKERS[pole(a)], &mut rng));
                    look.light = Some(first ^ a);
                }
                Signal::Noise { agreement } => {
                    let marker = if rng.random_bool(agreement) { first } else { !first };
                    words_per_post.push(pick(LEXICONS[axis.index()][pole(marker)], &mut rng));
                }
            }
        }

        let id = format!("u{u:04}");
        let mut profile = UserProfile::new(
            id.clone(),
            format!("user{u:04}"),
            if u % 2 == 0 { Platform::Twitter } else { Platform::Instagram },
        );
        let posts_n = config.posts_per_user.max(config.images_per_user).max(1);
        let mut posts = Vec::with_capacity(posts_n);
        for p in 0..posts_n {
            let mut tokens: Vec<&str> = (0..rng.random_range(config.filler_words.0..=config.filler_words.1)).map(|_| pick(FILLER, &mut rng)).collect();
            if p < config.posts_per_user {
                tokens.extend(words_per_post.iter().map(|w| pick_again(w, &mut rng)));
            }
            tokens.shuffle(&mut rng);
            let mut images = Vec::new();
            if p < config.images_per_user {
                let name = format!("{id}-{p}.png");
                let img = draw(look, config.image_size, &mut rng);
                corpus.images.insert(name.clone(), tensor_from_rgb(&img));
                images.push(name);
            }
            posts.push(SocialPost {
                id: format!("{id}-p{p}"),
                text: if p < config.posts_per_user { tokens.join(" ") } else { String::new() },
                images,
                timestamp: (1000 - p) as u64,
            });
        }
        posts.retain(|p| !p.text.is_empty() || !p.images.is_empty());
        profile.merge_posts(posts);
        profile.mbti = Some(truth);
        corpus.examples.push(LabeledExample { profile, truth });
    }
    Ok(corpus)
}

fn pick<'a>(words: &[&'a str], rng: &mut impl Rng) -> &'a str {
    words[rng.random_range(0..words.len())]
}

/// Draws a fresh word from the same lexicon as `word` so posts vary.
fn pick_again<'a>(word: &'a str, rng: &mut impl Rng) -> &'a str {
    let all = LEXICONS.iter().flat_map(|pair| pair.iter()).chain(MARKERS.iter());
    for lex in all {
        if lex.contains(&word) {
            return pick(lex, rng);
        }
    }
    word
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn image(&self, name: &str) -> Result<&Tensor> {
        self.images
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("image {name}")))
    }

    /// Fraction of users on the first pole of each axis.
    pub fn label_marginals(&self) -> [f64; 4] {
        let n = self.examples.len().max(1) as f64;
        std::array::from_fn(|a| {
            self.examples
                .iter()
                .filter(|e| e.truth.is_first_pole(Axis::ALL[a]))
                .count() as f64
                / n
        })
    }

    /// Writes `users.jsonl` (one profile per line, `mbti` holding the
    /// truth) and `images/*.png`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("users.jsonl"))?);
        for ex in &self.examples {
            let mut p = ex.profile.clone();
            p.mbti = Some(ex.truth);
            serde_json::to_writer(&mut out, &p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        for (name, img) in &self.images {
            save_png(&dir.join("images").join(name), img)?;
        }
        Ok(())
    }

    /// Reads the layout written by [`Corpus::save`]. Every user must carry
    /// an `mbti` label; images must be `image_size` square.
    pub fn load(dir: &Path, image_size: usize) -> Result<Self> {
        let path = dir.join("users.jsonl");
        let file = fs::File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => e.into(),
        })?;
        let mut corpus = Corpus::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| Error::Corrupt {
                path: path.clone(),
                line: i + 1,
                message,
            };
            let mut profile: UserProfile = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let truth = profile.mbti.ok_or_else(|| corrupt("user has no mbti label".into()))?;
            profile.normalize();
            for name in profile.posts.iter().flat_map(|p| &p.images) {
                if !corpus.images.contains_key(name) {
                    let img = load_png_sized(&dir.join("images").join(name), image_size)?;
                    corpus.images.insert(name.clone(), img);
                }
            }
            corpus.examples.push(LabeledExample { profile, truth });
        }
        Ok(corpus)
    }
}
