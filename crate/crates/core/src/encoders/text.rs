use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{gru_run, GruParams};
use super::vocab::{TokenizedPost, PAD_ID};
use crate::error::{Error, Result};
use crate::impl_params;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl TextEncoderConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            hidden: 64,
            out_dim: 32,
        }
    }
}

/// Embedding table, forward and backward GRUs, and the projection from
/// the concatenated final states to the text view vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams {
    pub embedding: Tensor,
    pub forward: GruParams,
    pub backward: GruParams,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl_params!(TextEncoderParams { embedding, forward, backward, proj_w, proj_b });

impl TextEncoderParams {
    pub fn zeros(cfg: TextEncoderConfig) -> Self {
        Self {
            embedding: Tensor::zeros(&[cfg.vocab_size, cfg.embed_dim]),
            forward: GruParams::zeros(cfg.embed_dim, cfg.hidden),
            backward: GruParams::zeros(cfg.embed_dim, cfg.hidden),
            proj_w: Tensor::zeros(&[2 * cfg.hidden, cfg.out_dim]),
            proj_b: Tensor::zeros(&[1, cfg.out_dim]),
        }
    }

    pub fn init(cfg: TextEncoderConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg);
        p.embedding = Tensor::randn(&[cfg.vocab_size, cfg.embed_dim], 0.3, rng);
        p.forward = GruParams::init(cfg.embed_dim, cfg.hidden, rng);
        p.backward = GruParams::init(cfg.embed_dim, cfg.hidden, rng);
        let fan_in = (2 * cfg.hidden) as f64;
        p.proj_w = Tensor::randn(&[2 * cfg.hidden, cfg.out_dim], (2.0 / fan_in).sqrt(), rng);
        p.proj_b = Tensor::full(&[1, cfg.out_dim], 0.01);
        p
    }

    pub fn out_dim(&self) -> usize {
        self.proj_w.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    /// Replaces the embedding table, e.g. with pretrained vectors.
    pub fn import_embedding(&mut self, table: Tensor) -> Result<()> {
        if table.shape() != self.embedding.shape() {
            return Err(Error::dim(format!(
                "embedding table {:?} does not match {:?}",
                table.shape(),
                self.embedding.shape()
            )));
        }
        self.embedding = table;
        Ok(())
    }
}

/// Concatenated final forward and backward states for one post, `[2H]`.
pub fn bigru_states<'p>(tape: &mut Tape<'p>, post: &TokenizedPost, p: &'p TextEncoderParams) -> Result<Var> {
    // Trailing padding is not fed to the recurrence; a blank post is a
    // single PAD step.
    let ids: &[usize] = if post.ids.is_empty() {
        &[PAD_ID]
    } else {
        &post.ids
    };
    let table = tape.param(&p.embedding);
    let emb = tape.embedding(table, ids)?;
    let fwd = gru_run(tape, emb, &p.forward, false)?;
    let bwd = gru_run(tape, emb, &p.backward, true)?;
    tape.concat(&[fwd, bwd])
}

/// Text view vector `[out_dim]`: per-post BiGRU states averaged across
/// posts, then projected with a relu layer.
pub fn encode_text<'p>(tape: &mut Tape<'p>, posts: &[TokenizedPost], p: &'p TextEncoderParams) -> Result<Var> {
    if posts.is_empty() {
        return Err(Error::InsufficientData("encode_text needs at least one post".into()));
    }
    let states = posts
        .iter()
        .map(|post| bigru_states(tape, post, p))
        .collect::<Result<Vec<_>>>()?;
    let pooled = tape.mean_of(&states)?;
    let width = tape.shape(pooled)[0];
    let pooled = tape.reshape(pooled, &[1, width])?;
    let w = tape.param(&p.proj_w);
    let b = tape.param(&p.proj_b);
    let y = tape.linear(pooled, w, b)?;
    let y = tape.relu(y)?;
    tape.reshape(y, &[p.out_dim()])
}
