pub mod gru;
pub mod image;
pub mod text;
pub mod vocab;

pub use gru::{gru_run, gru_step, GruParams};
pub use image::{encode_images, ConvBlock, project_features, ImageEncoderConfig, ImageEncoderParams, MAX_IMAGES};
pub use text::{bigru_states, encode_text, TextEncoderConfig, TextEncoderParams};
pub use vocab::{TokenizedPost, Vocab, MAX_POST_TOKENS, PAD_ID, UNK_ID};
