//! A small, fast platform configuration and scripted feedback helpers.

use personaforge::feedback::{Compliance, FeedbackRecord, YesNo};
use personaforge::gan::{DiscriminatorConfig, GeneratorConfig, StyleFitConfig};
use personaforge::pipeline::demo::{write_demo_corpus, DemoConfig, DemoLayout};
use personaforge::pipeline::{IndustryConfig, Pipeline, PipelineConfig};
use personaforge::train::ModelDims;
use std::path::Path;

pub const INDUSTRY: &str = "fashion";

pub fn fast_config() -> PipelineConfig {
    let mut c = PipelineConfig {
        industries: vec![
            IndustryConfig::new(INDUSTRY, &["shirt"]),
            IndustryConfig::new("fast_food", &["burger"]),
        ],
        gan_steps: 30,
        ..PipelineConfig::default()
    };
    c.profiler.max_epochs = 4;
    c.profiler.dims = ModelDims {
        embed_dim: 16,
        hidden: 16,
        view_dim: 8,
        image_channels: vec![4, 8],
        image_size: 32,
        head_hidden: 16,
        max_vocab: 500,
    };
    c.gan.generator = GeneratorConfig {
        z_dim: 16,
        w_dim: 16,
        mapping_layers: 2,
        const_channels: 16,
        channels: vec![16, 8, 8, 4],
    };
    c.gan.discriminator = DiscriminatorConfig {
        input_size: 32,
        channels: vec![4, 8, 8, 8],
    };
    c.style = StyleFitConfig {
        channels: vec![4, 8],
        samples: 24,
        steps: 30,
        ..StyleFitConfig::default()
    };
    c
}

pub fn demo_config() -> DemoConfig {
    DemoConfig {
        users: 40,
        assets_per_industry: 36,
        asset_size: 64,
        user_image_size: 32,
        engagements_per_user: 4,
        seed: 11,
    }
}

/// Writes the demo corpus under `dir` and opens a pipeline over `dir/data`.
pub fn fixture(dir: &Path, config: PipelineConfig) -> (Pipeline, DemoLayout) {
    let layout = write_demo_corpus(&dir.join("corpus"), &demo_config(), &config.industries).unwrap();
    let p = Pipeline::open(dir.join("data"), config).unwrap();
    (p, layout)
}

pub fn rating(round: &str, card: &str, positive: bool, t: u64) -> FeedbackRecord {
    FeedbackRecord {
        round_id: round.into(),
        card_id: card.into(),
        attractiveness: if positive { 80 } else { 30 },
        preference: if positive { 5 } else { 2 },
        compliance: Compliance::Yes,
        would_click: YesNo::No,
        timestamp: t,
    }
}
