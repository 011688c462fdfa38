#![allow(dead_code)]

use std::path::Path;

use lrsim_core::{AeArch, Rnn, RnnConfig, VaeGan};
use lrsim_data::{synth_generate, ControlStats, Episode, Geometry, Policy, SyntheticRoadConfig};
use lrsim_sim::SimModel;
use lrsim_tensor::SeededRng;

pub const LATENT: usize = 16;

pub fn episode(frames: usize) -> Episode {
    let cfg = SyntheticRoadConfig { seed: 11, ..SyntheticRoadConfig::default() };
    synth_generate(&cfg, frames, Policy::Curve).unwrap()
}

pub fn model_with(rnn: Rnn<f32>) -> SimModel {
    let arch = AeArch { geometry: Geometry::DESK, latent_dim: LATENT, conv_channels: vec![4, 8, 8], feature_layer: 2 };
    let ae = VaeGan::new(arch, &mut SeededRng::new(1)).unwrap();
    let stats = ControlStats::from_episodes(&[episode(40)]).unwrap();
    SimModel::new(ae, rnn, stats, 5.0).unwrap()
}

pub fn model() -> SimModel {
    model_with(Rnn::new(RnnConfig::new(LATENT, 32), &mut SeededRng::new(2)).unwrap())
}

pub fn save_episode(dir: &Path, frames: usize) -> std::path::PathBuf {
    let path = dir.join("seed.cdrv");
    episode(frames).save(&path).unwrap();
    path
}
