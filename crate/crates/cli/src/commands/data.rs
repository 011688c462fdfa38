use std::str::FromStr;

use lrsim_data::{synth_generate, ControlStats, EpisodeEntry, Manifest, Policy, SyntheticRoadConfig};

use crate::args::GenDataArgs;
use crate::error::{CliError, Result};

/// Seed offset separating held-out episodes from training episodes.
const HELDOUT_SEED_OFFSET: u64 = 500;
const MIXED: &str = "mixed";

fn policies(name: &str) -> Result<Vec<Policy>> {
    if name == MIXED {
        Ok(Policy::ALL.to_vec())
    } else {
        Ok(vec![Policy::from_str(name)?])
    }
}

/// Splits `total` frames as evenly as possible, earlier parts taking the remainder.
fn split_frames(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| total / parts + usize::from(k < total % parts)).collect()
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let out = cfg.path_or("out", args.out, "out")?;
    let d = &mut cfg.data;
    d.frames = args.frames.unwrap_or(d.frames);
    d.heldout_frames = args.heldout_frames.unwrap_or(d.heldout_frames);
    d.policy = args.policy.unwrap_or(d.policy.clone());
    d.seed = args.seed.unwrap_or(d.seed);
    cfg.geometry.width = args.width.unwrap_or(cfg.geometry.width);
    cfg.geometry.height = args.height.unwrap_or(cfg.geometry.height);
    cfg.settle()?;
    let d = &cfg.data;
    if d.frames == 0 {
        return Err(CliError::Usage("--frames must be positive".into()));
    }
    let policies = policies(&d.policy)?;
    let template = SyntheticRoadConfig { width: cfg.geometry.width, height: cfg.geometry.height, ..Default::default() };
    template.validate()?;
    std::fs::create_dir_all(&out).map_err(CliError::io(&out))?;

    let mut entries = Vec::new();
    let mut train_eps = Vec::new();
    for (heldout, total) in [(false, d.frames), (true, d.heldout_frames)] {
        let split = if heldout { "heldout" } else { "train" };
        for (k, (&policy, frames)) in policies.iter().zip(split_frames(total, policies.len())).enumerate() {
            if frames == 0 {
                continue;
            }
            let offset = if heldout { HELDOUT_SEED_OFFSET } else { 0 };
            let synth = SyntheticRoadConfig { seed: d.seed * 1000 + offset + k as u64, ..template.clone() };
            let ep = synth_generate(&synth, frames, policy)?;
            let path = format!("{split}_{k:03}_{}.cdrv", policy.name());
            ep.save(&out.join(&path))?;
            log::info!("wrote {path}: {frames} frames");
            entries.push(EpisodeEntry { path, frames, policy: Some(policy.name().into()), heldout });
            if !heldout {
                train_eps.push(ep);
            }
        }
    }
    let manifest = Manifest {
        episodes: entries,
        controls: ControlStats::from_episodes(&train_eps)?,
        geometry: cfg.geometry,
        rate_hz: template.frame_rate_hz,
        seed: d.seed,
    };
    let path = manifest.save(&out)?;
    cfg.echo(&out)?;
    println!(
        "wrote {} episodes ({} training frames, {} held-out) and {}",
        manifest.episodes.len(),
        d.frames,
        d.heldout_frames,
        path.display()
    );
    Ok(())
}
