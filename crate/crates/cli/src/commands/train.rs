use std::path::Path;

use lrsim_core::{encode_frames, train_ae as fit_autoencoder, train_rnn as fit_transition, CodeDataset, FrameSet, VaeGan};
use lrsim_data::{subsample_rate, CodeSequence, Episode, EpisodeEntry, Manifest};
use lrsim_nn::Checkpoint;

use crate::args::{existing, EncodeArgs, TrainAeArgs, TrainRnnArgs};
use crate::codes::{file_sha256, CodeIndex};
use crate::error::{CliError, Result};

/// Frames between held-out evaluation frames when a dataset has no held-out split.
const FALLBACK_STRIDE: usize = 5;

fn load_resume(path: Option<std::path::PathBuf>) -> Result<Option<Checkpoint>> {
    match path {
        Some(p) => Ok(Some(Checkpoint::load(&existing(p, "checkpoint")?)?)),
        None => Ok(None),
    }
}

pub(crate) fn load_dataset(path: &Path) -> Result<(Manifest, Vec<Episode>, Vec<Episode>)> {
    let (manifest, root) = Manifest::load(path)?;
    let train = manifest.split(false).load_episodes(&root)?;
    let heldout = manifest.split(true).load_episodes(&root)?;
    Ok((manifest, train, heldout))
}

pub fn train_ae(args: TrainAeArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let data = existing(cfg.path_or("data", args.data, "data")?, "dataset")?;
    let out = cfg.path_or("out", args.out, "out")?;
    let resume = args.resume.or_else(|| cfg.paths.get("resume").cloned());
    if let Some(r) = &resume {
        cfg.set_path("resume", r);
    }
    let a = &mut cfg.autoencoder;
    a.epochs = args.epochs.unwrap_or(a.epochs);
    a.updates_per_epoch = args.updates.unwrap_or(a.updates_per_epoch);
    a.batch_size = args.batch.unwrap_or(a.batch_size);
    a.learning_rate = args.lr.unwrap_or(a.learning_rate);
    a.seed = args.seed.unwrap_or(a.seed);
    cfg.latent_dim = args.latent_dim.unwrap_or(cfg.latent_dim);

    let (manifest, train_eps, heldout_eps) = load_dataset(&data)?;
    cfg.geometry = manifest.geometry;
    cfg.settle()?;
    let train_config = cfg.ae_train();
    train_config.validate()?;
    if train_eps.is_empty() {
        return Err(CliError::Usage(format!("{} lists no training episodes", data.display())));
    }
    let train = FrameSet::from_episodes(&train_eps)?;
    let heldout = if heldout_eps.is_empty() {
        log::warn!("dataset has no held-out episodes; evaluating on every {FALLBACK_STRIDE}th training frame");
        train.strided(FALLBACK_STRIDE)
    } else {
        FrameSet::from_episodes(&heldout_eps)?
    };
    cfg.echo(&out)?;
    let ck = load_resume(resume)?;
    let report = fit_autoencoder(train_config, &train, &heldout, &out, ck.as_ref())?;
    let last = report.per_epoch.last().copied().unwrap_or(report.initial);
    if !last.mse.is_finite() {
        return Err(CliError::Numeric(format!("held-out reconstruction error is {}", last.mse)));
    }
    println!(
        "held-out mse {:.5} -> {:.5} (psnr {:.2} dB) after {} steps, {} rolled back; checkpoint {}",
        report.initial.mse,
        last.mse,
        last.psnr,
        report.steps,
        report.aborted_steps,
        report.checkpoint.display()
    );
    Ok(())
}

pub fn encode(args: EncodeArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let ae_path = existing(cfg.path_or("ae", args.ae, "ae")?, "checkpoint")?;
    let data = existing(cfg.path_or("data", args.data, "data")?, "dataset")?;
    let out = cfg.path_or("out", args.out, "out")?;
    cfg.transition.rate_hz = args.rate_hz.unwrap_or(cfg.transition.rate_hz);
    let model = VaeGan::<f32>::from_checkpoint(&Checkpoint::load(&ae_path)?)?;
    let (manifest, root) = Manifest::load(&data)?;
    if model.arch().geometry != manifest.geometry {
        return Err(CliError::Usage(format!(
            "autoencoder expects {:?} frames but the dataset holds {:?}",
            model.arch().geometry,
            manifest.geometry
        )));
    }
    cfg.geometry = manifest.geometry;
    cfg.latent_dim = model.latent_dim();
    cfg.settle()?;
    cfg.echo(&out)?;

    let mut entries = Vec::new();
    for entry in &manifest.episodes {
        let ep = subsample_rate(&Episode::load(&root.join(&entry.path))?, cfg.transition.rate_hz)?;
        let codes = encode_frames(&model, &FrameSet::from_episodes(std::slice::from_ref(&ep))?)?;
        let seq = CodeSequence {
            dim: model.latent_dim(),
            codes,
            frame_ts: ep.frame_ts.clone(),
            controls: ep.synced_controls()?,
            rate_hz: ep.rate_hz,
        };
        seq.save(&out.join(&entry.path))?;
        entries.push(EpisodeEntry { frames: seq.len(), ..entry.clone() });
    }
    let index = CodeIndex {
        episodes: entries,
        controls: manifest.controls,
        latent_dim: model.latent_dim(),
        rate_hz: cfg.transition.rate_hz,
        autoencoder_sha256: file_sha256(&ae_path)?,
    };
    let path = index.save(&out)?;
    println!(
        "encoded {} episodes into {}-d codes at {} Hz; index {}",
        index.episodes.len(),
        index.latent_dim,
        index.rate_hz,
        path.display()
    );
    Ok(())
}

pub fn train_rnn(args: TrainRnnArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let codes = existing(cfg.path_or("codes", args.codes, "codes")?, "code directory")?;
    let out = cfg.path_or("out", args.out, "out")?;
    let resume = args.resume.or_else(|| cfg.paths.get("resume").cloned());
    if let Some(r) = &resume {
        cfg.set_path("resume", r);
    }
    let t = &mut cfg.transition;
    t.seq_len = args.seq_len.unwrap_or(t.seq_len);
    t.teacher_forced = args.teacher.unwrap_or(t.teacher_forced);
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.updates_per_epoch = args.updates.unwrap_or(t.updates_per_epoch);
    t.batch_size = args.batch.unwrap_or(t.batch_size);
    t.hidden = args.hidden.unwrap_or(t.hidden);
    t.learning_rate = args.lr.unwrap_or(t.learning_rate);
    t.seed = args.seed.unwrap_or(t.seed);
    cfg.settle()?;

    let (index, root) = CodeIndex::load(&codes)?;
    cfg.latent_dim = index.latent_dim;
    cfg.transition.rate_hz = index.rate_hz;
    let train_config = cfg.rnn_train();
    train_config.validate()?;
    let train_seqs = index.load_split(&root, false)?;
    if train_seqs.is_empty() {
        return Err(CliError::Usage(format!("{} lists no training sequences", codes.display())));
    }
    let train = CodeDataset::new(train_seqs, index.controls)?;
    let heldout_seqs = index.load_split(&root, true)?;
    let heldout = if heldout_seqs.is_empty() {
        log::warn!("no held-out sequences; reporting the loss on training sequences");
        train.clone()
    } else {
        CodeDataset::new(heldout_seqs, index.controls)?
    };
    cfg.echo(&out)?;
    let ck = load_resume(resume)?;
    let report = fit_transition(train_config, &train, &heldout, index.rate_hz, &out, ck.as_ref())?;
    let last = report.per_epoch.last().copied().unwrap_or(report.initial_heldout);
    if !last.is_finite() {
        return Err(CliError::Numeric(format!("held-out transition loss is {last}")));
    }
    println!(
        "held-out loss {:.5} -> {:.5} after {} steps; checkpoint {}",
        report.initial_heldout,
        last,
        report.steps,
        report.checkpoint.display()
    );
    Ok(())
}
