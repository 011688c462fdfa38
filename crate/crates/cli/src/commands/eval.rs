use std::path::Path;

use lrsim_core::ae_train::format_psnr;
use lrsim_core::{checkpoint_controls, encode_frames, eval_reconstruction, heldout_loss, latent_stats, CodeDataset, FrameSet, Rnn, VaeGan};
use lrsim_data::{subsample_rate, CodeSequence, Episode};
use lrsim_nn::Checkpoint;
use lrsim_sim::default_band;

use crate::args::{existing, EvalArgs};
use crate::commands::train::load_dataset;
use crate::error::{CliError, Result};

pub const EVAL_CSV: &str = "eval.csv";
const ABSENT: &str = "absent";

fn meta_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.meta
        .extra
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| CliError::Usage(format!("transition checkpoint lacks `{key}`")))
}

/// Held-out transition loss with the sequence settings the model was trained with.
fn transition_loss(ck: &Checkpoint, ae: &VaeGan<f32>, episodes: &[Episode]) -> Result<(f64, usize)> {
    let rnn = Rnn::<f32>::from_checkpoint(ck)?;
    let rate = ck
        .meta
        .extra
        .get("rate_hz")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| CliError::Usage("transition checkpoint lacks `rate_hz`".into()))?;
    let (seq_len, teacher) = (meta_usize(ck, "seq_len")?, meta_usize(ck, "teacher_forced")?);
    let mut seqs = Vec::new();
    for ep in episodes {
        let ep = subsample_rate(ep, rate)?;
        let codes = encode_frames(ae, &FrameSet::from_episodes(std::slice::from_ref(&ep))?)?;
        seqs.push(CodeSequence { dim: ae.latent_dim(), codes, frame_ts: ep.frame_ts.clone(), controls: ep.synced_controls()?, rate_hz: rate });
    }
    let data = CodeDataset::new(seqs, checkpoint_controls(ck)?)?;
    let windows: usize = data.lengths().iter().map(|&l| l / seq_len).sum();
    Ok((heldout_loss(&rnn, &data, seq_len, teacher)?, windows))
}

fn number(v: f64) -> String {
    v.to_string()
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let ae_path = existing(cfg.path_or("ae", args.ae, "ae")?, "checkpoint")?;
    let rnn_path = match args.rnn.or_else(|| cfg.paths.get("rnn").cloned()) {
        Some(p) => {
            cfg.set_path("rnn", &p);
            Some(existing(p, "checkpoint")?)
        }
        None => None,
    };
    let data = existing(cfg.path_or("data", args.data, "data")?, "dataset")?;
    let default_out = ae_path.parent().unwrap_or(Path::new(".")).join("eval");
    let out = cfg.path_or("out", args.out.or(Some(default_out)), "out")?;

    let ae = VaeGan::<f32>::from_checkpoint(&Checkpoint::load(&ae_path)?)?;
    let (manifest, train_eps, heldout_eps) = load_dataset(&data)?;
    if ae.arch().geometry != manifest.geometry {
        return Err(CliError::Usage(format!(
            "autoencoder expects {:?} frames but the dataset holds {:?}",
            ae.arch().geometry,
            manifest.geometry
        )));
    }
    let episodes = if heldout_eps.is_empty() {
        log::warn!("dataset has no held-out episodes; evaluating on all episodes");
        train_eps
    } else {
        heldout_eps
    };
    cfg.geometry = manifest.geometry;
    cfg.latent_dim = ae.latent_dim();
    cfg.settle()?;
    cfg.echo(&out)?;

    let frames = FrameSet::from_episodes(&episodes)?;
    let recon = eval_reconstruction(&ae, &frames)?;
    let latent = latent_stats(&ae, &frames)?;
    let band = default_band(ae.latent_dim());
    let codes = encode_frames(&ae, &frames)?;
    let in_band = codes
        .chunks(ae.latent_dim())
        .filter(|z| band.contains(z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()))
        .count();
    let (rnn_loss, rnn_windows) = match &rnn_path {
        Some(p) => {
            let (l, w) = transition_loss(&Checkpoint::load(p)?, &ae, &episodes)?;
            (number(l), w.to_string())
        }
        None => (ABSENT.to_string(), ABSENT.to_string()),
    };

    let rows: Vec<(&str, String)> = vec![
        ("frames", frames.len().to_string()),
        ("recon_mse", number(recon.mse)),
        ("recon_psnr_db", format_psnr(recon.psnr)),
        ("kl", number(latent.kl)),
        ("latent_norm_mean", number(latent.norm_mean)),
        ("latent_norm_std", number(latent.norm_std)),
        ("latent_norm_min", number(latent.norm_min)),
        ("latent_norm_max", number(latent.norm_max)),
        ("latent_norm_expected", number((ae.latent_dim() as f64).sqrt())),
        ("latent_gaussian_dims", format!("{}/{}", latent.gaussian_dims(), ae.latent_dim())),
        ("latent_in_band_fraction", number(in_band as f64 / frames.len() as f64)),
        ("rnn_heldout_loss", rnn_loss),
        ("rnn_heldout_windows", rnn_windows),
    ];
    let csv_path = out.join(EVAL_CSV);
    let mut csv = csv::Writer::from_path(&csv_path)?;
    csv.write_record(["metric", "value"])?;
    for (name, value) in &rows {
        csv.write_record([name, value.as_str()])?;
        println!("{name:<26}{value}");
    }
    csv.flush().map_err(CliError::io(&csv_path))?;
    if !(recon.mse.is_finite() && latent.kl.is_finite()) {
        return Err(CliError::Numeric("evaluation produced non-finite metrics".into()));
    }
    Ok(())
}
