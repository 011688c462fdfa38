use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result, SimError};
use crate::session::{ActionCommand, FrameMessage, SessionSeed, SimModel};

pub const ROLLOUT_CSV: &str = "rollout.csv";
pub const ROLLOUT_SUMMARY: &str = "rollout.json";

/// Reads an actions CSV with header `steer_deg,speed_mps`.
pub fn read_actions(path: &Path) -> Result<Vec<ActionCommand>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["steer_deg", "speed_mps"] {
        return Err(SimError::Input(format!("{}: expected header `steer_deg,speed_mps`", path.display())));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| SimError::Input(format!("{}: {e}", path.display()))))
        .collect()
}

/// Binary PPM (P6) of an interleaved RGB frame.
pub fn ppm_bytes(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn frame_file_name(t: u64) -> String {
    format!("frame_{t}.ppm")
}

/// Warm-up diagnostics written next to the per-step CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub warmup: usize,
    pub start_t: u64,
    pub latent_dim: usize,
    pub band: [f64; 2],
    pub warmup_norms: Vec<f64>,
    pub steps: usize,
    pub in_band_steps: usize,
}

/// Hallucinates `steps` frames from a seed, writing `frame_<t>.ppm`,
/// `rollout.csv` (t,latent_norm,in_band) and `rollout.json`.
pub fn rollout_to_files(
    model: &SimModel,
    seed: SessionSeed<'_>,
    actions: &[ActionCommand],
    steps: usize,
    out_dir: &Path,
) -> Result<Vec<FrameMessage>> {
    if actions.len() < steps {
        return Err(SimError::Input(format!("{steps} steps requested but only {} actions given", actions.len())));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut session = model.new_session(seed)?;
    let warmup = match seed {
        SessionSeed::Episode { warmup, .. } => warmup,
        SessionSeed::Prior { .. } => 0,
    };
    let start_t = session.t();
    let csv_path = out_dir.join(ROLLOUT_CSV);
    let mut csv = csv::Writer::from_path(&csv_path)?;
    csv.write_record(["t", "latent_norm", "in_band"])?;
    let mut frames = Vec::with_capacity(steps);
    for action in &actions[..steps] {
        let frame = model.step(&mut session, *action)?;
        let path = out_dir.join(frame_file_name(frame.t));
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(&ppm_bytes(frame.width, frame.height, &frame.rgb)))
            .map_err(io_err(&path))?;
        csv.write_record([frame.t.to_string(), frame.latent_norm.to_string(), frame.in_band.to_string()])?;
        frames.push(frame);
    }
    csv.flush().map_err(io_err(&csv_path))?;
    let summary = RolloutSummary {
        warmup,
        start_t,
        latent_dim: model.latent_dim(),
        band: model.band().as_array(),
        warmup_norms: session.warmup_norms().to_vec(),
        steps,
        in_band_steps: frames.iter().filter(|f| f.in_band).count(),
    };
    let path = out_dir.join(ROLLOUT_SUMMARY);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(frames)
}
