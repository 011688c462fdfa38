use std::sync::Arc;

use lrsim_data::Episode;
use lrsim_sim::{read_actions, rollout_to_files, ServerConfig, SessionSeed, SimModel};

use crate::args::{existing, RolloutArgs, ServeArgs};
use crate::error::{CliError, Result};

pub fn rollout(args: RolloutArgs) -> Result<()> {
    let mut cfg = args.preset.base()?;
    let ae = existing(cfg.path_or("ae", args.ae, "ae")?, "checkpoint")?;
    let rnn = existing(cfg.path_or("rnn", args.rnn, "rnn")?, "checkpoint")?;
    let seed = existing(cfg.path_or("seed_episode", args.seed_episode, "seed-episode")?, "seed episode")?;
    let actions = existing(cfg.path_or("actions", args.actions, "actions")?, "actions file")?;
    let out = cfg.path_or("out", args.out, "out")?;
    let model = SimModel::load(&ae, &rnn)?;
    let actions = read_actions(&actions)?;
    let episode = Episode::load(&seed)?;
    cfg.geometry = model.geometry();
    cfg.latent_dim = model.latent_dim();
    cfg.settle()?;
    cfg.echo(&out)?;
    let frames =
        rollout_to_files(&model, SessionSeed::Episode { episode: &episode, warmup: args.warmup }, &actions, args.steps, &out)?;
    let in_band = frames.iter().filter(|f| f.in_band).count();
    println!("{} frames written to {}; {in_band} inside the latent norm band", frames.len(), out.display());
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let model = SimModel::load(&existing(args.ae, "checkpoint")?, &existing(args.rnn, "checkpoint")?)?;
    let static_dir = args.static_dir.map(|d| existing(d, "static directory")).transpose()?;
    let config = ServerConfig { static_dir, episode_root: args.episode_root };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Environment(format!("cannot start the async runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Environment(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Environment(e.to_string()))?;
        println!("serving on http://{local} (websocket at {})", lrsim_sim::server::WS_PATH);
        let shutdown = async {
            if let Err(e) = tokio::signal::ctrl_c().await {
                log::error!("cannot listen for Ctrl-C: {e}");
                std::future::pending::<()>().await;
            }
        };
        lrsim_sim::serve(listener, Arc::new(model), config, shutdown)
            .await
            .map_err(|e| CliError::Environment(format!("server error: {e}")))?;
        println!("server stopped");
        Ok(())
    })
}
