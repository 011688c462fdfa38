//! Command behavior, exit codes and configuration echo on a tiny model.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lrsim::{CodeIndex, RunConfig};
use lrsim_data::{CodeSequence, Episode, Manifest};
use lrsim_nn::Checkpoint;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lrsim"));
    c.env("LRSIM_THREADS", "0").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    run(args, cwd).status.code().expect("exit code")
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.latent_dim = 8;
    c.autoencoder.conv_channels = vec![4, 8, 8];
    c.autoencoder.epochs = 2;
    c.autoencoder.updates_per_epoch = 3;
    c.autoencoder.batch_size = 4;
    c.data.frames = 320;
    c.data.heldout_frames = 320;
    c.transition.hidden = 16;
    c.transition.epochs = 2;
    c.transition.updates_per_epoch = 4;
    c.transition.batch_size = 4;
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// One small pipeline shared by the tests that only read from it.
struct Pipeline {
    root: PathBuf,
}

impl Pipeline {
    fn get() -> &'static Pipeline {
        static P: OnceLock<Pipeline> = OnceLock::new();
        P.get_or_init(|| {
            let root = scratch("pipeline");
            small_config().echo(&root).unwrap();
            let cfg = root.join("config.json");
            let cfg = cfg.to_str().unwrap();
            ok(&["gen-data", "--config", cfg, "--out", "data"], &root);
            ok(&["train-ae", "--config", cfg, "--data", "data", "--out", "ae"], &root);
            ok(&["encode", "--config", cfg, "--ae", "ae/ae.ckpt", "--data", "data", "--out", "codes"], &root);
            ok(&["train-rnn", "--config", cfg, "--codes", "codes", "--out", "rnn"], &root);
            let mut actions = String::from("steer_deg,speed_mps\n");
            for _ in 0..100 {
                actions.push_str("2.5,20\n");
            }
            std::fs::write(root.join("actions.csv"), actions).unwrap();
            Pipeline { root }
        })
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_string()
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn gen_data_counts_and_determinism() {
    let dir = scratch("gen");
    ok(&["gen-data", "--out", "a", "--frames", "100", "--heldout-frames", "0", "--policy", "straight", "--seed", "4"], &dir);
    ok(&["gen-data", "--out", "b", "--frames", "100", "--heldout-frames", "0", "--policy", "straight", "--seed", "4"], &dir);
    let (m, root) = Manifest::load(&dir.join("a")).unwrap();
    assert_eq!(m.episodes.len(), 1);
    let ep = Episode::load(&root.join(&m.episodes[0].path)).unwrap();
    assert_eq!(ep.len(), 100);
    let name = &m.episodes[0].path;
    assert_eq!(std::fs::read(dir.join("a").join(name)).unwrap(), std::fs::read(dir.join("b").join(name)).unwrap());

    ok(&["gen-data", "--out", "mixed", "--frames", "40", "--heldout-frames", "8"], &dir);
    let (m, _) = Manifest::load(&dir.join("mixed")).unwrap();
    assert_eq!(m.split(false).episodes.iter().map(|e| e.frames).sum::<usize>(), 40);
    assert_eq!(m.split(true).episodes.len(), 4);
    assert_eq!(m.rate_hz, 20.0);

    assert_eq!(code(&["gen-data", "--out", "z", "--width", "0"], &dir), 2);
    assert_eq!(code(&["gen-data", "--out", "z", "--policy", "reverse"], &dir), 2);
    assert_eq!(code(&["gen-data", "--frames", "10"], &dir), 2);
    assert_eq!(code(&["gen-data", "--bogus"], &dir), 2);
    assert_eq!(code(&["--help"], &dir), 0);
}

#[test]
fn presets_are_echoed() {
    let dir = scratch("presets");
    ok(&["gen-data", "--out", "desk", "--frames", "4", "--heldout-frames", "0"], &dir);
    let desk = RunConfig::load(&dir.join("desk/config.json")).unwrap();
    assert_eq!((desk.geometry.height, desk.geometry.width, desk.latent_dim), (32, 64, 128));
    assert_eq!((desk.autoencoder.batch_size, desk.transition.seq_len, desk.transition.teacher_forced), (32, 15, 5));
    assert_eq!(desk.transition.hallucinated, 10);
    assert_eq!(desk.data.frames, 4);
    assert_eq!(desk.paths["out"], Path::new("desk"));

    ok(&["gen-data", "--paper-scale", "--out", "paper", "--frames", "1", "--heldout-frames", "0"], &dir);
    let paper = RunConfig::load(&dir.join("paper/config.json")).unwrap();
    assert_eq!((paper.geometry.height, paper.geometry.width, paper.latent_dim), (80, 160, 2048));
    assert_eq!((paper.autoencoder.batch_size, paper.transition.seq_len, paper.transition.teacher_forced), (64, 15, 5));
    let (m, root) = Manifest::load(&dir.join("paper")).unwrap();
    assert_eq!(Episode::load(&root.join(&m.episodes[0].path)).unwrap().geometry.width, 160);

    std::fs::write(dir.join("bad.json"), r#"{"latent_dim": 3}"#).unwrap();
    assert_eq!(code(&["gen-data", "--config", "bad.json", "--out", "x"], &dir), 2);
    assert_eq!(code(&["gen-data", "--config", "missing.json", "--out", "x"], &dir), 2);
    assert_eq!(code(&["gen-data", "--config", "desk/config.json", "--paper-scale", "--out", "x"], &dir), 2);
}

#[test]
fn config_file_reproduces_training_bitwise() {
    let p = Pipeline::get();
    let dir = scratch("replay");
    let cfg = p.path("ae/config.json");
    let data = p.path("data");
    ok(&["train-ae", "--config", &cfg, "--data", &data, "--out", "again"], &dir);
    for f in ["ae.ckpt", "ae_metrics.csv", "ae_epochs.csv"] {
        assert_eq!(std::fs::read(dir.join("again").join(f)).unwrap(), std::fs::read(p.root.join("ae").join(f)).unwrap(), "{f}");
    }
    let echoed = RunConfig::load(&dir.join("again/config.json")).unwrap();
    let original = RunConfig::load(&p.root.join("ae/config.json")).unwrap();
    assert_eq!(echoed.autoencoder, original.autoencoder);
}

#[test]
fn train_ae_resume_and_errors() {
    let p = Pipeline::get();
    let dir = scratch("resume");
    let cfg = p.path("config.json");
    let data = p.path("data");
    let first = p.path("ae/ae_epoch_001.ckpt");
    ok(&["train-ae", "--config", &cfg, "--data", &data, "--out", "cont", "--resume", &first], &dir);
    let steps: Vec<u64> = csv_rows(&dir.join("cont/ae_metrics.csv")).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(steps, [4, 5, 6]);
    let ck = Checkpoint::load(&dir.join("cont/ae.ckpt")).unwrap();
    assert_eq!(ck.meta.epoch, 2);
    assert_eq!(ck.meta.extra["step"], 6);
    assert_eq!(std::fs::read(dir.join("cont/ae.ckpt")).unwrap(), std::fs::read(p.root.join("ae/ae.ckpt")).unwrap());

    assert_eq!(code(&["train-ae", "--config", &cfg, "--out", "x"], &dir), 2);
    assert_eq!(code(&["train-ae", "--config", &cfg, "--data", "nowhere", "--out", "x"], &dir), 2);
    assert_eq!(code(&["train-ae", "--config", &cfg, "--data", &data, "--out", "x", "--batch", "1"], &dir), 2);
    assert_eq!(code(&["train-ae", "--config", &cfg, "--data", &data, "--out", "x", "--resume", "none.ckpt"], &dir), 2);
}

#[test]
fn encode_shapes_determinism_and_geometry() {
    let p = Pipeline::get();
    let dir = scratch("encode");
    let (ae, data) = (p.path("ae/ae.ckpt"), p.path("data"));
    ok(&["encode", "--ae", &ae, "--data", &data, "--out", "c"], &dir);
    let (index, root) = CodeIndex::load(&dir.join("c")).unwrap();
    assert_eq!(index.latent_dim, 8);
    assert_eq!(index.rate_hz, 5.0);
    let (m, data_root) = Manifest::load(Path::new(&data)).unwrap();
    for (entry, src) in index.episodes.iter().zip(&m.episodes) {
        let seq = CodeSequence::load(&root.join(&entry.path)).unwrap();
        let ep = Episode::load(&data_root.join(&src.path)).unwrap();
        assert_eq!(seq.len(), ep.len().div_ceil(4));
        assert_eq!(seq.codes.len(), seq.len() * 8);
        assert_eq!(entry.heldout, src.heldout);
        let original = std::fs::read(p.root.join("codes").join(&entry.path)).unwrap();
        assert_eq!(std::fs::read(root.join(&entry.path)).unwrap(), original);
    }

    ok(&["gen-data", "--out", "wide", "--frames", "8", "--heldout-frames", "0", "--width", "128"], &dir);
    assert_eq!(code(&["encode", "--ae", &ae, "--data", "wide", "--out", "w"], &dir), 2);
    assert_eq!(code(&["encode", "--ae", &ae, "--data", &data, "--out", "r", "--rate-hz", "3"], &dir), 2);
    assert_eq!(code(&["encode", "--data", &data, "--out", "r"], &dir), 2);
}

#[test]
fn train_rnn_settings_and_frozen_encoder() {
    let p = Pipeline::get();
    let dir = scratch("rnn");
    let cfg = p.path("config.json");
    let codes = p.path("codes");
    let ae = p.root.join("ae/ae.ckpt");
    let before = std::fs::read(&ae).unwrap();
    ok(&["train-rnn", "--config", &cfg, "--codes", &codes, "--out", "pure", "--teacher", "15"], &dir);
    assert_eq!(std::fs::read(&ae).unwrap(), before);
    let echoed = RunConfig::load(&dir.join("pure/config.json")).unwrap();
    assert_eq!((echoed.transition.seq_len, echoed.transition.teacher_forced, echoed.transition.hallucinated), (15, 15, 0));
    assert_eq!(csv_rows(&dir.join("pure/rnn_metrics.csv")).len(), 2 * 4);
    assert_eq!(csv_rows(&dir.join("pure/rnn_epochs.csv")).len(), 3);

    let defaults = RunConfig::load(&p.root.join("rnn/config.json")).unwrap();
    assert_eq!((defaults.transition.seq_len, defaults.transition.teacher_forced), (15, 5));
    let ck = Checkpoint::load(&p.root.join("rnn/rnn.ckpt")).unwrap();
    assert_eq!(ck.meta.extra["seq_len"], 15);
    assert_eq!(ck.meta.extra["teacher_forced"], 5);
    assert_eq!(ck.meta.extra["rate_hz"], 5.0);

    assert_eq!(code(&["train-rnn", "--config", &cfg, "--codes", &codes, "--out", "x", "--teacher", "16"], &dir), 2);
    assert_eq!(code(&["train-rnn", "--config", &cfg, "--codes", &codes, "--out", "x", "--teacher", "0"], &dir), 2);
    assert_eq!(code(&["train-rnn", "--config", &cfg, "--out", "x"], &dir), 2);
}

fn report(path: &Path) -> Vec<(String, String)> {
    csv_rows(path).into_iter().map(|r| (r[0].clone(), r[1].clone())).collect()
}

#[test]
fn eval_report_groups_and_optional_rnn() {
    let p = Pipeline::get();
    let dir = scratch("eval");
    let (ae, rnn, data) = (p.path("ae/ae.ckpt"), p.path("rnn/rnn.ckpt"), p.path("data"));
    let printed = ok(&["eval", "--ae", &ae, "--rnn", &rnn, "--data", &data, "--out", "full"], &dir);
    ok(&["eval", "--ae", &ae, "--rnn", &rnn, "--data", &data, "--out", "again"], &dir);
    ok(&["eval", "--ae", &ae, "--data", &data, "--out", "bare"], &dir);
    let full = report(&dir.join("full/eval.csv"));
    assert_eq!(std::fs::read(dir.join("full/eval.csv")).unwrap(), std::fs::read(dir.join("again/eval.csv")).unwrap());
    let get = |r: &[(String, String)], k: &str| r.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone()).unwrap();
    for key in ["recon_mse", "recon_psnr_db", "kl", "latent_norm_mean", "latent_norm_std", "rnn_heldout_loss"] {
        assert!(get(&full, key).parse::<f64>().unwrap().is_finite(), "{key}");
        assert!(printed.contains(key));
    }
    assert_eq!(get(&full, "frames"), "320");
    let mse: f64 = get(&full, "recon_mse").parse().unwrap();
    let psnr: f64 = get(&full, "recon_psnr_db").parse().unwrap();
    assert!((psnr - 10.0 * (4.0 / mse).log10()).abs() < 1e-9);
    let bare = report(&dir.join("bare/eval.csv"));
    assert_eq!(get(&bare, "rnn_heldout_loss"), "absent");
    assert_eq!(get(&bare, "recon_mse"), get(&full, "recon_mse"));
    assert_eq!(code(&["eval", "--ae", &ae, "--data", "missing", "--out", "x"], &dir), 2);
}

#[test]
fn rollout_files_and_errors() {
    let p = Pipeline::get();
    let dir = scratch("rollout");
    let (ae, rnn, actions) = (p.path("ae/ae.ckpt"), p.path("rnn/rnn.ckpt"), p.path("actions.csv"));
    let seed = p.path("data/heldout_000_straight.cdrv");
    let base = ["rollout", "--ae", &ae, "--rnn", &rnn, "--seed-episode", &seed];
    ok(&[&base[..], &["--actions", &actions, "--steps", "100", "--out", "r"]].concat(), &dir);
    let ppm = std::fs::read_dir(dir.join("r")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"));
    assert_eq!(ppm.count(), 100);
    let ts: Vec<u64> = csv_rows(&dir.join("r/rollout.csv")).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ts.len(), 100);
    assert!(ts.windows(2).all(|w| w[1] == w[0] + 1));
    assert_eq!(ts[0], 6);

    assert_eq!(code(&[&base[..], &["--steps", "5", "--out", "x"]].concat(), &dir), 2);
    assert_eq!(code(&[&base[..], &["--actions", "none.csv", "--out", "x"]].concat(), &dir), 2);
    assert_eq!(code(&[&base[..], &["--actions", &actions, "--steps", "101", "--out", "x"]].concat(), &dir), 2);
}

#[test]
fn non_finite_weights_exit_with_numeric_failure() {
    let p = Pipeline::get();
    let dir = scratch("nan");
    let mut ck = Checkpoint::load(&p.root.join("ae/ae.ckpt")).unwrap();
    let name = ck.arrays.iter().map(|a| a.name.clone()).find(|n| n.starts_with("gen.")).unwrap();
    let t = ck.tensor::<f32>(&name).unwrap();
    let poisoned = lrsim_tensor::Tensor::from_vec(vec![f32::NAN; t.numel()], t.shape()).unwrap();
    ck.insert(name, &poisoned);
    ck.save(&dir.join("nan.ckpt")).unwrap();
    assert_eq!(code(&["eval", "--ae", "nan.ckpt", "--data", &p.path("data"), "--out", "e"], &dir), 4);
}

struct Server {
    child: std::process::Child,
    port: u16,
}

impl Server {
    fn start(p: &Pipeline) -> Server {
        use std::io::BufRead;
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut child = bin()
            .args(["serve", "--ae", &p.path("ae/ae.ckpt"), "--rnn", &p.path("rnn/rnn.ckpt"), "--port", &port.to_string()])
            .args(["--episode-root", &p.path("data")])
            .stdout(std::process::Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        std::io::BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        assert!(line.contains(&format!("127.0.0.1:{port}")), "{line}");
        Server { child, port }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn http_get(port: u16, path: &str) -> String {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serve_health_sessions_and_interrupt() {
    use tokio_tungstenite::tungstenite::{connect, Message};
    let p = Pipeline::get();
    let mut server = Server::start(p);
    let health = http_get(server.port, "/health");
    let body: serde_json::Value = serde_json::from_str(health.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!((body["width"].as_u64(), body["height"].as_u64(), body["latent_dim"].as_u64()), (Some(64), Some(32), Some(8)));

    let (mut ws, _) = connect(format!("ws://127.0.0.1:{}/ws", server.port)).unwrap();
    let mut ask = |msg: &str| -> serde_json::Value {
        ws.send(Message::Text(msg.to_string().into())).unwrap();
        loop {
            if let Message::Text(t) = ws.read().unwrap() {
                return serde_json::from_str(&t).unwrap();
            }
        }
    };
    let ready = ask(r#"{"type":"reset","warmup":5,"seed_episode":"heldout_000_straight.cdrv","rng_seed":1}"#);
    assert_eq!(ready["t"], 5);
    assert_eq!(ask(r#"{"type":"action","steer_deg":-4.5,"speed_mps":24.0}"#)["t"], 6);
    assert_eq!(ask("nonsense")["type"], "error");

    let status = Command::new("kill").args(["-INT", &server.child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let goodbye = loop {
        if let Message::Text(t) = ws.read().unwrap() {
            break serde_json::from_str::<serde_json::Value>(&t).unwrap();
        }
    };
    assert_eq!(goodbye["type"], "error");
    let exit = server.child.wait().unwrap();
    assert_eq!(exit.code(), Some(0));
}

#[test]
fn serve_port_in_use_is_an_environment_error() {
    let p = Pipeline::get();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let args = ["serve", "--ae", &p.path("ae/ae.ckpt"), "--rnn", &p.path("rnn/rnn.ckpt"), "--port", &port];
    let out = run(&args, &p.root);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port));
    assert_eq!(code(&["serve", "--ae", &p.path("ae/ae.ckpt"), "--rnn", "none.ckpt"], &p.root), 2);
}
