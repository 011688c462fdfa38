use std::collections::HashMap;

use lrsim_nn::{Adam, AdamConfig, Checkpoint, ForwardOutput, Network, Param, Pass};
use lrsim_tensor::{no_grad, BatchStats, Element, SeededRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::arch::AeArch;
use crate::error::{CoreError, Result};

/// Floor applied inside every log of a discriminator probability.
pub const LOG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub prior: f64,
    pub llike: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { prior: 1.0, llike: 1.0, gan: 1.0 }
    }
}

/// Reconstruction term used for the encoder/generator update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Discriminator feature matching plus the adversarial game.
    #[default]
    VaeGan,
    /// Plain VAE with a pixel-space squared error; the discriminator is idle.
    PixelVae,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_prior: f64,
    pub l_llike: f64,
    /// Discriminator binary cross-entropy over the real and two fake streams.
    pub l_gan_dis: f64,
    /// Non-saturating generator loss over the two fake streams.
    pub l_gan_gen: f64,
    pub dis_acc_real: f64,
    pub dis_acc_fake: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: [&'static str; 7] =
        ["step", "l_prior", "l_llike", "l_gan_dis", "l_gan_gen", "dis_acc_real", "dis_acc_fake"];

    pub fn all_finite(&self) -> bool {
        [self.l_prior, self.l_llike, self.l_gan_dis, self.l_gan_gen, self.dis_acc_real, self.dis_acc_fake]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn csv_row(&self, step: u64) -> Vec<String> {
        let f = |v: f64| format!("{v:e}");
        vec![
            step.to_string(),
            f(self.l_prior),
            f(self.l_llike),
            f(self.l_gan_dis),
            f(self.l_gan_gen),
            f(self.dis_acc_real),
            f(self.dis_acc_fake),
        ]
    }

    fn nan() -> Self {
        LossBreakdown {
            l_prior: f64::NAN,
            l_llike: f64::NAN,
            l_gan_dis: f64::NAN,
            l_gan_gen: f64::NAN,
            dis_acc_real: f64::NAN,
            dis_acc_fake: f64::NAN,
        }
    }
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct LatentSample<T: Element = f32> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
    pub z: Tensor<T>,
}

/// Noise consumed by one training step.
#[derive(Debug, Clone)]
pub struct StepNoise<T: Element = f32> {
    /// Reparametrization noise, `[N, D]`.
    pub eps: Tensor<T>,
    /// Prior samples fed to the generator, `[N, D]`.
    pub prior: Tensor<T>,
}

impl<T: Element> StepNoise<T> {
    pub fn draw(rng: &mut SeededRng, batch: usize, latent_dim: usize) -> Self {
        let eps = rng.gaussian(&[batch, latent_dim]);
        let prior = rng.gaussian(&[batch, latent_dim]);
        StepNoise { eps, prior }
    }
}

struct EncoderPass<T: Element> {
    mu: Tensor<T>,
    log_var: Tensor<T>,
    stats: [Vec<Option<BatchStats<T>>>; 3],
}

/// Encoder, generator and discriminator with parameter names under
/// `enc.`, `gen.` and `dis.`.
#[derive(Debug, Clone)]
pub struct VaeGan<T: Element = f32> {
    arch: AeArch,
    pub enc_trunk: Network<T>,
    pub enc_mu: Network<T>,
    pub enc_log_var: Network<T>,
    pub gen: Network<T>,
    pub dis: Network<T>,
}

impl<T: Element> VaeGan<T> {
    pub fn new(arch: AeArch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let frame = arch.geometry.frame_shape();
        let bottleneck = arch.bottleneck();
        Ok(VaeGan {
            enc_trunk: Network::new("enc.trunk", &frame, &arch.encoder_trunk(), rng)?,
            enc_mu: Network::new("enc.mu", &bottleneck, &arch.encoder_head(), rng)?,
            enc_log_var: Network::new("enc.log_var", &bottleneck, &arch.encoder_head(), rng)?,
            gen: Network::new("gen", &[arch.latent_dim], &arch.generator(), rng)?,
            dis: Network::new("dis", &frame, &arch.discriminator(), rng)?,
            arch,
        })
    }

    pub fn arch(&self) -> &AeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn encoder_params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.enc_trunk.params_mut();
        out.extend(self.enc_mu.params_mut());
        out.extend(self.enc_log_var.params_mut());
        out
    }

    pub fn encoder_params(&self) -> Vec<&Param<T>> {
        let mut out = self.enc_trunk.params();
        out.extend(self.enc_mu.params());
        out.extend(self.enc_log_var.params());
        out
    }

    fn check_frames(&self, x: &Tensor<T>) -> Result<()> {
        let g = self.arch.geometry;
        if x.rank() != 4 || x.shape()[1..] != [3, g.height, g.width] {
            return Err(CoreError::Tensor(lrsim_tensor::TensorError::Shape(format!(
                "expected frames [N, 3, {}, {}], got {:?}",
                g.height,
                g.width,
                x.shape()
            ))));
        }
        Ok(())
    }

    fn encode_pass(&self, x: &Tensor<T>, pass: Pass) -> Result<EncoderPass<T>> {
        self.check_frames(x)?;
        let trunk = self.enc_trunk.forward(x, pass)?;
        let mu = self.enc_mu.forward(&trunk.output, pass)?;
        let lv = self.enc_log_var.forward(&trunk.output, pass)?;
        Ok(EncoderPass { mu: mu.output, log_var: lv.output, stats: [trunk.stats, mu.stats, lv.stats] })
    }

    /// Eval-mode encoding: running statistics and `z = mu`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<LatentSample<T>> {
        let p = self.encode_pass(x, Pass::EVAL)?;
        Ok(LatentSample { z: p.mu.clone(), mu: p.mu, log_var: p.log_var })
    }

    /// Train-mode encoding with `z = mu + eps * exp(log_var / 2)` for the given noise.
    pub fn encode_train(&self, x: &Tensor<T>, eps: &Tensor<T>) -> Result<LatentSample<T>> {
        let p = self.encode_pass(x, Pass::TRAIN)?;
        let z = reparametrize(&p.mu, &p.log_var, eps)?;
        Ok(LatentSample { mu: p.mu, log_var: p.log_var, z })
    }

    /// Eval-mode generator.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if !z.all_finite() {
            return Err(CoreError::NonFinite("latent code contains NaN or infinity".into()));
        }
        if z.rank() != 2 || z.dim(1) != self.arch.latent_dim {
            return Err(CoreError::Tensor(lrsim_tensor::TensorError::Shape(format!(
                "expected codes [N, {}], got {:?}",
                self.arch.latent_dim,
                z.shape()
            ))));
        }
        Ok(self.gen.forward(z, Pass::EVAL)?.output)
    }

    /// Discriminator feature-layer activations (pre-norm, pre-activation).
    pub fn dis_features(&self, x: &Tensor<T>, pass: Pass) -> Result<Tensor<T>> {
        Ok(self.dis.forward_until(x, pass, self.arch.feature_layer)?.output)
    }

    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        [&self.enc_trunk, &self.enc_mu, &self.enc_log_var, &self.gen, &self.dis]
            .iter()
            .flat_map(|n| n.state())
            .collect()
    }

    pub fn load_state(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        for net in [&mut self.enc_trunk, &mut self.enc_mu, &mut self.enc_log_var, &mut self.gen, &mut self.dis] {
            net.load_state(state)?;
        }
        Ok(())
    }

    /// Rebuilds a model from a checkpoint written by the trainer.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: AeArch = serde_json::from_value(
            ck.meta.extra.get("arch").cloned().ok_or_else(|| CoreError::Config("checkpoint lacks `arch`".into()))?,
        )
        .map_err(|e| CoreError::Config(format!("checkpoint `arch`: {e}")))?;
        let mut model = VaeGan::new(arch, &mut SeededRng::new(0))?;
        let mut state = ck.tensors_with_prefix::<T>("enc.")?;
        state.extend(ck.tensors_with_prefix::<T>("gen.")?);
        state.extend(ck.tensors_with_prefix::<T>("dis.")?);
        model.load_state(&state)?;
        Ok(model)
    }
}

pub fn reparametrize<T: Element>(mu: &Tensor<T>, log_var: &Tensor<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let std = log_var.scale(T::from_f64_lossy(0.5)).exp();
    Ok(mu.add(&eps.mul(&std)?)?)
}

/// Batch mean of `0.5 * sum_d (mu^2 + exp(log_var) - 1 - log_var)`.
pub fn kl_loss<T: Element>(mu: &Tensor<T>, log_var: &Tensor<T>) -> Result<Tensor<T>> {
    if mu.shape() != log_var.shape() || mu.rank() != 2 {
        return Err(CoreError::Config(format!("mu {:?} and log_var {:?} must be equal [N, D]", mu.shape(), log_var.shape())));
    }
    let n = T::from_usize(mu.dim(0)).expect("batch size");
    let per = mu.square().add(&log_var.exp())?.sub(&log_var.add_scalar(T::one()))?;
    Ok(per.sum_all().scale(T::from_f64_lossy(0.5) / n))
}

/// Mean squared difference of discriminator features. The discriminator is
/// evaluated with frozen parameters and running statistics, so gradients
/// reach only the producers of `x` and `x_rec`.
pub fn feature_loss<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, x_rec: &Tensor<T>) -> Result<Tensor<T>> {
    let frozen_eval = Pass { frozen: true, ..Pass::EVAL };
    let a = model.dis_features(x, frozen_eval)?;
    let b = model.dis_features(x_rec, frozen_eval)?;
    Ok(a.sub(&b)?.square().mean_all())
}

fn mean_log<T: Element>(p: &Tensor<T>) -> Tensor<T> {
    p.log_clamped(T::from_f64_lossy(LOG_FLOOR)).mean_all()
}

fn one_minus<T: Element>(p: &Tensor<T>) -> Tensor<T> {
    p.neg().add_scalar(T::one())
}

/// `mean log D(x) + mean log(1 - D(Gen(u))) + mean log(1 - D(Gen(Enc(x))))`.
pub fn dis_objective<T: Element>(d_real: &Tensor<T>, d_prior: &Tensor<T>, d_rec: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(mean_log(d_real).add(&mean_log(&one_minus(d_prior)))?.add(&mean_log(&one_minus(d_rec)))?)
}

/// `mean log D(Gen(u)) + mean log D(Gen(Enc(x)))`.
pub fn gen_objective<T: Element>(d_prior: &Tensor<T>, d_rec: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(mean_log(d_prior).add(&mean_log(d_rec))?)
}

/// Both adversarial objectives with their blocking rules: the discriminator
/// objective sees detached fakes, the generator objective sees a frozen
/// discriminator and a detached code, so it never reaches the encoder.
pub struct GanObjectives<T: Element> {
    pub dis_objective: Tensor<T>,
    pub gen_objective: Tensor<T>,
}

pub fn gan_losses<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, prior: &Tensor<T>, z_enc: &Tensor<T>) -> Result<GanObjectives<T>> {
    let x_prior = model.gen.forward(prior, Pass::TRAIN)?.output;
    let x_rec = model.gen.forward(&z_enc.detach(), Pass::TRAIN)?.output;
    let d = |v: &Tensor<T>, pass| -> Result<Tensor<T>> { Ok(model.dis.forward(v, pass)?.output) };
    let dis_objective = dis_objective(&d(x, Pass::TRAIN)?, &d(&x_prior.detach(), Pass::TRAIN)?, &d(&x_rec.detach(), Pass::TRAIN)?)?;
    let gen_objective = gen_objective(&d(&x_prior, Pass::TRAIN_FROZEN)?, &d(&x_rec, Pass::TRAIN_FROZEN)?)?;
    Ok(GanObjectives { dis_objective, gen_objective })
}

/// Optimizer state for the three networks.
#[derive(Debug, Clone)]
pub struct AeOptimizers<T: Element = f32> {
    pub enc: Adam<T>,
    pub gen: Adam<T>,
    pub dis: Adam<T>,
}

impl<T: Element> AeOptimizers<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        Ok(AeOptimizers { enc: Adam::new(config)?, gen: Adam::new(config)?, dis: Adam::new(config)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub weights: LossWeights,
    pub objective: Objective,
    /// Discriminator updates per encoder/generator update.
    pub dis_updates: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings { weights: LossWeights::default(), objective: Objective::VaeGan, dis_updates: 1 }
    }
}

fn value<T: Element>(t: &Tensor<T>) -> f64 {
    t.data()[0].as_f64()
}

fn fraction<T: Element>(p: &Tensor<T>, real: bool) -> f64 {
    let half = T::from_f64_lossy(0.5);
    let hits = p.data().iter().filter(|&&v| if real { v > half } else { v < half }).count();
    hits as f64 / p.numel().max(1) as f64
}

/// Fakes the discriminator is trained against, generated without gradients.
pub fn discriminator_fakes<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, noise: &StepNoise<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    no_grad(|| -> Result<_> {
        let enc = model.encode_train(x, &noise.eps)?;
        let x_rec = model.gen.forward(&enc.z, Pass::TRAIN)?.output;
        let x_prior = model.gen.forward(&noise.prior, Pass::TRAIN)?.output;
        Ok((x_prior, x_rec))
    })
}

struct DisPass<T: Element> {
    loss: Tensor<T>,
    real: ForwardOutput<T>,
    d_prior: Tensor<T>,
    d_rec: Tensor<T>,
}

fn dis_pass<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, x_prior: &Tensor<T>, x_rec: &Tensor<T>) -> Result<DisPass<T>> {
    let real = model.dis.forward(x, Pass::TRAIN)?;
    let d_prior = model.dis.forward(x_prior, Pass::TRAIN)?.output;
    let d_rec = model.dis.forward(x_rec, Pass::TRAIN)?.output;
    let loss = dis_objective(&real.output, &d_prior, &d_rec)?.neg();
    Ok(DisPass { loss, real, d_prior, d_rec })
}

/// Discriminator loss (the negated game value) against the given fakes.
pub fn discriminator_loss<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, x_prior: &Tensor<T>, x_rec: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(dis_pass(model, x, x_prior, x_rec)?.loss)
}

struct EncGenPass<T: Element> {
    total: Tensor<T>,
    breakdown: LossBreakdown,
    enc_stats: [Vec<Option<BatchStats<T>>>; 3],
    gen_stats: Vec<Option<BatchStats<T>>>,
}

fn enc_gen_pass<T: Element>(model: &VaeGan<T>, x: &Tensor<T>, noise: &StepNoise<T>, settings: &StepSettings) -> Result<EncGenPass<T>> {
    let w = settings.weights;
    let enc = model.encode_pass(x, Pass::TRAIN)?;
    let z = reparametrize(&enc.mu, &enc.log_var, &noise.eps)?;
    let rec = model.gen.forward(&z, Pass::TRAIN)?;
    let kl = kl_loss(&enc.mu, &enc.log_var)?;
    let (recon, gan) = match settings.objective {
        Objective::VaeGan => {
            let llike = feature_loss(model, x, &rec.output)?;
            let rec_sg = model.gen.forward(&z.detach(), Pass::TRAIN)?.output;
            let prior = model.gen.forward(&noise.prior, Pass::TRAIN)?.output;
            let d_prior = model.dis.forward(&prior, Pass::TRAIN_FROZEN)?.output;
            let d_rec = model.dis.forward(&rec_sg, Pass::TRAIN_FROZEN)?.output;
            (llike, Some(gen_objective(&d_prior, &d_rec)?))
        }
        Objective::PixelVae => (x.sub(&rec.output)?.square().mean_all(), None),
    };
    let mut breakdown = LossBreakdown { l_prior: value(&kl), l_llike: value(&recon), ..LossBreakdown::default() };
    let mut total = kl.scale(T::from_f64_lossy(w.prior)).add(&recon.scale(T::from_f64_lossy(w.llike)))?;
    if let Some(g) = gan {
        breakdown.l_gan_gen = -value(&g);
        total = total.sub(&g.scale(T::from_f64_lossy(w.gan)))?;
    }
    Ok(EncGenPass { total, breakdown, enc_stats: enc.stats, gen_stats: rec.stats })
}

/// Weighted encoder/generator loss: `w_prior * KL + w_llike * L_llike - w_gan * G`,
/// where `G` is the generator objective. The discriminator is frozen and
/// `G` reaches the generator only.
pub fn encoder_generator_loss<T: Element>(
    model: &VaeGan<T>,
    x: &Tensor<T>,
    noise: &StepNoise<T>,
    settings: &StepSettings,
) -> Result<Tensor<T>> {
    model.check_frames(x)?;
    Ok(enc_gen_pass(model, x, noise, settings)?.total)
}

/// One alternating update: discriminator first, then encoder and generator
/// against the updated discriminator. On a non-finite loss every network and
/// optimizer is restored and `CoreError::NonFinite` is returned.
pub fn train_step<T: Element>(
    model: &mut VaeGan<T>,
    opts: &mut AeOptimizers<T>,
    x: &Tensor<T>,
    noise: &StepNoise<T>,
    settings: &StepSettings,
) -> Result<LossBreakdown> {
    model.check_frames(x)?;
    let dis_backup = (model.dis.clone(), opts.dis.clone());
    let mut dis_report = LossBreakdown::default();

    if settings.objective == Objective::VaeGan {
        let (x_prior, x_rec) = discriminator_fakes(model, x, noise)?;
        for _ in 0..settings.dis_updates.max(1) {
            let pass = dis_pass(model, x, &x_prior, &x_rec)?;
            dis_report.l_gan_dis = value(&pass.loss);
            dis_report.dis_acc_real = fraction(&pass.real.output, true);
            dis_report.dis_acc_fake = 0.5 * (fraction(&pass.d_prior, false) + fraction(&pass.d_rec, false));
            if !dis_report.l_gan_dis.is_finite() {
                (model.dis, opts.dis) = dis_backup;
                return Err(CoreError::NonFinite(format!("discriminator loss {}", dis_report.l_gan_dis)));
            }
            let grads = pass.loss.backward()?;
            opts.dis.step(model.dis.params_mut(), &grads);
            model.dis.absorb_stats(&pass.real.stats);
        }
    }

    let pass = enc_gen_pass(model, x, noise, settings)?;
    let breakdown = LossBreakdown {
        l_gan_dis: dis_report.l_gan_dis,
        dis_acc_real: dis_report.dis_acc_real,
        dis_acc_fake: dis_report.dis_acc_fake,
        ..pass.breakdown
    };
    if !breakdown.all_finite() || !value(&pass.total).is_finite() {
        (model.dis, opts.dis) = dis_backup;
        return Err(CoreError::NonFinite(format!("encoder/generator losses {breakdown:?}")));
    }
    let grads = pass.total.backward()?;
    opts.enc.step(model.encoder_params_mut(), &grads);
    opts.gen.step(model.gen.params_mut(), &grads);
    model.enc_trunk.absorb_stats(&pass.enc_stats[0]);
    model.enc_mu.absorb_stats(&pass.enc_stats[1]);
    model.enc_log_var.absorb_stats(&pass.enc_stats[2]);
    model.gen.absorb_stats(&pass.gen_stats);
    Ok(breakdown)
}

/// Breakdown logged for a step that was rolled back.
pub fn aborted_breakdown() -> LossBreakdown {
    LossBreakdown::nan()
}
