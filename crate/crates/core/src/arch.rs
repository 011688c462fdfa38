use lrsim_data::Geometry;
use lrsim_nn::{Activation, LayerSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const KERNEL: usize = 5;
pub const PAD: usize = 2;

/// Shape of the three autoencoder networks.
///
/// The encoder and discriminator share a stack of stride-2 convolutions with
/// `conv_channels` filters; the generator mirrors it with transposed convs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeArch {
    pub geometry: Geometry,
    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    /// Discriminator layer whose pre-norm output feeds the feature loss.
    pub feature_layer: usize,
}

impl AeArch {
    /// 32x64 frames, three convolutions, 128-d codes.
    pub fn desk() -> Self {
        AeArch { geometry: Geometry::DESK, latent_dim: 128, conv_channels: vec![32, 64, 128], feature_layer: 2 }
    }

    /// 80x160 frames, four convolutions (four deconvolutions back), 2048-d codes.
    pub fn paper() -> Self {
        AeArch { geometry: Geometry::PAPER, latent_dim: 2048, conv_channels: vec![32, 64, 128, 256], feature_layer: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.conv_channels.len();
        let g = self.geometry;
        if k == 0 || self.latent_dim == 0 {
            return Err(CoreError::Config("need at least one convolution and a positive latent size".into()));
        }
        let div = 1usize << k;
        if g.height == 0 || g.width == 0 || g.height % div != 0 || g.width % div != 0 {
            return Err(CoreError::Config(format!(
                "frame {}x{} is not divisible by {div} for {k} stride-2 layers",
                g.height, g.width
            )));
        }
        if self.feature_layer >= k {
            return Err(CoreError::Config(format!("feature layer {} outside {k} convolutions", self.feature_layer)));
        }
        Ok(())
    }

    /// Spatial extent after the convolution stack.
    pub fn bottleneck(&self) -> [usize; 3] {
        let div = 1 << self.conv_channels.len();
        [*self.conv_channels.last().expect("non-empty"), self.geometry.height / div, self.geometry.width / div]
    }

    pub fn bottleneck_len(&self) -> usize {
        self.bottleneck().iter().product()
    }

    fn conv_stack(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in self.conv_channels.iter().enumerate() {
            let mut s = LayerSpec::conv(c_in, c, KERNEL, 2, PAD).with_activation(Activation::Relu);
            if i > 0 {
                s = s.with_norm();
            }
            specs.push(s);
            c_in = c;
        }
        specs
    }

    pub fn encoder_trunk(&self) -> Vec<LayerSpec> {
        self.conv_stack()
    }

    /// One dense head (mean or log-variance) on the flattened trunk output.
    pub fn encoder_head(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::dense(self.bottleneck_len(), self.latent_dim)]
    }

    pub fn generator(&self) -> Vec<LayerSpec> {
        let [c0, h0, w0] = self.bottleneck();
        let mut specs = vec![LayerSpec::dense(self.latent_dim, c0 * h0 * w0)
            .unflatten_to(h0, w0)
            .with_norm()
            .with_activation(Activation::leaky())];
        let mut outs: Vec<usize> = self.conv_channels.iter().rev().skip(1).copied().collect();
        outs.push(3);
        let mut c_in = c0;
        let last = outs.len() - 1;
        for (i, c) in outs.into_iter().enumerate() {
            let s = LayerSpec::deconv(c_in, c, KERNEL, 2, PAD);
            specs.push(if i == last {
                s.with_activation(Activation::Tanh)
            } else {
                s.with_norm().with_activation(Activation::leaky())
            });
            c_in = c;
        }
        specs
    }

    pub fn discriminator(&self) -> Vec<LayerSpec> {
        let mut specs = self.conv_stack();
        specs.push(LayerSpec::dense(self.bottleneck_len(), 1).with_activation(Activation::Sigmoid));
        specs
    }
}
