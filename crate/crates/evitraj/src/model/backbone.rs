//! Shared raster encoder and the decoders used for self-supervised
//! reconstruction.

use diffcore::nn::{he_std, Conv2d, ConvTranspose2d, Linear};
use diffcore::{concat, Tensor};

use super::{FEAT_DIM, STATE_DIM};

/// Channel progression of the stride-2 conv stack: 64×64×3 → 4×4×64.
const CONV_CHANNELS: [usize; 5] = [3, 8, 16, 32, 64];

/// Raster encoder: four stride-2 ReLU convs, global average pool over the
/// remaining spatial grid, one ReLU projection, then the kinematic state is
/// appended. Output width is `FEAT_DIM + STATE_DIM`.
pub struct Backbone {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
}

impl Backbone {
    pub fn new(sample: &mut dyn FnMut() -> f64) -> Backbone {
        let convs = CONV_CHANNELS
            .windows(2)
            .map(|io| Conv2d::new(io[0], io[1], 3, 2, 1, sample))
            .collect();
        let top = *CONV_CHANNELS.last().unwrap();
        Backbone {
            convs,
            fc: Linear::new(top, FEAT_DIM, he_std(top), sample),
        }
    }

    /// img: [B, H, W, 3], state: [B, STATE_DIM] → [B, FEAT_DIM + STATE_DIM].
    pub fn forward(&self, img: &Tensor, state: &Tensor) -> Tensor {
        assert_eq!(state.shape()[1], STATE_DIM);
        let mut h = img.clone();
        for c in &self.convs {
            h = c.forward(&h).relu();
        }
        let s = h.shape().to_vec();
        let pooled = h.reshape(&[s[0], s[1] * s[2], s[3]]).mean_axis(1, false);
        let feat = self.fc.forward(&pooled).relu();
        concat(&[&feat, state], 1)
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.fc.params());
        p
    }
}

/// Deconvolutional channel progression: 2×2×8 → 64×64×1. Kept deliberately
/// narrow — two of these sit on the interpretable model and the head
/// parameter budget is matched against the single-latent ablation, so the
/// decoders must stay a small fraction of the total.
const DECONV_CHANNELS: [usize; 6] = [8, 8, 8, 8, 4, 1];
const DECONV_SEED_HW: usize = 2;

/// Reconstructs one 64×64 raster channel (flattened, sigmoid-activated)
/// from a feature vector.
pub struct SpatialDecoder {
    pub fc: Linear,
    pub deconvs: Vec<ConvTranspose2d>,
}

impl SpatialDecoder {
    pub fn new(in_dim: usize, sample: &mut dyn FnMut() -> f64) -> SpatialDecoder {
        let seed_numel = DECONV_SEED_HW * DECONV_SEED_HW * DECONV_CHANNELS[0];
        let deconvs = DECONV_CHANNELS
            .windows(2)
            .map(|io| ConvTranspose2d::new(io[0], io[1], 4, 2, 1, sample))
            .collect();
        SpatialDecoder {
            fc: Linear::new(in_dim, seed_numel, he_std(in_dim), sample),
            deconvs,
        }
    }

    /// h: [B, in_dim] → [B, 64·64] in (0, 1).
    pub fn forward(&self, h: &Tensor) -> Tensor {
        let b = h.shape()[0];
        let mut y = self.fc.forward(h).relu().reshape(&[
            b,
            DECONV_SEED_HW,
            DECONV_SEED_HW,
            DECONV_CHANNELS[0],
        ]);
        for (i, d) in self.deconvs.iter().enumerate() {
            y = d.forward(&y);
            if i + 1 < self.deconvs.len() {
                y = y.relu();
            }
        }
        let out = y.shape().to_vec();
        y.sigmoid().reshape(&[b, out[1] * out[2]])
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.fc.params();
        p.extend(self.deconvs.iter().flat_map(|d| d.params()));
        p
    }
}
