//! Convolutional critic: CoordConv input, residual downsampling blocks to
//! 4x4, linear head to one logit per image. No normalization layers; the
//! whole stack supports gradients-of-gradients, which the R1 penalty
//! needs.
//!
//! Images are NHWC in [0,1] and rescaled to [-1,1] internally.

use crate::error::{D3dError, Result};
use crate::num::{c, Elem};
use crate::params::ParamSet;
use crate::rng::RngKey;
use crate::tensor::ops::concat;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscConfig {
    /// Input resolution; power of two in 16..=128, matching the active
    /// curriculum stage.
    pub resolution: usize,
    pub base_channels: usize,
    /// Channel cap for deeper blocks.
    pub max_channels: usize,
}

impl DiscConfig {
    pub fn desk(resolution: usize) -> Self {
        DiscConfig {
            resolution,
            base_channels: 32,
            max_channels: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !(16..=128).contains(&r) || !r.is_power_of_two() {
            return Err(D3dError::Config(format!(
                "discriminator resolution must be a power of two in 16..=128, got {r}"
            )));
        }
        if self.base_channels == 0 {
            return Err(D3dError::Config("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Residual blocks halve resolution until 4x4.
    pub fn block_count(&self) -> usize {
        (self.resolution as f64).log2() as usize - 2
    }

    pub fn channels(&self, block: usize) -> usize {
        (self.base_channels << block).min(self.max_channels)
    }
}

fn conv2d<T: Elem>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (batch, h, wd, _cin) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
    );
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let oc = w.shape()[1];
    x.im2col(k, stride, pad)
        .matmul(w)
        .add(b)
        .reshape(&[batch, oh, ow, oc])
}

/// Coordinate channels: x and y each spanning [-1, 1] linearly across
/// pixel centres (top-left (-1,-1), bottom-right (+1,+1)).
pub fn coord_channels<T: Elem>(batch: usize, h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(batch * h * w * 2);
    for _ in 0..batch {
        for i in 0..h {
            for j in 0..w {
                let x = if w > 1 {
                    -1.0 + 2.0 * j as f64 / (w - 1) as f64
                } else {
                    0.0
                };
                let y = if h > 1 {
                    -1.0 + 2.0 * i as f64 / (h - 1) as f64
                } else {
                    0.0
                };
                data.push(c::<T>(x));
                data.push(c::<T>(y));
            }
        }
    }
    Tensor::from_vec(&[batch, h, w, 2], data)
}

pub fn init_discriminator<T: Elem>(cfg: &DiscConfig, key: RngKey) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let mut counter = 0u64;
    let mut draw = |shape: &[usize], fan_in: usize| {
        let limit = (1.0 / fan_in as f64).sqrt();
        let mut s = key.child(counter).stream();
        counter += 1;
        let n: usize = shape.iter().product();
        Tensor::<T>::from_vec(
            shape,
            (0..n).map(|_| c(s.uniform_in(-limit, limit))).collect(),
        )
    };
    let mut in_ch = 5; // RGB + 2 coordinate channels
    for blk in 0..cfg.block_count() {
        let out_ch = cfg.channels(blk);
        params.insert(
            format!("disc.b{blk}.c1.w"),
            draw(&[9 * in_ch, out_ch], 9 * in_ch),
        );
        params.insert(format!("disc.b{blk}.c1.b"), Tensor::zeros(&[out_ch]));
        params.insert(
            format!("disc.b{blk}.c2.w"),
            draw(&[9 * out_ch, out_ch], 9 * out_ch),
        );
        params.insert(format!("disc.b{blk}.c2.b"), Tensor::zeros(&[out_ch]));
        params.insert(
            format!("disc.b{blk}.skip.w"),
            draw(&[in_ch, out_ch], in_ch),
        );
        params.insert(format!("disc.b{blk}.skip.b"), Tensor::zeros(&[out_ch]));
        in_ch = out_ch;
    }
    let head_in = 16 * in_ch;
    params.insert("disc.head.w", draw(&[head_in, 1], head_in));
    params.insert("disc.head.b", Tensor::zeros(&[1]));
    Ok(params)
}

/// Forward pass returning per-image logits [B] and the post-block feature
/// maps (for the perceptual term of the embedding loss).
pub fn disc_forward_features<T: Elem>(
    cfg: &DiscConfig,
    params: &ParamSet<T>,
    images: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let s = images.shape();
    if s.len() != 4 || s[3] != 3 {
        return Err(D3dError::Autodiff(format!(
            "disc_forward: images must be [B,H,W,3], got {s:?}"
        )));
    }
    if s[1] != cfg.resolution || s[2] != cfg.resolution {
        return Err(D3dError::Autodiff(format!(
            "disc_forward: resolution mismatch, expected {0}x{0}, got {1}x{2}",
            cfg.resolution, s[1], s[2]
        )));
    }
    let batch = s[0];
    let rescaled = images.scale(2.0).add_scalar(-1.0);
    let coords = coord_channels::<T>(batch, s[1], s[2]);
    let mut h = concat(&[&rescaled, &coords], 3);
    let mut features = Vec::new();
    for blk in 0..cfg.block_count() {
        let p = |n: &str| params.get(&format!("disc.b{blk}.{n}"));
        let main = conv2d(&h, p("c1.w"), p("c1.b"), 3, 1, 1).leaky_relu(0.2);
        let main = conv2d(&main, p("c2.w"), p("c2.b"), 3, 1, 1).leaky_relu(0.2);
        let skip = conv2d(&h, p("skip.w"), p("skip.b"), 1, 1, 0);
        h = main.add(&skip).avg_pool2();
        features.push(h.clone());
    }
    let flat = h.reshape(&[batch, h.numel() / batch]);
    let logits = flat
        .matmul(params.get("disc.head.w"))
        .add(params.get("disc.head.b"))
        .reshape(&[batch]);
    Ok((logits, features))
}

/// Forward pass returning per-image logits [B].
pub fn disc_forward<T: Elem>(
    cfg: &DiscConfig,
    params: &ParamSet<T>,
    images: &Tensor<T>,
) -> Result<Tensor<T>> {
    disc_forward_features(cfg, params, images).map(|(l, _)| l)
}
