use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref other => Err(Error::Shape(format!("expected a C×H×W image, got {other:?}"))),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with radius `⌈3σ⌉` and clamped edges, followed by
/// a per-channel shift that restores each channel's mean (clamping the edges
/// alone does not conserve it). `sigma == 0` is the identity.
pub fn blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    let (c, h, w) = image_dims(image)?;
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[plane + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * src[plane + y * w + clamp(x as i64 + k as i64 - radius, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[plane + y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kv)| kv * tmp[plane + clamp(y as i64 + k as i64 - radius, h) * w + x])
                    .sum();
            }
        }
        let n = (h * w) as f64;
        let before: f64 = src[plane..plane + h * w].iter().sum::<f64>() / n;
        let after: f64 = out[plane..plane + h * w].iter().sum::<f64>() / n;
        let shift = before - after;
        out[plane..plane + h * w].iter_mut().for_each(|v| *v += shift);
    }
    Tensor::from_vec(image.shape(), out)
}

/// Circular shift: pixel `(y, x)` moves to `((y + dy) mod H, (x + dx) mod W)`.
pub fn jitter(image: &Tensor, dx: i64, dy: i64) -> Result<Tensor> {
    let (c, h, w) = image_dims(image)?;
    if dx == 0 && dy == 0 {
        return Ok(image.clone());
    }
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    let wrap = |v: i64, n: usize| v.rem_euclid(n as i64) as usize;
    for ch in 0..c {
        let plane = ch * h * w;
        for y in 0..h {
            let ty = wrap(y as i64 + dy, h);
            for x in 0..w {
                out[plane + ty * w + wrap(x as i64 + dx, w)] = src[plane + y * w + x];
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Uniform offsets in `[-max, max]` on each axis.
pub fn random_shift(rng: &mut Rng, max: usize) -> (i64, i64) {
    if max == 0 {
        return (0, 0);
    }
    let m = max as i64;
    (rng.random_range(-m..=m), rng.random_range(-m..=m))
}
