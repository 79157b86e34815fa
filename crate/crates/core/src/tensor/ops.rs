use super::{check_dim, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn sigmoid<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| S::from_f64_lossy(1.0 / (1.0 + (-v.as_f64()).exp())))
}

pub fn elementwise_add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    const OP: &str = "elementwise_add";
    let (sa, sb) = (a.shape(), b.shape());
    for (i, dim) in ["batch", "channels", "height", "width"].into_iter().enumerate() {
        check_dim(OP, dim, sa[i], sb[i])?;
    }
    Tensor::new(
        sa,
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    )
}

/// Multiplies each channel plane by a factor. `per_channel` holds either one
/// factor per channel (shared across the batch) or one per `(image, channel)`.
pub fn scale_channels<S: Scalar>(input: &Tensor<S>, per_channel: &[S]) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.shape();
    let per_image = if per_channel.len() == c {
        false
    } else if per_channel.len() == n * c && n > 1 {
        true
    } else {
        return Err(Error::shape("scale_channels", "factor count", c, per_channel.len()));
    };
    let hw = h * w;
    let data = input
        .data()
        .chunks(hw.max(1))
        .take(n * c)
        .enumerate()
        .flat_map(|(plane, vals)| {
            let f = if per_image { per_channel[plane] } else { per_channel[plane % c] };
            vals.iter().map(move |&v| v * f)
        })
        .collect();
    Tensor::new([n, c, h, w], data)
}

/// Frozen batch-norm statistics and affine terms for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub epsilon: f64,
}

impl<S: Scalar> BatchNorm<S> {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

pub fn batch_norm_inference<S: Scalar>(input: &Tensor<S>, bn: &BatchNorm<S>) -> Result<Tensor<S>> {
    const OP: &str = "batch_norm_inference";
    let [n, c, h, w] = input.shape();
    check_dim(OP, "mean length", c, bn.mean.len())?;
    check_dim(OP, "var length", c, bn.var.len())?;
    check_dim(OP, "gamma length", c, bn.gamma.len())?;
    check_dim(OP, "beta length", c, bn.beta.len())?;
    if let Some(i) = bn.var.iter().position(|v| *v < S::zero() || v.is_nan()) {
        return Err(Error::invalid(OP, format!("negative variance in channel {i}")));
    }
    if bn.epsilon < 0.0 {
        return Err(Error::invalid(OP, "epsilon must be non-negative"));
    }
    let scale: Vec<f64> = (0..c)
        .map(|i| bn.gamma[i].as_f64() / (bn.var[i].as_f64() + bn.epsilon).sqrt())
        .collect();
    let hw = h * w;
    let mut data = Vec::with_capacity(input.len());
    for (plane, vals) in input.data().chunks(hw.max(1)).take(n * c).enumerate() {
        let ch = plane % c;
        let (m, s, b) = (bn.mean[ch].as_f64(), scale[ch], bn.beta[ch].as_f64());
        data.extend(vals.iter().map(|v| S::from_f64_lossy((v.as_f64() - m) * s + b)));
    }
    Tensor::new([n, c, h, w], data)
}

pub fn max_pool<S: Scalar>(input: &Tensor<S>, window: usize, stride: usize) -> Result<Tensor<S>> {
    max_pool_padded(input, window, stride, 0)
}

/// Max pooling; padded cells never win.
pub fn max_pool_padded<S: Scalar>(
    input: &Tensor<S>,
    window: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    const OP: &str = "max_pool";
    let [n, c, h, w] = input.shape();
    if window == 0 || stride == 0 {
        return Err(Error::invalid(OP, "window and stride must be positive"));
    }
    if padding >= window {
        return Err(Error::invalid(OP, "padding must be smaller than the window"));
    }
    if window > h + 2 * padding || window > w + 2 * padding {
        return Err(Error::invalid(
            OP,
            format!("window {window} larger than padded input {h}x{w} (pad {padding})"),
        ));
    }
    let oh = (h + 2 * padding - window) / stride + 1;
    let ow = (w + 2 * padding - window) / stride + 1;
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            let plane = input.plane(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    for ky in 0..window {
                        let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..window {
                            if let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&v| v < w) {
                                best = best.max(plane[iy * w + ix]);
                            }
                        }
                    }
                    data.push(best);
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], data)
}

pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = input.shape();
    let hw = (h * w) as f64;
    let data = (0..n * c)
        .map(|p| {
            let sum: f64 = input.data()[p * h * w..(p + 1) * h * w]
                .iter()
                .map(|v| v.as_f64())
                .sum();
            S::from_f64_lossy(if hw > 0.0 { sum / hw } else { 0.0 })
        })
        .collect();
    Tensor {
        shape: [n, c, 1, 1],
        data,
    }
}

/// Normalizes the channel vector at every spatial cell to unit L2 norm and
/// multiplies by a learned per-channel scale.
pub fn l2_normalize_channels<S: Scalar>(input: &Tensor<S>, scale: &[S], epsilon: f64) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.shape();
    check_dim("l2_normalize_channels", "scale length", c, scale.len())?;
    let hw = h * w;
    let mut out = vec![S::zero(); input.len()];
    for b in 0..n {
        for p in 0..hw {
            let norm = (0..c)
                .map(|ch| input.data()[(b * c + ch) * hw + p].as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
                + epsilon;
            for ch in 0..c {
                let i = (b * c + ch) * hw + p;
                out[i] = S::from_f64_lossy(input.data()[i].as_f64() / norm * scale[ch].as_f64());
            }
        }
    }
    Tensor::new([n, c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sigmoid_basics() {
        let neg = Tensor::<f32>::filled([1, 2, 3, 3], -1.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let zero = Tensor::<f32>::zeros([2, 2, 2, 2]);
        assert!(sigmoid(&zero).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn add_requires_same_shape() {
        let a = Tensor::<f32>::zeros([1, 2, 2, 2]);
        let b = Tensor::<f32>::zeros([1, 2, 2, 3]);
        let err = elementwise_add(&a, &b).unwrap_err();
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn scale_channels_identity_and_mismatch() {
        let x = Tensor::<f64>::from_fn([2, 3, 2, 2], |n, c, y, x| (n + 2 * c + y + x) as f64);
        assert_eq!(scale_channels(&x, &[1.0; 3]).unwrap(), x);
        assert!(scale_channels(&x, &[1.0; 4]).is_err());
        let per_image = scale_channels(&x, &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(per_image.image(0).unwrap(), x.image(0).unwrap());
        assert!(per_image.image(1).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_identity_and_constant_channel() {
        let x = Tensor::<f64>::from_fn([1, 2, 3, 3], |_, c, y, x| (c * 9 + y * 3 + x) as f64);
        let mut bn = BatchNorm::identity(2);
        bn.epsilon = 0.0;
        assert_eq!(batch_norm_inference(&x, &bn).unwrap(), x);

        let c = Tensor::<f64>::filled([1, 2, 2, 2], 3.0);
        let bn = BatchNorm {
            mean: vec![3.0, 3.0],
            var: vec![2.0, 0.5],
            gamma: vec![1.7, -0.2],
            beta: vec![0.25, -4.0],
            epsilon: 1e-5,
        };
        let y = batch_norm_inference(&c, &bn).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -4.0));
    }

    #[test]
    fn batch_norm_rejects_negative_variance() {
        let x = Tensor::<f32>::zeros([1, 1, 1, 1]);
        let mut bn = BatchNorm::identity(1);
        bn.var[0] = -0.1;
        assert!(batch_norm_inference(&x, &bn).is_err());
    }

    #[test]
    fn batch_norm_matches_scalar_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = 4;
        let x = Tensor::<f32>::from_fn([2, c, 3, 2], |_, _, _, _| rng.gen_range(-3.0..3.0));
        let bn = BatchNorm {
            mean: (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            var: (0..c).map(|_| rng.gen_range(0.01..2.0)).collect(),
            gamma: (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            beta: (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            epsilon: 1e-5,
        };
        let y = batch_norm_inference(&x, &bn).unwrap();
        for b in 0..2 {
            for ch in 0..c {
                for (i, &v) in y.plane(b, ch).iter().enumerate() {
                    let xv = x.plane(b, ch)[i] as f64;
                    let want = bn.gamma[ch] as f64 * (xv - bn.mean[ch] as f64)
                        / (bn.var[ch] as f64 + 1e-5).sqrt()
                        + bn.beta[ch] as f64;
                    assert!((v as f64 - want).abs() <= 1e-6 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn pools() {
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool(&x, 2, 2).unwrap().data(), &[4.0]);
        let k = Tensor::<f32>::filled([1, 2, 4, 4], 0.75);
        assert!(max_pool(&k, 2, 2).unwrap().data().iter().all(|&v| v == 0.75));
        assert!(global_avg_pool(&k).data().iter().all(|&v| v == 0.75));
        let seq = Tensor::<f64>::from_fn([1, 1, 4, 4], |_, _, y, x| (y * 4 + x + 1) as f64);
        assert_eq!(global_avg_pool(&seq).data(), &[8.5]);
        assert_eq!(global_avg_pool(&seq).shape(), [1, 1, 1, 1]);
        assert!(max_pool(&x, 3, 1).is_err());
        let padded = max_pool_padded(&seq, 3, 1, 1).unwrap();
        assert_eq!(padded.shape(), [1, 1, 4, 4]);
        assert_eq!(padded.at(0, 0, 0, 0), 6.0);
    }

    #[test]
    fn l2_norm_unit_vectors() {
        let x = Tensor::<f64>::new([1, 2, 1, 1], vec![3.0, 4.0]).unwrap();
        let y = l2_normalize_channels(&x, &[10.0, 10.0], 0.0).unwrap();
        assert_eq!(y.data(), &[6.0, 8.0]);
    }
}
