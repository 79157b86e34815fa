use super::{check_dim, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Geometry of a 2-D convolution. Padding is symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(kh: usize, kw: usize) -> Self {
        Self {
            kernel: (kh, kw),
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }

    /// Square odd kernel padded to preserve spatial size at stride 1.
    pub fn same(k: usize) -> Self {
        Self::new(k, k).padding(k / 2)
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < kh || pw < kw {
            return None;
        }
        Some(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::invalid(op, "kernel dimensions must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::invalid(op, "stride must be positive"));
        }
        if self.groups == 0 {
            return Err(Error::invalid(op, "groups must be positive"));
        }
        Ok(())
    }
}

/// Output indices `o` in `[lo, hi)` whose input tap `o*stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if in_len + pad <= k {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Cross-correlation with grouped channels.
///
/// `weights` has shape `(c_out, c_in / groups, kh, kw)`; `bias` is either empty
/// or of length `c_out`. Sums are accumulated in `f64`.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &[S],
    params: ConvParams,
) -> Result<Tensor<S>> {
    const OP: &str = "conv2d";
    params.validate(OP)?;
    let [n, c_in, h, w] = input.shape();
    let [c_out, c_in_g, kh, kw] = weights.shape();
    let g = params.groups;
    if c_in % g != 0 {
        return Err(Error::invalid(
            OP,
            format!("groups {g} does not divide input channels {c_in}"),
        ));
    }
    if c_out % g != 0 {
        return Err(Error::invalid(
            OP,
            format!("groups {g} does not divide output channels {c_out}"),
        ));
    }
    check_dim(OP, "weight in-channels per group", c_in / g, c_in_g)?;
    check_dim(OP, "kernel height", params.kernel.0, kh)?;
    check_dim(OP, "kernel width", params.kernel.1, kw)?;
    if !bias.is_empty() {
        check_dim(OP, "bias length", c_out, bias.len())?;
    }
    let (oh, ow) = params.output_size(h, w).ok_or_else(|| {
        Error::invalid(
            OP,
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {})", params.padding),
        )
    })?;

    let x: Vec<f64> = input.data().iter().map(|v| v.as_f64()).collect();
    let wt: Vec<f64> = weights.data().iter().map(|v| v.as_f64()).collect();
    let (s, pad) = (params.stride, params.padding);
    let out_per_group = c_out / g;
    let mut out = Vec::with_capacity(n * c_out * oh * ow);
    let mut acc = vec![0.0f64; oh * ow];

    for b in 0..n {
        for oc in 0..c_out {
            let group = oc / out_per_group;
            let b0 = bias.get(oc).map_or(0.0, |v| v.as_f64());
            acc.iter_mut().for_each(|a| *a = b0);
            for icg in 0..c_in_g {
                let ic = group * c_in_g + icg;
                let plane = &x[(b * c_in + ic) * h * w..(b * c_in + ic + 1) * h * w];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(oh, h, ky, s, pad);
                    for kx in 0..kw {
                        let wv = wt[((oc * c_in_g + icg) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(ow, w, kx, s, pad);
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - pad;
                            let row = &plane[iy * w..(iy + 1) * w];
                            let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                            for ox in ox0..ox1 {
                                acc_row[ox] += wv * row[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
            out.extend(acc.iter().map(|&v| S::from_f64_lossy(v)));
        }
    }
    Tensor::new([n, c_out, oh, ow], out)
}

/// Transposed convolution (scatter-add). Only stride 2 is supported, which is
/// what the top-down pyramid path uses.
///
/// `weights` has shape `(c_in, c_out / groups, kh, kw)`.
pub fn deconv2d<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    params: ConvParams,
) -> Result<Tensor<S>> {
    const OP: &str = "deconv2d";
    params.validate(OP)?;
    if params.stride != 2 {
        return Err(Error::invalid(
            OP,
            format!("unsupported stride {} (only 2 is supported)", params.stride),
        ));
    }
    let [n, c_in, h, w] = input.shape();
    let [wc_in, c_out_g, kh, kw] = weights.shape();
    let g = params.groups;
    check_dim(OP, "weight in-channels", c_in, wc_in)?;
    if c_in % g != 0 {
        return Err(Error::invalid(
            OP,
            format!("groups {g} does not divide input channels {c_in}"),
        ));
    }
    check_dim(OP, "kernel height", params.kernel.0, kh)?;
    check_dim(OP, "kernel width", params.kernel.1, kw)?;
    let (s, pad) = (params.stride, params.padding);
    let full_h = (h.max(1) - 1) * s + kh;
    let full_w = (w.max(1) - 1) * s + kw;
    if h == 0 || w == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(Error::invalid(OP, "padding removes the entire output"));
    }
    let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
    let c_out = c_out_g * g;
    let in_per_group = c_in / g;

    let x: Vec<f64> = input.data().iter().map(|v| v.as_f64()).collect();
    let wt: Vec<f64> = weights.data().iter().map(|v| v.as_f64()).collect();
    let mut acc = vec![0.0f64; n * c_out * oh * ow];
    for b in 0..n {
        for ic in 0..c_in {
            let group = ic / in_per_group;
            let plane = &x[(b * c_in + ic) * h * w..(b * c_in + ic + 1) * h * w];
            for ocg in 0..c_out_g {
                let oc = group * c_out_g + ocg;
                let out = &mut acc[(b * c_out + oc) * oh * ow..(b * c_out + oc + 1) * oh * ow];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((ic * c_out_g + ocg) * kh + ky) * kw + kx];
                        for iy in 0..h {
                            let Some(oy) = (iy * s + ky).checked_sub(pad).filter(|&v| v < oh) else {
                                continue;
                            };
                            for ix in 0..w {
                                if let Some(ox) = (ix * s + kx).checked_sub(pad).filter(|&v| v < ow) {
                                    out[oy * ow + ox] += wv * plane[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(
        [n, c_out, oh, ow],
        acc.into_iter().map(S::from_f64_lossy).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f32> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Direct per-output sum, written independently of the kernel above.
    fn naive_conv(x: &Tensor<f32>, wt: &Tensor<f32>, bias: &[f32], p: ConvParams) -> Vec<f64> {
        let [n, c_in, h, w] = x.shape();
        let [c_out, cg, kh, kw] = wt.shape();
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (w + 2 * p.padding - kw) / p.stride + 1;
        let opg = c_out / p.groups;
        let mut out = Vec::new();
        for b in 0..n {
            for oc in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut sum = bias.get(oc).copied().unwrap_or(0.0) as f64;
                        for i in 0..cg {
                            let ic = (oc / opg) * cg + i;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    sum += x.at(b, ic, iy as usize, ix as usize) as f64
                                        * wt.at(oc, i, ky, kx) as f64;
                                }
                            }
                        }
                        out.push(sum);
                    }
                }
            }
        }
        let _ = c_in;
        out
    }

    fn close(a: f32, b: f64) -> bool {
        (a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0)
    }

    #[test]
    fn one_by_one_identity() {
        let x = Tensor::<f32>::from_fn([1, 1, 4, 3], |_, _, y, x| (y * 3 + x) as f32 - 4.5);
        let wt = Tensor::filled([1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &wt, &[], ConvParams::new(1, 1)).unwrap(), x);
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::<f32>::filled([1, 1, 5, 5], 2.0);
        let wt = Tensor::filled([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &wt, &[], ConvParams::new(3, 3)).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 18.0));
    }

    #[test]
    fn random_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, [1, 1, 4, 4]);
        let wt = random(&mut rng, [1, 1, 3, 3]);
        let y = conv2d(&x, &wt, &[], ConvParams::new(3, 3)).unwrap();
        let want = naive_conv(&x, &wt, &[], ConvParams::new(3, 3));
        assert!(y.data().iter().zip(&want).all(|(&a, &b)| close(a, b)));
    }

    #[test]
    fn strided_padded_grouped_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = [1, 2, 4][rng.gen_range(0..3)];
            let c_in = g * rng.gen_range(1..3);
            let c_out = g * rng.gen_range(1..3);
            let k = [1, 2, 3][rng.gen_range(0..3)];
            let p = ConvParams::new(k, k)
                .stride(rng.gen_range(1..3))
                .padding(rng.gen_range(0..2))
                .groups(g);
            let (h, w) = (rng.gen_range(3..7), rng.gen_range(3..7));
            let x = random(&mut rng, [2, c_in, h, w]);
            let wt = random(&mut rng, [c_out, c_in / g, k, k]);
            let bias: Vec<f32> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = conv2d(&x, &wt, &bias, p).unwrap();
            let want = naive_conv(&x, &wt, &bias, p);
            assert_eq!(y.len(), want.len());
            assert!(y.data().iter().zip(&want).all(|(&a, &b)| close(a, b)));
        }
    }

    #[test]
    fn shape_errors_name_dimension() {
        let x = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let wt = Tensor::zeros([2, 2, 3, 3]);
        let err = conv2d(&x, &wt, &[], ConvParams::new(3, 3)).unwrap_err();
        assert!(err.to_string().contains("weight in-channels per group"), "{err}");
        let err = conv2d(&x, &Tensor::zeros([2, 1, 3, 3]), &[], ConvParams::new(3, 3).groups(2))
            .unwrap_err();
        assert!(err.to_string().contains("does not divide"), "{err}");
        let err = conv2d(&x, &Tensor::zeros([2, 3, 3, 3]), &[0.0], ConvParams::new(3, 3)).unwrap_err();
        assert!(err.to_string().contains("bias length"), "{err}");
        let err = conv2d(&x, &Tensor::zeros([2, 3, 7, 7]), &[], ConvParams::new(7, 7)).unwrap_err();
        assert!(err.to_string().contains("larger than padded input"), "{err}");
    }

    #[test]
    fn deconv_single_tap_scatter() {
        let x = Tensor::<f32>::filled([1, 1, 1, 1], 3.5);
        let wt = Tensor::filled([1, 1, 2, 2], 1.0);
        let y = deconv2d(&x, &wt, ConvParams::new(2, 2).stride(2)).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn deconv_zero_in_zero_out_and_stride_check() {
        let x = Tensor::<f32>::zeros([1, 2, 3, 3]);
        let wt = Tensor::filled([2, 3, 2, 2], 0.7);
        let y = deconv2d(&x, &wt, ConvParams::new(2, 2).stride(2)).unwrap();
        assert_eq!(y.shape(), [1, 3, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(deconv2d(&x, &wt, ConvParams::new(2, 2).stride(1)).is_err());
        assert!(deconv2d(&x, &wt, ConvParams::new(2, 2).stride(3)).is_err());
    }

    #[test]
    fn deconv_two_by_two_hand_values() {
        // Each input cell paints its own 2x2 tile scaled by the kernel.
        let x = Tensor::<f32>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let wt = Tensor::new([1, 1, 2, 2], vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
        let y = deconv2d(&x, &wt, ConvParams::new(2, 2).stride(2)).unwrap();
        #[rustfmt::skip]
        let want = [
            1.0, 10.0, 2.0, 20.0,
            100.0, 1000.0, 200.0, 2000.0,
            3.0, 30.0, 4.0, 40.0,
            300.0, 3000.0, 400.0, 4000.0,
        ];
        assert_eq!(y.data(), &want);
    }
}
