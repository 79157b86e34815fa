use super::ConvParams;
use crate::error::{Error, Result};

/// A convolution layer as far as parameter counting is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub conv: ConvParams,
    pub c_in: usize,
    pub c_out: usize,
    pub bias: bool,
    /// Counts the two affine batch-norm terms per output channel.
    pub batch_norm: bool,
}

impl LayerDesc {
    pub fn new(conv: ConvParams, c_in: usize, c_out: usize) -> Self {
        Self {
            conv,
            c_in,
            c_out,
            bias: false,
            batch_norm: false,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    pub fn with_batch_norm(mut self) -> Self {
        self.batch_norm = true;
        self
    }
}

pub fn param_count(layer: &LayerDesc) -> Result<u64> {
    let g = layer.conv.groups;
    let (kh, kw) = layer.conv.kernel;
    if g == 0 || kh == 0 || kw == 0 || layer.c_in == 0 || layer.c_out == 0 {
        return Err(Error::invalid("param_count", "all layer dimensions must be positive"));
    }
    if layer.c_in % g != 0 || layer.c_out % g != 0 {
        return Err(Error::invalid(
            "param_count",
            format!("groups {g} must divide c_in {} and c_out {}", layer.c_in, layer.c_out),
        ));
    }
    let c_out = layer.c_out as u64;
    let mut n = c_out * (layer.c_in / g) as u64 * (kh * kw) as u64;
    if layer.bias {
        n += c_out;
    }
    if layer.batch_norm {
        n += 2 * c_out;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let std3 = LayerDesc::new(ConvParams::same(3), 16, 32);
        assert_eq!(param_count(&std3).unwrap(), 4608);
        let dw = LayerDesc::new(ConvParams::same(3).groups(16), 16, 16);
        let pw = LayerDesc::new(ConvParams::new(1, 1), 16, 32);
        assert_eq!(param_count(&dw).unwrap() + param_count(&pw).unwrap(), 656);
        assert_eq!(param_count(&LayerDesc::new(ConvParams::new(1, 1), 1, 1)).unwrap(), 1);
        let full = LayerDesc::new(ConvParams::new(1, 1), 4, 8).with_bias().with_batch_norm();
        assert_eq!(param_count(&full).unwrap(), 32 + 8 + 16);
        assert!(param_count(&LayerDesc::new(ConvParams::new(1, 1).groups(3), 4, 6)).is_err());
    }
}
