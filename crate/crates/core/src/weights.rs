//! Named parameter tensors: layout declaration, seeded initialization and the
//! `.wts` bundle format (text manifest followed by little-endian `f32` data).

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNorm, Tensor};

pub const WTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Gaussian,
    Constant(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Accumulates parameter declarations under a dotted name prefix.
#[derive(Debug, Default)]
pub struct Layout {
    params: Vec<ParamSpec>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, shape: [usize; 4], init: Init) {
        self.params.push(ParamSpec { name, shape, init });
    }

    /// Convolution kernel `(c_out, c_in_per_group, k, k)` plus optional bias.
    pub fn conv(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize, bias: bool) {
        self.push(format!("{name}.weight"), [c_out, c_in_per_group, k, k], Init::Gaussian);
        if bias {
            self.push(format!("{name}.bias"), [1, c_out, 1, 1], Init::Constant(0.0));
        }
    }

    /// Transposed-convolution kernel `(c_in, c_out, k, k)`.
    pub fn deconv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.push(format!("{name}.weight"), [c_in, c_out, k, k], Init::Gaussian);
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) {
        for (field, v) in [("mean", 0.0), ("var", 1.0), ("gamma", 1.0), ("beta", 0.0)] {
            self.push(format!("{name}.{field}"), [1, c, 1, 1], Init::Constant(v));
        }
    }

    pub fn vector(&mut self, name: &str, c: usize, value: f32) {
        self.push(name.to_string(), [1, c, 1, 1], Init::Constant(value));
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn into_params(self) -> Vec<ParamSpec> {
        self.params
    }

    pub fn total(&self) -> u64 {
        self.params.iter().map(|p| p.numel() as u64).sum()
    }

    /// Count of convolution/deconvolution kernel entries only.
    pub fn kernel_total(&self) -> u64 {
        self.params
            .iter()
            .filter(|p| p.name.ends_with(".weight"))
            .map(|p| p.numel() as u64)
            .sum()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Flat `f32` storage for an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    names: Vec<String>,
    shapes: Vec<[usize; 4]>,
    offsets: Vec<usize>,
    data: Vec<f32>,
}

impl WeightBundle {
    fn from_parts(entries: Vec<(String, [usize; 4])>, data: Vec<f32>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0usize;
        let mut names = Vec::with_capacity(entries.len());
        let mut shapes = Vec::with_capacity(entries.len());
        for (name, shape) in entries {
            if names.contains(&name) {
                return Err(Error::Format {
                    what: "weight bundle",
                    msg: format!("duplicate tensor `{name}`"),
                });
            }
            offsets.push(total);
            total += shape.iter().product::<usize>();
            names.push(name);
            shapes.push(shape);
        }
        if total != data.len() {
            return Err(Error::Format {
                what: "weight bundle",
                msg: format!("manifest describes {total} values, data holds {}", data.len()),
            });
        }
        Ok(Self {
            names,
            shapes,
            offsets,
            data,
        })
    }

    /// Fills every layout entry: kernels from `N(0, sigma)` drawn in layout
    /// order from a ChaCha stream seeded with `seed`, the rest with constants.
    pub fn init(layout: &[ParamSpec], sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0f64, sigma)
            .map_err(|e| Error::invalid("init_weights", format!("bad sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = layout.iter().map(ParamSpec::numel).sum();
        let mut data = Vec::with_capacity(total);
        for p in layout {
            match p.init {
                Init::Gaussian => data.extend((0..p.numel()).map(|_| normal.sample(&mut rng) as f32)),
                Init::Constant(v) => data.extend(std::iter::repeat(v).take(p.numel())),
            }
        }
        Self::from_parts(
            layout.iter().map(|p| (p.name.clone(), p.shape)).collect(),
            data,
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.data.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn values(&self, index: usize) -> (&str, [usize; 4], &[f32]) {
        let start = self.offsets[index];
        let len: usize = self.shapes[index].iter().product();
        (&self.names[index], self.shapes[index], &self.data[start..start + len])
    }

    pub fn get(&self, name: &str) -> Option<([usize; 4], &[f32])> {
        let i = self.names.iter().position(|n| n == name)?;
        let (_, shape, v) = self.values(i);
        Some((shape, v))
    }

    fn data_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// FNV-1a over the little-endian data section.
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.data_bytes())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "format_version = {WTS_FORMAT_VERSION}")?;
        writeln!(w, "tensor_count = {}", self.names.len())?;
        writeln!(w, "digest = {:016x}", self.digest())?;
        for (name, s) in self.names.iter().zip(&self.shapes) {
            writeln!(w, "tensor {name} {} {} {} {}", s[0], s[1], s[2], s[3])?;
        }
        writeln!(w, "data")?;
        w.write_all(&self.data_bytes())?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let bad = |msg: String| Error::Format { what: "weight bundle", msg };
        let mut r = std::io::BufReader::new(r);
        let mut header = |expect: &str| -> Result<String> {
            let mut line = String::new();
            r.read_line(&mut line)?;
            let (k, v) = line
                .trim_end()
                .split_once(" = ")
                .ok_or_else(|| bad(format!("expected `{expect} = ...`")))?;
            if k != expect {
                return Err(bad(format!("expected `{expect}`, found `{k}`")));
            }
            Ok(v.to_string())
        };
        let version = header("format_version")?;
        if version != WTS_FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported format_version {version}")));
        }
        let count: usize = header("tensor_count")?
            .parse()
            .map_err(|_| bad("tensor_count is not an integer".into()))?;
        let digest = u64::from_str_radix(&header("digest")?, 16)
            .map_err(|_| bad("digest is not hexadecimal".into()))?;

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut line = String::new();
            r.read_line(&mut line)?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 || parts[0] != "tensor" {
                return Err(bad(format!("malformed manifest line `{}`", line.trim_end())));
            }
            let mut shape = [0usize; 4];
            for (d, p) in shape.iter_mut().zip(&parts[2..]) {
                *d = p.parse().map_err(|_| bad(format!("bad dimension `{p}`")))?;
            }
            entries.push((parts[1].to_string(), shape));
        }
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != "data" {
            return Err(bad("missing `data` marker".into()));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 4 != 0 {
            return Err(bad("data section is not a whole number of f32 values".into()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let bundle = Self::from_parts(entries, data)?;
        if bundle.digest() != digest {
            return Err(bad(format!(
                "digest mismatch: header {digest:016x}, data {:016x}",
                bundle.digest()
            )));
        }
        Ok(bundle)
    }
}

/// Weights materialized as tensors of the working scalar type.
#[derive(Debug, Clone)]
pub struct Weights<S> {
    tensors: HashMap<String, Tensor<S>>,
}

impl<S: Scalar> Weights<S> {
    pub fn from_bundle(bundle: &WeightBundle) -> Self {
        let tensors = (0..bundle.len())
            .map(|i| {
                let (name, shape, values) = bundle.values(i);
                let data = values.iter().map(|&v| S::from_f64_lossy(v as f64)).collect();
                (name.to_string(), Tensor::new(shape, data).expect("bundle shapes are consistent"))
            })
            .collect();
        Self { tensors }
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor<S>)>) -> Self {
        Self {
            tensors: tensors.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    /// Looks up `name`, failing with a diagnostic naming the layer.
    pub fn require(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors.get(name).ok_or_else(|| Error::Weights {
            layer: name.to_string(),
            msg: "missing from weight bundle".into(),
        })
    }

    pub fn require_shape(&self, name: &str, shape: [usize; 4]) -> Result<&Tensor<S>> {
        let t = self.require(name)?;
        if t.shape() != shape {
            return Err(Error::Weights {
                layer: name.to_string(),
                msg: format!("expected shape {:?}, found {:?}", shape, t.shape()),
            });
        }
        Ok(t)
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<&[S]> {
        Ok(self.require_shape(name, [1, len, 1, 1])?.data())
    }

    pub fn batch_norm(&self, name: &str, c: usize) -> Result<BatchNorm<S>> {
        Ok(BatchNorm {
            mean: self.vector(&format!("{name}.mean"), c)?.to_vec(),
            var: self.vector(&format!("{name}.var"), c)?.to_vec(),
            gamma: self.vector(&format!("{name}.gamma"), c)?.to_vec(),
            beta: self.vector(&format!("{name}.beta"), c)?.to_vec(),
            epsilon: BatchNorm::<S>::DEFAULT_EPSILON,
        })
    }

    /// Every tensor in the layout present with the declared shape.
    pub fn check_layout(&self, layout: &[ParamSpec]) -> Result<()> {
        for p in layout {
            self.require_shape(&p.name, p.shape)?;
        }
        Ok(())
    }
}
