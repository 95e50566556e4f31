use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::POSE_CHANNELS;

pub const STAGE1_DILATIONS: [usize; 5] = [1, 2, 4, 8, 16];
pub const STAGE2_DILATIONS: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

const MODEL_MAGIC: &[u8; 4] = b"MLRF";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerArchitecture {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub stage1_dilations: Vec<usize>,
    pub stage2_dilations: Vec<usize>,
    pub activation: Activation,
}

impl Default for RefinerArchitecture {
    fn default() -> Self {
        Self::with_hidden(64)
    }
}

impl RefinerArchitecture {
    pub fn with_hidden(hidden_channels: usize) -> Self {
        RefinerArchitecture {
            in_channels: POSE_CHANNELS,
            hidden_channels,
            kernel_size: 3,
            stage1_dilations: STAGE1_DILATIONS.to_vec(),
            stage2_dilations: STAGE2_DILATIONS.to_vec(),
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != POSE_CHANNELS {
            return Err(Error::invalid(format!("in_channels must be {POSE_CHANNELS}")));
        }
        if self.hidden_channels == 0 {
            return Err(Error::invalid("hidden_channels must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("kernel_size must be odd"));
        }
        if self.stage1_dilations != STAGE1_DILATIONS || self.stage2_dilations != STAGE2_DILATIONS {
            return Err(Error::invalid("dilation sets are fixed to {1..16} and {1..128}"));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().total
    }

    /// Frames of context each output sees on either side.
    pub fn receptive_half_width(&self) -> usize {
        let half = (self.kernel_size - 1) / 2;
        half * (self.stage1_dilations.iter().sum::<usize>() + self.stage2_dilations.iter().sum::<usize>())
    }
}

/// A convolution in the flat parameter vector: kernel `c_out × (k·c_in)`
/// stored row-major with column index `tap·c_in + channel`, then `c_out`
/// biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvLayer {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    pub fn end(&self) -> usize {
        self.b_off + self.c_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlock {
    pub conv: ConvLayer,
    pub pointwise: ConvLayer,
}

/// Parameter order: stage-1 input projection, stage-1 blocks, stage-1 head,
/// fusion, stage-2 blocks, stage-2 head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub e1_input: ConvLayer,
    pub e1_blocks: Vec<ResidualBlock>,
    pub e1_head: ConvLayer,
    pub fusion: ConvLayer,
    pub e2_blocks: Vec<ResidualBlock>,
    pub e2_head: ConvLayer,
    pub total: usize,
}

impl ParamLayout {
    fn new(arch: &RefinerArchitecture) -> Self {
        let c = arch.hidden_channels;
        let n = arch.in_channels;
        let mut off = 0usize;
        let mut layer = |c_in: usize, c_out: usize, kernel: usize, dilation: usize| {
            let l = ConvLayer {
                c_in,
                c_out,
                kernel,
                dilation,
                w_off: off,
                b_off: off + c_out * c_in * kernel,
            };
            off = l.end();
            l
        };
        let e1_input = layer(n, c, 1, 1);
        let e1_blocks = arch
            .stage1_dilations
            .iter()
            .map(|&d| ResidualBlock {
                conv: layer(c, c, arch.kernel_size, d),
                pointwise: layer(c, c, 1, 1),
            })
            .collect();
        let e1_head = layer(c, n, 1, 1);
        let fusion = layer(2 * n + c, c, 1, 1);
        let e2_blocks = arch
            .stage2_dilations
            .iter()
            .map(|&d| ResidualBlock {
                conv: layer(c, c, arch.kernel_size, d),
                pointwise: layer(c, c, 1, 1),
            })
            .collect();
        let e2_head = layer(c, n, 1, 1);
        ParamLayout {
            e1_input,
            e1_blocks,
            e1_head,
            fusion,
            e2_blocks,
            e2_head,
            total: off,
        }
    }

    pub fn layers(&self) -> Vec<ConvLayer> {
        let mut v = vec![self.e1_input];
        v.extend(self.e1_blocks.iter().flat_map(|b| [b.conv, b.pointwise]));
        v.push(self.e1_head);
        v.push(self.fusion);
        v.extend(self.e2_blocks.iter().flat_map(|b| [b.conv, b.pointwise]));
        v.push(self.e2_head);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerModel {
    pub architecture: RefinerArchitecture,
    pub weights: Vec<f64>,
}

impl RefinerModel {
    /// All weights and biases zero: the identity map.
    pub fn zeros(architecture: RefinerArchitecture) -> Result<Self> {
        architecture.validate()?;
        let n = architecture.parameter_count();
        Ok(RefinerModel {
            architecture,
            weights: vec![0.0; n],
        })
    }

    /// He-normal kernels, residual branches scaled by `1/√blocks`, zero
    /// biases and zero output heads, so the network starts as the identity.
    pub fn initialized(architecture: RefinerArchitecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(architecture)?;
        let layout = model.architecture.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (layout.e1_blocks.len() + layout.e2_blocks.len()) as f64;
        let mut fill = |w: &mut [f64], l: &ConvLayer, gain: f64| {
            let fan_in = (l.c_in * l.kernel) as f64;
            let n = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("positive std");
            for x in &mut w[l.w_off..l.w_off + l.weight_len()] {
                *x = n.sample(&mut rng);
            }
        };
        let w = &mut model.weights;
        fill(w, &layout.e1_input, 0.5);
        for b in &layout.e1_blocks {
            fill(w, &b.conv, 1.0);
            fill(w, &b.pointwise, 1.0 / blocks.sqrt());
        }
        fill(w, &layout.fusion, 0.5);
        for b in &layout.e2_blocks {
            fill(w, &b.conv, 1.0);
            fill(w, &b.pointwise, 1.0 / blocks.sqrt());
        }
        Ok(model)
    }

    /// Random values everywhere, heads and biases included (for tests).
    pub fn random(architecture: RefinerArchitecture, seed: u64, scale: f64) -> Result<Self> {
        let mut model = Self::zeros(architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        for x in &mut model.weights {
            *x = n.sample(&mut rng);
        }
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.weights.len() != self.architecture.parameter_count() {
            return Err(Error::invalid("weight count does not match the architecture"));
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let a = &self.architecture;
        w.write_all(MODEL_MAGIC)?;
        let mut header = vec![
            MODEL_VERSION,
            a.in_channels as u32,
            a.hidden_channels as u32,
            a.kernel_size as u32,
            a.activation.code(),
            a.stage1_dilations.len() as u32,
        ];
        header.extend(a.stage1_dilations.iter().map(|&d| d as u32));
        header.push(a.stage2_dilations.len() as u32);
        header.extend(a.stage2_dilations.iter().map(|&d| d as u32));
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for x in &self.weights {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::parse(path, 0, m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated model file"))?;
        if &magic != MODEL_MAGIC {
            return Err(bad("not a refiner model file (bad magic)"));
        }
        let mut u32s = |n: usize| -> Result<Vec<u32>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| bad("truncated model header"))?;
                out.push(u32::from_le_bytes(b));
            }
            Ok(out)
        };
        let head = u32s(6)?;
        if head[0] != MODEL_VERSION {
            return Err(bad(&format!("unsupported model version {}", head[0])));
        }
        let activation = Activation::from_code(head[4]).ok_or_else(|| bad("unknown activation"))?;
        let stage1: Vec<usize> = u32s(head[5] as usize)?.into_iter().map(|d| d as usize).collect();
        let n2 = u32s(1)?[0] as usize;
        let stage2: Vec<usize> = u32s(n2)?.into_iter().map(|d| d as usize).collect();
        let architecture = RefinerArchitecture {
            in_channels: head[1] as usize,
            hidden_channels: head[2] as usize,
            kernel_size: head[3] as usize,
            stage1_dilations: stage1,
            stage2_dilations: stage2,
            activation,
        };
        architecture.validate().map_err(|e| bad(&e.to_string()))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| bad("truncated model header"))?;
        let count = u64::from_le_bytes(b8) as usize;
        if count != architecture.parameter_count() {
            return Err(bad("parameter count does not match the architecture"));
        }
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8).map_err(|_| bad("truncated weights"))?;
            weights.push(f64::from_le_bytes(b8));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after weights"));
        }
        Ok(RefinerModel { architecture, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_is_closed_form() {
        for c in [2usize, 16, 64] {
            let arch = RefinerArchitecture::with_hidden(c);
            let block = c * c * 3 + c + c * c + c;
            let expected = (9 * c + c) + 5 * block + (9 * c + 9) + ((18 + c) * c + c) + 8 * block + (9 * c + 9);
            assert_eq!(arch.parameter_count(), expected);
            let layers = arch.layout().layers();
            assert_eq!(layers.last().unwrap().end(), expected);
            for pair in layers.windows(2) {
                assert_eq!(pair[0].end(), pair[1].w_off);
            }
        }
    }

    #[test]
    fn dilation_sets_are_enforced() {
        let mut arch = RefinerArchitecture::default();
        arch.stage2_dilations.pop();
        assert!(arch.validate().is_err());
        let even = RefinerArchitecture {
            kernel_size: 4,
            ..RefinerArchitecture::default()
        };
        assert!(even.validate().is_err());
        assert_eq!(RefinerArchitecture::default().receptive_half_width(), 31 + 255);
    }

    #[test]
    fn model_file_round_trip() {
        let model = RefinerModel::random(RefinerArchitecture::with_hidden(4), 3, 0.5).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MLRF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let back = RefinerModel::read_from(&mut &buf[..], Path::new("m.bin")).unwrap();
        assert_eq!(back, model);

        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(RefinerModel::read_from(&mut &corrupt[..], Path::new("m.bin")).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(RefinerModel::read_from(&mut &truncated[..], Path::new("m.bin")).is_err());
    }

    #[test]
    fn initialized_model_has_zero_heads() {
        let model = RefinerModel::initialized(RefinerArchitecture::with_hidden(8), 1).unwrap();
        let l = model.architecture.layout();
        for head in [l.e1_head, l.e2_head] {
            assert!(model.weights[head.w_off..head.end()].iter().all(|&x| x == 0.0));
        }
        assert!(model.weights.iter().any(|&x| x != 0.0));
    }
}
