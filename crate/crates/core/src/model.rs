//! Network description, float weight container and complexity accounting.
//!
//! The network family is parameterized by `N`, the number of 3x3 layers:
//!
//! ```text
//! [2 -> 16] relu
//! (N - 3) x [16 -> 16] relu
//! [16 -> 14] relu
//! concat(cropped inputs (2), activation (14)) -> 16
//! [16 -> 1] clip
//! ```
//!
//! Every convolution is valid, so an input carrying a border of `N` samples
//! on each side produces an output of the unbordered size.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::codec::Reader;
use crate::error::{Error, FormatError, Result};

pub const INPUT_CHANNELS: usize = 2;
pub const MID_CHANNELS: usize = 16;
pub const PRECONCAT_CHANNELS: usize = 14;
pub const OUTPUT_CHANNELS: usize = 1;
pub const MIN_LAYERS: usize = 4;

/// Bytes per stored activation sample in the integer engine.
pub const ACTIVATION_BYTES: usize = 2;
/// Bytes per stored parameter in the integer engine.
pub const PARAMETER_BYTES: usize = 2;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"NNBB";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Clip to the sample range.
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    /// The layer consumes the concatenation of the cropped network inputs and
    /// the previous activation.
    pub takes_skip: bool,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels * 9 + self.out_channels
    }

    pub fn macs_per_sample(&self) -> usize {
        self.in_channels * self.out_channels * 9
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    pub fn new(n_layers: usize) -> Result<Self> {
        if n_layers < MIN_LAYERS {
            return Err(Error::Argument(format!(
                "network needs at least {MIN_LAYERS} layers, got {n_layers}"
            )));
        }
        let relu = |cin, cout| LayerSpec {
            in_channels: cin,
            out_channels: cout,
            activation: Activation::Relu,
            takes_skip: false,
        };
        let mut layers = Vec::with_capacity(n_layers);
        layers.push(relu(INPUT_CHANNELS, MID_CHANNELS));
        layers.extend((0..n_layers - 3).map(|_| relu(MID_CHANNELS, MID_CHANNELS)));
        layers.push(relu(MID_CHANNELS, PRECONCAT_CHANNELS));
        layers.push(LayerSpec {
            in_channels: INPUT_CHANNELS + PRECONCAT_CHANNELS,
            out_channels: OUTPUT_CHANNELS,
            activation: Activation::Clip,
            takes_skip: true,
        });
        Ok(Self { layers })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Samples of context required on each side of the output block.
    pub fn border(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Index of the layer whose output is concatenated with the inputs.
    pub fn preconcat_layer(&self) -> usize {
        self.layers.len() - 2
    }

    /// Crop applied to the network inputs before the concatenation.
    pub fn skip_margin(&self) -> usize {
        self.border() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Multiply-accumulates per output sample for a `block` x `block` output,
    /// counting every sample of every valid-convolution layer.
    pub fn mac_per_pixel(&self, block: usize) -> Result<f64> {
        check_block(block)?;
        let n = self.border();
        let total: usize = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                let side = block + 2 * (n - (k + 1));
                side * side * layer.macs_per_sample()
            })
            .sum();
        Ok(total as f64 / (block * block) as f64)
    }

    /// Per-sample cost once the border overhead is amortized away.
    pub fn interior_mac_per_pixel(&self) -> usize {
        self.layers.iter().map(LayerSpec::macs_per_sample).sum()
    }

    /// Bytes of the two ping-pong activation buffers, each holding the widest
    /// (first-layer, 16-channel) activation of a `block` x `block` output.
    pub fn peak_memory(&self, block: usize) -> Result<usize> {
        check_block(block)?;
        Ok(2 * self.activation_buffer_len(block, block) * ACTIVATION_BYTES)
    }

    /// Samples in one ping-pong buffer for an output of `height` x `width`.
    pub fn activation_buffer_len(&self, height: usize, width: usize) -> usize {
        let grow = 2 * (self.border() - 1);
        MID_CHANNELS * (height + grow) * (width + grow)
    }

    /// Parameter storage at 16 bits per value.
    pub fn parameter_memory(&self) -> usize {
        self.param_count() * PARAMETER_BYTES
    }

    pub fn complexity(&self, mac_block: usize, memory_block: usize) -> Result<ComplexityReport> {
        Ok(ComplexityReport {
            n_layers: self.n_layers(),
            param_count: self.param_count(),
            parameter_memory: self.parameter_memory(),
            mac_block,
            mac_per_pixel: self.mac_per_pixel(mac_block)?,
            memory_block,
            peak_memory: self.peak_memory(memory_block)?,
        })
    }
}

fn check_block(block: usize) -> Result<()> {
    if block < 4 {
        return Err(Error::Argument(format!("block size must be at least 4, got {block}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub n_layers: usize,
    pub param_count: usize,
    pub parameter_memory: usize,
    pub mac_block: usize,
    pub mac_per_pixel: f64,
    pub memory_block: usize,
    pub peak_memory: usize,
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers (N):             {}", self.n_layers)?;
        writeln!(f, "parameters:             {}", self.param_count)?;
        writeln!(f, "parameter memory:       {} B (16-bit)", self.parameter_memory)?;
        writeln!(
            f,
            "MAC/pixel @{}x{}:        {:.1} ({:.1} kMAC/pix)",
            self.mac_block,
            self.mac_block,
            self.mac_per_pixel,
            self.mac_per_pixel / 1000.0
        )?;
        write!(
            f,
            "peak memory @{}x{}:      {} B ({:.1} kB)",
            self.memory_block,
            self.memory_block,
            self.peak_memory,
            self.peak_memory as f64 / 1024.0
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][ky][kx]`
    pub kernels: Vec<f32>,
    pub biases: Vec<f32>,
}

impl LayerWeights {
    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernels: vec![0.0; spec.in_channels * spec.out_channels * 9],
            biases: vec![0.0; spec.out_channels],
        }
    }

    #[inline]
    pub fn tap(&self, out: usize, inp: usize, ky: usize, kx: usize) -> f32 {
        self.kernels[((out * self.in_channels + inp) * 3 + ky) * 3 + kx]
    }

    pub fn set_tap(&mut self, out: usize, inp: usize, ky: usize, kx: usize, v: f32) {
        self.kernels[((out * self.in_channels + inp) * 3 + ky) * 3 + kx] = v;
    }

    /// Kernels of one output channel, `[in][ky][kx]`.
    pub fn output_kernels(&self, out: usize) -> &[f32] {
        let n = self.in_channels * 9;
        &self.kernels[out * n..(out + 1) * n]
    }
}

/// Float parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    cfg: NetworkConfig,
    layers: Vec<LayerWeights>,
}

impl Weights {
    pub fn new(cfg: NetworkConfig, layers: Vec<LayerWeights>) -> Result<Self> {
        if layers.len() != cfg.n_layers() {
            return Err(Error::Shape(format!(
                "{} weight layers for a {}-layer network",
                layers.len(),
                cfg.n_layers()
            )));
        }
        for (k, (lw, spec)) in layers.iter().zip(cfg.layers()).enumerate() {
            if lw.in_channels != spec.in_channels
                || lw.out_channels != spec.out_channels
                || lw.kernels.len() != spec.in_channels * spec.out_channels * 9
                || lw.biases.len() != spec.out_channels
            {
                return Err(Error::Shape(format!(
                    "layer {k}: weights do not match {}->{} convolution",
                    spec.in_channels, spec.out_channels
                )));
            }
            if lw.kernels.iter().chain(&lw.biases).any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("layer {k}: non-finite weight")));
            }
        }
        Ok(Self { cfg, layers })
    }

    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let layers = cfg.layers().iter().map(LayerWeights::zeros).collect();
        Self { cfg: cfg.clone(), layers }
    }

    /// A network that reproduces the default average blend: the final layer
    /// weights the centre taps of both cropped inputs by one half and ignores
    /// the activation channels.
    pub fn average_blend(cfg: &NetworkConfig) -> Self {
        let mut w = Self::zeros(cfg);
        let last = w.layers.last_mut().expect("config has layers");
        last.set_tap(0, 0, 1, 1, 0.5);
        last.set_tap(0, 1, 1, 1, 0.5);
        w
    }

    /// Seeded random initialization: He-normal hidden layers with small
    /// biases, and a final layer that starts from the average blend plus a
    /// small random correction from the activation channels.
    pub fn random(cfg: &NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = Uniform::new(-0.05f32, 0.05).expect("valid range");
        let mut w = Self::average_blend(cfg);
        let n = w.layers.len();
        for (k, layer) in w.layers.iter_mut().enumerate() {
            let std = (2.0 / (9.0 * layer.in_channels as f32)).sqrt();
            if k + 1 < n {
                let dist = Normal::new(0.0f32, std).expect("valid std");
                layer.kernels.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                layer.biases.iter_mut().for_each(|v| *v = bias.sample(&mut rng));
            } else {
                let dist = Normal::new(0.0f32, 0.1 * std).expect("valid std");
                for inp in INPUT_CHANNELS..layer.in_channels {
                    for t in 0..9 {
                        layer.kernels[inp * 9 + t] = dist.sample(&mut rng);
                    }
                }
            }
        }
        w
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerWeights] {
        &mut self.layers
    }

    /// Serialize to the `NNBB` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.cfg.param_count() * 4);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.cfg.n_layers() as u16).to_le_bytes());
        for layer in &self.layers {
            for v in layer.kernels.iter().chain(&layer.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(WEIGHTS_MAGIC)?;
        r.version(WEIGHTS_VERSION)?;
        let n = r
            .u16()
            .ok_or_else(|| FormatError::Truncated { section: "layer count".into() })?;
        let cfg = NetworkConfig::new(n as usize)
            .map_err(|_| FormatError::InvalidValue(format!("layer count {n} below {MIN_LAYERS}")))?;
        let mut layers = Vec::with_capacity(cfg.n_layers());
        for (k, spec) in cfg.layers().iter().enumerate() {
            let kernels = r
                .f32s(spec.in_channels * spec.out_channels * 9)
                .ok_or(FormatError::TruncatedLayer { layer: k, part: "kernels" })?;
            let biases = r
                .f32s(spec.out_channels)
                .ok_or(FormatError::TruncatedLayer { layer: k, part: "biases" })?;
            layers.push(LayerWeights {
                in_channels: spec.in_channels,
                out_channels: spec.out_channels,
                kernels,
                biases,
            });
        }
        r.finish()?;
        Self::new(cfg, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_lists() {
        let six = NetworkConfig::new(6).unwrap();
        let dims: Vec<_> = six.layers().iter().map(|l| (l.in_channels, l.out_channels)).collect();
        assert_eq!(dims, vec![(2, 16), (16, 16), (16, 16), (16, 16), (16, 14), (16, 1)]);
        assert_eq!(six.border(), 6);
        assert!(six.layers()[5].takes_skip);
        assert_eq!(six.layers()[5].activation, Activation::Clip);
        assert!(six.layers()[..5].iter().all(|l| l.activation == Activation::Relu && !l.takes_skip));

        let five = NetworkConfig::new(5).unwrap();
        assert_eq!(five.n_layers(), 5);
        assert_eq!(five.layers().iter().filter(|l| l.in_channels == 16 && l.out_channels == 16).count(), 2);
        let four = NetworkConfig::new(4).unwrap();
        assert_eq!(four.layers().iter().filter(|l| l.in_channels == 16 && l.out_channels == 16).count(), 1);
        assert!(matches!(NetworkConfig::new(3), Err(Error::Argument(_))));
    }

    #[test]
    fn parameter_counts() {
        let count = |n| NetworkConfig::new(n).unwrap().param_count();
        assert_eq!(count(4), 4799);
        assert_eq!(count(5), 7119);
        assert_eq!(count(6), 9439);
        for n in 5..12 {
            assert_eq!(count(n) - count(n - 1), 2320);
        }
    }

    #[test]
    fn mac_accounting() {
        let six = NetworkConfig::new(6).unwrap();
        let five = NetworkConfig::new(5).unwrap();
        assert_eq!(six.mac_per_pixel(16).unwrap(), 16596.0);
        assert_eq!(five.mac_per_pixel(16).unwrap(), 11299.5);
        assert_eq!(six.interior_mac_per_pixel(), 9360);
        let huge = six.mac_per_pixel(1 << 14).unwrap();
        assert!((huge - 9360.0).abs() < 10.0);
        let mut prev = f64::INFINITY;
        for b in 4..200 {
            let m = six.mac_per_pixel(b).unwrap();
            assert!(m < prev);
            prev = m;
        }
        assert!(six.mac_per_pixel(3).is_err());
    }

    #[test]
    fn peak_memory_convention() {
        let six = NetworkConfig::new(6).unwrap();
        let five = NetworkConfig::new(5).unwrap();
        assert_eq!(six.peak_memory(32).unwrap(), 112896);
        assert_eq!(five.peak_memory(32).unwrap(), 102400);
        assert_eq!(six.peak_memory(16).unwrap(), 43264);
    }

    #[test]
    fn weights_validation() {
        let cfg = NetworkConfig::new(4).unwrap();
        let mut w = Weights::zeros(&cfg);
        w.layers[1].kernels[3] = f32::NAN;
        let layers = w.layers.clone();
        assert!(matches!(Weights::new(cfg.clone(), layers), Err(Error::Argument(_))));
        let short = Weights::zeros(&cfg).layers[..3].to_vec();
        assert!(matches!(Weights::new(cfg, short), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_file_round_trip() {
        let w = Weights::random(&NetworkConfig::new(5).unwrap(), 11);
        let bytes = w.to_bytes();
        assert_eq!(bytes.len(), 8 + 7119 * 4);
        let back = Weights::from_bytes(&bytes).unwrap();
        let bits = |w: &Weights| -> Vec<u32> {
            w.layers().iter().flat_map(|l| l.kernels.iter().chain(&l.biases)).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&w), bits(&back));
    }

    #[test]
    fn weight_file_errors() {
        let w = Weights::random(&NetworkConfig::new(5).unwrap(), 3);
        let mut bytes = w.to_bytes();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let err = Weights::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("NNBB"), "{err}");

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            Weights::from_bytes(&wrong_version),
            Err(Error::Format(FormatError::Version { found: 9, .. }))
        ));

        // cut inside layer 2's kernels: header 8 + layer0 304*4 + layer1 2320*4
        let cut = 8 + 304 * 4 + 2320 * 4 + 100;
        assert!(matches!(
            Weights::from_bytes(&bytes[..cut]),
            Err(Error::Format(FormatError::TruncatedLayer { layer: 2, part: "kernels" }))
        ));

        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(Weights::from_bytes(&bytes), Err(Error::Format(FormatError::Dimensions(_)))));
    }
}
