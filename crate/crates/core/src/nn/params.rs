use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ArchitectureSpec, ConvGeometry, LayerShape, NnError, Real};

/// Weights and bias of one layer.
///
/// Dense weights are an `inputs × outputs` matrix in row-major order; conv
/// kernels are a `count × kh × kw × in_channels` stack, also row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Dense { inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T> },
    Conv { geometry: ConvGeometry, kernels: Vec<T>, bias: Vec<T> },
}

impl<T: Real> LayerParams<T> {
    fn zeros(shape: &LayerShape) -> Self {
        let (w, b) = shape.param_lens();
        match *shape {
            LayerShape::Dense { inputs, outputs, .. } => LayerParams::Dense {
                inputs,
                outputs,
                weights: vec![T::zero(); w],
                bias: vec![T::zero(); b],
            },
            LayerShape::Conv { geometry, .. } => LayerParams::Conv {
                geometry,
                kernels: vec![T::zero(); w],
                bias: vec![T::zero(); b],
            },
        }
    }

    pub fn weights(&self) -> &[T] {
        match self {
            LayerParams::Dense { weights, .. } => weights,
            LayerParams::Conv { kernels, .. } => kernels,
        }
    }

    pub fn bias(&self) -> &[T] {
        match self {
            LayerParams::Dense { bias, .. } | LayerParams::Conv { bias, .. } => bias,
        }
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [T], &mut [T]) {
        match self {
            LayerParams::Dense { weights, bias, .. } => (weights, bias),
            LayerParams::Conv { kernels, bias, .. } => (kernels, bias),
        }
    }
}

/// All parameters of a network, laid out according to its [`ArchitectureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    arch: ArchitectureSpec,
    layers: Vec<LayerParams<T>>,
    value_head: Option<LayerParams<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        let layers = arch.layers().iter().map(LayerParams::zeros).collect();
        let value_head = arch.has_value_head().then(|| {
            LayerParams::zeros(&LayerShape::Dense {
                inputs: arch.trunk_width(),
                outputs: 1,
                activation: super::Activation::Linear,
            })
        });
        Self { arch: arch.clone(), layers, value_head }
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn value_head(&self) -> Option<&LayerParams<T>> {
        self.value_head.as_ref()
    }

    /// Parameter blocks in storage order: each layer's weights then bias,
    /// followed by the value head's weights and bias.
    pub fn blocks(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.layers
            .iter()
            .chain(self.value_head.iter())
            .flat_map(|l| [l.weights(), l.bias()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [T]> + '_ {
        self.layers
            .iter_mut()
            .chain(self.value_head.iter_mut())
            .flat_map(|l| {
                let (w, b) = l.parts_mut();
                [w, b]
            })
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut LayerParams<T> {
        &mut self.layers[index]
    }

    pub(crate) fn value_head_mut(&mut self) -> Option<&mut LayerParams<T>> {
        self.value_head.as_mut()
    }

    pub fn param_count(&self) -> usize {
        self.blocks().map(<[T]>::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Reads parameter `index` in flattened block order.
    pub fn get_flat(&self, index: usize) -> Option<T> {
        let mut rest = index;
        for block in self.blocks() {
            if rest < block.len() {
                return Some(block[rest]);
            }
            rest -= block.len();
        }
        None
    }

    pub fn set_flat(&mut self, index: usize, value: T) -> bool {
        let mut rest = index;
        for block in self.blocks_mut() {
            if rest < block.len() {
                block[rest] = value;
                return true;
            }
            rest -= block.len();
        }
        false
    }

    /// Converts every parameter to another float type.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let mut out = NetworkParams::<U>::zeros(&self.arch);
        for (dst, src) in out.blocks_mut().zip(self.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }

    /// Fills the network from flat values in block order.
    pub fn from_flat(arch: &ArchitectureSpec, values: &[T]) -> Result<Self, NnError> {
        let mut out = Self::zeros(arch);
        let expected = out.param_count();
        if values.len() != expected {
            return Err(NnError::Shape { context: "flat parameter vector", expected, actual: values.len() });
        }
        let mut offset = 0;
        for block in out.blocks_mut() {
            block.copy_from_slice(&values[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(out)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.blocks().flat_map(|b| b.iter().copied()).collect()
    }
}

/// One gradient entry per parameter, shaped exactly like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T>(NetworkParams<T>);

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Self(NetworkParams::zeros(params.arch()))
    }

    pub fn from_params(values: NetworkParams<T>) -> Self {
        Self(values)
    }

    pub fn as_params(&self) -> &NetworkParams<T> {
        &self.0
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        self.0.arch()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.0.blocks()
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [T]> + '_ {
        self.0.blocks_mut()
    }

    pub(crate) fn inner_mut(&mut self) -> &mut NetworkParams<T> {
        &mut self.0
    }

    pub fn get_flat(&self, index: usize) -> Option<T> {
        self.0.get_flat(index)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.0.to_flat()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_zero()))
    }

    pub fn scale(&mut self, factor: T) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) -> Result<(), NnError> {
        if other.arch() != self.arch() {
            return Err(NnError::Usage("adding gradients of different architectures".into()));
        }
        for (dst, src) in self.0.blocks_mut().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
        }
        Ok(())
    }
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_params<T: Real>(arch: &ArchitectureSpec, seed: u64) -> NetworkParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(arch);
    let fan_ins: Vec<usize> = arch
        .layers()
        .iter()
        .map(LayerShape::fan_in)
        .chain(arch.has_value_head().then(|| arch.trunk_width()))
        .collect();
    for (layer, fan_in) in params.layers.iter_mut().chain(params.value_head.iter_mut()).zip(fan_ins) {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let (weights, _) = layer.parts_mut();
        for w in weights.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = T::lit(z * scale);
        }
    }
    params
}
