//! Architecture descriptors such as `6400:200:3` or
//! `6400:conv(16,8x8,s4):conv(32,4x4,s2,p1):256:3:value`.
//!
//! Grammar, tokens separated by `:`:
//!
//! * first token: input size, either `N` or `HxW` (single channel). Conv layers
//!   need a spatial input, so a bare `N` must be a perfect square when a conv
//!   layer follows.
//! * `N` : dense layer with N outputs.
//! * `conv(C,KHxKW[,sS][,pP])` : C kernels, stride S (default 1), zero padding P
//!   (default 0).
//! * any layer token may carry an activation suffix `/relu`, `/sigmoid`,
//!   `/softmax` or `/linear`. Hidden layers default to ReLU. The output layer
//!   defaults to Sigmoid, or Softmax when a value head is present.
//! * trailing `value` : adds a linear scalar value head fed by the same
//!   features as the output layer.

use std::fmt;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Linear,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Linear => "linear",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "softmax" => Some(Activation::Softmax),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Geometry of one convolution layer. Tensors are channel-major (`C×H×W`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.kernel_height * self.kernel_width * self.in_channels
    }
}

/// `floor((input + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerShape {
    Dense { inputs: usize, outputs: usize, activation: Activation },
    Conv { geometry: ConvGeometry, activation: Activation },
}

impl LayerShape {
    pub fn input_len(&self) -> usize {
        match self {
            LayerShape::Dense { inputs, .. } => *inputs,
            LayerShape::Conv { geometry, .. } => geometry.input_len(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            LayerShape::Dense { outputs, .. } => *outputs,
            LayerShape::Conv { geometry, .. } => geometry.output_len(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerShape::Dense { activation, .. } | LayerShape::Conv { activation, .. } => *activation,
        }
    }

    /// Weight count followed by bias count.
    pub fn param_lens(&self) -> (usize, usize) {
        match self {
            LayerShape::Dense { inputs, outputs, .. } => (inputs * outputs, *outputs),
            LayerShape::Conv { geometry, .. } => (geometry.kernel_len(), geometry.out_channels),
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            LayerShape::Dense { inputs, .. } => *inputs,
            LayerShape::Conv { geometry, .. } => {
                geometry.kernel_height * geometry.kernel_width * geometry.in_channels
            }
        }
    }
}

/// A parsed, shape-checked network layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    input_height: usize,
    input_width: usize,
    layers: Vec<LayerShape>,
    value_head: bool,
}

impl ArchitectureSpec {
    pub fn parse(descriptor: &str) -> Result<Self, NnError> {
        let tokens: Vec<&str> = descriptor.split(':').map(str::trim).collect();
        let bad = |token: &str, reason: &str| NnError::Spec {
            token: token.to_string(),
            reason: reason.to_string(),
        };
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(bad(descriptor, "empty token"));
        }
        let (tokens, value_head) = match tokens.split_last() {
            Some((last, rest)) if last.eq_ignore_ascii_case("value") => (rest.to_vec(), true),
            _ => (tokens, false),
        };
        if tokens.len() < 2 {
            return Err(bad(descriptor, "need an input size and at least one layer"));
        }

        let has_conv = tokens[1..].iter().any(|t| t.starts_with("conv("));
        let (input_height, input_width) = parse_input(tokens[0], has_conv).map_err(|r| bad(tokens[0], &r))?;

        let last = tokens.len() - 2;
        let mut layers = Vec::with_capacity(tokens.len() - 1);
        // (channels, height, width) while still spatial, else flat length
        let mut spatial = Some((1usize, input_height, input_width));
        let mut flat = input_height * input_width;
        for (i, token) in tokens[1..].iter().enumerate() {
            let (body, act) = match token.split_once('/') {
                Some((b, a)) => {
                    let act = Activation::from_tag(a).ok_or_else(|| bad(token, "unknown activation"))?;
                    (b, Some(act))
                }
                None => (*token, None),
            };
            let default_act = if i == last {
                if value_head {
                    Activation::Softmax
                } else {
                    Activation::Sigmoid
                }
            } else {
                Activation::Relu
            };
            let activation = act.unwrap_or(default_act);
            if activation == Activation::Softmax && i != last {
                return Err(bad(token, "softmax is only allowed on the output layer"));
            }
            if let Some(inner) = body.strip_prefix("conv(").and_then(|b| b.strip_suffix(')')) {
                let (c, h, w) = spatial.ok_or_else(|| bad(token, "conv layer after a dense layer"))?;
                if activation == Activation::Softmax {
                    return Err(bad(token, "softmax on a conv layer"));
                }
                let geometry = parse_conv(inner, c, h, w).map_err(|r| bad(token, &r))?;
                spatial = Some((geometry.out_channels, geometry.out_height, geometry.out_width));
                flat = geometry.output_len();
                layers.push(LayerShape::Conv { geometry, activation });
            } else {
                let outputs: usize = body.parse().map_err(|_| bad(token, "expected a layer width or conv(...)"))?;
                if outputs == 0 {
                    return Err(bad(token, "layer width must be positive"));
                }
                layers.push(LayerShape::Dense { inputs: flat, outputs, activation });
                spatial = None;
                flat = outputs;
            }
        }
        if matches!(layers.last(), Some(LayerShape::Conv { .. })) {
            return Err(bad(tokens[tokens.len() - 1], "the output layer must be dense"));
        }
        if value_head && layers.len() < 2 {
            return Err(bad(descriptor, "a value head needs at least one hidden layer"));
        }
        Ok(Self { input_height, input_width, layers, value_head })
    }

    /// Canonical descriptor with every activation spelled out; parsing it
    /// yields an identical spec.
    pub fn descriptor(&self) -> String {
        let mut parts = vec![if self.layers.iter().any(|l| matches!(l, LayerShape::Conv { .. })) {
            format!("{}x{}", self.input_height, self.input_width)
        } else {
            self.input_len().to_string()
        }];
        for layer in &self.layers {
            let body = match layer {
                LayerShape::Dense { outputs, .. } => outputs.to_string(),
                LayerShape::Conv { geometry: g, .. } => format!(
                    "conv({},{}x{},s{},p{})",
                    g.out_channels, g.kernel_height, g.kernel_width, g.stride, g.padding
                ),
            };
            parts.push(format!("{body}/{}", layer.activation().tag()));
        }
        if self.value_head {
            parts.push("value".into());
        }
        parts.join(":")
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.input_height * self.input_width
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.input_height, self.input_width)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, LayerShape::output_len)
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().map_or(Activation::Linear, LayerShape::activation)
    }

    pub fn has_value_head(&self) -> bool {
        self.value_head
    }

    /// Width of the features shared by the output layer and the value head.
    pub fn trunk_width(&self) -> usize {
        self.layers[self.layers.len() - 1].input_len()
    }

    /// Σ (weights + biases), including the value head.
    pub fn param_count(&self) -> usize {
        let body: usize = self.layers.iter().map(|l| {
            let (w, b) = l.param_lens();
            w + b
        }).sum();
        body + if self.value_head { self.trunk_width() + 1 } else { 0 }
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

impl std::str::FromStr for ArchitectureSpec {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

fn parse_input(token: &str, needs_spatial: bool) -> Result<(usize, usize), String> {
    if let Some((h, w)) = token.split_once(['x', 'X']) {
        let h: usize = h.parse().map_err(|_| "bad input height".to_string())?;
        let w: usize = w.parse().map_err(|_| "bad input width".to_string())?;
        if h == 0 || w == 0 {
            return Err("input dimensions must be positive".into());
        }
        return Ok((h, w));
    }
    let n: usize = token.parse().map_err(|_| "expected input size".to_string())?;
    if n == 0 {
        return Err("input size must be positive".into());
    }
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        Ok((side, side))
    } else if needs_spatial {
        Err("conv layers need a square input or an explicit HxW".into())
    } else {
        Ok((1, n))
    }
}

fn parse_conv(inner: &str, in_channels: usize, in_height: usize, in_width: usize) -> Result<ConvGeometry, String> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() < 2 {
        return Err("conv needs a kernel count and a kernel size".into());
    }
    let out_channels: usize = parts[0].parse().map_err(|_| "bad kernel count".to_string())?;
    let (kh, kw) = parts[1].split_once(['x', 'X']).ok_or("kernel size must look like KHxKW")?;
    let kernel_height: usize = kh.parse().map_err(|_| "bad kernel height".to_string())?;
    let kernel_width: usize = kw.parse().map_err(|_| "bad kernel width".to_string())?;
    let (mut stride, mut padding) = (1, 0);
    for extra in &parts[2..] {
        if let Some(s) = extra.strip_prefix('s') {
            stride = s.parse().map_err(|_| "bad stride".to_string())?;
        } else if let Some(p) = extra.strip_prefix('p') {
            padding = p.parse().map_err(|_| "bad padding".to_string())?;
        } else {
            return Err(format!("unknown conv option `{extra}`"));
        }
    }
    if out_channels == 0 || kernel_height == 0 || kernel_width == 0 || stride == 0 {
        return Err("kernel count, kernel size and stride must be positive".into());
    }
    let out_height = conv_output_size(in_height, kernel_height, stride, padding).ok_or("kernel taller than input")?;
    let out_width = conv_output_size(in_width, kernel_width, stride, padding).ok_or("kernel wider than input")?;
    Ok(ConvGeometry {
        in_channels,
        in_height,
        in_width,
        out_channels,
        kernel_height,
        kernel_width,
        stride,
        padding,
        out_height,
        out_width,
    })
}
