use super::{conv, Activation, Gradients, LayerParams, NetworkParams, NnError, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    /// Pre-activation values.
    pub pre: Vec<T>,
    /// Post-activation values.
    pub post: Vec<T>,
}

/// Everything computed by one forward pass, retained for backpropagation
/// and introspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub layers: Vec<LayerTrace<T>>,
    pub value_output: Option<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Activations of the output layer (`y_k`).
    pub fn output(&self) -> &[T] {
        &self.layers.last().expect("networks have at least one layer").post
    }

    /// Activations of the first hidden layer (`h_j`).
    pub fn first_hidden(&self) -> &[T] {
        &self.layers[0].post
    }

    fn layer_input(&self, index: usize) -> &[T] {
        if index == 0 {
            &self.input
        } else {
            &self.layers[index - 1].post
        }
    }
}

fn activate<T: Real>(act: Activation, pre: &[T], post: &mut [T]) {
    match act {
        Activation::Relu => {
            for (p, &z) in post.iter_mut().zip(pre) {
                *p = if z > T::zero() { z } else { T::zero() };
            }
        }
        Activation::Sigmoid => {
            for (p, &z) in post.iter_mut().zip(pre) {
                *p = T::one() / (T::one() + (-z).exp());
            }
        }
        Activation::Linear => post.copy_from_slice(pre),
        Activation::Softmax => {
            let max = pre.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (p, &z) in post.iter_mut().zip(pre) {
                *p = (z - max).exp();
                sum += *p;
            }
            post.iter_mut().for_each(|p| *p = *p / sum);
        }
    }
}

/// Turns `d loss / d post` into `d loss / d pre` in place.
fn activation_backward<T: Real>(act: Activation, pre: &[T], post: &[T], grad: &mut [T]) {
    match act {
        Activation::Relu => {
            for (g, &z) in grad.iter_mut().zip(pre) {
                if z <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &y) in grad.iter_mut().zip(post) {
                *g *= y * (T::one() - y);
            }
        }
        Activation::Linear => {}
        Activation::Softmax => {
            let dot: T = grad.iter().zip(post).map(|(&g, &y)| g * y).sum();
            for (g, &y) in grad.iter_mut().zip(post) {
                *g = y * (*g - dot);
            }
        }
    }
}

/// `out[j] = bias[j] + Σ_i x[i]·W[i][j]`; zero inputs are skipped, which
/// makes sparse frame differences cheap.
fn dense_forward<T: Real>(weights: &[T], bias: &[T], outputs: usize, input: &[T], out: &mut [T]) {
    out.copy_from_slice(bias);
    for (i, &x) in input.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        let row = &weights[i * outputs..(i + 1) * outputs];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += x * w;
        }
    }
}

fn dense_backward<T: Real>(
    weights: &[T],
    outputs: usize,
    input: &[T],
    dz: &[T],
    dweights: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    for (b, &d) in dbias.iter_mut().zip(dz) {
        *b += d;
    }
    for (i, &x) in input.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        let row = &mut dweights[i * outputs..(i + 1) * outputs];
        for (w, &d) in row.iter_mut().zip(dz) {
            *w += x * d;
        }
    }
    if let Some(dx) = dx {
        for (i, g) in dx.iter_mut().enumerate() {
            let row = &weights[i * outputs..(i + 1) * outputs];
            *g = row.iter().zip(dz).map(|(&w, &d)| w * d).sum();
        }
    }
}

/// Runs the network on one flattened input, keeping every intermediate.
pub fn forward<T: Real>(params: &NetworkParams<T>, input: &[T]) -> Result<ForwardTrace<T>, NnError> {
    let expected = params.arch().input_len();
    if input.len() != expected {
        return Err(NnError::Shape { context: "network input", expected, actual: input.len() });
    }
    let shapes = params.arch().layers();
    let mut trace = ForwardTrace { input: input.to_vec(), layers: Vec::with_capacity(shapes.len()), value_output: None };
    for (index, (shape, layer)) in shapes.iter().zip(params.layers()).enumerate() {
        let x = trace.layer_input(index);
        let mut pre = vec![T::zero(); shape.output_len()];
        match layer {
            LayerParams::Dense { outputs, weights, bias, .. } => dense_forward(weights, bias, *outputs, x, &mut pre),
            LayerParams::Conv { geometry, kernels, bias } => conv::forward(geometry, kernels, bias, x, &mut pre),
        }
        let mut post = vec![T::zero(); pre.len()];
        activate(shape.activation(), &pre, &mut post);
        trace.layers.push(LayerTrace { pre, post });
    }
    if let Some(head) = params.value_head() {
        let features = trace.layer_input(shapes.len() - 1);
        let mut v = [T::zero()];
        dense_forward(head.weights(), head.bias(), 1, features, &mut v);
        trace.value_output = Some(v[0]);
    }
    Ok(trace)
}

/// Reverse-mode gradients of a scalar loss given its partials with respect
/// to the output activations (`output_grad`) and, for actor-critic nets, the
/// value output (`value_grad`).
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    output_grad: &[T],
    value_grad: Option<T>,
) -> Result<Gradients<T>, NnError> {
    let mut grads = Gradients::zeros_like(params);
    backward_into(params, trace, output_grad, value_grad, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into an existing accumulator.
pub fn backward_into<T: Real>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    output_grad: &[T],
    value_grad: Option<T>,
    grads: &mut Gradients<T>,
) -> Result<(), NnError> {
    let arch = params.arch();
    if grads.arch() != arch {
        return Err(NnError::Usage("gradient accumulator has a different architecture".into()));
    }
    let shapes = arch.layers();
    if trace.layers.len() != shapes.len()
        || trace.input.len() != arch.input_len()
        || trace.layers.iter().zip(shapes).any(|(t, s)| t.pre.len() != s.output_len() || t.post.len() != s.output_len())
    {
        return Err(NnError::Usage("trace was not produced by this architecture".into()));
    }
    if output_grad.len() != arch.output_len() {
        return Err(NnError::Shape { context: "output gradient", expected: arch.output_len(), actual: output_grad.len() });
    }
    if value_grad.is_some() && params.value_head().is_none() {
        return Err(NnError::Usage("value gradient supplied for a network without a value head".into()));
    }

    let last = shapes.len() - 1;
    let mut upstream = output_grad.to_vec();
    for index in (0..=last).rev() {
        let layer_trace = &trace.layers[index];
        activation_backward(shapes[index].activation(), &layer_trace.pre, &layer_trace.post, &mut upstream);
        let dz = upstream;
        let x = trace.layer_input(index);
        let mut dx = (index > 0).then(|| vec![T::zero(); x.len()]);
        let layer = &params.layers()[index];
        let (dw, db) = grads.inner_mut().layer_mut(index).parts_mut();
        match layer {
            LayerParams::Dense { outputs, weights, .. } => {
                dense_backward(weights, *outputs, x, &dz, dw, db, dx.as_deref_mut());
            }
            LayerParams::Conv { geometry, kernels, .. } => {
                conv::backward(geometry, kernels, x, &dz, dw, db, dx.as_deref_mut());
            }
        }
        if index == last {
            if let (Some(dv), Some(head)) = (value_grad, params.value_head()) {
                let (dhw, dhb) = grads.inner_mut().value_head_mut().expect("shape-congruent").parts_mut();
                dense_backward(head.weights(), 1, x, &[dv], dhw, dhb, None);
                if let Some(dx) = dx.as_deref_mut() {
                    for (g, &w) in dx.iter_mut().zip(head.weights()) {
                        *g += w * dv;
                    }
                }
            }
        }
        match dx {
            Some(dx) => upstream = dx,
            None => break,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, ArchitectureSpec};
    use super::*;

    #[test]
    fn zero_input_gives_half_sigmoid() {
        let arch = ArchitectureSpec::parse("16:8:3").unwrap();
        let p: NetworkParams<f64> = init_params(&arch, 4);
        let t = forward(&p, &[0.0; 16]).unwrap();
        assert!(t.first_hidden().iter().all(|&h| h == 0.0));
        assert!(t.output().iter().all(|&y| y == 0.5));
    }

    #[test]
    fn toy_net_hand_computation() {
        let arch = ArchitectureSpec::parse("1:1:1").unwrap();
        let p = NetworkParams::from_flat(&arch, &[1.0f64, 0.0, 1.0, 0.0]).unwrap();
        let t = forward(&p, &[2.0]).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((t.output()[0] - expected).abs() < 1e-15);
        assert!((t.output()[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn conv_feature_map_size() {
        let arch = ArchitectureSpec::parse("6400:conv(16,8x8,s4):3").unwrap();
        let p: NetworkParams<f32> = init_params(&arch, 0);
        let t = forward(&p, &vec![0.5; 6400]).unwrap();
        assert_eq!(t.layers[0].post.len(), 19 * 19 * 16);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let arch = ArchitectureSpec::parse("5:7:3:value").unwrap();
        let p: NetworkParams<f32> = init_params(&arch, 2);
        let t = forward(&p, &[1.0, -2.0, 0.5, 3.0, 0.0]).unwrap();
        let sum: f32 = t.output().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(t.output().iter().all(|&y| y > 0.0));
        assert!(t.value_output.unwrap().is_finite());
    }

    #[test]
    fn wrong_input_length_is_a_shape_error() {
        let arch = ArchitectureSpec::parse("4:2:3").unwrap();
        let p: NetworkParams<f32> = init_params(&arch, 0);
        assert_eq!(
            forward(&p, &[0.0; 5]).unwrap_err(),
            NnError::Shape { context: "network input", expected: 4, actual: 5 }
        );
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let arch = ArchitectureSpec::parse("8x8:conv(2,3x3,s2,p1):5:3:value").unwrap();
        let p: NetworkParams<f64> = init_params(&arch, 5);
        let t = forward(&p, &[0.3; 64]).unwrap();
        let g = backward(&p, &t, &[0.0; 3], Some(0.0)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn dead_relu_unit_gets_no_incoming_gradient() {
        let arch = ArchitectureSpec::parse("3:2:3").unwrap();
        // hidden unit 0 has strictly negative pre-activation for a positive input
        let mut p: NetworkParams<f64> = init_params(&arch, 1);
        for i in 0..3 {
            p.set_flat(i * 2, -1.0);
        }
        let t = forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert!(t.layers[0].pre[0] < 0.0);
        let g = backward(&p, &t, &[1.0, -1.0, 0.5], None).unwrap();
        for i in 0..3 {
            assert_eq!(g.get_flat(i * 2), Some(0.0));
        }
        assert_eq!(g.get_flat(6), Some(0.0)); // bias of unit 0
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let a = ArchitectureSpec::parse("4:2:3").unwrap();
        let b = ArchitectureSpec::parse("4:3:3").unwrap();
        let pa: NetworkParams<f64> = init_params(&a, 0);
        let pb: NetworkParams<f64> = init_params(&b, 0);
        let t = forward(&pb, &[1.0; 4]).unwrap();
        assert!(matches!(backward(&pa, &t, &[1.0; 3], None), Err(NnError::Usage(_))));
    }

    #[test]
    fn forward_is_pure() {
        let arch = ArchitectureSpec::parse("10:6:3").unwrap();
        let p: NetworkParams<f32> = init_params(&arch, 8);
        let x: Vec<f32> = (0..10).map(|i| i as f32 * 0.1 - 0.4).collect();
        assert_eq!(forward(&p, &x).unwrap(), forward(&p, &x).unwrap());
    }
}
