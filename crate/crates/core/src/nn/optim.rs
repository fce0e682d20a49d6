use super::{Gradients, NetworkParams, NnError, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// `w ← w + α·g`
    Plain,
    /// `c ← ρ·c + (1−ρ)·g²`, `w ← w + α·g / (√c + ε)`
    RmsProp { decay: f64, eps: f64 },
}

impl UpdateRule {
    pub fn rmsprop() -> Self {
        UpdateRule::RmsProp { decay: 0.99, eps: 1e-8 }
    }
}

/// Applies updates under a chosen rule, keeping any per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    rule: UpdateRule,
    cache: Option<Vec<Vec<T>>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(rule: UpdateRule) -> Self {
        Self { rule, cache: None }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    /// Moves `params` along `grads`. Nothing is modified if any gradient
    /// entry is non-finite or the shapes disagree.
    pub fn apply(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>, alpha: T) -> Result<(), NnError> {
        check_congruent(params, grads)?;
        match self.rule {
            UpdateRule::Plain => {
                for (w, g) in params.blocks_mut().zip(grads.blocks()) {
                    for (w, &g) in w.iter_mut().zip(g) {
                        *w += alpha * g;
                    }
                }
            }
            UpdateRule::RmsProp { decay, eps } => {
                let cache = self
                    .cache
                    .get_or_insert_with(|| grads.blocks().map(|b| vec![T::zero(); b.len()]).collect());
                let (rho, eps) = (T::lit(decay), T::lit(eps));
                for ((w, g), c) in params.blocks_mut().zip(grads.blocks()).zip(cache.iter_mut()) {
                    for ((w, &g), c) in w.iter_mut().zip(g).zip(c.iter_mut()) {
                        *c = rho * *c + (T::one() - rho) * g * g;
                        *w += alpha * g / (c.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_congruent<T: Real>(params: &NetworkParams<T>, grads: &Gradients<T>) -> Result<(), NnError> {
    if params.arch() != grads.arch() {
        return Err(NnError::Usage("gradients belong to a different architecture".into()));
    }
    for (i, block) in grads.blocks().enumerate() {
        if let Some(j) = block.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(format!("gradient block {i}, entry {j}")));
        }
    }
    Ok(())
}

/// Plain-mode update returning new parameters: `w + α·g`.
pub fn apply_update<T: Real>(params: &NetworkParams<T>, grads: &Gradients<T>, alpha: T) -> Result<NetworkParams<T>, NnError> {
    let mut out = params.clone();
    Optimizer::new(UpdateRule::Plain).apply(&mut out, grads, alpha)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, ArchitectureSpec};
    use super::*;

    fn single_weight(w: f64) -> NetworkParams<f64> {
        let arch = ArchitectureSpec::parse("1:1").unwrap();
        NetworkParams::from_flat(&arch, &[w, 0.0]).unwrap()
    }

    #[test]
    fn plain_step_arithmetic() {
        let p = single_weight(1.0);
        let g = Gradients::from_params(single_weight(0.5));
        let out = apply_update(&p, &g, 0.001).unwrap();
        assert!((out.get_flat(0).unwrap() - 1.0005).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        let arch = ArchitectureSpec::parse("6:5:3").unwrap();
        let p: NetworkParams<f32> = init_params(&arch, 11);
        let g = Gradients::zeros_like(&p);
        assert_eq!(apply_update(&p, &g, 0.01).unwrap(), p);
        let mut q = p.clone();
        Optimizer::new(UpdateRule::rmsprop()).apply(&mut q, &g, 0.01).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = single_weight(1.0);
        let g = Gradients::from_params(single_weight(f64::NAN));
        let before = p.clone();
        let err = Optimizer::new(UpdateRule::Plain).apply(&mut p, &g, 0.1).unwrap_err();
        assert!(matches!(err, NnError::NonFinite(_)));
        assert_eq!(p, before);
    }

    #[test]
    fn rmsprop_matches_closed_form_and_converges_to_sign_step() {
        let alpha = 0.001;
        let (decay, eps) = (0.99, 1e-8);
        for &g in &[0.5f64, -3.0, 1e-3] {
            let mut p = single_weight(0.0);
            let grads = Gradients::from_params(single_weight(g));
            let mut opt = Optimizer::new(UpdateRule::RmsProp { decay, eps });
            let mut prev = 0.0;
            let mut last_step = 0.0;
            for n in 1..=1000 {
                opt.apply(&mut p, &grads, alpha).unwrap();
                let w = p.get_flat(0).unwrap();
                last_step = w - prev;
                prev = w;
                // closed form: cache_n = g²(1 − ρⁿ)
                let cache = g * g * (1.0 - decay.powi(n));
                let expected = alpha * g / (cache.sqrt() + eps);
                assert!((last_step - expected).abs() <= 1e-9 * expected.abs().max(1e-12), "n={n}");
            }
            assert!((last_step - alpha * g.signum()).abs() < 0.01 * alpha, "g={g} step={last_step}");
        }
    }
}
