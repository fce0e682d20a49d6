//! Central-difference verification of [`backward`](super::backward).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward, ArchitectureSpec, Gradients, NetworkParams, NnError};

/// Step used for central differences in double precision.
pub const FD_EPSILON: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so that near-zero gradients are compared in absolute terms. Central
/// differences at `FD_EPSILON` on an O(1) loss resolve about 1e-11, so a
/// 1e-6 relative bound cannot be met below roughly 1e-5; the floor keeps the
/// bound at 1e-10 absolute there.
pub const REL_FLOOR: f64 = 1e-4;

/// Scalar loss used to drive the check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    /// `Σ_k (y_k − t_k)²` against a random one-hot target, plus
    /// `(V − r)²` when the net has a value head.
    Squared,
    /// `−c·log y_a` for a random action `a` and weight `c`, plus `(V − r)²`
    /// when the net has a value head.
    LogLikelihood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index (block order) of the worst parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub param_count: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares an analytic gradient against central differences of `loss` for
/// every parameter.
pub fn check_gradients<F>(params: &NetworkParams<f64>, analytic: &Gradients<f64>, mut loss: F) -> GradCheckReport
where
    F: FnMut(&NetworkParams<f64>) -> f64,
{
    let mut probe = params.clone();
    let count = params.param_count();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, param_count: count };
    for index in 0..count {
        let w = params.get_flat(index).expect("index in range");
        probe.set_flat(index, w + FD_EPSILON);
        let plus = loss(&probe);
        probe.set_flat(index, w - FD_EPSILON);
        let minus = loss(&probe);
        probe.set_flat(index, w);
        let numeric = (plus - minus) / (2.0 * FD_EPSILON);
        let a = analytic.get_flat(index).expect("shape-congruent");
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = index;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}

struct Problem {
    input: Vec<f64>,
    target: Vec<f64>,
    action: usize,
    weight: f64,
    value_target: f64,
}

impl Problem {
    fn random(arch: &ArchitectureSpec, rng: &mut ChaCha8Rng) -> Self {
        let input = (0..arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action = rng.random_range(0..arch.output_len());
        let mut target = vec![0.0; arch.output_len()];
        target[action] = 1.0;
        Self { input, target, action, weight: rng.random_range(-2.0..2.0), value_target: rng.random_range(-1.0..1.0) }
    }

    fn loss(&self, tag: LossTag, params: &NetworkParams<f64>) -> f64 {
        let trace = forward(params, &self.input).expect("input sized from the spec");
        let y = trace.output();
        let main = match tag {
            LossTag::Squared => y.iter().zip(&self.target).map(|(y, t)| (y - t).powi(2)).sum(),
            LossTag::LogLikelihood => -self.weight * y[self.action].ln(),
        };
        main + trace.value_output.map_or(0.0, |v| (v - self.value_target).powi(2))
    }

    fn analytic(&self, tag: LossTag, params: &NetworkParams<f64>) -> Result<Gradients<f64>, NnError> {
        let trace = forward(params, &self.input)?;
        let y = trace.output();
        let dy: Vec<f64> = match tag {
            LossTag::Squared => y.iter().zip(&self.target).map(|(y, t)| 2.0 * (y - t)).collect(),
            LossTag::LogLikelihood => {
                let mut g = vec![0.0; y.len()];
                g[self.action] = -self.weight / y[self.action];
                g
            }
        };
        let dv = trace.value_output.map(|v| 2.0 * (v - self.value_target));
        backward(params, &trace, &dy, dv)
    }
}

/// Builds a random double-precision network and input for `arch` and checks
/// every parameter gradient.
pub fn gradient_check(arch: &ArchitectureSpec, tag: LossTag, seed: u64) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: NetworkParams<f64> = super::init_params(arch, seed);
    // non-zero biases so every bias path is exercised
    for block in params.blocks_mut() {
        if block.iter().all(|v| *v == 0.0) {
            block.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
    }
    let problem = Problem::random(arch, &mut rng);
    let analytic = problem.analytic(tag, &params)?;
    Ok(check_gradients(&params, &analytic, |p| problem.loss(tag, p)))
}
