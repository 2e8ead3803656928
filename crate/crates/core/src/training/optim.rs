use crate::model::{Gradients, Model, ParamGroup};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        let shapes: Vec<usize> = Gradients::zeros_like(model).tensors().iter().map(|t| t.len()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter whose group passes `trainable`.
    pub fn step(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        learning_rate: f64,
        trainable: impl Fn(ParamGroup) -> bool,
    ) {
        self.steps += 1;
        let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let tensors = grads.tensors();
        let mut idx = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        model.for_each_param_mut(|group, params| {
            let g = tensors[idx];
            if trainable(group) {
                let (m, v) = (&mut first[idx], &mut second[idx]);
                for i in 0..params.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    params[i] -= learning_rate * mh / (vh.sqrt() + eps);
                }
            }
            idx += 1;
        });
    }
}
