use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            m: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn update(&mut self, opt: &Adam, params: &mut ParamSet, grads: &[Vec<f32>]) {
        assert_eq!(grads.len(), params.tensors.len(), "one gradient per tensor");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::powf(opt.beta1, t as f32);
        let c2 = 1.0 - libm::powf(opt.beta2, t as f32);
        for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= opt.lr * mh / (libm::sqrtf(vh) + opt.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Shape;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.add_const("w", Shape::new(1, 3, 1, 1), 1.0);
        let mut st = AdamState::for_params(&p);
        st.update(&Adam::new(0.1), &mut p, &[vec![2.0, -3.0, 0.0]]);
        let d = &p.tensors[0].data;
        assert!((d[0] - 0.9).abs() < 1e-5);
        assert!((d[1] - 1.1).abs() < 1e-5);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = ParamSet::new();
        p.add_const("w", Shape::new(1, 1, 1, 1), 5.0);
        let mut st = AdamState::for_params(&p);
        for _ in 0..2000 {
            let g = 2.0 * (p.tensors[0].data[0] - 1.5);
            st.update(&Adam::new(0.05), &mut p, &[vec![g]]);
        }
        assert!((p.tensors[0].data[0] - 1.5).abs() < 1e-2);
    }
}
