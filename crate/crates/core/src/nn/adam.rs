use crate::matrix::Matrix;
use crate::nn::params::{GradStore, ParamStore};

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || -> Vec<Matrix> {
            store
                .iter()
                .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.get_mut(id).value.data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Matrix::from_vec(1, 2, vec![v, -v]).unwrap()).unwrap();
        s
    }

    fn grads_of(s: &ParamStore, g: [f64; 2]) -> GradStore {
        let mut gs = GradStore::zeros_like(s);
        let id = s.by_name("p").unwrap();
        gs.get_mut(id).data_mut().copy_from_slice(&g);
        gs
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = one_param(0.3);
        let before = s.fingerprint();
        let mut opt = Adam::new(&s, 1e-3);
        let g = GradStore::zeros_like(&s);
        opt.step(&mut s, &g);
        assert_eq!(before, s.fingerprint());
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut s = one_param(0.0);
        let mut opt = Adam::new(&s, 1e-2);
        let g = grads_of(&s, [3.0, -0.5]);
        opt.step(&mut s, &g);
        let p = s.get(s.by_name("p").unwrap()).value.data().to_vec();
        assert!((p[0] + 1e-2).abs() < 1e-6);
        assert!((p[1] - 1e-2).abs() < 1e-6);
    }

    #[test]
    fn three_steps_match_scalar_recurrence() {
        let gs = [0.7, -0.2, 1.5];
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (0.25f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = one_param(0.25);
        let mut opt = Adam::new(&s, lr);
        for g in gs {
            let gr = grads_of(&s, [g, 0.0]);
            opt.step(&mut s, &gr);
        }
        let got = s.get(s.by_name("p").unwrap()).value.data()[0];
        assert!((got - x).abs() < 1e-15, "{got} vs {x}");
        assert_eq!(opt.steps(), 3);
    }
}
