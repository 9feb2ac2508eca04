//! Adam with per-parameter first/second moment estimates.

use crate::net::{Gradients, Mlp};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *param -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        };
        for (li, w) in net.weights.iter_mut().enumerate() {
            let gw = grads.d_weights[li].as_slice();
            let mw = self.m.d_weights[li].as_mut_slice();
            let vw = self.v.d_weights[li].as_mut_slice();
            for (idx, p) in w.as_mut_slice().iter_mut().enumerate() {
                update(p, gw[idx], &mut mw[idx], &mut vw[idx]);
            }
        }
        for (li, b) in net.biases.iter_mut().enumerate() {
            let gb = &grads.d_biases[li];
            let mb = &mut self.m.d_biases[li];
            let vb = &mut self.v.d_biases[li];
            for (idx, p) in b.iter_mut().enumerate() {
                update(p, gb[idx], &mut mb[idx], &mut vb[idx]);
            }
        }
    }
}
