use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub step: u64,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: ParamStore<f32> = params.iter().map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape()))).collect();
        Self {
            lr,
            beta1,
            beta2,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| invalid("adam", format!("no gradient for {name}")))?;
            let m = self.m.get_mut(name).ok_or_else(|| invalid("adam", format!("no moment for {name}")))?;
            let v = self.v.get_mut(name).ok_or_else(|| invalid("adam", format!("no moment for {name}")))?;
            if g.shape() != p.shape() {
                return Err(crate::error::mismatch("adam", p.shape(), g.shape()));
            }
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                pd[i] -= step_size * md[i] / ((vd[i] * inv_c2).sqrt() + ADAM_EPS as f32);
            }
        }
        Ok(())
    }
}
