use crate::error::{Error, Result};
use crate::net::model::Gradients;
use crate::net::params::Params;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(p: &Params) -> Self {
        OptimizerState { m: vec![0.0; p.len()], v: vec![0.0; p.len()], step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(p: &mut Params, g: &Gradients, s: &mut OptimizerState, lr: f64) -> Result<()> {
    if g.data.len() != p.len() || s.m.len() != p.len() || s.v.len() != p.len() {
        return Err(Error::Config(format!(
            "shape mismatch: params {}, grads {}, moments {}/{}",
            p.len(),
            g.data.len(),
            s.m.len(),
            s.v.len()
        )));
    }
    s.step += 1;
    let t = s.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((w, &gr), m), v) in p.data.iter_mut().zip(&g.data).zip(s.m.iter_mut()).zip(s.v.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * gr;
        *v = BETA2 * *v + (1.0 - BETA2) * gr * gr;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *w -= lr * mhat / (vhat.sqrt() + EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::config::ModelConfig;

    fn params() -> Params {
        let c = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 8, max_seq: 5, vocab: 4, v_epi: 2, dim_in: 4 };
        Params::init(&c, 1).unwrap()
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = params();
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let g = Gradients::zeros_like(&p);
        adam_step(&mut p, &g, &mut s, 1e-2).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params();
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let mut g = Gradients::zeros_like(&p);
        g.data[3] = 0.37;
        g.data[5] = -2.5;
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut s, lr).unwrap();
        // mhat = g, vhat = g^2 after bias correction.
        let d3 = before.data[3] - p.data[3];
        let d5 = before.data[5] - p.data[5];
        assert!((d3 - lr * 0.37 / (0.37 + EPS)).abs() < 1e-15);
        assert!((d5 + lr * 2.5 / (2.5 + EPS)).abs() < 1e-15);
        assert!((d3 - lr).abs() < 1e-10);
    }

    #[test]
    fn deterministic() {
        let p0 = params();
        let mut g = Gradients::zeros_like(&p0);
        g.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sin());
        let run = || {
            let mut p = p0.clone();
            let mut s = OptimizerState::new(&p);
            for _ in 0..3 {
                adam_step(&mut p, &g, &mut s, 1e-2).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut p = params();
        let mut s = OptimizerState::new(&p);
        let g = Gradients { data: vec![0.0; 3] };
        assert!(adam_step(&mut p, &g, &mut s, 1e-3).is_err());
    }
}
