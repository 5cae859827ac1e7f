//! AdamW with global-norm clipping, and the warmup + cosine learning-rate schedule.

use ndarray::Zip;

use super::params::ParamStore;
use super::tape::Gradients;
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            clip_norm: Some(1000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Scales all gradients so that their global norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> (f64, bool) {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        let s: T = cast(max_norm / norm);
        for (_, g) in grads.params_mut() {
            g.mapv_inplace(|v| v * s);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// One decoupled-weight-decay Adam update over every trainable parameter that has a gradient.
pub fn adamw_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &mut Gradients<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<StepStats> {
    if !lr.is_finite() {
        return Err(Error::NonFiniteLr(lr));
    }
    let (grad_norm, clipped) = match cfg.clip_norm {
        Some(c) => clip_global_norm(grads, c),
        None => (grads.global_norm(), false),
    };
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2): (T, T) = (cast(cfg.beta1), cast(cfg.beta2));
    let (one_b1, one_b2): (T, T) = (cast(1.0 - cfg.beta1), cast(1.0 - cfg.beta2));
    let step_size: T = cast(lr / bc1);
    let inv_bc2_sqrt: T = cast(1.0 / bc2.sqrt());
    let eps: T = cast(cfg.eps);
    let decay: T = cast(1.0 - lr * cfg.weight_decay);
    for (id, g) in grads.params() {
        let p = store.get_mut(id);
        if !p.trainable {
            continue;
        }
        let apply_decay = p.decay && cfg.weight_decay != 0.0;
        let value = std::sync::Arc::make_mut(&mut p.value);
        Zip::from(value)
            .and(&mut p.m)
            .and(&mut p.v)
            .and(g)
            .for_each(|w, m, v, &g| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                if apply_decay {
                    *w = *w * decay;
                }
                *w = *w - step_size * *m / (v.sqrt() * inv_bc2_sqrt + eps);
            });
    }
    Ok(StepStats { grad_norm, clipped })
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, base_lr: f64, warmup_steps: u64) -> f64 {
    let warmup = warmup_steps.max(1);
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return base_lr;
    }
    let tau = ((step - warmup) as f64 / (total_steps - warmup) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * tau).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::tape::Tape;
    use ndarray::{arr1, ArrayD, IxDyn};

    fn scalar_store(x: f64) -> (ParamStore<f64>, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", ArrayD::from_elem(IxDyn(&[1]), x));
        (s, id)
    }

    fn grads_for(store: &ParamStore<f64>, id: crate::ParamId, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::default();
        grads.insert_param(id, ArrayD::from_elem(IxDyn(&[1]), g));
        let _ = store;
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_store(1.5);
        let mut g = grads_for(&s, id, 0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut s, &mut g, 1e-3, &cfg).unwrap();
        assert_eq!(s.value(id)[[0]], 1.5);
    }

    #[test]
    fn single_step_matches_hand_calculation() {
        let (mut s, id) = scalar_store(0.7);
        let mut g = grads_for(&s, id, 0.3);
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            clip_norm: None,
            ..Default::default()
        };
        let lr = 1e-2;
        adamw_step(&mut s, &mut g, lr, &cfg).unwrap();
        // m = 0.1*0.3, v = 0.001*0.09; mhat = 0.3, vhat = 0.09
        let decayed = 0.7 * (1.0 - lr * 0.01);
        let expected = decayed - lr * 0.3 / (0.09f64.sqrt() + 1e-8);
        assert!((s.value(id)[[0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn global_norm_clip_halves() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", ArrayD::zeros(IxDyn(&[2])));
        let mut g = Gradients::default();
        g.insert_param(a, arr1(&[1200.0, 1600.0]).into_dyn());
        let (norm, clipped) = clip_global_norm(&mut g, 1000.0);
        assert!((norm - 2000.0).abs() < 1e-9 && clipped);
        let ga: &ArrayD<f64> = g.param(a).unwrap();
        assert!((ga[[0]] - 600.0).abs() < 1e-9 && (ga[[1]] - 800.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_lr() {
        let (mut s, id) = scalar_store(1.0);
        let mut g = grads_for(&s, id, 1.0);
        assert!(adamw_step(&mut s, &mut g, f64::NAN, &AdamWConfig::default()).is_err());
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 100, 1e-3, 10), 0.0);
        assert!((lr_schedule(10, 100, 1e-3, 10) - 1e-3).abs() < 1e-15);
        let mid = (10 + 100) / 2;
        let tau = (mid - 10) as f64 / 90.0;
        let expected = 1e-3 * (1.0 + (std::f64::consts::PI * tau).cos()) / 2.0;
        assert!((lr_schedule(mid, 100, 1e-3, 10) - expected).abs() < 1e-15);
        assert!(lr_schedule(100, 100, 1e-3, 10).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let (mut s, id) = scalar_store(3.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..2000 {
            let tape = Tape::new();
            let w = tape.param(&s, id);
            let l = w.square().sum();
            let mut g = tape.backward(l).unwrap();
            adamw_step(&mut s, &mut g, 1e-2, &cfg).unwrap();
        }
        assert!(s.value(id)[[0]].abs() < 1e-2);
    }
}
