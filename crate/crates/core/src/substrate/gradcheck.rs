//! Central finite-difference checks of tape gradients (f64 only).

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;
use crate::error::Result;
use crate::substrate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Relative error with an absolute floor so that gradients which are zero up to
/// round-off do not dominate.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Picks `count` random (parameter, flat index) pairs among trainable parameters.
pub fn sample_entries(store: &ParamStore<f64>, count: usize, rng: &mut Rng) -> Vec<(ParamId, usize)> {
    let trainable: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable && !p.value.is_empty()).map(|(id, _)| id).collect();
    (0..count)
        .map(|_| {
            let id = trainable[rng.below(trainable.len())];
            (id, rng.below(store.value(id).len()))
        })
        .collect()
}

/// Compares `grads` against `(f(w+h) - f(w-h)) / 2h` at each listed entry.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    grads: &Gradients<f64>,
    entries: &[(ParamId, usize)],
    h: f64,
    floor: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let mut report = GradCheckReport::default();
    for &(id, idx) in entries {
        let orig = store.value(id).as_slice_memory_order().expect("contiguous")[idx];
        let set = |s: &mut ParamStore<f64>, v: f64| {
            s.value_mut(id).as_slice_memory_order_mut().expect("contiguous")[idx] = v;
        };
        set(store, orig + h);
        let plus = loss_fn(store)?;
        set(store, orig - h);
        let minus = loss_fn(store)?;
        set(store, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads
            .param(id)
            .map(|g| g.as_slice_memory_order().expect("contiguous")[idx])
            .unwrap_or(0.0);
        report.entries.push(GradCheckEntry {
            param: store.name(id).to_string(),
            index: idx,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric, floor),
        });
    }
    Ok(report)
}
