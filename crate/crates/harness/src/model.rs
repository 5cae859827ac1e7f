//! One type over the model families, so every command is backbone-agnostic.

use std::path::Path;

use ndarray::{Array2, ArrayD};
use pswm_core::model::{LossTerms, TeacherForced};
use pswm_core::substrate::checkpoint;
use pswm_core::{Batch, ImaginationResult, ParamStore, Rng, Rssm, S4wm, SampleMode, Tape, WorldModel, WorldModelConfig};

use crate::config::{Family, RunConfig};
use crate::Result;

pub enum AnyModel {
    Ssm(S4wm),
    Rssm(Rssm),
}

impl AnyModel {
    /// Fresh parameters from `cfg.seed`.
    pub fn build(cfg: &RunConfig, store: &mut ParamStore<f32>) -> Result<Self> {
        let mut rng = Rng::new(cfg.seed);
        Ok(match cfg.family {
            Family::S4wm | Family::S5wm => AnyModel::Ssm(S4wm::new(store, cfg.model.clone(), &mut rng)?),
            Family::Rssm => AnyModel::Rssm(Rssm::new(store, cfg.model.clone(), cfg.tbtt_k, &mut rng)?),
        })
    }

    /// Model with parameters (and optimizer state) read from `path`.
    pub fn load(cfg: &RunConfig, path: &Path) -> Result<(Self, ParamStore<f32>)> {
        let mut store = ParamStore::new();
        let model = Self::build(cfg, &mut store)?;
        checkpoint::load(path, &mut store)?;
        Ok((model, store))
    }
}

impl WorldModel<f32> for AnyModel {
    fn config(&self) -> &WorldModelConfig {
        match self {
            AnyModel::Ssm(m) => WorldModel::<f32>::config(m),
            AnyModel::Rssm(m) => WorldModel::<f32>::config(m),
        }
    }

    fn loss<'t>(
        &self,
        tape: &'t Tape<f32>,
        store: &ParamStore<f32>,
        batch: &Batch<f32>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> pswm_core::Result<LossTerms<'t, f32>> {
        match self {
            AnyModel::Ssm(m) => m.loss(tape, store, batch, mode, rng),
            AnyModel::Rssm(m) => m.loss(tape, store, batch, mode, rng),
        }
    }

    fn teacher_forced(
        &self,
        store: &ParamStore<f32>,
        batch: &Batch<f32>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> pswm_core::Result<TeacherForced<f32>> {
        match self {
            AnyModel::Ssm(m) => m.teacher_forced(store, batch, mode, rng),
            AnyModel::Rssm(m) => m.teacher_forced(store, batch, mode, rng),
        }
    }

    fn imagine(
        &self,
        store: &ParamStore<f32>,
        context_frames: &ArrayD<f32>,
        context_actions: &Array2<usize>,
        query_actions: &Array2<usize>,
        mode: SampleMode,
        rng: &mut Rng,
    ) -> pswm_core::Result<ImaginationResult<f32>> {
        match self {
            AnyModel::Ssm(m) => m.imagine(store, context_frames, context_actions, query_actions, mode, rng),
            AnyModel::Rssm(m) => m.imagine(store, context_frames, context_actions, query_actions, mode, rng),
        }
    }
}
