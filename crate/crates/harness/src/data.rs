//! Episodes held in memory as bytes and turned into float batches on demand.

use std::path::Path;

use ndarray::{s, Array2, ArrayD, IxDyn};
use pswm_core::Batch;
use pswm_envs::{Dataset, EnvKind, Episode, Split};

use crate::{HarnessError, Result};

#[derive(Debug, Clone)]
pub struct EpisodeSet {
    pub kind: EnvKind,
    pub frame_size: usize,
    pub context_len: usize,
    pub steps: usize,
    pub episodes: Vec<Episode>,
}

/// Context frames `(B, C+1, H, W, 3)`, context actions `(B, C)`, query actions
/// `(B, Q)` and query frames `(B, Q, H, W, 3)`.
#[derive(Debug, Clone)]
pub struct ContextQuery {
    pub context_frames: ArrayD<f32>,
    pub context_actions: Array2<usize>,
    pub query_actions: Array2<usize>,
    pub query_frames: ArrayD<f32>,
}

impl EpisodeSet {
    pub fn from_episodes(episodes: Vec<Episode>) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| HarnessError::Data("no episodes".into()))?;
        let (kind, frame_size, context_len, steps) = (first.kind, first.frame_size, first.context_len, first.steps());
        if let Some(e) = episodes
            .iter()
            .find(|e| e.kind != kind || e.frame_size != frame_size || e.context_len != context_len || e.steps() != steps)
        {
            return Err(HarnessError::Data(format!("episode {} does not match the others", e.seed)));
        }
        Ok(Self { kind, frame_size, context_len, steps, episodes })
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let mut ds = Dataset::open(path)?;
        Self::from_episodes(ds.load(split)?)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn query_len(&self) -> usize {
        self.steps - self.context_len
    }

    pub fn subset(&self, n: usize) -> Self {
        Self { episodes: self.episodes[..n.min(self.len())].to_vec(), ..self.clone() }
    }

    fn frames(&self, idx: &[usize], from: usize, to: usize) -> ArrayD<f32> {
        let s = self.frame_size;
        let per = s * s * 3;
        let mut out = Vec::with_capacity(idx.len() * (to - from) * per);
        for &i in idx {
            let e = &self.episodes[i];
            out.extend(e.frames[from * per..to * per].iter().map(|&b| f32::from(b) / 255.0));
        }
        ArrayD::from_shape_vec(IxDyn(&[idx.len(), to - from, s, s, 3]), out).expect("frame layout")
    }

    fn actions(&self, idx: &[usize]) -> Array2<usize> {
        Array2::from_shape_fn((idx.len(), self.steps), |(b, t)| usize::from(self.episodes[idx[b]].actions[t]))
    }

    /// Whole episodes.
    pub fn batch(&self, idx: &[usize]) -> Batch<f32> {
        let rewards = Array2::from_shape_fn((idx.len(), self.steps), |(b, t)| self.episodes[idx[b]].rewards[t]);
        Batch { frames: self.frames(idx, 0, self.steps + 1), actions: self.actions(idx), rewards: Some(rewards) }
    }

    pub fn context_query(&self, idx: &[usize]) -> ContextQuery {
        let c = self.context_len;
        let actions = self.actions(idx);
        ContextQuery {
            context_frames: self.frames(idx, 0, c + 1),
            context_actions: actions.slice(s![.., ..c]).to_owned(),
            query_actions: actions.slice(s![.., c..]).to_owned(),
            query_frames: self.frames(idx, c + 1, self.steps + 1),
        }
    }

    /// Steps whose reward prediction is scored: the terminal step for
    /// Distracting Memory, every step otherwise.
    pub fn scored_steps(&self) -> Vec<usize> {
        match self.kind {
            EnvKind::DistractingMemory { .. } => vec![self.steps - 1],
            EnvKind::MultiDoorsKeys { .. } => (0..self.steps).collect(),
        }
    }
}
