//! Dual-stream navigation network built from scratch: a tactical stream
//! over the sensory window, a strategic stream over the memory map, and a
//! shallow head producing softmax likelihoods over {N, W, S, E}.

mod layers;
mod network;
mod persist;
mod train;

pub use layers::{Conv3x3, Dense};
pub use network::{cross_entropy, memory_ones, softmax_rows, Batch, Layers, NetworkParams, NetworkShape, ACTIONS};
pub use persist::{load_params, load_params_expecting, read_params, save_params, write_params};
pub use train::{
    accuracy, cross_validate, fit, train_step, CvReport, EpochLog, FitReport, TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, ActionSet, MemoryMap, SensoryMap};

/// Softmax-normalised likelihoods over (N, W, S, E).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionScores(pub [f64; 4]);

impl ActionScores {
    pub fn get(&self, a: Action) -> f64 {
        self.0[a.index()]
    }

    pub fn uniform() -> Self {
        ActionScores([0.25; 4])
    }
}

/// Scores for one (S, M) pair.
pub fn forward(params: &NetworkParams, sensory: &SensoryMap, memory: &MemoryMap) -> Result<ActionScores> {
    params.check_inputs(sensory.side(), memory.width(), memory.height())?;
    let p = params.predict(&Batch::single(sensory, memory));
    Ok(ActionScores([p[[0, 0]], p[[0, 1]], p[[0, 2]], p[[0, 3]]]))
}

/// Highest-scoring legal action; exact ties go to the earlier of N, W, S, E.
pub fn select_action(scores: &ActionScores, legal: ActionSet) -> Result<Action> {
    let mut best: Option<Action> = None;
    for a in legal.iter() {
        if best.is_none_or(|b| scores.get(a) > scores.get(b)) {
            best = Some(a);
        }
    }
    best.ok_or_else(|| Error::Contract("no legal action to select".into()))
}

/// Index of the highest entry in a row, ties to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{EpisodeConfig, EpisodeState, GridPos};

    fn all() -> ActionSet {
        ActionSet::FULL
    }

    #[test]
    fn select_examples() {
        let s = ActionScores([0.1, 0.2, 0.3, 0.4]);
        assert_eq!(select_action(&s, all()).unwrap(), Action::E);
        let legal: ActionSet = [Action::N, Action::W].into_iter().collect();
        assert_eq!(select_action(&s, legal).unwrap(), Action::W);
        assert_eq!(select_action(&ActionScores::uniform(), all()).unwrap(), Action::N);
        assert!(matches!(select_action(&s, ActionSet::EMPTY), Err(Error::Contract(_))));
    }

    fn scene() -> (EpisodeState, MemoryMap) {
        let cfg = EpisodeConfig::default();
        let s = EpisodeState::with_targets(&cfg, GridPos::new(3, 4), &[GridPos::new(4, 5), GridPos::new(12, 2)]).unwrap();
        let mut m = MemoryMap::for_config(&cfg);
        m.update(&s, &s.sense()).unwrap();
        (s, m)
    }

    #[test]
    fn zero_output_layer_gives_uniform_scores() {
        let (s, m) = scene();
        let mut p = NetworkParams::new(NetworkShape::for_grid(20, 20, 5), 1).unwrap();
        let out = p.weights.head.last_mut().unwrap();
        out.weight.fill(0.0);
        out.bias.fill(0.0);
        let v = forward(&p, &s.sense(), &m).unwrap();
        for x in v.0 {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_normalised_and_checks_shape() {
        let (s, m) = scene();
        let p = NetworkParams::new(NetworkShape::for_grid(20, 20, 5), 9).unwrap();
        let v = forward(&p, &s.sense(), &m).unwrap();
        assert!((v.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.0.iter().all(|x| *x > 0.0 && *x < 1.0));
        let small = NetworkParams::new(NetworkShape::for_grid(10, 10, 5), 9).unwrap();
        assert!(matches!(forward(&small, &s.sense(), &m), Err(Error::Contract(_))));
    }
}
