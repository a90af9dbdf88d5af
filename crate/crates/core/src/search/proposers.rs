use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Proposal, Proposer, ProposerError, RunLog};
use crate::config::{diff_configs, ArchConfig, ConfigMutation, HpConfig, NasSpace, SearchConstraint};

/// Independent uniform samples from a NAS space, expressed as the diff from the
/// current config. Hyperparameters never move.
#[derive(Debug, Clone)]
pub struct RandomNasProposer {
    space: NasSpace,
    seed: u64,
    rng: ChaCha8Rng,
}

pub fn random_nas_proposer(seed: u64, space: NasSpace) -> RandomNasProposer {
    RandomNasProposer { space, seed, rng: ChaCha8Rng::seed_from_u64(seed) }
}

impl Proposer for RandomNasProposer {
    fn propose(
        &mut self,
        _history: &RunLog,
        current: (&ArchConfig, &HpConfig),
        _constraint: &SearchConstraint,
    ) -> Result<Proposal, ProposerError> {
        let sample = self.space.sample(current.0, &mut self.rng);
        let m = diff_configs(current, (&sample, current.1)).with_rationale("random architecture sample");
        Ok(m.into())
    }

    fn descriptor(&self) -> String {
        format!("random_nas:seed={}", self.seed)
    }
}

/// Replays a fixed list of mutations, then proposes no-ops.
#[derive(Debug, Clone)]
pub struct ScriptedProposer {
    script: Vec<ConfigMutation>,
    next: usize,
}

pub fn scripted_proposer(script: Vec<ConfigMutation>) -> ScriptedProposer {
    ScriptedProposer { script, next: 0 }
}

impl Proposer for ScriptedProposer {
    fn propose(
        &mut self,
        _history: &RunLog,
        _current: (&ArchConfig, &HpConfig),
        _constraint: &SearchConstraint,
    ) -> Result<Proposal, ProposerError> {
        let m = self.script.get(self.next).cloned().unwrap_or_else(|| ConfigMutation::noop("script exhausted"));
        self.next += 1;
        Ok(m.into())
    }

    fn descriptor(&self) -> String {
        format!("scripted:{}", self.script.len())
    }
}
