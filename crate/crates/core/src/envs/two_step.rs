use crate::envs::{agent_id_one_hot, Env, EnvSpec, StepResult};
use crate::error::{Error, Result};

const BRANCH_A: [[f64; 2]; 2] = [[7.0, 7.0], [7.0, 7.0]];
const BRANCH_B: [[f64; 2]; 2] = [[0.0, 1.0], [1.0, 8.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Start,
    A,
    B,
    Done,
}

/// Two-step game. Agent 0's first action picks branch A (0) or B (1);
/// the second step pays from the branch table.
#[derive(Clone, Debug)]
pub struct TwoStepGame {
    spec: EnvSpec,
    stage: Stage,
}

impl Default for TwoStepGame {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoStepGame {
    pub const OPTIMUM: f64 = 8.0;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                n_agents: 2,
                n_actions: 2,
                obs_dim: 5,
                state_dim: 3,
                horizon: 2,
                success: "return equals the optimum 8".into(),
            },
            stage: Stage::Start,
        }
    }

    fn stage_one_hot(&self) -> Vec<f64> {
        let idx = match self.stage {
            Stage::Start => 0,
            Stage::A => 1,
            Stage::B | Stage::Done => 2,
        };
        (0..3).map(|i| if i == idx { 1.0 } else { 0.0 }).collect()
    }

    fn observe(&self, reward: f64, terminated: bool) -> StepResult {
        let state = self.stage_one_hot();
        StepResult {
            observations: (0..2)
                .map(|id| state.iter().copied().chain(agent_id_one_hot(id, 2)).collect())
                .collect(),
            state,
            reward,
            terminated,
            truncated: false,
            success: terminated && reward == Self::OPTIMUM,
            alive: vec![true; 2],
            avail_actions: vec![vec![true; 2]; 2],
            health: None,
        }
    }
}

impl Env for TwoStepGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.stage = Stage::Start;
        self.observe(0.0, false)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if actions.len() != 2 {
            return Err(Error::Shape {
                op: "TwoStepGame::step",
                lhs: vec![2],
                rhs: vec![actions.len()],
            });
        }
        if let Some((agent, &a)) = actions.iter().enumerate().find(|(_, &a)| a > 1) {
            return Err(Error::InvalidAction { agent, action: a });
        }
        match self.stage {
            Stage::Start => {
                self.stage = if actions[0] == 0 { Stage::A } else { Stage::B };
                Ok(self.observe(0.0, false))
            }
            Stage::A | Stage::B => {
                let table = if self.stage == Stage::A { &BRANCH_A } else { &BRANCH_B };
                let r = table[actions[0]][actions[1]];
                self.stage = Stage::Done;
                Ok(self.observe(r, true))
            }
            Stage::Done => Err(Error::EpisodeOver),
        }
    }

    fn clone_box(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
