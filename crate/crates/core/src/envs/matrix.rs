use crate::envs::{agent_id_one_hot, Env, EnvSpec, StepResult};
use crate::error::{Error, Result};

/// Two-agent, one-shot game: reward is `payoff[u₁][u₂]`.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: EnvSpec,
    payoff: Vec<Vec<f64>>,
    best: f64,
    done: bool,
}

impl MatrixGame {
    pub fn new(payoff: Vec<Vec<f64>>) -> Result<Self> {
        let k = payoff.len();
        if k == 0 || payoff.iter().any(|r| r.len() != k) {
            return Err(Error::config("env.payoff", "payoff must be a non-empty square table"));
        }
        if payoff.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("env.payoff", "payoff entries must be finite"));
        }
        let best = payoff.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            spec: EnvSpec {
                n_agents: 2,
                n_actions: k,
                obs_dim: 3,
                state_dim: 1,
                horizon: 1,
                success: "reward equals the payoff maximum".into(),
            },
            payoff,
            best,
            done: false,
        })
    }

    pub fn coordination() -> Self {
        Self::new(vec![vec![10.0, 0.0], vec![0.0, 10.0]]).expect("valid table")
    }

    fn observe(&self, reward: f64, terminated: bool) -> StepResult {
        let k = self.spec.n_actions;
        StepResult {
            observations: (0..2)
                .map(|id| std::iter::once(1.0).chain(agent_id_one_hot(id, 2)).collect())
                .collect(),
            state: vec![1.0],
            reward,
            terminated,
            truncated: false,
            success: terminated && reward == self.best,
            alive: vec![true; 2],
            avail_actions: vec![vec![true; k]; 2],
            health: None,
        }
    }
}

impl Env for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.done = false;
        self.observe(0.0, false)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        for (agent, &a) in actions.iter().enumerate() {
            if a >= self.spec.n_actions {
                return Err(Error::InvalidAction { agent, action: a });
            }
        }
        if actions.len() != 2 {
            return Err(Error::Shape {
                op: "MatrixGame::step",
                lhs: vec![2],
                rhs: vec![actions.len()],
            });
        }
        self.done = true;
        Ok(self.observe(self.payoff[actions[0]][actions[1]], true))
    }

    fn clone_box(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordination_rewards() {
        let mut env = MatrixGame::coordination();
        env.reset(0);
        let r = env.step(&[1, 1]).unwrap();
        assert_eq!(r.reward, 10.0);
        assert!(r.terminated && r.success);
        assert!(matches!(env.step(&[0, 0]), Err(Error::EpisodeOver)));
        env.reset(0);
        let r = env.step(&[0, 1]).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(!r.success);
    }

    #[test]
    fn shapes_match_spec() {
        let mut env = MatrixGame::new(vec![vec![1.0; 3]; 3]).unwrap();
        let r = env.reset(0);
        let spec = env.spec().clone();
        assert_eq!(r.observations.len(), spec.n_agents);
        assert!(r.observations.iter().all(|o| o.len() == spec.obs_dim));
        assert_eq!(r.state.len(), spec.state_dim);
        assert!(r.avail_actions.iter().all(|a| a.len() == 3));
    }

    #[test]
    fn constant_payoff_always_succeeds() {
        let mut env = MatrixGame::new(vec![vec![3.0; 2]; 2]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                env.reset(0);
                assert!(env.step(&[a, b]).unwrap().success);
            }
        }
    }

    #[test]
    fn ragged_payoff_rejected() {
        assert!(MatrixGame::new(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
