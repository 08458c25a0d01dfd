//! The training loop: collect, store, sample, update, evaluate.

use std::collections::VecDeque;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, ParameterTree};
use crate::config::RunConfig;
use crate::envs::Env;
use crate::error::Result;
use crate::learner::{Learner, TrainStats};
use crate::model::{Dims, Model};
use crate::replay::{EpisodeBatch, ReplayBuffer};
use crate::rollout::{collect_episode, evaluate, EvalResult};

/// Losses averaged into `loss_ma`.
pub const LOSS_WINDOW: usize = 100;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub mean_return: f64,
    pub win_rate: f64,
    pub loss_ma: Option<f64>,
    pub epsilon: f64,
}

pub struct Trainer {
    cfg: RunConfig,
    env: Box<dyn Env>,
    eval_env: Box<dyn Env>,
    learner: Learner,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    losses: VecDeque<f64>,
    next_eval: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env.build()?;
        let eval_env = env.clone();
        let model = Model::new(cfg.algorithm, cfg.model.clone(), Dims::from(env.spec()));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let params = model.init_params(&mut rng)?;
        Ok(Self {
            learner: Learner::new(model, params, &cfg.train),
            buffer: ReplayBuffer::new(cfg.train.buffer_capacity),
            cfg: cfg.clone(),
            env,
            eval_env,
            rng,
            env_steps: 0,
            episodes: 0,
            losses: VecDeque::with_capacity(LOSS_WINDOW),
            next_eval: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.learner.model
    }

    pub fn params(&self) -> &ParameterTree {
        &self.learner.params
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.train.epsilon_at(self.env_steps)
    }

    pub fn done(&self) -> bool {
        self.env_steps >= self.cfg.train.total_steps
    }

    /// Collects one episode and, once the buffer holds a full batch, runs one
    /// optimizer step.
    pub fn step(&mut self) -> Result<Option<TrainStats>> {
        let eps = self.epsilon();
        let env_seed = self.rng.random::<u64>();
        let episode = collect_episode(
            self.env.as_mut(),
            &self.learner.model,
            &self.learner.params,
            eps,
            env_seed,
            &mut self.rng,
        )?;
        self.env_steps += episode.len as u64;
        self.episodes += 1;
        self.buffer.push(episode);
        let batch_size = self.cfg.train.batch_size;
        if self.buffer.len() < batch_size {
            return Ok(None);
        }
        let sample = self.buffer.sample(batch_size, &mut self.rng)?;
        let batch = EpisodeBatch::from_episodes(&sample)?;
        let stats = self.learner.train_step(&batch)?;
        if self.losses.len() == LOSS_WINDOW {
            self.losses.pop_front();
        }
        self.losses.push_back(stats.loss);
        Ok(Some(stats))
    }

    /// Greedy evaluation on held-out seeds; does not touch the training RNG.
    pub fn evaluate(&mut self) -> Result<EvalResult> {
        evaluate(
            self.eval_env.as_mut(),
            &self.learner.model,
            &self.learner.params,
            self.cfg.train.eval_episodes,
            self.cfg.train.seed,
        )
    }

    fn record(&mut self) -> Result<MetricRecord> {
        let eval = self.evaluate()?;
        let loss_ma = (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64);
        Ok(MetricRecord {
            step: self.env_steps,
            mean_return: eval.mean_return,
            win_rate: eval.win_rate,
            loss_ma,
            epsilon: self.epsilon(),
        })
    }

    /// Trains until `total_steps` or until `on_metric` breaks. Evaluates at
    /// step 0, after every `eval_period` environment steps and at the end.
    pub fn run(
        &mut self,
        mut on_metric: impl FnMut(&MetricRecord, &Trainer) -> ControlFlow<()>,
    ) -> Result<Vec<MetricRecord>> {
        let mut metrics = Vec::new();
        let mut last_recorded = None;
        loop {
            if self.env_steps >= self.next_eval || (self.done() && last_recorded != Some(self.env_steps)) {
                let rec = self.record()?;
                last_recorded = Some(rec.step);
                let flow = on_metric(&rec, self);
                metrics.push(rec);
                while self.next_eval <= self.env_steps {
                    self.next_eval += self.cfg.train.eval_period;
                }
                if flow.is_break() {
                    break;
                }
            }
            if self.done() {
                break;
            }
            self.step()?;
        }
        Ok(metrics)
    }

    /// Continues from saved parameters and optimizer state.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.learner.params.check_structure(&ckpt.params)?;
        self.learner.params.copy_from(&ckpt.params)?;
        self.learner.sync_target()?;
        self.learner.optimizer = ckpt.optimizer.clone();
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: self.cfg.to_toml_string(),
            params: self.learner.params.clone(),
            optimizer: self.learner.optimizer.clone(),
        }
    }
}

pub struct TrainOutcome {
    pub metrics: Vec<MetricRecord>,
    pub checkpoint: Checkpoint,
    pub env_steps: u64,
}

pub fn train(
    cfg: &RunConfig,
    on_metric: impl FnMut(&MetricRecord, &Trainer) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    let metrics = trainer.run(on_metric)?;
    Ok(TrainOutcome {
        metrics,
        checkpoint: trainer.checkpoint(),
        env_steps: trainer.env_steps(),
    })
}
