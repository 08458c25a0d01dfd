//! Fixtures shared by the benchmarks.

use mgan_core::envs::{SkirmishConfig, SkirmishGrid};
use mgan_core::replay::{Episode, EpisodeBatch};
use mgan_core::rollout::collect_episode;
use mgan_core::{Algorithm, Dims, Env, Model, ModelConfig, ParameterTree, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A default-size model on the skirmish grid and a batch of random episodes.
pub fn skirmish_fixture(algorithm: Algorithm, batch: usize) -> Result<(Model, ParameterTree, EpisodeBatch)> {
    let mut env = SkirmishGrid::new(SkirmishConfig::default())?;
    let model = Model::new(algorithm, ModelConfig::default(), Dims::from(env.spec()));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = model.init_params(&mut rng)?;
    let episodes = (0..batch as u64)
        .map(|seed| collect_episode(&mut env, &model, &params, 1.0, seed, &mut rng))
        .collect::<Result<Vec<Episode>>>()?;
    let refs: Vec<&Episode> = episodes.iter().collect();
    Ok((model, params, EpisodeBatch::from_episodes(&refs)?))
}
