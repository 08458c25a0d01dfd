#![allow(dead_code)]

use mgan_core::envs::{SkirmishConfig, SkirmishGrid};
use mgan_core::replay::{Episode, EpisodeBatch};
use mgan_core::rollout::collect_episode;
use mgan_core::{Algorithm, Dims, Env, Model, ModelConfig, ParameterTree, RealArray, Result, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, SymmetricEigen};

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> RealArray {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    RealArray::matrix(rows, cols, data).unwrap()
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between tape gradients and central differences
/// for the listed `(name, index)` entries.
pub fn fd_check(
    tree: &ParameterTree,
    picks: &[(String, usize)],
    f: impl Fn(&mut Tape, &ParameterTree) -> Result<Var>,
) -> f64 {
    let mut tape = Tape::new();
    let out = f(&mut tape, tree).unwrap();
    let grads = tape.backward(out, tree).unwrap();
    let eval = |t: &ParameterTree| {
        let mut tape = Tape::frozen();
        let v = f(&mut tape, t).unwrap();
        tape.value(v).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (name, i) in picks {
        let mut plus = tree.clone();
        plus.value_mut(name).unwrap().data_mut()[*i] += FD_EPS;
        let mut minus = tree.clone();
        minus.value_mut(name).unwrap().data_mut()[*i] -= FD_EPS;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
        let analytic = grads.get(name).unwrap().data()[*i];
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

/// `count` random `(name, index)` pairs drawn across all entries.
pub fn random_picks<R: Rng>(tree: &ParameterTree, count: usize, rng: &mut R) -> Vec<(String, usize)> {
    let entries: Vec<(String, usize)> = tree.iter().map(|(n, e)| (n.to_string(), e.value.len())).collect();
    (0..count)
        .map(|_| {
            let (name, len) = &entries[rng.random_range(0..entries.len())];
            (name.clone(), rng.random_range(0..*len))
        })
        .collect()
}

/// Every entry of every parameter.
pub fn all_picks(tree: &ParameterTree) -> Vec<(String, usize)> {
    tree.iter()
        .flat_map(|(n, e)| (0..e.value.len()).map(move |i| (n.to_string(), i)))
        .collect()
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        graphs: 2,
        agent_hidden: 8,
        rnn_hidden: 6,
        emb_dim: 5,
        qmix_embed: 4,
    }
}

/// A small skirmish where agents die mid-episode.
pub fn small_skirmish() -> SkirmishGrid {
    SkirmishGrid::new(SkirmishConfig {
        width: 5,
        height: 4,
        n_allies: 3,
        n_enemies: 2,
        ally_hp: 2.0,
        enemy_hp: 2.0,
        horizon: 8,
        ..SkirmishConfig::default()
    })
    .unwrap()
}

/// Model, parameters and a batch of random-policy episodes.
pub fn random_batch(
    env: &mut dyn Env,
    algorithm: Algorithm,
    cfg: ModelConfig,
    episodes: usize,
    seed: u64,
) -> (Model, ParameterTree, EpisodeBatch) {
    let model = Model::new(algorithm, cfg, Dims::from(env.spec()));
    let mut r = rng(seed);
    let params = model.init_params(&mut r).unwrap();
    let eps: Vec<Episode> = (0..episodes)
        .map(|k| collect_episode(env, &model, &params, 1.0, seed * 1000 + k as u64, &mut r).unwrap())
        .collect();
    let refs: Vec<&Episode> = eps.iter().collect();
    (model, params, EpisodeBatch::from_episodes(&refs).unwrap())
}

/// Random MGAN or QMIX mixing problem for one timestep.
pub struct MixInstance {
    pub algorithm: Algorithm,
    pub graphs: usize,
    pub params: ParameterTree,
    pub features: RealArray,
    pub state: Vec<f64>,
    pub alive: Vec<bool>,
}

impl MixInstance {
    pub fn random<R: Rng>(algorithm: Algorithm, n: usize, rng: &mut R) -> Self {
        let obs_dim = rng.random_range(2..6);
        let state_dim = rng.random_range(2..6);
        let cfg = ModelConfig {
            graphs: rng.random_range(1..5),
            agent_hidden: 4,
            rnn_hidden: 4,
            emb_dim: rng.random_range(2..7),
            qmix_embed: rng.random_range(2..7),
        };
        let dims = Dims {
            n_agents: n,
            n_actions: 2,
            obs_dim,
            state_dim,
        };
        let model = Model::new(algorithm, cfg.clone(), dims);
        let mut params = model.init_params(rng).unwrap();
        // spread weights beyond the init range
        for (_, e) in params.iter_mut() {
            e.value.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        }
        let mut alive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let keep = rng.random_range(0..n);
        alive[keep] = true;
        Self {
            algorithm,
            graphs: cfg.graphs,
            params,
            features: random_matrix(rng, n, obs_dim, 2.0),
            state: (0..state_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            alive,
        }
    }

    pub fn q_tot(&self, chosen_q: &[f64]) -> f64 {
        let n = chosen_q.len();
        let mut tape = Tape::frozen();
        let q = tape.constant(RealArray::matrix(1, n, chosen_q.to_vec()).unwrap()).unwrap();
        let s = tape
            .constant(RealArray::matrix(1, self.state.len(), self.state.clone()).unwrap())
            .unwrap();
        let v = match self.algorithm {
            Algorithm::Mgan => {
                let x = tape.constant(self.features.clone()).unwrap();
                let alive = RealArray::matrix(1, n, self.alive.iter().map(|&a| a as u8 as f64).collect()).unwrap();
                mgan_core::mixer::mgan_mix(&mut tape, &self.params, self.graphs, q, x, s, &alive).unwrap()
            }
            Algorithm::Qmix => mgan_core::mixer::qmix_mix(&mut tape, &self.params, q, s).unwrap(),
            Algorithm::Vdn => mgan_core::mixer::vdn_mix(&mut tape, q).unwrap(),
        };
        tape.value(v).data()[0]
    }

    /// Central-difference `∂Q_tot/∂Q_a` for every agent.
    pub fn q_slopes(&self, chosen_q: &[f64]) -> Vec<f64> {
        (0..chosen_q.len())
            .map(|a| {
                let mut up = chosen_q.to_vec();
                up[a] += FD_EPS;
                let mut down = chosen_q.to_vec();
                down[a] -= FD_EPS;
                (self.q_tot(&up) - self.q_tot(&down)) / (2.0 * FD_EPS)
            })
            .collect()
    }

    /// `(Q_tot at per-agent greedy actions, exhaustive joint maximum)` for
    /// per-agent utility tables `q [n][|U|]`.
    pub fn igm_gap(&self, q: &[Vec<f64>]) -> (f64, f64) {
        let greedy: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let n = q.len();
        let u = q[0].len();
        let mut best = f64::NEG_INFINITY;
        for joint in 0..u.pow(n as u32) {
            let mut code = joint;
            let chosen: Vec<f64> = (0..n)
                .map(|a| {
                    let act = code % u;
                    code /= u;
                    q[a][act]
                })
                .collect();
            best = best.max(self.q_tot(&chosen));
        }
        (self.q_tot(&greedy), best)
    }
}

/// Anisotropic cloud: independent axes with distinct scales, then rotated
/// by a random orthogonal matrix.
pub fn anisotropic(seed: u64, m: usize, scales: &[f64]) -> RealArray {
    let mut r = rng(seed);
    let d = scales.len();
    let q = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0)).qr().q();
    let z = DMatrix::from_fn(m, d, |_, j| r.random_range(-1.0..1.0) * scales[j]);
    let x = z * q.transpose();
    RealArray::matrix(m, d, (0..m).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| x[(i, j)]).collect())
        .unwrap()
}

/// Top-two eigenvectors of the sample covariance, strongest first.
pub fn oracle(x: &RealArray) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (m, d) = (x.rows(), x.cols());
    let mat = DMatrix::from_row_slice(m, d, x.data());
    let mean = mat.row_mean();
    let centred = DMatrix::from_fn(m, d, |i, j| mat[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (m as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vecs = order[..2].iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
    let vals = order[..2].iter().map(|&k| eig.eigenvalues[k]).collect();
    (vecs, vals)
}

/// Angle between two directions, ignoring sign.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot.abs().min(1.0).acos()
}
