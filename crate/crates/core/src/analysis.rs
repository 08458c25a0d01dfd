//! Embedding and credit-weight exports, plus a small PCA.
//!
//! `analysis.csv` columns, in order:
//! `episode,t,agent,graph,alive,hp,scalar,weight,emb_0,…,emb_{d-1}`
//! (`hp` is empty when the environment has no hit points).
//!
//! `pca.csv` columns: `episode,t,agent,graph,pc1,pc2`, projected per
//! episode and graph over that episode's pooled embeddings.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::RealArray;
use crate::autodiff::tape::softmax_row;
use crate::autodiff::ParameterTree;
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::graph::{encode_graph, AgentGraph};
use crate::mixer::Algorithm;
use crate::model::Model;
use crate::rollout::{eval_seed, run_episode};

pub const PCA_TOLERANCE: f64 = 1e-10;
const PCA_MAX_ITERS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisRecord {
    pub episode: usize,
    pub t: usize,
    pub agent: usize,
    pub graph: usize,
    pub alive: bool,
    pub hp: Option<f64>,
    pub scalar: f64,
    pub weight: f64,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaRecord {
    pub episode: usize,
    pub t: usize,
    pub agent: usize,
    pub graph: usize,
    pub pc1: f64,
    pub pc2: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Analysis {
    pub records: Vec<AnalysisRecord>,
    pub pca: Vec<PcaRecord>,
    pub steps: usize,
}

/// Rolls `episodes` greedy episodes and records, for every pre-action step,
/// agent and graph, the embedding, transform scalar and credit weight.
pub fn analyze(
    env: &mut dyn Env,
    model: &Model,
    params: &ParameterTree,
    episodes: usize,
    seed: u64,
) -> Result<Analysis> {
    if model.algorithm != Algorithm::Mgan {
        return Err(Error::Unsupported(format!(
            "analysis needs graph encoders; checkpoint uses {}",
            model.algorithm
        )));
    }
    if episodes == 0 {
        return Err(Error::config("episodes", "must be positive"));
    }
    let graphs = model.cfg.graphs;
    let n = model.dims.n_agents;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Analysis::default();
    for k in 0..episodes {
        let start = out.records.len();
        let records = &mut out.records;
        run_episode(env, model, params, 0.0, eval_seed(seed, k), &mut rng, |t, step| {
            let features = RealArray::from_rows(&step.observations)?;
            let graph = AgentGraph::from_alive(&step.alive, features)?;
            let set = encode_graph(&graph, params, graphs)?;
            let mask: Vec<f64> = step.alive.iter().map(|&a| a as u8 as f64).collect();
            let mut weights = vec![0.0; n];
            for g in 0..graphs {
                let scalars = set.scalars[g].data();
                softmax_row(scalars, &mask, &mut weights)?;
                for a in 0..n {
                    records.push(AnalysisRecord {
                        episode: k,
                        t,
                        agent: a,
                        graph: g,
                        alive: step.alive[a],
                        hp: step.health.as_ref().map(|h| h[a]),
                        scalar: scalars[a],
                        weight: weights[a],
                        embedding: set.embeddings[g].row(a).to_vec(),
                    });
                }
            }
            Ok(())
        })?;
        out.steps += (out.records.len() - start) / (n * graphs);
        for g in 0..graphs {
            let rows: Vec<&AnalysisRecord> = out.records[start..].iter().filter(|r| r.graph == g).collect();
            let data: Vec<Vec<f64>> = rows.iter().map(|r| r.embedding.clone()).collect();
            let proj = pca_project(&RealArray::from_rows(&data)?)?;
            for (i, r) in rows.iter().enumerate() {
                out.pca.push(PcaRecord {
                    episode: r.episode,
                    t: r.t,
                    agent: r.agent,
                    graph: g,
                    pc1: proj.get2(i, 0),
                    pc2: proj.get2(i, 1),
                });
            }
        }
    }
    Ok(out)
}

/// Pearson correlation between credit weight and hit points over alive
/// agents. `None` without hit points or without variance.
pub fn weight_hp_correlation(records: &[AnalysisRecord]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.alive)
        .filter_map(|r| r.hp.map(|hp| (r.weight, hp)))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let m = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn write_analysis_csv<W: Write>(w: W, records: &[AnalysisRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.embedding.len());
    let mut csv = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["episode", "t", "agent", "graph", "alive", "hp", "scalar", "weight"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("emb_{i}")));
    csv.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.episode.to_string(),
            r.t.to_string(),
            r.agent.to_string(),
            r.graph.to_string(),
            (r.alive as u8).to_string(),
            r.hp.map(|h| h.to_string()).unwrap_or_default(),
            r.scalar.to_string(),
            r.weight.to_string(),
        ];
        row.extend(r.embedding.iter().map(f64::to_string));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_pca_csv<W: Write>(w: W, records: &[PcaRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["episode", "t", "agent", "graph", "pc1", "pc2"])?;
    for r in records {
        csv.write_record([
            r.episode.to_string(),
            r.t.to_string(),
            r.agent.to_string(),
            r.graph.to_string(),
            r.pc1.to_string(),
            r.pc2.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Top two principal directions of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalComponents {
    pub mean: Vec<f64>,
    /// Unit directions, strongest first. Fewer than two when the data has
    /// less variance structure than that.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each entry of `components`.
    pub variances: Vec<f64>,
}

/// Power iteration with deflation on the covariance of `vectors [m×d]`.
/// Each direction is signed so its largest-magnitude loading is positive.
pub fn principal_components(vectors: &RealArray) -> Result<PrincipalComponents> {
    let (m, d) = (vectors.rows(), vectors.cols());
    if m < 2 || vectors.shape().len() != 2 {
        return Err(Error::Shape {
            op: "principal_components",
            lhs: vectors.shape().to_vec(),
            rhs: vec![2],
        });
    }
    vectors.ensure_finite("principal_components")?;
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..m).map(|i| vectors.get2(i, j)).sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let row: Vec<f64> = vectors.row(i).iter().zip(&mean).map(|(x, mu)| x - mu).collect();
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += row[a] * row[b];
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= (m - 1) as f64);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let mut out = PrincipalComponents {
        mean,
        components: Vec::new(),
        variances: Vec::new(),
    };
    if trace <= 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for _ in 0..2.min(d) {
        let Some((lambda, v)) = power_iteration(&cov, d, trace, &mut rng) else {
            break;
        };
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] -= lambda * v[a] * v[b];
            }
        }
        out.components.push(v);
        out.variances.push(lambda);
    }
    Ok(out)
}

/// Projects centred rows of `vectors [m×d]` onto the top two principal
/// directions. Directions with no variance project to zero.
pub fn pca_project(vectors: &RealArray) -> Result<RealArray> {
    let pcs = principal_components(vectors)?;
    let m = vectors.rows();
    let mut out = vec![0.0; m * 2];
    for i in 0..m {
        for (k, v) in pcs.components.iter().enumerate() {
            out[i * 2 + k] = vectors
                .row(i)
                .iter()
                .zip(&pcs.mean)
                .zip(v)
                .map(|((x, mu), c)| (x - mu) * c)
                .sum();
        }
    }
    RealArray::matrix(m, 2, out)
}

/// Dominant eigenpair of the symmetric `cov`, or `None` when what is left
/// is numerically zero relative to `scale`.
fn power_iteration<R: Rng>(cov: &[f64], d: usize, scale: f64, rng: &mut R) -> Option<(f64, Vec<f64>)> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalise(&mut v);
    let mut next = vec![0.0; d];
    for _ in 0..PCA_MAX_ITERS {
        for (a, n) in next.iter_mut().enumerate() {
            *n = cov[a * d..(a + 1) * d].iter().zip(&v).map(|(c, x)| c * x).sum();
        }
        let norm = normalise(&mut next);
        if norm <= 1e-12 * scale {
            return None;
        }
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut next);
        if diff < PCA_TOLERANCE {
            break;
        }
    }
    let lambda: f64 = (0..d)
        .map(|a| v[a] * cov[a * d..(a + 1) * d].iter().zip(&v).map(|(c, x)| c * x).sum::<f64>())
        .sum();
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some((lambda, v))
}

fn normalise(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_project_to_zero() {
        let x = RealArray::from_rows(&vec![vec![1.0, 2.0, 3.0]; 4]).unwrap();
        assert!(pca_project(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn axis_aligned_data_is_recovered() {
        let rows = vec![
            vec![3.0, 0.5],
            vec![-3.0, 0.5],
            vec![1.0, -0.5],
            vec![-1.0, -0.5],
        ];
        let p = pca_project(&RealArray::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert!((p.get2(i, 0).abs() - r[0].abs()).abs() < 1e-9);
            assert!((p.get2(i, 1).abs() - r[1].abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_data_has_no_second_component() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&RealArray::from_rows(&rows).unwrap()).unwrap();
        let var2: f64 = (0..6).map(|i| p.get2(i, 1).powi(2)).sum::<f64>() / 5.0;
        assert!(var2 < 1e-12);
    }

    #[test]
    fn single_row_is_rejected() {
        assert!(pca_project(&RealArray::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn correlation_of_linear_pairs() {
        let rec = |w: f64, hp: f64| AnalysisRecord {
            episode: 0,
            t: 0,
            agent: 0,
            graph: 0,
            alive: true,
            hp: Some(hp),
            scalar: 0.0,
            weight: w,
            embedding: vec![],
        };
        let rs = vec![rec(0.1, 0.2), rec(0.2, 0.4), rec(0.3, 0.6)];
        assert!((weight_hp_correlation(&rs).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(weight_hp_correlation(&rs[..1]), None);
    }
}
