use crate::envs::{Env, StepResult};
use crate::error::{Error, Result};

/// Largest number of open-loop joint action sequences we agree to enumerate.
pub const MAX_ENUMERATION: f64 = 1e6;

/// Best achievable undiscounted return of a deterministic environment,
/// found by enumerating every open-loop sequence of joint actions.
pub fn brute_force_optimal(env: &dyn Env, seed: u64) -> Result<f64> {
    let spec = env.spec();
    let joint = (spec.n_actions as f64).powi(spec.n_agents as i32);
    let sequences = joint.powi(spec.horizon as i32);
    if sequences > MAX_ENUMERATION {
        return Err(Error::SpaceTooLarge(sequences));
    }
    let mut root = env.clone_box();
    let start = root.reset(seed);
    best_from(root.as_ref(), &start)
}

fn best_from(env: &dyn Env, current: &StepResult) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for joint in joint_actions(&current.avail_actions) {
        let mut child = env.clone_box();
        let next = child.step(&joint)?;
        let value = if next.terminated {
            next.reward
        } else {
            next.reward + best_from(child.as_ref(), &next)?
        };
        best = best.max(value);
    }
    if best == f64::NEG_INFINITY {
        return Err(Error::NoAvailableAction);
    }
    Ok(best)
}

/// Cartesian product of each agent's available actions.
fn joint_actions(avail: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for agent in avail {
        let choices: Vec<usize> = agent
            .iter()
            .enumerate()
            .filter_map(|(i, &a)| a.then_some(i))
            .collect();
        out = out
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    out
}
