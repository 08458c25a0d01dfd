//! Differentiable primitives, parameter storage, optimizer and checkpoints.

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;

use crate::error::Result;

pub use checkpoint::Checkpoint;
pub use optim::RmsProp;
pub use params::{Gradients, ParamEntry, ParameterTree};
pub use tape::{Tape, Var};

use rand::Rng;

/// Registers GRU parameters under `prefix`: `w_ih [3h×in]`, `w_hh [3h×h]`,
/// `b_ih [3h]`, `b_hh [3h]`, gate order reset/update/candidate.
pub fn init_gru<R: Rng + ?Sized>(
    tree: &mut ParameterTree,
    prefix: &str,
    in_dim: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    let bound = 1.0 / (hidden.max(1) as f64).sqrt();
    let mut draw = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        crate::array::RealArray::new(vec![rows, cols], data)
    };
    let w_ih = draw(3 * hidden, in_dim)?;
    let w_hh = draw(3 * hidden, hidden)?;
    let b_ih = draw(1, 3 * hidden)?.reshaped(&[3 * hidden])?;
    let b_hh = draw(1, 3 * hidden)?.reshaped(&[3 * hidden])?;
    tree.insert(format!("{prefix}.w_ih"), w_ih, true)?;
    tree.insert(format!("{prefix}.w_hh"), w_hh, true)?;
    tree.insert(format!("{prefix}.b_ih"), b_ih, true)?;
    tree.insert(format!("{prefix}.b_hh"), b_hh, true)
}

/// One GRU step:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(tape: &mut Tape, tree: &ParameterTree, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let w_ih = tape.param(tree, &format!("{prefix}.w_ih"))?;
    let w_hh = tape.param(tree, &format!("{prefix}.w_hh"))?;
    let b_ih = tape.param(tree, &format!("{prefix}.b_ih"))?;
    let b_hh = tape.param(tree, &format!("{prefix}.b_hh"))?;
    let hidden = tape.value(w_hh).cols();
    if tape.value(h).cols() != hidden || tape.value(h).rows() != tape.value(x).rows() {
        return Err(crate::error::Error::Shape {
            op: "gru_cell",
            lhs: tape.value(h).shape().to_vec(),
            rhs: vec![tape.value(x).rows(), hidden],
        });
    }
    let gi = tape.linear(x, w_ih, Some(b_ih))?;
    let gh = tape.linear(h, w_hh, Some(b_hh))?;
    let gi_r = tape.slice_cols(gi, 0, hidden)?;
    let gh_r = tape.slice_cols(gh, 0, hidden)?;
    let gi_z = tape.slice_cols(gi, hidden, hidden)?;
    let gh_z = tape.slice_cols(gh, hidden, hidden)?;
    let gi_n = tape.slice_cols(gi, 2 * hidden, hidden)?;
    let gh_n = tape.slice_cols(gh, 2 * hidden, hidden)?;
    let r_pre = tape.add(gi_r, gh_r)?;
    let r = tape.sigmoid(r_pre)?;
    let z_pre = tape.add(gi_z, gh_z)?;
    let z = tape.sigmoid(z_pre)?;
    let rh = tape.mul(r, gh_n)?;
    let n_pre = tape.add(gi_n, rh)?;
    let n = tape.tanh(n_pre)?;
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}
