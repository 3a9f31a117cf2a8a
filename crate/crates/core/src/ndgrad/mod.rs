//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! Only the primitives the prototype objective needs are provided. The
//! contract for each of them is agreement with central finite differences,
//! see [`central_differences`] and [`max_relative_error`].

mod tape;
mod tensor;

pub use tape::{grad, pairwise_sq_dist, softmax_cross_entropy, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Central finite-difference gradient of `f` at `params`, one perturbed
/// coordinate at a time.
pub fn central_differences<F>(params: &[Tensor], h: f64, mut f: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, floor)` over all tensors.
///
/// `floor` keeps coordinates whose true gradient is ~0 from dividing
/// finite-difference rounding noise by zero.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
