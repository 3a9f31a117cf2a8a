//! Prototype diversity scores and classification metrics.
//!
//! `Ψ = Σ_i sqrt(|φ_i|) / Z` over the non-empty groups `φ_i` of prototypes.
//! With `Z = sqrt(min(bins, m)·m)` Cauchy–Schwarz gives `Ψ ≤ 1`, with
//! equality exactly when `min(bins, m)` groups share the prototypes evenly.
//! Grouping by nearest training example uses `bins = m`, so `Z = m`;
//! grouping by class uses `bins = K`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ndgrad::{pairwise_sq_dist, Tensor};
use crate::protomodel::{argmax_rows, PrototypeModel};

/// Index of the closest row of `latents` for every row of `prototypes`,
/// ties to the lowest index.
pub fn nearest_neighbors(prototypes: &Tensor, latents: &Tensor) -> Result<Vec<usize>> {
    if latents.rows() == 0 {
        return Err(Error::validation("no training latents"));
    }
    let d = pairwise_sq_dist(prototypes, latents)?;
    Ok((0..d.rows())
        .map(|j| {
            d.row(j)
                .iter()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (i, &v)| if v < best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect())
}

/// Diversity score of a grouping of `m` prototypes into `bins` possible groups.
///
/// `counts` lists group sizes (zeros allowed) and must sum to `m`.
pub fn psi(counts: &[usize], m: usize, bins: usize) -> Result<f64> {
    if m == 0 || bins == 0 {
        return Err(Error::validation("psi needs m > 0 and bins > 0"));
    }
    if counts.iter().sum::<usize>() != m {
        return Err(Error::validation(format!(
            "group sizes {counts:?} do not sum to m = {m}"
        )));
    }
    let t = counts.iter().filter(|&&c| c > 0).count();
    if t > bins {
        return Err(Error::validation(format!(
            "{t} non-empty groups exceed {bins} bins"
        )));
    }
    let z = ((bins.min(m) * m) as f64).sqrt();
    Ok(counts.iter().map(|&c| (c as f64).sqrt()).sum::<f64>() / z)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiversityReport {
    pub psi_n: f64,
    pub psi_c: f64,
    /// Nearest training example of each prototype.
    pub neighbor_of: Vec<usize>,
    /// Label of that nearest example.
    pub class_of: Vec<usize>,
    /// Sizes of the non-empty nearest-neighbor groups, by first appearance.
    pub neighbor_bins: Vec<usize>,
    /// Prototypes per class, length `K`.
    pub class_bins: Vec<usize>,
    pub t_neighbor: usize,
    pub t_class: usize,
}

pub fn diversity_report(
    prototypes: &Tensor,
    train_latents: &Tensor,
    train_labels: &[usize],
    k: usize,
) -> Result<DiversityReport> {
    if train_labels.len() != train_latents.rows() {
        return Err(Error::validation("latent/label count mismatch"));
    }
    let m = prototypes.rows();
    let neighbor_of = nearest_neighbors(prototypes, train_latents)?;
    let class_of: Vec<usize> = neighbor_of.iter().map(|&i| train_labels[i]).collect();

    let mut seen: Vec<(usize, usize)> = Vec::new();
    for &n in &neighbor_of {
        match seen.iter_mut().find(|(idx, _)| *idx == n) {
            Some(entry) => entry.1 += 1,
            None => seen.push((n, 1)),
        }
    }
    let neighbor_bins: Vec<usize> = seen.iter().map(|&(_, c)| c).collect();
    let mut class_bins = vec![0; k];
    for &c in &class_of {
        if c >= k {
            return Err(Error::validation(format!(
                "label {c} out of range for K = {k}"
            )));
        }
        class_bins[c] += 1;
    }
    Ok(DiversityReport {
        psi_n: psi(&neighbor_bins, m, m)?,
        psi_c: psi(&class_bins, m, k)?,
        t_neighbor: neighbor_bins.len(),
        t_class: class_bins.iter().filter(|&&c| c > 0).count(),
        neighbor_of,
        class_of,
        neighbor_bins,
        class_bins,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

pub fn eval_predictions(predicted: &[usize], labels: &[usize], k: usize) -> Result<EvalReport> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::validation(
            "need equally many non-zero predictions and labels",
        ));
    }
    let mut confusion = vec![vec![0; k]; k];
    for (&p, &y) in predicted.iter().zip(labels) {
        if p >= k || y >= k {
            return Err(Error::validation(format!(
                "class index out of range for K = {k}"
            )));
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let warnings = (0..k)
        .filter(|&c| confusion[c].iter().sum::<usize>() == 0)
        .map(|c| format!("class {c} absent from evaluation set"))
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        warnings,
    })
}

/// Test-set accuracy plus diversity measured against the training latents.
pub fn evaluate(
    model: &PrototypeModel,
    test_images: &Tensor,
    test_labels: &[usize],
    train_images: &Tensor,
    train_labels: &[usize],
) -> Result<(EvalReport, DiversityReport)> {
    let k = model.config.k;
    let logits = model.classify(test_images)?;
    let eval = eval_predictions(&argmax_rows(&logits), test_labels, k)?;
    let z = model.encode(train_images)?;
    let div = diversity_report(&model.prototypes, &z, train_labels, k)?;
    Ok((eval, div))
}
