//! Latent-space analysis: PCA, cosine similarity, exact t-SNE and the
//! dims-2/3 view with prototype markers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diversity::nearest_neighbors;
use crate::error::{Error, Result};
use crate::ndgrad::{pairwise_sq_dist, Tensor};
use crate::rng::rng_for;
use crate::signalkit::Severity;

/// Upper bound on the PCA target dimension.
pub const PCA_MAX_DIM: usize = 500;

#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d×q`, orthonormal rows in order of decreasing variance.
    pub components: Tensor,
    /// Variance along each retained component.
    pub variances: Vec<f64>,
    /// Fraction of the total variance kept by the retained components.
    pub retained: f64,
    /// `n×d` coordinates of the centred input.
    pub projected: Tensor,
}

/// Projects the rows of `x` onto its top `d` principal axes. Each axis is
/// signed so that its largest-magnitude entry is positive.
pub fn pca(x: &Tensor, d: usize) -> Result<Pca> {
    let (n, q) = x.require_matrix("pca")?;
    if d == 0 || n < 2 || d > q.min(n - 1) {
        return Err(Error::validation(format!(
            "pca target {d} must be in 1..={} for {n}×{q} input",
            q.min(n.saturating_sub(1))
        )));
    }
    let mut mean = vec![0.0; q];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, q, |i, j| x.get(i, j) - mean[j]);
    let cov = (centred.transpose() * &centred) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut comps = Vec::with_capacity(d * q);
    let mut variances = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let col = eig.eigenvectors.column(k);
        let pivot = col
            .iter()
            .fold(0.0f64, |a, &v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        comps.extend(col.iter().map(|v| sign * v));
        variances.push(eig.eigenvalues[k].max(0.0));
    }
    let components = Tensor::matrix(d, q, comps)?;
    let centred_t = Tensor::matrix(
        n,
        q,
        (0..n * q).map(|k| x.data()[k] - mean[k % q]).collect(),
    )?;
    let projected = centred_t.matmul(&components.transpose()?)?;
    let retained = if total > 0.0 {
        variances.iter().sum::<f64>() / total
    } else {
        1.0
    };
    Ok(Pca {
        mean,
        components,
        variances,
        retained,
        projected,
    })
}

/// PCA target dimension for `n` points in `q` dimensions.
pub fn pca_target(n: usize, q: usize) -> usize {
    PCA_MAX_DIM.min(q).min(n.saturating_sub(1)).max(1)
}

/// Row-wise cosine similarity. Zero rows get similarity 0 with everything
/// (including themselves) and produce a warning.
pub fn cosine_similarity(x: &Tensor) -> Result<(Tensor, Vec<String>)> {
    let (n, _) = x.require_matrix("cosine_similarity")?;
    let norms: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let warnings = norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 0.0)
        .map(|(i, _)| format!("row {i} is zero; its similarities are set to 0"))
        .collect();
    let gram = x.matmul(&x.transpose()?)?;
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                s[i * n + j] = if i == j {
                    1.0
                } else {
                    (gram.get(i, j) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                };
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (s[i * n + j] + s[j * n + i]);
            s[i * n + j] = avg;
            s[j * n + i] = avg;
        }
    }
    Ok((Tensor::matrix(n, n, s)?, warnings))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub d_out: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            d_out: 3,
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
            learning_rate: 100.0,
        }
    }
}

const EXAGGERATION: f64 = 4.0;
const EXAGGERATION_ITERS: usize = 100;
const MOMENTUM_SWITCH: usize = 250;
const PERPLEXITY_TOL: f64 = 1e-5;
const PERPLEXITY_STEPS: usize = 50;
const INIT_SD: f64 = 1e-4;
const MIN_GAIN: f64 = 0.01;

pub enum TsneInput<'a> {
    /// Rows are points; affinities use squared Euclidean distance.
    Points(&'a Tensor),
    /// Symmetric dissimilarity matrix used as-is in the affinity kernel.
    Distances(&'a Tensor),
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub points: Tensor,
    /// KL(P‖Q) at initialization followed by one value per iteration.
    pub kl_trace: Vec<f64>,
    pub config: TsneConfig,
}

/// Row-conditional affinities at the requested perplexity, symmetrized to a
/// joint distribution: `P = (P_{j|i} + P_{i|j}) / 2n`.
pub fn joint_probabilities(dist: &Tensor, perplexity: f64) -> Result<Tensor> {
    let (n, c) = dist.require_matrix("joint_probabilities")?;
    if n != c {
        return Err(Error::Dimension {
            op: "joint_probabilities",
            lhs: vec![n, c],
            rhs: vec![n, n],
        });
    }
    if perplexity.is_nan() || perplexity <= 0.0 {
        return Err(Error::validation("perplexity must be positive"));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let d: Vec<f64> = (0..n).map(|j| dist.get(i, j)).collect();
        let dmin = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j])
            .fold(f64::INFINITY, f64::min);
        let row = |beta: f64| {
            let mut p = vec![0.0; n];
            let mut sum = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                // shifted by the nearest distance; cancels after normalization
                p[j] = (-beta * (d[j] - dmin)).exp();
                sum += p[j];
            }
            let mut h = sum.ln();
            for j in (0..n).filter(|&j| j != i) {
                p[j] /= sum;
                h += beta * (d[j] - dmin) * p[j];
            }
            (p, h)
        };
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let (mut p, mut h) = row(beta);
        for _ in 0..PERPLEXITY_STEPS {
            if (h - target).abs() < PERPLEXITY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            (p, h) = row(beta);
        }
        cond[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Tensor::matrix(n, n, joint)
}

fn student_q(y: &[f64], n: usize, d: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = y[i * d + k] - y[j * d + k];
                s += diff * diff;
            }
            let v = 1.0 / (1.0 + s);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl(p: &[f64], num: &[f64], sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qn)| pv * (pv / (qn / sum).max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Exact O(n²) t-SNE.
pub fn tsne(input: TsneInput<'_>, config: &TsneConfig) -> Result<Embedding> {
    let dist = match input {
        TsneInput::Points(x) => pairwise_sq_dist(x, x)?,
        TsneInput::Distances(d) => d.clone(),
    };
    let n = dist.rows();
    if n < 5 {
        return Err(Error::validation(format!(
            "t-SNE needs at least 5 points, got {n}"
        )));
    }
    if config.d_out == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::validation(
            "t-SNE needs d_out > 0 and a positive learning rate",
        ));
    }
    let d = config.d_out;
    let p = joint_probabilities(&dist, config.perplexity)?;
    let p = p.data();
    let mut rng = rng_for(config.seed, 0);
    let normal = Normal::new(0.0, INIT_SD).expect("valid sd");
    let mut y: Vec<f64> = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n * d];
    let mut gains = vec![1.0f64; n * d];
    let (num, sum) = student_q(&y, n, d);
    let mut kl_trace = vec![kl(p, &num, sum)];
    let mut grad = vec![0.0; n * d];
    for iter in 0..config.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS {
            EXAGGERATION
        } else {
            1.0
        };
        let momentum = if iter < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        let (num, sum) = student_q(&y, n, d);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - w / sum) * w;
                for k in 0..d {
                    grad[i * d + k] += coeff * (y[i * d + k] - y[j * d + k]);
                }
            }
        }
        for k in 0..n * d {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for k in 0..d {
            let mean = (0..n).map(|i| y[i * d + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * d + k] -= mean);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "t-SNE diverged at iteration {iter}"
            )));
        }
        let (num, sum) = student_q(&y, n, d);
        kl_trace.push(kl(p, &num, sum));
    }
    Ok(Embedding {
        points: Tensor::matrix(n, d, y)?,
        kl_trace,
        config: *config,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewRow {
    pub id: String,
    pub is_prototype: bool,
    /// All embedding coordinates (dim1, dim2, dim3).
    pub coords: Vec<f64>,
    pub label: Option<Severity>,
    /// For prototypes: index of the nearest data row in latent space.
    pub nearest_neighbor: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentView {
    pub rows: Vec<ViewRow>,
}

impl LatentView {
    /// The (dim2, dim3) plane used for plotting.
    pub fn plane(&self) -> Vec<[f64; 2]> {
        self.rows
            .iter()
            .map(|r| [r.coords[1], r.coords[2]])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,is_prototype,dim1,dim2,dim3,label,nearest_neighbor_id\n");
        for r in &self.rows {
            let label = r.label.map(|l| l.name()).unwrap_or("");
            let nn = r
                .nearest_neighbor
                .map(|i| self.rows[i].id.clone())
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.id, r.is_prototype, r.coords[0], r.coords[1], r.coords[2], label, nn
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Pairs embedded rows with ids and prototype markers. The embedding holds
/// the data rows first and the prototypes appended after them; a prototype's
/// label is the label of its nearest data row.
pub fn project_view(
    embedding: &Embedding,
    data_latents: &Tensor,
    prototypes: &Tensor,
    ids: &[String],
    labels: &[usize],
) -> Result<LatentView> {
    let (n, m) = (data_latents.rows(), prototypes.rows());
    if embedding.points.rows() != n + m || ids.len() != n || labels.len() != n {
        return Err(Error::validation(format!(
            "embedding has {} rows for {n} data rows and {m} prototypes ({} ids, {} labels)",
            embedding.points.rows(),
            ids.len(),
            labels.len()
        )));
    }
    if embedding.points.cols() < 3 {
        return Err(Error::validation(
            "the view needs a 3-dimensional embedding",
        ));
    }
    let nn = nearest_neighbors(prototypes, data_latents)?;
    let mut rows = Vec::with_capacity(n + m);
    for i in 0..n {
        rows.push(ViewRow {
            id: ids[i].clone(),
            is_prototype: false,
            coords: embedding.points.row(i)[..3].to_vec(),
            label: Severity::from_index(labels[i]).ok(),
            nearest_neighbor: None,
        });
    }
    for (j, &k) in nn.iter().enumerate() {
        rows.push(ViewRow {
            id: format!("prototype_{j}"),
            is_prototype: true,
            coords: embedding.points.row(n + j)[..3].to_vec(),
            label: Severity::from_index(labels[k]).ok(),
            nearest_neighbor: Some(k),
        });
    }
    Ok(LatentView { rows })
}

pub struct LatentAnalysis {
    pub pca: Pca,
    pub embedding: Embedding,
    pub view: LatentView,
    pub warnings: Vec<String>,
}

/// Data and prototypes embedded jointly: PCA, cosine similarity, t-SNE on
/// `1 − S`, then the view.
pub fn analyze(
    data_latents: &Tensor,
    prototypes: &Tensor,
    ids: &[String],
    labels: &[usize],
    config: &TsneConfig,
) -> Result<LatentAnalysis> {
    let all = data_latents.vstack(prototypes)?;
    let (n, q) = (all.rows(), all.cols());
    if n < 5 {
        return Err(Error::validation(format!(
            "latent export needs at least 5 rows, got {n}"
        )));
    }
    let pca = pca(&all, pca_target(n, q))?;
    let (sim, warnings) = cosine_similarity(&pca.projected)?;
    let dist = Tensor::matrix(n, n, sim.data().iter().map(|s| 1.0 - s).collect())?;
    let embedding = tsne(TsneInput::Distances(&dist), config)?;
    let view = project_view(&embedding, data_latents, prototypes, ids, labels)?;
    Ok(LatentAnalysis {
        pca,
        embedding,
        view,
        warnings,
    })
}
