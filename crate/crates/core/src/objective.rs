//! Composite training objective: cross-entropy, reconstruction, the two
//! prototype/encoding attraction terms and the prototype diversity penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Axis, Tape, Tensor, Var};
use crate::protomodel::{ModelVars, PrototypeModel};

/// Lower bound on the literal penalty's denominator.
pub const LITERAL_DENOMINATOR_FLOOR: f64 = 1e-3;

/// Form of the diversity penalty's logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdlVariant {
    /// `1 / (log(d̄) + ε)` with the denominator floored at
    /// [`LITERAL_DENOMINATOR_FLOOR`]. Below `d̄ ≈ 1` the floor is active and
    /// the penalty is flat.
    Literal,
    /// `1 / (log(1 + d̄) + ε)`: positive, bounded by `1/ε`, decreasing in `d̄`.
    Shifted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_pd: f64,
    pub epsilon: f64,
    pub pdl_variant: PdlVariant,
    /// When false the cross-entropy is still reported but left out of the
    /// total, which turns training into plain autoencoder fitting.
    pub classification: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_1: 1.0,
            lambda_2: 1.0,
            lambda_pd: 0.0,
            epsilon: 1e-6,
            pdl_variant: PdlVariant::Shifted,
            classification: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_r, self.lambda_1, self.lambda_2, self.lambda_pd];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and >= 0: {lambdas:?}"
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        Ok(())
    }

    /// Reconstruction only.
    pub fn autoencoder_only() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_1: 0.0,
            lambda_2: 0.0,
            lambda_pd: 0.0,
            classification: false,
            ..Default::default()
        }
    }
}

/// Per-term values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub e: f64,
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    pub pdl: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum of the terms.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        let e = if w.classification { self.e } else { 0.0 };
        e + w.lambda_r * self.r
            + w.lambda_1 * self.r1
            + w.lambda_2 * self.r2
            + w.lambda_pd * self.pdl
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.e += b.e;
            acc.r += b.r;
            acc.r1 += b.r1;
            acc.r2 += b.r2;
            acc.pdl += b.pdl;
            acc.total += b.total;
        }
        LossBreakdown {
            e: acc.e / n,
            r: acc.r / n,
            r1: acc.r1 / n,
            r2: acc.r2 / n,
            pdl: acc.pdl / n,
            total: acc.total / n,
        }
    }
}

/// Diversity penalty of the `m×q` prototype matrix `p` recorded on `tape`.
///
/// `d̄` is the mean over prototypes of the squared distance to the nearest
/// other prototype.
pub fn pdl_on(tape: &mut Tape, p: Var, epsilon: f64, variant: PdlVariant) -> Result<Var> {
    if tape.value(p).rows() < 2 {
        return Err(Error::config(
            "diversity penalty needs at least two prototypes",
        ));
    }
    let d = tape.pairwise_sq_dist(p, p)?;
    let nearest = tape.min_reduce(d, Axis::Rows, true)?;
    let dbar = tape.mean(nearest)?;
    let denom = match variant {
        PdlVariant::Shifted => {
            let s = tape.add_scalar(dbar, 1.0)?;
            let l = tape.log(s)?;
            tape.add_scalar(l, epsilon)?
        }
        PdlVariant::Literal => {
            // keeps log finite at d̄ = 0; the outer floor is active there anyway
            let safe = tape.clamp_min(dbar, 1e-12)?;
            let l = tape.log(safe)?;
            let l = tape.add_scalar(l, epsilon)?;
            tape.clamp_min(l, LITERAL_DENOMINATOR_FLOOR)?
        }
    };
    tape.recip(denom)
}

fn check_latents(p: &Tensor, z: &Tensor) -> Result<()> {
    if z.rows() == 0 || z.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    if p.cols() != z.cols() {
        return Err(Error::Dimension {
            op: "prototype distance",
            lhs: p.shape().to_vec(),
            rhs: z.shape().to_vec(),
        });
    }
    Ok(())
}

/// `(1/m) Σ_j min_i ‖p_j − z_i‖²`
pub fn r1_on(tape: &mut Tape, p: Var, z: Var) -> Result<Var> {
    check_latents(tape.value(p), tape.value(z))?;
    let d = tape.pairwise_sq_dist(p, z)?;
    let m = tape.min_reduce(d, Axis::Rows, false)?;
    tape.mean(m)
}

/// `(1/n) Σ_i min_j ‖z_i − p_j‖²`
pub fn r2_on(tape: &mut Tape, p: Var, z: Var) -> Result<Var> {
    check_latents(tape.value(p), tape.value(z))?;
    let d = tape.pairwise_sq_dist(p, z)?;
    let m = tape.min_reduce(d, Axis::Cols, false)?;
    tape.mean(m)
}

fn eval_scalar(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    Ok(tape.value(v).item())
}

pub fn pdl(prototypes: &Tensor, epsilon: f64, variant: PdlVariant) -> Result<f64> {
    eval_scalar(|t| {
        let p = t.leaf(prototypes.clone());
        pdl_on(t, p, epsilon, variant)
    })
}

pub fn r1(prototypes: &Tensor, latents: &Tensor) -> Result<f64> {
    eval_scalar(|t| {
        let p = t.leaf(prototypes.clone());
        let z = t.leaf(latents.clone());
        r1_on(t, p, z)
    })
}

pub fn r2(prototypes: &Tensor, latents: &Tensor) -> Result<f64> {
    eval_scalar(|t| {
        let p = t.leaf(prototypes.clone());
        let z = t.leaf(latents.clone());
        r2_on(t, p, z)
    })
}

/// Records the full objective for one batch and returns the total's handle
/// together with the per-term values.
pub fn total_loss_on(
    tape: &mut Tape,
    model: &PrototypeModel,
    vars: &ModelVars,
    batch: &Tensor,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    if batch.rows() != labels.len() {
        return Err(Error::validation(format!(
            "{} images but {} labels",
            batch.rows(),
            labels.len()
        )));
    }
    let x = tape.leaf(batch.clone());
    let z = model.encode_on(tape, vars, x)?;

    let logits = model.logits_on(tape, vars, z)?;
    let e = tape.softmax_cross_entropy(logits, labels)?;

    let recon = model.decode_on(tape, vars, z)?;
    let diff = tape.sub(recon, x)?;
    let sq = tape.square(diff)?;
    let sse = tape.sum(sq)?;
    let r = tape.scale(sse, 1.0 / labels.len() as f64)?;

    let p = vars.prototypes();
    let r1 = r1_on(tape, p, z)?;
    let r2 = r2_on(tape, p, z)?;
    let pdl = pdl_on(tape, p, weights.epsilon, weights.pdl_variant)?;

    let mut total = if weights.classification {
        e
    } else {
        tape.scale(e, 0.0)?
    };
    for (term, w) in [
        (r, weights.lambda_r),
        (r1, weights.lambda_1),
        (r2, weights.lambda_2),
        (pdl, weights.lambda_pd),
    ] {
        let s = tape.scale(term, w)?;
        total = tape.add(total, s)?;
    }
    let breakdown = LossBreakdown {
        e: tape.value(e).item(),
        r: tape.value(r).item(),
        r1: tape.value(r1).item(),
        r2: tape.value(r2).item(),
        pdl: tape.value(pdl).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

pub fn total_loss(
    model: &PrototypeModel,
    batch: &Tensor,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    total_loss_on(&mut tape, model, &vars, batch, labels, weights).map(|(_, b)| b)
}

/// Objective value and its gradient w.r.t. every model parameter, in
/// [`PrototypeModel::params`] order.
pub fn loss_and_grad(
    model: &PrototypeModel,
    batch: &Tensor,
    labels: &[usize],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let (total, breakdown) = total_loss_on(&mut tape, model, &vars, batch, labels, weights)?;
    let mut g = tape.backward(total)?;
    Ok((breakdown, vars.all.iter().map(|&v| g.take(v)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn pdl_coincident_prototypes_hit_the_ceiling() {
        let p = t(&[vec![0.3, 0.3], vec![0.3, 0.3]]);
        let v = pdl(&p, 1e-6, PdlVariant::Shifted).unwrap();
        assert!((v - 1e6).abs() < 1e-6);
        let lit = pdl(&p, 1e-6, PdlVariant::Literal).unwrap();
        assert_eq!(lit, 1.0 / LITERAL_DENOMINATOR_FLOOR);
    }

    #[test]
    fn pdl_hand_values() {
        // squared distance e − 1 → log(1 + d̄) = 1
        let p = t(&[vec![0.0], vec![(E - 1.0).sqrt()]]);
        let v = pdl(&p, 1e-6, PdlVariant::Shifted).unwrap();
        assert!((v - 1.0 / (1.0 + 1e-6)).abs() < 1e-12);

        // equilateral triangle with squared side e
        let s = E.sqrt();
        let p = t(&[
            vec![0.0, 0.0],
            vec![s, 0.0],
            vec![s / 2.0, s * 3f64.sqrt() / 2.0],
        ]);
        let v = pdl(&p, 1e-6, PdlVariant::Literal).unwrap();
        assert!((v - 1.0 / (1.0 + 1e-6)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn pdl_needs_two_prototypes() {
        assert!(matches!(
            pdl(&t(&[vec![1.0, 2.0]]), 1e-6, PdlVariant::Shifted),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attraction_terms_hand_case() {
        let p = t(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let z = t(&[vec![0.0, 1.0], vec![3.0, 4.0]]);
        assert_eq!(r1(&p, &z).unwrap(), 0.5);
        assert_eq!(r2(&p, &z).unwrap(), 0.5);
        assert_eq!(r1(&p, &p).unwrap(), 0.0);
        assert_eq!(r2(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn attraction_rejects_mismatched_width() {
        let p = t(&[vec![0.0, 0.0]]);
        let z = t(&[vec![0.0, 1.0, 2.0]]);
        assert!(r1(&p, &z).is_err());
    }

    #[test]
    fn breakdown_total_matches_weighted_sum() {
        let mut c = crate::protomodel::ModelConfig::new(16, 4, 2);
        c.q = 3;
        c.hidden = vec![8];
        let model = PrototypeModel::init(c).unwrap();
        let batch = Tensor::filled(&[5, 16], 0.25);
        let labels = [0, 1, 0, 1, 1];
        let w = LossWeights {
            lambda_r: 0.7,
            lambda_1: 1.3,
            lambda_2: 0.2,
            lambda_pd: 50.0,
            ..Default::default()
        };
        let b = total_loss(&model, &batch, &labels, &w).unwrap();
        assert!((b.total - b.weighted_total(&w)).abs() < 1e-12);

        let zero = LossWeights {
            lambda_r: 0.0,
            lambda_1: 0.0,
            lambda_2: 0.0,
            lambda_pd: 0.0,
            ..Default::default()
        };
        let b0 = total_loss(&model, &batch, &labels, &zero).unwrap();
        assert_eq!(b0.total, b0.e);
        assert!(b0.e >= 0.0 && b0.r >= 0.0 && b0.r1 >= 0.0 && b0.r2 >= 0.0);
    }
}
