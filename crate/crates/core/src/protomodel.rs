//! Autoencoder with a prototype layer and a linear classifier.
//!
//! The encoder maps a flattened image (`p` pixels) through dense sigmoid
//! layers to a `q`-dimensional latent code. The decoder mirrors it back to
//! pixel space. Class logits are the squared distances from a latent code
//! to the `m` prototypes, multiplied by the transposed `K×m` classifier.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Tape, Tensor, Var};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PDIV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Flattened input size, `H·W`.
    pub p: usize,
    /// Latent dimension.
    #[serde(default = "default_q")]
    pub q: usize,
    /// Prototype count.
    pub m: usize,
    /// Class count.
    pub k: usize,
    /// Encoder hidden widths; the decoder uses them reversed.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_q() -> usize {
    64
}

fn default_hidden() -> Vec<usize> {
    vec![512, 256, 128]
}

impl ModelConfig {
    pub fn new(p: usize, m: usize, k: usize) -> Self {
        ModelConfig {
            p,
            q: default_q(),
            m,
            k,
            hidden: default_hidden(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::config(format!(
                "extents must be positive (p={}, q={}, m={}, K={})",
                self.p, self.q, self.m, self.k
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.m < self.k {
            return Err(Error::config(format!(
                "need at least one prototype per class (m={} < K={})",
                self.m, self.k
            )));
        }
        Ok(())
    }

    /// Layer widths from input to latent.
    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.p];
        w.extend(&self.hidden);
        w.push(self.q);
        w
    }
}

/// Every affine layer sees its input shifted by this amount. Pixels and
/// sigmoid outputs both live in `(0, 1)`, so the shift centres them; the
/// bias absorbs it, leaving the set of representable functions unchanged.
pub const INPUT_CENTRE: f64 = 0.5;

/// One affine layer, `y = (x − INPUT_CENTRE)·weight + bias` with `weight`
/// stored `in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Dense {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        Dense {
            weight: Tensor::from_raw(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeModel {
    pub config: ModelConfig,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    /// `m×q`
    pub prototypes: Tensor,
    /// `K×m`, no bias.
    pub classifier: Tensor,
}

/// Tape handles for every parameter of a model, in [`PrototypeModel::params`] order.
pub struct ModelVars {
    pub all: Vec<Var>,
    n_enc: usize,
    n_dec: usize,
}

impl ModelVars {
    fn encoder(&self, i: usize) -> (Var, Var) {
        (self.all[2 * i], self.all[2 * i + 1])
    }

    fn decoder(&self, i: usize) -> (Var, Var) {
        let o = 2 * self.n_enc;
        (self.all[o + 2 * i], self.all[o + 2 * i + 1])
    }

    pub fn prototypes(&self) -> Var {
        self.all[2 * (self.n_enc + self.n_dec)]
    }

    pub fn classifier(&self) -> Var {
        self.all[2 * (self.n_enc + self.n_dec) + 1]
    }
}

/// Argmax per row, ties to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            t.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

impl PrototypeModel {
    /// Glorot-uniform affine weights, zero biases, prototypes uniform in
    /// the unit cube and a classifier with `−1` linking prototype `j` to
    /// class `j mod K`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let widths = config.encoder_widths();
        let encoder: Vec<Dense> = widths
            .windows(2)
            .map(|w| Dense::init(&mut rng, w[0], w[1]))
            .collect();
        let decoder: Vec<Dense> = widths
            .iter()
            .rev()
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| Dense::init(&mut rng, *w[0], *w[1]))
            .collect();
        let (m, q, k) = (config.m, config.q, config.k);
        let prototypes = Tensor::from_raw(
            vec![m, q],
            (0..m * q).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        let mut classifier = Tensor::zeros(&[k, m]);
        for j in 0..m {
            classifier.data_mut()[(j % k) * m + j] = -1.0;
        }
        Ok(PrototypeModel {
            config,
            encoder,
            decoder,
            prototypes,
            classifier,
        })
    }

    /// All parameter tensors in checkpoint order: encoder (weight, bias)
    /// pairs, decoder pairs, prototypes, classifier.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for d in self.encoder.iter().chain(&self.decoder) {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.prototypes);
        v.push(&self.classifier);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for d in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.prototypes);
        v.push(&mut self.classifier);
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            all: self
                .params()
                .into_iter()
                .map(|t| tape.leaf(t.clone()))
                .collect(),
            n_enc: self.encoder.len(),
            n_dec: self.decoder.len(),
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, p) = batch.require_matrix("encode")?;
        if p != self.config.p {
            return Err(Error::Dimension {
                op: "encode",
                lhs: batch.shape().to_vec(),
                rhs: vec![self.config.p],
            });
        }
        if batch.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("input pixels must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn encode_on(&self, tape: &mut Tape, vars: &ModelVars, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.encoder.len() {
            let (w, b) = vars.encoder(i);
            h = tape.add_scalar(h, -INPUT_CENTRE)?;
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            h = tape.sigmoid(h)?;
        }
        Ok(h)
    }

    pub fn decode_on(&self, tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
        let mut h = z;
        for i in 0..self.decoder.len() {
            let (w, b) = vars.decoder(i);
            h = tape.add_scalar(h, -INPUT_CENTRE)?;
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            h = tape.sigmoid(h)?;
        }
        Ok(h)
    }

    /// Squared distances to the prototypes times the transposed classifier.
    pub fn logits_on(&self, tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
        let d = tape.pairwise_sq_dist(z, vars.prototypes())?;
        let wt = tape.transpose(vars.classifier())?;
        tape.matmul(d, wt)
    }

    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let x = tape.leaf(batch.clone());
        let z = self.encode_on(&mut tape, &vars, x)?;
        Ok(tape.value(z).clone())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let (_, q) = z.require_matrix("decode")?;
        if q != self.config.q {
            return Err(Error::Dimension {
                op: "decode",
                lhs: z.shape().to_vec(),
                rhs: vec![self.config.q],
            });
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = self.decode_on(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Logits for latent codes that are already computed.
    pub fn logits_from_latent(&self, z: &Tensor) -> Result<Tensor> {
        let d = crate::ndgrad::pairwise_sq_dist(z, &self.prototypes)?;
        d.matmul(&self.classifier.transpose()?)
    }

    pub fn classify(&self, batch: &Tensor) -> Result<Tensor> {
        self.logits_from_latent(&self.encode(batch)?)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.classify(batch)?))
    }

    /// Decoded prototypes, one image per row.
    pub fn decoded_prototypes(&self) -> Result<Tensor> {
        self.decode(&self.prototypes)
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params().iter().all(|t| t.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("model parameters became non-finite".into()))
        }
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [c.p, c.q, c.m, c.k, c.hidden.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for &h in &c.hidden {
            w.write_all(&(h as u32).to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.param_count() * 8);
        for t in self.params() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::validation("not a checkpoint (bad magic)"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let p = cur.u32()? as usize;
        let q = cur.u32()? as usize;
        let m = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let nh = cur.u32()? as usize;
        let hidden = (0..nh)
            .map(|_| cur.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let config = ModelConfig {
            p,
            q,
            m,
            k,
            hidden,
            seed,
        };
        config.validate()?;
        let mut model = PrototypeModel::init(config)?;
        for t in model.params_mut() {
            for v in t.data_mut() {
                *v = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::validation("trailing bytes after checkpoint payload"));
        }
        model.check_finite()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_checkpoint(&mut f)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::validation("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> PrototypeModel {
        let mut c = ModelConfig::new(64, 4, 3);
        c.q = 8;
        c.hidden = vec![32, 16, 12];
        c.seed = seed;
        PrototypeModel::init(c).unwrap()
    }

    fn random_batch(n: usize, p: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(
            n,
            p,
            (0..n * p).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn zeroed(mut m: PrototypeModel) -> PrototypeModel {
        for t in m.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let m = zeroed(tiny(1));
        let x = random_batch(3, 64, 2);
        let z = m.encode(&x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.5));
        let y = m.decode(&z).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn encode_is_deterministic_and_bounded() {
        let m = tiny(5);
        for s in 0..100 {
            let x = random_batch(2, 64, s);
            let a = m.encode(&x).unwrap();
            assert_eq!(a, m.encode(&x).unwrap());
            assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(m.classify(&x).unwrap().is_finite());
        }
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = tiny(1);
        assert!(matches!(
            m.encode(&Tensor::zeros(&[2, 63])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_classifier_predicts_class_zero() {
        let mut m = tiny(3);
        m.classifier = Tensor::zeros(&[3, 4]);
        let x = random_batch(5, 64, 9);
        let logits = m.classify(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&x).unwrap(), vec![0; 5]);
    }

    #[test]
    fn nearest_prototype_wins_with_negative_identity_classifier() {
        let mut c = ModelConfig::new(64, 3, 3);
        c.q = 8;
        c.hidden = vec![16];
        let mut m = PrototypeModel::init(c).unwrap();
        m.classifier = Tensor::identity(3);
        m.classifier.data_mut().iter_mut().for_each(|v| *v = -*v);
        let x = random_batch(1, 64, 4);
        let z = m.encode(&x).unwrap();
        // prototype 1 sits on the input's code, the others one-hot away
        let mut rows = Vec::new();
        for j in 0..3 {
            let mut r = z.row(0).to_vec();
            if j != 1 {
                r[j] += 1.0;
            }
            rows.push(r);
        }
        m.prototypes = Tensor::from_rows(&rows).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![1]);
    }

    #[test]
    fn init_round_robin_and_bounds() {
        let mut c = ModelConfig::new(20, 10, 3);
        c.q = 4;
        c.hidden = vec![8];
        let m = PrototypeModel::init(c.clone()).unwrap();
        let neg: Vec<usize> = (0..3)
            .map(|k| m.classifier.row(k).iter().filter(|&&v| v == -1.0).count())
            .collect();
        assert_eq!(neg, vec![4, 3, 3]);
        assert_eq!(
            m.classifier.data().iter().filter(|&&v| v != 0.0).count(),
            10
        );
        for d in m.encoder.iter().chain(&m.decoder) {
            let (i, o) = (d.weight.shape()[0], d.weight.shape()[1]);
            let a = (6.0 / (i + o) as f64).sqrt();
            assert!(d.weight.data().iter().all(|v| v.abs() <= a));
            assert!(d.bias.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(m, PrototypeModel::init(c).unwrap());
    }

    #[test]
    fn rejects_fewer_prototypes_than_classes() {
        assert!(PrototypeModel::init(ModelConfig::new(10, 2, 3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = tiny(77);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PDIV");
        let back = PrototypeModel::read_checkpoint(&mut buf.as_slice()).unwrap();
        let mut buf2 = Vec::new();
        back.write_checkpoint(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
        for (a, b) in m.params().iter().zip(back.params()) {
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        buf.truncate(buf.len() - 1);
        assert!(PrototypeModel::read_checkpoint(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let m = tiny(8);
        let x = random_batch(6, 64, 1);
        let perm = [3, 0, 5, 1, 4, 2];
        let a = m.classify(&x).unwrap();
        let b = m.classify(&x.select_rows(&perm).unwrap()).unwrap();
        assert_eq!(a.select_rows(&perm).unwrap(), b);
    }
}
