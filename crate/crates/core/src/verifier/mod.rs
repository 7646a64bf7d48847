//! Value-guided verifier.
//!
//! A context embedding attends over ten learned value embeddings (one per
//! Schwartz dimension, scaled by the agent's profile). The attended value
//! vector is concatenated with the action embedding and scored by a small
//! tanh MLP. Training minimizes the pairwise ranking loss
//! `-log sigmoid(s_chosen - s_rejected)` with full-batch gradient descent and
//! hand-derived gradients.

mod encoder;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{canonical_order, PreferencePair, ValueActivation, ValueProfile, NUM_VALUES};
use crate::seed;
use crate::topology::EmbeddingSet;

pub use encoder::{encode_text, HashedEncoder, TextEncoder};

pub const PARAMS_FORMAT: &str = "valgauge-verifier 1";
pub const DEFAULT_LR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifierError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite parameter in {0}")]
    NonFinite(String),
    #[error("chosen and rejected actions are identical")]
    DegeneratePair,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed params file at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out × in
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierParams {
    /// 10 × d, one row per value dimension in canonical order.
    pub value_table: DMatrix<f64>,
    pub attn_q: DMatrix<f64>,
    pub attn_k: DMatrix<f64>,
    pub attn_v: DMatrix<f64>,
    /// 2d → 2d → d → 1.
    pub mlp: Vec<Layer>,
}

fn layer_shapes(d: usize) -> [(usize, usize); 3] {
    [(2 * d, 2 * d), (d, 2 * d), (1, d)]
}

impl VerifierParams {
    pub fn zeros(d: usize) -> Self {
        VerifierParams {
            value_table: DMatrix::zeros(NUM_VALUES, d),
            attn_q: DMatrix::zeros(d, d),
            attn_k: DMatrix::zeros(d, d),
            attn_v: DMatrix::zeros(d, d),
            mlp: layer_shapes(d)
                .iter()
                .map(|&(o, i)| Layer {
                    weight: DMatrix::zeros(o, i),
                    bias: DVector::zeros(o),
                })
                .collect(),
        }
    }

    /// Seeded initialization: value table uniform in [-1, 1], every weight
    /// matrix uniform in ±1/sqrt(fan_in), biases zero.
    pub fn random(d: usize, seed: u64) -> Self {
        assert!(d >= 2, "verifier width must be at least 2");
        let mut p = VerifierParams::zeros(d);
        let mut rng = seed::rng(seed, "verifier-init");
        let mut fill = |m: &mut DMatrix<f64>, bound: f64| {
            // Row-major draw order so the stream does not depend on storage layout.
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    m[(r, c)] = rng.random_range(-bound..=bound);
                }
            }
        };
        fill(&mut p.value_table, 1.0);
        let b = 1.0 / (d as f64).sqrt();
        fill(&mut p.attn_q, b);
        fill(&mut p.attn_k, b);
        fill(&mut p.attn_v, b);
        for layer in &mut p.mlp {
            let bound = 1.0 / (layer.weight.ncols() as f64).sqrt();
            fill(&mut layer.weight, bound);
        }
        p
    }

    pub fn width(&self) -> usize {
        self.value_table.ncols()
    }

    pub fn validate(&self) -> Result<(), VerifierError> {
        let d = self.width();
        let mismatch = |what: &str| Err(VerifierError::ShapeMismatch(what.to_string()));
        if d < 2 || self.value_table.nrows() != NUM_VALUES {
            return mismatch("value_table must be 10 x d with d >= 2");
        }
        for (name, m) in [
            ("attn_q", &self.attn_q),
            ("attn_k", &self.attn_k),
            ("attn_v", &self.attn_v),
        ] {
            if m.shape() != (d, d) {
                return mismatch(name);
            }
        }
        if self.mlp.len() != 3 {
            return mismatch("mlp must have 3 layers");
        }
        for (i, (layer, &(o, inp))) in self.mlp.iter().zip(layer_shapes(d).iter()).enumerate() {
            if layer.weight.shape() != (o, inp) || layer.bias.len() != o {
                return mismatch(&format!("mlp.{i}"));
            }
        }
        for (name, block) in self.blocks() {
            if block.iter().any(|x| !x.is_finite()) {
                return Err(VerifierError::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Every parameter block with its name. Order matches the text format.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("value_table".into(), self.value_table.as_slice()),
            ("attn_q".into(), self.attn_q.as_slice()),
            ("attn_k".into(), self.attn_k.as_slice()),
            ("attn_v".into(), self.attn_v.as_slice()),
        ];
        for (i, l) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{i}.weight"), l.weight.as_slice()));
            out.push((format!("mlp.{i}.bias"), l.bias.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("value_table".into(), self.value_table.as_mut_slice()),
            ("attn_q".into(), self.attn_q.as_mut_slice()),
            ("attn_k".into(), self.attn_k.as_mut_slice()),
            ("attn_v".into(), self.attn_v.as_mut_slice()),
        ];
        for (i, l) in self.mlp.iter_mut().enumerate() {
            out.push((format!("mlp.{i}.weight"), l.weight.as_mut_slice()));
            out.push((format!("mlp.{i}.bias"), l.bias.as_mut_slice()));
        }
        out
    }

    fn axpy(&mut self, alpha: f64, other: &VerifierParams) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    /// Text form: format line, width line, then for each block a
    /// `name rows cols` header followed by its rows. Values are written in
    /// shortest round-trip form, so parsing restores them exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{PARAMS_FORMAT}\nwidth {}\n", self.width());
        let mut put = |name: &str, rows: usize, cols: usize, at: &dyn Fn(usize, usize) -> f64| {
            let _ = writeln!(out, "{name} {rows} {cols}");
            for r in 0..rows {
                let row: Vec<String> = (0..cols).map(|c| format!("{}", at(r, c))).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        };
        for (name, m) in [
            ("value_table", &self.value_table),
            ("attn_q", &self.attn_q),
            ("attn_k", &self.attn_k),
            ("attn_v", &self.attn_v),
        ] {
            put(name, m.nrows(), m.ncols(), &|r, c| m[(r, c)]);
        }
        for (i, l) in self.mlp.iter().enumerate() {
            let w = &l.weight;
            put(&format!("mlp.{i}.weight"), w.nrows(), w.ncols(), &|r, c| w[(r, c)]);
            let b = &l.bias;
            put(&format!("mlp.{i}.bias"), 1, b.len(), &|_, c| b[c]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VerifierError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, reason: &str| VerifierError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let (n, first) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        if first.trim() != PARAMS_FORMAT {
            return Err(err(n, "unknown format line"));
        }
        let (n, wline) = lines.next().ok_or_else(|| err(n, "missing width"))?;
        let d: usize = wline
            .trim()
            .strip_prefix("width ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err(n, "bad width line"))?;
        if d < 2 {
            return Err(err(n, "width must be at least 2"));
        }
        let mut p = VerifierParams::zeros(d);
        let expected: Vec<(String, usize, usize)> = {
            let mut v = vec![
                ("value_table".to_string(), NUM_VALUES, d),
                ("attn_q".to_string(), d, d),
                ("attn_k".to_string(), d, d),
                ("attn_v".to_string(), d, d),
            ];
            for (i, (o, inp)) in layer_shapes(d).into_iter().enumerate() {
                v.push((format!("mlp.{i}.weight"), o, inp));
                v.push((format!("mlp.{i}.bias"), 1, o));
            }
            v
        };
        for (name, rows, cols) in expected {
            let (n, header) = lines.next().ok_or_else(|| err(usize::MAX - 1, "truncated file"))?;
            let want = format!("{name} {rows} {cols}");
            if header.split_whitespace().collect::<Vec<_>>().join(" ") != want {
                return Err(err(n, &format!("expected header `{want}`")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, row) = lines.next().ok_or_else(|| err(n, "truncated block"))?;
                let parsed = row
                    .split_whitespace()
                    .map(|f| f.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(n, &e.to_string()))?;
                if parsed.len() != cols {
                    return Err(err(n, "wrong column count"));
                }
                values.extend(parsed);
            }
            let m = DMatrix::from_row_slice(rows, cols, &values);
            match name.as_str() {
                "value_table" => p.value_table = m,
                "attn_q" => p.attn_q = m,
                "attn_k" => p.attn_k = m,
                "attn_v" => p.attn_v = m,
                other => {
                    let i: usize = other[4..5].parse().expect("layer index");
                    if other.ends_with("weight") {
                        p.mlp[i].weight = m;
                    } else {
                        p.mlp[i].bias = DVector::from_vec(values);
                    }
                }
            }
        }
        if let Some((n, _)) = lines.next() {
            return Err(err(n, "trailing content"));
        }
        p.validate()?;
        Ok(p)
    }
}

/// The learned value embeddings, labelled, in the layout topology reads.
pub fn export_value_embeddings(params: &VerifierParams) -> EmbeddingSet {
    let labels = canonical_order().to_vec();
    let vectors = (0..NUM_VALUES)
        .map(|k| params.value_table.row(k).iter().copied().collect())
        .collect();
    EmbeddingSet::new(labels, vectors).expect("value table is 10 x d with d >= 2")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub refined: Vec<f64>,
    pub activation: ValueActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierScore {
    pub score: f64,
    pub activation: ValueActivation,
}

struct Forward {
    s: [f64; NUM_VALUES],
    u: Vec<DVector<f64>>,
    q: DVector<f64>,
    keys: Vec<DVector<f64>>,
    vals: Vec<DVector<f64>>,
    a: [f64; NUM_VALUES],
    x: DVector<f64>,
    h1: DVector<f64>,
    h2: DVector<f64>,
    score: f64,
}

fn check_input(params: &VerifierParams, v: &[f64], what: &str) -> Result<(), VerifierError> {
    if v.len() != params.width() {
        return Err(VerifierError::ShapeMismatch(format!(
            "{what} has width {}, params expect {}",
            v.len(),
            params.width()
        )));
    }
    Ok(())
}

fn softmax(logits: &[f64; NUM_VALUES]) -> [f64; NUM_VALUES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|l| (l - max).exp());
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

fn attend(params: &VerifierParams, e_c: &[f64], profile: &ValueProfile) -> Forward {
    let d = params.width();
    let scale = 1.0 / (d as f64).sqrt();
    let s = profile.scores().map(|v| (v + 1.0) / 2.0);
    let q = &params.attn_q * DVector::from_column_slice(e_c);
    let u: Vec<DVector<f64>> = (0..NUM_VALUES)
        .map(|k| params.value_table.row(k).transpose() * s[k])
        .collect();
    let keys: Vec<DVector<f64>> = u.iter().map(|uk| &params.attn_k * uk).collect();
    let vals: Vec<DVector<f64>> = u.iter().map(|uk| &params.attn_v * uk).collect();
    let mut logits = [0.0; NUM_VALUES];
    for k in 0..NUM_VALUES {
        logits[k] = q.dot(&keys[k]) * scale;
    }
    let a = softmax(&logits);
    let mut r = DVector::zeros(d);
    for k in 0..NUM_VALUES {
        r.axpy(a[k], &vals[k], 1.0);
    }
    let x = DVector::from_iterator(2 * d, r.iter().copied().chain(std::iter::repeat_n(0.0, d)));
    Forward {
        s,
        u,
        q,
        keys,
        vals,
        a,
        x,
        h1: DVector::zeros(0),
        h2: DVector::zeros(0),
        score: 0.0,
    }
}

fn head(params: &VerifierParams, f: &mut Forward, e_a: &[f64]) {
    let d = params.width();
    f.x.rows_mut(d, d).copy_from_slice(e_a);
    let l = &params.mlp;
    f.h1 = (&l[0].weight * &f.x + &l[0].bias).map(f64::tanh);
    f.h2 = (&l[1].weight * &f.h1 + &l[1].bias).map(f64::tanh);
    f.score = (&l[2].weight * &f.h2 + &l[2].bias)[0];
}

fn forward(params: &VerifierParams, e_c: &[f64], e_a: &[f64], profile: &ValueProfile) -> Forward {
    let mut f = attend(params, e_c, profile);
    head(params, &mut f, e_a);
    f
}

fn activation_of(a: &[f64; NUM_VALUES]) -> ValueActivation {
    // Softmax output is in (0, 1]; clamp guards against the last ulp.
    let clamped: Vec<f64> = a.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    ValueActivation::new(&clamped).expect("softmax weights lie in [0, 1]")
}

pub fn cross_attention(
    params: &VerifierParams,
    e_c: &[f64],
    profile: &ValueProfile,
) -> Result<Attention, VerifierError> {
    params.validate()?;
    check_input(params, e_c, "context embedding")?;
    let f = attend(params, e_c, profile);
    let d = params.width();
    Ok(Attention {
        refined: f.x.rows(0, d).iter().copied().collect(),
        activation: activation_of(&f.a),
    })
}

/// Score from precomputed embeddings.
pub fn score_embedded(
    params: &VerifierParams,
    e_a: &[f64],
    e_c: &[f64],
    profile: &ValueProfile,
) -> Result<VerifierScore, VerifierError> {
    params.validate()?;
    check_input(params, e_c, "context embedding")?;
    check_input(params, e_a, "action embedding")?;
    let f = forward(params, e_c, e_a, profile);
    Ok(VerifierScore {
        score: f.score,
        activation: activation_of(&f.a),
    })
}

pub fn score(
    params: &VerifierParams,
    encoder: &dyn TextEncoder,
    action: &str,
    context: &str,
    profile: &ValueProfile,
) -> Result<VerifierScore, VerifierError> {
    score_embedded(params, &encoder.encode(action), &encoder.encode(context), profile)
}

/// `-log sigmoid(margin)`, stable for large |margin|.
pub fn pair_loss(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One training pair in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<f64>,
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub profile: ValueProfile,
}

impl TrainingExample {
    pub fn from_pair(pair: &PreferencePair, encoder: &dyn TextEncoder) -> Result<Self, VerifierError> {
        if pair.chosen == pair.rejected {
            return Err(VerifierError::DegeneratePair);
        }
        Ok(TrainingExample {
            context: encoder.encode(&pair.context_text),
            chosen: encoder.encode(&pair.chosen),
            rejected: encoder.encode(&pair.rejected),
            profile: pair.value_profile,
        })
    }

    fn check(&self, params: &VerifierParams) -> Result<(), VerifierError> {
        check_input(params, &self.context, "context embedding")?;
        check_input(params, &self.chosen, "chosen embedding")?;
        check_input(params, &self.rejected, "rejected embedding")
    }
}

pub fn ranking_loss(params: &VerifierParams, ex: &TrainingExample) -> Result<f64, VerifierError> {
    params.validate()?;
    ex.check(params)?;
    Ok(example_loss(params, ex))
}

fn example_loss(params: &VerifierParams, ex: &TrainingExample) -> f64 {
    let mut f = attend(params, &ex.context, &ex.profile);
    head(params, &mut f, &ex.chosen);
    let sw = f.score;
    head(params, &mut f, &ex.rejected);
    pair_loss(sw - f.score)
}

/// Accumulate d(score)/d(params) · ds into `g`.
fn backward(params: &VerifierParams, f: &Forward, e_c: &[f64], ds: f64, g: &mut VerifierParams) {
    let d = params.width();
    let l = &params.mlp;

    g.mlp[2].weight.ger(ds, &DVector::from_element(1, 1.0), &f.h2, 1.0);
    g.mlp[2].bias[0] += ds;
    let dz2 = (l[2].weight.transpose() * ds)
        .column(0)
        .component_mul(&f.h2.map(|h| 1.0 - h * h));
    g.mlp[1].weight.ger(1.0, &dz2, &f.h1, 1.0);
    g.mlp[1].bias += &dz2;
    let dz1 = (l[1].weight.transpose() * &dz2).component_mul(&f.h1.map(|h| 1.0 - h * h));
    g.mlp[0].weight.ger(1.0, &dz1, &f.x, 1.0);
    g.mlp[0].bias += &dz1;
    let dx = l[0].weight.transpose() * &dz1;
    let dr = dx.rows(0, d).into_owned();

    let scale = 1.0 / (d as f64).sqrt();
    let da: [f64; NUM_VALUES] = std::array::from_fn(|k| dr.dot(&f.vals[k]));
    let mean_da: f64 = (0..NUM_VALUES).map(|k| f.a[k] * da[k]).sum();
    let mut dq = DVector::zeros(d);
    for (k, &da_k) in da.iter().enumerate() {
        let dlogit = f.a[k] * (da_k - mean_da);
        dq.axpy(dlogit * scale, &f.keys[k], 1.0);
        let dkey = &f.q * (dlogit * scale);
        let dval = &dr * f.a[k];
        g.attn_k.ger(1.0, &dkey, &f.u[k], 1.0);
        g.attn_v.ger(1.0, &dval, &f.u[k], 1.0);
        let du = params.attn_k.tr_mul(&dkey) + params.attn_v.tr_mul(&dval);
        let mut row = g.value_table.row_mut(k);
        row += du.transpose() * f.s[k];
    }
    g.attn_q.ger(1.0, &dq, &DVector::from_column_slice(e_c), 1.0);
}

fn example_gradient(params: &VerifierParams, ex: &TrainingExample, g: &mut VerifierParams) -> f64 {
    let fw = forward(params, &ex.context, &ex.chosen, &ex.profile);
    let fl = forward(params, &ex.context, &ex.rejected, &ex.profile);
    let margin = fw.score - fl.score;
    // dL/dmargin = -sigmoid(-margin)
    let dm = -sigmoid(-margin);
    backward(params, &fw, &ex.context, dm, g);
    backward(params, &fl, &ex.context, -dm, g);
    pair_loss(margin)
}

const CHUNK: usize = 32;

/// Mean ranking loss over the batch and its gradient. Chunks are summed in a
/// fixed order, so the result does not depend on thread scheduling.
pub fn loss_and_gradient(
    params: &VerifierParams,
    examples: &[TrainingExample],
) -> Result<(f64, VerifierParams), VerifierError> {
    if examples.is_empty() {
        return Err(VerifierError::EmptyDataset);
    }
    params.validate()?;
    for ex in examples {
        ex.check(params)?;
    }
    let d = params.width();
    let partial: Vec<(f64, VerifierParams)> = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = VerifierParams::zeros(d);
            let loss = chunk.iter().map(|ex| example_gradient(params, ex, &mut g)).sum::<f64>();
            (loss, g)
        })
        .collect();
    let mut grad = VerifierParams::zeros(d);
    let mut loss = 0.0;
    for (l, g) in &partial {
        loss += l;
        grad.axpy(1.0, g);
    }
    let n = examples.len() as f64;
    grad.blocks_mut()
        .into_iter()
        .for_each(|(_, b)| b.iter_mut().for_each(|x| *x /= n));
    Ok((loss / n, grad))
}

pub fn mean_loss(params: &VerifierParams, examples: &[TrainingExample]) -> Result<f64, VerifierError> {
    if examples.is_empty() {
        return Err(VerifierError::EmptyDataset);
    }
    params.validate()?;
    for ex in examples {
        ex.check(params)?;
    }
    let total: f64 = examples.iter().map(|ex| example_loss(params, ex)).sum();
    Ok(total / examples.len() as f64)
}

/// Fraction of pairs where the chosen action outscores the rejected one.
pub fn pairwise_accuracy(params: &VerifierParams, examples: &[TrainingExample]) -> Result<f64, VerifierError> {
    if examples.is_empty() {
        return Err(VerifierError::EmptyDataset);
    }
    params.validate()?;
    let mut hits = 0usize;
    for ex in examples {
        ex.check(params)?;
        let mut f = attend(params, &ex.context, &ex.profile);
        head(params, &mut f, &ex.chosen);
        let sw = f.score;
        head(params, &mut f, &ex.rejected);
        if sw > f.score {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: DEFAULT_LR,
            epochs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: VerifierParams,
    /// Mean loss before each update, followed by the final loss.
    pub losses: Vec<f64>,
}

pub fn train(
    init: VerifierParams,
    examples: &[TrainingExample],
    cfg: TrainConfig,
) -> Result<TrainOutcome, VerifierError> {
    let mut params = init;
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = loss_and_gradient(&params, examples)?;
        if !loss.is_finite() {
            return Err(VerifierError::NonFiniteLoss { epoch });
        }
        losses.push(loss);
        params.axpy(-cfg.lr, &grad);
        if params.validate().is_err() {
            return Err(VerifierError::NonFiniteLoss { epoch: epoch + 1 });
        }
    }
    let last = mean_loss(&params, examples)?;
    if !last.is_finite() {
        return Err(VerifierError::NonFiniteLoss { epoch: cfg.epochs });
    }
    losses.push(last);
    Ok(TrainOutcome { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rand_profile(rng: &mut ChaCha8Rng) -> ValueProfile {
        crate::domain::validate_profile(&rand_vec(rng, NUM_VALUES)).unwrap()
    }

    fn example(rng: &mut ChaCha8Rng, d: usize) -> TrainingExample {
        TrainingExample {
            context: rand_vec(rng, d),
            chosen: rand_vec(rng, d),
            rejected: rand_vec(rng, d),
            profile: rand_profile(rng),
        }
    }

    #[test]
    fn zero_network_scores_zero() {
        let p = VerifierParams::zeros(4);
        let prof = ValueProfile::neutral();
        let s = score_embedded(&p, &[1.0, 2.0, 3.0, 4.0], &[0.5; 4], &prof).unwrap();
        assert_eq!(s.score, 0.0);
        for w in s.activation.weights() {
            assert!((w - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_attention() {
        // d = 2. Only rows 0 and 1 of the table are non-zero; the profile puts
        // both at full strength and every other value at zero, so the other
        // eight keys vanish and carry logit 0.
        let mut p = VerifierParams::zeros(2);
        p.value_table[(0, 0)] = 1.0;
        p.value_table[(1, 1)] = 1.0;
        p.attn_q = DMatrix::identity(2, 2);
        p.attn_k = DMatrix::identity(2, 2);
        p.attn_v = DMatrix::identity(2, 2);
        let mut scores = [-1.0; NUM_VALUES];
        scores[0] = 1.0;
        scores[1] = 1.0;
        let prof = crate::domain::validate_profile(&scores).unwrap();
        let e_c = [2.0_f64.sqrt(), 0.0];
        // logit_0 = q·k_0/sqrt(2) = 1, every other logit 0.
        let z = std::f64::consts::E + 9.0;
        let att = cross_attention(&p, &e_c, &prof).unwrap();
        let w = att.activation.weights();
        assert!((w[0] - std::f64::consts::E / z).abs() < 1e-15);
        assert!((w[1] - 1.0 / z).abs() < 1e-15);
        assert!((att.refined[0] - std::f64::consts::E / z).abs() < 1e-15);
        assert!((att.refined[1] - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = VerifierParams::random(4, 1);
        let prof = ValueProfile::neutral();
        assert!(matches!(
            score_embedded(&p, &[0.0; 3], &[0.0; 4], &prof),
            Err(VerifierError::ShapeMismatch(_))
        ));
        let mut bad = p.clone();
        bad.attn_q = DMatrix::zeros(3, 4);
        assert!(matches!(bad.validate(), Err(VerifierError::ShapeMismatch(_))));
    }

    #[test]
    fn pair_loss_values() {
        assert!((pair_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(pair_loss(50.0) < 1e-20);
        let direct = -(1.0 / (1.0 + 1.0_f64.exp())).ln();
        assert!((pair_loss(-1.0) - direct).abs() < 1e-12);
        assert!((pair_loss(-1.0) - 1.313_261_687_518_222_7).abs() < 1e-12);
        assert!(pair_loss(-800.0).is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let params = VerifierParams::random(d, 11);
        let exs: Vec<_> = (0..3).map(|_| example(&mut rng, d)).collect();
        let (_, grad) = loss_and_gradient(&params, &exs).unwrap();
        let h = 1e-5;
        let grad_blocks = grad.blocks();
        for (bi, (name, _)) in params.blocks().iter().enumerate() {
            for j in 0..grad_blocks[bi].1.len() {
                let mut plus = params.clone();
                plus.blocks_mut()[bi].1[j] += h;
                let mut minus = params.clone();
                minus.blocks_mut()[bi].1[j] -= h;
                let num = (mean_loss(&plus, &exs).unwrap() - mean_loss(&minus, &exs).unwrap()) / (2.0 * h);
                let ana = grad_blocks[bi].1[j];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{j}]: analytic {ana} numeric {num}");
            }
        }
    }

    #[test]
    fn identical_embeddings_keep_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let exs: Vec<_> = (0..5)
            .map(|_| {
                let a = rand_vec(&mut rng, d);
                TrainingExample {
                    context: rand_vec(&mut rng, d),
                    chosen: a.clone(),
                    rejected: a,
                    profile: rand_profile(&mut rng),
                }
            })
            .collect();
        let out = train(VerifierParams::random(d, 3), &exs, TrainConfig { lr: 0.1, epochs: 20 }).unwrap();
        for l in out.losses {
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = VerifierParams::random(5, 42);
        let text = p.to_text();
        let back = VerifierParams::from_text(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_text(), text);
        assert!(matches!(
            VerifierParams::from_text("valgauge-verifier 1\nwidth 5\n"),
            Err(VerifierError::Parse { .. })
        ));
    }

    #[test]
    fn export_shape_and_determinism() {
        let p = VerifierParams::random(6, 7);
        let e = export_value_embeddings(&p);
        assert_eq!(e.labels().len(), 10);
        assert_eq!(e.width(), 6);
        assert_eq!(e, export_value_embeddings(&VerifierParams::random(6, 7)));
        assert_eq!(EmbeddingSet::from_tsv(&e.to_tsv()).unwrap(), e);
    }

    #[test]
    fn degenerate_text_pair_rejected() {
        let pair = PreferencePair {
            record_id: "r".into(),
            context_text: "c".into(),
            value_profile: ValueProfile::neutral(),
            chosen: "same".into(),
            rejected: "same".into(),
            chosen_score: 1.0,
            rejected_score: 1.0,
            degenerate: true,
        };
        assert_eq!(
            TrainingExample::from_pair(&pair, &HashedEncoder::new(4, 0)),
            Err(VerifierError::DegeneratePair)
        );
    }

    #[test]
    fn training_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 4;
        let exs: Vec<_> = (0..16).map(|_| example(&mut rng, d)).collect();
        let out = train(VerifierParams::random(d, 1), &exs, TrainConfig { lr: 0.05, epochs: 50 }).unwrap();
        assert!(out.losses.last().unwrap() < out.losses.first().unwrap());
        assert_eq!(out.losses.len(), 51);
    }
}
