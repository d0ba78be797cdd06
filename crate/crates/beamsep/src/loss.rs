//! Per-stream recognition losses and permutation resolution.
//!
//! The CTC loss is a log-space forward pass over the blank-augmented label
//! lattice with an exact gradient from the forward-backward recursion. Stream
//! to reference assignment is resolved by exhaustive search over all J!
//! permutations of the per-pair CTC losses, and the total training loss
//! interpolates the CTC and attention sums under that single assignment.
//!
//! The encoder/decoder that would produce logits and attention losses lives
//! behind interfaces: any per-frame logit source and any
//! [`AttentionLossProvider`] plug in.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Token index reserved for the CTC blank.
pub const BLANK: usize = 0;

/// Maximum J for exhaustive permutation search.
pub const MAX_PIT_STREAMS: usize = 8;

/// Reference token sequence. Tokens are in `[1, vocab_size)`; the blank
/// index 0 never appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub tokens: Vec<usize>,
    pub vocab_size: usize,
}

impl LabelSequence {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidInput("vocab_size must be positive".into()));
        }
        for &t in &tokens {
            if t == BLANK || t >= vocab_size {
                return Err(Error::InvalidInput(format!(
                    "label token {t} outside [1, {})",
                    vocab_size
                )));
            }
        }
        Ok(LabelSequence { tokens, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-frame pre-softmax scores, `(frames, vocab)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence {
    pub data: Array2<f64>,
}

impl LogitSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidInput("logits need at least one frame".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        Ok(LogitSequence { data })
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.data.ncols()
    }
}

/// CTC loss value with its exact gradient w.r.t. the logits. Instances whose
/// label sequence cannot fit in the frame count are flagged infeasible and
/// carry `+inf` loss with a zero gradient so PIT can exclude them.
#[derive(Debug, Clone)]
pub struct CtcOutcome {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub feasible: bool,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Shortest frame count that can emit the labels: every token needs a frame,
/// plus a separating blank between adjacent repeats.
fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` under per-frame softmax distributions,
/// with the gradient of the loss w.r.t. the raw logits.
pub fn ctc_loss(logits: &LogitSequence, labels: &LabelSequence) -> Result<CtcOutcome> {
    let t_len = logits.num_frames();
    let v = logits.vocab_size();
    if labels.vocab_size != v {
        return Err(Error::ShapeMismatch(format!(
            "labels assume vocab {}, logits have {v}",
            labels.vocab_size
        )));
    }

    if t_len < min_frames(&labels.tokens) {
        return Ok(CtcOutcome {
            loss: f64::INFINITY,
            grad: Array2::zeros((t_len, v)),
            feasible: false,
        });
    }

    let log_probs = log_softmax(&logits.data);

    // blank-augmented lattice: blank, l1, blank, l2, ..., lN, blank
    let n = labels.len();
    let s_len = 2 * n + 1;
    let lattice: Vec<usize> = (0..s_len)
        .map(|s| {
            if s % 2 == 0 {
                BLANK
            } else {
                labels.tokens[s / 2]
            }
        })
        .collect();

    let neg = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((t_len, s_len), neg);
    alpha[(0, 0)] = log_probs[(0, BLANK)];
    if s_len > 1 {
        alpha[(0, 1)] = log_probs[(0, lattice[1])];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut terms = vec![alpha[(t - 1, s)]];
            if s >= 1 {
                terms.push(alpha[(t - 1, s - 1)]);
            }
            if s >= 2 && lattice[s] != BLANK && lattice[s] != lattice[s - 2] {
                terms.push(alpha[(t - 1, s - 2)]);
            }
            let inc = log_sum_exp(&terms);
            if inc != neg {
                alpha[(t, s)] = inc + log_probs[(t, lattice[s])];
            }
        }
    }

    let log_p = if s_len > 1 {
        log_sum_exp(&[alpha[(t_len - 1, s_len - 1)], alpha[(t_len - 1, s_len - 2)]])
    } else {
        alpha[(t_len - 1, 0)]
    };
    if log_p == neg {
        // alignments exist but all have probability zero in f64; treat as
        // infeasible to keep the gradient well defined
        return Ok(CtcOutcome {
            loss: f64::INFINITY,
            grad: Array2::zeros((t_len, v)),
            feasible: false,
        });
    }

    // backward pass: beta[t][s] covers emissions strictly after frame t
    let mut beta = Array2::from_elem((t_len, s_len), neg);
    beta[(t_len - 1, s_len - 1)] = 0.0;
    if s_len > 1 {
        beta[(t_len - 1, s_len - 2)] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut terms = vec![beta[(t + 1, s)] + log_probs[(t + 1, lattice[s])]];
            if s + 1 < s_len {
                terms.push(beta[(t + 1, s + 1)] + log_probs[(t + 1, lattice[s + 1])]);
            }
            if s + 2 < s_len && lattice[s + 2] != BLANK && lattice[s + 2] != lattice[s] {
                terms.push(beta[(t + 1, s + 2)] + log_probs[(t + 1, lattice[s + 2])]);
            }
            beta[(t, s)] = log_sum_exp(&terms);
        }
    }

    // grad = softmax - posterior occupancy per vocabulary entry
    let mut grad = Array2::zeros((t_len, v));
    for t in 0..t_len {
        let mut occupancy = vec![neg; v];
        for s in 0..s_len {
            let g = alpha[(t, s)] + beta[(t, s)];
            if g != neg {
                occupancy[lattice[s]] = log_sum_exp(&[occupancy[lattice[s]], g]);
            }
        }
        for token in 0..v {
            let posterior = if occupancy[token] == neg {
                0.0
            } else {
                (occupancy[token] - log_p).exp()
            };
            grad[(t, token)] = log_probs[(t, token)].exp() - posterior;
        }
    }

    Ok(CtcOutcome {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// Square matrix of per-pair losses: entry `(i, k)` scores output stream `i`
/// against reference `k`. Entries may be `+inf` (infeasible pairs) but never
/// NaN.
#[derive(Debug, Clone)]
pub struct LossMatrix {
    pub data: Array2<f64>,
}

impl LossMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "loss matrix must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidInput("loss matrix contains NaN".into()));
        }
        Ok(LossMatrix { data })
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }
}

/// A bijection on stream indices: stream `i` is scored against reference
/// `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Permutation {
    pub map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::InvalidInput(format!("{map:?} is not a permutation")));
            }
            seen[m] = true;
        }
        Ok(Permutation { map })
    }

    pub fn apply(&self, stream: usize) -> usize {
        self.map[stream]
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn permutations_lex(n: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for idx in 0..remaining.len() {
            let v = remaining.remove(idx);
            prefix.push(v);
            rec(remaining, prefix, out);
            prefix.pop();
            remaining.insert(idx, v);
        }
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&mut remaining, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive argmin over all J! assignments. Equal-cost permutations break
/// toward the lexicographically smallest mapping.
pub fn pit_resolve(losses: &LossMatrix) -> Result<(Permutation, f64)> {
    let j = losses.size();
    if j == 0 {
        return Err(Error::InvalidInput("empty loss matrix".into()));
    }
    if j > MAX_PIT_STREAMS {
        return Err(Error::InvalidInput(format!(
            "exhaustive permutation search supports at most {MAX_PIT_STREAMS} streams, got {j}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations_lex(j) {
        let total: f64 = perm
            .iter()
            .enumerate()
            .map(|(i, &k)| losses.data[(i, k)])
            .sum();
        match &best {
            Some((_, t)) if total >= *t => {}
            _ => best = Some((perm, total)),
        }
    }
    let (map, total) = best.expect("at least one permutation exists");
    Ok((Permutation::new(map)?, total))
}

/// Interpolation factor between the CTC and attention sums.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 0.2 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        Ok(LossConfig { lambda })
    }
}

/// Total loss `lambda * sum_i ctc[i, perm(i)] + (1 - lambda) * sum_i
/// att[i, perm(i)]`. The same permutation — the one chosen on CTC losses —
/// indexes both sums.
pub fn combined_loss(
    ctc: &LossMatrix,
    att: &LossMatrix,
    perm: &Permutation,
    cfg: &LossConfig,
) -> Result<f64> {
    LossConfig::new(cfg.lambda)?;
    let j = ctc.size();
    if att.size() != j || perm.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "ctc {}x{0}, att {}x{1}, permutation of {}",
            j,
            att.size(),
            perm.len()
        )));
    }
    let ctc_sum: f64 = (0..j).map(|i| ctc.data[(i, perm.apply(i))]).sum();
    let att_sum: f64 = (0..j).map(|i| att.data[(i, perm.apply(i))]).sum();
    Ok(cfg.lambda * ctc_sum + (1.0 - cfg.lambda) * att_sum)
}

/// Attention-branch loss abstraction: scores one feature stream against one
/// reference. The real encoder-decoder is out of scope; any provider works.
pub trait AttentionLossProvider {
    fn loss(&self, features: &FeatureMatrix, labels: &LabelSequence) -> Result<f64>;
}

/// Reference provider: cross-entropy of a uniform predictor, `N * ln(V)`.
/// Exists purely to exercise the interpolation plumbing.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPredictorLoss;

impl AttentionLossProvider for UniformPredictorLoss {
    fn loss(&self, _features: &FeatureMatrix, labels: &LabelSequence) -> Result<f64> {
        Ok(labels.len() as f64 * (labels.vocab_size as f64).ln())
    }
}

/// Evaluate a provider over every (stream, reference) pair. Provider failures
/// surface with the offending stream index attached.
pub fn attention_loss_matrix(
    provider: &dyn AttentionLossProvider,
    features: &[FeatureMatrix],
    refs: &[LabelSequence],
) -> Result<LossMatrix> {
    let j = features.len();
    if refs.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "{j} feature streams vs {} references",
            refs.len()
        )));
    }
    let mut data = Array2::zeros((j, j));
    for (i, feat) in features.iter().enumerate() {
        for (k, labels) in refs.iter().enumerate() {
            data[(i, k)] = provider
                .loss(feat, labels)
                .map_err(|e| Error::AttentionProvider {
                    stream: i,
                    message: e.to_string(),
                })?;
        }
    }
    LossMatrix::new(data)
}

/// JSON-serializable record of one permutation-resolved loss computation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub per_stream_ctc: Vec<Vec<f64>>,
    pub chosen_perm: Vec<usize>,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(
        ctc: &LossMatrix,
        att: &LossMatrix,
        perm: &Permutation,
        cfg: &LossConfig,
    ) -> Result<Self> {
        let total = combined_loss(ctc, att, perm, cfg)?;
        let j = ctc.size();
        Ok(LossReport {
            per_stream_ctc: (0..j)
                .map(|i| (0..j).map(|k| ctc.data[(i, k)]).collect())
                .collect(),
            chosen_perm: perm.map.clone(),
            lambda: cfg.lambda,
            total,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loss report serialization cannot fail")
    }
}

/// Evaluate CTC losses over every (stream, reference) pair.
pub fn ctc_loss_matrix(logits: &[LogitSequence], refs: &[LabelSequence]) -> Result<LossMatrix> {
    let j = logits.len();
    if refs.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "{j} logit streams vs {} references",
            refs.len()
        )));
    }
    let mut data = Array2::zeros((j, j));
    for (i, z) in logits.iter().enumerate() {
        for (k, labels) in refs.iter().enumerate() {
            data[(i, k)] = ctc_loss(z, labels)?.loss;
        }
    }
    LossMatrix::new(data)
}
