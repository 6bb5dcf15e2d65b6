//! Monte-Carlo EXIT-chart analysis of WNRMA iterative decoding on the q-ary
//! symmetric channel: symbol MAP decoding of the accumulator and repetition
//! constituents, random-weighter handling, symbol-wise mutual-information
//! estimation, and the tunnel-based threshold search.
//!
//! Blocks are independent Monte-Carlo units with per-block RNG streams
//! derived from the master seed, so results do not depend on the worker
//! count. The a-priori message model is configurable ([`AprioriModel`]);
//! every output record names the model used.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::enumerators::EnsembleParams;
use crate::galois::FieldSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ExitError {
    #[error("message sequences have mismatched lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("weighter symbols must be nonzero")]
    ZeroWeight,
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("{0}")]
    InvalidParams(String),
}

/// Minimum paired samples accepted by the MI estimator.
pub const MIN_MI_SAMPLES: usize = 1000;

/// A sequence of per-symbol probability vectors over GF(q), stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSeq {
    pub q: usize,
    data: Vec<f64>,
}

impl MessageSeq {
    pub fn uniform(q: usize, len: usize) -> Self {
        MessageSeq {
            q,
            data: vec![1.0 / q as f64; q * len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.q..(i + 1) * self.q]
    }

    /// Renormalizes every row to sum one; rows of total mass zero become
    /// uniform (decoder underflow guard).
    pub fn normalize(&mut self) {
        let q = self.q;
        for i in 0..self.len() {
            let row = self.row_mut(i);
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for v in row.iter_mut() {
                    *v /= s;
                }
            } else {
                for v in row.iter_mut() {
                    *v = 1.0 / q as f64;
                }
            }
        }
    }

    /// Largest deviation of any row sum from one.
    pub fn normalization_drift(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Transmits a symbol vector over the QSC with error probability p: each
/// symbol is kept with probability 1-p, otherwise replaced by one of the
/// other q-1 symbols uniformly.
pub fn qsc_sample(
    x: &[u32],
    p: f64,
    field: &FieldSpec,
    rng: &mut impl Rng,
) -> Result<Vec<u32>, ExitError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ExitError::ProbabilityOutOfRange(p));
    }
    let q = field.q();
    Ok(x.iter()
        .map(|&s| {
            if rng.random_range(0.0..1.0) < p {
                let mut r = rng.random_range(0..q - 1);
                if r >= s {
                    r += 1;
                }
                r
            } else {
                s
            }
        })
        .collect())
}

/// Channel posteriors for a received QSC word under a uniform prior.
pub fn qsc_posteriors(received: &[u32], p: f64, q: usize) -> MessageSeq {
    let mut msgs = MessageSeq::uniform(q, received.len());
    let other = p / (q as f64 - 1.0);
    for (i, &r) in received.iter().enumerate() {
        let row = msgs.row_mut(i);
        for v in row.iter_mut() {
            *v = other;
        }
        row[r as usize] = 1.0 - p;
    }
    msgs
}

/// Direction of a weighter application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeighterDirection {
    /// Messages about v become messages about w*v.
    Forward,
    /// Messages about w*v become messages about v.
    Reverse,
}

/// Permutes each probability vector by the field multiplication with the
/// per-position weight (zero stays fixed).
pub fn apply_weighter(
    msgs: &MessageSeq,
    weights: &[u32],
    direction: WeighterDirection,
    field: &FieldSpec,
) -> Result<MessageSeq, ExitError> {
    if msgs.len() != weights.len() {
        return Err(ExitError::LengthMismatch(msgs.len(), weights.len()));
    }
    if weights.iter().any(|&w| w == 0) {
        return Err(ExitError::ZeroWeight);
    }
    let q = msgs.q;
    let mut out = MessageSeq::uniform(q, msgs.len());
    for i in 0..msgs.len() {
        let w = weights[i];
        let src = msgs.row(i);
        let dst = out.row_mut(i);
        match direction {
            WeighterDirection::Forward => {
                // P_w(w*v) = P(v)
                for v in 0..q as u32 {
                    dst[field.mul_raw(w, v) as usize] = src[v as usize];
                }
            }
            WeighterDirection::Reverse => {
                // P(v) = P_w(w*v)
                for v in 0..q as u32 {
                    dst[v as usize] = src[field.mul_raw(w, v) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Symbol MAP (forward-backward) decoding of the rate-1 memory-one 1/(1+D)
/// accumulator over GF(q), unterminated: the encoder starts in state zero
/// and the final state is marginalized uniformly.
///
/// `priors_in` are a-priori probabilities on the input symbols, `priors_out`
/// on the output symbols (channel or deeper-stage messages). Returns the
/// extrinsic messages on (inputs, outputs). Every step renormalizes, so no
/// underflow accumulates.
pub fn map_accumulator(
    priors_in: &MessageSeq,
    priors_out: &MessageSeq,
    field: &FieldSpec,
) -> Result<(MessageSeq, MessageSeq), ExitError> {
    if priors_in.len() != priors_out.len() {
        return Err(ExitError::LengthMismatch(priors_in.len(), priors_out.len()));
    }
    let q = field.q() as usize;
    let len = priors_in.len();
    // trellis: state s = previous output, input u, output y = u - s,
    // next state y; equivalently u = y + s
    let mut alpha = vec![0.0f64; (len + 1) * q];
    alpha[0] = 1.0;
    for t in 0..len {
        let (head, tail) = alpha.split_at_mut((t + 1) * q);
        let a = &head[t * q..];
        let nxt = &mut tail[..q];
        let pin = priors_in.row(t);
        let pout = priors_out.row(t);
        let mut total = 0.0;
        for y in 0..q {
            let mut acc = 0.0;
            for s in 0..q {
                let u = field.add_raw(y as u32, s as u32) as usize;
                acc += a[s] * pin[u];
            }
            let v = acc * pout[y];
            nxt[y] = v;
            total += v;
        }
        if total > 0.0 {
            for v in nxt.iter_mut() {
                *v /= total;
            }
        } else {
            for v in nxt.iter_mut() {
                *v = 1.0 / q as f64;
            }
        }
    }
    let mut beta = vec![0.0f64; (len + 1) * q];
    for s in 0..q {
        beta[len * q + s] = 1.0 / q as f64;
    }
    for t in (0..len).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * q);
        let b = &tail[..q];
        let prv = &mut head[t * q..];
        let pin = priors_in.row(t);
        let pout = priors_out.row(t);
        let mut total = 0.0;
        for s in 0..q {
            let mut acc = 0.0;
            for y in 0..q {
                let u = field.add_raw(y as u32, s as u32) as usize;
                acc += pin[u] * pout[y] * b[y];
            }
            prv[s] = acc;
            total += acc;
        }
        if total > 0.0 {
            for v in prv.iter_mut() {
                *v /= total;
            }
        } else {
            for v in prv.iter_mut() {
                *v = 1.0 / q as f64;
            }
        }
    }
    let mut ext_in = MessageSeq::uniform(q, len);
    let mut ext_out = MessageSeq::uniform(q, len);
    for t in 0..len {
        let a = &alpha[t * q..(t + 1) * q];
        let b = &beta[(t + 1) * q..(t + 2) * q];
        let pin = priors_in.row(t);
        let pout = priors_out.row(t);
        {
            let row = ext_in.row_mut(t);
            for u in 0..q {
                let mut acc = 0.0;
                for s in 0..q {
                    let y = field.sub_raw(u as u32, s as u32) as usize;
                    acc += a[s] * pout[y] * b[y];
                }
                row[u] = acc;
            }
        }
        {
            let row = ext_out.row_mut(t);
            for y in 0..q {
                let mut acc = 0.0;
                for s in 0..q {
                    let u = field.add_raw(y as u32, s as u32) as usize;
                    acc += a[s] * pin[u];
                }
                row[y] = acc * b[y];
            }
        }
    }
    ext_in.normalize();
    ext_out.normalize();
    Ok((ext_in, ext_out))
}

/// Symbol MAP decoding of the rate-1/n repetition code: the extrinsic for
/// each replica is the normalized component-wise product of the other n-1
/// replicas' priors. Replicas of one information symbol occupy n consecutive
/// positions.
pub fn map_repeat(priors: &MessageSeq, n: usize) -> Result<MessageSeq, ExitError> {
    if priors.len() % n != 0 {
        return Err(ExitError::InvalidParams(format!(
            "length {} not divisible by repetition factor {n}",
            priors.len()
        )));
    }
    let q = priors.q;
    let mut out = MessageSeq::uniform(q, priors.len());
    let groups = priors.len() / n;
    let mut logs = vec![0.0f64; n * q];
    for g in 0..groups {
        // log-domain product of all replicas, then subtract each replica
        let mut total = vec![0.0f64; q];
        for j in 0..n {
            let row = priors.row(g * n + j);
            for v in 0..q {
                let l = row[v].max(1e-300).ln();
                logs[j * q + v] = l;
                total[v] += l;
            }
        }
        for j in 0..n {
            let dst = out.row_mut(g * n + j);
            let mut mx = f64::NEG_INFINITY;
            for v in 0..q {
                dst[v] = total[v] - logs[j * q + v];
                mx = mx.max(dst[v]);
            }
            let mut s = 0.0;
            for v in dst.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in dst.iter_mut() {
                *v /= s;
            }
        }
    }
    Ok(out)
}

/// Average symbol mutual information of paired (message, truth) samples,
/// normalized to [0, 1] by log2 q: the a-posteriori averaging estimator
/// E[log2(q P(truth))]/log2 q. Returns (estimate, standard error).
pub fn mi_estimate(msgs: &MessageSeq, truth: &[u32]) -> Result<(f64, f64), ExitError> {
    if msgs.len() != truth.len() {
        return Err(ExitError::LengthMismatch(msgs.len(), truth.len()));
    }
    if truth.len() < MIN_MI_SAMPLES {
        return Err(ExitError::TooFewSamples {
            min: MIN_MI_SAMPLES,
            got: truth.len(),
        });
    }
    let q = msgs.q as f64;
    let norm = q.log2();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for (i, &t) in truth.iter().enumerate() {
        let p = msgs.row(i)[t as usize].max(1e-30);
        let v = (q * p).log2() / norm;
        sum += v;
        sumsq += v * v;
    }
    let n = truth.len() as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// A-priori message families for EXIT measurement. The substance of the
/// curves depends on this modeling choice, so it is carried in every output
/// record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum AprioriModel {
    /// With probability 1-e a delta at the true symbol, else uniform;
    /// measured I_a equals 1-e exactly.
    #[default]
    Erasure,
    /// Posterior of a virtual QSC whose error rate is swept so the message
    /// MI hits the target; self-consistent with the intrinsic two-level
    /// message structure on this channel.
    Qsc,
}

impl AprioriModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AprioriModel::Erasure => "erasure",
            AprioriModel::Qsc => "qsc",
        }
    }
}

/// Weighter handling in the simulated chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum WeighterMode {
    #[default]
    Random,
    AllOnes,
}

/// Monte-Carlo budget for one EXIT point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McBudget {
    pub block_len: usize,
    pub blocks: usize,
}

impl Default for McBudget {
    fn default() -> Self {
        McBudget {
            block_len: 10_000,
            blocks: 200,
        }
    }
}

impl McBudget {
    /// A reduced budget for threshold bisection at roughly +-0.01 accuracy.
    pub fn desk() -> Self {
        McBudget {
            block_len: 6_000,
            blocks: 40,
        }
    }

    pub fn samples(&self) -> usize {
        self.block_len * self.blocks
    }
}

/// One sampled EXIT point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitPoint {
    pub ia: f64,
    pub ie: f64,
    pub stderr: f64,
}

/// A sampled EXIT transfer function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitCurve {
    pub points: Vec<ExitPoint>,
    /// Channel parameter, for the inner (channel-facing) curve.
    pub p: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub model: AprioriModel,
    /// Set when the sampled curve is not monotone beyond twice the local
    /// standard errors (flagged, never forced).
    pub nonmonotone: bool,
}

impl ExitCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Ia,Ie,stderr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.ia, p.ie, p.stderr));
        }
        s
    }

    /// Piecewise-linear interpolation of Ie at the given Ia.
    pub fn interp(&self, ia: f64) -> f64 {
        let pts = &self.points;
        if ia <= pts[0].ia {
            return pts[0].ie;
        }
        for w in pts.windows(2) {
            if ia <= w[1].ia {
                let t = (ia - w[0].ia) / (w[1].ia - w[0].ia);
                return w[0].ie + t * (w[1].ie - w[0].ie);
            }
        }
        pts.last().unwrap().ie
    }

    /// Interpolated inverse on the monotone hull: the smallest Ia whose Ie
    /// reaches the target.
    pub fn inverse(&self, ie: f64) -> f64 {
        let pts = &self.points;
        let mut best_prev: Option<ExitPoint> = None;
        let mut hull: Vec<ExitPoint> = Vec::with_capacity(pts.len());
        for p in pts {
            let keep = match best_prev {
                Some(b) => p.ie > b.ie,
                None => true,
            };
            if keep {
                hull.push(*p);
                best_prev = Some(*p);
            }
        }
        if ie <= hull[0].ie {
            return hull[0].ia;
        }
        for w in hull.windows(2) {
            if ie <= w[1].ie {
                let t = (ie - w[0].ie) / (w[1].ie - w[0].ie);
                return w[0].ia + t * (w[1].ia - w[0].ia);
            }
        }
        hull.last().unwrap().ia
    }
}

fn block_rng(seed: u64, role: u64, point: u64, block: u64) -> ChaCha12Rng {
    // disjoint streams per (role, point, block); ChaCha keyed by mixing
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&role.to_le_bytes());
    key[16..24].copy_from_slice(&point.to_le_bytes());
    key[24..].copy_from_slice(&block.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

fn qsc_rate_for_mi(target: f64, q: usize) -> f64 {
    // solve H2(e) + e log2(q-1) = m (1 - target) for e in [0, (q-1)/q]
    let m = (q as f64).log2();
    let h2 = |x: f64| crate::util::entropy(x) / std::f64::consts::LN_2;
    let goal = m * (1.0 - target);
    let (mut lo, mut hi) = (0.0, (q as f64 - 1.0) / q as f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if h2(mid) + mid * ((q as f64) - 1.0).log2() < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn apriori_messages(
    truth: &[u32],
    ia: f64,
    model: AprioriModel,
    field: &FieldSpec,
    rng: &mut impl Rng,
) -> MessageSeq {
    let q = field.q() as usize;
    match model {
        AprioriModel::Erasure => {
            let mut msgs = MessageSeq::uniform(q, truth.len());
            for (i, &t) in truth.iter().enumerate() {
                if rng.random_range(0.0..1.0) < ia {
                    let row = msgs.row_mut(i);
                    for v in row.iter_mut() {
                        *v = 0.0;
                    }
                    row[t as usize] = 1.0;
                }
            }
            msgs
        }
        AprioriModel::Qsc => {
            let eps = qsc_rate_for_mi(ia, q);
            let received = qsc_sample(truth, eps, field, rng).expect("eps in range");
            qsc_posteriors(&received, eps, q)
        }
    }
}

/// Per-block encoder state for the outer chain C_0..C_{L-1}: the true
/// stage-(L-1) weighted output plus everything the decoder knows
/// (interleavers and weights).
struct OuterBlock {
    /// Truth at the outer boundary, i.e. the weighted output of C_{L-1}.
    boundary: Vec<u32>,
    /// Interleavers pi_1..pi_{L-1} (the final pi_L is the identity here:
    /// a symbol-wise MI measurement is permutation invariant).
    perms: Vec<Vec<usize>>,
    /// Weights w_0..w_{L-1} (w_l follows stage l).
    weights: Vec<Vec<u32>>,
}

fn encode_outer(
    params: &EnsembleParams,
    field: &FieldSpec,
    weighter: WeighterMode,
    rng: &mut impl Rng,
) -> OuterBlock {
    let n_len = params.block_len();
    let k = params.k;
    let n = params.n as usize;
    let q = params.q;
    let stages = params.l as usize - 1; // accumulators inside the outer
    let info: Vec<u32> = (0..k).map(|_| rng.random_range(0..q)).collect();
    let mut x: Vec<u32> = (0..n_len).map(|i| info[i / n]).collect();
    let mut weights = Vec::with_capacity(stages + 1);
    let mut perms = Vec::with_capacity(stages);
    let draw_w = |rng: &mut dyn rand::RngCore| -> u32 { 1 + (rng.next_u32() % (q - 1)) };
    // weighter after C_0
    let w0: Vec<u32> = (0..n_len)
        .map(|_| match weighter {
            WeighterMode::Random => draw_w(rng),
            WeighterMode::AllOnes => 1,
        })
        .collect();
    for i in 0..n_len {
        x[i] = field.mul_raw(w0[i], x[i]);
    }
    weights.push(w0);
    for _stage in 0..stages {
        // interleave
        let mut perm: Vec<usize> = (0..n_len).collect();
        for i in (1..n_len).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut u = vec![0u32; n_len];
        for (t, &src) in perm.iter().enumerate() {
            u[t] = x[src];
        }
        // accumulate: y_t = u_t - y_{t-1}
        let mut y = vec![0u32; n_len];
        let mut prev = 0u32;
        for t in 0..n_len {
            prev = field.sub_raw(u[t], prev);
            y[t] = prev;
        }
        // weighter after this accumulator
        let w: Vec<u32> = (0..n_len)
            .map(|_| match weighter {
                WeighterMode::Random => draw_w(rng),
                WeighterMode::AllOnes => 1,
            })
            .collect();
        for t in 0..n_len {
            y[t] = field.mul_raw(w[t], y[t]);
        }
        perms.push(perm);
        weights.push(w);
        x = y;
    }
    OuterBlock {
        boundary: x,
        perms,
        weights,
    }
}

/// One outer-decoder pass at given a-priori messages on the boundary
/// symbols: serial sweeps C_{L-1} -> ... -> C_1 -> C_0 -> back, capped
/// activations, early stop on an MI change below 1e-4. Returns the
/// extrinsic messages on the boundary symbols.
fn decode_outer(
    params: &EnsembleParams,
    field: &FieldSpec,
    block: &OuterBlock,
    apriori: &MessageSeq,
    max_activations: usize,
) -> MessageSeq {
    let n_len = params.block_len();
    let n = params.n as usize;
    let q = field.q() as usize;
    let stages = params.l as usize - 1;
    if stages == 0 {
        // outer is the repetition code alone; its boundary is w_0-weighted x_0
        let unweighted =
            apply_weighter(apriori, &block.weights[0], WeighterDirection::Reverse, field)
                .expect("weights nonzero");
        let ext = map_repeat(&unweighted, n).expect("length divisible");
        return apply_weighter(&ext, &block.weights[0], WeighterDirection::Forward, field)
            .expect("weights nonzero");
    }
    // boundary priors arrive on the weighted output of the last inner stage
    let top_out = apply_weighter(
        apriori,
        &block.weights[stages],
        WeighterDirection::Reverse,
        field,
    )
    .expect("weights nonzero");
    // messages on each stage's input side (from below), all uniform at start
    let mut up_priors: Vec<MessageSeq> = (0..stages)
        .map(|_| MessageSeq::uniform(q, n_len))
        .collect();
    // messages on each stage's output side (from above); only the top stage
    // sees the external priors, deeper stages start uniform
    let mut down_priors: Vec<MessageSeq> = (0..stages)
        .map(|_| MessageSeq::uniform(q, n_len))
        .collect();
    down_priors[stages - 1] = top_out.clone();
    let mut boundary_ext = MessageSeq::uniform(q, n_len);
    let mut last_mi = f64::NEG_INFINITY;
    for _round in 0..max_activations {
        // downward: stage L-1 .. 1 pass extrinsics on their inputs
        let mut x0_priors = MessageSeq::uniform(q, n_len);
        for s in (0..stages).rev() {
            let (ext_in, ext_out) =
                map_accumulator(&up_priors[s], &down_priors[s], field).expect("lengths equal");
            if s == stages - 1 {
                boundary_ext = apply_weighter(
                    &ext_out,
                    &block.weights[stages],
                    WeighterDirection::Forward,
                    field,
                )
                .expect("weights nonzero");
            }
            // deinterleave to the previous stage's weighted output
            let mut d = MessageSeq::uniform(q, n_len);
            for (t, &src) in block.perms[s].iter().enumerate() {
                d.row_mut(src).copy_from_slice(ext_in.row(t));
            }
            let unweighted =
                apply_weighter(&d, &block.weights[s], WeighterDirection::Reverse, field)
                    .expect("weights nonzero");
            if s == 0 {
                x0_priors = unweighted;
            } else {
                down_priors[s - 1] = unweighted;
            }
        }
        // repetition node
        let ext_x0 = map_repeat(&x0_priors, n).expect("length divisible");
        // upward: re-weight, interleave, recompute stage output extrinsics
        let mut up = apply_weighter(&ext_x0, &block.weights[0], WeighterDirection::Forward, field)
            .expect("weights nonzero");
        for s in 0..stages {
            let mut pin = MessageSeq::uniform(q, n_len);
            for (t, &src) in block.perms[s].iter().enumerate() {
                pin.row_mut(t).copy_from_slice(up.row(src));
            }
            up_priors[s] = pin;
            if s < stages - 1 {
                let (_, ext_out) =
                    map_accumulator(&up_priors[s], &down_priors[s], field).expect("lengths equal");
                up = apply_weighter(
                    &ext_out,
                    &block.weights[s + 1],
                    WeighterDirection::Forward,
                    field,
                )
                .expect("weights nonzero");
            }
        }
        // convergence check on the boundary extrinsic MI
        if let Ok((mi, _)) = mi_estimate(&boundary_ext, &block.boundary) {
            if (mi - last_mi).abs() < 1e-4 {
                break;
            }
            last_mi = mi;
        }
    }
    // final boundary extrinsic with the refreshed input priors
    let s = stages - 1;
    let (_, ext_out) =
        map_accumulator(&up_priors[s], &down_priors[s], field).expect("lengths equal");
    apply_weighter(
        &ext_out,
        &block.weights[stages],
        WeighterDirection::Forward,
        field,
    )
    .expect("weights nonzero")
}

fn curve_flag_monotone(points: &[ExitPoint]) -> bool {
    points.windows(2).any(|w| {
        w[1].ie < w[0].ie - 2.0 * (w[0].stderr + w[1].stderr)
    })
}

/// EXIT function of the channel-facing accumulator C_L on the QSC at error
/// probability p: extrinsic MI on its input symbols versus the a-priori MI.
pub fn exit_inner(
    params: &EnsembleParams,
    p: f64,
    ia_grid: &[f64],
    mc: &McBudget,
    seed: u64,
    model: AprioriModel,
) -> Result<ExitCurve, ExitError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ExitError::ProbabilityOutOfRange(p));
    }
    let field = FieldSpec::new(params.q as u64)
        .map_err(|e| ExitError::InvalidParams(e.to_string()))?;
    let q = params.q;
    let points: Vec<ExitPoint> = ia_grid
        .iter()
        .enumerate()
        .map(|(pi, &ia)| {
            let stats: Vec<(f64, f64)> = (0..mc.blocks)
                .into_par_iter()
                .map(|b| {
                    let mut rng = block_rng(seed, 1, pi as u64, b as u64);
                    let truth: Vec<u32> = (0..mc.block_len)
                        .map(|_| rng.random_range(0..q))
                        .collect();
                    let mut y = vec![0u32; mc.block_len];
                    let mut prev = 0u32;
                    for t in 0..mc.block_len {
                        prev = field.sub_raw(truth[t], prev);
                        y[t] = prev;
                    }
                    let received = qsc_sample(&y, p, &field, &mut rng).expect("p in range");
                    let pch = qsc_posteriors(&received, p, q as usize);
                    let pa = apriori_messages(&truth, ia, model, &field, &mut rng);
                    let (ext_in, _) =
                        map_accumulator(&pa, &pch, &field).expect("lengths equal");
                    let (mi, _) = mi_estimate(&ext_in, &truth).expect("enough samples");
                    (mi, mi * mi)
                })
                .collect();
            let nb = stats.len() as f64;
            let mean = stats.iter().map(|s| s.0).sum::<f64>() / nb;
            let var =
                (stats.iter().map(|s| s.1).sum::<f64>() / nb - mean * mean).max(0.0);
            ExitPoint {
                ia,
                ie: mean,
                stderr: (var / nb).sqrt(),
            }
        })
        .collect();
    Ok(ExitCurve {
        nonmonotone: curve_flag_monotone(&points),
        points,
        p: Some(p),
        samples: mc.samples(),
        seed,
        model,
    })
}

/// Combined EXIT function of the outer chain C_0..C_{L-1}: extrinsic MI on
/// the boundary symbols versus their a-priori MI. Channel-independent.
pub fn exit_outer(
    params: &EnsembleParams,
    ia_grid: &[f64],
    mc: &McBudget,
    seed: u64,
    model: AprioriModel,
    weighter: WeighterMode,
) -> Result<ExitCurve, ExitError> {
    let field = FieldSpec::new(params.q as u64)
        .map_err(|e| ExitError::InvalidParams(e.to_string()))?;
    let block_len = mc.block_len - mc.block_len % params.block_len().max(params.n as usize);
    let k_blocks = (block_len / params.n as usize).max(1);
    let sim_params = EnsembleParams::new(params.q, params.n, params.l, k_blocks)
        .map_err(|e| ExitError::InvalidParams(e.to_string()))?;
    let points: Vec<ExitPoint> = ia_grid
        .iter()
        .enumerate()
        .map(|(pi, &ia)| {
            let stats: Vec<f64> = (0..mc.blocks)
                .into_par_iter()
                .map(|b| {
                    let mut rng = block_rng(seed, 2, pi as u64, b as u64);
                    let block = encode_outer(&sim_params, &field, weighter, &mut rng);
                    let apriori =
                        apriori_messages(&block.boundary, ia, model, &field, &mut rng);
                    let ext = decode_outer(&sim_params, &field, &block, &apriori, 20);
                    let (mi, _) = mi_estimate(&ext, &block.boundary).expect("enough samples");
                    mi
                })
                .collect();
            let nb = stats.len() as f64;
            let mean = stats.iter().sum::<f64>() / nb;
            let var = (stats.iter().map(|s| s * s).sum::<f64>() / nb - mean * mean).max(0.0);
            ExitPoint {
                ia,
                ie: mean,
                stderr: (var / nb).sqrt(),
            }
        })
        .collect();
    Ok(ExitCurve {
        nonmonotone: curve_flag_monotone(&points),
        points,
        p: None,
        samples: mc.samples(),
        seed,
        model,
    })
}

/// Result of the threshold search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub q: u32,
    pub n: u32,
    pub l: u32,
    pub p_star: f64,
    /// Bisection bracket plus Monte-Carlo uncertainty.
    pub ci: (f64, f64),
    pub seed: u64,
    pub samples: usize,
    pub model: AprioriModel,
    pub weighter: WeighterMode,
    /// Set when no tunnel opens even at p = 0.
    pub nonconvergent: bool,
}

impl ThresholdResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "q": self.q, "n": self.n, "L": self.l,
            "p_star": self.p_star,
            "ci": [self.ci.0, self.ci.1],
            "seed": self.seed,
            "samples": self.samples,
            "apriori_model": self.model.as_str(),
            "weighter": match self.weighter { WeighterMode::Random => "random", WeighterMode::AllOnes => "ones" },
            "nonconvergent": self.nonconvergent,
        })
    }
}

/// Default a-priori grid for tunnel checks.
pub fn default_ia_grid() -> Vec<f64> {
    vec![
        0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95,
        0.98,
    ]
}

/// True when the decoding tunnel is open: the inner curve stays strictly
/// above the outer curve's inverse on the whole grid, with margin exceeding
/// twice the combined standard errors.
pub fn tunnel_open(inner: &ExitCurve, outer: &ExitCurve) -> bool {
    let se_out = outer
        .points
        .iter()
        .map(|p| p.stderr)
        .fold(0.0, f64::max);
    let fine = 198;
    for i in 0..=fine {
        let x = 0.98 * i as f64 / fine as f64;
        let tin = inner.interp(x);
        let need = outer.inverse(x);
        let se_in = inner
            .points
            .iter()
            .min_by(|a, b| {
                (a.ia - x).abs().partial_cmp(&(b.ia - x).abs()).unwrap()
            })
            .map(|p| p.stderr)
            .unwrap_or(0.0);
        if tin <= need + 2.0 * (se_in + se_out) {
            return false;
        }
    }
    true
}

/// Bisection threshold search on the QSC: the largest p whose EXIT tunnel
/// stays open. The outer curve is computed once (it does not depend on p);
/// each bisection step resamples the inner curve.
pub fn threshold_qsc(
    params: &EnsembleParams,
    mc: &McBudget,
    seed: u64,
    model: AprioriModel,
    weighter: WeighterMode,
) -> Result<ThresholdResult, ExitError> {
    if params.l < 2 {
        return Err(ExitError::InvalidParams(
            "threshold search needs L >= 2 (inner accumulator plus a composite outer)".into(),
        ));
    }
    let grid = default_ia_grid();
    let outer_mc = McBudget {
        block_len: mc.block_len,
        blocks: mc.blocks * 2,
    };
    let outer = exit_outer(params, &grid, &outer_mc, seed, model, weighter)?;
    let top = (params.q as f64 - 1.0) / params.q as f64;
    let mut lo = 0.0;
    let mut hi = top;
    // p = 0 sanity: noiseless channel must converge
    let inner0 = exit_inner(params, 0.0, &grid, mc, seed, model)?;
    if !tunnel_open(&inner0, &outer) {
        return Ok(ThresholdResult {
            q: params.q,
            n: params.n,
            l: params.l,
            p_star: 0.0,
            ci: (0.0, 0.0),
            seed,
            samples: mc.samples(),
            model,
            weighter,
            nonconvergent: true,
        });
    }
    for _ in 0..10 {
        let p = 0.5 * (lo + hi);
        let inner = exit_inner(params, p, &grid, mc, seed, model)?;
        if tunnel_open(&inner, &outer) {
            lo = p;
        } else {
            hi = p;
        }
    }
    Ok(ThresholdResult {
        q: params.q,
        n: params.n,
        l: params.l,
        p_star: 0.5 * (lo + hi),
        ci: (lo, hi),
        seed,
        samples: mc.samples(),
        model,
        weighter,
        nonconvergent: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(q: u64) -> FieldSpec {
        FieldSpec::new(q).unwrap()
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn qsc_identity_and_full_error() {
        let f = field(4);
        let x: Vec<u32> = (0..2000).map(|i| (i % 4) as u32).collect();
        let mut r = rng(1);
        let y = qsc_sample(&x, 0.0, &f, &mut r).unwrap();
        assert_eq!(x, y);
        let y = qsc_sample(&x, 1.0, &f, &mut r).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| a != b));
    }

    #[test]
    fn qsc_confusion_matrix() {
        let f = field(4);
        let n = 1_000_000usize;
        let x = vec![2u32; n];
        let mut r = rng(7);
        let y = qsc_sample(&x, 0.3, &f, &mut r).unwrap();
        let mut counts = [0usize; 4];
        for &v in &y {
            counts[v as usize] += 1;
        }
        // off-diagonal entries approximately 0.1 each, 3-sigma binomial
        let sigma = (0.1f64 * 0.9 / n as f64).sqrt();
        for (v, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            let expect = if v == 2 { 0.7 } else { 0.1 };
            assert!(
                (freq - expect).abs() < 3.0 * sigma + 1e-3,
                "symbol {v}: {freq} vs {expect}"
            );
        }
    }

    #[test]
    fn weighter_permutation_round_trip() {
        let f = field(8);
        let mut r = rng(3);
        let mut msgs = MessageSeq::uniform(8, 64);
        for i in 0..64 {
            let row = msgs.row_mut(i);
            for v in row.iter_mut() {
                *v = r.random_range(0.1..1.0);
            }
        }
        msgs.normalize();
        let weights: Vec<u32> = (0..64).map(|_| r.random_range(1..8)).collect();
        let fwd = apply_weighter(&msgs, &weights, WeighterDirection::Forward, &f).unwrap();
        let back = apply_weighter(&fwd, &weights, WeighterDirection::Reverse, &f).unwrap();
        for i in 0..64 {
            for v in 0..8 {
                assert!((back.row(i)[v] - msgs.row(i)[v]).abs() < 1e-15);
                // probability of v before equals probability of w*v after
                let wv = f.mul_raw(weights[i], v as u32) as usize;
                assert_eq!(fwd.row(i)[wv], msgs.row(i)[v]);
            }
        }
        let ones = vec![1u32; 64];
        let same = apply_weighter(&msgs, &ones, WeighterDirection::Forward, &f).unwrap();
        assert_eq!(same, msgs);
        assert_eq!(
            apply_weighter(&msgs, &vec![0u32; 64], WeighterDirection::Forward, &f),
            Err(ExitError::ZeroWeight)
        );
    }

    #[test]
    fn map_accumulator_uniform_and_pinned() {
        let f = field(4);
        let len = 1200;
        let pin = MessageSeq::uniform(4, len);
        let pout = MessageSeq::uniform(4, len);
        let (ei, eo) = map_accumulator(&pin, &pout, &f).unwrap();
        for i in [0usize, 5, len - 1] {
            for v in 0..4 {
                assert!((ei.row(i)[v] - 0.25).abs() < 1e-12);
                assert!((eo.row(i)[v] - 0.25).abs() < 1e-12);
            }
        }
        // perfect output priors + uniform input priors: inputs recovered
        let mut r = rng(11);
        let truth: Vec<u32> = (0..len).map(|_| r.random_range(0..4)).collect();
        let mut y = vec![0u32; len];
        let mut prev = 0;
        for t in 0..len {
            prev = f.sub_raw(truth[t], prev);
            y[t] = prev;
        }
        let mut perfect = MessageSeq::uniform(4, len);
        for (t, &v) in y.iter().enumerate() {
            let row = perfect.row_mut(t);
            for e in row.iter_mut() {
                *e = 0.0;
            }
            row[v as usize] = 1.0;
        }
        let (ei, _) = map_accumulator(&pin, &perfect, &f).unwrap();
        for (t, &v) in truth.iter().enumerate() {
            assert!(ei.row(t)[v as usize] > 0.999, "position {t}");
        }
    }

    #[test]
    fn map_accumulator_matches_exhaustive_posterior() {
        // tiny case: every extrinsic equals the brute-force posterior over
        // all q^N sequences
        let f = field(3);
        let len = 3;
        let mut r = rng(5);
        let mut pin = MessageSeq::uniform(3, len);
        let mut pout = MessageSeq::uniform(3, len);
        for i in 0..len {
            for v in 0..3 {
                pin.row_mut(i)[v] = r.random_range(0.05..1.0);
                pout.row_mut(i)[v] = r.random_range(0.05..1.0);
            }
        }
        pin.normalize();
        pout.normalize();
        let (ei, eo) = map_accumulator(&pin, &pout, &f).unwrap();
        let mut post_in = vec![[0.0f64; 3]; len];
        let mut post_out = vec![[0.0f64; 3]; len];
        for idx in 0..27u32 {
            let u = [(idx / 9) % 3, (idx / 3) % 3, idx % 3];
            let mut y = [0u32; 3];
            let mut prev = 0;
            for t in 0..3 {
                prev = f.sub_raw(u[t], prev);
                y[t] = prev;
            }
            let mut w = 1.0;
            for t in 0..3 {
                w *= pin.row(t)[u[t] as usize] * pout.row(t)[y[t] as usize];
            }
            for t in 0..3 {
                post_in[t][u[t] as usize] += w / pin.row(t)[u[t] as usize];
                post_out[t][y[t] as usize] += w / pout.row(t)[y[t] as usize];
            }
        }
        for t in 0..3 {
            let si: f64 = post_in[t].iter().sum();
            let so: f64 = post_out[t].iter().sum();
            for v in 0..3 {
                assert!((post_in[t][v] / si - ei.row(t)[v]).abs() < 1e-12);
                assert!((post_out[t][v] / so - eo.row(t)[v]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn map_repeat_two_and_bayes() {
        let mut r = rng(9);
        let mut priors = MessageSeq::uniform(4, 8);
        for i in 0..8 {
            for v in 0..4 {
                priors.row_mut(i)[v] = r.random_range(0.05..1.0);
            }
        }
        priors.normalize();
        // n=2: extrinsic of replica 1 is the prior of replica 2
        let ext = map_repeat(&priors, 2).unwrap();
        for g in 0..4 {
            for v in 0..4 {
                assert!((ext.row(2 * g)[v] - priors.row(2 * g + 1)[v]).abs() < 1e-12);
                assert!((ext.row(2 * g + 1)[v] - priors.row(2 * g)[v]).abs() < 1e-12);
            }
        }
        // n=3 against a direct Bayes computation
        let mut p3 = MessageSeq::uniform(4, 3);
        for i in 0..3 {
            for v in 0..4 {
                p3.row_mut(i)[v] = r.random_range(0.05..1.0);
            }
        }
        p3.normalize();
        let ext = map_repeat(&p3, 3).unwrap();
        for j in 0..3 {
            let (a, b) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let mut direct = [0.0f64; 4];
            let mut s = 0.0;
            for v in 0..4 {
                direct[v] = p3.row(a)[v] * p3.row(b)[v];
                s += direct[v];
            }
            for v in 0..4 {
                assert!((ext.row(j)[v] - direct[v] / s).abs() < 1e-12);
            }
        }
        // uniform in, uniform out
        let u = MessageSeq::uniform(4, 6);
        let ext = map_repeat(&u, 3).unwrap();
        assert_eq!(ext, u);
    }

    #[test]
    fn mi_estimator_endpoints_and_capacity() {
        let len = 4000;
        let truth: Vec<u32> = (0..len).map(|i| (i % 4) as u32).collect();
        let mut delta = MessageSeq::uniform(4, len);
        for (i, &t) in truth.iter().enumerate() {
            let row = delta.row_mut(i);
            for v in row.iter_mut() {
                *v = 0.0;
            }
            row[t as usize] = 1.0;
        }
        let (mi, _) = mi_estimate(&delta, &truth).unwrap();
        assert!((mi - 1.0).abs() < 1e-12);
        let uniform = MessageSeq::uniform(4, len);
        let (mi, _) = mi_estimate(&uniform, &truth).unwrap();
        assert!(mi.abs() < 1e-12);
        assert!(matches!(
            mi_estimate(&MessageSeq::uniform(4, 10), &truth[..10]),
            Err(ExitError::TooFewSamples { .. })
        ));
        // QSC observation messages reproduce normalized capacity
        let f = field(8);
        let n = 200_000usize;
        let mut r = rng(13);
        for p in [0.05, 0.2, 0.4, 0.6, 0.8] {
            let x: Vec<u32> = (0..n).map(|_| r.random_range(0..8)).collect();
            let y = qsc_sample(&x, p, &f, &mut r).unwrap();
            let msgs = qsc_posteriors(&y, p, 8);
            let (mi, se) = mi_estimate(&msgs, &x).unwrap();
            let expect = crate::bounds::qsc_capacity(p, 8).unwrap().1;
            assert!(
                (mi - expect).abs() < 2.0 * se + 2e-3,
                "p={p}: mi {mi} vs capacity {expect} (se {se})"
            );
        }
    }

    #[test]
    fn apriori_models_hit_target_mi() {
        let f = field(4);
        let mut r = rng(17);
        let truth: Vec<u32> = (0..100_000).map(|_| r.random_range(0..4)).collect();
        for model in [AprioriModel::Erasure, AprioriModel::Qsc] {
            for ia in [0.1, 0.5, 0.9] {
                let msgs = apriori_messages(&truth, ia, model, &f, &mut r);
                let (mi, se) = mi_estimate(&msgs, &truth).unwrap();
                assert!(
                    (mi - ia).abs() < 3.0 * se + 3e-3,
                    "{model:?} ia={ia}: measured {mi}"
                );
            }
        }
    }

    #[test]
    fn inner_curve_endpoints() {
        let params = EnsembleParams::new(4, 3, 2, 500).unwrap();
        let mc = McBudget {
            block_len: 1500,
            blocks: 4,
        };
        // p = 0: noiseless invertible code pins everything
        let c = exit_inner(&params, 0.0, &[0.0, 0.5, 1.0], &mc, 99, AprioriModel::Erasure)
            .unwrap();
        for p in &c.points {
            assert!(p.ie > 0.999, "p=0 gives ie = {}", p.ie);
        }
        // near-saturated channel, no priors: nearly no information
        let c = exit_inner(&params, 0.74, &[0.0], &mc, 99, AprioriModel::Erasure).unwrap();
        assert!(c.points[0].ie < 0.02, "ie = {}", c.points[0].ie);
    }

    #[test]
    fn outer_curve_endpoints() {
        let params = EnsembleParams::new(4, 3, 2, 500).unwrap();
        let mc = McBudget {
            block_len: 1500,
            blocks: 4,
        };
        let c = exit_outer(
            &params,
            &[0.0, 1.0],
            &mc,
            42,
            AprioriModel::Erasure,
            WeighterMode::Random,
        )
        .unwrap();
        assert!(c.points[0].ie < 0.01, "no channel connection: {}", c.points[0].ie);
        assert!(c.points[1].ie > 0.999, "perfect priors pin the chain: {}", c.points[1].ie);
    }

    #[test]
    fn seeds_reproduce_and_differ_within_error() {
        let params = EnsembleParams::new(4, 3, 2, 400).unwrap();
        let mc = McBudget {
            block_len: 1200,
            blocks: 6,
        };
        let a = exit_inner(&params, 0.2, &[0.4], &mc, 7, AprioriModel::Erasure).unwrap();
        let b = exit_inner(&params, 0.2, &[0.4], &mc, 7, AprioriModel::Erasure).unwrap();
        assert_eq!(a.points[0].ie, b.points[0].ie, "same seed must reproduce");
        let c = exit_inner(&params, 0.2, &[0.4], &mc, 8, AprioriModel::Erasure).unwrap();
        let gap = (a.points[0].ie - c.points[0].ie).abs();
        assert!(
            gap < 3.0 * (a.points[0].stderr + c.points[0].stderr) + 1e-3,
            "seed-to-seed gap {gap} too large"
        );
    }

    #[test]
    fn normalization_drift_stays_tiny() {
        let f = field(8);
        let mut r = rng(23);
        let len = 3000;
        let truth: Vec<u32> = (0..len).map(|_| r.random_range(0..8)).collect();
        let mut y = vec![0u32; len];
        let mut prev = 0;
        for t in 0..len {
            prev = f.sub_raw(truth[t], prev);
            y[t] = prev;
        }
        let pch = qsc_posteriors(&qsc_sample(&y, 0.3, &f, &mut r).unwrap(), 0.3, 8);
        let pa = apriori_messages(&truth, 0.4, AprioriModel::Qsc, &f, &mut r);
        let (ei, eo) = map_accumulator(&pa, &pch, &f).unwrap();
        assert!(ei.normalization_drift() < 1e-9);
        assert!(eo.normalization_drift() < 1e-9);
        let ext = map_repeat(&ei, 3).unwrap();
        assert!(ext.normalization_drift() < 1e-9);
    }
}
