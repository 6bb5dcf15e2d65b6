//! Exact weight enumerators for WNRMA constituents and ensembles.
//!
//! Everything here is arbitrary-precision rational arithmetic; floats appear
//! only in [`finite_n_spectral_shape`], at the final conversion. Brute-force
//! oracles re-derive the closed forms by exhaustive enumeration over small
//! fields and block lengths.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::galois::FieldSpec;
use crate::util::{binomial, ln_rational};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnumeratorError {
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error("outer output length {outer_out} does not match inner input length {inner_in}")]
    LengthMismatch { outer_out: usize, inner_in: usize },
    #[error("{what} needs {required} {unit} but the budget is {budget}; raise it explicitly")]
    BudgetExceeded {
        what: &'static str,
        required: u128,
        budget: u128,
        unit: &'static str,
    },
}

/// Default cap on exhaustively enumerated encoder paths.
pub const DEFAULT_ORACLE_BUDGET: u128 = 10_000_000;
/// Default cap on stored conditional-weight-enumerator cells.
pub const DEFAULT_CWE_BUDGET: u128 = 5_000_000;

/// Parameters identifying a WNRMA ensemble: a rate-1/n repetition code over
/// GF(q) followed by `l` accumulators, information block length `k` symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnsembleParams {
    pub q: u32,
    pub n: u32,
    pub l: u32,
    pub k: usize,
}

impl EnsembleParams {
    pub fn new(q: u32, n: u32, l: u32, k: usize) -> Result<Self, EnumeratorError> {
        if q < 3 {
            return Err(EnumeratorError::InvalidParams(format!("q = {q} < 3")));
        }
        if n < 2 {
            return Err(EnumeratorError::InvalidParams(format!("n = {n} < 2")));
        }
        if l < 1 {
            return Err(EnumeratorError::InvalidParams(format!("L = {l} < 1")));
        }
        if k < 1 {
            return Err(EnumeratorError::InvalidParams(format!("K = {k} < 1")));
        }
        Ok(EnsembleParams { q, n, l, k })
    }

    /// Output block length N = nK.
    pub fn block_len(&self) -> usize {
        self.n as usize * self.k
    }
}

/// Sparse exact input-output weight enumerator: nonzero entries only,
/// keyed by (input weight w, output weight h).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightTable {
    pub input_len: usize,
    pub output_len: usize,
    cells: BTreeMap<(usize, usize), BigRational>,
}

impl WeightTable {
    pub fn new(input_len: usize, output_len: usize) -> Self {
        WeightTable {
            input_len,
            output_len,
            cells: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, w: usize, h: usize, value: BigRational) {
        debug_assert!(w <= self.input_len && h <= self.output_len);
        if value.is_zero() {
            self.cells.remove(&(w, h));
        } else {
            self.cells.insert((w, h), value);
        }
    }

    pub fn get(&self, w: usize, h: usize) -> BigRational {
        self.cells.get(&(w, h)).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &BigRational)> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn transpose(&self) -> WeightTable {
        let mut out = WeightTable::new(self.output_len, self.input_len);
        for (&(w, h), v) in &self.cells {
            out.set(h, w, v.clone());
        }
        out
    }

    /// Sum of all entries.
    pub fn total(&self) -> BigRational {
        self.cells.values().fold(BigRational::zero(), |a, b| a + b)
    }

    /// Marginal over input weight: the weight enumerator a_h.
    pub fn output_marginal(&self) -> Vec<BigRational> {
        let mut out = vec![BigRational::zero(); self.output_len + 1];
        for (&(_, h), v) in &self.cells {
            out[h] += v;
        }
        out
    }

    /// CSV serialization with header `w,h,numerator,denominator`, numerators
    /// and denominators as exact decimal strings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w,h,numerator,denominator\n");
        for (&(w, h), v) in &self.cells {
            s.push_str(&format!("{w},{h},{},{}\n", v.numer(), v.denom()));
        }
        s
    }

    /// JSON serialization; embeds ensemble parameters when given.
    pub fn to_json(&self, params: Option<&EnsembleParams>) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|(&(w, h), v)| {
                serde_json::json!({
                    "w": w,
                    "h": h,
                    "numerator": v.numer().to_string(),
                    "denominator": v.denom().to_string(),
                })
            })
            .collect();
        let mut obj = serde_json::json!({
            "input_len": self.input_len,
            "output_len": self.output_len,
            "cells": cells,
        });
        if let Some(p) = params {
            obj["params"] = serde_json::json!({
                "q": p.q, "n": p.n, "L": p.l, "K": p.k, "N": p.block_len(),
            });
        }
        obj
    }
}

fn big(x: u64) -> BigInt {
    BigInt::from(x)
}

fn rat_int(x: BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

/// Powers base^0..=base^max as big integers.
fn power_row(base: u64, max: usize) -> Vec<BigUint> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = BigUint::one();
    for _ in 0..=max {
        out.push(acc.clone());
        acc *= base;
    }
    out
}

/// Number of terminated accumulator codewords of input weight `w` and output
/// weight `h` in block length `n_len`, as an exact integer. Zero when the
/// event-count summation is empty.
fn accumulator_count(
    n_len: usize,
    w: usize,
    h: usize,
    pow_q1: &[BigUint],
    pow_q2: &[BigUint],
) -> BigUint {
    if w == 0 || h == 0 {
        return if w == 0 && h == 0 { BigUint::one() } else { BigUint::zero() };
    }
    let k_lo = 1.max(w.saturating_sub(h));
    let k_hi = w / 2;
    let mut acc = BigUint::zero();
    for k in k_lo..=k_hi {
        if k > n_len - h || k > h || w - 2 * k > h - k {
            continue;
        }
        let term = binomial(n_len - h, k)
            * binomial(h - 1, k - 1)
            * binomial(h - k, w - 2 * k)
            * &pow_q1[k]
            * &pow_q2[w - 2 * k];
        acc += term;
    }
    acc
}

/// Exact IOWE of the terminated rate-1, memory-one 1/(1+D) accumulator over
/// GF(q) with input and output block length `n_len`.
pub fn accumulator_iowe(q: u32, n_len: usize) -> WeightTable {
    let pow_q1 = power_row(q as u64 - 1, n_len + 1);
    let pow_q2 = power_row(q as u64 - 2, n_len + 1);
    let mut t = WeightTable::new(n_len, n_len);
    t.set(0, 0, BigRational::one());
    for w in 2..=n_len {
        // h >= ceil(w/2) per the error-event structure; h <= n_len - 1 since
        // every termination needs at least one weight-free step only when
        // k >= 1 forces N - h >= 1
        for h in w.div_ceil(2)..n_len {
            let c = accumulator_count(n_len, w, h, &pow_q1, &pow_q2);
            if !c.is_zero() {
                t.set(w, h, rat_int(c));
            }
        }
    }
    t
}

/// Exact IOWE of the terminated 1+D feedforward encoder: the transpose of
/// the accumulator IOWE.
pub fn feedforward_iowe(q: u32, n_len: usize) -> WeightTable {
    accumulator_iowe(q, n_len).transpose()
}

/// Exact IOWE of the (nK, K) q-ary repetition code: a_{w,nw} = C(K,w)(q-1)^w.
pub fn repetition_iowe(q: u32, n: u32, k: usize) -> WeightTable {
    let pow_q1 = power_row(q as u64 - 1, k);
    let mut t = WeightTable::new(k, n as usize * k);
    for w in 0..=k {
        t.set(w, n as usize * w, rat_int(binomial(k, w) * &pow_q1[w]));
    }
    t
}

/// Uniform-interleaver plus random-weighter concatenation of two enumerators:
/// averages `outer` into `inner` with the C(N,l)(q-1)^l normalization.
pub fn concat_uniform(
    outer: &WeightTable,
    inner: &WeightTable,
    q: u32,
) -> Result<WeightTable, EnumeratorError> {
    if outer.output_len != inner.input_len {
        return Err(EnumeratorError::LengthMismatch {
            outer_out: outer.output_len,
            inner_in: inner.input_len,
        });
    }
    let n_len = inner.input_len;
    let pow_q1 = power_row(q as u64 - 1, n_len);
    let denom: Vec<BigRational> = (0..=n_len)
        .map(|l| rat_int(binomial(n_len, l) * &pow_q1[l]))
        .collect();
    // group inner rows by input weight for the middle sum
    let mut inner_rows: BTreeMap<usize, Vec<(usize, &BigRational)>> = BTreeMap::new();
    for (&(l, h), v) in inner.iter() {
        inner_rows.entry(l).or_default().push((h, v));
    }
    let mut out = WeightTable::new(outer.input_len, inner.output_len);
    let mut acc: BTreeMap<(usize, usize), BigRational> = BTreeMap::new();
    for (&(w, l), a) in outer.iter() {
        if let Some(row) = inner_rows.get(&l) {
            let scaled = a / &denom[l];
            for &(h, b) in row {
                let term = &scaled * b;
                acc.entry((w, h))
                    .and_modify(|x| *x += &term)
                    .or_insert(term);
            }
        }
    }
    for ((w, h), v) in acc {
        out.set(w, h, v);
    }
    Ok(out)
}

/// Ensemble-average IOWE of the WNRMA ensemble: repetition followed by `l`
/// accumulator stages, each through a random weighter and uniform
/// interleaver.
pub fn ensemble_iowe(params: &EnsembleParams) -> WeightTable {
    let n_len = params.block_len();
    let acc = accumulator_iowe(params.q, n_len);
    let mut t = repetition_iowe(params.q, params.n, params.k);
    for _ in 0..params.l {
        t = concat_uniform(&t, &acc, params.q).expect("lengths match by construction");
    }
    t
}

/// Ensemble-average weight enumerator: the IOWE marginalized over input
/// weight.
pub fn ensemble_we(params: &EnsembleParams) -> Vec<BigRational> {
    ensemble_iowe(params).output_marginal()
}

/// One cell of the conditional weight enumerator: the per-stage weight
/// profile (w, h_1, ..., h_{L-1}, h) and its exact ensemble-average count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CweCell {
    /// Profile of length L+1: input weight, intermediate stage weights,
    /// final output weight.
    pub profile: Vec<usize>,
    pub value: BigRational,
}

/// All nonzero conditional-weight-enumerator cells for w > 0.
#[derive(Debug, Clone)]
pub struct CweTable {
    pub params: EnsembleParams,
    pub cells: Vec<CweCell>,
}

impl CweTable {
    /// Marginalizes the intermediate weights, returning the (w, h) table.
    /// The w = 0 cell (always exactly one) is restored on the way out.
    pub fn marginal_iowe(&self) -> WeightTable {
        let n_len = self.params.block_len();
        let mut t = WeightTable::new(self.params.k, n_len);
        let mut acc: BTreeMap<(usize, usize), BigRational> = BTreeMap::new();
        for cell in &self.cells {
            let w = cell.profile[0];
            let h = *cell.profile.last().unwrap();
            acc.entry((w, h))
                .and_modify(|x| *x += &cell.value)
                .or_insert_with(|| cell.value.clone());
        }
        for ((w, h), v) in acc {
            t.set(w, h, v);
        }
        t.set(0, 0, BigRational::one());
        t
    }
}

/// Counts the feasible per-stage weight profiles without storing them.
fn cwe_cell_count(params: &EnsembleParams) -> u128 {
    let n_len = params.block_len();
    let l = params.l as usize;
    // feasible h ranges stage by stage: h_l in [ceil(h_{l-1}/2), n_len - 1]
    // (h_l = 0 impossible for w > 0). Count by dynamic programming over the
    // previous stage weight.
    let mut count: u128 = 0;
    for w in 1..=params.k {
        let mut reach = vec![0u128; n_len + 1];
        reach[params.n as usize * w] = 1;
        for _ in 0..l {
            let mut next = vec![0u128; n_len + 1];
            for (u, &c) in reach.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for v in u.div_ceil(2)..n_len {
                    if v == 0 {
                        continue;
                    }
                    next[v] = next[v].saturating_add(c);
                }
            }
            reach = next;
        }
        count = count.saturating_add(reach.iter().sum::<u128>());
    }
    count
}

/// Computes every nonzero CWE cell for w > 0 in exact rational arithmetic.
///
/// Refuses profiles whose feasible cell count exceeds `budget`
/// (default [`DEFAULT_CWE_BUDGET`] when `None`).
pub fn wnrma_cwe(
    params: &EnsembleParams,
    budget: Option<u128>,
) -> Result<CweTable, EnumeratorError> {
    let budget = budget.unwrap_or(DEFAULT_CWE_BUDGET);
    let required = cwe_cell_count(params);
    if required > budget {
        return Err(EnumeratorError::BudgetExceeded {
            what: "conditional weight enumerator",
            required,
            budget,
            unit: "cells",
        });
    }
    let n_len = params.block_len();
    let l = params.l as usize;
    let pow_q1 = power_row(params.q as u64 - 1, n_len + 1);
    let pow_q2 = power_row(params.q as u64 - 2, n_len + 1);
    // per-stage transfer factor S(u, v) / (C(N, u) (q-1)^u)
    let stage_denom: Vec<BigRational> = (0..=n_len)
        .map(|u| rat_int(binomial(n_len, u) * &pow_q1[u]))
        .collect();
    let mut cells = Vec::new();
    let mut profile = vec![0usize; l + 1];
    for w in 1..=params.k {
        let head = rat_int(binomial(params.k, w) * &pow_q1[w]);
        profile[0] = w;
        // depth-first over h_1..h_L
        fn descend(
            stage: usize,
            l: usize,
            prev: usize,
            value: BigRational,
            params: &EnsembleParams,
            n_len: usize,
            pow_q1: &[BigUint],
            pow_q2: &[BigUint],
            stage_denom: &[BigRational],
            profile: &mut Vec<usize>,
            cells: &mut Vec<CweCell>,
        ) {
            if stage == l {
                cells.push(CweCell {
                    profile: profile.clone(),
                    value,
                });
                return;
            }
            for v in prev.div_ceil(2)..n_len {
                if v == 0 {
                    continue;
                }
                let s = accumulator_count(n_len, prev, v, pow_q1, pow_q2);
                if s.is_zero() {
                    continue;
                }
                profile[stage + 1] = v;
                let next = &value * rat_int(s) / &stage_denom[prev];
                descend(
                    stage + 1,
                    l,
                    v,
                    next,
                    params,
                    n_len,
                    pow_q1,
                    pow_q2,
                    stage_denom,
                    profile,
                    cells,
                );
            }
        }
        descend(
            0,
            l,
            params.n as usize * w,
            head,
            params,
            n_len,
            &pow_q1,
            &pow_q2,
            &stage_denom,
            &mut profile,
            &mut cells,
        );
    }
    Ok(CweTable {
        params: *params,
        cells,
    })
}

/// Encoders the brute-force oracle can enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteEncoder {
    /// Terminated 1/(1+D) accumulator of block length N.
    Accumulator { n_len: usize },
    /// Terminated 1+D feedforward encoder of block length N.
    Feedforward { n_len: usize },
    /// (nK, K) repetition code.
    Repetition { n: u32, k: usize },
}

/// IOWE by exhaustive input enumeration on the GF(q) trellis.
///
/// Terminated convolutional encoders only count paths ending in state zero.
/// Refuses when q^len exceeds the path budget
/// (default [`DEFAULT_ORACLE_BUDGET`] when `None`).
pub fn brute_force_iowe(
    encoder: BruteEncoder,
    field: &FieldSpec,
    budget: Option<u128>,
) -> Result<WeightTable, EnumeratorError> {
    let budget = budget.unwrap_or(DEFAULT_ORACLE_BUDGET);
    let q = field.q() as u128;
    let len = match encoder {
        BruteEncoder::Accumulator { n_len } | BruteEncoder::Feedforward { n_len } => n_len,
        BruteEncoder::Repetition { k, .. } => k,
    };
    let required = q.checked_pow(len as u32).unwrap_or(u128::MAX);
    if required > budget {
        return Err(EnumeratorError::BudgetExceeded {
            what: "brute-force enumeration",
            required,
            budget,
            unit: "paths",
        });
    }
    let (in_len, out_len) = match encoder {
        BruteEncoder::Accumulator { n_len } | BruteEncoder::Feedforward { n_len } => (n_len, n_len),
        BruteEncoder::Repetition { n, k } => (k, n as usize * k),
    };
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut input = vec![0u32; in_len];
    loop {
        let (w, h, terminated) = match encoder {
            BruteEncoder::Accumulator { .. } => {
                let mut state = 0u32;
                let mut h = 0usize;
                for &x in &input {
                    state = field.sub_raw(x, state);
                    h += (state != 0) as usize;
                }
                (
                    input.iter().filter(|&&x| x != 0).count(),
                    h,
                    state == 0,
                )
            }
            BruteEncoder::Feedforward { .. } => {
                let mut prev = 0u32;
                let mut h = 0usize;
                for &x in &input {
                    let y = field.add_raw(x, prev);
                    h += (y != 0) as usize;
                    prev = x;
                }
                (
                    input.iter().filter(|&&x| x != 0).count(),
                    h,
                    prev == 0,
                )
            }
            BruteEncoder::Repetition { n, .. } => {
                let w = input.iter().filter(|&&x| x != 0).count();
                (w, n as usize * w, true)
            }
        };
        if terminated {
            *counts.entry((w, h)).or_insert(0) += 1;
        }
        // next input in mixed radix
        let mut i = 0;
        loop {
            if i == in_len {
                let mut t = WeightTable::new(in_len, out_len);
                for ((w, h), c) in counts {
                    t.set(w, h, BigRational::from_integer(big(c)));
                }
                return Ok(t);
            }
            input[i] += 1;
            if input[i] < field.q() {
                break;
            }
            input[i] = 0;
            i += 1;
        }
    }
}

/// Exhaustive ensemble average for the single-accumulator ensemble:
/// repetition, weighter, interleaver, accumulator, averaged over every
/// permutation and every nonzero weighter assignment.
///
/// Only viable for tiny instances; the cost is q^K * N! * (q-1)^N encodes.
pub fn exhaustive_ensemble_average(
    field: &FieldSpec,
    n: u32,
    k: usize,
    budget: Option<u128>,
) -> Result<WeightTable, EnumeratorError> {
    let budget = budget.unwrap_or(DEFAULT_ORACLE_BUDGET);
    let q = field.q() as u128;
    let n_len = n as usize * k;
    let mut required: u128 = q.pow(k as u32);
    for i in 1..=n_len as u128 {
        required = required.saturating_mul(i);
    }
    required = required.saturating_mul((q - 1).pow(n_len as u32));
    if required > budget {
        return Err(EnumeratorError::BudgetExceeded {
            what: "exhaustive ensemble average",
            required,
            budget,
            unit: "paths",
        });
    }
    // enumerate permutations of 0..n_len (Heap's algorithm), weighters in
    // mixed radix over nonzero symbols, and all information words
    let mut perms: Vec<Vec<usize>> = Vec::new();
    let mut idx: Vec<usize> = (0..n_len).collect();
    fn heaps(k: usize, arr: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(arr.clone());
            return;
        }
        for i in 0..k {
            heaps(k - 1, arr, out);
            if k % 2 == 0 {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }
    heaps(n_len, &mut idx, &mut perms);

    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut info = vec![0u32; k];
    let mut rep = vec![0u32; n_len];
    let mut weighted = vec![0u32; n_len];
    let qn = field.q();
    loop {
        let w = info.iter().filter(|&&x| x != 0).count();
        for i in 0..n_len {
            rep[i] = info[i / n as usize];
        }
        let mut weights = vec![1u32; n_len];
        loop {
            for i in 0..n_len {
                weighted[i] = field.mul_raw(weights[i], rep[i]);
            }
            for perm in &perms {
                let mut state = 0u32;
                let mut h = 0usize;
                for &j in perm {
                    state = field.sub_raw(weighted[j], state);
                    h += (state != 0) as usize;
                }
                // terminated accumulator: paths returning to state zero
                if state == 0 {
                    *counts.entry((w, h)).or_insert(0) += 1;
                }
            }
            // next weighter assignment (each weight in 1..q)
            let mut i = 0;
            loop {
                if i == n_len {
                    break;
                }
                weights[i] += 1;
                if weights[i] < qn {
                    break;
                }
                weights[i] = 1;
                i += 1;
            }
            if i == n_len {
                break;
            }
        }
        // next info word
        let mut i = 0;
        loop {
            if i == k {
                let mut norm = BigUint::one();
                for j in 1..=n_len {
                    norm *= j as u64;
                }
                norm *= BigUint::from(qn as u64 - 1).pow(n_len as u32);
                let denom = BigInt::from(norm);
                let mut t = WeightTable::new(k, n_len);
                for ((w, h), c) in counts {
                    t.set(
                        w,
                        h,
                        BigRational::new(big(c), denom.clone()),
                    );
                }
                return Ok(t);
            }
            info[i] += 1;
            if info[i] < qn {
                break;
            }
            info[i] = 0;
            i += 1;
        }
    }
}

/// The finite-N spectral shape (1/N) ln a_{floor(rho N)}, from the exact
/// ensemble weight enumerator; `f64::NEG_INFINITY` where the count is zero.
pub fn finite_n_spectral_shape(params: &EnsembleParams, rho: f64) -> f64 {
    assert!((0.0..=1.0).contains(&rho), "rho must lie in [0, 1]");
    let n_len = params.block_len();
    let we = ensemble_we(params);
    let h = ((rho * n_len as f64).floor() as usize).min(n_len);
    if we[h].is_zero() {
        return f64::NEG_INFINITY;
    }
    ln_rational(&we[h]) / n_len as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;
    use proptest::prelude::*;

    fn ratio(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn accumulator_base_cases() {
        for q in [3u32, 4, 5, 8] {
            for n_len in [1usize, 2, 4, 6] {
                let t = accumulator_iowe(q, n_len);
                assert_eq!(t.get(0, 0), BigRational::one());
                for h in 0..=n_len {
                    assert!(t.get(1, h).is_zero(), "weight-1 inputs cannot terminate");
                }
            }
        }
    }

    #[test]
    fn accumulator_tiny_by_hand() {
        let t = accumulator_iowe(3, 2);
        assert_eq!(t.get(2, 1), ratio(2, 1));
        assert_eq!(t.total(), ratio(3, 1)); // q^(N-1)
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn feedforward_is_transpose() {
        for (q, n_len) in [(3u32, 4usize), (4, 5), (5, 3)] {
            let acc = accumulator_iowe(q, n_len);
            let ff = feedforward_iowe(q, n_len);
            assert_eq!(acc.transpose(), ff);
        }
        assert_eq!(feedforward_iowe(3, 2).get(1, 2), ratio(2, 1));
    }

    #[test]
    fn repetition_closed_form_and_row_sum() {
        let t = repetition_iowe(4, 2, 3);
        assert_eq!(t.get(0, 0), BigRational::one());
        assert_eq!(t.get(2, 4), ratio(27, 1)); // C(3,2) * 3^2
        assert_eq!(t.total(), ratio(64, 1)); // q^K
        for (&(w, h), _) in t.iter() {
            assert_eq!(h, 2 * w);
        }
    }

    #[test]
    fn concat_identity_inner_is_noop() {
        // inner = "identity code": a_{l,l} = C(N,l)(q-1)^l cancels the
        // normalization exactly
        let q = 4u32;
        let outer = repetition_iowe(q, 2, 2);
        let n_len = 4;
        let mut ident = WeightTable::new(n_len, n_len);
        for l in 0..=n_len {
            ident.set(
                l,
                l,
                rat_int(binomial(n_len, l) * BigUint::from(3u32).pow(l as u32)),
            );
        }
        let out = concat_uniform(&outer, &ident, q).unwrap();
        assert_eq!(out, outer);
    }

    #[test]
    fn concat_rejects_length_mismatch() {
        let a = repetition_iowe(3, 2, 2); // out 4
        let b = accumulator_iowe(3, 5);
        assert!(matches!(
            concat_uniform(&a, &b, 3),
            Err(EnumeratorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn brute_force_accumulator_tiny() {
        let f = FieldSpec::new(3).unwrap();
        let t = brute_force_iowe(BruteEncoder::Accumulator { n_len: 2 }, &f, None).unwrap();
        assert_eq!(t.get(0, 0), BigRational::one());
        assert_eq!(t.get(2, 1), ratio(2, 1));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn oracle_equivalence_small_fields() {
        for q in [3u64, 4, 5] {
            let f = FieldSpec::new(q).unwrap();
            for n_len in 1..=6usize {
                let analytic = accumulator_iowe(q as u32, n_len);
                let brute =
                    brute_force_iowe(BruteEncoder::Accumulator { n_len }, &f, None).unwrap();
                assert_eq!(analytic, brute, "accumulator q={q} N={n_len}");
                let analytic = feedforward_iowe(q as u32, n_len);
                let brute =
                    brute_force_iowe(BruteEncoder::Feedforward { n_len }, &f, None).unwrap();
                assert_eq!(analytic, brute, "feedforward q={q} N={n_len}");
            }
            let analytic = repetition_iowe(q as u32, 2, 2);
            let brute =
                brute_force_iowe(BruteEncoder::Repetition { n: 2, k: 2 }, &f, None).unwrap();
            assert_eq!(analytic, brute, "repetition q={q}");
        }
    }

    #[test]
    fn termination_count_is_q_pow_n_minus_1() {
        for q in [3u64, 4, 5, 8] {
            for n_len in 1..=8usize {
                let t = accumulator_iowe(q as u32, n_len);
                let expect = BigRational::from_integer(BigInt::from(q).pow(n_len as u32 - 1));
                assert_eq!(t.total(), expect, "q={q} N={n_len}");
            }
        }
    }

    #[test]
    fn modulus_choice_does_not_change_oracle() {
        // same brute-force table under both irreducible cubics for GF(8)
        let f1 = FieldSpec::new(8).unwrap();
        let f2 = FieldSpec::with_modulus(8, &[1, 0, 1, 1]).unwrap();
        let t1 = brute_force_iowe(BruteEncoder::Accumulator { n_len: 3 }, &f1, None).unwrap();
        let t2 = brute_force_iowe(BruteEncoder::Accumulator { n_len: 3 }, &f2, None).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn ensemble_average_matches_exhaustive_oracle() {
        // q=3, n=2, K=2, L=1: Theorem-level identity, exact rationals
        let f = FieldSpec::new(3).unwrap();
        let oracle = exhaustive_ensemble_average(&f, 2, 2, None).unwrap();
        let params = EnsembleParams::new(3, 2, 1, 2).unwrap();
        let analytic = ensemble_iowe(&params);
        assert_eq!(oracle, analytic);
        assert_eq!(analytic.get(0, 0), BigRational::one());
    }

    #[test]
    fn ensemble_we_matches_oracle_n3() {
        let f = FieldSpec::new(3).unwrap();
        let oracle = exhaustive_ensemble_average(&f, 3, 2, None).unwrap();
        let params = EnsembleParams::new(3, 3, 1, 2).unwrap();
        let we = ensemble_we(&params);
        let oracle_we = oracle.output_marginal();
        assert_eq!(we, oracle_we);
        assert_eq!(we[0], BigRational::one());
        assert!(we.iter().all(|v| *v >= BigRational::zero()));
    }

    #[test]
    fn cwe_l1_reduces_to_concat() {
        let params = EnsembleParams::new(3, 2, 1, 2).unwrap();
        let cwe = wnrma_cwe(&params, None).unwrap();
        assert_eq!(cwe.marginal_iowe(), ensemble_iowe(&params));
    }

    #[test]
    fn cwe_l2_marginal_matches_iterated_concat() {
        let params = EnsembleParams::new(3, 2, 2, 2).unwrap();
        let cwe = wnrma_cwe(&params, None).unwrap();
        assert_eq!(cwe.marginal_iowe(), ensemble_iowe(&params));
        // halving bound: h >= ceil(nw / 2^L) for every stored cell
        for cell in &cwe.cells {
            let w = cell.profile[0];
            let h = *cell.profile.last().unwrap();
            let bound = (params.n as usize * w).div_ceil(1 << params.l);
            assert!(h >= bound, "profile {:?} violates halving bound", cell.profile);
            assert!(cell.value >= BigRational::zero());
        }
    }

    #[test]
    fn cwe_budget_refusal() {
        let params = EnsembleParams::new(4, 3, 3, 20).unwrap();
        let err = wnrma_cwe(&params, Some(1000)).unwrap_err();
        assert!(matches!(err, EnumeratorError::BudgetExceeded { .. }));
    }

    #[test]
    fn brute_force_budget_refusal() {
        let f = FieldSpec::new(5).unwrap();
        let err = brute_force_iowe(BruteEncoder::Accumulator { n_len: 20 }, &f, Some(1000))
            .unwrap_err();
        match err {
            EnumeratorError::BudgetExceeded { required, .. } => {
                assert_eq!(required, 5u128.pow(20));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn halving_bound_on_ensemble_iowe() {
        for l in 1..=2u32 {
            let params = EnsembleParams::new(3, 2, l, 3).unwrap();
            let t = ensemble_iowe(&params);
            for (&(w, h), v) in t.iter() {
                if w == 0 {
                    continue;
                }
                assert!(
                    h >= (params.n as usize * w).div_ceil(1 << l),
                    "L={l} w={w} h={h} value={v}"
                );
            }
        }
    }

    #[test]
    fn finite_n_shape_edges() {
        let params = EnsembleParams::new(3, 3, 1, 2).unwrap();
        assert_eq!(finite_n_spectral_shape(&params, 0.0), 0.0);
        // h = 1 sits below the halving bound ceil(3w/2) for every w > 0
        assert_eq!(
            finite_n_spectral_shape(&params, 1.0 / 6.0),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn weight_table_csv_json_round_trip_values() {
        let t = repetition_iowe(4, 2, 2);
        let csv = t.to_csv();
        assert!(csv.starts_with("w,h,numerator,denominator\n"));
        assert!(csv.contains("1,2,6,1"));
        assert!(csv.contains("2,4,9,1"));
        let params = EnsembleParams::new(4, 2, 1, 2).unwrap();
        let json = t.to_json(Some(&params));
        assert_eq!(json["params"]["N"], 4);
        let cells = json["cells"].as_array().unwrap();
        assert!(cells
            .iter()
            .any(|c| c["w"] == 2 && c["h"] == 4 && c["numerator"] == "9"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn transpose_identity_holds(q in 3u32..=6, n_len in 1usize..=8) {
            let q = if q == 6 { 7 } else { q }; // keep q a prime power
            prop_assert_eq!(
                feedforward_iowe(q, n_len),
                accumulator_iowe(q, n_len).transpose()
            );
        }

        #[test]
        fn termination_count_randomized(q in prop::sample::select(vec![3u64, 4, 5, 8]),
                                        n_len in 1usize..=12) {
            let t = accumulator_iowe(q as u32, n_len);
            let expect = BigRational::from_integer(BigInt::from(q).pow(n_len as u32 - 1));
            prop_assert_eq!(t.total(), expect);
        }
    }

    #[test]
    fn rat_helpers() {
        assert_eq!(
            rat_int(BigUint::from_u64(7).unwrap()),
            BigRational::from_integer(BigInt::from(7))
        );
    }
}
