//! Asymptotic spectral shape function r(rho) of WNRMA ensembles and the
//! minimum-distance growth rate coefficient rho0.
//!
//! Two independent evaluation routes are provided and must agree:
//!
//! * [`spectral_shape`] optimizes the joint exponent over all per-stage
//!   weight fractions, combining the stationary-point chain (beta0 sweep,
//!   per-stage cubics) with a boundary sweep and a multi-start projected
//!   coordinate ascent.
//! * [`spectral_shape_recursive`] composes the single-stage kernel
//!   psi(u, rho) stage by stage on a dense grid (dynamic programming with
//!   local refinement).
//!
//! q = 2 is supported as the degenerate case where every error event has
//! input weight exactly two, pinning gamma = u/2; the stationary chain does
//! not apply there and the optimizer runs on the reduced problem.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::util::{cubic_real_roots, entropy, golden_max};

#[derive(Debug, Error, PartialEq)]
pub enum SpectraError {
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("rho = {0} outside the open interval (0, (q-1)/q)")]
    RhoOutOfDomain(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// rho sampling specification for curves and threshold scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut x = self.start;
        while x <= self.stop + 1e-12 {
            out.push(x.min(self.stop));
            x += self.step;
        }
        out
    }
}

/// Parameters of a spectral-shape computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralConfig {
    pub q: u32,
    pub n: u32,
    pub l: u32,
    pub grid: GridSpec,
    /// Convergence tolerance for root solves and 1-D searches.
    pub root_tol: f64,
    /// Zero-detection tolerance for "r(rho) > 0".
    pub detect_tol: f64,
    /// Resolution of the outer beta0 scan.
    pub beta0_points: usize,
    /// Grid size of the recursive dynamic-programming evaluator.
    pub dp_points: usize,
    /// Warm-start hint for curve sweeps. The full beta0 scan is cheap enough
    /// that the implementation ignores this; results are identical either
    /// way, which the determinism tests pin down.
    pub warm_start: bool,
}

impl SpectralConfig {
    pub fn new(q: u32, n: u32, l: u32) -> Result<Self, SpectraError> {
        if q < 2 {
            return Err(SpectraError::InvalidConfig(format!("q = {q} < 2")));
        }
        if n < 1 {
            return Err(SpectraError::InvalidConfig(format!("n = {n} < 1")));
        }
        Ok(SpectralConfig {
            q,
            n,
            l,
            grid: GridSpec {
                start: 0.0,
                stop: 1.0,
                step: 0.005,
            },
            root_tol: 1e-9,
            detect_tol: 1e-6,
            beta0_points: 256,
            dp_points: 1200,
            warm_start: true,
        })
    }
}

/// How the reported supremum was located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// Stationary-point chain, all coordinates interior.
    InteriorStationary,
    /// A gamma coordinate sits on its interval boundary (includes all q = 2
    /// points, where gamma is pinned).
    Boundary,
    /// Best value came from the multi-start coordinate-ascent fallback.
    GridFallback,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::InteriorStationary => "interior-stationary",
            Branch::Boundary => "boundary",
            Branch::GridFallback => "grid-fallback",
        }
    }
}

/// One evaluated point of the spectral shape, with the optimizing interior
/// variables: betas = (beta_0..beta_{L-1}), gammas = (gamma_1..gamma_L),
/// beta_L = rho implicitly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub rho: f64,
    pub r: f64,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub branch: Branch,
}

/// Growth rate coefficient rho0 with its bisection bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRate {
    pub rho0: f64,
    pub bracket: (f64, f64),
    pub evals: usize,
    /// Set when r is already positive at the leftmost grid point, i.e. the
    /// zero plateau is absent and the ensemble is not asymptotically good by
    /// this test.
    pub positive_at_origin: bool,
}

impl GrowthRate {
    pub fn to_json(&self, q: u32, n: u32, l: u32) -> serde_json::Value {
        serde_json::json!({
            "q": q, "n": n, "L": l,
            "rho0": self.rho0,
            "bracket": [self.bracket.0, self.bracket.1],
            "evals": self.evals,
            "positive_at_origin": self.positive_at_origin,
        })
    }
}

/// Feasible gamma interval for one stage with input fraction u and output
/// fraction rho. `None` when empty.
pub fn gamma_interval(u: f64, rho: f64) -> Option<(f64, f64)> {
    let lo = (u - rho).max(0.0);
    let hi = rho.min(1.0 - rho).min(u / 2.0);
    (lo <= hi + 1e-15).then(|| (lo, hi.max(lo)))
}

/// Exponent of one accumulator stage (including the preceding uniform
/// interleaver and random weighter) at input fraction u, output fraction
/// rho, event fraction gamma. Returns -inf outside the feasible region.
pub fn stage_exponent(q: u32, u: f64, rho: f64, gamma: f64) -> f64 {
    let qf = q as f64;
    let Some((lo, hi)) = gamma_interval(u, rho) else {
        return f64::NEG_INFINITY;
    };
    if gamma < lo - 1e-12 || gamma > hi + 1e-12 {
        return f64::NEG_INFINITY;
    }
    let gamma = gamma.clamp(lo, hi);
    let mut t = -entropy(u);
    if rho > 0.0 {
        t += rho * entropy(gamma / rho);
    }
    if rho < 1.0 {
        t += (1.0 - rho) * entropy(gamma / (1.0 - rho));
    }
    if rho - gamma > 0.0 {
        t += (rho - gamma) * entropy((u - 2.0 * gamma) / (rho - gamma));
    }
    t += (gamma - u) * (qf - 1.0).ln();
    if q > 2 {
        t += (u - 2.0 * gamma) * (qf - 2.0).ln();
    } else if (u - 2.0 * gamma).abs() > 1e-12 {
        // q = 2: only gamma = u/2 carries mass
        return f64::NEG_INFINITY;
    }
    t
}

/// Real roots of the stage stationarity cubic in gamma for given (u, rho):
/// q^2 g^3 + (rho q^2 - u q^2 + 4 - 4q) g^2
///   + (q-1)(u^2 + 4u(1-rho)) g - (q-1)(1-rho) u^2 = 0.
pub fn stage_cubic_roots(q: u32, u: f64, rho: f64) -> Vec<f64> {
    let qf = q as f64;
    cubic_real_roots(
        qf * qf,
        rho * qf * qf - u * qf * qf + 4.0 - 4.0 * qf,
        (qf - 1.0) * (u * u + 4.0 * u * (1.0 - rho)),
        -(qf - 1.0) * (1.0 - rho) * u * u,
    )
}

/// Single-stage kernel psi(u, rho): the supremum of [`stage_exponent`] over
/// the feasible gamma interval, solved via the stationarity cubic plus the
/// interval endpoints. Returns the value and the maximizing gamma; -inf and
/// gamma = NaN when the interval is empty.
pub fn psi_with_argmax(q: u32, u: f64, rho: f64) -> (f64, f64) {
    let Some((lo, hi)) = gamma_interval(u, rho) else {
        return (f64::NEG_INFINITY, f64::NAN);
    };
    if q == 2 {
        let g = u / 2.0;
        return (stage_exponent(q, u, rho, g), g);
    }
    let mut best = (stage_exponent(q, u, rho, lo), lo);
    let cand = stage_exponent(q, u, rho, hi);
    if cand > best.0 {
        best = (cand, hi);
    }
    for root in stage_cubic_roots(q, u, rho) {
        if root > lo - 1e-12 && root < hi + 1e-12 {
            let g = root.clamp(lo, hi);
            let v = stage_exponent(q, u, rho, g);
            // ties broken toward smaller gamma for deterministic output
            if v > best.0 + 1e-15 || (v > best.0 - 1e-15 && g < best.1) {
                best = (v, g);
            }
        }
    }
    best
}

/// psi(u, rho) itself.
pub fn psi(q: u32, u: f64, rho: f64) -> f64 {
    psi_with_argmax(q, u, rho).0
}

/// Asymptotic spectral shape of the rate-1/n repeat code over GF(q):
/// (H(rho) + rho ln(q-1)) / n.
pub fn repeat_shape(q: u32, n: u32, rho: f64) -> f64 {
    (entropy(rho) + rho * (q as f64 - 1.0).ln()) / n as f64
}

fn check_box(
    l: usize,
    betas: &[f64],
    gammas: &[f64],
    rho: f64,
) -> Result<(), SpectraError> {
    if betas.len() != l || gammas.len() != l {
        return Err(SpectraError::ConstraintViolation(format!(
            "need {l} betas and {l} gammas, got {} and {}",
            betas.len(),
            gammas.len()
        )));
    }
    for (i, &b) in betas.iter().enumerate() {
        if !(-1e-12..=1.0 + 1e-12).contains(&b) {
            return Err(SpectraError::ConstraintViolation(format!(
                "beta_{i} = {b} outside [0, 1]"
            )));
        }
    }
    for li in 1..=l {
        let u = betas[li - 1];
        let b = if li == l { rho } else { betas[li] };
        let g = gammas[li - 1];
        let lo = (u - b).max(0.0);
        let hi = b.min(1.0 - b).min(u / 2.0);
        if g < lo - 1e-12 {
            return Err(SpectraError::ConstraintViolation(format!(
                "gamma_{li} = {g} < max(0, beta_{}-beta_{li}) = {lo}",
                li - 1
            )));
        }
        if g > hi + 1e-12 {
            return Err(SpectraError::ConstraintViolation(format!(
                "gamma_{li} = {g} > min(beta_{li}, 1-beta_{li}, beta_{}/2) = {hi}",
                li - 1
            )));
        }
    }
    Ok(())
}

/// The joint exponent f(beta_0..beta_{L-1}, gamma_1..gamma_L, rho), in nats.
///
/// `betas` holds beta_0..beta_{L-1}; beta_L = rho. Violated constraints
/// produce an error naming the inequality.
pub fn objective_f(
    q: u32,
    n: u32,
    betas: &[f64],
    gammas: &[f64],
    rho: f64,
) -> Result<f64, SpectraError> {
    let l = gammas.len();
    check_box(l, betas, gammas, rho)?;
    let mut t = repeat_shape(q, n, betas[0]);
    for li in 1..=l {
        let u = betas[li - 1];
        let b = if li == l { rho } else { betas[li] };
        t += stage_exponent(q, u, b, gammas[li - 1].clamp(0.0, 1.0));
    }
    Ok(t)
}

/// The same objective through the rewritten middle terms
/// beta_l H((beta_{l-1}-gamma_l)/beta_l)
///   + (beta_{l-1}-gamma_l) H(gamma_l/(beta_{l-1}-gamma_l));
/// used as an algebraic cross-check of [`objective_f`].
pub fn objective_f_rewritten(
    q: u32,
    n: u32,
    betas: &[f64],
    gammas: &[f64],
    rho: f64,
) -> Result<f64, SpectraError> {
    let l = gammas.len();
    check_box(l, betas, gammas, rho)?;
    let qf = q as f64;
    let mut t = repeat_shape(q, n, betas[0]);
    for li in 1..=l {
        let u = betas[li - 1];
        let b = if li == l { rho } else { betas[li] };
        let g = gammas[li - 1];
        t -= entropy(u);
        if b > 0.0 {
            t += b * entropy((u - g) / b);
        }
        if u - g > 0.0 {
            t += (u - g) * entropy(g / (u - g));
        }
        if b < 1.0 {
            t += (1.0 - b) * entropy(g / (1.0 - b));
        }
        t += (g - u) * (qf - 1.0).ln();
        if q > 2 {
            t += (u - 2.0 * g) * (qf - 2.0).ln();
        }
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// Stationary-point chain
// ---------------------------------------------------------------------------

struct ChainSolution {
    betas: Vec<f64>,
    gammas: Vec<f64>,
    f: f64,
}

/// Solves the stationarity chain for a fixed beta0: beta1 linear in gamma1
/// from the beta0 equation, per-stage cubics for each gamma, intermediate
/// betas linear in the next gamma. Every real feasible branch is returned.
fn chain_candidates(q: u32, n: u32, l: usize, rho: f64, beta0: f64) -> Vec<ChainSolution> {
    let qf = q as f64;
    if q <= 2 || beta0 <= 0.0 || beta0 >= 1.0 {
        return Vec::new();
    }
    // W = ((q-1)(1-b0)/b0)^(1/n - 1)
    let w = ((qf - 1.0) * (1.0 - beta0) / beta0).powf(1.0 / n as f64 - 1.0);
    if !w.is_finite() || w <= 0.0 {
        return Vec::new();
    }
    // beta1 = A + B gamma1 with A = b0 (1 + 1/((q-2) W)), B = -(1 + 2/((q-2) W))
    let c = 1.0 / ((qf - 2.0) * w);
    let mut solutions = Vec::new();
    // stack of partial chains: (betas so far, gammas so far)
    let mut stack: Vec<(Vec<f64>, Vec<f64>)> = vec![(vec![beta0], Vec::new())];
    for stage in 1..=l {
        let mut next_stack = Vec::new();
        for (betas, gammas) in stack {
            let u = betas[stage - 1];
            if stage == l {
                // final stage: beta_L = rho fixed, gamma_L from the cubic
                let (v, g) = psi_with_argmax(q, u, rho);
                if !v.is_finite() {
                    continue;
                }
                let mut bs = betas.clone();
                bs.push(rho);
                let mut gs = gammas.clone();
                gs.push(g);
                next_stack.push((bs, gs));
                continue;
            }
            // linear relation beta_stage = a + b*gamma_stage
            let (a, b) = if stage == 1 {
                (beta0 * (1.0 + c), -(1.0 + 2.0 * c))
            } else {
                // from the beta_{stage-1} stationarity equation
                let bl = betas[stage - 1];
                let blm = betas[stage - 2];
                let gl = gammas[stage - 2];
                let denom = (qf - 2.0) * bl * bl * (1.0 - bl - gl);
                if denom.abs() < 1e-300 {
                    continue;
                }
                let aa = (qf - 1.0) * (1.0 - bl) * (1.0 - bl) * (bl - blm + gl) / denom;
                (bl * (1.0 + aa), -(1.0 + 2.0 * aa))
            };
            // substitute into the stage cubic in gamma:
            // q^2 g^3 + (beta q^2 - u q^2 + 4 - 4q) g^2
            //   + (q-1)(u^2 + 4u(1 - beta)) g - (q-1)(1 - beta) u^2 = 0
            // with beta = a + b g (degree stays three).
            let q2 = qf * qf;
            let c3 = q2 + b * q2;
            let c2 = a * q2 - u * q2 + 4.0 - 4.0 * qf - 4.0 * u * (qf - 1.0) * b;
            let c1 = (qf - 1.0) * (u * u + 4.0 * u * (1.0 - a)) + (qf - 1.0) * b * u * u;
            let c0 = -(qf - 1.0) * (1.0 - a) * u * u;
            for g in cubic_real_roots(c3, c2, c1, c0) {
                let beta = a + b * g;
                if !(0.0..=1.0).contains(&beta) {
                    continue;
                }
                let lo = (u - beta).max(0.0);
                let hi = beta.min(1.0 - beta).min(u / 2.0).max(lo);
                if g < lo - 1e-10 || g > hi + 1e-10 {
                    continue;
                }
                let mut bs = betas.clone();
                bs.push(beta);
                let mut gs = gammas.clone();
                gs.push(g.clamp(lo, hi));
                next_stack.push((bs, gs));
            }
        }
        stack = next_stack;
        if stack.is_empty() {
            break;
        }
    }
    for (betas_full, gammas) in stack {
        let betas = betas_full[..l].to_vec();
        if let Ok(f) = objective_f(q, n, &betas, &gammas, rho) {
            if f.is_finite() {
                solutions.push(ChainSolution {
                    betas,
                    gammas,
                    f,
                });
            }
        }
    }
    solutions
}

fn chain_value(q: u32, n: u32, l: usize, rho: f64, beta0: f64) -> f64 {
    chain_candidates(q, n, l, rho, beta0)
        .into_iter()
        .map(|s| s.f)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn chain_best(q: u32, n: u32, l: usize, rho: f64, beta0: f64) -> Option<ChainSolution> {
    chain_candidates(q, n, l, rho, beta0)
        .into_iter()
        .max_by(|a, b| a.f.partial_cmp(&b.f).unwrap())
}

/// The one stationarity equation the chain leaves to the beta0 search: the
/// beta_{L-1} equation for L >= 2, the beta0 equation for L = 1.
fn leftover_residual(q: u32, n: u32, l: usize, rho: f64, beta0: f64) -> Option<f64> {
    let sol = chain_best(q, n, l, rho, beta0)?;
    let res = stationarity_residuals(q, n, &sol.betas, &sol.gammas, rho);
    let r = if l == 1 { res[0] } else { *res.last().unwrap() };
    r.is_finite().then_some(r)
}

/// Drives the leftover residual to zero by bisection around the golden-
/// section optimum, sharpening the argmax well past golden's tolerance.
fn polish_beta0(q: u32, n: u32, l: usize, rho: f64, beta0: f64) -> f64 {
    let Some(mid) = leftover_residual(q, n, l, rho, beta0) else {
        return beta0;
    };
    let mut h = 1e-9;
    let (mut lo, mut hi) = (beta0, beta0);
    let (mut flo, mut fhi) = (mid, mid);
    while h < 1e-4 {
        if flo.signum() != fhi.signum() {
            break;
        }
        lo = (beta0 - h).max(1e-12);
        hi = (beta0 + h).min(1.0 - 1e-12);
        flo = leftover_residual(q, n, l, rho, lo).unwrap_or(flo);
        fhi = leftover_residual(q, n, l, rho, hi).unwrap_or(fhi);
        h *= 8.0;
    }
    if flo.signum() == fhi.signum() {
        return beta0;
    }
    for _ in 0..80 {
        let m = 0.5 * (lo + hi);
        let Some(fm) = leftover_residual(q, n, l, rho, m) else {
            return beta0;
        };
        if fm == 0.0 || hi - lo < 1e-16 {
            return m;
        }
        if fm.signum() == flo.signum() {
            lo = m;
            flo = fm;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Coordinate ascent over the beta vector (gammas by per-stage inner sup)
// ---------------------------------------------------------------------------

/// Gamma pinning pattern for the boundary sweep.
#[derive(Clone, Copy, PartialEq, Eq)]
enum GammaPin {
    Interior,
    Lower,
    Upper,
}

fn stage_sup_pinned(q: u32, u: f64, rho: f64, pin: GammaPin) -> (f64, f64) {
    match pin {
        GammaPin::Interior => psi_with_argmax(q, u, rho),
        GammaPin::Lower => match gamma_interval(u, rho) {
            Some((lo, _)) => (stage_exponent(q, u, rho, lo), lo),
            None => (f64::NEG_INFINITY, f64::NAN),
        },
        GammaPin::Upper => match gamma_interval(u, rho) {
            Some((_, hi)) => (stage_exponent(q, u, rho, hi), hi),
            None => (f64::NEG_INFINITY, f64::NAN),
        },
    }
}

/// Objective reduced to the beta vector: r0(beta0) + sum of per-stage
/// suprema under the given pinning pattern.
fn reduced_objective(q: u32, n: u32, betas: &[f64], rho: f64, pins: &[GammaPin]) -> f64 {
    let l = pins.len();
    let mut t = repeat_shape(q, n, betas[0]);
    for li in 1..=l {
        let u = betas[li - 1];
        let b = if li == l { rho } else { betas[li] };
        let v = stage_sup_pinned(q, u, b, pins[li - 1]).0;
        if !v.is_finite() {
            return f64::NEG_INFINITY;
        }
        t += v;
    }
    t
}

/// Coordinate ascent on the betas from one starting point. Each update scans
/// a lattice then refines by golden section, so non-unimodal slices cannot
/// trap it on a shoulder.
fn ascend(
    q: u32,
    n: u32,
    rho: f64,
    pins: &[GammaPin],
    start: &[f64],
    tol: f64,
) -> (Vec<f64>, f64) {
    let l = pins.len();
    let mut betas = start.to_vec();
    let mut best = reduced_objective(q, n, &betas, rho, pins);
    const SCAN: usize = 48;
    for _sweep in 0..12 {
        let before = best;
        for i in 0..l {
            let eval = |x: f64, betas: &mut Vec<f64>| {
                let old = betas[i];
                betas[i] = x;
                let v = reduced_objective(q, n, betas, rho, pins);
                betas[i] = old;
                v
            };
            let mut arg = betas[i];
            let mut val = best;
            for s in 0..=SCAN {
                let x = s as f64 / SCAN as f64;
                let v = eval(x, &mut betas);
                if v > val {
                    val = v;
                    arg = x;
                }
            }
            let lo = (arg - 1.0 / SCAN as f64).max(0.0);
            let hi = (arg + 1.0 / SCAN as f64).min(1.0);
            let (garg, gval) = golden_max(|x| eval(x, &mut betas), lo, hi, tol);
            if gval > val {
                val = gval;
                arg = garg;
            }
            if val > best {
                best = val;
                betas[i] = arg;
            }
        }
        if best - before < 1e-13 {
            break;
        }
    }
    (betas, best)
}

fn gamma_pins_patterns(l: usize) -> Vec<Vec<GammaPin>> {
    let mut out = Vec::with_capacity(3usize.pow(l as u32));
    let mut idx = vec![0u8; l];
    loop {
        out.push(
            idx.iter()
                .map(|&v| match v {
                    0 => GammaPin::Interior,
                    1 => GammaPin::Lower,
                    _ => GammaPin::Upper,
                })
                .collect(),
        );
        let mut i = 0;
        loop {
            if i == l {
                return out;
            }
            idx[i] += 1;
            if idx[i] < 3 {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn recover_point(
    q: u32,
    n: u32,
    rho: f64,
    betas: &[f64],
    pins: &[GammaPin],
    branch: Branch,
) -> SpectralPoint {
    let l = pins.len();
    let mut gammas = Vec::with_capacity(l);
    let mut r = repeat_shape(q, n, betas[0]);
    for li in 1..=l {
        let u = betas[li - 1];
        let b = if li == l { rho } else { betas[li] };
        let (v, g) = stage_sup_pinned(q, u, b, pins[li - 1]);
        gammas.push(g);
        r += v;
    }
    SpectralPoint {
        rho,
        r,
        betas: betas.to_vec(),
        gammas,
        branch,
    }
}

/// Residuals of the three stationarity equations at a candidate point, as
/// relative deviations of each equation's two sides. Only meaningful at
/// interior points; non-finite entries mean the equation is degenerate
/// there.
pub fn stationarity_residuals(
    q: u32,
    n: u32,
    betas: &[f64],
    gammas: &[f64],
    rho: f64,
) -> Vec<f64> {
    let qf = q as f64;
    let l = gammas.len();
    let beta = |i: usize| if i == l { rho } else { betas[i] };
    let mut res = Vec::new();
    let b0 = betas[0];
    let w = ((qf - 1.0) * (1.0 - b0) / b0).powf(1.0 / n as f64 - 1.0);
    res.push(w * (beta(1) - b0 + gammas[0]) * (qf - 2.0) / (b0 - 2.0 * gammas[0]) - 1.0);
    for li in 1..=l {
        let u = beta(li - 1);
        let b = beta(li);
        let g = gammas[li - 1];
        let lhs = (qf - 2.0) * (qf - 2.0) * (b - u + g) * g * g;
        let rhs = (qf - 1.0) * (u - 2.0 * g) * (u - 2.0 * g) * (1.0 - b - g);
        res.push(lhs / rhs - 1.0);
    }
    for li in 1..l {
        let num = beta(li) * beta(li)
            * (1.0 - beta(li) - gammas[li - 1])
            * (beta(li + 1) - beta(li) + gammas[li]);
        let den = (1.0 - beta(li)) * (1.0 - beta(li))
            * (beta(li) - beta(li - 1) + gammas[li - 1])
            * (beta(li) - 2.0 * gammas[li]);
        res.push(num / den * (qf - 2.0) / (qf - 1.0) - 1.0);
    }
    res
}

/// Solves the supremum defining r(rho) and reports the argmax.
///
/// Candidates come from (a) the stationary chain over a dense beta0 sweep
/// with golden refinement, (b) a boundary sweep over all 3^L gamma pinning
/// patterns, and (c) a 32-start projected coordinate ascent; the all-zero
/// corner (r = 0) is always feasible and seeds the set.
pub fn spectral_shape(config: &SpectralConfig, rho: f64) -> SpectralPoint {
    assert!((0.0..=1.0).contains(&rho), "rho must lie in [0, 1]");
    let (q, n, l) = (config.q, config.n, config.l as usize);
    let zero = SpectralPoint {
        rho,
        r: 0.0,
        betas: vec![0.0; l],
        gammas: vec![0.0; l],
        branch: Branch::Boundary,
    };
    if rho == 0.0 {
        return zero;
    }
    let mut best = zero;

    // (a) stationary chain, q >= 3 only
    if q >= 3 {
        let delta = 1e-9;
        let points = config.beta0_points.max(16);
        let mut scan_best: Vec<(f64, f64)> = Vec::new(); // (beta0, value)
        for i in 0..=points {
            let b0 = delta + (1.0 - 2.0 * delta) * i as f64 / points as f64;
            let v = chain_value(q, n, l, rho, b0);
            scan_best.push((b0, v));
        }
        // refine every local maximum of the scan
        for i in 0..scan_best.len() {
            let v = scan_best[i].1;
            if !v.is_finite() {
                continue;
            }
            let left = if i > 0 { scan_best[i - 1].1 } else { f64::NEG_INFINITY };
            let right = if i + 1 < scan_best.len() {
                scan_best[i + 1].1
            } else {
                f64::NEG_INFINITY
            };
            if v < left || v < right {
                continue;
            }
            let lo = scan_best[i.saturating_sub(1)].0;
            let hi = scan_best[(i + 1).min(scan_best.len() - 1)].0;
            let (b0, _) = golden_max(
                |x| chain_value(q, n, l, rho, x),
                lo,
                hi,
                config.root_tol * 1e-3,
            );
            let b0 = polish_beta0(q, n, l, rho, b0);
            for sol in chain_candidates(q, n, l, rho, b0) {
                if sol.f > best.r {
                    best = SpectralPoint {
                        rho,
                        r: sol.f,
                        betas: sol.betas,
                        gammas: sol.gammas,
                        branch: Branch::InteriorStationary,
                    };
                }
            }
        }
    }

    // (b) boundary sweep: all gamma pinning patterns, one deterministic start
    let patterns = gamma_pins_patterns(l);
    let all_interior = vec![GammaPin::Interior; l];
    for pins in &patterns {
        let start: Vec<f64> = (0..l)
            .map(|i| {
                let t = (i + 1) as f64 / (l + 1) as f64;
                rho * t + 0.5 * (1.0 - t)
            })
            .collect();
        let (betas, v) = ascend(q, n, rho, pins, &start, config.root_tol);
        if v > best.r + 1e-15 {
            let branch = if pins == &all_interior {
                Branch::GridFallback
            } else {
                Branch::Boundary
            };
            best = recover_point(q, n, rho, &betas, pins, branch);
        }
    }

    // (c) multi-start ascent on the free pattern as a safety net
    for s in 0..32 {
        let frac = (s % 8) as f64 / 8.0 + 0.0625;
        let tilt = (s / 8) as f64 / 4.0;
        let start: Vec<f64> = (0..l)
            .map(|i| {
                let t = (i + 1) as f64 / (l + 1) as f64;
                (frac * (1.0 - t) + (rho * (1.0 - tilt) + tilt * frac) * t).clamp(0.0, 1.0)
            })
            .collect();
        let (betas, v) = ascend(q, n, rho, &all_interior, &start, config.root_tol);
        if v > best.r + 1e-15 {
            best = recover_point(q, n, rho, &betas, &all_interior, Branch::GridFallback);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Recursive dynamic-programming evaluator
// ---------------------------------------------------------------------------

/// Dense-grid evaluator of the recursion
/// r_l(rho) = sup_u [ r_{l-1}(u) + psi(u, rho) ], r_0 = repeat shape.
pub struct ShapeEvaluator {
    q: u32,
    points: usize,
    /// r_0..r_{L-1} tabulated on the uniform grid.
    tables: Vec<Vec<f64>>,
}

impl ShapeEvaluator {
    pub fn new(config: &SpectralConfig) -> Self {
        let points = config.dp_points.max(64);
        let (q, n, l) = (config.q, config.n, config.l as usize);
        let grid: Vec<f64> = (0..=points).map(|i| i as f64 / points as f64).collect();
        let mut tables = Vec::with_capacity(l);
        let mut current: Vec<f64> = grid.iter().map(|&u| repeat_shape(q, n, u)).collect();
        tables.push(current.clone());
        for _stage in 1..l {
            let prev = current;
            current = grid
                .par_iter()
                .map(|&rho| Self::stage_sup(q, &prev, points, rho))
                .collect();
            tables.push(current.clone());
        }
        ShapeEvaluator { q, points, tables }
    }

    fn interp(table: &[f64], points: usize, u: f64) -> f64 {
        let x = u.clamp(0.0, 1.0) * points as f64;
        let i = (x.floor() as usize).min(points - 1);
        let frac = x - i as f64;
        table[i] * (1.0 - frac) + table[i + 1] * frac
    }

    fn stage_sup(q: u32, prev: &[f64], points: usize, rho: f64) -> f64 {
        let mut arg = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, &ru) in prev.iter().enumerate() {
            let v = ru + psi(q, i as f64 / points as f64, rho);
            if v > best {
                best = v;
                arg = i;
            }
        }
        let lo = arg.saturating_sub(1) as f64 / points as f64;
        let hi = ((arg + 1).min(points)) as f64 / points as f64;
        let (_, refined) = golden_max(
            |u| Self::interp(prev, points, u) + psi(q, u, rho),
            lo,
            hi,
            1e-12,
        );
        best.max(refined)
    }

    /// r(rho) through the composed kernel.
    pub fn eval(&self, rho: f64) -> f64 {
        let prev = self.tables.last().expect("at least one stage");
        Self::stage_sup(self.q, prev, self.points, rho)
    }
}

static EVALUATOR_CACHE: OnceLock<Mutex<HashMap<(u32, u32, u32, usize), Arc<ShapeEvaluator>>>> =
    OnceLock::new();

/// Shared, memoized evaluator for repeated recursive queries at one
/// configuration.
pub fn shared_evaluator(config: &SpectralConfig) -> Arc<ShapeEvaluator> {
    let cache = EVALUATOR_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (config.q, config.n, config.l, config.dp_points);
    if let Some(e) = cache.lock().unwrap().get(&key) {
        return e.clone();
    }
    let built = Arc::new(ShapeEvaluator::new(config));
    cache
        .lock()
        .unwrap()
        .entry(key)
        .or_insert_with(|| built.clone())
        .clone()
}

/// r(rho) by the recursive route; must agree with [`spectral_shape`] within
/// 1e-4 nats (the consistency tests pin this down).
pub fn spectral_shape_recursive(config: &SpectralConfig, rho: f64) -> f64 {
    assert!((0.0..=1.0).contains(&rho), "rho must lie in [0, 1]");
    shared_evaluator(config).eval(rho)
}

// ---------------------------------------------------------------------------
// Growth rate
// ---------------------------------------------------------------------------

/// Locates rho0: the detection-threshold crossing of r(rho) on
/// [0, (q-1)/q), bisected to 1e-4 resolution from a grid scan bracket.
pub fn rho0(config: &SpectralConfig) -> GrowthRate {
    let top = (config.q as f64 - 1.0) / config.q as f64;
    let step = config.grid.step.min(0.01).max(1e-4);
    let tol = config.detect_tol;
    let mut evals = 0usize;
    let scan = shared_evaluator(config);
    let mut positive = |rho: f64, precise: bool| -> bool {
        evals += 1;
        if precise {
            spectral_shape(config, rho).r > tol
        } else {
            scan.eval(rho) > tol
        }
    };
    let first = step.max(config.grid.start.max(step));
    if positive(first, true) {
        return GrowthRate {
            rho0: 0.0,
            bracket: (0.0, first),
            evals,
            positive_at_origin: true,
        };
    }
    let mut lo = first;
    let mut hi = None;
    let mut x = first + step;
    while x < top {
        if positive(x, false) {
            hi = Some(x);
            break;
        }
        lo = x;
        x += step;
    }
    let Some(mut hi) = hi else {
        // no positive region found below (q-1)/q; report the right edge
        return GrowthRate {
            rho0: top,
            bracket: (lo, top),
            evals,
            positive_at_origin: false,
        };
    };
    // confirm the bracket with the precise evaluator before bisecting
    if positive(lo, true) {
        hi = lo;
        lo = first;
    }
    while hi - lo > 2e-5 {
        let mid = 0.5 * (lo + hi);
        if positive(mid, true) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let rho0 = (0.5 * (lo + hi) * 1e4).round() / 1e4;
    GrowthRate {
        rho0,
        bracket: (lo, hi),
        evals,
        positive_at_origin: false,
    }
}

/// Closed-form limit of psi(u, rho)/u as u -> 0, negative on the whole
/// domain 0 < rho < (q-1)/q; its sign drives the sublinear-weight part of
/// the growth-rate argument.
pub fn psi_limit_check(q: u32, rho: f64) -> Result<f64, SpectraError> {
    if q < 3 {
        return Err(SpectraError::InvalidConfig(format!(
            "q = {q} < 3 has no (q-2) branch structure"
        )));
    }
    let qf = q as f64;
    let top = (qf - 1.0) / qf;
    if rho <= 0.0 || rho >= top {
        return Err(SpectraError::RhoOutOfDomain(rho));
    }
    let d4 = 4.0 + rho * qf * qf - 4.0 * qf;
    if d4.abs() < 1e-9 * qf * qf {
        return Ok((8.0 * (qf - 2.0) / (qf * qf)).ln());
    }
    let disc = (rho * (1.0 - rho) * (qf - 1.0)).sqrt();
    let mut chosen = None;
    for sign in [1.0, -1.0] {
        let gp = (-2.0 * (1.0 - rho) * (qf - 1.0) + sign * (qf - 2.0) * disc) / d4;
        if (0.0..0.5).contains(&gp) {
            chosen = Some(gp);
            break;
        }
    }
    let gp = chosen.ok_or_else(|| {
        SpectraError::ConstraintViolation(format!(
            "no slope branch in [0, 1/2) at q={q}, rho={rho}"
        ))
    })?;
    Ok(((qf - 2.0) * rho / ((qf - 1.0) * (1.0 - 2.0 * gp))).ln())
}

/// CSV rows `rho,r,branch` for a computed curve.
pub fn curve_csv(points: &[SpectralPoint]) -> String {
    let mut s = String::from("rho,r,branch\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.rho, p.r, p.branch.as_str()));
    }
    s
}
