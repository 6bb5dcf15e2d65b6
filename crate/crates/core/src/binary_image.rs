//! Binary image of WNRMA ensembles: exact binary weight enumerators under
//! the random nonzero-symbol-to-nonzero-tuple mapping, the binary asymptotic
//! spectral shape, and the binary growth rate coefficient delta0.
//!
//! For q = 2 (m = 1) the image is the code itself and every routine
//! short-circuits to the nonbinary path.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::spectra::{self, SpectralConfig};
use crate::util::{binomial, golden_max};

#[derive(Debug, Error, PartialEq)]
pub enum BinaryImageError {
    #[error("q = {0} is not a power of two")]
    NotPowerOfTwo(u32),
    #[error("(rho, delta) = ({rho}, {delta}) outside the feasible wedge delta <= rho <= min(1, m delta)")]
    InfeasiblePair { rho: f64, delta: f64 },
    #[error("no positive root of the saddle-point polynomial; coefficients {0:?}")]
    NoPositiveRoot(Vec<f64>),
}

/// Configuration of a binary-image computation over GF(2^m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryImageConfig {
    pub base: SpectralConfig,
    pub m: u32,
    pub delta_grid: spectra::GridSpec,
}

impl BinaryImageConfig {
    pub fn new(base: SpectralConfig) -> Result<Self, BinaryImageError> {
        if !base.q.is_power_of_two() || base.q < 2 {
            return Err(BinaryImageError::NotPowerOfTwo(base.q));
        }
        Ok(BinaryImageConfig {
            base,
            m: base.q.trailing_zeros(),
            delta_grid: spectra::GridSpec {
                start: 0.0,
                stop: 0.5,
                step: 1e-3,
            },
        })
    }
}

/// One point of the binary spectral shape with its optimizer internals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinarySpectralPoint {
    pub delta: f64,
    /// Value in nats per bit.
    pub r_b: f64,
    /// Maximizing nonbinary normalized weight.
    pub rho_star: f64,
    /// Saddle-point root at the maximizer; NaN at the interval corners
    /// where the root degenerates (the limit values are used there).
    pub x_tilde: f64,
}

/// Exact average binary weight enumerator from a nonbinary one:
/// abar_d = sum_i a_i / (2^m - 1)^i * coef(((1+x)^m - 1)^i, x^d).
///
/// `nonbinary_we[h]` is the count at nonbinary weight h for a length-N code;
/// the result has length N*m + 1. For m = 1 this is the identity.
pub fn binary_we(nonbinary_we: &[BigRational], m: u32) -> Vec<BigRational> {
    let n_len = nonbinary_we.len() - 1;
    let m = m as usize;
    let mut out = vec![BigRational::zero(); n_len * m + 1];
    if m == 1 {
        for (d, v) in nonbinary_we.iter().enumerate() {
            out[d] = v.clone();
        }
        return out;
    }
    // base polynomial (1+x)^m - 1: coefficients C(m, j) for j = 1..m
    let base: Vec<BigUint> = (0..=m).map(|j| if j == 0 { BigUint::zero() } else { binomial(m, j) }).collect();
    let scale = BigInt::from((1u64 << m) - 1);
    // running power (((1+x)^m - 1)^i) and scale (2^m - 1)^i
    let mut power: Vec<BigUint> = vec![BigUint::one()];
    let mut denom = BigInt::one();
    for (i, a) in nonbinary_we.iter().enumerate() {
        if i > 0 {
            let mut next = vec![BigUint::zero(); power.len() + m];
            for (da, ca) in power.iter().enumerate() {
                if ca.is_zero() {
                    continue;
                }
                for (db, cb) in base.iter().enumerate() {
                    if cb.is_zero() {
                        continue;
                    }
                    next[da + db] += ca * cb;
                }
            }
            power = next;
            denom *= &scale;
        }
        if a.is_zero() {
            continue;
        }
        let weight = a / BigRational::from_integer(denom.clone());
        for (d, coef) in power.iter().enumerate() {
            if !coef.is_zero() {
                out[d] += &weight * BigRational::from_integer(BigInt::from(coef.clone()));
            }
        }
    }
    out
}

/// Smallest positive root of
/// sum_{j=1..m} (1 - m delta / (j rho)) C(m-1, j-1) x^j = 0
/// (the root at x = 0 divided out), to 1e-12 relative accuracy.
///
/// Exactly one positive root exists strictly inside the wedge
/// delta < rho < m delta; the corners are the callers' business.
pub fn smallest_positive_root(m: u32, rho: f64, delta: f64) -> Result<f64, BinaryImageError> {
    let mf = m as f64;
    if !(rho > 0.0 && delta <= rho + 1e-15 && rho <= mf * delta + 1e-15 && rho <= 1.0) {
        return Err(BinaryImageError::InfeasiblePair { rho, delta });
    }
    if m == 1 {
        // degenerate: the transform is the identity and rho = delta
        return Ok(1.0);
    }
    let coeffs: Vec<f64> = (1..=m as usize)
        .map(|j| {
            let c: f64 = {
                let b = binomial(m as usize - 1, j - 1);
                // binomials here are tiny (m <= 16); exact conversion
                b.to_string().parse::<f64>().unwrap()
            };
            (1.0 - mf * delta / (j as f64 * rho)) * c
        })
        .collect();
    let eval = |x: f64| -> f64 {
        // polynomial in x with the x^1 root removed: sum c_j x^(j-1)
        let mut acc = 0.0;
        for c in coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    };
    // coefficient signs change exactly once (negative for j < m delta/rho,
    // positive after), so an expanding bracket always closes
    let (mut lo, mut hi) = (1e-300f64, 1.0f64);
    let mut flo = eval(lo);
    if flo == 0.0 {
        return Ok(lo);
    }
    let mut grow = 0;
    while eval(hi).signum() == flo.signum() {
        hi *= 4.0;
        grow += 1;
        if grow > 600 {
            return Err(BinaryImageError::NoPositiveRoot(coeffs));
        }
    }
    // bisect in log space for relative accuracy
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        let fm = eval(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// The binary spectral shape bracket at one (rho, delta), given r(rho) in
/// nats per symbol: r(rho) - rho ln(2^m - 1) + rho ln((1+x)^m - 1)
/// - m delta ln x, with the corner limits handled in closed form.
fn bracket_value(m: u32, rho: f64, delta: f64, r_rho: f64) -> (f64, f64) {
    let mf = m as f64;
    let qm1 = ((1u64 << m) as f64) - 1.0;
    if rho <= delta * (1.0 + 1e-12) {
        // x -> infinity: rho (ln((1+x)^m - 1) - m ln x) -> 0
        return (r_rho - rho * qm1.ln(), f64::NAN);
    }
    if rho >= mf * delta * (1.0 - 1e-12) {
        // x -> 0: rho ln((1+x)^m -1) - m delta ln x -> rho ln m
        return (r_rho - rho * qm1.ln() + rho * mf.ln(), f64::NAN);
    }
    match smallest_positive_root(m, rho, delta) {
        Ok(x) => (
            r_rho - rho * qm1.ln() + rho * (((1.0 + x).powi(m as i32)) - 1.0).ln()
                - mf * delta * x.ln(),
            x,
        ),
        Err(_) => (f64::NEG_INFINITY, f64::NAN),
    }
}

/// Binary asymptotic spectral shape r_b(delta), in nats per bit, maximizing
/// over the nonbinary weight rho in [delta, min(1, m delta)]. `shape`
/// supplies r(rho) in nats per symbol.
pub fn binary_spectral_shape<F: Fn(f64) -> f64>(
    config: &BinaryImageConfig,
    delta: f64,
    shape: &F,
) -> BinarySpectralPoint {
    assert!((0.0..=1.0).contains(&delta), "delta must lie in [0, 1]");
    let m = config.m;
    let mf = m as f64;
    if m == 1 {
        return BinarySpectralPoint {
            delta,
            r_b: shape(delta),
            rho_star: delta,
            x_tilde: f64::NAN,
        };
    }
    if delta == 0.0 {
        return BinarySpectralPoint {
            delta,
            r_b: 0.0,
            rho_star: 0.0,
            x_tilde: f64::NAN,
        };
    }
    let lo = delta;
    let hi = (mf * delta).min(1.0);
    let value = |rho: f64| bracket_value(m, rho, delta, shape(rho)).0;
    // coarse grid then golden refinement around the best cell
    let cells = 40usize;
    let mut best_rho = lo;
    let mut best = value(lo);
    for i in 1..=cells {
        let rho = lo + (hi - lo) * i as f64 / cells as f64;
        let v = value(rho);
        if v > best {
            best = v;
            best_rho = rho;
        }
    }
    let span = (hi - lo) / cells as f64;
    let (garg, gval) = golden_max(
        value,
        (best_rho - span).max(lo),
        (best_rho + span).min(hi),
        1e-10,
    );
    if gval > best {
        best = gval;
        best_rho = garg;
    }
    let (_, x) = bracket_value(m, best_rho, delta, shape(best_rho));
    BinarySpectralPoint {
        delta,
        r_b: best / mf,
        rho_star: best_rho,
        x_tilde: x,
    }
}

/// Binary growth rate coefficient delta0: detection-threshold crossing of
/// r_b(delta), mirroring the nonbinary rho0 search.
pub fn delta0<F: Fn(f64) -> f64>(
    config: &BinaryImageConfig,
    shape: &F,
) -> spectra::GrowthRate {
    let tol = config.base.detect_tol;
    let step = config.delta_grid.step.max(1e-4).min(0.01);
    let mut evals = 0usize;
    let mut positive = |d: f64| -> bool {
        evals += 1;
        binary_spectral_shape(config, d, shape).r_b > tol
    };
    let first = step.max(config.delta_grid.start.max(step));
    if positive(first) {
        return spectra::GrowthRate {
            rho0: 0.0,
            bracket: (0.0, first),
            evals,
            positive_at_origin: true,
        };
    }
    let mut lo = first;
    let mut hi = None;
    let mut x = first + step;
    let top = config.delta_grid.stop.min(1.0);
    while x < top {
        if positive(x) {
            hi = Some(x);
            break;
        }
        lo = x;
        x += step;
    }
    let Some(mut hi) = hi else {
        return spectra::GrowthRate {
            rho0: top,
            bracket: (lo, top),
            evals,
            positive_at_origin: false,
        };
    };
    while hi - lo > 2e-5 {
        let mid = 0.5 * (lo + hi);
        if positive(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    spectra::GrowthRate {
        rho0: (0.5 * (lo + hi) * 1e4).round() / 1e4,
        bracket: (lo, hi),
        evals,
        positive_at_origin: false,
    }
}

/// CSV rows `delta,r_b,rho_star,x_tilde` for a computed binary curve.
pub fn binary_curve_csv(points: &[BinarySpectralPoint]) -> String {
    let mut s = String::from("delta,r_b,rho_star,x_tilde\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.delta, p.r_b, p.rho_star, p.x_tilde
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerators::{ensemble_we, EnsembleParams};
    use num_traits::{FromPrimitive, ToPrimitive};
    use rand::{Rng, SeedableRng};

    fn rat(n: i64) -> BigRational {
        BigRational::from_i64(n).unwrap()
    }

    #[test]
    fn binary_we_identity_for_m1() {
        let we = vec![rat(1), rat(0), rat(3), rat(4)];
        assert_eq!(binary_we(&we, 1), we);
    }

    #[test]
    fn binary_we_single_symbol_m2() {
        // one weight-1 symbol: three nonzero 2-tuples of weights 1, 1, 2
        let we = vec![rat(0), rat(1)];
        let out = binary_we(&we, 2);
        assert_eq!(out[1], BigRational::new(BigInt::from(2), BigInt::from(3)));
        assert_eq!(out[2], BigRational::new(BigInt::from(1), BigInt::from(3)));
    }

    #[test]
    fn binary_we_preserves_mass() {
        for (q, n, k) in [(4u32, 2u32, 2usize), (8, 2, 2)] {
            let params = EnsembleParams::new(q, n, 1, k).unwrap();
            let we = ensemble_we(&params);
            let m = q.trailing_zeros();
            let bwe = binary_we(&we, m);
            let lhs: BigRational = bwe.iter().cloned().sum();
            let rhs: BigRational = we.iter().cloned().sum();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn binary_we_coefficients_vs_direct_expansion() {
        // ((1+x)^m - 1)^i expanded directly for small m, i
        for m in 2..=5usize {
            let base: Vec<i128> = (0..=m).map(|j| if j == 0 { 0 } else { binomial(m, j).to_string().parse().unwrap() }).collect();
            let mut power: Vec<i128> = vec![1];
            for i in 1..=6usize {
                let mut next = vec![0i128; power.len() + m];
                for (da, &ca) in power.iter().enumerate() {
                    for (db, &cb) in base.iter().enumerate() {
                        next[da + db] += ca * cb;
                    }
                }
                power = next;
                // sum of coefficients must equal (2^m - 1)^i
                let total: i128 = power.iter().sum();
                assert_eq!(total, ((1i128 << m) - 1).pow(i as u32));
            }
        }
    }

    #[test]
    fn binary_we_monte_carlo_sampler_agrees() {
        // q=4, N=4 ensemble: empirical binary-weight distribution from the
        // random mapping against the exact transform, seeded for determinism
        let params = EnsembleParams::new(4, 2, 1, 2).unwrap();
        let we = ensemble_we(&params);
        let bwe = binary_we(&we, 2);
        let total: BigRational = we.iter().cloned().sum();
        let probs: Vec<f64> = bwe
            .iter()
            .map(|v| (v / &total).to_f64().unwrap())
            .collect();
        // sample: draw nonbinary weight h with prob we[h]/total, then map
        // each nonzero symbol to a uniform nonzero 2-tuple
        let weights_f: Vec<f64> = we.iter().map(|v| (v / &total).to_f64().unwrap()).collect();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2024);
        let samples = 100_000usize;
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..samples {
            let mut u: f64 = rng.random_range(0.0..1.0);
            let mut h = 0usize;
            for (i, &w) in weights_f.iter().enumerate() {
                if u < w {
                    h = i;
                    break;
                }
                u -= w;
            }
            let mut d = 0usize;
            for _ in 0..h {
                let tuple = rng.random_range(1u32..4);
                d += tuple.count_ones() as usize;
            }
            counts[d] += 1;
        }
        for (d, &p) in probs.iter().enumerate() {
            let freq = counts[d] as f64 / samples as f64;
            let sigma = (p * (1.0 - p) / samples as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma + 1e-9,
                "bin {d}: freq {freq} vs exact {p} (3 sigma = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn root_solves_defining_polynomial() {
        let x = smallest_positive_root(2, 0.5, 0.4).unwrap();
        // rho x (1+x)^{m-1} = delta ((1+x)^m - 1)
        let lhs = 0.5 * x * (1.0 + x);
        let rhs = 0.4 * ((1.0 + x) * (1.0 + x) - 1.0);
        assert!((lhs - rhs).abs() < 1e-10, "x = {x}");
        for m in [3u32, 5] {
            let (rho, delta) = (0.45, 0.3);
            if rho <= m as f64 * delta {
                let x = smallest_positive_root(m, rho, delta).unwrap();
                let mf = m as f64;
                let lhs = rho * x * (1.0 + x).powi(m as i32 - 1);
                let rhs = delta * ((1.0 + x).powi(m as i32) - 1.0);
                assert!((lhs - rhs).abs() < 1e-9 * rhs.abs().max(1.0), "m={m} x={x}");
                let _ = mf;
            }
        }
    }

    #[test]
    fn root_rejects_outside_wedge() {
        assert!(smallest_positive_root(2, 0.3, 0.4).is_err()); // rho < delta
        assert!(smallest_positive_root(2, 0.9, 0.1).is_err()); // rho > m delta
    }

    #[test]
    fn rb_identity_when_m1() {
        let base = SpectralConfig::new(2, 3, 2).unwrap();
        let config = BinaryImageConfig::new(base).unwrap();
        let ev = spectra::shared_evaluator(&base);
        let shape = |rho: f64| ev.eval(rho);
        for d in [0.1, 0.2, 0.35] {
            let p = binary_spectral_shape(&config, d, &shape);
            assert!((p.r_b - shape(d)).abs() < 1e-12);
            assert_eq!(p.rho_star, d);
        }
    }

    #[test]
    fn delta0_published_value_q4() {
        let base = SpectralConfig::new(4, 3, 2).unwrap();
        let config = BinaryImageConfig::new(base).unwrap();
        let ev = spectra::shared_evaluator(&base);
        let g = delta0(&config, &|rho| ev.eval(rho));
        assert!((g.rho0 - 0.1496).abs() <= 5e-4, "delta0 = {}", g.rho0);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let base = SpectralConfig::new(3, 3, 2).unwrap();
        assert!(matches!(
            BinaryImageConfig::new(base),
            Err(BinaryImageError::NotPowerOfTwo(3))
        ));
    }

    #[test]
    fn curve_csv_header() {
        let pts = vec![BinarySpectralPoint {
            delta: 0.1,
            r_b: 0.0,
            rho_star: 0.15,
            x_tilde: 1.0,
        }];
        assert!(binary_curve_csv(&pts).starts_with("delta,r_b,rho_star,x_tilde\n"));
    }
}
