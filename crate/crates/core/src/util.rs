//! Shared numeric helpers: memoized big-integer binomials, natural logs of
//! arbitrary-precision rationals, and the binary entropy function.

use std::sync::RwLock;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

static BINOMIAL_CACHE: RwLock<Vec<Vec<BigUint>>> = RwLock::new(Vec::new());

/// Binomial coefficient C(n, k) as an arbitrary-precision integer.
///
/// Rows of Pascal's triangle are cached; the cache is grown under a write
/// lock so concurrent readers are safe after warm-up.
pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    {
        let cache = BINOMIAL_CACHE.read().unwrap();
        if let Some(row) = cache.get(n) {
            return row[k].clone();
        }
    }
    let mut cache = BINOMIAL_CACHE.write().unwrap();
    while cache.len() <= n {
        let m = cache.len();
        let mut row = Vec::with_capacity(m / 2 + 2);
        row.push(BigUint::one());
        if m > 0 {
            let prev = &cache[m - 1];
            let prev_at = |j: usize| -> BigUint {
                if j > m - 1 {
                    BigUint::zero()
                } else {
                    let jj = j.min(m - 1 - j);
                    prev[jj].clone()
                }
            };
            for j in 1..=(m / 2) {
                row.push(prev_at(j - 1) + prev_at(j));
            }
        }
        cache.push(row);
    }
    cache[n][k].clone()
}

/// C(n, k) as a rational (denominator one), for enumerator arithmetic.
pub fn binomial_rat(n: usize, k: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(binomial(n, k)))
}

/// Natural log of a positive big integer, robust to values far beyond the
/// f64 range: splits off the high bits and adds back `bits * ln 2`.
pub fn ln_bigint(x: &BigInt) -> f64 {
    assert!(x.is_positive(), "ln of non-positive integer");
    let bits = x.bits();
    if bits <= 52 {
        return (x.to_f64().unwrap()).ln();
    }
    let shift = bits - 52;
    let top = (x >> shift).to_f64().unwrap();
    top.ln() + (shift as f64) * std::f64::consts::LN_2
}

/// Natural log of a positive rational.
pub fn ln_rational(x: &BigRational) -> f64 {
    ln_bigint(x.numer()) - ln_bigint(x.denom())
}

/// Binary entropy with natural logarithms, H(x) = -x ln x - (1-x) ln(1-x).
///
/// Arguments within 1e-14 of the unit interval are clipped onto it, and the
/// 0 ln 0 = 0 convention applies at the endpoints.
pub fn entropy(x: f64) -> f64 {
    let x = clip_unit(x);
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.ln() - (1.0 - x) * (1.0 - x).ln()
}

/// Clips values within 1e-14 of [0, 1] onto the interval; values further
/// outside are returned unchanged so that callers can detect real violations.
pub fn clip_unit(x: f64) -> f64 {
    if x < 0.0 && x >= -1e-14 {
        0.0
    } else if x > 1.0 && x <= 1.0 + 1e-14 {
        1.0
    } else {
        x
    }
}

/// Real roots of the cubic a x^3 + b x^2 + c x + d, in ascending order.
///
/// Double/triple roots are reported once. Degenerate leading coefficients
/// fall back to the quadratic/linear cases. Complex pairs whose imaginary
/// part is below 1e-12 (relative) are treated as real.
pub fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let mut roots = Vec::with_capacity(3);
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return roots;
    }
    if a.abs() <= 1e-14 * scale {
        // quadratic b x^2 + c x + d
        if b.abs() <= 1e-14 * scale {
            if c.abs() > 1e-14 * scale {
                roots.push(-d / c);
            }
            return roots;
        }
        let disc = c * c - 4.0 * b * d;
        if disc >= 0.0 {
            let s = disc.sqrt();
            roots.push((-c - s) / (2.0 * b));
            roots.push((-c + s) / (2.0 * b));
        }
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        return roots;
    }
    let b = b / a;
    let c = c / a;
    let d = d / a;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let off = -b / 3.0;
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    let imag_tol = 1e-12 * (1.0 + q.abs());
    if disc > imag_tol {
        let s = disc.sqrt();
        roots.push((-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + off);
    } else if disc > -imag_tol && p.abs() < 1e-12 {
        roots.push(off);
    } else {
        // three real roots (trig form); disc within tolerance of zero still
        // lands here and yields the double root twice, deduplicated below
        let r = (-p * p * p / 27.0).max(0.0).sqrt();
        let phi = if r == 0.0 {
            0.0
        } else {
            (-q / (2.0 * r)).clamp(-1.0, 1.0).acos()
        };
        let m = 2.0 * (-p / 3.0).max(0.0).sqrt();
        for k in 0..3 {
            roots.push(m * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() + off);
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    roots
}

/// Golden-section maximization of a unimodal function on [lo, hi].
/// Returns (argmax, max). `tol` is the absolute x tolerance.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx >= fc && fx >= fd {
        (x, fx)
    } else if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::FromPrimitive;

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), BigUint::from_u64(10).unwrap());
        assert_eq!(binomial(0, 0), BigUint::one());
        assert_eq!(binomial(4, 7), BigUint::zero());
        assert_eq!(binomial(60, 30).to_string(), "118264581564861424");
    }

    #[test]
    fn ln_bigint_huge() {
        let x = BigInt::from(10).pow(400);
        let expect = 400.0 * 10f64.ln();
        assert!((ln_bigint(&x) - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn entropy_endpoints_and_max() {
        assert_eq!(entropy(0.0), 0.0);
        assert_eq!(entropy(1.0), 0.0);
        assert!((entropy(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cubic_roots_basic() {
        // (x-1)(x-2)(x-3)
        let r = cubic_real_roots(1.0, -6.0, 11.0, -6.0);
        assert_eq!(r.len(), 3);
        assert!((r[0] - 1.0).abs() < 1e-9 && (r[2] - 3.0).abs() < 1e-9);
        // x^3 + x - 2 has a single real root at 1
        let r = cubic_real_roots(1.0, 0.0, 1.0, -2.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(v > -1e-15);
    }
}
