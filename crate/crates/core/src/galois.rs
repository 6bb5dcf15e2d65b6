//! Arithmetic over GF(q) for q any prime power.
//!
//! Elements are dense integers in [0, q): the base-p digits of the integer
//! are the coefficients of the residue polynomial over the prime subfield.
//! Extension fields carry a monic irreducible modulus, checked exhaustively
//! at construction. Full add/mul/inv tables are precomputed for q up to
//! [`TABLE_LIMIT`]; larger fields (up to 2^16) compute on the fly.

use thiserror::Error;

/// Fields at or below this size get full lookup tables at construction.
pub const TABLE_LIMIT: u64 = 4096;
/// Largest supported field size.
pub const MAX_FIELD: u64 = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GaloisError {
    #[error("{0} is not a prime power >= 2")]
    NotPrimePower(u64),
    #[error("field size {0} exceeds the supported maximum {MAX_FIELD}")]
    UnsupportedSize(u64),
    #[error("modulus must be monic of length degree+1 (expected {expected}, got {got})")]
    BadModulusShape { expected: usize, got: usize },
    #[error("modulus coefficients must lie in [0, {0})")]
    BadModulusCoefficient(u32),
    #[error("modulus is reducible over the prime subfield")]
    ReducibleModulus,
    #[error("element {value} out of range for GF({q})")]
    ElementOutOfRange { value: u32, q: u32 },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// An element of GF(q), as the packed integer described in [`FieldSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement(pub u32);

/// A fully constructed finite field GF(q) = GF(p^m).
#[derive(Debug, Clone)]
pub struct FieldSpec {
    q: u32,
    characteristic: u32,
    degree: u32,
    /// Monic modulus, lowest-order coefficient first, length degree+1.
    /// Present only for extension fields (m > 1).
    modulus: Option<Vec<u32>>,
    add_tab: Option<Vec<u16>>,
    mul_tab: Option<Vec<u16>>,
    inv_tab: Option<Vec<u16>>,
}

fn factor_prime_power(q: u64) -> Option<(u32, u32)> {
    if q < 2 {
        return None;
    }
    let mut p = 2u64;
    while p * p <= q {
        if q % p == 0 {
            let mut rest = q;
            let mut m = 0u32;
            while rest % p == 0 {
                rest /= p;
                m += 1;
            }
            return (rest == 1).then_some((p as u32, m));
        }
        p += 1;
    }
    Some((q as u32, 1))
}

fn unpack(mut v: u64, p: u32, out: &mut [u32]) {
    for d in out.iter_mut() {
        *d = (v % p as u64) as u32;
        v /= p as u64;
    }
}

fn pack(digits: &[u32], p: u32) -> u64 {
    digits.iter().rev().fold(0u64, |acc, &d| acc * p as u64 + d as u64)
}

/// Polynomial remainder of `a` (length la) modulo the monic `m` (degree dm),
/// coefficients over GF(p), in place on `a`.
fn poly_rem(a: &mut [u32], la: usize, modulus: &[u32], dm: usize, p: u32) {
    for i in (dm..la).rev() {
        let lead = a[i];
        if lead == 0 {
            continue;
        }
        a[i] = 0;
        for j in 0..dm {
            let sub = (lead as u64 * modulus[j] as u64) % p as u64;
            a[i - dm + j] = ((a[i - dm + j] as u64 + p as u64 - sub) % p as u64) as u32;
        }
    }
}

fn poly_is_irreducible(modulus: &[u32], degree: usize, p: u32) -> bool {
    // trial division by every monic polynomial of degree 1..=degree/2
    let mut divisor = vec![0u32; degree + 1];
    for d in 1..=degree / 2 {
        let count = (p as u64).pow(d as u32);
        for packed in 0..count {
            unpack(packed, p, &mut divisor[..d]);
            divisor[d] = 1;
            // remainder of modulus / divisor
            let mut rem = modulus.to_vec();
            poly_rem(&mut rem, degree + 1, &divisor[..=d], d, p);
            if rem[..d].iter().all(|&c| c == 0) {
                return false;
            }
        }
    }
    true
}

/// The default modulus for GF(p^m): the monic irreducible polynomial whose
/// packed low-order coefficients form the smallest integer. Fixing this per
/// field keeps every downstream result deterministic across builds; the
/// enumerator and threshold pipelines depend only on q, never on the field
/// structure, so the choice is observable only through raw element values.
pub fn default_modulus(p: u32, m: u32) -> Result<Vec<u32>, GaloisError> {
    let mut coeffs = vec![0u32; m as usize + 1];
    for packed in 1..(p as u64).pow(m) {
        unpack(packed, p, &mut coeffs[..m as usize]);
        coeffs[m as usize] = 1;
        if coeffs[0] != 0 && poly_is_irreducible(&coeffs, m as usize, p) {
            return Ok(coeffs);
        }
    }
    Err(GaloisError::NotPrimePower((p as u64).pow(m)))
}

impl FieldSpec {
    /// Constructs GF(q) with the deterministic default modulus.
    pub fn new(q: u64) -> Result<Self, GaloisError> {
        let (p, m) = factor_prime_power(q).ok_or(GaloisError::NotPrimePower(q))?;
        if q > MAX_FIELD {
            return Err(GaloisError::UnsupportedSize(q));
        }
        if m == 1 {
            return Self::build(q as u32, p, m, None);
        }
        let modulus = default_modulus(p, m)?;
        Self::build(q as u32, p, m, Some(modulus))
    }

    /// Constructs GF(q) with an explicit monic irreducible modulus
    /// (lowest-order coefficient first, length m+1).
    pub fn with_modulus(q: u64, modulus: &[u32]) -> Result<Self, GaloisError> {
        let (p, m) = factor_prime_power(q).ok_or(GaloisError::NotPrimePower(q))?;
        if q > MAX_FIELD {
            return Err(GaloisError::UnsupportedSize(q));
        }
        if m == 1 {
            return Self::build(q as u32, p, m, None);
        }
        if modulus.len() != m as usize + 1 {
            return Err(GaloisError::BadModulusShape {
                expected: m as usize + 1,
                got: modulus.len(),
            });
        }
        if modulus[m as usize] != 1 {
            return Err(GaloisError::BadModulusShape {
                expected: m as usize + 1,
                got: modulus.len(),
            });
        }
        if modulus.iter().any(|&c| c >= p) {
            return Err(GaloisError::BadModulusCoefficient(p));
        }
        if !poly_is_irreducible(modulus, m as usize, p) {
            return Err(GaloisError::ReducibleModulus);
        }
        Self::build(q as u32, p, m, Some(modulus.to_vec()))
    }

    fn build(q: u32, p: u32, m: u32, modulus: Option<Vec<u32>>) -> Result<Self, GaloisError> {
        let mut spec = FieldSpec {
            q,
            characteristic: p,
            degree: m,
            modulus,
            add_tab: None,
            mul_tab: None,
            inv_tab: None,
        };
        if q as u64 <= TABLE_LIMIT {
            let n = q as usize;
            let mut add = vec![0u16; n * n];
            let mut mul = vec![0u16; n * n];
            for a in 0..n {
                for b in a..n {
                    let s = spec.add_generic(a as u32, b as u32) as u16;
                    add[a * n + b] = s;
                    add[b * n + a] = s;
                    let pr = spec.mul_generic(a as u32, b as u32) as u16;
                    mul[a * n + b] = pr;
                    mul[b * n + a] = pr;
                }
            }
            let mut inv = vec![0u16; n];
            for a in 1..n {
                inv[a] = spec.inv_generic(a as u32) as u16;
            }
            spec.add_tab = Some(add);
            spec.mul_tab = Some(mul);
            spec.inv_tab = Some(inv);
        }
        Ok(spec)
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn characteristic(&self) -> u32 {
        self.characteristic
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn modulus(&self) -> Option<&[u32]> {
        self.modulus.as_deref()
    }

    pub fn element(&self, value: u32) -> Result<FieldElement, GaloisError> {
        if value < self.q {
            Ok(FieldElement(value))
        } else {
            Err(GaloisError::ElementOutOfRange { value, q: self.q })
        }
    }

    fn check(&self, a: FieldElement) -> Result<u32, GaloisError> {
        if a.0 < self.q {
            Ok(a.0)
        } else {
            Err(GaloisError::ElementOutOfRange { value: a.0, q: self.q })
        }
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, GaloisError> {
        Ok(FieldElement(self.add_raw(self.check(a)?, self.check(b)?)))
    }

    pub fn sub(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, GaloisError> {
        Ok(FieldElement(self.sub_raw(self.check(a)?, self.check(b)?)))
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, GaloisError> {
        Ok(FieldElement(self.mul_raw(self.check(a)?, self.check(b)?)))
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, GaloisError> {
        let a = self.check(a)?;
        if a == 0 {
            return Err(GaloisError::ZeroInverse);
        }
        Ok(FieldElement(self.inv_raw(a)))
    }

    /// Unchecked field addition on raw values; callers guarantee range.
    #[inline]
    pub fn add_raw(&self, a: u32, b: u32) -> u32 {
        if self.characteristic == 2 {
            return a ^ b;
        }
        match &self.add_tab {
            Some(t) => t[a as usize * self.q as usize + b as usize] as u32,
            None => self.add_generic(a, b),
        }
    }

    /// Unchecked additive inverse.
    #[inline]
    pub fn neg_raw(&self, a: u32) -> u32 {
        if self.characteristic == 2 {
            return a;
        }
        let p = self.characteristic as u64;
        let mut digits = [0u32; 17];
        let m = self.degree as usize;
        unpack(a as u64, self.characteristic, &mut digits[..m]);
        for d in digits[..m].iter_mut() {
            *d = ((p - *d as u64) % p) as u32;
        }
        pack(&digits[..m], self.characteristic) as u32
    }

    /// Unchecked field subtraction a - b.
    #[inline]
    pub fn sub_raw(&self, a: u32, b: u32) -> u32 {
        if self.characteristic == 2 {
            return a ^ b;
        }
        self.add_raw(a, self.neg_raw(b))
    }

    /// Unchecked field multiplication on raw values.
    #[inline]
    pub fn mul_raw(&self, a: u32, b: u32) -> u32 {
        match &self.mul_tab {
            Some(t) => t[a as usize * self.q as usize + b as usize] as u32,
            None => self.mul_generic(a, b),
        }
    }

    /// Unchecked multiplicative inverse of a nonzero raw value.
    #[inline]
    pub fn inv_raw(&self, a: u32) -> u32 {
        debug_assert!(a != 0);
        match &self.inv_tab {
            Some(t) => t[a as usize] as u32,
            None => self.inv_generic(a),
        }
    }

    fn add_generic(&self, a: u32, b: u32) -> u32 {
        let p = self.characteristic;
        if self.degree == 1 {
            return ((a as u64 + b as u64) % p as u64) as u32;
        }
        let m = self.degree as usize;
        let mut da = [0u32; 17];
        let mut db = [0u32; 17];
        unpack(a as u64, p, &mut da[..m]);
        unpack(b as u64, p, &mut db[..m]);
        for i in 0..m {
            da[i] = (da[i] + db[i]) % p;
        }
        pack(&da[..m], p) as u32
    }

    fn mul_generic(&self, a: u32, b: u32) -> u32 {
        let p = self.characteristic;
        if self.degree == 1 {
            return ((a as u64 * b as u64) % p as u64) as u32;
        }
        let m = self.degree as usize;
        let mut da = [0u32; 17];
        let mut db = [0u32; 17];
        let mut prod = [0u32; 33];
        unpack(a as u64, p, &mut da[..m]);
        unpack(b as u64, p, &mut db[..m]);
        for i in 0..m {
            if da[i] == 0 {
                continue;
            }
            for j in 0..m {
                prod[i + j] =
                    ((prod[i + j] as u64 + da[i] as u64 * db[j] as u64) % p as u64) as u32;
            }
        }
        let modulus = self.modulus.as_ref().expect("extension field has modulus");
        poly_rem(&mut prod, 2 * m - 1, modulus, m, p);
        pack(&prod[..m], p) as u32
    }

    fn inv_generic(&self, a: u32) -> u32 {
        // Fermat: a^(q-2)
        let mut acc = 1u32;
        let mut base = a;
        let mut e = self.q - 2;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_generic(acc, base);
            }
            base = self.mul_generic(base, base);
            e >>= 1;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fe(v: u32) -> FieldElement {
        FieldElement(v)
    }

    #[test]
    fn gf4_addition_and_multiplication() {
        let f = FieldSpec::new(4).unwrap();
        assert_eq!(f.modulus(), Some(&[1u32, 1, 1][..]));
        // 1 + 1 = 0 in characteristic 2
        assert_eq!(f.add(fe(1), fe(1)).unwrap(), fe(0));
        // (1,0) + (1,1): 2 + 3 = 1
        assert_eq!(f.add(fe(2), fe(3)).unwrap(), fe(1));
        // x * x = x + 1 mod x^2+x+1: 2 * 2 = 3
        assert_eq!(f.mul(fe(2), fe(2)).unwrap(), fe(3));
    }

    #[test]
    fn gf5_mod_arithmetic() {
        let f = FieldSpec::new(5).unwrap();
        assert_eq!(f.add(fe(3), fe(4)).unwrap(), fe(2));
        assert_eq!(f.mul(fe(3), fe(4)).unwrap(), fe(2));
        assert_eq!(f.inv(fe(2)).unwrap(), fe(3));
    }

    #[test]
    fn absorbing_zero_and_identities() {
        for q in [3u64, 4, 5, 7, 8, 9, 16, 32] {
            let f = FieldSpec::new(q).unwrap();
            for a in 0..q as u32 {
                assert_eq!(f.mul(fe(a), fe(0)).unwrap(), fe(0));
                assert_eq!(f.mul(fe(a), fe(1)).unwrap(), fe(a));
                assert_eq!(f.add(fe(a), fe(0)).unwrap(), fe(a));
            }
        }
    }

    #[test]
    fn inverse_round_trip_gf8() {
        let f = FieldSpec::new(8).unwrap();
        for a in 1..8 {
            let inv = f.inv(fe(a)).unwrap();
            assert_eq!(f.mul(fe(a), inv).unwrap(), fe(1));
        }
        assert_eq!(f.inv(fe(0)), Err(GaloisError::ZeroInverse));
    }

    #[test]
    fn field_axioms_exhaustive_small() {
        for q in [3u64, 4, 5, 7, 8, 9] {
            let f = FieldSpec::new(q).unwrap();
            let n = q as u32;
            for a in 0..n {
                for b in 0..n {
                    assert_eq!(f.add_raw(a, b), f.add_raw(b, a));
                    assert_eq!(f.mul_raw(a, b), f.mul_raw(b, a));
                    for c in 0..n {
                        assert_eq!(
                            f.add_raw(f.add_raw(a, b), c),
                            f.add_raw(a, f.add_raw(b, c))
                        );
                        assert_eq!(
                            f.mul_raw(f.mul_raw(a, b), c),
                            f.mul_raw(a, f.mul_raw(b, c))
                        );
                        // distributivity
                        assert_eq!(
                            f.mul_raw(a, f.add_raw(b, c)),
                            f.add_raw(f.mul_raw(a, b), f.mul_raw(a, c))
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn field_axioms_randomized_larger() {
        use rand::{Rng, SeedableRng};
        for q in [16u64, 32] {
            let f = FieldSpec::new(q).unwrap();
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(q);
            for _ in 0..2000 {
                let a = rng.random_range(0..q as u32);
                let b = rng.random_range(0..q as u32);
                let c = rng.random_range(0..q as u32);
                assert_eq!(f.add_raw(a, b), f.add_raw(b, a));
                assert_eq!(f.mul_raw(a, b), f.mul_raw(b, a));
                assert_eq!(
                    f.mul_raw(a, f.add_raw(b, c)),
                    f.add_raw(f.mul_raw(a, b), f.mul_raw(a, c))
                );
            }
        }
    }

    #[test]
    fn multiplicative_order_divides_q_minus_1() {
        for q in [3u64, 4, 5, 7, 8, 9, 16, 32] {
            let f = FieldSpec::new(q).unwrap();
            for a in 1..q as u32 {
                let mut acc = 1u32;
                for _ in 0..q - 1 {
                    acc = f.mul_raw(acc, a);
                }
                assert_eq!(acc, 1, "a^(q-1) != 1 for a={a} in GF({q})");
            }
        }
    }

    #[test]
    fn subtraction_is_add_inverse_gf9() {
        let f = FieldSpec::new(9).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                let d = f.sub_raw(a, b);
                assert_eq!(f.add_raw(d, b), a);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(FieldSpec::new(6).unwrap_err(), GaloisError::NotPrimePower(6));
        assert_eq!(FieldSpec::new(1).unwrap_err(), GaloisError::NotPrimePower(1));
        // x^2 + 1 is reducible over GF(2)
        assert_eq!(
            FieldSpec::with_modulus(4, &[1, 0, 1]).unwrap_err(),
            GaloisError::ReducibleModulus
        );
        let f = FieldSpec::new(4).unwrap();
        assert!(f.add(fe(4), fe(0)).is_err());
    }

    #[test]
    fn alternate_modulus_gf8_is_a_field() {
        // x^3 + x^2 + 1, the other irreducible cubic over GF(2)
        let f = FieldSpec::with_modulus(8, &[1, 0, 1, 1]).unwrap();
        for a in 1..8 {
            let inv = f.inv(fe(a)).unwrap();
            assert_eq!(f.mul(fe(a), inv).unwrap(), fe(1));
        }
    }

    #[test]
    fn tables_match_generic_path() {
        // GF(9) has tables; recompute a few products the long way
        let f = FieldSpec::new(9).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                assert_eq!(f.mul_raw(a, b), f.mul_generic(a, b));
                assert_eq!(f.add_raw(a, b), f.add_generic(a, b));
            }
        }
    }
}
