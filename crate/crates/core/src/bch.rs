//! Shortened binary BCH codec with t = 2 error correction.
//!
//! Parent code: the (127, 113) binary BCH code over GF(2^7) built on the
//! primitive polynomial x^7 + x^3 + 1, generator = m_1(x) * m_3(x)
//! (minimal polynomials of alpha and alpha^3, 14 parity bits). Shortening
//! drops leading information positions: 17 for the (110, 96) code used by
//! the unsourced setup, 4 for the (123, 109) sourced variant.
//!
//! Bits are `u8` values in {0, 1}; `word[0]` is the highest-degree
//! coefficient. Encoding is systematic: the payload appears verbatim in
//! front of the 14 parity bits.

use crate::error::{Error, Result};

const FIELD_BITS: usize = 7;
const FIELD_ORDER: usize = 127; // multiplicative order of GF(2^7)*
const PRIMITIVE_POLY: u16 = 0x89; // x^7 + x^3 + 1
const PARENT_N: usize = 127;
const PARENT_K: usize = 113;
pub const PARITY_BITS: usize = 14;

/// GF(2^7) log/antilog tables.
struct Gf128 {
    exp: [u8; 2 * FIELD_ORDER],
    log: [u8; 128],
}

impl Gf128 {
    fn new() -> Self {
        let mut exp = [0u8; 2 * FIELD_ORDER];
        let mut log = [0u8; 128];
        let mut x: u16 = 1;
        for i in 0..FIELD_ORDER {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & (1 << FIELD_BITS) != 0 {
                x ^= PRIMITIVE_POLY;
            }
        }
        for i in FIELD_ORDER..2 * FIELD_ORDER {
            exp[i] = exp[i - FIELD_ORDER];
        }
        Self { exp, log }
    }

    fn mul(&self, a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    fn inv(&self, a: u8) -> u8 {
        debug_assert!(a != 0);
        self.exp[FIELD_ORDER - self.log[a as usize] as usize]
    }

    fn pow_alpha(&self, e: usize) -> u8 {
        self.exp[e % FIELD_ORDER]
    }
}

/// Minimal polynomial of alpha^c as GF(2) coefficient bits (LSB = x^0).
fn minimal_poly(gf: &Gf128, c: usize) -> u32 {
    // conjugacy class {c * 2^j mod 127}
    let mut class = Vec::new();
    let mut e = c % FIELD_ORDER;
    loop {
        class.push(e);
        e = (e * 2) % FIELD_ORDER;
        if e == c % FIELD_ORDER {
            break;
        }
    }
    // product of (x + alpha^e) over the class, in GF(2^7)[x]
    let mut coeffs: Vec<u8> = vec![1];
    for &e in &class {
        let root = gf.pow_alpha(e);
        let mut next = vec![0u8; coeffs.len() + 1];
        for (i, &co) in coeffs.iter().enumerate() {
            next[i + 1] ^= co;
            next[i] ^= gf.mul(co, root);
        }
        coeffs = next;
    }
    let mut bits = 0u32;
    for (i, &co) in coeffs.iter().enumerate() {
        assert!(co <= 1, "minimal polynomial must have binary coefficients");
        bits |= (co as u32) << i;
    }
    bits
}

/// Product of two GF(2) polynomials given as bit masks.
fn gf2_poly_mul(a: u32, b: u32) -> u32 {
    let mut out = 0u32;
    let mut a = a;
    let mut shift = 0;
    while a != 0 {
        if a & 1 != 0 {
            out ^= b << shift;
        }
        a >>= 1;
        shift += 1;
    }
    out
}

/// Successful decode: recovered payload and the number of corrected bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BchDecode {
    pub payload: Vec<u8>,
    pub corrected: usize,
}

/// Shortened BCH(n, k) codec with t = 2, n - k = 14.
pub struct BchCode {
    n: usize,
    k: usize,
    gf: Gf128,
    /// Generator bits including the x^14 term (LSB = x^0).
    generator: u32,
}

impl BchCode {
    /// Codec for `payload_bits` information bits; `n = payload_bits + 14`.
    ///
    /// `payload_bits` may not exceed the parent dimension 113.
    pub fn new(payload_bits: usize) -> Result<Self> {
        if payload_bits == 0 || payload_bits > PARENT_K {
            return Err(Error::InvalidConfig(format!(
                "BCH payload must be 1..={PARENT_K} bits, got {payload_bits}"
            )));
        }
        let gf = Gf128::new();
        let m1 = minimal_poly(&gf, 1);
        let m3 = minimal_poly(&gf, 3);
        let generator = gf2_poly_mul(m1, m3);
        debug_assert_eq!(32 - generator.leading_zeros() as usize - 1, PARITY_BITS);
        Ok(Self {
            n: payload_bits + PARITY_BITS,
            k: payload_bits,
            gf,
            generator,
        })
    }

    /// The (110, 96) code of the unsourced setup.
    pub fn unsourced() -> Self {
        Self::new(96).expect("valid parameters")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        2
    }

    /// Positions shortened away from the parent (127, 113) code.
    pub fn shortened_by(&self) -> usize {
        PARENT_N - self.n
    }

    /// Systematic encode: `[payload | 14 parity bits]`.
    pub fn encode(&self, payload: &[u8]) -> Result<Vec<u8>> {
        if payload.len() != self.k {
            return Err(Error::BitLengthMismatch {
                expected: self.k,
                got: payload.len(),
            });
        }
        let g_low = self.generator & ((1 << PARITY_BITS) - 1);
        let mut rem: u32 = 0;
        for &b in payload {
            debug_assert!(b <= 1);
            let feedback = (b as u32) ^ ((rem >> (PARITY_BITS - 1)) & 1);
            rem = (rem << 1) & ((1 << PARITY_BITS) - 1);
            if feedback != 0 {
                rem ^= g_low;
            }
        }
        let mut word = Vec::with_capacity(self.n);
        word.extend_from_slice(payload);
        for j in (0..PARITY_BITS).rev() {
            word.push(((rem >> j) & 1) as u8);
        }
        Ok(word)
    }

    /// Syndromes S_1 = r(alpha), S_3 = r(alpha^3).
    fn syndromes(&self, word: &[u8]) -> (u8, u8) {
        let mut s1 = 0u8;
        let mut s3 = 0u8;
        for (i, &b) in word.iter().enumerate() {
            if b != 0 {
                let deg = self.n - 1 - i;
                s1 ^= self.gf.pow_alpha(deg);
                s3 ^= self.gf.pow_alpha(3 * deg);
            }
        }
        (s1, s3)
    }

    /// True iff `word` is a codeword (all syndromes zero).
    pub fn check(&self, word: &[u8]) -> Result<bool> {
        if word.len() != self.n {
            return Err(Error::BitLengthMismatch {
                expected: self.n,
                got: word.len(),
            });
        }
        let (s1, s3) = self.syndromes(word);
        Ok(s1 == 0 && s3 == 0)
    }

    /// Corrects up to 2 bit errors; `None` means uncorrectable.
    ///
    /// Success implies the corrected word has zero syndromes and the error
    /// locator never addressed a shortened position.
    pub fn decode(&self, word: &[u8]) -> Result<Option<BchDecode>> {
        if word.len() != self.n {
            return Err(Error::BitLengthMismatch {
                expected: self.n,
                got: word.len(),
            });
        }
        let (s1, s3) = self.syndromes(word);
        if s1 == 0 && s3 == 0 {
            return Ok(Some(BchDecode {
                payload: word[..self.k].to_vec(),
                corrected: 0,
            }));
        }
        if s1 == 0 {
            // two-error syndromes always have S_1 != 0; this is >= 3 errors
            return Ok(None);
        }
        let s1_cubed = self.gf.mul(self.gf.mul(s1, s1), s1);
        if s3 == s1_cubed {
            // single error at polynomial degree log(S_1)
            let deg = self.gf.log[s1 as usize] as usize;
            if deg > self.n - 1 {
                return Ok(None); // would fall in the shortened region
            }
            let mut fixed = word.to_vec();
            fixed[self.n - 1 - deg] ^= 1;
            debug_assert_eq!(self.syndromes(&fixed), (0, 0));
            return Ok(Some(BchDecode {
                payload: fixed[..self.k].to_vec(),
                corrected: 1,
            }));
        }
        // two errors: locator 1 + S_1 z + lambda_2 z^2 with
        // lambda_2 = (S_3 + S_1^3) / S_1
        let lambda2 = self.gf.mul(s3 ^ s1_cubed, self.gf.inv(s1));
        let mut roots = Vec::with_capacity(2);
        for deg in 0..PARENT_N {
            // z = alpha^{-deg}
            let z = self.gf.pow_alpha(FIELD_ORDER - (deg % FIELD_ORDER));
            let z2 = self.gf.mul(z, z);
            let val = 1 ^ self.gf.mul(s1, z) ^ self.gf.mul(lambda2, z2);
            if val == 0 {
                roots.push(deg);
            }
        }
        if roots.len() != 2 || roots.iter().any(|&d| d > self.n - 1) {
            return Ok(None);
        }
        let mut fixed = word.to_vec();
        for &deg in &roots {
            fixed[self.n - 1 - deg] ^= 1;
        }
        if self.syndromes(&fixed) != (0, 0) {
            return Ok(None);
        }
        Ok(Some(BchDecode {
            payload: fixed[..self.k].to_vec(),
            corrected: 2,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_payload(rng: &mut impl Rng, k: usize) -> Vec<u8> {
        (0..k).map(|_| rng.gen_range(0..2u8)).collect()
    }

    #[test]
    fn parameters() {
        let code = BchCode::unsourced();
        assert_eq!(code.n(), 110);
        assert_eq!(code.k(), 96);
        assert_eq!(code.shortened_by(), 17);
        let sourced = BchCode::new(109).unwrap();
        assert_eq!(sourced.n(), 123);
        assert_eq!(sourced.shortened_by(), 4);
        assert!(BchCode::new(114).is_err());
    }

    #[test]
    fn generator_is_product_of_minimal_polys() {
        let gf = Gf128::new();
        assert_eq!(minimal_poly(&gf, 1), PRIMITIVE_POLY as u32);
        let code = BchCode::unsourced();
        // degree 14, and alpha^1..alpha^4 are all roots (t = 2 design)
        for e in 1..=4usize {
            let mut acc = 0u8;
            for d in 0..=PARITY_BITS {
                if (code.generator >> d) & 1 != 0 {
                    acc ^= code.gf.pow_alpha(e * d);
                }
            }
            assert_eq!(acc, 0, "alpha^{e} must be a generator root");
        }
    }

    #[test]
    fn all_zero_payload_gives_all_zero_codeword() {
        let code = BchCode::unsourced();
        let w = code.encode(&vec![0; 96]).unwrap();
        assert!(w.iter().all(|&b| b == 0));
    }

    #[test]
    fn linearity() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_payload(&mut rng, 96);
            let b = random_payload(&mut rng, 96);
            let wa = code.encode(&a).unwrap();
            let wb = code.encode(&b).unwrap();
            let sum: Vec<u8> = wa.iter().zip(&wb).map(|(x, y)| x ^ y).collect();
            assert!(code.check(&sum).unwrap());
        }
    }

    #[test]
    fn encoded_words_have_zero_syndromes() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = random_payload(&mut rng, 96);
            let w = code.encode(&p).unwrap();
            assert!(code.check(&w).unwrap());
            assert_eq!(&w[..96], p.as_slice(), "systematic encoding");
        }
    }

    #[test]
    fn single_flip_detected() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = code.encode(&random_payload(&mut rng, 96)).unwrap();
        for i in (0..110).step_by(7) {
            let mut bad = w.clone();
            bad[i] ^= 1;
            assert!(!code.check(&bad).unwrap());
        }
    }

    #[test]
    fn corrects_single_errors_everywhere() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_payload(&mut rng, 96);
        let w = code.encode(&p).unwrap();
        for i in 0..110 {
            let mut bad = w.clone();
            bad[i] ^= 1;
            let out = code.decode(&bad).unwrap().expect("correctable");
            assert_eq!(out.payload, p);
            assert_eq!(out.corrected, 1);
        }
    }

    #[test]
    fn corrects_sampled_double_errors() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_payload(&mut rng, 96);
            let w = code.encode(&p).unwrap();
            let i = rng.gen_range(0..110);
            let mut j = rng.gen_range(0..110);
            while j == i {
                j = rng.gen_range(0..110);
            }
            let mut bad = w.clone();
            bad[i] ^= 1;
            bad[j] ^= 1;
            let out = code.decode(&bad).unwrap().expect("correctable");
            assert_eq!(out.payload, p);
            assert_eq!(out.corrected, 2);
        }
    }

    #[test]
    fn triple_errors_never_silently_wrong() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..300 {
            let p = random_payload(&mut rng, 96);
            let w = code.encode(&p).unwrap();
            let mut bad = w.clone();
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < 3 {
                picked.insert(rng.gen_range(0..110usize));
            }
            for &i in &picked {
                bad[i] ^= 1;
            }
            if let Some(out) = code.decode(&bad).unwrap() {
                // miscorrection is allowed, silent inconsistency is not:
                // the claimed payload must re-encode to a codeword within
                // distance 2 of the input
                let re = code.encode(&out.payload).unwrap();
                assert!(code.check(&re).unwrap());
                let dist: usize = re.iter().zip(&bad).map(|(a, b)| (a ^ b) as usize).sum();
                assert!(dist <= 2, "claimed correction at distance {dist}");
                assert_eq!(out.corrected, dist);
            }
        }
    }

    #[test]
    fn check_iff_decode_clean() {
        let code = BchCode::unsourced();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let word: Vec<u8> = (0..110).map(|_| rng.gen_range(0..2u8)).collect();
            let is_cw = code.check(&word).unwrap();
            let decoded = code.decode(&word).unwrap();
            match decoded {
                Some(out) if out.corrected == 0 => {
                    assert!(is_cw);
                    assert_eq!(code.encode(&out.payload).unwrap(), word);
                }
                _ => assert!(!is_cw),
            }
        }
    }

    #[test]
    fn sourced_variant_roundtrip() {
        let code = BchCode::new(109).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_payload(&mut rng, 109);
        let w = code.encode(&p).unwrap();
        assert_eq!(w.len(), 123);
        let mut bad = w.clone();
        bad[5] ^= 1;
        bad[77] ^= 1;
        let out = code.decode(&bad).unwrap().expect("correctable");
        assert_eq!(out.payload, p);
    }

    #[test]
    fn wrong_length_rejected() {
        let code = BchCode::unsourced();
        assert!(code.encode(&vec![0; 95]).is_err());
        assert!(code.check(&vec![0; 111]).is_err());
        assert!(code.decode(&vec![0; 109]).is_err());
    }
}
