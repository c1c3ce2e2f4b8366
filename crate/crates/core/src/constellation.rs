//! Grassmannian sub-constellations, bit mapping and chordal demapping.
//!
//! The reference-coordinate design keeps the first coordinate as a real,
//! positive reference; the information bits are spread as evenly as
//! possible over the remaining dim-1 complex coordinates, each carrying a
//! Gray-labeled square/rectangular QAM point of unit average energy. The
//! assembled vector is normalized, so every codeword is a canonical
//! Grassmannian line representative.
//!
//! Demapping minimizes chordal distance (maximizes `|x^H z| / (||x|| ||z||)`).
//! Codebooks small enough to scan are demapped exactly; larger ones use the
//! reference-rotation slicing path refined by exact-metric coordinate
//! ascent.

use nalgebra::DVector;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{C64, TensorShape};

/// Config cap on bits per real dimension of a coordinate (a complex
/// coordinate carries at most twice this).
pub const MAX_BITS_PER_REAL_DIM: usize = 6;

/// Codebooks up to this many bits are demapped by exact scan.
pub const EXACT_SCAN_MAX_BITS: usize = 16;

/// Guard for the exhaustive reference demapper.
pub const EXHAUSTIVE_MAX_BITS: usize = 20;

/// Bit allocation across the tensor dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSplit {
    splits: Vec<usize>,
}

impl BitSplit {
    /// Explicit allocation (e.g. to reproduce a published split). Each
    /// dimension must get at least 1 bit and respect the capacity cap.
    pub fn explicit(splits: Vec<usize>, shape: &TensorShape) -> Result<Self> {
        if splits.len() != shape.order() {
            return Err(Error::InvalidConfig(format!(
                "bit split has {} entries for {} dimensions",
                splits.len(),
                shape.order()
            )));
        }
        for (i, &b) in splits.iter().enumerate() {
            let dim = shape.dims()[i];
            if b == 0 {
                return Err(Error::BitBudgetTooSmall {
                    bits: splits.iter().sum(),
                    dims: splits.len(),
                });
            }
            let cap = capacity(dim);
            if b > cap {
                return Err(Error::BitsExceedCapacity { bits: b, cap, dim });
            }
        }
        Ok(Self { splits })
    }

    pub fn splits(&self) -> &[usize] {
        &self.splits
    }

    pub fn total_bits(&self) -> usize {
        self.splits.iter().sum()
    }
}

/// Capacity of a dimension-`dim` sub-constellation in bits.
pub fn capacity(dim: usize) -> usize {
    2 * (dim - 1) * MAX_BITS_PER_REAL_DIM
}

/// Default allocator: largest-remainder apportionment of `b_tot`
/// proportional to `T_i - 1`, ties broken toward the lower index. Every
/// dimension is guaranteed at least one bit.
pub fn split_bits(b_tot: usize, shape: &TensorShape) -> Result<BitSplit> {
    let d = shape.order();
    if b_tot < d {
        return Err(Error::BitBudgetTooSmall { bits: b_tot, dims: d });
    }
    let weights: Vec<usize> = shape.dims().iter().map(|&t| t - 1).collect();
    let wsum: usize = weights.iter().sum();
    let mut splits: Vec<usize> = Vec::with_capacity(d);
    let mut remainders: Vec<(usize, u64)> = Vec::with_capacity(d);
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let num = b_tot as u64 * w as u64;
        let q = (num / wsum as u64) as usize;
        // remainder scaled to an integer for exact tie comparison
        remainders.push((i, num % wsum as u64));
        splits.push(q);
        assigned += q;
    }
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(b_tot - assigned) {
        splits[i] += 1;
    }
    // enforce the >= 1 bit invariant by borrowing from the largest share
    while splits.iter().any(|&b| b == 0) {
        let zero = splits.iter().position(|&b| b == 0).unwrap();
        let donor = (0..d).max_by_key(|&i| splits[i]).unwrap();
        if splits[donor] <= 1 {
            return Err(Error::BitBudgetTooSmall { bits: b_tot, dims: d });
        }
        splits[donor] -= 1;
        splits[zero] += 1;
    }
    for (i, &b) in splits.iter().enumerate() {
        let dim = shape.dims()[i];
        let cap = capacity(dim);
        if b > cap {
            return Err(Error::BitsExceedCapacity { bits: b, cap, dim });
        }
    }
    Ok(BitSplit { splits })
}

/// Construction scheme of a sub-constellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    ReferenceCoordinate,
    /// Codebook loaded verbatim (cross-implementation tests).
    ExplicitCodebook,
}

/// A discrete Grassmannian codebook for one tensor dimension.
#[derive(Debug, Clone)]
pub struct SubConstellation {
    dim: usize,
    bits: usize,
    scheme: Scheme,
    /// Per-coordinate bit loading over the dim-1 information coordinates
    /// (empty for explicit codebooks).
    loads: Vec<usize>,
    /// Materialized codewords when the codebook is small enough to scan.
    words: Option<Vec<DVector<C64>>>,
}

impl SubConstellation {
    /// Reference-coordinate design with `bits` information bits.
    pub fn build(dim: usize, bits: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "sub-constellation dimension must be >= 2, got {dim}"
            )));
        }
        let cap = capacity(dim);
        if bits == 0 || bits > cap {
            return Err(Error::BitsExceedCapacity { bits, cap, dim });
        }
        let m = dim - 1;
        let base = bits / m;
        let rem = bits % m;
        let loads: Vec<usize> = (0..m).map(|j| base + usize::from(j < rem)).collect();
        let mut c = Self {
            dim,
            bits,
            scheme: Scheme::ReferenceCoordinate,
            loads,
            words: None,
        };
        if bits <= EXACT_SCAN_MAX_BITS {
            let words = (0..(1u64 << bits)).map(|l| c.word_for_label(l)).collect();
            c.words = Some(words);
        }
        Ok(c)
    }

    /// Codebook from explicit unit-norm codewords (power-of-two count).
    pub fn from_codewords(words: Vec<DVector<C64>>) -> Result<Self> {
        if words.is_empty() || !words.len().is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "explicit codebook size {} is not a power of two",
                words.len()
            )));
        }
        let dim = words[0].len();
        if words.iter().any(|w| w.len() != dim) {
            return Err(Error::InvalidConfig(
                "explicit codebook has mixed dimensions".into(),
            ));
        }
        let bits = words.len().trailing_zeros() as usize;
        Ok(Self {
            dim,
            bits,
            scheme: Scheme::ExplicitCodebook,
            loads: Vec::new(),
            words: Some(words),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    pub fn len(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Codeword for a bit vector (`bits[0]` most significant).
    pub fn map(&self, bits: &[u8]) -> Result<DVector<C64>> {
        if bits.len() != self.bits {
            return Err(Error::BitLengthMismatch {
                expected: self.bits,
                got: bits.len(),
            });
        }
        Ok(self.word_for_label(bits_to_label(bits)))
    }

    fn word_for_label(&self, label: u64) -> DVector<C64> {
        if let Some(words) = &self.words {
            return words[label as usize].clone();
        }
        self.assemble(label)
    }

    fn assemble(&self, label: u64) -> DVector<C64> {
        debug_assert_eq!(self.scheme, Scheme::ReferenceCoordinate);
        let mut v = DVector::from_element(self.dim, C64::new(0.0, 0.0));
        v[0] = C64::new(1.0, 0.0);
        let mut pos = self.bits;
        for (j, &b) in self.loads.iter().enumerate() {
            if b == 0 {
                continue;
            }
            pos -= b;
            let chunk = (label >> pos) & ((1u64 << b) - 1);
            v[j + 1] = qam_point(chunk, b);
        }
        let nrm = v.norm();
        v / C64::new(nrm, 0.0)
    }

    /// Chordal-distance demapping: the codeword maximizing
    /// `|x^H z| / (||x|| ||z||)`, plus that correlation.
    ///
    /// Exact scan for codebooks up to [`EXACT_SCAN_MAX_BITS`]; the sliced
    /// reference path (with exact-metric coordinate ascent) beyond.
    pub fn demap(&self, z: &DVector<C64>) -> Result<(Vec<u8>, f64)> {
        self.validate_demap_input(z)?;
        if self.words.is_some() {
            let (label, corr) = self.scan_argmax(z);
            return Ok((label_to_bits(label, self.bits), corr));
        }
        let label = self.demap_sliced(z);
        let corr = self.correlation(label, z);
        Ok((label_to_bits(label, self.bits), corr))
    }

    /// Reference demapper: exact argmax by full enumeration, ties broken
    /// toward the lexicographically smallest bit vector.
    pub fn demap_exhaustive(&self, z: &DVector<C64>) -> Result<(Vec<u8>, f64)> {
        if self.bits > EXHAUSTIVE_MAX_BITS {
            return Err(Error::CodebookTooLarge {
                bits: self.bits,
                max: EXHAUSTIVE_MAX_BITS,
            });
        }
        self.validate_demap_input(z)?;
        let mut best_label = 0u64;
        let mut best = -1.0f64;
        for label in 0..self.len() {
            let c = self.correlation(label, z);
            if c > best {
                best = c;
                best_label = label;
            }
        }
        Ok((label_to_bits(best_label, self.bits), best))
    }

    fn validate_demap_input(&self, z: &DVector<C64>) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "demap input length {} != dimension {}",
                z.len(),
                self.dim
            )));
        }
        if z.norm() == 0.0 {
            return Err(Error::ZeroVector("demap"));
        }
        Ok(())
    }

    fn correlation(&self, label: u64, z: &DVector<C64>) -> f64 {
        let w = self.word_for_label(label);
        w.dotc(z).norm() / (w.norm() * z.norm())
    }

    fn scan_argmax(&self, z: &DVector<C64>) -> (u64, f64) {
        let words = self.words.as_ref().expect("materialized");
        let znorm = z.norm();
        let mut best_label = 0u64;
        let mut best = -1.0f64;
        for (label, w) in words.iter().enumerate() {
            let c = w.dotc(z).norm() / znorm; // codewords are unit norm
            if c > best {
                best = c;
                best_label = label as u64;
            }
        }
        (best_label, best)
    }

    /// Sliced fast path: rotate/scale by the reference coordinate, slice
    /// each QAM coordinate, then coordinate-ascend on the exact chordal
    /// metric. Scale-invariant by construction.
    fn demap_sliced(&self, z: &DVector<C64>) -> u64 {
        debug_assert_eq!(self.scheme, Scheme::ReferenceCoordinate);
        let mut label = 0u64;
        let z0 = z[0];
        if z0.norm() > 1e-12 * z.norm() {
            let mut pos = self.bits;
            for (j, &b) in self.loads.iter().enumerate() {
                if b == 0 {
                    continue;
                }
                pos -= b;
                let u = z[j + 1] / z0;
                label |= qam_slice(u, b) << pos;
            }
        }
        // exact-metric coordinate ascent from the sliced start
        let mut points: Vec<C64> = Vec::with_capacity(self.loads.len());
        {
            let mut pos = self.bits;
            for &b in &self.loads {
                if b == 0 {
                    points.push(C64::new(0.0, 0.0));
                    continue;
                }
                pos -= b;
                points.push(qam_point((label >> pos) & ((1u64 << b) - 1), b));
            }
        }
        let mut inner = z0;
        let mut energy = 1.0f64;
        for (j, p) in points.iter().enumerate() {
            inner += p.conj() * z[j + 1];
            energy += p.norm_sqr();
        }
        for _sweep in 0..20 {
            let mut changed = false;
            let mut pos = self.bits;
            for (j, &b) in self.loads.iter().enumerate() {
                if b == 0 {
                    continue;
                }
                pos -= b;
                let cur = (label >> pos) & ((1u64 << b) - 1);
                let mut best_lab = cur;
                let mut best_score = inner.norm_sqr() / energy;
                let mut best_state = (inner, energy);
                for cand in 0..(1u64 << b) {
                    if cand == cur {
                        continue;
                    }
                    let p = qam_point(cand, b);
                    let ni = inner + (p.conj() - points[j].conj()) * z[j + 1];
                    let ne = energy + p.norm_sqr() - points[j].norm_sqr();
                    let score = ni.norm_sqr() / ne;
                    if score > best_score {
                        best_score = score;
                        best_lab = cand;
                        best_state = (ni, ne);
                    }
                }
                if best_lab != cur {
                    label = (label & !(((1u64 << b) - 1) << pos)) | (best_lab << pos);
                    points[j] = qam_point(best_lab, b);
                    inner = best_state.0;
                    energy = best_state.1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        label
    }

    /// Minimum pairwise chordal distance, by enumeration (small codebooks).
    pub fn min_chordal_distance(&self) -> Result<f64> {
        if self.bits > 10 {
            return Err(Error::CodebookTooLarge {
                bits: self.bits,
                max: 10,
            });
        }
        let words: Vec<DVector<C64>> =
            (0..self.len()).map(|l| self.word_for_label(l)).collect();
        let mut min_d = f64::INFINITY;
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                let corr = words[i].dotc(&words[j]).norm()
                    / (words[i].norm() * words[j].norm());
                let d = (1.0 - corr * corr).max(0.0).sqrt();
                min_d = min_d.min(d);
            }
        }
        Ok(min_d)
    }

    /// Plain-text dump: one codeword per line as `re im re im ...`
    /// (whitespace-separated, `#` lines are comments). Guarded like the
    /// exhaustive demapper.
    pub fn dump(&self, out: &mut impl std::io::Write) -> Result<()> {
        if self.bits > EXHAUSTIVE_MAX_BITS {
            return Err(Error::CodebookTooLarge {
                bits: self.bits,
                max: EXHAUSTIVE_MAX_BITS,
            });
        }
        writeln!(out, "# codebook dim={} bits={}", self.dim, self.bits)?;
        for label in 0..self.len() {
            let w = self.word_for_label(label);
            let mut line = String::new();
            for c in w.iter() {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&format!("{:.17e} {:.17e}", c.re, c.im));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parse the [`dump`](Self::dump) format into an explicit codebook.
    pub fn load(input: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::CodebookParse {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
            if vals.len() < 2 || vals.len() % 2 != 0 {
                return Err(Error::CodebookParse {
                    line: lineno + 1,
                    reason: format!("expected an even number of values, got {}", vals.len()),
                });
            }
            let w = DVector::from_fn(vals.len() / 2, |i, _| {
                Complex::new(vals[2 * i], vals[2 * i + 1])
            });
            words.push(w);
        }
        Self::from_codewords(words)
    }
}

fn bits_to_label(bits: &[u8]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | (b as u64 & 1))
}

fn label_to_bits(label: u64, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((label >> (n - 1 - i)) & 1) as u8).collect()
}

fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

fn gray_inv(mut g: u64) -> u64 {
    let mut i = 0u64;
    while g != 0 {
        i ^= g;
        g >>= 1;
    }
    i
}

/// PAM amplitude of level index `idx` among `levels` levels: odd integers
/// centered on zero.
fn pam_amp(idx: u64, levels: u64) -> f64 {
    2.0 * idx as f64 - (levels as f64 - 1.0)
}

/// Unit-average-energy QAM point for a `b`-bit Gray label. The I axis
/// carries the leading ceil(b/2) bits.
fn qam_point(label: u64, b: usize) -> C64 {
    let bi = b.div_ceil(2);
    let bq = b / 2;
    let li = 1u64 << bi;
    let lq = 1u64 << bq;
    let ival = label >> bq;
    let qval = label & ((1u64 << bq) - 1);
    let re = pam_amp(gray_inv(ival), li);
    let im = if bq > 0 { pam_amp(gray_inv(qval), lq) } else { 0.0 };
    let denom = (li * li - 1) as f64 + (lq * lq - 1) as f64;
    let delta = (3.0 / denom).sqrt();
    C64::new(re * delta, im * delta)
}

/// Nearest-point slice of `u` in the `b`-bit QAM, returning the Gray label.
fn qam_slice(u: C64, b: usize) -> u64 {
    let bi = b.div_ceil(2);
    let bq = b / 2;
    let li = 1u64 << bi;
    let lq = 1u64 << bq;
    let denom = (li * li - 1) as f64 + (lq * lq - 1) as f64;
    let delta = (3.0 / denom).sqrt();
    let slice_axis = |x: f64, levels: u64| -> u64 {
        if levels == 1 {
            return 0;
        }
        let idx = ((x / delta + (levels as f64 - 1.0)) / 2.0).round();
        (idx.max(0.0) as u64).min(levels - 1)
    };
    let i_idx = slice_axis(u.re, li);
    let q_idx = slice_axis(u.im, lq);
    (gray(i_idx) << bq) | gray(q_idx)
}
