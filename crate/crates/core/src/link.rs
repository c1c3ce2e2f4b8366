//! Transmit pipeline, block-fading MIMO multiple-access channel, the
//! two-iteration receiver and the tiny-scale ML reference decoder.
//!
//! A transmitted message is `[id || payload]`, optionally BCH-encoded, split
//! across the tensor dimensions, mapped to one sub-constellation codeword
//! per dimension and Kronecker-chained into the length-T symbol. The
//! receiver separates users with a rank-`ka_bar` CPD, demaps every
//! component per mode, and validates messages with the binary code: exact
//! check on iteration 1, error correction on iteration 2 (where symbols
//! accepted at iteration 1 are pinned to their hard decisions). A final
//! decision-directed re-detection pass cleans up components that the
//! unconstrained decomposition smeared across near-collinear channels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bch::BchCode;
use crate::constellation::{BitSplit, SubConstellation};
use crate::cpd::{cpd_als, rank_one_fit, solve_hermitian, CpdOptions, FixedComponent};
use crate::error::{Error, Result};
use crate::tensor::{kron_chain, C64, DenseTensor, TensorShape};

/// Seed offset separating the iteration-2 solver stream from iteration 1.
const ITER2_SEED_OFFSET: u64 = 0x517c_c1b7_2722_0a95;

/// Full link configuration.
#[derive(Debug, Clone)]
pub struct TbmConfig {
    pub shape: TensorShape,
    /// Payload bits B per user.
    pub payload_bits: usize,
    /// Identity bits prepended to the payload (0 for the unsourced setup).
    pub id_bits: usize,
    pub bch_enabled: bool,
    /// Allocation of the coded bits across tensor dimensions.
    pub bit_split: BitSplit,
    /// Component count given to the receiver (genie `Ka` by default).
    pub ka_bar: usize,
    pub ebn0_db: f64,
    /// Noise variance per complex entry; 0 selects the noise-free mode
    /// (symbol energy is then referenced to unit noise variance).
    pub noise_variance: f64,
    /// Discard components with amplitude below `tau * median amplitude`
    /// (only consulted when the binary code is disabled).
    pub power_threshold: Option<f64>,
    /// Count ID bits in the E_b normalization (the strict convention uses
    /// the payload only).
    pub ebn0_includes_id_bits: bool,
    /// Permit payload collisions between active users when sampling.
    pub allow_collisions: bool,
    pub cpd: CpdOptions,
    /// Decision-directed re-detection passes after demapping (0 disables).
    pub refine_passes: usize,
}

impl TbmConfig {
    /// Configuration with the default bit allocation and solver options.
    pub fn new(
        shape: TensorShape,
        payload_bits: usize,
        id_bits: usize,
        bch_enabled: bool,
    ) -> Result<Self> {
        let total = payload_bits + id_bits + if bch_enabled { crate::bch::PARITY_BITS } else { 0 };
        let bit_split = crate::constellation::split_bits(total, &shape)?;
        Ok(Self {
            shape,
            payload_bits,
            id_bits,
            bch_enabled,
            bit_split,
            ka_bar: 1,
            ebn0_db: 0.0,
            noise_variance: 1.0,
            power_threshold: None,
            ebn0_includes_id_bits: true,
            allow_collisions: false,
            cpd: CpdOptions::default(),
            refine_passes: 2,
        })
    }

    /// Information bits per user, `B + B_ID`.
    pub fn info_bits(&self) -> usize {
        self.payload_bits + self.id_bits
    }

    /// Coded bits per user, `B + B_ID` plus parity when the code is on.
    pub fn total_bits(&self) -> usize {
        self.info_bits() + if self.bch_enabled { crate::bch::PARITY_BITS } else { 0 }
    }

    /// Bit count used in the E_b/N_0 normalization.
    pub fn energy_bits(&self) -> usize {
        if self.ebn0_includes_id_bits {
            self.info_bits()
        } else {
            self.payload_bits
        }
    }

    /// Linear E_b/N_0.
    pub fn ebn0_linear(&self) -> f64 {
        10f64.powf(self.ebn0_db / 10.0)
    }

    /// Squared symbol norm: `(E_b/N_0) * energy_bits * sigma^2`, with unit
    /// reference variance in the noise-free mode.
    pub fn symbol_energy(&self) -> f64 {
        let sigma2 = if self.noise_variance > 0.0 {
            self.noise_variance
        } else {
            1.0
        };
        self.ebn0_linear() * self.energy_bits() as f64 * sigma2
    }

    pub fn validate(&self) -> Result<()> {
        if self.payload_bits == 0 {
            return Err(Error::InvalidConfig("payload_bits must be >= 1".into()));
        }
        if self.bit_split.total_bits() != self.total_bits() {
            return Err(Error::InvalidConfig(format!(
                "bit split carries {} bits but the configuration needs {}",
                self.bit_split.total_bits(),
                self.total_bits()
            )));
        }
        if self.bit_split.splits().len() != self.shape.order() {
            return Err(Error::InvalidConfig(
                "bit split order does not match the tensor shape".into(),
            ));
        }
        if self.ka_bar < 1 {
            return Err(Error::InvalidConfig("ka_bar must be >= 1".into()));
        }
        if self.noise_variance < 0.0 || !self.noise_variance.is_finite() {
            return Err(Error::InvalidConfig("noise_variance must be >= 0".into()));
        }
        if self.bch_enabled && self.info_bits() > 113 {
            return Err(Error::InvalidConfig(format!(
                "BCH payload {} exceeds the parent code dimension 113",
                self.info_bits()
            )));
        }
        Ok(())
    }

    /// One sub-constellation per tensor dimension, per the bit split.
    pub fn subconstellations(&self) -> Result<Vec<SubConstellation>> {
        self.shape
            .dims()
            .iter()
            .zip(self.bit_split.splits())
            .map(|(&dim, &bits)| SubConstellation::build(dim, bits))
            .collect()
    }

    fn codec(&self) -> Result<Option<BchCode>> {
        if self.bch_enabled {
            Ok(Some(BchCode::new(self.info_bits())?))
        } else {
            Ok(None)
        }
    }
}

/// One user's message.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Message {
    pub payload: Vec<u8>,
    pub id: Option<Vec<u8>>,
}

impl Message {
    pub fn unsourced(payload: Vec<u8>) -> Self {
        Self { payload, id: None }
    }

    pub fn sourced(id: Vec<u8>, payload: Vec<u8>) -> Self {
        Self {
            payload,
            id: Some(id),
        }
    }

    /// `[id || payload]` bits.
    pub fn info_bits(&self) -> Vec<u8> {
        let mut bits = self.id.clone().unwrap_or_default();
        bits.extend_from_slice(&self.payload);
        bits
    }

    fn from_info_bits(bits: &[u8], cfg: &TbmConfig) -> Self {
        if cfg.id_bits > 0 {
            Self::sourced(bits[..cfg.id_bits].to_vec(), bits[cfg.id_bits..].to_vec())
        } else {
            Self::unsourced(bits.to_vec())
        }
    }
}

/// BCH outcome attached to an accepted message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BchStatus {
    NotUsed,
    /// Passed the exact constraint check (iteration 1).
    Exact,
    /// Accepted after correcting this many bits (iteration 2).
    Corrected(usize),
}

/// Per-component diagnostics for an accepted message.
#[derive(Debug, Clone)]
pub struct ComponentDiag {
    pub component: usize,
    pub amplitude: f64,
    pub bch: BchStatus,
}

#[derive(Debug, Clone)]
pub struct AcceptedMessage {
    pub message: Message,
    /// Receiver iteration (1 or 2) that accepted the message.
    pub iteration: u8,
    pub diag: ComponentDiag,
}

/// Receiver output: the validated message list plus diagnostics.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub accepted: Vec<AcceptedMessage>,
    pub rejected_components: usize,
    /// Relative fit of the final decomposition.
    pub fit: f64,
}

impl DecodeOutcome {
    pub fn messages(&self) -> Vec<Message> {
        self.accepted.iter().map(|a| a.message.clone()).collect()
    }
}

/// Encodes one message into its length-T transmit vector.
///
/// `||s||^2 = (E_b/N_0) * energy_bits * sigma^2` (unit reference variance
/// in the noise-free mode).
pub fn tx_encode(m: &Message, cfg: &TbmConfig) -> Result<DVector<C64>> {
    cfg.validate()?;
    if m.payload.len() != cfg.payload_bits {
        return Err(Error::BitLengthMismatch {
            expected: cfg.payload_bits,
            got: m.payload.len(),
        });
    }
    let id_len = m.id.as_ref().map_or(0, |v| v.len());
    if id_len != cfg.id_bits {
        return Err(Error::BitLengthMismatch {
            expected: cfg.id_bits,
            got: id_len,
        });
    }
    let info = m.info_bits();
    let coded = match cfg.codec()? {
        Some(codec) => codec.encode(&info)?,
        None => info,
    };
    let subs = cfg.subconstellations()?;
    let mut xs = Vec::with_capacity(subs.len());
    let mut off = 0;
    for (sub, &b) in subs.iter().zip(cfg.bit_split.splits()) {
        xs.push(sub.map(&coded[off..off + b])?);
        off += b;
    }
    let s = kron_chain(&xs)?;
    Ok(s * C64::new(cfg.symbol_energy().sqrt(), 0.0))
}

/// Applies the block-fading MIMO MAC channel: draws i.i.d. unit-variance
/// complex Gaussian channel vectors and variance-`sigma^2` noise, returning
/// the vectorized `sum_k s_k (x) h_k + w` tensor.
pub fn channel_apply(
    symbols: &[DVector<C64>],
    cfg: &TbmConfig,
    rng: &mut impl Rng,
) -> Result<DenseTensor> {
    let channels: Vec<DVector<C64>> = (0..symbols.len())
        .map(|_| {
            DVector::from_fn(cfg.shape.antennas(), |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            })
        })
        .collect();
    let sigma = cfg.noise_variance.sqrt();
    let noise: Vec<C64> = (0..cfg.shape.total_len())
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im) * (sigma * std::f64::consts::FRAC_1_SQRT_2)
        })
        .collect();
    channel_apply_fixed(symbols, &channels, Some(&noise), cfg)
}

/// Test hook: applies the channel with caller-supplied realizations.
/// `noise = None` gives the noise-free received tensor.
pub fn channel_apply_fixed(
    symbols: &[DVector<C64>],
    channels: &[DVector<C64>],
    noise: Option<&[C64]>,
    cfg: &TbmConfig,
) -> Result<DenseTensor> {
    if symbols.len() != channels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} symbols vs {} channel vectors",
            symbols.len(),
            channels.len()
        )));
    }
    let t = cfg.shape.block_len();
    let n = cfg.shape.antennas();
    let mut out = DenseTensor::zeros(cfg.shape.clone());
    let data = out.data_mut();
    for (s, h) in symbols.iter().zip(channels) {
        if s.len() != t || h.len() != n {
            return Err(Error::ShapeMismatch(
                "symbol or channel length does not match the shape".into(),
            ));
        }
        for (i, &si) in s.iter().enumerate() {
            for (j, &hj) in h.iter().enumerate() {
                data[i * n + j] += si * hj;
            }
        }
    }
    if let Some(w) = noise {
        if w.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "noise length {} != tensor length {}",
                w.len(),
                data.len()
            )));
        }
        for (d, &wi) in data.iter_mut().zip(w) {
            *d += wi;
        }
    }
    Ok(out)
}

/// Closed-form channel given hard symbol decisions:
/// `[(x)xs^H (x)zs / ||(x)xs||^2] * h_hat`, evaluated through the per-mode
/// inner-product factorization (never materializes length-T vectors).
pub fn best_channel(
    xs: &[DVector<C64>],
    zs: &[DVector<C64>],
    h_hat: &DVector<C64>,
) -> Result<DVector<C64>> {
    if xs.is_empty() || xs.len() != zs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} hard vectors vs {} estimates",
            xs.len(),
            zs.len()
        )));
    }
    let mut inner = C64::new(1.0, 0.0);
    let mut norm_sq = 1.0f64;
    for (x, z) in xs.iter().zip(zs) {
        if x.len() != z.len() {
            return Err(Error::ShapeMismatch(
                "mode vector lengths differ in best_channel".into(),
            ));
        }
        inner *= x.dotc(z);
        norm_sq *= x.norm_squared();
    }
    if norm_sq == 0.0 {
        return Err(Error::ZeroVector("best_channel"));
    }
    Ok(h_hat * (inner / C64::new(norm_sq, 0.0)))
}

/// Per-component state while decoding.
struct ComponentState {
    word: Vec<u8>,
    amplitude: f64,
    /// Accepted (and therefore pinned) in a previous stage.
    locked: bool,
}

/// Demaps every component of a factor set into coded words.
fn demap_components(
    factors: &crate::cpd::FactorSet,
    subs: &[SubConstellation],
    split: &BitSplit,
) -> Result<Vec<ComponentState>> {
    let mut out = Vec::with_capacity(factors.k());
    for k in 0..factors.k() {
        let mut word = Vec::with_capacity(split.total_bits());
        for (i, sub) in subs.iter().enumerate() {
            let z = factors.factor_vector(i, k);
            if z.norm() == 0.0 {
                // dead component; emit the all-zero chunk
                word.extend(std::iter::repeat(0u8).take(split.splits()[i]));
                continue;
            }
            let (bits, _) = sub.demap(&z)?;
            word.extend_from_slice(&bits);
        }
        out.push(ComponentState {
            word,
            amplitude: factors.component_amplitude(k),
            locked: false,
        });
    }
    Ok(out)
}

/// Maps a coded word back to its per-mode unit codewords.
fn word_to_mode_vectors(
    word: &[u8],
    subs: &[SubConstellation],
    split: &BitSplit,
) -> Result<Vec<DVector<C64>>> {
    let mut xs = Vec::with_capacity(subs.len());
    let mut off = 0;
    for (sub, &b) in subs.iter().zip(split.splits()) {
        xs.push(sub.map(&word[off..off + b])?);
        off += b;
    }
    Ok(xs)
}

/// Decision-directed re-detection: for every unlocked component, cancel the
/// other components (hard symbols, jointly LS-fitted channels), rank-1-fit
/// the residual tensor and re-demap. Iterates to a fixed point.
fn redetect(
    y: &DenseTensor,
    comps: &mut [ComponentState],
    subs: &[SubConstellation],
    split: &BitSplit,
    passes: usize,
) -> Result<()> {
    if passes == 0 || comps.len() < 2 {
        return Ok(());
    }
    let y_mat = y.as_rx_matrix();
    let shape = y.shape();
    let mut symbols: Vec<DVector<C64>> = comps
        .iter()
        .map(|c| kron_chain(&word_to_mode_vectors(&c.word, subs, split)?))
        .collect::<Result<_>>()?;
    for _ in 0..passes {
        let mut changed = false;
        let mut gains = ls_gains(&symbols, &y_mat);
        for k in 0..comps.len() {
            if comps[k].locked {
                continue;
            }
            let model = stacked(&symbols) * &gains;
            let mut resid = &y_mat - model;
            // add component k's own contribution back
            for i in 0..resid.nrows() {
                for j in 0..resid.ncols() {
                    resid[(i, j)] += symbols[k][i] * gains[(k, j)];
                }
            }
            let r_tensor = DenseTensor::from_rx_matrix(shape.clone(), &resid)?;
            if r_tensor.norm() == 0.0 {
                continue;
            }
            let (modes, _channel) = rank_one_fit(&r_tensor, 3)?;
            let mut word = Vec::with_capacity(split.total_bits());
            let mut ok = true;
            for (i, sub) in subs.iter().enumerate() {
                if modes[i].norm() == 0.0 {
                    ok = false;
                    break;
                }
                let (bits, _) = sub.demap(&modes[i])?;
                word.extend_from_slice(&bits);
            }
            if ok && word != comps[k].word {
                comps[k].word = word;
                symbols[k] = kron_chain(&word_to_mode_vectors(&comps[k].word, subs, split)?)?;
                gains = ls_gains(&symbols, &y_mat);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(())
}

fn stacked(symbols: &[DVector<C64>]) -> DMatrix<C64> {
    DMatrix::from_columns(symbols)
}

/// LS gains G minimizing ||Y - S G||_F.
fn ls_gains(symbols: &[DVector<C64>], y: &DMatrix<C64>) -> DMatrix<C64> {
    let s = stacked(symbols);
    let gram = s.adjoint() * &s;
    let rhs = s.adjoint() * y;
    solve_hermitian(&gram, &rhs)
        .unwrap_or_else(|| DMatrix::from_element(symbols.len(), y.ncols(), C64::new(0.0, 0.0)))
}

/// Two-iteration receiver.
///
/// Iteration 1: rank-`ka_bar` CPD, per-mode demap, re-detection polish,
/// then exact code check (or accept-all with optional power thresholding
/// when the code is off, in which case decoding is single-iteration).
/// Iteration 2: CPD rerun with accepted components pinned to their hard
/// decisions, demap + polish of the rest, BCH decode with correction.
/// Duplicate accepted messages collapse to one.
pub fn rx_decode(y: &DenseTensor, cfg: &TbmConfig) -> Result<DecodeOutcome> {
    cfg.validate()?;
    if y.shape() != &cfg.shape {
        return Err(Error::ShapeMismatch(
            "received tensor does not match the configured shape".into(),
        ));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("rx_decode input"));
    }
    let subs = cfg.subconstellations()?;
    let split = &cfg.bit_split;
    let codec = cfg.codec()?;

    let cpd1 = cpd_als(y, cfg.ka_bar, &cfg.cpd)?;
    let mut comps = demap_components(&cpd1.factors, &subs, split)?;
    redetect(y, &mut comps, &subs, split, cfg.refine_passes)?;

    let mut accepted: Vec<AcceptedMessage> = Vec::new();
    let mut fit = cpd1.fit;

    match &codec {
        None => {
            // single-iteration mode: accept everything over the threshold
            let keep: Vec<bool> = match cfg.power_threshold {
                Some(tau) => {
                    let mut amps: Vec<f64> = comps.iter().map(|c| c.amplitude).collect();
                    amps.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let median = amps[amps.len() / 2];
                    comps.iter().map(|c| c.amplitude >= tau * median).collect()
                }
                None => vec![true; comps.len()],
            };
            for (k, c) in comps.iter().enumerate() {
                if !keep[k] {
                    continue;
                }
                accepted.push(AcceptedMessage {
                    message: Message::from_info_bits(&c.word, cfg),
                    iteration: 1,
                    diag: ComponentDiag {
                        component: k,
                        amplitude: c.amplitude,
                        bch: BchStatus::NotUsed,
                    },
                });
            }
        }
        Some(codec) => {
            for k in 0..comps.len() {
                if codec.check(&comps[k].word)? {
                    comps[k].locked = true;
                    accepted.push(AcceptedMessage {
                        message: Message::from_info_bits(&comps[k].word[..cfg.info_bits()], cfg),
                        iteration: 1,
                        diag: ComponentDiag {
                            component: k,
                            amplitude: comps[k].amplitude,
                            bch: BchStatus::Exact,
                        },
                    });
                }
            }
            let open: Vec<usize> = (0..comps.len()).filter(|&k| !comps[k].locked).collect();
            if !open.is_empty() {
                // iteration 2: pin the accepted components' hard decisions
                let fixed: Vec<FixedComponent> = comps
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.locked)
                    .map(|(k, c)| {
                        Ok(FixedComponent {
                            index: k,
                            mode_factors: word_to_mode_vectors(&c.word, &subs, split)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                let opts2 = CpdOptions {
                    fixed_components: fixed,
                    rng_seed: cfg.cpd.rng_seed.wrapping_add(ITER2_SEED_OFFSET),
                    ..cfg.cpd.clone()
                };
                let cpd2 = cpd_als(y, cfg.ka_bar, &opts2)?;
                fit = cpd2.fit;
                let refreshed = demap_components(&cpd2.factors, &subs, split)?;
                for &k in &open {
                    comps[k].word = refreshed[k].word.clone();
                    comps[k].amplitude = refreshed[k].amplitude;
                }
                redetect(y, &mut comps, &subs, split, cfg.refine_passes)?;
                for &k in &open {
                    if let Some(out) = codec.decode(&comps[k].word)? {
                        comps[k].locked = true;
                        accepted.push(AcceptedMessage {
                            message: Message::from_info_bits(&out.payload, cfg),
                            iteration: 2,
                            diag: ComponentDiag {
                                component: k,
                                amplitude: comps[k].amplitude,
                                bch: BchStatus::Corrected(out.corrected),
                            },
                        });
                    }
                }
            }
        }
    }

    let rejected_components = comps.iter().filter(|c| !c.locked).count();
    let rejected_components = if codec.is_none() {
        comps.len() - accepted.len()
    } else {
        rejected_components
    };

    // collapse duplicate bit vectors, keeping the earliest acceptance
    let mut seen = std::collections::BTreeSet::new();
    let accepted: Vec<AcceptedMessage> = accepted
        .into_iter()
        .filter(|a| seen.insert(a.message.clone()))
        .collect();

    Ok(DecodeOutcome {
        accepted,
        rejected_components,
        fit,
    })
}

/// Exhaustive joint ML decoder for tiny configurations.
///
/// Enumerates all size-`ka` multisets of messages, solves the channel
/// least-squares in closed form for each, and returns the minimizer.
/// Guarded by `total_bits * ka <= 16`.
pub fn ml_decode_oracle(y: &DenseTensor, cfg: &TbmConfig, ka: usize) -> Result<Vec<Message>> {
    cfg.validate()?;
    let b_tot = cfg.total_bits();
    if b_tot * ka > 16 {
        return Err(Error::SearchSpaceTooLarge(format!(
            "total_bits * ka = {} > 16",
            b_tot * ka
        )));
    }
    if ka == 0 {
        return Err(Error::InvalidConfig("oracle needs ka >= 1".into()));
    }
    let n_msgs = 1u64 << cfg.info_bits();
    let y_mat = y.as_rx_matrix();
    // precompute all candidate transmit vectors
    let mut symbols = Vec::with_capacity(n_msgs as usize);
    let mut messages = Vec::with_capacity(n_msgs as usize);
    for label in 0..n_msgs {
        let bits: Vec<u8> = (0..cfg.info_bits())
            .map(|i| ((label >> (cfg.info_bits() - 1 - i)) & 1) as u8)
            .collect();
        let m = Message::from_info_bits(&bits, cfg);
        symbols.push(tx_encode(&m, cfg)?);
        messages.push(m);
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut combo = vec![0usize; ka];
    loop {
        let cols: Vec<DVector<C64>> = combo.iter().map(|&i| symbols[i].clone()).collect();
        let obj = {
            let s = stacked(&cols);
            let gains = ls_gains(&cols, &y_mat);
            (&y_mat - s * gains).norm().powi(2)
        };
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((combo.clone(), obj));
        }
        // next non-decreasing multiset
        let mut i = ka;
        loop {
            if i == 0 {
                break;
            }
            i -= 1;
            if combo[i] + 1 < n_msgs as usize {
                combo[i] += 1;
                for j in i + 1..ka {
                    combo[j] = combo[i];
                }
                break;
            }
            if i == 0 {
                let (idx, _) = best.expect("at least one combination");
                return Ok(idx.into_iter().map(|i| messages[i].clone()).collect());
            }
        }
        if combo[0] >= n_msgs as usize {
            break;
        }
    }
    let (idx, _) = best.expect("at least one combination");
    Ok(idx.into_iter().map(|i| messages[i].clone()).collect())
}

/// Samples `ka` active-user messages: payloads are distinct unless
/// collisions are explicitly permitted; IDs (when configured) are always
/// distinct.
pub fn sample_messages(cfg: &TbmConfig, ka: usize, rng: &mut impl Rng) -> Result<Vec<Message>> {
    if !cfg.allow_collisions && cfg.payload_bits < 64 && (ka as u128) > (1u128 << cfg.payload_bits)
    {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {ka} distinct payloads of {} bits",
            cfg.payload_bits
        )));
    }
    if cfg.id_bits > 0 && cfg.id_bits < 64 && (ka as u128) > (1u128 << cfg.id_bits) {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {ka} distinct {}-bit IDs",
            cfg.id_bits
        )));
    }
    let mut payloads = std::collections::BTreeSet::new();
    let mut ids = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(ka);
    while out.len() < ka {
        let payload: Vec<u8> = (0..cfg.payload_bits).map(|_| rng.gen_range(0..2u8)).collect();
        if !cfg.allow_collisions && !payloads.insert(payload.clone()) {
            continue;
        }
        let id = if cfg.id_bits > 0 {
            let mut id: Vec<u8> = (0..cfg.id_bits).map(|_| rng.gen_range(0..2u8)).collect();
            while !ids.insert(id.clone()) {
                id = (0..cfg.id_bits).map(|_| rng.gen_range(0..2u8)).collect();
            }
            Some(id)
        } else {
            None
        };
        out.push(Message { payload, id });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> TbmConfig {
        let shape = TensorShape::new(vec![4, 4, 4], 4).unwrap();
        let mut cfg = TbmConfig::new(shape, 18, 0, false).unwrap();
        cfg.ka_bar = 3;
        cfg.ebn0_db = 20.0;
        cfg.cpd.rng_seed = 7;
        cfg
    }

    fn tiny_cfg() -> TbmConfig {
        let shape = TensorShape::new(vec![2, 2], 2).unwrap();
        let mut cfg = TbmConfig::new(shape, 2, 0, false).unwrap();
        cfg.ka_bar = 2;
        cfg.ebn0_db = 15.0;
        cfg
    }

    #[test]
    fn tx_energy_matches_ebn0() {
        let mut cfg = small_cfg();
        cfg.ebn0_db = 7.0;
        cfg.noise_variance = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let msgs = sample_messages(&cfg, 2, &mut rng).unwrap();
        let s0 = tx_encode(&msgs[0], &cfg).unwrap();
        let s1 = tx_encode(&msgs[1], &cfg).unwrap();
        let expect = cfg.ebn0_linear();
        let got = s0.norm_squared() / (cfg.energy_bits() as f64 * cfg.noise_variance);
        assert_relative_eq!(got, expect, max_relative = 1e-12);
        // common normalization across users
        assert_relative_eq!(s0.norm(), s1.norm(), max_relative = 1e-12);
    }

    #[test]
    fn tx_all_zero_is_scaled_first_codeword_chain() {
        let cfg = small_cfg();
        let m = Message::unsourced(vec![0; 18]);
        let s = tx_encode(&m, &cfg).unwrap();
        let subs = cfg.subconstellations().unwrap();
        let xs: Vec<DVector<C64>> = subs
            .iter()
            .zip(cfg.bit_split.splits())
            .map(|(c, &b)| c.map(&vec![0; b]).unwrap())
            .collect();
        let expect = kron_chain(&xs).unwrap() * C64::new(cfg.symbol_energy().sqrt(), 0.0);
        assert_relative_eq!((s - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn channel_forced_basis_vector() {
        let mut cfg = small_cfg();
        cfg.noise_variance = 0.0;
        let m = Message::unsourced(vec![0; 18]);
        let s = tx_encode(&m, &cfg).unwrap();
        let n = cfg.shape.antennas();
        let e1 = DVector::from_fn(n, |i, _| C64::new(f64::from(i == 0), 0.0));
        let y = channel_apply_fixed(&[s.clone()], &[e1], None, &cfg).unwrap();
        for (i, &si) in s.iter().enumerate() {
            assert_eq!(y.data()[i * n], si);
            for j in 1..n {
                assert_eq!(y.data()[i * n + j], C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn noise_only_variance() {
        let mut cfg = small_cfg();
        cfg.noise_variance = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..400 {
            let y = channel_apply(&[], &cfg, &mut rng).unwrap();
            sum += y.data().iter().map(|c| c.norm_sqr()).sum::<f64>();
            count += y.data().len();
        }
        let mean = sum / count as f64;
        // |w|^2 is exponential with mean sigma^2 and std sigma^2
        let tol = 3.0 * 0.7 / (count as f64).sqrt();
        assert!((mean - 0.7).abs() < tol, "mean {mean}");
    }

    #[test]
    fn two_users_noise_free_equals_compose() {
        let mut cfg = small_cfg();
        cfg.noise_variance = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let msgs = sample_messages(&cfg, 2, &mut rng).unwrap();
        let symbols: Vec<DVector<C64>> =
            msgs.iter().map(|m| tx_encode(m, &cfg).unwrap()).collect();
        let channels: Vec<DVector<C64>> = (0..2)
            .map(|_| {
                DVector::from_fn(4, |_, _| {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                })
            })
            .collect();
        let y = channel_apply_fixed(&symbols, &channels, None, &cfg).unwrap();
        // compare against compose of the corresponding rank-2 factor set
        let subs = cfg.subconstellations().unwrap();
        let amp = C64::new(cfg.symbol_energy().sqrt(), 0.0);
        let factors: Vec<DMatrix<C64>> = (0..3)
            .map(|i| {
                let cols: Vec<DVector<C64>> = msgs
                    .iter()
                    .map(|m| {
                        let coded = m.info_bits();
                        let off: usize = cfg.bit_split.splits()[..i].iter().sum();
                        subs[i]
                            .map(&coded[off..off + cfg.bit_split.splits()[i]])
                            .unwrap()
                    })
                    .collect();
                DMatrix::from_columns(&cols)
            })
            .collect();
        let ch_cols: Vec<DVector<C64>> = channels.iter().map(|h| h * amp).collect();
        let f = crate::cpd::FactorSet::new(
            cfg.shape.clone(),
            factors,
            DMatrix::from_columns(&ch_cols),
        )
        .unwrap();
        let expect = crate::cpd::compose(&f);
        let diff: f64 = y
            .data()
            .iter()
            .zip(expect.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-10 * y.norm());
    }

    #[test]
    fn noise_free_single_user_decodes_at_iteration_1() {
        for bch in [false, true] {
            let shape = TensorShape::new(vec![4, 4, 4], 4).unwrap();
            let payload = if bch { 20 } else { 18 };
            let mut cfg = TbmConfig::new(shape, payload, 0, bch).unwrap();
            cfg.ka_bar = 1;
            cfg.noise_variance = 0.0;
            cfg.ebn0_db = 10.0;
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let msgs = sample_messages(&cfg, 1, &mut rng).unwrap();
            let s = tx_encode(&msgs[0], &cfg).unwrap();
            let y = channel_apply(&[s], &cfg, &mut rng).unwrap();
            let out = rx_decode(&y, &cfg).unwrap();
            assert_eq!(out.accepted.len(), 1, "bch={bch}");
            assert_eq!(out.accepted[0].message, msgs[0]);
            assert_eq!(out.accepted[0].iteration, 1);
            assert!(out.fit < 1e-6);
        }
    }

    #[test]
    fn noise_free_three_users_recovered() {
        let mut cfg = small_cfg();
        cfg.noise_variance = 0.0;
        cfg.cpd.restarts = 6;
        cfg.cpd.accept_fit = Some(1e-8);
        let mut ok = 0;
        let trials = 25;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
            let msgs = sample_messages(&cfg, 3, &mut rng).unwrap();
            let symbols: Vec<DVector<C64>> =
                msgs.iter().map(|m| tx_encode(m, &cfg).unwrap()).collect();
            let mut cfg_t = cfg.clone();
            cfg_t.cpd.rng_seed = 9000 + t;
            let y = channel_apply(&symbols, &cfg_t, &mut rng).unwrap();
            let out = rx_decode(&y, &cfg_t).unwrap();
            let got: std::collections::BTreeSet<_> = out.messages().into_iter().collect();
            let want: std::collections::BTreeSet<_> = msgs.into_iter().collect();
            if got == want {
                ok += 1;
            }
        }
        assert!(ok >= trials - 1, "recovered {ok}/{trials}");
    }

    #[test]
    fn bch_mode_accepts_no_phantoms_with_extra_components() {
        let shape = TensorShape::new(vec![4, 4, 4], 4).unwrap();
        let mut cfg = TbmConfig::new(shape, 16, 0, true).unwrap();
        cfg.ka_bar = 4; // Ka + 2
        cfg.ebn0_db = 10.0;
        let codec = BchCode::new(16).unwrap();
        for t in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + t);
            let msgs = sample_messages(&cfg, 2, &mut rng).unwrap();
            let symbols: Vec<DVector<C64>> =
                msgs.iter().map(|m| tx_encode(m, &cfg).unwrap()).collect();
            let mut cfg_t = cfg.clone();
            cfg_t.cpd.rng_seed = 300 + t;
            let y = channel_apply(&symbols, &cfg_t, &mut rng).unwrap();
            let out = rx_decode(&y, &cfg_t).unwrap();
            for acc in &out.accepted {
                let word = codec.encode(&acc.message.info_bits()).unwrap();
                assert!(codec.check(&word).unwrap());
            }
        }
    }

    #[test]
    fn oracle_recovers_noise_free() {
        let mut cfg = tiny_cfg();
        cfg.noise_variance = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let msgs = sample_messages(&cfg, 2, &mut rng).unwrap();
        let symbols: Vec<DVector<C64>> =
            msgs.iter().map(|m| tx_encode(m, &cfg).unwrap()).collect();
        let y = channel_apply(&symbols, &cfg, &mut rng).unwrap();
        let got: std::collections::BTreeSet<_> =
            ml_decode_oracle(&y, &cfg, 2).unwrap().into_iter().collect();
        let want: std::collections::BTreeSet<_> = msgs.into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn oracle_guard() {
        let cfg = small_cfg(); // 18 bits
        let y = DenseTensor::zeros(cfg.shape.clone());
        assert!(matches!(
            ml_decode_oracle(&y, &cfg, 1),
            Err(Error::SearchSpaceTooLarge(_))
        ));
    }

    #[test]
    fn best_channel_identity_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<DVector<C64>> = (0..3)
            .map(|_| {
                DVector::from_fn(3, |_, _| {
                    C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                })
                .normalize()
            })
            .collect();
        let h = DVector::from_fn(4, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let same = best_channel(&xs, &xs, &h).unwrap();
        assert_relative_eq!((same - &h).norm(), 0.0, epsilon = 1e-10);

        let mut zs = xs.clone();
        // orthogonalize one mode
        let x0 = &xs[0];
        let mut z0 = DVector::from_fn(3, |i, _| C64::new(f64::from(i == 1), 0.0));
        let proj = x0.dotc(&z0);
        z0 -= x0 * proj;
        zs[0] = z0;
        let out = best_channel(&xs, &zs, &h).unwrap();
        assert!(out.norm() < 1e-10);
    }

    #[test]
    fn best_channel_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let xs: Vec<DVector<C64>> = [3usize, 2, 4]
                .iter()
                .map(|&n| {
                    DVector::from_fn(n, |_, _| {
                        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                    })
                })
                .collect();
            let zs: Vec<DVector<C64>> = [3usize, 2, 4]
                .iter()
                .map(|&n| {
                    DVector::from_fn(n, |_, _| {
                        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                    })
                })
                .collect();
            let h =
                DVector::from_fn(2, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let fast = best_channel(&xs, &zs, &h).unwrap();
            let kx = kron_chain(&xs).unwrap();
            let kz = kron_chain(&zs).unwrap();
            let direct = &h * (kx.dotc(&kz) / C64::new(kx.norm_squared(), 0.0));
            assert_relative_eq!((fast - direct).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn separable_demap_matches_joint_exhaustive() {
        // joint maximization of the product-of-correlations objective over
        // small codebooks equals per-mode demapping
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shape = TensorShape::new(vec![3, 4], 2).unwrap();
        let cfg = TbmConfig::new(shape, 7, 0, false).unwrap();
        let subs = cfg.subconstellations().unwrap();
        for _ in 0..25 {
            let zs: Vec<DVector<C64>> = subs
                .iter()
                .map(|c| {
                    DVector::from_fn(c.dim(), |_, _| {
                        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                    })
                })
                .collect();
            // joint search
            let mut best = (vec![0u64; 2], -1.0f64);
            for a in 0..subs[0].len() {
                for b in 0..subs[1].len() {
                    let bits_a: Vec<u8> = (0..subs[0].bits())
                        .map(|i| ((a >> (subs[0].bits() - 1 - i)) & 1) as u8)
                        .collect();
                    let bits_b: Vec<u8> = (0..subs[1].bits())
                        .map(|i| ((b >> (subs[1].bits() - 1 - i)) & 1) as u8)
                        .collect();
                    let wa = subs[0].map(&bits_a).unwrap();
                    let wb = subs[1].map(&bits_b).unwrap();
                    let score = (wa.dotc(&zs[0]).norm() / zs[0].norm())
                        * (wb.dotc(&zs[1]).norm() / zs[1].norm());
                    if score > best.1 {
                        best = (vec![a, b], score);
                    }
                }
            }
            for (i, sub) in subs.iter().enumerate() {
                let (bits, _) = sub.demap(&zs[i]).unwrap();
                let label = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
                assert_eq!(label, best.0[i], "mode {i}");
            }
        }
    }

    #[test]
    fn energy_accounting_many_antennas() {
        // received power per antenna approximately Ka * ||s||^2
        let shape = TensorShape::new(vec![4, 4], 64).unwrap();
        let mut cfg = TbmConfig::new(shape, 8, 0, false).unwrap();
        cfg.noise_variance = 0.0;
        cfg.ebn0_db = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ka = 4;
        let mut total = 0.0;
        let reps = 40;
        for _ in 0..reps {
            let msgs = sample_messages(&cfg, ka, &mut rng).unwrap();
            let symbols: Vec<DVector<C64>> =
                msgs.iter().map(|m| tx_encode(m, &cfg).unwrap()).collect();
            let y = channel_apply(&symbols, &cfg, &mut rng).unwrap();
            total += y.norm().powi(2) / cfg.shape.antennas() as f64;
        }
        let per_user = cfg.symbol_energy();
        let mean = total / reps as f64;
        assert!(
            (mean - ka as f64 * per_user).abs() < 0.15 * ka as f64 * per_user,
            "mean {mean} vs {}",
            ka as f64 * per_user
        );
    }

    #[test]
    fn config_validation_errors() {
        let shape = TensorShape::new(vec![4, 4], 4).unwrap();
        let mut cfg = TbmConfig::new(shape, 8, 0, false).unwrap();
        cfg.ka_bar = 0;
        assert!(cfg.validate().is_err());
        cfg.ka_bar = 1;
        cfg.bch_enabled = true; // stale bit split
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sourced_messages_have_distinct_ids() {
        let shape = TensorShape::new(vec![8, 5, 4], 4).unwrap();
        let cfg = TbmConfig::new(shape, 20, 6, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let msgs = sample_messages(&cfg, 10, &mut rng).unwrap();
        let ids: std::collections::BTreeSet<_> =
            msgs.iter().map(|m| m.id.clone().unwrap()).collect();
        assert_eq!(ids.len(), 10);
    }
}
