//! Monte-Carlo trial runner, error metrics and parameter sweeps.
//!
//! Trials are embarrassingly parallel and fully reproducible: trial `i` of
//! every grid point uses the seed `splitmix64(master_seed ^ i * GOLDEN)`,
//! so sweeping a grid reuses common random numbers across points (paired
//! comparisons), and `(config, master seed)` pins every payload, channel,
//! noise and solver draw. The CSV body is byte-reproducible; wall-clock
//! timings are written only on request since they are the one quantity a
//! seed cannot pin.

use rayon::prelude::*;
use std::collections::BTreeSet;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::link::{channel_apply, rx_decode, sample_messages, tx_encode, Message, TbmConfig};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Documented per-trial seed derivation.
pub fn trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    splitmix64(master_seed ^ trial_index.wrapping_mul(GOLDEN))
}

/// Per-trial record: both message lists plus the error-ratio breakdown.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub transmitted: Vec<Message>,
    pub decoded: Vec<Message>,
    pub miss_ratio: f64,
    pub phantom_ratio: f64,
    /// `min(miss + phantom, 1)`.
    pub capped: f64,
    pub fit: f64,
    pub runtime_ms: f64,
    pub seed: u64,
}

fn distinct(msgs: &[Message]) -> BTreeSet<&Message> {
    msgs.iter().collect()
}

/// Per-trial message error ratio
/// `min(|L \ L_hat|/|L| + |L_hat \ L|/|L_hat|, 1)`, with the phantom term
/// defined as 0 when the decoded list is empty. Set differences are over
/// distinct bit vectors.
pub fn mer(l: &[Message], l_hat: &[Message]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::EmptyInput("mer: transmitted list"));
    }
    let tx = distinct(l);
    let rx = distinct(l_hat);
    let miss = tx.difference(&rx).count() as f64 / tx.len() as f64;
    let phantom = if rx.is_empty() {
        0.0
    } else {
        rx.difference(&tx).count() as f64 / rx.len() as f64
    };
    Ok((miss + phantom).min(1.0))
}

/// Per-trial per-user error probability `|L \ L_hat| / |L|`.
pub fn pupe(l: &[Message], l_hat: &[Message]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::EmptyInput("pupe: transmitted list"));
    }
    let tx = distinct(l);
    let rx = distinct(l_hat);
    Ok(tx.difference(&rx).count() as f64 / tx.len() as f64)
}

/// Per-trial sourced packet error rate: a user's packet succeeds iff
/// exactly one decoded message carries its ID and the payload matches;
/// messages sharing a duplicated ID are discarded and count as errors for
/// their claimants.
pub fn per_trial_sourced(l: &[Message], l_hat: &[Message]) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::EmptyInput("per: transmitted list"));
    }
    if l.iter().any(|m| m.id.is_none()) {
        return Err(Error::InvalidConfig(
            "sourced PER requires IDs on transmitted messages".into(),
        ));
    }
    let mut errors = 0usize;
    for user in l {
        let uid = user.id.as_ref().expect("checked above");
        let claims: Vec<&Message> = l_hat
            .iter()
            .filter(|m| m.id.as_ref() == Some(uid))
            .collect();
        let ok = claims.len() == 1 && claims[0].payload == user.payload;
        if !ok {
            errors += 1;
        }
    }
    Ok(errors as f64 / l.len() as f64)
}

/// Sourced packet error rate averaged over a batch of trials.
pub fn per_sourced(trials: &[TrialResult]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptyInput("per_sourced: trials"));
    }
    let mut sum = 0.0;
    for t in trials {
        sum += per_trial_sourced(&t.transmitted, &t.decoded)?;
    }
    Ok(sum / trials.len() as f64)
}

/// Metric aggregated by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mer,
    Pupe,
    PerSourced,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mer => "mer",
            Metric::Pupe => "pupe",
            Metric::PerSourced => "per",
        }
    }

    fn evaluate(&self, t: &TrialResult) -> Result<f64> {
        match self {
            Metric::Mer => mer(&t.transmitted, &t.decoded),
            Metric::Pupe => pupe(&t.transmitted, &t.decoded),
            Metric::PerSourced => per_trial_sourced(&t.transmitted, &t.decoded),
        }
    }
}

/// Swept axis of a simulation grid.
#[derive(Debug, Clone)]
pub enum SweepAxis {
    ActiveUsers(Vec<usize>),
    EbN0Db(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::ActiveUsers(_) => "ka",
            SweepAxis::EbN0Db(_) => "ebn0_db",
        }
    }
}

/// Sweep mode: plain metric aggregation, or the threshold search for the
/// minimum E_b/N_0 reaching a PUPE target (bisection over a grid assumed
/// monotone).
#[derive(Debug, Clone)]
pub enum SweepMode {
    MetricSweep,
    MinEbn0ForPupe { target: f64, grid_db: Vec<f64> },
}

/// Full sweep specification.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: TbmConfig,
    pub axis: SweepAxis,
    /// Active users when the axis does not sweep them.
    pub active_users: usize,
    /// Receiver component budget; `None` = genie (`ka_bar = Ka`).
    pub ka_bar_override: Option<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub metric: Metric,
    pub mode: SweepMode,
    /// Write wall-clock timings into the CSV (off keeps output
    /// byte-reproducible).
    pub wall_clock_timing: bool,
}

impl SweepSpec {
    pub fn new(base: TbmConfig, axis: SweepAxis, trials: usize) -> Self {
        Self {
            active_users: base.ka_bar,
            base,
            axis,
            ka_bar_override: None,
            trials,
            master_seed: 0,
            metric: Metric::Mer,
            mode: SweepMode::MetricSweep,
            wall_clock_timing: false,
        }
    }
}

/// One output row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis: f64,
    pub metric: f64,
    pub half_width: f64,
    pub trials: usize,
    pub mean_fit: f64,
    pub mean_runtime_ms: f64,
}

/// Sweep result: config echo plus the fixed-order rows.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub config_echo: Vec<(String, String)>,
    pub axis_name: String,
    pub metric_name: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// CSV with `#`-prefixed config comment lines and the fixed column
    /// order (axis, metric, half_width, trials, mean_fit, mean_runtime_ms).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str(&format!(
            "{},{},half_width,trials,mean_fit,mean_runtime_ms\n",
            self.axis_name, self.metric_name
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.axis, r.metric, r.half_width, r.trials, r.mean_fit, r.mean_runtime_ms
            ));
        }
        out
    }
}

/// Runs one seeded trial: sample messages, transmit, decode.
pub fn run_trial(cfg: &TbmConfig, ka: usize, seed: u64) -> Result<TrialResult> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let transmitted = sample_messages(cfg, ka, &mut rng)?;
    let symbols: Vec<_> = transmitted
        .iter()
        .map(|m| tx_encode(m, cfg))
        .collect::<Result<_>>()?;
    let y = channel_apply(&symbols, cfg, &mut rng)?;
    let mut cfg_trial = cfg.clone();
    cfg_trial.cpd.rng_seed = splitmix64(seed ^ 0xC2B2_AE3D_27D4_EB4F);
    let start = Instant::now();
    let outcome = rx_decode(&y, &cfg_trial)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let decoded = outcome.messages();
    let miss_ratio = pupe(&transmitted, &decoded)?;
    let capped = mer(&transmitted, &decoded)?;
    let rx_set = distinct(&decoded);
    let tx_set = distinct(&transmitted);
    let phantom_ratio = if rx_set.is_empty() {
        0.0
    } else {
        rx_set.difference(&tx_set).count() as f64 / rx_set.len() as f64
    };
    Ok(TrialResult {
        transmitted,
        decoded,
        miss_ratio,
        phantom_ratio,
        capped,
        fit: outcome.fit,
        runtime_ms,
        seed,
    })
}

/// Mean metric plus a binomial-style half-width over one grid point.
fn run_point(spec: &SweepSpec, cfg: &TbmConfig, ka: usize) -> Result<(f64, f64, f64, f64)> {
    let results: Vec<TrialResult> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, ka, trial_seed(spec.master_seed, t as u64)))
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    let mut metric_sum = 0.0;
    let mut fit_sum = 0.0;
    let mut rt_sum = 0.0;
    for r in &results {
        let v = spec.metric.evaluate(r)?;
        debug_assert!((0.0..=1.0).contains(&v));
        debug_assert!(r.capped >= r.miss_ratio && r.capped <= 1.0);
        metric_sum += v;
        fit_sum += r.fit;
        rt_sum += r.runtime_ms;
    }
    let mean = metric_sum / n;
    let p = mean.clamp(0.0, 1.0);
    let half_width = 1.96 * (p * (1.0 - p) / n).sqrt();
    Ok((mean, half_width, fit_sum / n, rt_sum / n))
}

/// Runs a full sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    if spec.trials < 1 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    spec.base.validate()?;
    if spec.metric == Metric::PerSourced && spec.base.id_bits == 0 {
        return Err(Error::InvalidConfig(
            "sourced PER needs id_bits > 0".into(),
        ));
    }

    let mut rows = Vec::new();
    let metric_name;
    match &spec.mode {
        SweepMode::MetricSweep => {
            metric_name = spec.metric.name().to_string();
            match &spec.axis {
                SweepAxis::ActiveUsers(kas) => {
                    for &ka in kas {
                        let mut cfg = spec.base.clone();
                        cfg.ka_bar = spec.ka_bar_override.unwrap_or(ka);
                        let (m, hw, fit, rt) = run_point(spec, &cfg, ka)?;
                        rows.push(SweepRow {
                            axis: ka as f64,
                            metric: m,
                            half_width: hw,
                            trials: spec.trials,
                            mean_fit: fit,
                            mean_runtime_ms: if spec.wall_clock_timing { rt } else { 0.0 },
                        });
                    }
                }
                SweepAxis::EbN0Db(grid) => {
                    let ka = spec.active_users;
                    for &db in grid {
                        let mut cfg = spec.base.clone();
                        cfg.ebn0_db = db;
                        cfg.ka_bar = spec.ka_bar_override.unwrap_or(ka);
                        let (m, hw, fit, rt) = run_point(spec, &cfg, ka)?;
                        rows.push(SweepRow {
                            axis: db,
                            metric: m,
                            half_width: hw,
                            trials: spec.trials,
                            mean_fit: fit,
                            mean_runtime_ms: if spec.wall_clock_timing { rt } else { 0.0 },
                        });
                    }
                }
            }
        }
        SweepMode::MinEbn0ForPupe { target, grid_db } => {
            metric_name = "min_ebn0_db".to_string();
            if grid_db.is_empty() {
                return Err(Error::InvalidConfig("empty E_b/N_0 grid".into()));
            }
            let kas = match &spec.axis {
                SweepAxis::ActiveUsers(kas) => kas.clone(),
                SweepAxis::EbN0Db(_) => {
                    return Err(Error::InvalidConfig(
                        "the PUPE-target search sweeps active users; the E_b/N_0 grid is given separately".into(),
                    ));
                }
            };
            for ka in kas {
                let eval_point = |db: f64| -> Result<(f64, f64, f64, f64)> {
                    let mut cfg = spec.base.clone();
                    cfg.ebn0_db = db;
                    cfg.ka_bar = spec.ka_bar_override.unwrap_or(ka);
                    let mut p = spec.clone();
                    p.metric = Metric::Pupe;
                    run_point(&p, &cfg, ka)
                };
                // bisection over grid indices, assuming PUPE is
                // non-increasing in E_b/N_0
                let mut lo = 0usize;
                let mut hi = grid_db.len() - 1;
                let mut cache: std::collections::BTreeMap<usize, (f64, f64, f64, f64)> =
                    std::collections::BTreeMap::new();
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    let r = eval_point(grid_db[mid])?;
                    cache.insert(mid, r);
                    if r.0 <= *target {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                let at = match cache.get(&lo) {
                    Some(&r) => r,
                    None => {
                        let r = eval_point(grid_db[lo])?;
                        cache.insert(lo, r);
                        r
                    }
                };
                let found = at.0 <= *target;
                rows.push(SweepRow {
                    axis: ka as f64,
                    metric: if found { grid_db[lo] } else { f64::NAN },
                    half_width: at.1,
                    trials: spec.trials,
                    mean_fit: at.2,
                    mean_runtime_ms: if spec.wall_clock_timing { at.3 } else { 0.0 },
                });
            }
        }
    }

    Ok(SweepTable {
        config_echo: config_echo(spec),
        axis_name: spec.axis.name().to_string(),
        metric_name,
        rows,
    })
}

fn config_echo(spec: &SweepSpec) -> Vec<(String, String)> {
    let b = &spec.base;
    let dims: Vec<String> = b.shape.dims().iter().map(|d| d.to_string()).collect();
    let splits: Vec<String> = b.bit_split.splits().iter().map(|s| s.to_string()).collect();
    let axis = match &spec.axis {
        SweepAxis::ActiveUsers(k) => format!(
            "ka [{}]",
            k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        ),
        SweepAxis::EbN0Db(g) => format!(
            "ebn0_db [{}]",
            g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        ),
    };
    let mode = match &spec.mode {
        SweepMode::MetricSweep => "metric_sweep".to_string(),
        SweepMode::MinEbn0ForPupe { target, grid_db } => format!(
            "min_ebn0_for_pupe target={} grid=[{}]",
            target,
            grid_db
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ),
    };
    vec![
        ("artifact".into(), format!("tbm {}", env!("CARGO_PKG_VERSION"))),
        ("dims".into(), dims.join(",")),
        ("antennas".into(), b.shape.antennas().to_string()),
        ("payload_bits".into(), b.payload_bits.to_string()),
        ("id_bits".into(), b.id_bits.to_string()),
        ("bch".into(), b.bch_enabled.to_string()),
        ("bit_split".into(), splits.join(",")),
        (
            "ka_bar".into(),
            spec.ka_bar_override
                .map_or("genie".to_string(), |v| v.to_string()),
        ),
        ("ebn0_db".into(), b.ebn0_db.to_string()),
        ("noise_variance".into(), b.noise_variance.to_string()),
        (
            "power_threshold".into(),
            b.power_threshold.map_or("none".into(), |v| v.to_string()),
        ),
        (
            "ebn0_includes_id_bits".into(),
            b.ebn0_includes_id_bits.to_string(),
        ),
        ("allow_collisions".into(), b.allow_collisions.to_string()),
        ("cpd_max_iterations".into(), b.cpd.max_iterations.to_string()),
        ("cpd_rel_fit_tolerance".into(), b.cpd.rel_fit_tolerance.to_string()),
        ("cpd_restarts".into(), b.cpd.restarts.to_string()),
        (
            "cpd_accept_fit".into(),
            b.cpd.accept_fit.map_or("none".into(), |v| v.to_string()),
        ),
        ("refine_passes".into(), b.refine_passes.to_string()),
        ("axis".into(), axis),
        ("active_users".into(), spec.active_users.to_string()),
        ("trials".into(), spec.trials.to_string()),
        ("master_seed".into(), spec.master_seed.to_string()),
        ("metric".into(), spec.metric.name().into()),
        ("mode".into(), mode),
        ("wall_clock_timing".into(), spec.wall_clock_timing.to_string()),
    ]
}
