//! `tbm` command-line front end: link simulation sweeps, identifiability
//! and DoF reports, and codebook dumps.

mod config;
mod presets;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_f64_list, parse_usize_list, Bag, CliError, CliResult};
use tbm_core::constellation::{BitSplit, SubConstellation};
use tbm_core::eval::{run_sweep, Metric, SweepAxis, SweepMode, SweepSpec};
use tbm_core::identifiability::{dof_bounds, dof_curve, rank_bounds};
use tbm_core::link::TbmConfig;
use tbm_core::tensor::TensorShape;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "tbm",
    version,
    about = "Tensor-based modulation simulator for unsourced random access",
    after_help = "Configuration precedence: flags > --config file > --preset > defaults.\n\
                  Config files hold `key = value` lines using the long flag names.\n\
                  TBM_THREADS limits the worker thread count."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte-Carlo sweep and write a CSV table
    Simulate(SimArgs),
    /// Emit achievable sum-DoF curves with the two upper bounds
    Dof(DofArgs),
    /// Report rank-uniqueness bounds for one tensor shape
    Bounds(BoundsArgs),
    /// Dump a sub-constellation codebook (one codeword per line)
    CodebookDump(CodebookDumpArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Plain-text config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Packaged study preset (fig1, fig3-small, fig4-small, fig5-small, ...)
    #[arg(long)]
    preset: Option<String>,
    /// Output file (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Log one line per grid point to stderr
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tensor dimensions, e.g. 8,5,4
    #[arg(long)]
    dims: Option<String>,
    /// Receive antenna count N
    #[arg(long)]
    antennas: Option<usize>,
    /// Payload bits B per user [default: 24]
    #[arg(long = "payload-bits")]
    payload_bits: Option<usize>,
    /// Identity bits prepended to the payload [default: 0]
    #[arg(long = "id-bits")]
    id_bits: Option<usize>,
    /// Enable the 14-parity-bit binary code [default: false]
    #[arg(long)]
    bch: Option<bool>,
    /// Explicit bit split, e.g. 62,48 (overrides the default allocator)
    #[arg(long = "bit-split")]
    bit_split: Option<String>,
    /// Active-user counts; more than one value sweeps this axis
    #[arg(long)]
    ka: Option<String>,
    /// Receiver component budget (omit for the genie ka_bar = Ka)
    #[arg(long = "ka-bar")]
    ka_bar: Option<usize>,
    /// E_b/N_0 grid in dB; more than one value sweeps this axis [default: 0]
    #[arg(long = "ebn0-db")]
    ebn0_db: Option<String>,
    /// Noise variance per complex entry; 0 = noise-free [default: 1]
    #[arg(long = "noise-variance")]
    noise_variance: Option<f64>,
    /// Amplitude threshold tau (no-code mode only)
    #[arg(long = "power-threshold")]
    power_threshold: Option<f64>,
    /// Use the strict payload-only E_b convention [default: false]
    #[arg(long = "ebn0-strict-b")]
    ebn0_strict_b: Option<bool>,
    /// Allow payload collisions between active users [default: false]
    #[arg(long = "allow-collisions")]
    allow_collisions: Option<bool>,
    /// CPD random restarts [default: 4]
    #[arg(long)]
    restarts: Option<usize>,
    /// CPD sweep limit [default: 2000]
    #[arg(long = "max-iterations")]
    max_iterations: Option<usize>,
    /// CPD relative fit tolerance [default: 1e-8]
    #[arg(long)]
    tol: Option<f64>,
    /// Stop restarts early at this fit (e.g. 1e-8 for noise-free runs)
    #[arg(long = "accept-fit")]
    accept_fit: Option<f64>,
    /// Decision-directed re-detection passes [default: 2]
    #[arg(long = "refine-passes")]
    refine_passes: Option<usize>,
    /// Trials per grid point
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Metric: mer | pupe | per [default: mer]
    #[arg(long)]
    metric: Option<String>,
    /// Mode: sweep | min-ebn0 [default: sweep]
    #[arg(long)]
    mode: Option<String>,
    /// PUPE target for min-ebn0 mode
    #[arg(long = "pupe-target")]
    pupe_target: Option<f64>,
    /// E_b/N_0 search grid for min-ebn0 mode, e.g. 0,2.5,5
    #[arg(long = "ebn0-grid")]
    ebn0_grid: Option<String>,
    /// Write wall-clock timings (breaks byte-reproducibility) [default: false]
    #[arg(long = "wall-clock-timing")]
    wall_clock_timing: Option<bool>,
}

#[derive(Args)]
struct DofArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tensor dimensions; repeat for several shapes
    #[arg(long)]
    dims: Vec<String>,
    /// Receive antenna count N
    #[arg(long)]
    antennas: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tensor dimensions, e.g. 64,50
    #[arg(long)]
    dims: Option<String>,
    /// Receive antenna count N
    #[arg(long)]
    antennas: Option<usize>,
}

#[derive(Args)]
struct CodebookDumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sub-constellation dimension T_i
    #[arg(long)]
    dim: Option<usize>,
    /// Information bits B_i
    #[arg(long)]
    bits: Option<usize>,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TBM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Dof(args) => cmd_dof(args),
        Cmd::Bounds(args) => cmd_bounds(args),
        Cmd::CodebookDump(args) => cmd_codebook_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn layered_bag(common: &CommonArgs, flags: Bag) -> CliResult<Bag> {
    let mut bag = Bag::default();
    if let Some(name) = &common.preset {
        bag = bag.layered(presets::preset(name)?);
    }
    if let Some(path) = &common.config {
        bag = bag.layered(Bag::from_file(path)?);
    }
    Ok(bag.layered(flags))
}

fn write_output(path: &Option<PathBuf>, content: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{content}");
            std::io::stdout()
                .flush()
                .map_err(|e| CliError(format!("stdout: {e}")))
        }
    }
}

const SIMULATE_KEYS: &[&str] = &[
    "dims",
    "antennas",
    "payload-bits",
    "id-bits",
    "bch",
    "bit-split",
    "ka",
    "ka-bar",
    "ebn0-db",
    "noise-variance",
    "power-threshold",
    "ebn0-strict-b",
    "allow-collisions",
    "restarts",
    "max-iterations",
    "tol",
    "accept-fit",
    "refine-passes",
    "trials",
    "seed",
    "metric",
    "mode",
    "pupe-target",
    "ebn0-grid",
    "wall-clock-timing",
];

fn cmd_simulate(args: SimArgs) -> CliResult<()> {
    let mut flags = Bag::default();
    flags.set_opt("dims", &args.dims);
    flags.set_opt("antennas", &args.antennas);
    flags.set_opt("payload-bits", &args.payload_bits);
    flags.set_opt("id-bits", &args.id_bits);
    flags.set_opt("bch", &args.bch);
    flags.set_opt("bit-split", &args.bit_split);
    flags.set_opt("ka", &args.ka);
    flags.set_opt("ka-bar", &args.ka_bar);
    flags.set_opt("ebn0-db", &args.ebn0_db);
    flags.set_opt("noise-variance", &args.noise_variance);
    flags.set_opt("power-threshold", &args.power_threshold);
    flags.set_opt("ebn0-strict-b", &args.ebn0_strict_b);
    flags.set_opt("allow-collisions", &args.allow_collisions);
    flags.set_opt("restarts", &args.restarts);
    flags.set_opt("max-iterations", &args.max_iterations);
    flags.set_opt("tol", &args.tol);
    flags.set_opt("accept-fit", &args.accept_fit);
    flags.set_opt("refine-passes", &args.refine_passes);
    flags.set_opt("trials", &args.trials);
    flags.set_opt("seed", &args.seed);
    flags.set_opt("metric", &args.metric);
    flags.set_opt("mode", &args.mode);
    flags.set_opt("pupe-target", &args.pupe_target);
    flags.set_opt("ebn0-grid", &args.ebn0_grid);
    flags.set_opt("wall-clock-timing", &args.wall_clock_timing);
    let bag = layered_bag(&args.common, flags)?;
    bag.check_known(SIMULATE_KEYS)?;

    let dims = parse_usize_list("dims", bag.require("dims")?)?;
    let antennas: usize = bag
        .parse("antennas")?
        .ok_or_else(|| CliError("missing required key: antennas".into()))?;
    let shape = TensorShape::new(dims, antennas)?;

    let payload_bits = bag.parse_or("payload-bits", 24usize)?;
    let id_bits = bag.parse_or("id-bits", 0usize)?;
    let bch = bag.parse_or("bch", false)?;
    let mut cfg = TbmConfig::new(shape.clone(), payload_bits, id_bits, bch)?;
    if let Some(split) = bag.get("bit-split") {
        cfg.bit_split = BitSplit::explicit(parse_usize_list("bit-split", split)?, &shape)?;
    }
    cfg.noise_variance = bag.parse_or("noise-variance", 1.0)?;
    cfg.power_threshold = bag.parse("power-threshold")?;
    cfg.ebn0_includes_id_bits = !bag.parse_or("ebn0-strict-b", false)?;
    cfg.allow_collisions = bag.parse_or("allow-collisions", false)?;
    cfg.cpd.restarts = bag.parse_or("restarts", 4usize)?;
    cfg.cpd.max_iterations = bag.parse_or("max-iterations", 2000usize)?;
    cfg.cpd.rel_fit_tolerance = bag.parse_or("tol", 1e-8)?;
    cfg.cpd.accept_fit = bag.parse("accept-fit")?;
    cfg.refine_passes = bag.parse_or("refine-passes", 2usize)?;

    let ka_list = parse_usize_list("ka", bag.require("ka")?)?;
    if ka_list.is_empty() {
        return Err(CliError("ka list is empty".into()));
    }
    let ebn0_list = parse_f64_list("ebn0-db", bag.get("ebn0-db").unwrap_or("0"))?;
    let trials: usize = bag
        .parse("trials")?
        .ok_or_else(|| CliError("missing required key: trials".into()))?;

    let metric = match bag.get("metric").unwrap_or("mer") {
        "mer" => Metric::Mer,
        "pupe" => Metric::Pupe,
        "per" => Metric::PerSourced,
        other => return Err(CliError(format!("invalid value for metric: `{other}`"))),
    };

    let mode_key = bag.get("mode").unwrap_or("sweep");
    let (axis, mode, active_users) = match mode_key {
        "sweep" => {
            if ebn0_list.len() > 1 {
                if ka_list.len() > 1 {
                    return Err(CliError(
                        "both ka and ebn0-db have several values; sweep one axis at a time".into(),
                    ));
                }
                cfg.ebn0_db = ebn0_list[0];
                (
                    SweepAxis::EbN0Db(ebn0_list.clone()),
                    SweepMode::MetricSweep,
                    ka_list[0],
                )
            } else {
                cfg.ebn0_db = ebn0_list[0];
                (
                    SweepAxis::ActiveUsers(ka_list.clone()),
                    SweepMode::MetricSweep,
                    ka_list[0],
                )
            }
        }
        "min-ebn0" => {
            let target: f64 = bag
                .parse("pupe-target")?
                .ok_or_else(|| CliError("missing required key: pupe-target".into()))?;
            let grid = parse_f64_list(
                "ebn0-grid",
                bag.get("ebn0-grid")
                    .ok_or_else(|| CliError("missing required key: ebn0-grid".into()))?,
            )?;
            (
                SweepAxis::ActiveUsers(ka_list.clone()),
                SweepMode::MinEbn0ForPupe {
                    target,
                    grid_db: grid,
                },
                ka_list[0],
            )
        }
        other => return Err(CliError(format!("invalid value for mode: `{other}`"))),
    };

    let mut spec = SweepSpec::new(cfg, axis, trials);
    spec.active_users = active_users;
    spec.ka_bar_override = bag.parse("ka-bar")?;
    spec.master_seed = bag.parse_or("seed", 0u64)?;
    spec.metric = metric;
    spec.mode = mode;
    spec.wall_clock_timing = bag.parse_or("wall-clock-timing", false)?;

    let table = run_sweep(&spec)?;
    if args.common.verbose {
        for row in &table.rows {
            eprintln!(
                "{} = {}: {} = {} (+-{}, {} trials)",
                table.axis_name, row.axis, table.metric_name, row.metric, row.half_width, row.trials
            );
        }
    }
    write_output(&args.common.output, &table.to_csv())
}

fn parse_shapes(bag: &Bag, flag_dims: &[String], antennas: usize) -> CliResult<Vec<TensorShape>> {
    let mut shape_strs: Vec<String> = flag_dims.to_vec();
    if shape_strs.is_empty() {
        if let Some(s) = bag.get("shapes") {
            shape_strs = s.split(';').map(str::to_string).collect();
        }
    }
    if shape_strs.is_empty() {
        return Err(CliError("missing required key: dims (or shapes)".into()));
    }
    shape_strs
        .iter()
        .map(|s| Ok(TensorShape::new(parse_usize_list("dims", s)?, antennas)?))
        .collect()
}

fn cmd_dof(args: DofArgs) -> CliResult<()> {
    let mut flags = Bag::default();
    flags.set_opt("antennas", &args.antennas);
    let bag = layered_bag(&args.common, flags)?;
    bag.check_known(&["shapes", "antennas", "dims"])?;
    let antennas: usize = bag
        .parse("antennas")?
        .ok_or_else(|| CliError("missing required key: antennas".into()))?;
    let shapes = parse_shapes(&bag, &args.dims, antennas)?;

    let mut out = String::new();
    out.push_str(&format!("# artifact = tbm {VERSION}\n# command = dof\n"));
    out.push_str(&format!("# antennas = {antennas}\n"));
    let labels: Vec<String> = shapes
        .iter()
        .map(|s| {
            s.dims()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x")
        })
        .collect();
    out.push_str(&format!("# shapes = {}\n", labels.join(";")));
    out.push_str("shape,ka,sum_dof,dof_per_channel_use,upper_bound_tensor,coop_bound,endpoint\n");
    for (shape, label) in shapes.iter().zip(&labels) {
        for row in dof_curve(shape) {
            let b = dof_bounds(shape, row.ka);
            out.push_str(&format!(
                "{label},{},{},{},{},{},{}\n",
                row.ka,
                row.sum_dof,
                row.per_channel_use,
                b.upper_bound_tensor,
                b.coop_bound,
                u8::from(row.endpoint)
            ));
        }
    }
    if args.common.verbose {
        for (shape, label) in shapes.iter().zip(&labels) {
            let rb = rank_bounds(shape);
            eprintln!("{label}: r_bar = {}, endpoint ka = {}", rb.r_bar, rb.r_bar - 1);
        }
    }
    write_output(&args.common.output, &out)
}

fn cmd_bounds(args: BoundsArgs) -> CliResult<()> {
    let mut flags = Bag::default();
    flags.set_opt("dims", &args.dims);
    flags.set_opt("antennas", &args.antennas);
    let bag = layered_bag(&args.common, flags)?;
    bag.check_known(&["dims", "antennas"])?;
    let dims = parse_usize_list("dims", bag.require("dims")?)?;
    let antennas: usize = bag
        .parse("antennas")?
        .ok_or_else(|| CliError("missing required key: antennas".into()))?;
    let shape = TensorShape::new(dims, antennas)?;
    let rb = rank_bounds(&shape);

    let label = shape
        .dims()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x");
    let mut out = String::new();
    out.push_str(&format!("# artifact = tbm {VERSION}\n# command = bounds\n"));
    out.push_str(&format!("# dims = {label}\n# antennas = {antennas}\n"));
    out.push_str("dims,antennas,total_size,r0,r1,r2,r_bar,regime,beyond_proven_size\n");
    out.push_str(&format!(
        "{label},{antennas},{},{},{},{},{},{},{}\n",
        shape.total_len(),
        rb.r0,
        rb.r1,
        rb.r2,
        rb.r_bar,
        rb.regime,
        rb.beyond_proven_size
    ));
    if rb.beyond_proven_size {
        out.push_str(&format!(
            "# warning: total size {} exceeds the proven range (<= 15000) of the uniqueness\n\
             # theorem, and size-specific exceptions are not modeled; r_bar may be optimistic\n",
            shape.total_len()
        ));
    }
    write_output(&args.common.output, &out)
}

fn cmd_codebook_dump(args: CodebookDumpArgs) -> CliResult<()> {
    let mut flags = Bag::default();
    flags.set_opt("dim", &args.dim);
    flags.set_opt("bits", &args.bits);
    let bag = layered_bag(&args.common, flags)?;
    bag.check_known(&["dim", "bits"])?;
    let dim: usize = bag
        .parse("dim")?
        .ok_or_else(|| CliError("missing required key: dim".into()))?;
    let bits: usize = bag
        .parse("bits")?
        .ok_or_else(|| CliError("missing required key: bits".into()))?;
    let sub = SubConstellation::build(dim, bits)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(format!("# artifact = tbm {VERSION}\n").as_bytes());
    sub.dump(&mut buf)?;
    write_output(
        &args.common.output,
        std::str::from_utf8(&buf).expect("ascii output"),
    )
}
