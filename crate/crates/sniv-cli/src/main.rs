//! Command-line interface: data goes in as CSV, confidence regions come out
//! as machine-readable JSON envelopes, projection intervals, polynomial-
//! system dumps, Monte-Carlo tables, or 2-D cross-section point lists.
//!
//! Exit codes: 0 success, 2 empty confidence set, 3 some direction was
//! unbounded (ball-limited), 4 solver failure on some direction, 64 usage,
//! configuration or data errors.

mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{MethodName, RunConfig};
use sniv::encode::write_set;
use sniv::mc::{self, Design, ExperimentConfig, TableFormat};
use sniv::region::{direction_grid, interval, sweep, CoordinateInterval, Envelope, SweepOptions};
use sniv::stats::{Sample, SnivClass};

const EXIT_EMPTY: u8 = 2;
const EXIT_UNBOUNDED: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "sniv",
    version = sniv::VERSION,
    about = "Guaranteed outer approximations of robust confidence regions \
             for linear instrumental-variables models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep the confidence set over a direction grid and write the
    /// envelope plus per-coordinate intervals as JSON.
    Invert(InvertArgs),
    /// Projection confidence interval for one coordinate.
    Interval(IntervalArgs),
    /// Dump the encoded polynomial system in the text format.
    EncodeDump(DumpArgs),
    /// Monte-Carlo experiment harness.
    Mc(McArgs),
    /// 2-D cross-section of the envelope as a CSV point list.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Input data CSV with header y,x1..x{dX},z1..z{dZ}.
    #[arg(long)]
    data: PathBuf,
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Squared radius of the redundant ball constraint.
    #[arg(long)]
    ball: Option<f64>,
    /// Largest relaxation level.
    #[arg(long)]
    hbar: Option<usize>,
    #[arg(long)]
    start_level: Option<usize>,
    /// Direction count for sweeps.
    #[arg(long)]
    dirs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: SNIV_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Support certificate on questioned regressors.
    #[arg(long)]
    s: Option<usize>,
    /// Support certificate on questioned instruments.
    #[arg(long)]
    s_tilde: Option<usize>,
    /// Sub-vector dimension for ar-subvector.
    #[arg(long)]
    d_x1: Option<usize>,
    /// Polynomial file for the custom method (p side).
    #[arg(long)]
    p_hat: Option<PathBuf>,
    /// Polynomial file for the custom method (q side).
    #[arg(long)]
    q_hat: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<(RunConfig, Sample), sniv::Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.ball {
            cfg.ball = v;
        }
        if let Some(v) = self.hbar {
            cfg.hbar = v;
        }
        if let Some(v) = self.start_level {
            cfg.start_level = v;
        }
        if let Some(v) = self.dirs {
            cfg.directions = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = self.s {
            cfg.s = Some(v);
        }
        if let Some(v) = self.s_tilde {
            cfg.s_tilde = Some(v);
        }
        if let Some(v) = self.d_x1 {
            cfg.d_x1 = v;
        }
        if let Some(p) = &self.p_hat {
            cfg.p_hat = Some(p.clone());
        }
        if let Some(q) = &self.q_hat {
            cfg.q_hat = Some(q.clone());
        }
        let file = std::fs::File::open(&self.data)?;
        let sample = Sample::from_csv(file)?;
        Ok((cfg, sample))
    }
}

#[derive(Args)]
struct InvertArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IntervalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// 1-based coordinate: 1..=d_X for regressors, then free theta
    /// coordinates.
    #[arg(long)]
    coordinate: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// 1-based coordinate on the horizontal axis.
    #[arg(long, default_value_t = 1)]
    coord_x: usize,
    /// 1-based coordinate on the vertical axis.
    #[arg(long, default_value_t = 2)]
    coord_y: usize,
    /// Number of boundary points.
    #[arg(long, default_value_t = 360)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_parser = ["classical", "many-instruments", "weak", "invalid", "endogenous"])]
    design: String,
    #[arg(long, value_parser = ["sniv-class1", "sniv-class2", "sniv-class3", "sniv-class4", "ar", "ar-interval"])]
    method: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dx: usize,
    /// Instrument count (valid instruments for the endogenous design;
    /// ignored for the invalid design where d_Z = d_X - 1).
    #[arg(long, default_value_t = 4)]
    dz: usize,
    /// First-stage strength; defaults to 0.3 (0.03 for the weak design).
    #[arg(long)]
    pi_star: Option<f64>,
    /// Conditional heteroskedasticity.
    #[arg(long, default_value_t = false)]
    het: bool,
    /// Regressors re-used as instruments (endogenous design).
    #[arg(long, default_value_t = 1)]
    n_endogenous: usize,
    /// Valid instruments whose exogeneity is also questioned.
    #[arg(long, default_value_t = 0)]
    questioned_exog: usize,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    s_tilde: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    hbar: usize,
    #[arg(long, default_value_t = 1000.0)]
    ball: f64,
    #[arg(long, default_value_t = 16)]
    dirs: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    bootstrap_draws: usize,
    #[arg(long, value_parser = ["csv", "markdown"], default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Rounds to 12 significant digits for stable machine-readable output.
fn sig12(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<(), sniv::Error> {
    match out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            f.write_all(text.as_bytes())?;
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn record_json(r: &sniv::region::DirectionBound) -> serde_json::Value {
    json!({
        "u": r.u.iter().map(|&v| sig12(v)).collect::<Vec<_>>(),
        "bound": r.bound.map(sig12),
        "level": r.level,
        "certified": r.certified,
        "ball_active": r.ball_active,
        "failed": r.failed,
        "seconds": sig12(r.seconds),
    })
}

fn interval_json(iv: &CoordinateInterval) -> serde_json::Value {
    json!({
        "coordinate": iv.coordinate + 1,
        "lower": iv.lower.map(sig12),
        "upper": iv.upper.map(sig12),
        "certified_lower": iv.certified_lower,
        "certified_upper": iv.certified_upper,
        "unbounded_lower": iv.unbounded_lower,
        "unbounded_upper": iv.unbounded_upper,
        "empty": iv.empty,
    })
}

fn envelope_exit(env: &Envelope) -> ExitCode {
    if env.empty {
        ExitCode::from(EXIT_EMPTY)
    } else if env.records.iter().any(|r| r.failed) {
        ExitCode::from(EXIT_SOLVER)
    } else if env.records.iter().any(|r| r.ball_active) {
        ExitCode::from(EXIT_UNBOUNDED)
    } else {
        ExitCode::SUCCESS
    }
}

/// Envelope intervals read off the leading signed-axis directions.
fn axis_intervals(env: &Envelope) -> Vec<CoordinateInterval> {
    (0..env.point_dim)
        .map(|k| {
            let lo = &env.records[2 * k];
            let hi = &env.records[2 * k + 1];
            CoordinateInterval {
                coordinate: k,
                lower: if env.empty { None } else { lo.bound },
                upper: if env.empty { None } else { hi.bound.map(|b| -b) },
                certified_lower: lo.certified,
                certified_upper: hi.certified,
                unbounded_lower: lo.ball_active || lo.failed,
                unbounded_upper: hi.ball_active || hi.failed,
                empty: env.empty,
            }
        })
        .collect()
}

fn cmd_invert(args: &InvertArgs) -> Result<ExitCode, sniv::Error> {
    let (cfg, sample) = args.common.resolve()?;
    let (set, r_n) = cfg.build_set(&sample)?;
    let pd = set.layout.point_dim();
    let dirs = direction_grid(pd, cfg.directions.max(2 * pd), cfg.seed);
    let opts = SweepOptions {
        hierarchy: cfg.hierarchy_options(),
        workers: cfg.effective_workers(),
        membership_tol: cfg.membership_tol,
    };
    let env = sweep(&set, &dirs, &opts);
    let intervals = axis_intervals(&env);
    let doc = json!({
        "version": sniv::VERSION,
        "method": cfg.method.label(),
        "alpha": sig12(cfg.alpha),
        "radius": r_n.map(sig12),
        "ball": sig12(cfg.ball),
        "hbar": cfg.hbar,
        "seed": cfg.seed,
        "directions": env.records.len(),
        "point_dim": pd,
        "empty": env.empty,
        "certified_fraction": sig12(env.certified_fraction()),
        "unbounded_directions": env.records.iter().filter(|r| r.ball_active).count(),
        "failed_directions": env.records.iter().filter(|r| r.failed).count(),
        "intervals": intervals.iter().map(interval_json).collect::<Vec<_>>(),
        "records": env.records.iter().map(record_json).collect::<Vec<_>>(),
    });
    write_out(&args.out, &serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(envelope_exit(&env))
}

fn cmd_interval(args: &IntervalArgs) -> Result<ExitCode, sniv::Error> {
    let (cfg, sample) = args.common.resolve()?;
    let (set, r_n) = cfg.build_set(&sample)?;
    let pd = set.layout.point_dim();
    if args.coordinate < 1 || args.coordinate > pd {
        return Err(sniv::Error::Dimension(format!(
            "coordinate {} out of range 1..={pd}",
            args.coordinate
        )));
    }
    let opts = SweepOptions {
        hierarchy: cfg.hierarchy_options(),
        workers: cfg.effective_workers(),
        membership_tol: cfg.membership_tol,
    };
    let iv = interval(&set, args.coordinate - 1, &opts)?;
    let doc = json!({
        "version": sniv::VERSION,
        "method": cfg.method.label(),
        "alpha": sig12(cfg.alpha),
        "radius": r_n.map(sig12),
        "seed": cfg.seed,
        "interval": interval_json(&iv),
    });
    write_out(&args.out, &serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(if iv.empty {
        ExitCode::from(EXIT_EMPTY)
    } else if iv.unbounded_lower || iv.unbounded_upper {
        ExitCode::from(EXIT_UNBOUNDED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_encode_dump(args: &DumpArgs) -> Result<ExitCode, sniv::Error> {
    let (cfg, sample) = args.common.resolve()?;
    let (set, _) = cfg.build_set(&sample)?;
    let mut buf = Vec::new();
    write_set(&set, &mut buf).map_err(sniv::Error::Io)?;
    write_out(&args.out, &String::from_utf8(buf).unwrap())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(args: &PlotArgs) -> Result<ExitCode, sniv::Error> {
    let (cfg, sample) = args.common.resolve()?;
    let (set, _) = cfg.build_set(&sample)?;
    let pd = set.layout.point_dim();
    for c in [args.coord_x, args.coord_y] {
        if c < 1 || c > pd {
            return Err(sniv::Error::Dimension(format!(
                "coordinate {c} out of range 1..={pd}"
            )));
        }
    }
    if args.coord_x == args.coord_y {
        return Err(sniv::Error::Invalid("need two distinct coordinates".into()));
    }
    let (ci, cj) = (args.coord_x - 1, args.coord_y - 1);
    let dirs = direction_grid(pd, cfg.directions.max(2 * pd), cfg.seed);
    let opts = SweepOptions {
        hierarchy: cfg.hierarchy_options(),
        workers: cfg.effective_workers(),
        membership_tol: cfg.membership_tol,
    };
    let env = sweep(&set, &dirs, &opts);
    if env.empty {
        write_out(&args.out, "x,y\n")?;
        return Ok(ExitCode::from(EXIT_EMPTY));
    }
    // Half-planes in the (ci, cj) plane with the other coordinates at 0.
    let planes: Vec<(f64, f64, f64)> = env
        .records
        .iter()
        .filter(|r| !r.failed && r.bound.is_some())
        .map(|r| (r.u[ci], r.u[cj], r.bound.unwrap()))
        .collect();
    let ivs = axis_intervals(&env);
    let center = |iv: &CoordinateInterval| -> f64 {
        match (iv.lower, iv.upper) {
            (Some(l), Some(u)) => 0.5 * (l + u),
            _ => 0.0,
        }
    };
    let (cx, cy) = (center(&ivs[ci]), center(&ivs[cj]));
    let feasible = planes
        .iter()
        .all(|&(a, b, bound)| a * cx + b * cy >= bound - 1e-7);
    let mut text = String::from("x,y\n");
    if feasible {
        let r_cap = 2.0 * cfg.ball.sqrt();
        for p in 0..args.points {
            let t = 2.0 * std::f64::consts::PI * p as f64 / args.points as f64;
            let (dx, dy) = (t.cos(), t.sin());
            let mut r_max = r_cap;
            for &(a, b, bound) in &planes {
                let along = a * dx + b * dy;
                if along < -1e-12 {
                    let slack = a * cx + b * cy - bound;
                    r_max = r_max.min(slack / -along);
                }
            }
            let (x, y) = (cx + r_max * dx, cy + r_max * dy);
            text.push_str(&format!("{},{}\n", sig12(x), sig12(y)));
        }
    }
    write_out(&args.out, &text)?;
    Ok(envelope_exit(&env))
}

fn cmd_mc(args: &McArgs) -> Result<ExitCode, sniv::Error> {
    let pi = args.pi_star.unwrap_or(match args.design.as_str() {
        "weak" => 0.03,
        _ => 0.3,
    });
    let mut design = match args.design.as_str() {
        "classical" => Design::classical(args.n, args.dx, args.dz, pi),
        "many-instruments" => Design::many_instruments(args.n, args.dx, args.dz, pi),
        "weak" => Design::weak(args.n, args.dx, args.dz, pi),
        "invalid" => Design::invalid(args.n, args.dx, pi),
        "endogenous" => Design::endogenous(
            args.n,
            args.dx,
            args.dz,
            pi,
            args.n_endogenous,
            args.questioned_exog,
        ),
        other => return Err(sniv::Error::Invalid(format!("unknown design {other}"))),
    };
    design.heteroskedastic = args.het;
    let method = match args.method.as_str() {
        "sniv-class1" => mc::Method::Sniv(SnivClass::One),
        "sniv-class2" => mc::Method::Sniv(SnivClass::Two),
        "sniv-class3" => mc::Method::Sniv(SnivClass::Three),
        "sniv-class4" => mc::Method::Sniv(SnivClass::Four),
        "ar" => mc::Method::ArSet,
        "ar-interval" => mc::Method::ArInterval,
        other => return Err(sniv::Error::Invalid(format!("unknown method {other}"))),
    };
    let mut cfg = ExperimentConfig::new(design, method);
    cfg.alpha = args.alpha;
    cfg.replications = args.reps;
    cfg.seed = args.seed;
    cfg.s = args.s;
    cfg.s_tilde = args.s_tilde;
    cfg.ball = args.ball;
    cfg.hierarchy.h_max = args.hbar;
    cfg.directions = args.dirs;
    cfg.workers = args.workers.unwrap_or_else(|| {
        std::env::var("SNIV_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    });
    cfg.bootstrap_draws = args.bootstrap_draws;
    let metrics = mc::run_experiment(&cfg)?;
    let format = if args.format == "markdown" {
        TableFormat::Markdown
    } else {
        TableFormat::Csv
    };
    let table = mc::emit_table(std::slice::from_ref(&metrics), format);
    write_out(&args.out, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, sniv::Error> {
    match &cli.cmd {
        Cmd::Invert(a) => cmd_invert(a),
        Cmd::Interval(a) => cmd_interval(a),
        Cmd::EncodeDump(a) => cmd_encode_dump(a),
        Cmd::Mc(a) => cmd_mc(a),
        Cmd::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version paths exit cleanly
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(sniv::Error::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
