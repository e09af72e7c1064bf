//! Data-generating processes and the Monte-Carlo harness.
//!
//! Five designs share one error recipe: instruments are independent standard
//! normals, the structural error and first-stage errors are jointly normal
//! with unit regressor variances, alternating small covariances tie the
//! structural error to each first-stage error, and the first-stage strength
//! is controlled by `pi_star`. The heteroskedastic variant draws the
//! structural error with conditional standard deviation `|Z_1|`.
//!
//! The harness runs replications on independent random substreams (so
//! results are identical for any worker count), encodes the configured
//! confidence set, sweeps it, and aggregates coverage, widths, exactness
//! rates, timings and endogeneity-detection rates.

use serde::Serialize;

use crate::encode::{encode_ar, encode_sniv, EndogenousConfig, SnivConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyOptions, SemialgebraicSet};
use crate::par;
use crate::region::{direction_grid, sweep, Envelope, SweepOptions};
use crate::stats::{bootstrap_radius, cross_moments, radius, ClassSpec, Rng, Sample, SnivClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DesignKind {
    Classical,
    ManyInstruments,
    Weak,
    Invalid,
    Endogenous,
}

/// One Monte-Carlo design.
#[derive(Clone, Debug)]
pub struct Design {
    pub kind: DesignKind,
    pub n: usize,
    pub d_x: usize,
    /// Total instrument count (including appended regressor copies for the
    /// endogenous design).
    pub d_z: usize,
    /// Fraction of each regressor's variance explained by the instruments.
    pub pi_star: f64,
    pub heteroskedastic: bool,
    /// Endogenous design: number of leading regressors re-used as
    /// instruments.
    pub n_endogenous: usize,
    /// Endogenous design: trailing valid instruments whose exogeneity is
    /// also questioned.
    pub n_questioned_exogenous: usize,
}

impl Design {
    pub fn classical(n: usize, d_x: usize, d_z: usize, pi_star: f64) -> Self {
        Design {
            kind: DesignKind::Classical,
            n,
            d_x,
            d_z,
            pi_star,
            heteroskedastic: false,
            n_endogenous: 0,
            n_questioned_exogenous: 0,
        }
    }

    pub fn many_instruments(n: usize, d_x: usize, d_z: usize, pi_star: f64) -> Self {
        Design {
            kind: DesignKind::ManyInstruments,
            ..Design::classical(n, d_x, d_z, pi_star)
        }
    }

    pub fn weak(n: usize, d_x: usize, d_z: usize, pi_star: f64) -> Self {
        Design {
            kind: DesignKind::Weak,
            ..Design::classical(n, d_x, d_z, pi_star)
        }
    }

    /// All instruments enter the outcome equation as regressors; only the
    /// first regressor is driven by (the last two) instruments.
    pub fn invalid(n: usize, d_x: usize, pi_star: f64) -> Self {
        Design {
            kind: DesignKind::Invalid,
            n,
            d_x,
            d_z: d_x.saturating_sub(1),
            pi_star,
            heteroskedastic: false,
            n_endogenous: 0,
            n_questioned_exogenous: 0,
        }
    }

    /// Classical design plus the first `n_endogenous` regressors appended
    /// as (endogenous) instruments.
    pub fn endogenous(
        n: usize,
        d_x: usize,
        d_z_valid: usize,
        pi_star: f64,
        n_endogenous: usize,
        n_questioned_exogenous: usize,
    ) -> Self {
        Design {
            kind: DesignKind::Endogenous,
            n,
            d_x,
            d_z: d_z_valid + n_endogenous,
            pi_star,
            heteroskedastic: false,
            n_endogenous,
            n_questioned_exogenous,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DesignKind::Classical => "classical",
            DesignKind::ManyInstruments => "many-instruments",
            DesignKind::Weak => "weak",
            DesignKind::Invalid => "invalid",
            DesignKind::Endogenous => "endogenous",
        }
    }

    fn d_z_valid(&self) -> usize {
        self.d_z - self.n_endogenous
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d_x == 0 || self.d_z == 0 {
            return Err(Error::Invalid("degenerate design dimensions".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_star) {
            return Err(Error::Invalid(format!(
                "pi_star must lie in [0,1], got {}",
                self.pi_star
            )));
        }
        // The error covariance is positive semidefinite only while the
        // cross-covariances fit under the first-stage variance.
        if self.d_x as f64 * (1.0 - self.pi_star) >= 25.0 {
            return Err(Error::Invalid(
                "error covariance not PSD: d_x (1 - pi_star) must stay below 25".into(),
            ));
        }
        match self.kind {
            DesignKind::Invalid => {
                if self.d_x < 3 || self.d_z != self.d_x - 1 {
                    return Err(Error::Invalid(
                        "invalid-instrument design needs d_x >= 3 and d_z = d_x - 1".into(),
                    ));
                }
            }
            DesignKind::Endogenous => {
                if self.n_endogenous == 0 || self.n_endogenous > self.d_x {
                    return Err(Error::Invalid(
                        "endogenous design needs 1 <= n_endogenous <= d_x".into(),
                    ));
                }
                if self.d_z_valid() == 0 {
                    return Err(Error::Invalid("no valid instruments left".into()));
                }
                if self.n_questioned_exogenous > self.d_z_valid() {
                    return Err(Error::Invalid(
                        "cannot question more exogenous instruments than exist".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// True coefficient vector `(1, -1, 0, ...)`.
    pub fn beta_star(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.d_x];
        b[0] = 1.0;
        if self.d_x > 1 {
            b[1] = -1.0;
        }
        b
    }

    /// Covariance of the structural error with first-stage error `m`
    /// (alternating sign, magnitude `(1 - pi_star) / 5`).
    fn rho(&self, m: usize) -> f64 {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        sign * (1.0 - self.pi_star) / 5.0
    }

    /// True moment shifts `theta* = E[Z U(beta*)]` per instrument; nonzero
    /// only for the appended regressor copies. Heteroskedasticity scales
    /// them by `E|Z_1|`.
    pub fn theta_star(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.d_z];
        let het_factor = if self.heteroskedastic {
            (2.0 / std::f64::consts::PI).sqrt()
        } else {
            1.0
        };
        for m in 0..self.n_endogenous {
            t[self.d_z_valid() + m] = self.rho(m) * het_factor;
        }
        t
    }

    /// Instruments whose exogeneity is questioned (endogenous design): the
    /// appended copies plus the trailing `n_questioned_exogenous` valid
    /// ones.
    pub fn questioned_instruments(&self) -> Vec<usize> {
        let valid = self.d_z_valid();
        let mut q: Vec<usize> = (valid - self.n_questioned_exogenous..valid).collect();
        q.extend(valid..self.d_z);
        q
    }

    pub fn known_exogenous(&self) -> Vec<usize> {
        let questioned = self.questioned_instruments();
        (0..self.d_z).filter(|l| !questioned.contains(l)).collect()
    }
}

/// Draws one sample from the design.
pub fn dgp(design: &Design, rng: &mut Rng) -> Result<Sample> {
    design.validate()?;
    let (n, d_x) = (design.n, design.d_x);
    let d_z_valid = design.d_z_valid();
    let beta = design.beta_star();

    // Factor of the (1 + d_x)-dimensional error covariance; spectral
    // factorization tolerates the boundary pi_star = 1 (singular case).
    let dim = 1 + d_x;
    let mut omega = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    omega[(0, 0)] = 1.0;
    for j in 1..dim {
        omega[(j, j)] = 1.0 - design.pi_star;
        omega[(0, j)] = design.rho(j - 1);
        omega[(j, 0)] = omega[(0, j)];
    }
    let eig = nalgebra::SymmetricEigen::new(omega);
    let factor = &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));

    let sqrt_pi = design.pi_star.sqrt();
    let mut y = nalgebra::DVector::zeros(n);
    let mut x = nalgebra::DMatrix::zeros(n, d_x);
    let mut z = nalgebra::DMatrix::zeros(n, design.d_z);

    for i in 0..n {
        for l in 0..d_z_valid {
            z[(i, l)] = rng.normal();
        }
        let xi = nalgebra::DVector::from_fn(dim, |_, _| rng.normal());
        let errs = &factor * xi;
        let eps = errs[0];
        let u = if design.heteroskedastic {
            z[(i, 0)].abs() * eps
        } else {
            eps
        };

        match design.kind {
            DesignKind::Invalid => {
                // First regressor loads on the final two instruments only;
                // the rest are exact instrument copies.
                let dz = design.d_z;
                x[(i, 0)] = sqrt_pi / 2.0 * z[(i, dz - 2)] - sqrt_pi / 2.0 * z[(i, dz - 1)]
                    + errs[1];
                for k in 1..d_x {
                    x[(i, k)] = z[(i, k - 1)];
                }
            }
            _ => {
                for k in 0..d_x {
                    let drive = if k < d_z_valid { sqrt_pi * z[(i, k)] } else { 0.0 };
                    x[(i, k)] = drive + errs[k + 1];
                }
            }
        }
        for m in 0..design.n_endogenous {
            z[(i, d_z_valid + m)] = x[(i, m)];
        }
        y[i] = (0..d_x).map(|k| x[(i, k)] * beta[k]).sum::<f64>() + u;
    }
    Sample::new(y, x, z)
}

/// Confidence-set construction under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Sniv(SnivClass),
    ArSet,
    ArInterval,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Sniv(SnivClass::One) => "sniv-class1".into(),
            Method::Sniv(SnivClass::Two) => "sniv-class2".into(),
            Method::Sniv(SnivClass::Three) => "sniv-class3".into(),
            Method::Sniv(SnivClass::Four) => "sniv-class4".into(),
            Method::ArSet => "ar".into(),
            Method::ArInterval => "ar-interval".into(),
        }
    }
}

/// Full experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub design: Design,
    pub method: Method,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    /// Support certificate on the questioned regressors (all of them when
    /// set); required for the invalid-instruments design.
    pub s: Option<usize>,
    /// Support certificate on the questioned instruments (endogenous
    /// design); defaults to the number of appended copies.
    pub s_tilde: Option<usize>,
    pub ball: f64,
    pub hierarchy: HierarchyOptions,
    /// Envelope direction budget (at least `2 * point_dim` is used).
    pub directions: usize,
    pub workers: usize,
    pub membership_tol: f64,
    pub bootstrap_draws: usize,
}

impl ExperimentConfig {
    pub fn new(design: Design, method: Method) -> Self {
        ExperimentConfig {
            design,
            method,
            alpha: 0.05,
            replications: 100,
            seed: 0,
            s: None,
            s_tilde: None,
            ball: 1000.0,
            hierarchy: HierarchyOptions::default(),
            directions: 16,
            workers: 0,
            membership_tol: 1e-9,
            bootstrap_draws: 2000,
        }
    }
}

/// One replication's record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepRecord {
    pub failed: bool,
    pub cover_exact: bool,
    pub cover_envelope: bool,
    /// Widths of the reported coordinates; infinite when a side failed or
    /// hit the ball.
    pub widths: Vec<f64>,
    pub certified_fraction: f64,
    pub mean_seconds: f64,
    pub detected_any: Option<bool>,
    pub detected_all: Option<bool>,
}

/// Aggregated experiment results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub design: String,
    pub method: String,
    pub n: usize,
    pub d_x: usize,
    pub d_z: usize,
    pub replications: usize,
    pub failures: usize,
    /// Mean width per reported coordinate, over replications with finite
    /// width.
    pub widths: Vec<f64>,
    pub unbounded: Vec<usize>,
    pub cover_exact: f64,
    /// Binomial Monte-Carlo standard error of `cover_exact`.
    pub cover_exact_se: f64,
    pub cover_envelope: f64,
    pub exact_fraction: f64,
    pub mean_seconds_per_solve: f64,
    pub theta_detect: Option<f64>,
    pub theta_both: Option<f64>,
    pub per_rep: Vec<RepRecord>,
}

fn failed_record(n_widths: usize) -> RepRecord {
    RepRecord {
        failed: true,
        cover_exact: false,
        cover_envelope: false,
        widths: vec![f64::INFINITY; n_widths],
        certified_fraction: 0.0,
        mean_seconds: 0.0,
        detected_any: None,
        detected_all: None,
    }
}

fn build_set(cfg: &ExperimentConfig, sample: &Sample, rng: &mut Rng) -> Result<SemialgebraicSet> {
    match cfg.method {
        Method::ArSet => encode_ar(sample, cfg.alpha, sample.d_x(), cfg.ball),
        Method::ArInterval => encode_ar(sample, cfg.alpha, 1, cfg.ball),
        Method::Sniv(class) => {
            let tables = cross_moments(sample);
            let mut spec = ClassSpec::new(class, cfg.alpha);
            spec.bootstrap_draws = cfg.bootstrap_draws;
            let r_n = match class {
                SnivClass::Four => {
                    let seed = rng.next_u64();
                    bootstrap_radius(sample, cfg.alpha, cfg.bootstrap_draws, seed, 1)?
                }
                _ => radius(class, cfg.alpha, sample.d_z(), sample.n())?,
            };
            let mut enc = SnivConfig::new(spec, cfg.ball);
            if let Some(s) = cfg.s {
                enc.beta_sparsity = Some(((0..sample.d_x()).collect(), s));
            }
            if cfg.design.kind == DesignKind::Endogenous {
                enc.endogenous = Some(EndogenousConfig {
                    known_exogenous: cfg.design.known_exogenous(),
                    s_tilde: cfg.s_tilde.unwrap_or(cfg.design.n_endogenous),
                });
            }
            encode_sniv(&tables, r_n, &enc)
        }
    }
}

fn widths_from_envelope(env: &Envelope, coords: usize) -> Vec<f64> {
    (0..coords)
        .map(|k| {
            let lo = &env.records[2 * k];
            let hi = &env.records[2 * k + 1];
            match (lo.bound, hi.bound) {
                (Some(l), Some(u))
                    if !lo.failed && !hi.failed && !lo.ball_active && !hi.ball_active =>
                {
                    -u - l
                }
                _ => f64::INFINITY,
            }
        })
        .collect()
}

/// Runs the experiment: per replication, draw data, encode, sweep, record
/// membership of the truth in the exact set and in the envelope, widths,
/// timing and certification; aggregate with Monte-Carlo standard errors.
/// Per-replication failures are counted, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    cfg.design.validate()?;
    if cfg.replications == 0 {
        return Err(Error::Invalid("need at least one replication".into()));
    }
    if cfg.design.kind == DesignKind::Invalid && cfg.s.is_none() {
        if let Method::Sniv(_) = cfg.method {
            return Err(Error::Invalid(
                "the invalid-instruments design needs a support certificate s".into(),
            ));
        }
    }
    if let Method::Sniv(SnivClass::Four) = cfg.method {
        if cfg.design.kind == DesignKind::Endogenous {
            return Err(Error::Invalid(
                "the bootstrap class cannot run on the endogenous design".into(),
            ));
        }
    }

    let beta_star = cfg.design.beta_star();
    let theta_star = cfg.design.theta_star();
    let reported = cfg.design.d_x.min(5);

    // Point dimension depends on the encoded layout; probe it once.
    let point_dim = match cfg.method {
        Method::Sniv(_) if cfg.design.kind == DesignKind::Endogenous => {
            cfg.design.d_x + cfg.design.questioned_instruments().len()
        }
        _ => cfg.design.d_x,
    };
    let directions = direction_grid(point_dim, cfg.directions.max(2 * point_dim), cfg.seed);

    let records = par::run_indexed(cfg.replications, cfg.workers, |r| {
        let mut rng = Rng::substream(cfg.seed, r as u64);
        let sample = match dgp(&cfg.design, &mut rng) {
            Ok(s) => s,
            Err(_) => return failed_record(reported),
        };
        let set = match build_set(cfg, &sample, &mut rng) {
            Ok(s) => s,
            Err(_) => return failed_record(reported),
        };

        let mut truth: Vec<f64> = beta_star.clone();
        for &l in &set.layout.theta {
            truth.push(theta_star[l]);
        }

        let sweep_opts = SweepOptions {
            hierarchy: cfg.hierarchy,
            workers: 1,
            membership_tol: cfg.membership_tol,
        };
        let env = sweep(&set, &directions, &sweep_opts);
        let (cover_exact, cover_envelope) = match cfg.method {
            // The sub-vector test guarantees coverage for the projection
            // interval of the first coordinate, not for the full vector in
            // its (smaller-critical-value) acceptance region.
            Method::ArInterval => {
                let lo = &env.records[0];
                let hi = &env.records[1];
                let tol = cfg.membership_tol;
                let lo_ok = lo.failed
                    || lo.ball_active
                    || lo.bound.is_none_or(|b| b - tol <= beta_star[0]);
                let hi_ok = hi.failed
                    || hi.ball_active
                    || hi.bound.is_none_or(|b| beta_star[0] <= -b + tol);
                let covered = !env.empty && lo_ok && hi_ok;
                (covered, covered)
            }
            _ => (
                set.contains(&truth, cfg.membership_tol),
                env.contains(&truth, sweep_opts.membership_tol),
            ),
        };

        let (detected_any, detected_all) = if cfg.design.kind == DesignKind::Endogenous
            && matches!(cfg.method, Method::Sniv(_))
        {
            let nulled: Vec<f64> = truth
                .iter()
                .enumerate()
                .map(|(i, &v)| if i >= cfg.design.d_x { 0.0 } else { v })
                .collect();
            let any = !set.contains(&nulled, cfg.membership_tol);
            let mut all = true;
            for (t, &l) in set.layout.theta.iter().enumerate() {
                if theta_star[l] != 0.0 {
                    let mut single = truth.clone();
                    single[cfg.design.d_x + t] = 0.0;
                    if set.contains(&single, cfg.membership_tol) {
                        all = false;
                    }
                }
            }
            (Some(any), Some(all))
        } else {
            (None, None)
        };

        RepRecord {
            failed: false,
            cover_exact,
            cover_envelope,
            widths: widths_from_envelope(&env, reported),
            certified_fraction: env.certified_fraction(),
            mean_seconds: env.mean_seconds_per_direction(),
            detected_any,
            detected_all,
        }
    });

    let ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed).collect();
    let n_ok = ok.len().max(1) as f64;
    let cover_exact = ok.iter().filter(|r| r.cover_exact).count() as f64 / n_ok;
    let cover_envelope = ok.iter().filter(|r| r.cover_envelope).count() as f64 / n_ok;
    let mut widths = vec![0.0; reported];
    let mut unbounded = vec![0usize; reported];
    for k in 0..reported {
        let finite: Vec<f64> = ok
            .iter()
            .map(|r| r.widths[k])
            .filter(|w| w.is_finite())
            .collect();
        unbounded[k] = ok.len() - finite.len();
        widths[k] = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
    }
    let detect_rate = |get: fn(&RepRecord) -> Option<bool>| -> Option<f64> {
        let flags: Vec<bool> = ok.iter().filter_map(|r| get(r)).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64)
        }
    };

    Ok(RunMetrics {
        design: cfg.design.name().to_string(),
        method: cfg.method.label(),
        n: cfg.design.n,
        d_x: cfg.design.d_x,
        d_z: cfg.design.d_z,
        replications: cfg.replications,
        failures: records.len() - ok.len(),
        widths,
        unbounded,
        cover_exact,
        cover_exact_se: (cover_exact * (1.0 - cover_exact) / n_ok).sqrt(),
        cover_envelope,
        exact_fraction: ok.iter().map(|r| r.certified_fraction).sum::<f64>() / n_ok,
        mean_seconds_per_solve: ok.iter().map(|r| r.mean_seconds).sum::<f64>() / n_ok,
        theta_detect: detect_rate(|r| r.detected_any),
        theta_both: detect_rate(|r| r.detected_all),
        per_rep: records,
    })
}

/// Table output format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

const TABLE_COLUMNS: [&str; 17] = [
    "design",
    "method",
    "n",
    "d_x",
    "d_z",
    "reps",
    "failures",
    "width_b1",
    "width_b2",
    "width_b3",
    "width_b4",
    "width_b5",
    "cover",
    "cover_envelope",
    "exact",
    "time_s",
    "theta_detect",
];

/// Renders one row per experiment, columns mirroring the usual report
/// layout: per-coordinate widths, coverage with the envelope coverage
/// alongside, exactness fraction, timing, detection rates.
pub fn emit_table(metrics: &[RunMetrics], format: TableFormat) -> String {
    let fmt_w = |m: &RunMetrics, k: usize| -> String {
        match m.widths.get(k) {
            Some(w) if w.is_finite() => format!("{w:.4}"),
            Some(_) => "inf".to_string(),
            None => String::new(),
        }
    };
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.design.clone(),
                m.method.clone(),
                m.n.to_string(),
                m.d_x.to_string(),
                m.d_z.to_string(),
                m.replications.to_string(),
                m.failures.to_string(),
                fmt_w(m, 0),
                fmt_w(m, 1),
                fmt_w(m, 2),
                fmt_w(m, 3),
                fmt_w(m, 4),
                format!("{:.4}", m.cover_exact),
                format!("{:.4}", m.cover_envelope),
                format!("{:.4}", m.exact_fraction),
                format!("{:.4}", m.mean_seconds_per_solve),
                match (m.theta_detect, m.theta_both) {
                    (Some(d), Some(b)) => format!("{d:.3} ({b:.3})"),
                    _ => String::new(),
                },
            ]
        })
        .collect();
    match format {
        TableFormat::Csv => {
            let mut out = TABLE_COLUMNS.join(",");
            out.push('\n');
            for row in rows {
                // Detection carries a parenthesized pair; quote it.
                let quoted: Vec<String> = row
                    .iter()
                    .map(|f| {
                        if f.contains(',') || f.contains(' ') {
                            format!("\"{f}\"")
                        } else {
                            f.clone()
                        }
                    })
                    .collect();
                out.push_str(&quoted.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Markdown => {
            let mut out = format!("| {} |\n", TABLE_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", " --- |".repeat(TABLE_COLUMNS.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
    }
}
