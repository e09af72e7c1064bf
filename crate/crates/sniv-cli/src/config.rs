//! Run configuration: JSON file merged with command-line overrides, then
//! turned into an encoded set ready for sweeping.

use std::path::PathBuf;

use serde::Deserialize;

use sniv::encode::{encode_ar, encode_custom, encode_sniv, EndogenousConfig, SnivConfig};
use sniv::hierarchy::{HierarchyOptions, SemialgebraicSet};
use sniv::poly::Polynomial;
use sniv::sdp::SdpTolerances;
use sniv::stats::{bootstrap_radius, cross_moments, radius, ClassSpec, Sample, SnivClass};
use sniv::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    #[serde(rename = "sniv-class1")]
    #[value(name = "sniv-class1")]
    SnivClass1,
    #[serde(rename = "sniv-class2")]
    #[value(name = "sniv-class2")]
    SnivClass2,
    #[serde(rename = "sniv-class3")]
    #[value(name = "sniv-class3")]
    SnivClass3,
    #[serde(rename = "sniv-class4")]
    #[value(name = "sniv-class4")]
    SnivClass4,
    Ar,
    ArSubvector,
    Custom,
}

impl MethodName {
    pub fn label(&self) -> &'static str {
        match self {
            MethodName::SnivClass1 => "sniv-class1",
            MethodName::SnivClass2 => "sniv-class2",
            MethodName::SnivClass3 => "sniv-class3",
            MethodName::SnivClass4 => "sniv-class4",
            MethodName::Ar => "ar",
            MethodName::ArSubvector => "ar-subvector",
            MethodName::Custom => "custom",
        }
    }

    pub fn sniv_class(&self) -> Option<SnivClass> {
        match self {
            MethodName::SnivClass1 => Some(SnivClass::One),
            MethodName::SnivClass2 => Some(SnivClass::Two),
            MethodName::SnivClass3 => Some(SnivClass::Three),
            MethodName::SnivClass4 => Some(SnivClass::Four),
            _ => None,
        }
    }
}

/// JSON configuration; every field has a default and can be overridden on
/// the command line. Column references (`s_q`, `known_exogenous`,
/// `theta_signs`) are 1-based, matching the CSV header names.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: MethodName,
    pub alpha: f64,
    /// Support certificate on questioned regressors.
    pub s: Option<usize>,
    /// Questioned regressor columns (1-based); defaults to all when `s` set.
    pub s_q: Option<Vec<usize>>,
    /// Support certificate on questioned instruments.
    pub s_tilde: Option<usize>,
    /// Instrument columns known exogenous (1-based). Setting this (or
    /// `s_tilde`) switches on the endogenous-instrument encoding.
    pub known_exogenous: Option<Vec<usize>>,
    /// Sign restrictions: instrument column (1-based) to +1 / -1.
    pub theta_signs: Vec<(usize, i8)>,
    pub ball: f64,
    pub ball_escalations: usize,
    pub hbar: usize,
    pub start_level: usize,
    pub directions: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub rank_tol: f64,
    pub max_iterations: usize,
    pub membership_tol: f64,
    pub bootstrap_draws: usize,
    /// Sub-vector dimension for `ar-subvector`.
    pub d_x1: usize,
    /// Polynomial files (text format) for the custom method.
    pub p_hat: Option<PathBuf>,
    pub q_hat: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: MethodName::SnivClass1,
            alpha: 0.05,
            s: None,
            s_q: None,
            s_tilde: None,
            known_exogenous: None,
            theta_signs: Vec::new(),
            ball: 1000.0,
            ball_escalations: 3,
            hbar: 2,
            start_level: 1,
            directions: 64,
            seed: 0,
            workers: None,
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            rank_tol: 1e-6,
            max_iterations: 200,
            membership_tol: 1e-9,
            bootstrap_draws: 2000,
            d_x1: 1,
            p_hat: None,
            q_hat: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &PathBuf) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.hbar < 1 {
            return Err(Error::Invalid("hbar must be at least 1".into()));
        }
        if self.ball <= 0.0 {
            return Err(Error::Invalid("ball must be positive".into()));
        }
        Ok(())
    }

    /// Effective worker count: flag/config, else `SNIV_WORKERS`, else the
    /// default pool.
    pub fn effective_workers(&self) -> usize {
        self.workers
            .or_else(|| {
                std::env::var("SNIV_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(0)
    }

    pub fn hierarchy_options(&self) -> HierarchyOptions {
        HierarchyOptions {
            h_max: self.hbar,
            h_start: self.start_level,
            tolerances: SdpTolerances {
                gap: self.gap_tol,
                feas: self.feas_tol,
                psd: self.feas_tol,
                max_iterations: self.max_iterations,
                rank_rel_tol: self.rank_tol,
            },
            ball_escalations: self.ball_escalations,
        }
    }

    /// Builds the configured confidence set from the data. Returns the set
    /// and the radius used (if the method has one).
    pub fn build_set(&self, sample: &Sample) -> Result<(SemialgebraicSet, Option<f64>), Error> {
        self.validate()?;
        let one_based = |v: &[usize], bound: usize, what: &str| -> Result<Vec<usize>, Error> {
            v.iter()
                .map(|&i| {
                    if i >= 1 && i <= bound {
                        Ok(i - 1)
                    } else {
                        Err(Error::Dimension(format!(
                            "{what} column {i} out of range 1..={bound}"
                        )))
                    }
                })
                .collect()
        };
        match self.method {
            MethodName::Ar => {
                let set = encode_ar(sample, self.alpha, sample.d_x(), self.ball)?;
                Ok((set, None))
            }
            MethodName::ArSubvector => {
                let set = encode_ar(sample, self.alpha, self.d_x1, self.ball)?;
                Ok((set, None))
            }
            MethodName::Custom => {
                let (p_path, q_path) = match (&self.p_hat, &self.q_hat) {
                    (Some(p), Some(q)) => (p, q),
                    _ => {
                        return Err(Error::Invalid(
                            "custom method needs p_hat and q_hat polynomial files".into(),
                        ))
                    }
                };
                let p = Polynomial::from_text(&std::fs::read_to_string(p_path)?, sample.d_x())?;
                let q = Polynomial::from_text(&std::fs::read_to_string(q_path)?, sample.d_x())?;
                let set = encode_custom(sample.d_x(), &p, &q, self.ball)?;
                Ok((set, None))
            }
            _ => {
                let class = self.method.sniv_class().expect("sniv method");
                let mut spec = ClassSpec::new(class, self.alpha);
                spec.bootstrap_draws = self.bootstrap_draws;
                spec.seed = self.seed;
                let r_n = match class {
                    SnivClass::Four => bootstrap_radius(
                        sample,
                        self.alpha,
                        self.bootstrap_draws,
                        self.seed,
                        self.effective_workers(),
                    )?,
                    _ => radius(class, self.alpha, sample.d_z(), sample.n())?,
                };
                let mut enc = SnivConfig::new(spec, self.ball);
                if let Some(s) = self.s {
                    let s_q = match &self.s_q {
                        Some(cols) => one_based(cols, sample.d_x(), "regressor")?,
                        None => (0..sample.d_x()).collect(),
                    };
                    enc.beta_sparsity = Some((s_q, s));
                }
                if self.known_exogenous.is_some() || self.s_tilde.is_some() {
                    let known = match &self.known_exogenous {
                        Some(cols) => one_based(cols, sample.d_z(), "instrument")?,
                        None => Vec::new(),
                    };
                    let free = sample.d_z() - known.len();
                    enc.endogenous = Some(EndogenousConfig {
                        known_exogenous: known,
                        s_tilde: self.s_tilde.unwrap_or(free),
                    });
                }
                for &(col, sign) in &self.theta_signs {
                    let idx = one_based(&[col], sample.d_z(), "instrument")?[0];
                    enc.theta_signs.push((idx, sign));
                }
                let tables = cross_moments(sample);
                let set = encode_sniv(&tables, r_n, &enc)?;
                Ok((set, Some(r_n)))
            }
        }
    }
}
