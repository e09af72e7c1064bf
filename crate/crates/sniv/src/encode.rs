//! Encoders turning confidence sets into [`SemialgebraicSet`] values.
//!
//! The self-normalized moment condition `|D (E_n[Z U(beta)] - theta)|_inf <=
//! r` squares into one degree-2 polynomial inequality per instrument;
//! support-counting restrictions on `beta` and `theta` become indicator
//! variables with idempotency and attachment equalities plus one counting
//! inequality. The Anderson-Rubin non-rejection region and any user-supplied
//! `p <= q` test inequality go through the same machinery.
//!
//! Regressor and instrument columns are rescaled to unit sample second
//! moment before encoding; the variable layout records the scaling, and
//! every consumer (objectives, membership checks, reported bounds) works in
//! original coordinates. Membership is invariant to instrument scaling, and
//! regressor scaling is a reparametrization undone on output.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::hierarchy::{SemialgebraicSet, VarLayout};
use crate::poly::{Monomial, Polynomial};
use crate::stats::{chisq_quantile, ClassSpec, MomentTables, Sample, SnivClass};

/// Endogenous-instrument handling: which instruments are known exogenous,
/// and how many of the rest may truly be endogenous.
#[derive(Clone, Debug)]
pub struct EndogenousConfig {
    /// Instrument indices with `theta_l = 0` imposed.
    pub known_exogenous: Vec<usize>,
    /// Upper bound on the number of nonzero `theta` entries.
    pub s_tilde: usize,
}

/// Configuration of the self-normalized confidence-set encoder.
#[derive(Clone, Debug)]
pub struct SnivConfig {
    pub spec: ClassSpec,
    /// Questioned regressor indices and the support certificate `s`.
    pub beta_sparsity: Option<(Vec<usize>, usize)>,
    /// Potentially endogenous instruments; absent means `theta = 0`.
    pub endogenous: Option<EndogenousConfig>,
    /// Squared ball radius (solver coordinates).
    pub ball: f64,
    /// Known signs for free theta coordinates: (instrument index, +1/-1).
    pub theta_signs: Vec<(usize, i8)>,
    /// Extra parameter-space inequalities over the original (beta, theta)
    /// coordinates, each `>= 0`.
    pub extra_inequalities: Vec<Polynomial>,
    /// Adds redundant indicator identities up to this degree (0 = minimal).
    pub extra_indicator_degree: usize,
    /// Column standardization toggle; on by default.
    pub standardize: bool,
}

impl SnivConfig {
    pub fn new(spec: ClassSpec, ball: f64) -> Self {
        SnivConfig {
            spec,
            beta_sparsity: None,
            endogenous: None,
            ball,
            theta_signs: Vec::new(),
            extra_inequalities: Vec::new(),
            extra_indicator_degree: 0,
            standardize: true,
        }
    }
}

fn check_indices(label: &str, idx: &[usize], bound: usize) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for &i in idx {
        if i >= bound {
            return Err(Error::Dimension(format!(
                "{label} index {i} out of range (< {bound})"
            )));
        }
        if !seen.insert(i) {
            return Err(Error::Invalid(format!("{label} index {i} repeated")));
        }
    }
    Ok(())
}

/// Lifts a polynomial over the model coordinates into the full decision
/// vector, translating original coordinates into solver coordinates.
fn embed_point_poly(p: &Polynomial, layout: &VarLayout) -> Polynomial {
    let d = layout.d_delta();
    let pd = layout.point_dim();
    let mut out = Polynomial::zero(d);
    for (m, c) in p.terms() {
        let mut exps = vec![0u8; d];
        exps[..pd].copy_from_slice(&m.0);
        let scale: f64 = m
            .0
            .iter()
            .zip(&layout.point_to_solver)
            .map(|(&e, &s)| s.powi(-(e as i32)))
            .product();
        out.add_term(Monomial(exps), c * scale);
    }
    out
}

struct StandardizedTables {
    t: MomentTables,
    cx: Vec<f64>,
    cz: Vec<f64>,
}

fn standardize_tables(tables: &MomentTables, enabled: bool) -> StandardizedTables {
    let (d_x, d_z) = (tables.d_x, tables.d_z);
    let cx: Vec<f64> = (0..d_x)
        .map(|k| {
            let c = tables.xx[(k, k)].sqrt();
            if enabled && c > 1e-150 {
                c
            } else {
                1.0
            }
        })
        .collect();
    let cz: Vec<f64> = (0..d_z)
        .map(|l| {
            let c = tables.z2[l].sqrt();
            if enabled && c > 1e-150 {
                c
            } else {
                1.0
            }
        })
        .collect();
    let mut t = tables.clone();
    for l in 0..d_z {
        t.zy[l] /= cz[l];
        t.z2y2[l] /= cz[l] * cz[l];
        t.z2[l] /= cz[l] * cz[l];
        for k in 0..d_x {
            t.zx[(l, k)] /= cz[l] * cx[k];
            t.z2yx[(l, k)] /= cz[l] * cz[l] * cx[k];
            for j in 0..d_x {
                t.z2xx[l][(j, k)] /= cz[l] * cz[l] * cx[j] * cx[k];
            }
        }
    }
    for k in 0..d_x {
        t.yx[k] /= cx[k];
        for j in 0..d_x {
            t.xx[(j, k)] /= cx[j] * cx[k];
        }
    }
    StandardizedTables { t, cx, cz }
}

/// Affine polynomial `E_n[Z_l U(beta)]` over the decision vector.
fn e_zu_poly(t: &MomentTables, l: usize, d: usize) -> Polynomial {
    let mut p = Polynomial::constant(d, t.zy[l]);
    for k in 0..t.d_x {
        p.add_term(Monomial::var(d, k), -t.zx[(l, k)]);
    }
    p
}

/// Quadratic polynomial `E_n[Z_l^2 U(beta)^2]` over the decision vector.
fn e_z2u2_poly(t: &MomentTables, l: usize, d: usize) -> Polynomial {
    let mut p = Polynomial::constant(d, t.z2y2[l]);
    for k in 0..t.d_x {
        p.add_term(Monomial::var(d, k), -2.0 * t.z2yx[(l, k)]);
        for j in 0..t.d_x {
            p.add_term(
                Monomial::var(d, j).mul(&Monomial::var(d, k)),
                t.z2xx[l][(j, k)],
            );
        }
    }
    p
}

/// Quadratic polynomial `E_n[U(beta)^2]` over the decision vector.
fn e_u2_poly(t: &MomentTables, d: usize) -> Polynomial {
    let mut p = Polynomial::constant(d, t.y2);
    for k in 0..t.d_x {
        p.add_term(Monomial::var(d, k), -2.0 * t.yx[k]);
        for j in 0..t.d_x {
            p.add_term(Monomial::var(d, j).mul(&Monomial::var(d, k)), t.xx[(j, k)]);
        }
    }
    p
}

/// Indicator block: idempotency and attachment equalities, box inequalities,
/// and the counting inequality `s - sum >= 0`. `targets` pairs each
/// indicator variable with the variable it guards.
fn indicator_block(
    d: usize,
    targets: &[(usize, usize)],
    s: usize,
    extra_degree: usize,
    inequalities: &mut Vec<Polynomial>,
    equalities: &mut Vec<Polynomial>,
) {
    let mut count = Polynomial::constant(d, s as f64);
    for &(ind, guarded) in targets {
        let zeta = Polynomial::var(d, ind);
        let target = Polynomial::var(d, guarded);
        let mut one_minus = Polynomial::constant(d, 1.0);
        one_minus.add_scaled(&zeta, -1.0);
        // zeta (1 - zeta) = 0
        equalities.push(zeta.mul(&one_minus));
        // (1 - zeta) target = 0
        equalities.push(one_minus.mul(&target));
        // box helpers strengthen the first relaxation level
        inequalities.push(zeta.clone());
        inequalities.push(one_minus.clone());
        count.add_scaled(&zeta, -1.0);
        for deg in 3..=extra_degree {
            for a in 1..deg {
                let b = deg - a;
                let mut p = zeta.clone();
                for _ in 1..a {
                    p = p.mul(&zeta);
                }
                for _ in 0..b {
                    p = p.mul(&one_minus);
                }
                equalities.push(p);
            }
            let mut p = one_minus.clone();
            for _ in 2..deg {
                p = p.mul(&one_minus);
            }
            equalities.push(p.mul(&target));
        }
    }
    inequalities.push(count);
}

/// Encodes the self-normalized confidence set for the class in
/// `cfg.spec` at radius `r_n` (classes 1-3: [`crate::stats::radius`];
/// class 4: [`crate::stats::bootstrap_radius`]).
pub fn encode_sniv(tables: &MomentTables, r_n: f64, cfg: &SnivConfig) -> Result<SemialgebraicSet> {
    cfg.spec.validate()?;
    if r_n <= 0.0 {
        return Err(Error::Invalid(format!("radius must be positive, got {r_n}")));
    }
    if cfg.ball <= 0.0 {
        return Err(Error::Invalid("ball must be positive".into()));
    }
    let (d_x, d_z) = (tables.d_x, tables.d_z);

    let theta_instruments: Vec<usize> = match &cfg.endogenous {
        None => Vec::new(),
        Some(endo) => {
            if cfg.spec.class == SnivClass::Four {
                return Err(Error::Invalid(
                    "the bootstrap class cannot be combined with potentially endogenous \
                     instruments"
                        .into(),
                ));
            }
            check_indices("known-exogenous", &endo.known_exogenous, d_z)?;
            let free: Vec<usize> = (0..d_z)
                .filter(|l| !endo.known_exogenous.contains(l))
                .collect();
            if free.is_empty() {
                return Err(Error::Invalid(
                    "every instrument is known exogenous; drop the endogenous config".into(),
                ));
            }
            if endo.s_tilde == 0 || endo.s_tilde > free.len() {
                return Err(Error::Invalid(format!(
                    "s_tilde must lie in 1..={}, got {}",
                    free.len(),
                    endo.s_tilde
                )));
            }
            free
        }
    };

    let (zeta_targets, s_beta) = match &cfg.beta_sparsity {
        None => (Vec::new(), 0),
        Some((s_q, s)) => {
            check_indices("questioned-regressor", s_q, d_x)?;
            if s_q.is_empty() || *s == 0 || *s > s_q.len() {
                return Err(Error::Invalid(format!(
                    "certificate s must lie in 1..={}, got {s}",
                    s_q.len()
                )));
            }
            (s_q.clone(), *s)
        }
    };

    let std = standardize_tables(tables, cfg.standardize);
    let n_theta = theta_instruments.len();
    let layout = VarLayout {
        d_x,
        theta: theta_instruments.clone(),
        zeta: zeta_targets.clone(),
        eta: (0..n_theta).collect(),
        point_to_solver: {
            let mut v: Vec<f64> = std.cx.clone();
            v.extend(theta_instruments.iter().map(|&l| 1.0 / std.cz[l]));
            v
        },
    };
    // Without the endogenous config there are no eta indicators either.
    let layout = VarLayout {
        eta: if n_theta == 0 { Vec::new() } else { layout.eta },
        ..layout
    };
    let d = layout.d_delta();

    let theta_coord: Vec<Option<usize>> = {
        let mut map = vec![None; d_z];
        for (t, &l) in theta_instruments.iter().enumerate() {
            map[l] = Some(d_x + t);
        }
        map
    };

    let mut inequalities = Vec::new();
    let mut equalities = Vec::new();

    for l in 0..d_z {
        let a = e_zu_poly(&std.t, l, d);
        let poly = match cfg.spec.class {
            SnivClass::Four => {
                // r^2 E[Z^2] E[U^2] - E[Z U]^2 >= 0
                let mut p = e_u2_poly(&std.t, d);
                p.scale(r_n * r_n * std.t.z2[l]);
                p.add_scaled(&a.square(), -1.0);
                p
            }
            _ => {
                // r^2 E[(Z U - theta)^2] - (E[Z U] - theta)^2 >= 0
                let mut centered = a.clone();
                let mut second = e_z2u2_poly(&std.t, l, d);
                if let Some(tc) = theta_coord[l] {
                    let theta = Polynomial::var(d, tc);
                    centered.add_scaled(&theta, -1.0);
                    second.add_scaled(&a.mul(&theta), -2.0);
                    second.add_scaled(&theta.square(), 1.0);
                }
                let mut p = second;
                p.scale(r_n * r_n);
                p.add_scaled(&centered.square(), -1.0);
                p
            }
        };
        inequalities.push(poly);
    }

    if !zeta_targets.is_empty() {
        let base = d_x + n_theta;
        let targets: Vec<(usize, usize)> = zeta_targets
            .iter()
            .enumerate()
            .map(|(q, &k)| (base + q, k))
            .collect();
        indicator_block(
            d,
            &targets,
            s_beta,
            cfg.extra_indicator_degree,
            &mut inequalities,
            &mut equalities,
        );
    }
    if let Some(endo) = &cfg.endogenous {
        let base = d_x + n_theta + zeta_targets.len();
        let targets: Vec<(usize, usize)> = (0..n_theta).map(|t| (base + t, d_x + t)).collect();
        indicator_block(
            d,
            &targets,
            endo.s_tilde,
            cfg.extra_indicator_degree,
            &mut inequalities,
            &mut equalities,
        );
    }

    for &(l, sign) in &cfg.theta_signs {
        let tc = theta_coord
            .get(l)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Invalid(format!("instrument {l} has no free theta")))?;
        let mut p = Polynomial::var(d, tc);
        p.scale(sign as f64);
        inequalities.push(p);
    }

    for extra in &cfg.extra_inequalities {
        if extra.nvars() != layout.point_dim() {
            return Err(Error::Dimension(format!(
                "extra inequality over {} variables, expected {}",
                extra.nvars(),
                layout.point_dim()
            )));
        }
        inequalities.push(embed_point_poly(extra, &layout));
    }

    Ok(SemialgebraicSet {
        layout,
        inequalities,
        equalities,
        ball_radius_sq: cfg.ball,
    })
}

/// Encodes the Anderson-Rubin non-rejection region as a single degree-2
/// inequality. `d_x1` is the dimension of the sub-vector of interest:
/// `d_x1 = d_x` gives the full-vector region; smaller values adjust the
/// critical value to the sub-vector degrees of freedom.
pub fn encode_ar(sample: &Sample, alpha: f64, d_x1: usize, ball: f64) -> Result<SemialgebraicSet> {
    let (n, d_x, d_z) = (sample.n(), sample.d_x(), sample.d_z());
    if d_z >= n {
        return Err(Error::Invalid(format!(
            "the AR statistic is undefined for d_Z = {d_z} >= n = {n}"
        )));
    }
    if d_x > d_z {
        return Err(Error::Invalid(format!(
            "AR needs at least as many instruments as regressors (d_Z = {d_z} < d_X = {d_x})"
        )));
    }
    if d_x1 == 0 || d_x1 > d_x {
        return Err(Error::Invalid(format!(
            "sub-vector dimension must lie in 1..={d_x}, got {d_x1}"
        )));
    }
    if ball <= 0.0 {
        return Err(Error::Invalid("ball must be positive".into()));
    }

    let nf = n as f64;
    let cx: Vec<f64> = (0..d_x)
        .map(|k| {
            let c = (sample.x().column(k).norm_squared() / nf).sqrt();
            if c > 1e-150 {
                c
            } else {
                1.0
            }
        })
        .collect();
    let mut w = DMatrix::zeros(n, 1 + d_x);
    w.set_column(0, sample.y());
    for k in 0..d_x {
        w.set_column(k + 1, &(sample.x().column(k) / cx[k]));
    }

    let ztz = sample.z().transpose() * sample.z();
    let chol = Cholesky::new(ztz).ok_or_else(|| Error::Singular("Z'Z".into()))?;
    // Condition guard via the Cholesky diagonal.
    {
        let diag = chol.l().diagonal();
        let (dmax, dmin) = (diag.amax(), diag.min());
        if dmin <= 0.0 || (dmax / dmin).powi(2) > 1e12 {
            return Err(Error::Singular(format!(
                "Z'Z condition estimate {:.2e} exceeds 1e12",
                (dmax / dmin).powi(2)
            )));
        }
    }
    let ztw = sample.z().transpose() * &w;
    let proj = chol.solve(&ztw);
    let g = ztw.transpose() * proj; // W' P_Z W
    let h = (w.transpose() * &w - &g) / (nf - d_z as f64); // W'(I - P_Z)W / (n - d_Z)

    let quad = |m: &DMatrix<f64>, d: usize| -> Polynomial {
        // (1, -beta)' M (1, -beta)
        let mut p = Polynomial::constant(d, m[(0, 0)]);
        for k in 0..d_x {
            p.add_term(Monomial::var(d, k), -2.0 * m[(0, k + 1)]);
            for j in 0..d_x {
                p.add_term(
                    Monomial::var(d, j).mul(&Monomial::var(d, k)),
                    m[(j + 1, k + 1)],
                );
            }
        }
        p
    };

    let crit = chisq_quantile(1.0 - alpha, d_z - d_x + d_x1)?;
    let mut ineq = quad(&h, d_x);
    ineq.scale(crit);
    ineq.add_scaled(&quad(&g, d_x), -1.0);

    Ok(SemialgebraicSet {
        layout: VarLayout {
            d_x,
            theta: Vec::new(),
            zeta: Vec::new(),
            eta: Vec::new(),
            point_to_solver: cx,
        },
        inequalities: vec![ineq],
        equalities: vec![],
        ball_radius_sq: ball,
    })
}

/// Encodes a user-supplied test with non-rejection region `p_hat <= q_hat`
/// over `d_x` model coordinates (no rescaling applied).
pub fn encode_custom(
    d_x: usize,
    p_hat: &Polynomial,
    q_hat: &Polynomial,
    ball: f64,
) -> Result<SemialgebraicSet> {
    if p_hat.nvars() != d_x || q_hat.nvars() != d_x {
        return Err(Error::Dimension(format!(
            "polynomials over {} and {} variables, expected {d_x}",
            p_hat.nvars(),
            q_hat.nvars()
        )));
    }
    if ball <= 0.0 {
        return Err(Error::Invalid("ball must be positive".into()));
    }
    let mut ineq = q_hat.clone();
    ineq.add_scaled(p_hat, -1.0);
    Ok(SemialgebraicSet {
        layout: VarLayout::plain(d_x),
        inequalities: vec![ineq],
        equalities: vec![],
        ball_radius_sq: ball,
    })
}

/// Text form of a semialgebraic set: layout, scaling, ball, then each
/// polynomial as `coefficient exponent-vector` lines in graded-lex order.
pub fn write_set(set: &SemialgebraicSet, out: &mut dyn std::io::Write) -> std::io::Result<()> {
    let l = &set.layout;
    write!(out, "layout d_x {}", l.d_x)?;
    write!(out, " theta")?;
    for t in &l.theta {
        write!(out, " {t}")?;
    }
    write!(out, " zeta")?;
    for z in &l.zeta {
        write!(out, " {z}")?;
    }
    write!(out, " eta")?;
    for e in &l.eta {
        write!(out, " {e}")?;
    }
    writeln!(out)?;
    writeln!(
        out,
        "scale {}",
        l.point_to_solver
            .iter()
            .map(|s| format!("{s:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    writeln!(out, "ball {:.17e}", set.ball_radius_sq)?;
    for p in &set.inequalities {
        writeln!(out, "inequality")?;
        write!(out, "{}", p.to_text())?;
    }
    for p in &set.equalities {
        writeln!(out, "equality")?;
        write!(out, "{}", p.to_text())?;
    }
    Ok(())
}

/// Parses the [`write_set`] format.
pub fn parse_set(text: &str) -> Result<SemialgebraicSet> {
    let mut lines = text.lines().peekable();
    let header = loop {
        match lines.next() {
            Some(l) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
            Some(l) => break l.to_string(),
            None => return Err(Error::Parse("empty set description".into())),
        }
    };
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() < 2 || toks[0] != "layout" || toks[1] != "d_x" {
        return Err(Error::Parse("expected `layout d_x ...` header".into()));
    }
    let d_x: usize = toks[2]
        .parse()
        .map_err(|e| Error::Parse(format!("bad d_x: {e}")))?;
    let mut groups: std::collections::HashMap<&str, Vec<usize>> = Default::default();
    let mut current: Option<&str> = None;
    for t in &toks[3..] {
        match *t {
            "theta" | "zeta" | "eta" => {
                current = Some(t);
                groups.entry(t).or_default();
            }
            other => {
                let key = current.ok_or_else(|| Error::Parse("index before group".into()))?;
                groups.get_mut(key).unwrap().push(
                    other
                        .parse()
                        .map_err(|e| Error::Parse(format!("bad index: {e}")))?,
                );
            }
        }
    }
    let scale_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing scale line".into()))?;
    let mut it = scale_line.split_whitespace();
    if it.next() != Some("scale") {
        return Err(Error::Parse("expected `scale ...`".into()));
    }
    let point_to_solver: Vec<f64> = it
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("bad scale: {e}")))?;
    let ball_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing ball line".into()))?;
    let ball: f64 = ball_line
        .strip_prefix("ball ")
        .ok_or_else(|| Error::Parse("expected `ball ...`".into()))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad ball: {e}")))?;

    let layout = VarLayout {
        d_x,
        theta: groups.remove("theta").unwrap_or_default(),
        zeta: groups.remove("zeta").unwrap_or_default(),
        eta: groups.remove("eta").unwrap_or_default(),
        point_to_solver,
    };
    if layout.point_to_solver.len() != layout.point_dim() {
        return Err(Error::Parse(format!(
            "scale carries {} entries, layout needs {}",
            layout.point_to_solver.len(),
            layout.point_dim()
        )));
    }
    let d = layout.d_delta();

    let mut inequalities = Vec::new();
    let mut equalities = Vec::new();
    let mut mode: Option<bool> = None; // true = inequality
    let mut buf = String::new();
    let flush = |mode: Option<bool>,
                 buf: &mut String,
                 ineqs: &mut Vec<Polynomial>,
                 eqs: &mut Vec<Polynomial>|
     -> Result<()> {
        if let Some(is_ineq) = mode {
            let p = Polynomial::from_text(buf, d)?;
            if is_ineq {
                ineqs.push(p);
            } else {
                eqs.push(p);
            }
        }
        buf.clear();
        Ok(())
    };
    for line in lines {
        let trimmed = line.trim();
        if trimmed == "inequality" || trimmed == "equality" {
            flush(mode, &mut buf, &mut inequalities, &mut equalities)?;
            mode = Some(trimmed == "inequality");
        } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
            buf.push_str(trimmed);
            buf.push('\n');
        }
    }
    flush(mode, &mut buf, &mut inequalities, &mut equalities)?;

    Ok(SemialgebraicSet {
        layout,
        inequalities,
        equalities,
        ball_radius_sq: ball,
    })
}
