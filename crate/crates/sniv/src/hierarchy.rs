//! Semialgebraic optimization through a hierarchy of semidefinite
//! relaxations.
//!
//! A [`SemialgebraicSet`] holds polynomial inequalities (`>= 0`) and
//! equalities (`= 0`) over a layout of named variable groups, plus a
//! redundant ball bound on the model coordinates. [`relax`] builds the
//! level-`h` moment relaxation: one moment-matrix block, one localizing
//! block per inequality, equalities imposed as linear constraints on the
//! pseudo-moments, and the normalization `mu_0 = 1`. [`run`] escalates the
//! level until the rank test certifies an exact bound or the budget is hit,
//! and grows the ball when it binds at the reported solution.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::poly::{basis_size, monomials_up_to, riesz, LinearForm, MatrixStructure, Polynomial};
use crate::sdp::{self, numeric_rank, SdpProblem, SdpStatus, SdpTolerances};

/// Placement of the model coordinates and indicator variables inside the
/// decision vector. Order: beta block, theta block, zeta block, eta block.
///
/// Only free theta coordinates appear (instruments pinned exogenous are
/// substituted out by the encoders), so the decision vector never carries
/// structurally-zero variables.
#[derive(Clone, Debug)]
pub struct VarLayout {
    /// Number of regressor coordinates.
    pub d_x: usize,
    /// Instrument index behind each free theta coordinate.
    pub theta: Vec<usize>,
    /// Regressor index guarded by each zeta indicator.
    pub zeta: Vec<usize>,
    /// Position into `theta` guarded by each eta indicator.
    pub eta: Vec<usize>,
    /// Per point coordinate (beta then theta): solver value = factor *
    /// original value. Identity when no column standardization was applied.
    pub point_to_solver: Vec<f64>,
}

impl VarLayout {
    /// Layout with `d_x` regressors, no theta/indicator variables, no
    /// rescaling.
    pub fn plain(d_x: usize) -> Self {
        VarLayout {
            d_x,
            theta: Vec::new(),
            zeta: Vec::new(),
            eta: Vec::new(),
            point_to_solver: vec![1.0; d_x],
        }
    }

    /// Dimension of the full decision vector.
    pub fn d_delta(&self) -> usize {
        self.d_x + self.theta.len() + self.zeta.len() + self.eta.len()
    }

    /// Dimension of the model-coordinate part (beta then free theta).
    pub fn point_dim(&self) -> usize {
        self.d_x + self.theta.len()
    }

    /// Linear objective `u . (beta, theta)` over the decision vector, with
    /// `u` given in original coordinates. Bounds computed against this
    /// objective need no back-transformation.
    pub fn direction_objective(&self, u: &[f64]) -> Polynomial {
        assert_eq!(u.len(), self.point_dim());
        let d = self.d_delta();
        let mut p = Polynomial::zero(d);
        for (i, &ui) in u.iter().enumerate() {
            p.add_term(crate::poly::Monomial::var(d, i), ui / self.point_to_solver[i]);
        }
        p
    }

    /// Maps an original-coordinate point into solver coordinates and
    /// appends the exact support indicators for the zeta/eta variables.
    pub fn lift_point(&self, point: &[f64]) -> Vec<f64> {
        assert_eq!(point.len(), self.point_dim());
        let mut delta = Vec::with_capacity(self.d_delta());
        for (i, &p) in point.iter().enumerate() {
            delta.push(p * self.point_to_solver[i]);
        }
        for &k in &self.zeta {
            delta.push(if point[k] != 0.0 { 1.0 } else { 0.0 });
        }
        for &t in &self.eta {
            delta.push(if point[self.d_x + t] != 0.0 { 1.0 } else { 0.0 });
        }
        delta
    }
}

/// A set `{delta : g_j(delta) >= 0, q_i(delta) = 0}` together with the
/// redundant ball constraint `B - sum of squared model coordinates >= 0`.
#[derive(Clone, Debug)]
pub struct SemialgebraicSet {
    pub layout: VarLayout,
    pub inequalities: Vec<Polynomial>,
    pub equalities: Vec<Polynomial>,
    /// Squared ball radius `B` applied to the beta/theta solver coordinates.
    pub ball_radius_sq: f64,
}

impl SemialgebraicSet {
    pub fn d_delta(&self) -> usize {
        self.layout.d_delta()
    }

    /// `B - |beta|^2 - |theta|^2` in solver coordinates.
    pub fn ball_poly(&self) -> Polynomial {
        let d = self.d_delta();
        let mut p = Polynomial::constant(d, self.ball_radius_sq);
        for i in 0..self.layout.point_dim() {
            let mut sq = Polynomial::var(d, i).square();
            sq.scale(-1.0);
            p.add_scaled(&sq, 1.0);
        }
        p
    }

    pub fn with_ball(&self, ball_radius_sq: f64) -> Self {
        let mut s = self.clone();
        s.ball_radius_sq = ball_radius_sq;
        s
    }

    /// Direct membership check of an original-coordinate point, with
    /// indicators chosen as the exact support of the point.
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        let delta = self.layout.lift_point(point);
        let ineq_ok = self
            .inequalities
            .iter()
            .chain(std::iter::once(&self.ball_poly()))
            .all(|g| g.eval(&delta) >= -tol);
        let eq_ok = self.equalities.iter().all(|q| q.eval(&delta).abs() <= tol);
        ineq_ok && eq_ok
    }
}

/// Options for [`run`].
#[derive(Clone, Copy, Debug)]
pub struct HierarchyOptions {
    /// Largest relaxation level tried.
    pub h_max: usize,
    /// First level tried (raised automatically to the minimal feasible one).
    pub h_start: usize,
    pub tolerances: SdpTolerances,
    /// Number of tenfold ball enlargements allowed when the ball binds.
    pub ball_escalations: usize,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions {
            h_max: 2,
            h_start: 1,
            tolerances: SdpTolerances::default(),
            ball_escalations: 3,
        }
    }
}

/// Outcome of one level of the hierarchy.
#[derive(Clone, Debug)]
pub struct LevelOutcome {
    pub h: usize,
    pub status: SdpStatus,
    /// Valid lower bound extracted from this level, when one exists.
    pub bound: Option<f64>,
    pub certified: bool,
    pub seconds: f64,
}

/// Result of the escalation loop for one objective.
#[derive(Clone, Debug)]
pub struct HierarchyResult {
    pub levels: Vec<LevelOutcome>,
    /// Best valid lower bound on the infimum; `None` only on total failure.
    pub bound: Option<f64>,
    /// Rank condition held: the bound equals the true infimum.
    pub certified: bool,
    pub certified_level: Option<usize>,
    /// The relaxation is infeasible, so the set itself is empty.
    pub empty: bool,
    /// Ball constraint still binding after all enlargements: the set is
    /// unbounded in this direction (up to the final ball).
    pub ball_active: bool,
    /// Ball actually used for the reported bound.
    pub ball_used: f64,
    pub seconds: f64,
}

fn ceil_half(d: usize) -> usize {
    d.div_ceil(2)
}

/// Smallest level at which every constraint and the objective fit.
pub fn minimal_level(set: &SemialgebraicSet, objective: &Polynomial) -> usize {
    let mut h = 1;
    for g in set.inequalities.iter().chain(std::iter::once(&set.ball_poly())) {
        h = h.max(ceil_half(g.degree()));
    }
    for q in &set.equalities {
        h = h.max(ceil_half(q.degree()));
    }
    h.max(ceil_half(objective.degree()))
}

fn normalized(p: &Polynomial) -> Polynomial {
    let max = p.terms().map(|(_, c)| c.abs()).fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return p.clone();
    }
    let mut q = p.clone();
    q.scale(1.0 / max);
    q
}

/// Scale factors mapping solver coordinates onto the unit ball: model
/// coordinates shrink by the ball radius, indicator coordinates stay.
fn ball_scales(set: &SemialgebraicSet) -> Vec<f64> {
    let d = set.d_delta();
    let r = set.ball_radius_sq.sqrt();
    let mut scales = vec![1.0; d];
    for s in scales.iter_mut().take(set.layout.point_dim()) {
        *s = r;
    }
    scales
}

/// Quotients a PSD block by the kernel the equality ideal forces on it.
///
/// Every polynomial `q * m` of degree at most the block's basis degree is a
/// kernel vector of the assembled matrix on the feasible affine subspace
/// (each entry of `M w` is a moment the linear equality constraints pin to
/// zero), so `M >= 0` is exactly equivalent to `Q' M Q >= 0` over the
/// complement basis `Q`. Without the quotient the relaxation has no strictly
/// feasible point and the interior-point solve breaks down near the optimum.
/// Returns `None` when the whole block vanishes on the variety.
fn quotient_block(
    block: &MatrixStructure,
    basis_degree: usize,
    kernel_gens: &[Polynomial],
    d: usize,
) -> Option<MatrixStructure> {
    use crate::poly::grlex_index;
    let dim = block.dim();
    let mut kernel_cols: Vec<Vec<f64>> = Vec::new();
    for q in kernel_gens {
        if q.degree() > basis_degree {
            continue;
        }
        for m in monomials_up_to(d, basis_degree - q.degree()) {
            let mut col = vec![0.0; dim];
            for (mono, c) in q.terms() {
                col[grlex_index(&mono.mul(&m))] += c;
            }
            kernel_cols.push(col);
        }
    }
    if kernel_cols.is_empty() {
        return Some(block.clone());
    }
    let k = nalgebra::DMatrix::from_fn(dim, kernel_cols.len(), |i, j| kernel_cols[j][i]);
    let gram = &k * k.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = lam_max * 1e-10 + 1e-300;
    let keep: Vec<usize> = (0..dim).filter(|&j| eig.eigenvalues[j] <= tol).collect();
    if keep.is_empty() {
        return None;
    }
    if keep.len() == dim {
        return Some(block.clone());
    }
    let q = nalgebra::DMatrix::from_fn(dim, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    let nd = keep.len();
    // Accumulate the upper triangle and mirror it so the structure is
    // symmetric exactly, not just up to summation order.
    let mut upper: Vec<std::collections::BTreeMap<usize, f64>> =
        vec![std::collections::BTreeMap::new(); nd * nd];
    for i in 0..dim {
        for j in 0..dim {
            for &(idx, coef) in &block.cell(i, j).0 {
                for a in 0..nd {
                    let wa = q[(i, a)] * coef;
                    if wa == 0.0 {
                        continue;
                    }
                    for b in a..nd {
                        let v = wa * q[(j, b)];
                        if v != 0.0 {
                            *upper[a * nd + b].entry(idx).or_insert(0.0) += v;
                        }
                    }
                }
            }
        }
    }
    let mut forms: Vec<LinearForm> = vec![LinearForm::default(); nd * nd];
    for a in 0..nd {
        for b in a..nd {
            let form = LinearForm::new(upper[a * nd + b].iter().map(|(&i, &c)| (i, c)).collect());
            forms[b * nd + a] = form.clone();
            forms[a * nd + b] = form;
        }
    }
    Some(MatrixStructure::from_cells(nd, forms))
}

/// Builds the level-`h` semidefinite relaxation of minimizing `objective`
/// over `set`. Variables are internally rescaled onto the unit ball so the
/// pseudo-moments stay well conditioned; polynomial values, and hence the
/// optimal objective, are unchanged by that substitution.
pub fn relax(set: &SemialgebraicSet, objective: &Polynomial, h: usize) -> Result<SdpProblem> {
    let d = set.d_delta();
    if objective.nvars() != d {
        return Err(Error::Dimension(format!(
            "objective over {} variables, set over {d}",
            objective.nvars()
        )));
    }
    if set.ball_radius_sq <= 0.0 {
        return Err(Error::Invalid("ball radius must be positive".into()));
    }
    let needed = minimal_level(set, objective);
    if h < needed {
        return Err(Error::LevelTooSmall { h, needed });
    }

    let scales = ball_scales(set);
    let obj = objective.rescale_vars(&scales);
    let eq_scaled: Vec<Polynomial> = set
        .equalities
        .iter()
        .map(|q| normalized(&q.rescale_vars(&scales)))
        .collect();

    let mut blocks = Vec::new();
    if let Some(b) = quotient_block(&MatrixStructure::moment(d, h), h, &eq_scaled, d) {
        blocks.push(b);
    }
    for g in set.inequalities.iter().chain(std::iter::once(&set.ball_poly())) {
        let gs = normalized(&g.rescale_vars(&scales));
        let e_j = ceil_half(gs.degree());
        let h_g = h - e_j;
        if let Some(b) = quotient_block(&MatrixStructure::localizing(&gs, d, h_g), h_g, &eq_scaled, d)
        {
            blocks.push(b);
        }
    }

    let mut equalities = Vec::new();
    for qs in &eq_scaled {
        let room = 2 * h - qs.degree();
        for m in monomials_up_to(d, room) {
            let mut shifted = Polynomial::zero(d);
            for (mono, c) in qs.terms() {
                shifted.add_term(mono.mul(&m), c);
            }
            equalities.push(riesz(&shifted, 2 * h)?);
        }
    }

    Ok(SdpProblem {
        n_moments: basis_size(d, 2 * h),
        objective: riesz(&obj, 2 * h)?,
        blocks,
        equalities,
        // Unit-ball rescaling plus the indicator boxes keep every feasible
        // pseudo-moment in [-1, 1].
        entry_bound: Some(1.0),
    })
}

/// Riesz value of the (rescaled, normalized) ball polynomial at `mu`; the
/// ball is considered active when this is near zero.
fn ball_slack(set: &SemialgebraicSet, mu: &[f64]) -> f64 {
    let scales = ball_scales(set);
    let ball = normalized(&set.ball_poly().rescale_vars(&scales));
    riesz(&ball, 2).map(|f| f.apply(mu)).unwrap_or(f64::NAN)
}

fn run_fixed_ball(
    set: &SemialgebraicSet,
    objective: &Polynomial,
    opts: &HierarchyOptions,
) -> Result<(HierarchyResult, bool)> {
    let d = set.d_delta();
    let h_min = minimal_level(set, objective);
    let start = opts.h_start.max(h_min);
    if opts.h_max < start {
        return Err(Error::LevelTooSmall {
            h: opts.h_max,
            needed: start,
        });
    }

    let e_flat = set
        .inequalities
        .iter()
        .chain(std::iter::once(&set.ball_poly()))
        .map(|g| ceil_half(g.degree()))
        .max()
        .unwrap_or(1);

    let t0 = Instant::now();
    let mut levels: Vec<LevelOutcome> = Vec::new();
    let mut best: Option<f64> = None;
    let mut ball_was_active = false;

    for h in start..=opts.h_max {
        let lt = Instant::now();
        let problem = relax(set, objective, h)?;
        let sol = sdp::solve(&problem, &opts.tolerances)?;
        let seconds = lt.elapsed().as_secs_f64();

        match sol.status {
            SdpStatus::PrimalInfeasible => {
                levels.push(LevelOutcome {
                    h,
                    status: sol.status,
                    bound: None,
                    certified: false,
                    seconds,
                });
                return Ok((
                    HierarchyResult {
                        levels,
                        bound: None,
                        certified: false,
                        certified_level: None,
                        empty: true,
                        ball_active: false,
                        ball_used: set.ball_radius_sq,
                        seconds: t0.elapsed().as_secs_f64(),
                    },
                    false,
                ));
            }
            SdpStatus::Optimal => {
                let bound = sol.dual_bound.min(sol.objective_value);
                best = Some(best.map_or(bound, |b: f64| b.max(bound)));
                ball_was_active = ball_slack(set, &sol.mu_star) <= 1e-2;
                let certified = if h >= e_flat {
                    let high = MatrixStructure::moment(d, h).assemble(&sol.mu_star);
                    let low = MatrixStructure::moment(d, h - e_flat).assemble(&sol.mu_star);
                    numeric_rank(&high, opts.tolerances.rank_rel_tol)
                        == numeric_rank(&low, opts.tolerances.rank_rel_tol)
                } else {
                    false
                };
                levels.push(LevelOutcome {
                    h,
                    status: sol.status,
                    bound: Some(bound),
                    certified,
                    seconds,
                });
                if certified {
                    return Ok((
                        HierarchyResult {
                            levels,
                            bound: best,
                            certified: true,
                            certified_level: Some(h),
                            empty: false,
                            ball_active: ball_was_active,
                            ball_used: set.ball_radius_sq,
                            seconds: t0.elapsed().as_secs_f64(),
                        },
                        ball_was_active,
                    ));
                }
            }
            SdpStatus::MaxIterations | SdpStatus::DualInfeasible => {
                // No usable optimum at this level; a finite dual bound is
                // still a valid lower bound worth keeping.
                let bound = if sol.dual_bound.is_finite() {
                    Some(sol.dual_bound)
                } else {
                    None
                };
                if let Some(b) = bound {
                    best = Some(best.map_or(b, |x: f64| x.max(b)));
                }
                levels.push(LevelOutcome {
                    h,
                    status: sol.status,
                    bound,
                    certified: false,
                    seconds,
                });
            }
        }
    }

    Ok((
        HierarchyResult {
            levels,
            bound: best,
            certified: false,
            certified_level: None,
            empty: false,
            ball_active: ball_was_active,
            ball_used: set.ball_radius_sq,
            seconds: t0.elapsed().as_secs_f64(),
        },
        ball_was_active,
    ))
}

/// Escalation loop: runs the hierarchy, enlarging the ball tenfold (up to
/// the configured number of times) whenever it binds at the solution, and
/// flags the direction as ball-limited if it still binds at the cap.
pub fn run(
    set: &SemialgebraicSet,
    objective: &Polynomial,
    opts: &HierarchyOptions,
) -> Result<HierarchyResult> {
    let mut ball = set.ball_radius_sq;
    let mut last: Option<HierarchyResult> = None;
    for _ in 0..=opts.ball_escalations {
        let trial = set.with_ball(ball);
        let (result, active) = run_fixed_ball(&trial, objective, opts)?;
        if result.empty || !active {
            return Ok(result);
        }
        last = Some(result);
        ball *= 10.0;
    }
    Ok(last.expect("at least one escalation ran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn interval_set(d: usize, lo: f64, hi: f64, coord: usize) -> SemialgebraicSet {
        // (x - lo)(hi - x) >= 0
        let x = Polynomial::var(d, coord);
        let mut a = x.clone();
        a.add_term(Monomial::constant(d), -lo);
        let mut b = Polynomial::constant(d, hi);
        b.add_scaled(&x, -1.0);
        SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![a.mul(&b)],
            equalities: vec![],
            ball_radius_sq: 100.0,
        }
    }

    #[test]
    fn relax_shapes_match_counting() {
        // Ten degree-2 inequalities in ten variables at h = 2: moment block
        // C(12,2) = 66, localizing blocks C(11,1) = 11 each.
        let d = 10;
        let mut ineqs = Vec::new();
        for i in 0..10 {
            let mut g = Polynomial::constant(d, 1.0);
            let mut sq = Polynomial::var(d, i).square();
            sq.scale(-1.0);
            g.add_scaled(&sq, 1.0);
            ineqs.push(g);
        }
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: ineqs,
            equalities: vec![],
            ball_radius_sq: 1000.0,
        };
        let problem = relax(&set, &Polynomial::var(d, 0), 2).unwrap();
        assert_eq!(problem.blocks[0].dim(), 66);
        for b in &problem.blocks[1..] {
            assert_eq!(b.dim(), 11);
        }
        assert_eq!(problem.n_moments, basis_size(10, 4));
    }

    #[test]
    fn degree_two_at_level_one_gives_scalar_localizers() {
        let set = interval_set(1, -1.0, 1.0, 0);
        let problem = relax(&set, &Polynomial::var(1, 0), 1).unwrap();
        // moment block 2x2, then two 1x1 localizers (constraint + ball)
        assert_eq!(problem.blocks[0].dim(), 2);
        assert_eq!(problem.blocks[1].dim(), 1);
        assert_eq!(problem.blocks[2].dim(), 1);
    }

    #[test]
    fn two_point_set_relaxes_to_zero() {
        // {x (1 - x) = 0}, minimize x: relaxation of a two-point set.
        let d = 1;
        let x = Polynomial::var(d, 0);
        let mut q = x.clone();
        q.add_scaled(&x.square(), -1.0);
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![],
            equalities: vec![q],
            ball_radius_sq: 100.0,
        };
        let problem = relax(&set, &x, 1).unwrap();
        let sol = sdp::solve(&problem, &SdpTolerances::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-6, "{}", sol.objective_value);
    }

    #[test]
    fn quartic_needs_level_two_and_certifies() {
        // {1 - x^4 >= 0}, minimize x: certified optimum -1 at h = 2.
        // Brute-force grid oracle over [-1, 1].
        let oracle = (0..=20_000)
            .map(|i| -1.0 + i as f64 / 10_000.0)
            .filter(|x| 1.0 - x.powi(4) >= 0.0)
            .fold(f64::INFINITY, f64::min);
        let d = 1;
        let mut g = Polynomial::constant(d, 1.0);
        g.add_term(Monomial(vec![4]), -1.0);
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![g],
            equalities: vec![],
            ball_radius_sq: 100.0,
        };
        let f = Polynomial::var(d, 0);
        assert!(matches!(
            relax(&set, &f, 1),
            Err(Error::LevelTooSmall { h: 1, needed: 2 })
        ));
        let result = run(&set, &f, &HierarchyOptions::default()).unwrap();
        assert!(result.certified, "{result:?}");
        assert_eq!(result.certified_level, Some(2));
        assert!((result.bound.unwrap() - oracle).abs() < 1e-5);
    }

    #[test]
    fn interval_minimum_certified() {
        let set = interval_set(1, -0.75, 2.0, 0);
        let f = Polynomial::var(1, 0);
        let result = run(&set, &f, &HierarchyOptions::default()).unwrap();
        assert!(result.certified);
        assert!((result.bound.unwrap() + 0.75).abs() < 1e-6);
        assert!(!result.ball_active);
    }

    #[test]
    fn bounds_monotone_in_level() {
        // Disconnected feasible set where low levels are loose.
        let d = 2;
        let x = Polynomial::var(d, 0);
        let y = Polynomial::var(d, 1);
        // (x^2 - 1)(4 - x^2) >= 0 : x in [-2, -1] union [1, 2]
        let mut x2m1 = x.square();
        x2m1.add_term(Monomial::constant(d), -1.0);
        let mut fourmx2 = Polynomial::constant(d, 4.0);
        fourmx2.add_scaled(&x.square(), -1.0);
        let gx = x2m1.mul(&fourmx2);
        // y in [0, 1]
        let mut ylim = y.clone();
        ylim.add_scaled(&y.square(), -1.0);
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![gx, ylim],
            equalities: vec![],
            ball_radius_sq: 100.0,
        };
        let mut f = x.clone();
        f.add_scaled(&y, 0.25);
        let opts = HierarchyOptions {
            h_max: 3,
            ..Default::default()
        };
        let result = run(&set, &f, &opts).unwrap();
        let bounds: Vec<f64> = result.levels.iter().filter_map(|l| l.bound).collect();
        for w in bounds.windows(2) {
            assert!(w[0] <= w[1] + 2e-6, "{bounds:?}");
        }
        // Soundness at sampled feasible points.
        for point in [[-2.0, 0.0], [-1.0, 1.0], [1.5, 0.5]] {
            assert!(set.contains(&point, 1e-9));
            let fval = f.eval(&set.layout.lift_point(&point));
            for b in &bounds {
                assert!(fval >= b - 2e-6);
            }
        }
    }

    #[test]
    fn unbounded_direction_flags_ball() {
        // No constraints except the ball: the infimum of x is the ball edge.
        let set = SemialgebraicSet {
            layout: VarLayout::plain(2),
            inequalities: vec![],
            equalities: vec![],
            ball_radius_sq: 100.0,
        };
        let f = Polynomial::var(2, 0);
        let opts = HierarchyOptions {
            ball_escalations: 1,
            ..Default::default()
        };
        let result = run(&set, &f, &opts).unwrap();
        assert!(result.ball_active);
        // Final ball is 10x the initial one.
        assert!((result.ball_used - 1000.0).abs() < 1e-9);
        assert!((result.bound.unwrap() + result.ball_used.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn inactive_ball_insensitive_to_doubling() {
        let set = interval_set(1, -1.0, 1.0, 0);
        let f = Polynomial::var(1, 0);
        let a = run(&set, &f, &HierarchyOptions::default()).unwrap();
        let b = run(&set.with_ball(200.0), &f, &HierarchyOptions::default()).unwrap();
        assert!(!a.ball_active && !b.ball_active);
        assert!((a.bound.unwrap() - b.bound.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn empty_set_detected() {
        // x >= 2 intersected with x <= -2 (degree-1 inequalities).
        let d = 1;
        let x = Polynomial::var(d, 0);
        let mut lo = x.clone();
        lo.add_term(Monomial::constant(d), -2.0);
        let mut hi = Polynomial::constant(d, -2.0);
        hi.add_scaled(&x, -1.0);
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![lo, hi],
            equalities: vec![],
            ball_radius_sq: 100.0,
        };
        let result = run(&set, &x, &HierarchyOptions::default()).unwrap();
        assert!(result.empty);
        assert!(result.bound.is_none());
    }

    #[test]
    fn contains_respects_indicator_counting() {
        // One zeta indicator guarding beta_0, plus counting s = 0: only
        // points with beta_0 = 0 belong.
        let layout = VarLayout {
            d_x: 1,
            theta: vec![],
            zeta: vec![0],
            eta: vec![],
            point_to_solver: vec![1.0],
        };
        let d = 2; // beta_0, zeta_0
        let zeta = Polynomial::var(d, 1);
        let beta = Polynomial::var(d, 0);
        let mut idem = zeta.clone();
        idem.add_scaled(&zeta.square(), -1.0);
        let mut attach = beta.clone();
        attach.add_scaled(&beta.mul(&zeta), -1.0);
        let mut count = Polynomial::constant(d, 0.0);
        count.add_scaled(&zeta, -1.0);
        let set = SemialgebraicSet {
            layout,
            inequalities: vec![count],
            equalities: vec![idem, attach],
            ball_radius_sq: 100.0,
        };
        assert!(set.contains(&[0.0], 1e-9));
        assert!(!set.contains(&[0.5], 1e-9));
    }
}
