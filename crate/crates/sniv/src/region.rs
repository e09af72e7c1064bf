//! Support-function sweeps over direction grids and the resulting outer
//! envelopes, projection intervals and membership checks.
//!
//! Each direction `u` contributes the half-space `u . point >= bound` where
//! `bound` is the hierarchy's lower bound on the support problem; the
//! envelope is the intersection over all successful directions. Failed
//! directions contribute nothing, so the envelope stays a valid outer
//! approximation.

use serde::{Deserialize, Serialize};

use crate::dist::normal_quantile;
use crate::error::Result;
use crate::hierarchy::{self, HierarchyOptions, SemialgebraicSet};
use crate::par;
use crate::stats::Rng;

/// Options for [`sweep`] and [`interval`].
#[derive(Clone, Copy, Debug)]
pub struct SweepOptions {
    pub hierarchy: HierarchyOptions,
    /// Worker count: 1 = sequential, 0 = default pool size.
    pub workers: usize,
    /// Slack applied in envelope membership tests.
    pub membership_tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            hierarchy: HierarchyOptions::default(),
            workers: 1,
            membership_tol: 1e-6,
        }
    }
}

/// Per-direction outcome of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionBound {
    pub u: Vec<f64>,
    /// Lower bound on `inf u . point` over the set; `None` when the solve
    /// failed or proved the set empty.
    pub bound: Option<f64>,
    /// Level the bound came from (certified level when certified).
    pub level: Option<usize>,
    pub certified: bool,
    pub ball_active: bool,
    pub empty: bool,
    pub failed: bool,
    pub seconds: f64,
}

/// Outer approximation of the convex envelope: the conjunction of
/// `u . point >= bound` over all successful directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub point_dim: usize,
    pub records: Vec<DirectionBound>,
    /// Some direction proved the relaxation infeasible: the set is empty.
    pub empty: bool,
    pub seconds: f64,
}

impl Envelope {
    /// Membership in the envelope (original coordinates).
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        if self.empty {
            return false;
        }
        self.records.iter().all(|r| match r.bound {
            Some(b) if !r.failed => {
                let val: f64 = r.u.iter().zip(point).map(|(u, p)| u * p).sum();
                val >= b - tol
            }
            _ => true,
        })
    }

    /// Fraction of non-failed directions whose bound is rank-certified.
    pub fn certified_fraction(&self) -> f64 {
        let solved: Vec<_> = self.records.iter().filter(|r| !r.failed).collect();
        if solved.is_empty() {
            return 0.0;
        }
        solved.iter().filter(|r| r.certified).count() as f64 / solved.len() as f64
    }

    pub fn mean_seconds_per_direction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.seconds).sum::<f64>() / self.records.len() as f64
    }
}

/// First `n` primes, for the low-discrepancy bases.
fn primes(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut candidate = 2usize;
    while out.len() < n {
        if !out.iter().any(|&p| candidate % p == 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Unit directions: the signed coordinate axes first (`+e_k` at `2k`,
/// `-e_k` at `2k + 1`), then quasi-uniform sphere points from a seeded,
/// rotated low-discrepancy sequence pushed through the normal quantile and
/// normalized. Deterministic under `seed`; at least `2 * dim` directions
/// are always returned.
pub fn direction_grid(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim >= 1);
    let mut dirs = Vec::with_capacity(count.max(2 * dim));
    for k in 0..dim {
        let mut plus = vec![0.0; dim];
        plus[k] = 1.0;
        dirs.push(plus);
        let mut minus = vec![0.0; dim];
        minus[k] = -1.0;
        dirs.push(minus);
    }
    let bases = primes(dim);
    let mut rng = Rng::substream(seed, 0x9e37_79b9);
    let shift: Vec<f64> = (0..dim).map(|_| rng.uniform()).collect();
    let mut index = 1usize;
    while dirs.len() < count {
        let mut v = Vec::with_capacity(dim);
        let mut norm_sq = 0.0;
        for k in 0..dim {
            let mut u = halton(index, bases[k]) + shift[k];
            u -= u.floor();
            // keep strictly inside (0, 1)
            u = u.clamp(1e-12, 1.0 - 1e-12);
            let g = normal_quantile(u).expect("u in (0,1)");
            norm_sq += g * g;
            v.push(g);
        }
        index += 1;
        if norm_sq < 1e-12 {
            continue;
        }
        let norm = norm_sq.sqrt();
        for x in &mut v {
            *x /= norm;
        }
        dirs.push(v);
    }
    dirs
}

/// Runs the hierarchy for every direction; results are independent of the
/// worker count and of iteration order.
pub fn sweep(set: &SemialgebraicSet, directions: &[Vec<f64>], opts: &SweepOptions) -> Envelope {
    let t0 = std::time::Instant::now();
    let pd = set.layout.point_dim();
    let records = par::run_indexed(directions.len(), opts.workers, |i| {
        let u = &directions[i];
        assert_eq!(u.len(), pd, "direction dimension mismatch");
        let objective = set.layout.direction_objective(u);
        let lt = std::time::Instant::now();
        match hierarchy::run(set, &objective, &opts.hierarchy) {
            Ok(res) => DirectionBound {
                u: u.clone(),
                bound: res.bound,
                level: res
                    .certified_level
                    .or_else(|| res.levels.last().map(|l| l.h)),
                certified: res.certified,
                ball_active: res.ball_active,
                empty: res.empty,
                failed: false,
                seconds: lt.elapsed().as_secs_f64(),
            },
            Err(_) => DirectionBound {
                u: u.clone(),
                bound: None,
                level: None,
                certified: false,
                ball_active: false,
                empty: false,
                failed: true,
                seconds: lt.elapsed().as_secs_f64(),
            },
        }
    });
    let empty = records.iter().any(|r| r.empty);
    Envelope {
        point_dim: pd,
        records,
        empty,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Projection interval for one model coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateInterval {
    pub coordinate: usize,
    /// `None` when the set is empty or the side is ball-limited.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub certified_lower: bool,
    pub certified_upper: bool,
    pub unbounded_lower: bool,
    pub unbounded_upper: bool,
    pub empty: bool,
}

impl CoordinateInterval {
    pub fn width(&self) -> f64 {
        match (self.lower, self.upper) {
            _ if self.empty => 0.0,
            (Some(l), Some(u)) if !self.unbounded_lower && !self.unbounded_upper => u - l,
            _ => f64::INFINITY,
        }
    }
}

/// Projection interval via the two signed coordinate directions:
/// `lower = inf e_k . point`, `upper = -inf (-e_k) . point`.
pub fn interval(
    set: &SemialgebraicSet,
    coordinate: usize,
    opts: &SweepOptions,
) -> Result<CoordinateInterval> {
    let pd = set.layout.point_dim();
    if coordinate >= pd {
        return Err(crate::Error::Dimension(format!(
            "coordinate {coordinate} out of range (point dimension {pd})"
        )));
    }
    let mut plus = vec![0.0; pd];
    plus[coordinate] = 1.0;
    let mut minus = vec![0.0; pd];
    minus[coordinate] = -1.0;
    let env = sweep(set, &[plus, minus], opts);
    if env.empty {
        return Ok(CoordinateInterval {
            coordinate,
            lower: None,
            upper: None,
            certified_lower: false,
            certified_upper: false,
            unbounded_lower: false,
            unbounded_upper: false,
            empty: true,
        });
    }
    let lo = &env.records[0];
    let hi = &env.records[1];
    Ok(CoordinateInterval {
        coordinate,
        lower: lo.bound,
        upper: hi.bound.map(|b| -b),
        certified_lower: lo.certified,
        certified_upper: hi.certified,
        unbounded_lower: lo.ball_active || lo.failed,
        unbounded_upper: hi.ball_active || hi.failed,
        empty: false,
    })
}

/// Direct membership check of the underlying set (not the envelope), with
/// indicator variables set to the exact support of the point.
pub fn contains(set: &SemialgebraicSet, point: &[f64], tol: f64) -> bool {
    set.contains(point, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::VarLayout;
    use crate::poly::{Monomial, Polynomial};

    #[test]
    fn one_dimensional_grid_is_signed_units() {
        let dirs = direction_grid(1, 2, 7);
        assert_eq!(dirs, vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn axes_always_present_even_when_count_small() {
        let dirs = direction_grid(2, 3, 7);
        assert_eq!(dirs.len(), 4);
        assert!(dirs.contains(&vec![1.0, 0.0]));
        assert!(dirs.contains(&vec![-1.0, 0.0]));
        assert!(dirs.contains(&vec![0.0, 1.0]));
        assert!(dirs.contains(&vec![0.0, -1.0]));
    }

    #[test]
    fn grid_is_unit_norm_deterministic_and_spread() {
        let dirs = direction_grid(3, 1000, 99);
        assert_eq!(dirs.len(), 1000);
        for d in &dirs {
            let norm: f64 = d.iter().map(|x| x * x).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        // determinism
        assert_eq!(dirs, direction_grid(3, 1000, 99));
        // distinct directions: pairwise dot strictly below 1
        for i in 0..dirs.len() {
            for j in (i + 1)..dirs.len() {
                let dot: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                assert!(dot < 1.0 - 1e-7, "duplicate directions {i} {j}");
            }
        }
    }

    fn singleton_set(point: &[f64]) -> SemialgebraicSet {
        let d = point.len();
        let mut equalities = Vec::new();
        for (k, &v) in point.iter().enumerate() {
            let mut q = Polynomial::var(d, k);
            q.add_term(Monomial::constant(d), -v);
            equalities.push(q);
        }
        SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![],
            equalities,
            ball_radius_sq: 100.0,
        }
    }

    #[test]
    fn singleton_sweep_recovers_support_values() {
        let point = [0.8, -0.4];
        let set = singleton_set(&point);
        let dirs = direction_grid(2, 12, 5);
        let env = sweep(&set, &dirs, &SweepOptions::default());
        assert!(!env.empty);
        for r in &env.records {
            assert!(!r.failed);
            let expect: f64 = r.u.iter().zip(&point).map(|(u, p)| u * p).sum();
            assert!(
                (r.bound.unwrap() - expect).abs() < 1e-5,
                "direction {:?}: bound {} vs {}",
                r.u,
                r.bound.unwrap(),
                expect
            );
        }
        assert!(env.contains(&point, 1e-6));
    }

    #[test]
    fn singleton_interval_is_degenerate() {
        let set = singleton_set(&[1.0, 2.0]);
        let iv = interval(&set, 0, &SweepOptions::default()).unwrap();
        assert!((iv.lower.unwrap() - 1.0).abs() < 1e-5);
        assert!((iv.upper.unwrap() - 1.0).abs() < 1e-5);
        assert!(iv.width() < 1e-4);
    }

    #[test]
    fn workers_do_not_change_results() {
        let set = singleton_set(&[0.3, 0.9]);
        let dirs = direction_grid(2, 16, 3);
        let seq = sweep(&set, &dirs, &SweepOptions { workers: 1, ..Default::default() });
        let par8 = sweep(&set, &dirs, &SweepOptions { workers: 8, ..Default::default() });
        assert_eq!(seq.records.len(), par8.records.len());
        for (a, b) in seq.records.iter().zip(&par8.records) {
            assert_eq!(a.bound, b.bound);
            assert_eq!(a.certified, b.certified);
            assert_eq!(a.ball_active, b.ball_active);
        }
    }

    #[test]
    fn feasible_points_inside_envelope_and_monotone_in_directions() {
        // Box [-1, 1]^2 through quadratic inequalities.
        let d = 2;
        let mut ineqs = Vec::new();
        for k in 0..d {
            let mut g = Polynomial::constant(d, 1.0);
            let mut sq = Polynomial::var(d, k).square();
            sq.scale(-1.0);
            g.add_scaled(&sq, 1.0);
            ineqs.push(g);
        }
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: ineqs,
            equalities: vec![],
            ball_radius_sq: 100.0,
        };
        let few = direction_grid(2, 6, 1);
        let many = direction_grid(2, 20, 1);
        let opts = SweepOptions::default();
        let env_few = sweep(&set, &few, &opts);
        let env_many = sweep(&set, &many, &opts);
        let mut rng = crate::stats::Rng::seeded(8);
        for _ in 0..500 {
            let p = [4.0 * rng.uniform() - 2.0, 4.0 * rng.uniform() - 2.0];
            if set.contains(&p, 1e-9) {
                assert!(env_many.contains(&p, 1e-6));
            }
            // adding directions never enlarges the envelope
            if env_many.contains(&p, 1e-9) {
                assert!(env_few.contains(&p, 1e-9));
            }
        }
    }

    #[test]
    fn empty_set_gives_empty_envelope() {
        // 1 <= x and x <= -1
        let d = 1;
        let x = Polynomial::var(d, 0);
        let mut lo = x.clone();
        lo.add_term(Monomial::constant(d), -1.0);
        let mut hi = Polynomial::constant(d, -1.0);
        hi.add_scaled(&x, -1.0);
        let set = SemialgebraicSet {
            layout: VarLayout::plain(d),
            inequalities: vec![lo, hi],
            equalities: vec![],
            ball_radius_sq: 25.0,
        };
        let env = sweep(&set, &direction_grid(1, 2, 0), &SweepOptions::default());
        assert!(env.empty);
        assert!(!env.contains(&[0.0], 1e-9));
        let iv = interval(&set, 0, &SweepOptions::default()).unwrap();
        assert!(iv.empty);
    }
}
