//! Dense semidefinite programming for the moment relaxations.
//!
//! Problems arrive as a linear objective over a pseudo-moment vector `mu`
//! (entry 0 is the constant monomial, pinned to one), a list of symmetric
//! matrix blocks that must be positive semidefinite, and optional linear
//! equality constraints on `mu`. Equalities are eliminated up front by an
//! orthonormal nullspace parametrization, and the remaining problem
//!
//! ```text
//!   minimize  c'v   subject to   G0 + sum_j v_j G_j  >= 0   (per block)
//! ```
//!
//! is solved with a primal-dual interior-point method using Nesterov-Todd
//! scaling, a Mehrotra-style predictor step to pick the centering weight,
//! and dense Cholesky of the Schur complement. Block dimensions here stay
//! around one hundred, so dense factorizations are the right tool.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::poly::{LinearForm, MatrixStructure};

/// Solver outcome classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    /// Converged: all blocks PSD to tolerance, duality gap below tolerance.
    Optimal,
    /// A dual improving ray certifies that no feasible `mu` exists.
    PrimalInfeasible,
    /// The objective is unbounded below (or a variable is unconstrained).
    DualInfeasible,
    /// Iteration budget exhausted; the dual bound is still valid.
    MaxIterations,
}

/// An SDP over a pseudo-moment vector.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    /// Length of `mu`; index 0 is the constant monomial, fixed to 1.
    pub n_moments: usize,
    /// Linear objective over `mu` indices.
    pub objective: LinearForm,
    /// PSD blocks (moment matrix plus one localizing matrix per constraint).
    pub blocks: Vec<MatrixStructure>,
    /// Linear equalities `form(mu) = 0`.
    pub equalities: Vec<LinearForm>,
    /// When set, a guarantee that `|mu_i| <= bound` for every feasible
    /// point. Relaxations scaled onto the unit ball supply 1.0. Enables
    /// rigorous lower bounds from inexact dual iterates, which matters when
    /// the dual optimum is not attained and the dual residual stalls.
    pub entry_bound: Option<f64>,
}

/// Tolerances and budgets for [`solve`].
#[derive(Clone, Copy, Debug)]
pub struct SdpTolerances {
    /// Relative duality gap target: gap <= eps_gap * (1 + |objective|).
    pub gap: f64,
    /// Residual tolerance for primal and dual feasibility.
    pub feas: f64,
    /// PSD slack allowed on assembled blocks at the reported solution.
    pub psd: f64,
    pub max_iterations: usize,
    /// Relative singular-value cutoff for numeric ranks.
    pub rank_rel_tol: f64,
}

impl Default for SdpTolerances {
    fn default() -> Self {
        SdpTolerances {
            gap: 1e-8,
            feas: 1e-8,
            psd: 1e-8,
            max_iterations: 200,
            rank_rel_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    /// Pseudo-moment vector at termination (entry 0 equals 1).
    pub mu_star: Vec<f64>,
    /// Primal objective at `mu_star`.
    pub objective_value: f64,
    /// Dual objective: a valid lower bound on the SDP optimum whenever the
    /// dual residual is small (always the case at `Optimal`).
    pub dual_bound: f64,
    pub status: SdpStatus,
    pub duality_gap: f64,
    pub iterations: usize,
}

/// Count of singular values above `rel_tol` times the largest one.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    if max <= 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

struct Block {
    dim: usize,
    g0: DMatrix<f64>,
    /// Variables touching this block, with sparse triplets (both triangles).
    vars: Vec<(usize, Vec<(u32, u32, f64)>)>,
}

struct Reduced {
    /// Free variable count after equality elimination.
    m: usize,
    c: DVector<f64>,
    offset: f64,
    blocks: Vec<Block>,
    /// `mu = particular + basis * v`; `basis` is `None` for the identity
    /// parametrization (no equalities), where variable `j` is `mu[j + 1]`.
    particular: DVector<f64>,
    basis: Option<DMatrix<f64>>,
}

fn infeasible_solution(problem: &SdpProblem, status: SdpStatus) -> SdpSolution {
    let mut mu = vec![0.0; problem.n_moments];
    mu[0] = 1.0;
    SdpSolution {
        mu_star: mu,
        objective_value: f64::NAN,
        dual_bound: f64::NAN,
        status,
        duality_gap: f64::NAN,
        iterations: 0,
    }
}

fn validate(problem: &SdpProblem) -> Result<()> {
    if problem.n_moments == 0 {
        return Err(Error::Invalid("empty moment vector".into()));
    }
    let max_ref = problem
        .blocks
        .iter()
        .map(|b| b.max_index())
        .chain(std::iter::once(problem.objective.max_index()))
        .chain(problem.equalities.iter().map(|e| e.max_index()))
        .max()
        .unwrap_or(0);
    if max_ref >= problem.n_moments {
        return Err(Error::Dimension(format!(
            "moment index {max_ref} out of range (length {})",
            problem.n_moments
        )));
    }
    Ok(())
}

/// Eliminates `mu_0 = 1` and the equalities; returns `Err(status)` when the
/// equalities are already inconsistent.
fn reduce(problem: &SdpProblem) -> std::result::Result<Reduced, SdpStatus> {
    let n = problem.n_moments;
    let nx = n - 1;
    let mut c_full = DVector::zeros(n);
    for &(i, v) in &problem.objective.0 {
        c_full[i] = v;
    }

    let (particular, basis): (DVector<f64>, Option<DMatrix<f64>>) = if problem.equalities.is_empty()
    {
        let mut p = DVector::zeros(n);
        p[0] = 1.0;
        (p, None)
    } else {
        let rows = problem.equalities.len();
        let mut e = DMatrix::<f64>::zeros(rows, nx);
        let mut rhs = DVector::<f64>::zeros(rows);
        for (r, form) in problem.equalities.iter().enumerate() {
            for &(i, v) in &form.0 {
                if i == 0 {
                    rhs[r] -= v;
                } else {
                    e[(r, i - 1)] = v;
                }
            }
        }
        // Nullspace and pseudo-inverse through the spectral decomposition of
        // E'E; orthonormal basis keeps the reduced problem well scaled.
        // The rank cutoff must sit above the eigensolver noise floor
        // (~machine epsilon times the top eigenvalue). Erring toward a
        // larger nullspace only drops near-dependent equalities, which
        // relaxes the feasible set and keeps every reported bound valid.
        let k = e.transpose() * &e;
        let eig = SymmetricEigen::new(k);
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let tol = lam_max * 1e-12 + 1e-300;
        let ery = e.transpose() * &rhs;
        let mut xp = DVector::zeros(nx);
        let mut null_cols = Vec::new();
        for j in 0..nx {
            let lam = eig.eigenvalues[j];
            let q = eig.eigenvectors.column(j);
            if lam > tol {
                xp += q * (q.dot(&ery) / lam);
            } else {
                null_cols.push(q.into_owned());
            }
        }
        if (&e * &xp - &rhs).norm() > 1e-7 * (1.0 + rhs.norm()) {
            return Err(SdpStatus::PrimalInfeasible);
        }
        let mut p = DVector::zeros(n);
        p[0] = 1.0;
        for i in 0..nx {
            p[i + 1] = xp[i];
        }
        let mut basis = DMatrix::zeros(nx, null_cols.len());
        for (j, col) in null_cols.iter().enumerate() {
            basis.set_column(j, col);
        }
        (p, Some(basis))
    };

    let m = basis.as_ref().map(|b| b.ncols()).unwrap_or(nx);
    let (c, offset) = match &basis {
        None => {
            let c = DVector::from_fn(m, |j, _| c_full[j + 1]);
            (c, c_full[0])
        }
        Some(b) => {
            let cx = DVector::from_fn(nx, |i, _| c_full[i + 1]);
            let c = b.transpose() * &cx;
            let off = c_full[0] + cx.dot(&DVector::from_fn(nx, |i, _| particular[i + 1]));
            (c, off)
        }
    };

    let mut blocks = Vec::with_capacity(problem.blocks.len());
    for structure in &problem.blocks {
        let dim = structure.dim();
        let g0 = structure.assemble(particular.as_slice());
        let mut vars: Vec<(usize, Vec<(u32, u32, f64)>)> = Vec::new();
        match &basis {
            None => {
                let mut per_var: std::collections::BTreeMap<usize, Vec<(u32, u32, f64)>> =
                    std::collections::BTreeMap::new();
                for i in 0..dim {
                    for j in 0..dim {
                        for &(idx, coef) in &structure.cell(i, j).0 {
                            if idx > 0 {
                                per_var.entry(idx - 1).or_default().push((
                                    i as u32,
                                    j as u32,
                                    coef,
                                ));
                            }
                        }
                    }
                }
                vars.extend(per_var);
            }
            Some(b) => {
                // Dense directional matrices: one pass per nullspace column.
                let mut mu_dir = vec![0.0; n];
                for vj in 0..m {
                    mu_dir[0] = 0.0;
                    for i in 0..nx {
                        mu_dir[i + 1] = b[(i, vj)];
                    }
                    let g = structure.assemble(&mu_dir);
                    let mut trips = Vec::new();
                    for i in 0..dim {
                        for j in 0..dim {
                            let v = g[(i, j)];
                            if v != 0.0 {
                                trips.push((i as u32, j as u32, v));
                            }
                        }
                    }
                    if !trips.is_empty() {
                        vars.push((vj, trips));
                    }
                }
            }
        }
        blocks.push(Block { dim, g0, vars });
    }

    Ok(Reduced {
        m,
        c,
        offset,
        blocks,
        particular,
        basis,
    })
}

fn embed(red: &Reduced, v: &DVector<f64>) -> Vec<f64> {
    let n = red.particular.len();
    let mut mu = vec![0.0; n];
    match &red.basis {
        None => {
            mu[0] = 1.0;
            for j in 0..red.m {
                mu[j + 1] = red.particular[j + 1] + v[j];
            }
        }
        Some(b) => {
            let x = b * v;
            mu[0] = 1.0;
            for i in 0..n - 1 {
                mu[i + 1] = red.particular[i + 1] + x[i];
            }
        }
    }
    mu
}

/// Largest step `alpha <= 1` keeping `x + alpha dx` positive semidefinite.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => {
            let bump = 1e-12 * (1.0 + x.diagonal().amax());
            match Cholesky::new(x + DMatrix::identity(x.nrows(), x.ncols()) * bump) {
                Some(c) => c,
                None => return 0.0,
            }
        }
    };
    let l = chol.l();
    let b = l.solve_lower_triangular(dx).unwrap();
    let w = l.solve_lower_triangular(&b.transpose()).unwrap();
    let sym = (&w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lam_min = eig.eigenvalues.min();
    if lam_min >= -1e-14 {
        1.0
    } else {
        (-1.0 / lam_min).min(1.0)
    }
}

/// Nesterov-Todd scaling point inverse: the symmetric `V` with `V S V = Y`.
fn nt_inverse_scaling(s: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let es = SymmetricEigen::new(s.clone());
    if es.eigenvalues.min() <= 0.0 {
        return None;
    }
    let q = &es.eigenvectors;
    let half = DVector::from_iterator(s.nrows(), es.eigenvalues.iter().map(|&l| l.sqrt()));
    let s_half = q * DMatrix::from_diagonal(&half) * q.transpose();
    let inv_half = DVector::from_iterator(s.nrows(), es.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()));
    let s_inv_half = q * DMatrix::from_diagonal(&inv_half) * q.transpose();
    let a = &s_half * y * &s_half;
    let ea = SymmetricEigen::new((&a + a.transpose()) * 0.5);
    if ea.eigenvalues.min() <= 0.0 {
        return None;
    }
    let ra = &ea.eigenvectors;
    let a_half = ra
        * DMatrix::from_diagonal(&DVector::from_iterator(
            s.nrows(),
            ea.eigenvalues.iter().map(|&l| l.sqrt()),
        ))
        * ra.transpose();
    let v = &s_inv_half * a_half * &s_inv_half;
    Some((&v + v.transpose()) * 0.5)
}

fn assemble_direction(block: &Block, v: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(block.dim, block.dim);
    for (j, trips) in &block.vars {
        let w = v[*j];
        if w != 0.0 {
            for &(a, b, val) in trips {
                out[(a as usize, b as usize)] += w * val;
            }
        }
    }
    out
}

fn frob_inner(trips: &[(u32, u32, f64)], t: &DMatrix<f64>) -> f64 {
    trips
        .iter()
        .map(|&(a, b, val)| val * t[(a as usize, b as usize)])
        .sum()
}

/// True when `y / |y|` is a dual improving ray: the adjoint map nearly
/// vanishes while the constant part is strictly negative, so no
/// positive-semidefinite `G0 + A'(v)` can exist.
fn primal_infeasibility_certificate(red: &Reduced, y: &[DMatrix<f64>], slack: f64) -> bool {
    let y_norm: f64 = y.iter().map(|yk| yk.norm_squared()).sum::<f64>().sqrt();
    if y_norm <= 0.0 {
        return false;
    }
    let mut adjoint = DVector::<f64>::zeros(red.m);
    for (b, yk) in red.blocks.iter().zip(y) {
        for (j, trips) in &b.vars {
            adjoint[*j] += frob_inner(trips, yk);
        }
    }
    let atyn = adjoint.amax() / y_norm;
    let g0y: f64 = red
        .blocks
        .iter()
        .zip(y)
        .map(|(b, yk)| b.g0.dot(yk))
        .sum::<f64>()
        / y_norm;
    let g0_scale = 1.0
        + red
            .blocks
            .iter()
            .map(|b| b.g0.norm_squared())
            .sum::<f64>()
            .sqrt();
    atyn <= slack * (1.0 + red.c.norm()) && g0y <= -slack * 10.0 * g0_scale
}

/// True when `v / |v|` is a primal improving ray: the homogeneous block map
/// stays (nearly) positive semidefinite while the cost strictly decreases,
/// so the objective is unbounded below.
fn dual_infeasibility_certificate(red: &Reduced, v: &DVector<f64>, slack: f64) -> bool {
    let v_norm = v.norm();
    if v_norm <= 0.0 {
        return false;
    }
    let vhat = v / v_norm;
    if red.c.dot(&vhat) > -slack * 10.0 * (1.0 + red.c.norm()) {
        return false;
    }
    red.blocks.iter().all(|b| {
        let dir = assemble_direction(b, &vhat);
        let scale = 1.0 + dir.norm();
        SymmetricEigen::new(dir).eigenvalues.min() >= -slack * scale
    })
}

/// Solves the SDP. Statuses other than numerical breakdown are reported in
/// the solution rather than as errors.
pub fn solve(problem: &SdpProblem, tol: &SdpTolerances) -> Result<SdpSolution> {
    validate(problem)?;
    let red = match reduce(problem) {
        Ok(r) => r,
        Err(status) => return Ok(infeasible_solution(problem, status)),
    };

    // Unreferenced free variables: unbounded if they carry cost.
    {
        let mut seen = vec![false; red.m];
        for b in &red.blocks {
            for (j, _) in &b.vars {
                seen[*j] = true;
            }
        }
        for j in 0..red.m {
            if !seen[j] && red.c[j].abs() > 1e-12 {
                return Ok(infeasible_solution(problem, SdpStatus::DualInfeasible));
            }
        }
    }

    if red.m == 0 {
        // Everything pinned by the equalities: check feasibility directly.
        let v = DVector::zeros(0);
        let mu = embed(&red, &v);
        let feasible = red.blocks.iter().all(|b| {
            let eig = SymmetricEigen::new(b.g0.clone());
            eig.eigenvalues.min() >= -tol.psd * (1.0 + b.g0.norm())
        });
        let obj = red.offset;
        return Ok(SdpSolution {
            mu_star: mu,
            objective_value: if feasible { obj } else { f64::NAN },
            dual_bound: if feasible { obj } else { f64::NAN },
            status: if feasible {
                SdpStatus::Optimal
            } else {
                SdpStatus::PrimalInfeasible
            },
            duality_gap: 0.0,
            iterations: 0,
        });
    }

    let m = red.m;
    let k_total: usize = red.blocks.iter().map(|b| b.dim).sum();
    let g0_norm: f64 = red
        .blocks
        .iter()
        .map(|b| b.g0.norm_squared())
        .sum::<f64>()
        .sqrt();
    let c_norm = red.c.norm();

    let mut v = DVector::<f64>::zeros(m);
    let mut s: Vec<DMatrix<f64>> = red
        .blocks
        .iter()
        .map(|b| DMatrix::identity(b.dim, b.dim) * (10.0 * (1.0 + b.g0.norm())))
        .collect();
    let init_y = 10.0 * (1.0 + c_norm);
    let mut y: Vec<DMatrix<f64>> = red
        .blocks
        .iter()
        .map(|b| DMatrix::identity(b.dim, b.dim) * init_y)
        .collect();

    // Bound on the norm of any feasible reduced variable, when the problem
    // carries an entry bound: |x| <= sqrt(nx) * bound coordinate-wise, and
    // the parametrization is orthonormal.
    let v_cap = problem.entry_bound.map(|b| {
        let nx = red.particular.len() - 1;
        let xp_norm = (1..=nx)
            .map(|i| red.particular[i] * red.particular[i])
            .sum::<f64>()
            .sqrt();
        b * (nx as f64).sqrt() + xp_norm
    });

    let mut best_dual = f64::NEG_INFINITY;
    let mut iterations = 0;

    for iter in 0..tol.max_iterations {
        iterations = iter + 1;

        // Residuals.
        let p_res: Vec<DMatrix<f64>> = red
            .blocks
            .iter()
            .zip(&s)
            .map(|(b, sk)| &b.g0 + assemble_direction(b, &v) - sk)
            .collect();
        let p_norm = p_res.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt()
            / (1.0 + g0_norm);
        let mut r = red.c.clone();
        for (b, yk) in red.blocks.iter().zip(&y) {
            for (j, trips) in &b.vars {
                r[*j] -= frob_inner(trips, yk);
            }
        }
        let d_norm = r.norm() / (1.0 + c_norm);

        let gap: f64 = s.iter().zip(&y).map(|(sk, yk)| sk.dot(yk)).sum();
        let mu_bar = gap / k_total as f64;
        let p_obj = red.c.dot(&v) + red.offset;
        let d_obj = -red
            .blocks
            .iter()
            .zip(&y)
            .map(|(b, yk)| b.g0.dot(yk))
            .sum::<f64>()
            + red.offset;
        if d_norm <= tol.feas {
            best_dual = best_dual.max(d_obj);
        }
        // Weak duality with an explicit correction for dual infeasibility:
        // for feasible v, c'v >= -<G0, Y> + r'v >= d_obj - |r| |v|.
        if let Some(cap) = v_cap {
            best_dual = best_dual.max(d_obj - r.norm() * cap);
        }

        if p_norm <= tol.feas && d_norm <= tol.feas && gap <= tol.gap * (1.0 + p_obj.abs()) {
            let mu = embed(&red, &v);
            return Ok(SdpSolution {
                mu_star: mu,
                objective_value: p_obj,
                dual_bound: d_obj,
                status: SdpStatus::Optimal,
                duality_gap: gap,
                iterations,
            });
        }

        // Divergence-triggered infeasibility detection, confirmed by rays.
        let y_norm: f64 = y.iter().map(|yk| yk.norm_squared()).sum::<f64>().sqrt();
        if y_norm > 100.0 * init_y && primal_infeasibility_certificate(&red, &y, 1e-8) {
            return Ok(infeasible_solution(problem, SdpStatus::PrimalInfeasible));
        }
        if v.norm() > 1e3 * (1.0 + g0_norm) && dual_infeasibility_certificate(&red, &v, 1e-8) {
            return Ok(infeasible_solution(problem, SdpStatus::DualInfeasible));
        }

        // Nesterov-Todd scaling per block.
        let mut scalings = Vec::with_capacity(red.blocks.len());
        let mut y_inv = Vec::with_capacity(red.blocks.len());
        let mut ok = true;
        for (sk, yk) in s.iter().zip(&y) {
            match (nt_inverse_scaling(sk, yk), Cholesky::new(yk.clone())) {
                (Some(vk), Some(ch)) => {
                    scalings.push(vk);
                    y_inv.push(ch.inverse());
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            if std::env::var_os("SNIV_SDP_DEBUG").is_some() {
                eprintln!(
                    "breakdown at iter {iter}: p_norm {p_norm:.3e} d_norm {d_norm:.3e} \
                     gap {gap:.3e} pobj {p_obj:.6e} dobj {d_obj:.6e}"
                );
                for (bi, (sk, yk)) in s.iter().zip(&y).enumerate() {
                    let es = SymmetricEigen::new(sk.clone());
                    let ey = SymmetricEigen::new(yk.clone());
                    eprintln!(
                        "  block {bi}: eig(S) in [{:.3e}, {:.3e}], eig(Y) in [{:.3e}, {:.3e}]",
                        es.eigenvalues.min(),
                        es.eigenvalues.max(),
                        ey.eigenvalues.min(),
                        ey.eigenvalues.max()
                    );
                }
            }
            // The iterate left the cone numerically, which also happens when
            // the dual optimum is unattained and the path stalls near the
            // primal optimum; fall through to the best-effort exit.
            break;
        }

        // Schur complement M[i][j] = sum_k tr(G_i V G_j V).
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (bi, b) in red.blocks.iter().enumerate() {
            let vk = &scalings[bi];
            let dim = b.dim;
            let mut gv = DMatrix::<f64>::zeros(dim, dim);
            let mut t = DMatrix::<f64>::zeros(dim, dim);
            for (pi, (ji, trips_i)) in b.vars.iter().enumerate() {
                gv.fill(0.0);
                for &(a, bb, val) in trips_i {
                    let (a, bb) = (a as usize, bb as usize);
                    for cidx in 0..dim {
                        gv[(a, cidx)] += val * vk[(bb, cidx)];
                    }
                }
                t.gemm(1.0, vk, &gv, 0.0);
                for (jj, trips_j) in b.vars.iter().take(pi + 1) {
                    let val = frob_inner(trips_j, &t);
                    schur[(*ji, *jj)] += val;
                    if ji != jj {
                        schur[(*jj, *ji)] += val;
                    }
                }
            }
        }

        let diag_max = schur.diagonal().amax().max(1e-300);
        let mut chol = None;
        let mut reg = 0.0;
        for attempt in 0..6 {
            let trial = if attempt == 0 {
                schur.clone()
            } else {
                reg = diag_max * 1e-14 * 10f64.powi(attempt);
                &schur + DMatrix::identity(m, m) * reg
            };
            if let Some(c) = Cholesky::new(trial) {
                chol = Some(c);
                break;
            }
        }
        let _ = reg;
        let chol = match chol {
            Some(c) => c,
            None => break,
        };

        // Shared pieces of the right-hand side.
        let rhs = |nu: f64| -> (DVector<f64>, Vec<DMatrix<f64>>) {
            let mut q = -r.clone();
            let mut e_blocks = Vec::with_capacity(red.blocks.len());
            for (bi, b) in red.blocks.iter().enumerate() {
                let d = &y_inv[bi] * nu - &s[bi] - &p_res[bi];
                let e = &scalings[bi] * &d * &scalings[bi];
                for (j, trips) in &b.vars {
                    q[*j] += frob_inner(trips, &e);
                }
                e_blocks.push(e);
            }
            (q, e_blocks)
        };

        let directions = |dv: &DVector<f64>, e_blocks: &[DMatrix<f64>]| {
            let mut ds_blocks = Vec::with_capacity(red.blocks.len());
            let mut dy_blocks = Vec::with_capacity(red.blocks.len());
            for (bi, b) in red.blocks.iter().enumerate() {
                let adv = assemble_direction(b, dv);
                let ds = &adv + &p_res[bi];
                let vav = &scalings[bi] * &adv * &scalings[bi];
                let dy = &e_blocks[bi] - vav;
                ds_blocks.push((&ds + ds.transpose()) * 0.5);
                dy_blocks.push((&dy + dy.transpose()) * 0.5);
            }
            (ds_blocks, dy_blocks)
        };

        // Predictor: pure affine step fixes the centering weight.
        let (q_aff, e_aff) = rhs(0.0);
        let dv_aff = chol.solve(&q_aff);
        let (ds_aff, dy_aff) = directions(&dv_aff, &e_aff);
        let mut ap_aff: f64 = 1.0;
        let mut ad_aff: f64 = 1.0;
        for i in 0..red.blocks.len() {
            ap_aff = ap_aff.min(max_step(&s[i], &ds_aff[i]));
            ad_aff = ad_aff.min(max_step(&y[i], &dy_aff[i]));
        }
        let gap_aff: f64 = (0..red.blocks.len())
            .map(|i| (&s[i] + &ds_aff[i] * ap_aff).dot(&(&y[i] + &dy_aff[i] * ad_aff)))
            .sum();
        let sigma = (gap_aff / gap).max(0.0).powi(3).clamp(1e-6, 0.999);

        // Corrector with centering.
        let (q_cor, e_cor) = rhs(sigma * mu_bar);
        let dv = chol.solve(&q_cor);
        let (ds, dy) = directions(&dv, &e_cor);
        let tau = if iter < 3 { 0.9 } else { 0.98 };
        let mut alpha_p: f64 = 1.0;
        let mut alpha_d: f64 = 1.0;
        for i in 0..red.blocks.len() {
            alpha_p = alpha_p.min(tau * max_step(&s[i], &ds[i]));
            alpha_d = alpha_d.min(tau * max_step(&y[i], &dy[i]));
        }
        if alpha_p < 1e-12 && alpha_d < 1e-12 {
            break;
        }

        v += &dv * alpha_p;
        for i in 0..red.blocks.len() {
            s[i] += &ds[i] * alpha_p;
            s[i] = (&s[i] + s[i].transpose()) * 0.5;
            y[i] += &dy[i] * alpha_d;
            y[i] = (&y[i] + y[i].transpose()) * 0.5;
        }
    }

    // Iteration budget exhausted (or progress stalled): a stalled run on an
    // infeasible problem usually carries a near-certificate, so check again
    // before reporting the best valid dual bound seen.
    if primal_infeasibility_certificate(&red, &y, 1e-6) {
        return Ok(infeasible_solution(problem, SdpStatus::PrimalInfeasible));
    }
    if dual_infeasibility_certificate(&red, &v, 1e-6) {
        return Ok(infeasible_solution(problem, SdpStatus::DualInfeasible));
    }
    let mu = embed(&red, &v);
    let p_obj = red.c.dot(&v) + red.offset;
    let gap: f64 = s.iter().zip(&y).map(|(sk, yk)| sk.dot(yk)).sum();
    Ok(SdpSolution {
        mu_star: mu,
        objective_value: p_obj,
        dual_bound: if best_dual.is_finite() { best_dual } else { f64::NAN },
        status: SdpStatus::MaxIterations,
        duality_gap: gap,
        iterations,
    })
}

/// Writes the problem in a sparse SDPA-style block format. Equalities are
/// emitted as a diagonal block of paired opposing inequalities; the constant
/// entry of `mu` is folded into the constant matrix.
pub fn write_sdpa(problem: &SdpProblem, out: &mut dyn std::io::Write) -> std::io::Result<()> {
    let nvars = problem.n_moments - 1;
    let neq = problem.equalities.len();
    let nblocks = problem.blocks.len() + if neq > 0 { 1 } else { 0 };
    writeln!(out, "{nvars} = mDIM")?;
    writeln!(out, "{nblocks} = nBLOCK")?;
    let mut sizes: Vec<String> = problem.blocks.iter().map(|b| b.dim().to_string()).collect();
    if neq > 0 {
        sizes.push(format!("-{}", 2 * neq));
    }
    writeln!(out, "{} = bLOCKsTRUCT", sizes.join(" "))?;
    let mut c = vec![0.0; nvars];
    for &(i, v) in &problem.objective.0 {
        if i > 0 {
            c[i - 1] = v;
        }
    }
    writeln!(
        out,
        "{}",
        c.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" ")
    )?;
    // Entry lines: matno blkno i j value, 1-based, upper triangle.
    // matno 0 holds the negated constant part.
    for (bi, block) in problem.blocks.iter().enumerate() {
        for i in 0..block.dim() {
            for j in i..block.dim() {
                for &(idx, coef) in &block.cell(i, j).0 {
                    let (mat, val) = if idx == 0 { (0, -coef) } else { (idx, coef) };
                    writeln!(out, "{mat} {} {} {} {val:.17e}", bi + 1, i + 1, j + 1)?;
                }
            }
        }
    }
    if neq > 0 {
        let blk = problem.blocks.len() + 1;
        for (r, form) in problem.equalities.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let pos = 2 * r + if sign > 0.0 { 1 } else { 2 };
                for &(idx, coef) in &form.0 {
                    let (mat, val) = if idx == 0 {
                        (0, -sign * coef)
                    } else {
                        (idx, sign * coef)
                    };
                    writeln!(out, "{mat} {blk} {pos} {pos} {val:.17e}")?;
                }
            }
        }
    }
    Ok(())
}
