//! Data handling and statistical inputs to the encoders: samples and their
//! cross-moment tables, the critical radii for the four moment classes, the
//! multiplier-bootstrap radius, partialling-out of exogenous regressors, and
//! seeded randomness with independent substreams.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use crate::dist::{chisq_quantile, normal_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::par;

/// Deterministic random stream, splittable into independent substreams.
#[derive(Clone, Debug)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Substream `stream` of the generator seeded by `seed`; different
    /// streams never overlap.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Rng(rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random::<u64>()
    }
}

/// Raw data: outcomes `y`, regressors `X` and instruments `Z`.
#[derive(Clone, Debug)]
pub struct Sample {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
}

impl Sample {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 rows, got {n}")));
        }
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "row mismatch: y {n}, X {}, Z {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return Err(Error::Invalid("X and Z need at least one column".into()));
        }
        let finite = y.iter().all(|v| v.is_finite())
            && x.iter().all(|v| v.is_finite())
            && z.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("non-finite entry in data".into()));
        }
        for l in 0..z.ncols() {
            let col = z.column(l);
            let mean = col.sum() / n as f64;
            let second = col.dot(&col) / n as f64;
            let var = second - mean * mean;
            if var <= 1e-12 * (1.0 + second) {
                return Err(Error::Invalid(format!(
                    "instrument column {} has zero variance",
                    l + 1
                )));
            }
        }
        Ok(Sample { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_z(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Reads the CSV schema `y,x1..x{d_X},z1..z{d_Z}` (UTF-8, period
    /// decimals, strict column counts).
    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        let names: Vec<String> = headers.iter().map(|h| h.to_lowercase()).collect();
        if names.is_empty() || names[0] != "y" {
            return Err(Error::Parse("first column must be 'y'".into()));
        }
        let mut d_x = 0;
        let mut i = 1;
        while i < names.len() && names[i] == format!("x{}", d_x + 1) {
            d_x += 1;
            i += 1;
        }
        let mut d_z = 0;
        while i < names.len() && names[i] == format!("z{}", d_z + 1) {
            d_z += 1;
            i += 1;
        }
        if i != names.len() || d_x == 0 || d_z == 0 {
            return Err(Error::Parse(
                "header must be y,x1..x{dX},z1..z{dZ} with contiguous indices".into(),
            ));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv row {}: {e}", line + 2)))?;
            if rec.len() != names.len() {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    rec.len(),
                    names.len()
                )));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
            rows.push(vals);
        }
        let n = rows.len();
        if n < 2 {
            return Err(Error::Invalid("need at least 2 data rows".into()));
        }
        let y = DVector::from_fn(n, |i, _| rows[i][0]);
        let x = DMatrix::from_fn(n, d_x, |i, k| rows[i][1 + k]);
        let z = DMatrix::from_fn(n, d_z, |i, l| rows[i][1 + d_x + l]);
        Sample::new(y, x, z)
    }

    /// Writes the CSV schema accepted by [`Sample::from_csv`].
    pub fn to_csv(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.d_x()).map(|k| format!("x{k}")));
        header.extend((1..=self.d_z()).map(|l| format!("z{l}")));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut fields = vec![format!("{:.17e}", self.y[i])];
            fields.extend((0..self.d_x()).map(|k| format!("{:.17e}", self.x[(i, k)])));
            fields.extend((0..self.d_z()).map(|l| format!("{:.17e}", self.z[(i, l)])));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Precomputed cross-moments: everything the set encoders need, so the raw
/// data is touched exactly once.
#[derive(Clone, Debug)]
pub struct MomentTables {
    pub n: usize,
    pub d_x: usize,
    pub d_z: usize,
    /// `E_n[Z_l y]`
    pub zy: Vec<f64>,
    /// `(l, k) -> E_n[Z_l X_k]`
    pub zx: DMatrix<f64>,
    /// `E_n[Z_l^2 y^2]`
    pub z2y2: Vec<f64>,
    /// `(l, k) -> E_n[Z_l^2 y X_k]`
    pub z2yx: DMatrix<f64>,
    /// per `l`: `(j, k) -> E_n[Z_l^2 X_j X_k]`
    pub z2xx: Vec<DMatrix<f64>>,
    /// `E_n[Z_l^2]`
    pub z2: Vec<f64>,
    pub y2: f64,
    /// `E_n[y X_k]`
    pub yx: Vec<f64>,
    /// `(j, k) -> E_n[X_j X_k]`
    pub xx: DMatrix<f64>,
}

/// Single pass over the data; per-instrument tables are independent, so the
/// loop over instruments is data-parallel.
pub fn cross_moments(sample: &Sample) -> MomentTables {
    let (n, d_x, d_z) = (sample.n(), sample.d_x(), sample.d_z());
    let nf = n as f64;
    let y = sample.y();
    let x = sample.x();
    let z = sample.z();

    let per_l = par::run_indexed(d_z, 0, |l| {
        let mut zy = 0.0;
        let mut zx = vec![0.0; d_x];
        let mut z2y2 = 0.0;
        let mut z2yx = vec![0.0; d_x];
        let mut z2xx = DMatrix::<f64>::zeros(d_x, d_x);
        let mut z2 = 0.0;
        for i in 0..n {
            let zi = z[(i, l)];
            let zi2 = zi * zi;
            let yi = y[i];
            zy += zi * yi;
            z2 += zi2;
            z2y2 += zi2 * yi * yi;
            for k in 0..d_x {
                let xk = x[(i, k)];
                zx[k] += zi * xk;
                z2yx[k] += zi2 * yi * xk;
                for j in 0..=k {
                    z2xx[(j, k)] += zi2 * x[(i, j)] * xk;
                }
            }
        }
        zy /= nf;
        z2 /= nf;
        z2y2 /= nf;
        for v in zx.iter_mut().chain(z2yx.iter_mut()) {
            *v /= nf;
        }
        z2xx /= nf;
        for k in 0..d_x {
            for j in 0..k {
                z2xx[(k, j)] = z2xx[(j, k)];
            }
        }
        (zy, zx, z2y2, z2yx, z2xx, z2)
    });

    let mut tables = MomentTables {
        n,
        d_x,
        d_z,
        zy: vec![0.0; d_z],
        zx: DMatrix::zeros(d_z, d_x),
        z2y2: vec![0.0; d_z],
        z2yx: DMatrix::zeros(d_z, d_x),
        z2xx: Vec::with_capacity(d_z),
        z2: vec![0.0; d_z],
        y2: y.dot(y) / nf,
        yx: (0..d_x).map(|k| y.dot(&x.column(k)) / nf).collect(),
        xx: DMatrix::from_fn(d_x, d_x, |j, k| x.column(j).dot(&x.column(k)) / nf),
    };
    for (l, (zy, zx, z2y2, z2yx, z2xx, z2)) in per_l.into_iter().enumerate() {
        tables.zy[l] = zy;
        tables.z2y2[l] = z2y2;
        tables.z2[l] = z2;
        for k in 0..d_x {
            tables.zx[(l, k)] = zx[k];
            tables.z2yx[(l, k)] = z2yx[k];
        }
        tables.z2xx.push(z2xx);
    }
    tables
}

impl MomentTables {
    /// `E_n[Z_l U(beta)]` contracted from the tables.
    pub fn e_zu(&self, l: usize, beta: &[f64]) -> f64 {
        let mut v = self.zy[l];
        for (k, &b) in beta.iter().enumerate() {
            v -= b * self.zx[(l, k)];
        }
        v
    }

    /// `E_n[Z_l^2 U(beta)^2]` contracted from the tables.
    pub fn e_z2u2(&self, l: usize, beta: &[f64]) -> f64 {
        let mut v = self.z2y2[l];
        for (k, &b) in beta.iter().enumerate() {
            v -= 2.0 * b * self.z2yx[(l, k)];
            for (j, &bj) in beta.iter().enumerate() {
                v += bj * b * self.z2xx[l][(j, k)];
            }
        }
        v
    }

    /// `E_n[U(beta)^2]` contracted from the tables.
    pub fn e_u2(&self, beta: &[f64]) -> f64 {
        let mut v = self.y2;
        for (k, &b) in beta.iter().enumerate() {
            v -= 2.0 * b * self.yx[k];
            for (j, &bj) in beta.iter().enumerate() {
                v += bj * b * self.xx[(j, k)];
            }
        }
        v
    }
}

/// Moment classes selecting the critical radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SnivClass {
    /// Bounded (2+delta)-th self-normalized moment; asymptotic guarantee.
    One,
    /// Bounded fourth self-normalized moment; finite-sample guarantee.
    Two,
    /// Symmetric moment summands; finite-sample guarantee.
    Three,
    /// Gaussian approximation via the multiplier bootstrap.
    Four,
}

/// Class choice plus its confidence level and, for the bootstrap class, the
/// simulation budget.
#[derive(Clone, Copy, Debug)]
pub struct ClassSpec {
    pub class: SnivClass,
    pub alpha: f64,
    pub bootstrap_draws: usize,
    pub seed: u64,
}

impl ClassSpec {
    pub fn new(class: SnivClass, alpha: f64) -> Self {
        ClassSpec {
            class,
            alpha,
            bootstrap_draws: 2000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if self.class == SnivClass::Four && self.bootstrap_draws < 1000 {
            return Err(Error::Invalid(
                "bootstrap classes need at least 1000 draws".into(),
            ));
        }
        Ok(())
    }
}

/// Critical radius for classes 1-3.
///
/// Class feasibility side conditions involve population constants that never
/// enter these formulas, so they are not runtime-checkable; the class choice
/// is the caller's modeling assumption. Class 3 additionally assumes the
/// moment summands are symmetrically distributed.
pub fn radius(class: SnivClass, alpha: f64, d_z: usize, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha {alpha} outside (0,1)")));
    }
    if d_z == 0 || n == 0 {
        return Err(Error::Invalid("d_z and n must be positive".into()));
    }
    let nf = n as f64;
    let dz = d_z as f64;
    let e = std::f64::consts::E;
    match class {
        SnivClass::One => {
            let p = alpha / (2.0 * dz);
            Ok(-normal_quantile(p)? / nf.sqrt())
        }
        SnivClass::Two => Ok(2.0 * ((dz * (2.0 * e + 1.0) / alpha).ln() / nf).sqrt()),
        SnivClass::Three => {
            let p = 9.0 * alpha / (4.0 * dz * e.powi(3));
            Ok(-normal_quantile(p)? / nf.sqrt())
        }
        SnivClass::Four => Err(Error::Invalid(
            "class 4 radius comes from the multiplier bootstrap".into(),
        )),
    }
}

/// Empirical `1 - alpha` quantile of the multiplier-bootstrap statistic
/// `max_l |E_n[Z_l W]| / sqrt(E_n[Z_l^2])` with standard normal multipliers
/// `W`; deterministic under `seed` for any worker count.
pub fn bootstrap_radius(
    sample: &Sample,
    alpha: f64,
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha {alpha} outside (0,1)")));
    }
    if draws == 0 {
        return Err(Error::Invalid("need at least one draw".into()));
    }
    let n = sample.n();
    let nf = n as f64;
    let d_z = sample.d_z();
    let inv_scale: Vec<f64> = (0..d_z)
        .map(|l| {
            let col = sample.z().column(l);
            1.0 / (col.dot(&col) / nf).sqrt()
        })
        .collect();
    let mut stats = par::run_indexed(draws, workers, |d| {
        let mut rng = Rng::substream(seed, d as u64);
        let w = rng.normal_vec(n);
        let mut worst = 0.0_f64;
        for l in 0..d_z {
            let s = sample.z().column(l).dot(&w) / nf;
            worst = worst.max((s * inv_scale[l]).abs());
        }
        worst
    });
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ((1.0 - alpha) * draws as f64).ceil() as usize;
    Ok(if k == 0 { 0.0 } else { stats[k.min(draws) - 1] })
}

/// Replaces `y`, the remaining regressors and the instruments by their
/// least-squares residuals on the named exogenous regressor columns.
pub fn partial_out(sample: &Sample, exog_columns: &[usize]) -> Result<Sample> {
    let d_x = sample.d_x();
    for &c in exog_columns {
        if c >= d_x {
            return Err(Error::Dimension(format!(
                "exogenous column {c} out of range (d_x = {d_x})"
            )));
        }
    }
    let mut sorted = exog_columns.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() == d_x {
        return Err(Error::Invalid("cannot partial out every regressor".into()));
    }
    let n = sample.n();
    let w = DMatrix::from_fn(n, sorted.len(), |i, j| sample.x()[(i, sorted[j])]);
    let gram = w.transpose() * &w;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::Singular("exogenous-column Gram matrix".into()))?;
    let residual = |col: DVector<f64>| -> DVector<f64> {
        let coef = chol.solve(&(w.transpose() * &col));
        col - &w * coef
    };
    let y = residual(sample.y().clone());
    let keep: Vec<usize> = (0..d_x).filter(|k| !sorted.contains(k)).collect();
    let mut x = DMatrix::zeros(n, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        x.set_column(j, &residual(sample.x().column(k).into_owned()));
    }
    let mut z = DMatrix::zeros(n, sample.d_z());
    for l in 0..sample.d_z() {
        z.set_column(l, &residual(sample.z().column(l).into_owned()));
    }
    Sample::new(y, x, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sample() -> Sample {
        // n=2, d_X=d_Z=1: y=(1,-1), X=(1,1), Z=(1,-1)
        Sample::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_vec(2, 1, vec![1.0, 1.0]),
            DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
        )
        .unwrap()
    }

    fn random_sample(n: usize, d_x: usize, d_z: usize, seed: u64) -> Sample {
        let mut rng = Rng::seeded(seed);
        let z = DMatrix::from_fn(n, d_z, |_, _| rng.normal());
        let x = DMatrix::from_fn(n, d_x, |i, k| 0.6 * z[(i, k.min(d_z - 1))] + 0.8 * rng.normal());
        let beta: Vec<f64> = (0..d_x).map(|k| if k == 0 { 1.0 } else { -0.5 }).collect();
        let y = DVector::from_fn(n, |i, _| {
            (0..d_x).map(|k| x[(i, k)] * beta[k]).sum::<f64>() + rng.normal()
        });
        Sample::new(y, x, z).unwrap()
    }

    #[test]
    fn hand_computed_cross_moments() {
        let t = cross_moments(&toy_sample());
        assert!((t.zy[0] - 1.0).abs() < 1e-15);
        assert!(t.zx[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn exact_fit_contracts_to_zero() {
        let mut rng = Rng::seeded(7);
        let n = 50;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.normal());
        let z = DMatrix::from_fn(n, 3, |_, _| rng.normal());
        let beta = [2.0, -0.5];
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * beta[0] + x[(i, 1)] * beta[1]);
        let t = cross_moments(&Sample::new(y, x, z).unwrap());
        for l in 0..3 {
            assert!(t.e_zu(l, &beta).abs() < 1e-12);
            assert!(t.e_z2u2(l, &beta).abs() < 1e-12);
        }
        assert!(t.e_u2(&beta).abs() < 1e-12);
    }

    #[test]
    fn instrument_scaling_acts_linearly_and_quadratically() {
        let s = random_sample(40, 2, 2, 3);
        let t = cross_moments(&s);
        let c = 3.5;
        let z_scaled = {
            let mut z = s.z().clone();
            z.column_mut(0).scale_mut(c);
            z
        };
        let t2 = cross_moments(&Sample::new(s.y().clone(), s.x().clone(), z_scaled).unwrap());
        assert!((t2.zy[0] - c * t.zy[0]).abs() < 1e-12);
        assert!((t2.z2y2[0] - c * c * t.z2y2[0]).abs() < 1e-10);
        assert!((t2.zx[(0, 1)] - c * t.zx[(0, 1)]).abs() < 1e-12);
        // untouched column unchanged
        assert!((t2.zy[1] - t.zy[1]).abs() < 1e-15);
    }

    #[test]
    fn contraction_identity_matches_raw_computation() {
        let s = random_sample(120, 3, 2, 11);
        let t = cross_moments(&s);
        let mut rng = Rng::seeded(5);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..3).map(|_| 2.0 * rng.uniform() - 1.0).collect();
            for l in 0..2 {
                let mut direct = 0.0;
                let mut direct2 = 0.0;
                for i in 0..s.n() {
                    let u = s.y()[i] - (0..3).map(|k| s.x()[(i, k)] * beta[k]).sum::<f64>();
                    direct += s.z()[(i, l)] * u;
                    direct2 += s.z()[(i, l)].powi(2) * u * u;
                }
                direct /= s.n() as f64;
                direct2 /= s.n() as f64;
                let via = t.e_zu(l, &beta);
                assert!((via - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
                let via2 = t.e_z2u2(l, &beta);
                assert!((via2 - direct2).abs() <= 1e-10 * (1.0 + direct2.abs()));
            }
        }
    }

    #[test]
    fn radii_match_quantile_oracle() {
        // Frozen from a 30-digit oracle at alpha=0.05, d_Z=10, n=2000.
        let r1 = radius(SnivClass::One, 0.05, 10, 2000).unwrap();
        let r2 = radius(SnivClass::Two, 0.05, 10, 2000).unwrap();
        let r3 = radius(SnivClass::Three, 0.05, 10, 2000).unwrap();
        assert!((r1 - 0.062_767_183_211_5).abs() < 1e-10);
        assert!((r2 - 0.119_668_811_063).abs() < 1e-10);
        assert!((r3 - 0.072_861_253_922_2).abs() < 1e-10);
        assert!(r3 > r1);
    }

    #[test]
    fn radius_monotone_in_n_and_dz() {
        for class in [SnivClass::One, SnivClass::Two, SnivClass::Three] {
            let base = radius(class, 0.05, 10, 2000).unwrap();
            assert!(radius(class, 0.05, 10, 4000).unwrap() < base);
            assert!(radius(class, 0.05, 20, 2000).unwrap() > base);
        }
    }

    #[test]
    fn class_three_log_bound() {
        let e3 = std::f64::consts::E.powi(3);
        for &alpha in &[0.01, 0.05, 0.1, 0.32] {
            for &d_z in &[1usize, 5, 50, 2000] {
                for &n in &[50usize, 500, 20_000] {
                    let r = radius(SnivClass::Three, alpha, d_z, n).unwrap();
                    let cap = 2.0 * (4.0 * d_z as f64 * e3 / (9.0 * alpha)).ln() / (n as f64).sqrt();
                    assert!(r <= cap + 1e-12, "alpha={alpha} d_z={d_z} n={n}");
                }
            }
        }
    }

    #[test]
    fn bootstrap_matches_normal_quantile_for_single_instrument() {
        let s = random_sample(400, 1, 1, 21);
        let alpha = 0.1;
        let r = bootstrap_radius(&s, alpha, 4000, 9, 1).unwrap();
        let expect = normal_quantile(1.0 - alpha / 2.0).unwrap() / (s.n() as f64).sqrt();
        assert!(
            (r - expect).abs() < 0.15 * expect,
            "bootstrap {r} vs normal {expect}"
        );
    }

    #[test]
    fn bootstrap_invariant_to_column_scaling_and_duplication() {
        let s = random_sample(100, 1, 2, 31);
        let r = bootstrap_radius(&s, 0.05, 1000, 4, 1).unwrap();
        // rescaling an instrument column leaves the statistic unchanged
        let mut z = s.z().clone();
        z.column_mut(1).scale_mut(7.0);
        let s2 = Sample::new(s.y().clone(), s.x().clone(), z).unwrap();
        let r2 = bootstrap_radius(&s2, 0.05, 1000, 4, 1).unwrap();
        assert_eq!(r.to_bits(), r2.to_bits());
        // duplicating a column: max over identical entries, same quantile
        let mut z3 = DMatrix::zeros(s.n(), 2);
        z3.set_column(0, &s.z().column(0).into_owned());
        z3.set_column(1, &s.z().column(0).into_owned());
        let one = DMatrix::from_fn(s.n(), 1, |i, _| s.z()[(i, 0)]);
        let s_dup = Sample::new(s.y().clone(), s.x().clone(), z3).unwrap();
        let s_one = Sample::new(s.y().clone(), s.x().clone(), one).unwrap();
        let rd = bootstrap_radius(&s_dup, 0.05, 1000, 4, 1).unwrap();
        let ro = bootstrap_radius(&s_one, 0.05, 1000, 4, 1).unwrap();
        assert_eq!(rd.to_bits(), ro.to_bits());
    }

    #[test]
    fn bootstrap_monotone_in_alpha_and_deterministic_across_workers() {
        let s = random_sample(80, 1, 3, 17);
        let r05 = bootstrap_radius(&s, 0.05, 1000, 2, 1).unwrap();
        let r20 = bootstrap_radius(&s, 0.20, 1000, 2, 1).unwrap();
        let r99 = bootstrap_radius(&s, 0.999, 1000, 2, 1).unwrap();
        assert!(r20 <= r05);
        assert!(r99 <= r20);
        assert!(r99 >= 0.0);
        let par = bootstrap_radius(&s, 0.05, 1000, 2, 4).unwrap();
        assert_eq!(r05.to_bits(), par.to_bits());
    }

    #[test]
    fn partial_out_demeans_with_intercept_column() {
        let mut rng = Rng::seeded(13);
        let n = 60;
        let mut x = DMatrix::from_fn(n, 3, |_, _| rng.normal() + 2.0);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        let z = DMatrix::from_fn(n, 2, |_, _| rng.normal() + 5.0);
        let y = DVector::from_fn(n, |i, _| x[(i, 1)] + rng.normal());
        let s = Sample::new(y, x, z).unwrap();
        let out = partial_out(&s, &[0]).unwrap();
        assert_eq!(out.d_x(), 2);
        assert!(out.y().sum().abs() / (n as f64) < 1e-12);
        for k in 0..2 {
            assert!(out.x().column(k).sum().abs() / (n as f64) < 1e-12);
        }
        for l in 0..2 {
            assert!(out.z().column(l).sum().abs() / (n as f64) < 1e-12);
        }
    }

    #[test]
    fn partial_out_orthogonal_column_is_noop() {
        // Exogenous column orthogonal (in sample) to everything else.
        let n = 4;
        let w = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let other = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let mut x = DMatrix::zeros(n, 2);
        x.set_column(0, &w);
        x.set_column(1, &other);
        let bump = [0.1, 0.1, -0.1, -0.1]; // orthogonal to w
        let z = DMatrix::from_fn(n, 1, |i, _| other[i] * 2.0 + bump[i]);
        let y = other.clone() * 3.0;
        let s = Sample::new(y.clone(), x, z.clone()).unwrap();
        let out = partial_out(&s, &[0]).unwrap();
        assert!((out.y() - &y).norm() < 1e-12);
        assert!((out.z() - &z).norm() < 1e-12);
    }

    #[test]
    fn partial_out_residuals_orthogonal() {
        let mut rng = Rng::seeded(99);
        let n = 200;
        let w = DVector::from_fn(n, |_, _| rng.normal());
        let mut x = DMatrix::zeros(n, 2);
        x.set_column(0, &w);
        x.set_column(1, &DVector::from_fn(n, |_, _| rng.normal()));
        let z = DMatrix::from_fn(n, 1, |_, _| rng.normal());
        let y = DVector::from_fn(n, |i, _| 2.0 * w[i] + rng.normal());
        let s = Sample::new(y, x, z).unwrap();
        let out = partial_out(&s, &[0]).unwrap();
        assert!(out.y().dot(&w).abs() / (n as f64) < 1e-12);
    }

    #[test]
    fn rng_streams_are_deterministic_and_distinct() {
        let a: Vec<f64> = {
            let mut r = Rng::seeded(42);
            (0..1000).map(|_| r.normal()).collect()
        };
        let b: Vec<f64> = {
            let mut r = Rng::seeded(42);
            (0..1000).map(|_| r.normal()).collect()
        };
        assert_eq!(a, b);
        let s0: Vec<f64> = {
            let mut r = Rng::substream(42, 0);
            (0..100).map(|_| r.normal()).collect()
        };
        let s1: Vec<f64> = {
            let mut r = Rng::substream(42, 1);
            (0..100).map(|_| r.normal()).collect()
        };
        assert_ne!(s0, s1);
    }

    #[test]
    fn rng_normal_mean_within_clt_band() {
        let mut r = Rng::seeded(1);
        let m = 1_000_000;
        let mean = (0..m).map(|_| r.normal()).sum::<f64>() / m as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn sample_validation() {
        // zero-variance instrument
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DMatrix::from_fn(3, 1, |i, _| i as f64);
        let z = DMatrix::from_element(3, 1, 1.0);
        assert!(Sample::new(y.clone(), x.clone(), z).is_err());
        // non-finite entry
        let z2 = DMatrix::from_fn(3, 1, |i, _| if i == 0 { f64::NAN } else { i as f64 });
        assert!(Sample::new(y, x, z2).is_err());
    }

    #[test]
    fn csv_roundtrip_and_strictness() {
        let s = random_sample(10, 2, 3, 77);
        let mut buf = Vec::new();
        s.to_csv(&mut buf).unwrap();
        let back = Sample::from_csv(&buf[..]).unwrap();
        assert_eq!(back.n(), 10);
        assert!((back.y() - s.y()).norm() < 1e-14);
        assert!((back.x() - s.x()).norm() < 1e-14);
        let bad = "y,x1,z9\n1,2,3\n4,5,6\n";
        assert!(Sample::from_csv(bad.as_bytes()).is_err());
        let ragged = "y,x1,z1\n1,2\n3,4,5\n";
        assert!(Sample::from_csv(ragged.as_bytes()).is_err());
    }

    #[test]
    fn class_spec_validation() {
        assert!(ClassSpec::new(SnivClass::One, 0.05).validate().is_ok());
        assert!(ClassSpec::new(SnivClass::One, 1.5).validate().is_err());
        let mut c4 = ClassSpec::new(SnivClass::Four, 0.05);
        c4.bootstrap_draws = 10;
        assert!(c4.validate().is_err());
    }
}
