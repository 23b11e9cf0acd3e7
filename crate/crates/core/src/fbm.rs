//! Fractional Brownian motion `X : [0,1] → R^d` with
//! `Cov(X_j(s), X_k(t)) = ½(|s|^{2H} + |t|^{2H} − |s−t|^{2H})·δ_jk`,
//! sampled exactly on the grid `{j/n : j = 0..=n}`.
//!
//! Coordinate `j` of a path with seed `σ` draws its normals from the
//! ChaCha8 stream `j` of key `σ`, so coordinates are independent and any
//! single coordinate can be regenerated alone.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::pointset::PointCloud;

pub const MAX_CIRCULANT_STEPS: usize = 1 << 22;
pub const MAX_CHOLESKY_STEPS: usize = 1 << 12;

/// Negative circulant eigenvalues down to this fraction of the largest are
/// treated as rounding and clamped to zero.
pub const EIGEN_CLAMP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Circulant,
    Cholesky,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Circulant => "circulant",
            Method::Cholesky => "cholesky",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "circulant" => Ok(Method::Circulant),
            "cholesky" => Ok(Method::Cholesky),
            other => Err(invalid(format!("unknown fbm method '{other}'"))),
        }
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("Hurst index {hurst} outside (0, 1)")))
    }
}

/// Covariance of two increments of length `step` that are `k` steps apart.
pub fn fgn_autocovariance(hurst: f64, step: f64, k: u64) -> Result<f64> {
    check_hurst(hurst)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step {step} must be positive")));
    }
    Ok(autocov(hurst, step, k))
}

fn autocov(hurst: f64, step: f64, k: u64) -> f64 {
    let h2 = 2.0 * hurst;
    if k == 0 {
        return step.powf(h2);
    }
    let k = k as f64;
    0.5 * step.powf(h2) * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).powf(h2))
}

/// The autocovariance sequence `γ(0..lags)` of fractional Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgnCovariance {
    pub hurst: f64,
    pub step: f64,
    pub lags: Vec<f64>,
}

impl FgnCovariance {
    pub fn new(hurst: f64, step: f64, count: usize) -> Result<Self> {
        fgn_autocovariance(hurst, step, 0)?;
        Ok(FgnCovariance {
            hurst,
            step,
            lags: (0..count as u64).map(|k| autocov(hurst, step, k)).collect(),
        })
    }

    /// `γ(k)`, symmetric in the lag.
    pub fn at(&self, lag: i64) -> f64 {
        self.lags[lag.unsigned_abs() as usize]
    }
}

/// `½(|s|^{2H} + |t|^{2H} − |s−t|^{2H})`.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (s - t).abs().powf(h2))
}

/// Everything that determines a path; the cache key hashes this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbmMetadata {
    pub hurst: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub method: Method,
}

impl FbmMetadata {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn key(&self) -> String {
        let json = serde_json::to_vec(self).expect("metadata serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A sampled path: `values` holds `(n + 1) × d` entries, row `j` being
/// `X(j/n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FbmPath {
    meta: FbmMetadata,
    values: Vec<f64>,
}

impl FbmPath {
    pub fn metadata(&self) -> &FbmMetadata {
        &self.meta
    }

    /// Number of grid steps; the grid has `n + 1` points.
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    pub fn hurst(&self) -> f64 {
        self.meta.hurst
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.meta.n as f64
    }

    pub fn value(&self, j: usize) -> &[f64] {
        let d = self.meta.d;
        &self.values[j * d..(j + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The path of coordinate `c` alone.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.meta.d).copied().collect()
    }

    /// Columns `t, X_1, …, X_d`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.meta.d).map(|c| format!("X_{c}")));
        w.write_record(&header)?;
        for j in 0..=self.meta.n {
            let mut row = vec![format!("{:.16e}", self.time(j))];
            row.extend(self.value(j).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, meta: FbmMetadata) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut values = Vec::with_capacity((meta.n + 1) * meta.d);
        for (j, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != meta.d + 1 {
                return Err(invalid(format!("row {j} has {} columns, expected {}", rec.len(), meta.d + 1)));
            }
            for field in rec.iter().skip(1) {
                values.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| invalid(format!("row {j}: {e}")))?,
                );
            }
        }
        if values.len() != (meta.n + 1) * meta.d {
            return Err(invalid(format!("expected {} rows, found {}", meta.n + 1, values.len() / meta.d.max(1))));
        }
        Ok(FbmPath { meta, values })
    }
}

fn check_size(n: usize, d: usize, method: Method) -> Result<()> {
    if d == 0 {
        return Err(invalid("path dimension d must be at least 1"));
    }
    if !n.is_power_of_two() || n < 2 {
        return Err(invalid(format!("grid size {n} must be a power of two ≥ 2")));
    }
    let cap = match method {
        Method::Circulant => MAX_CIRCULANT_STEPS,
        Method::Cholesky => MAX_CHOLESKY_STEPS,
    };
    if n > cap {
        return Err(Error::TooManyPoints { count: n as u128, cap });
    }
    Ok(())
}

/// Circulant embedding of fractional Gaussian noise, reusable across seeds.
pub struct CirculantSampler {
    n: usize,
    hurst: f64,
    // sqrt(λ_k / 2n)
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl CirculantSampler {
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_size(n, 1, Method::Circulant)?;
        let m = 2 * n;
        let step = 1.0 / n as f64;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|k| {
                let lag = if k <= n { k } else { m - k };
                Complex::new(autocov(hurst, step, lag as u64), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let eig: Vec<f64> = row.iter().map(|c| c.re).collect();
        let eig = clamp_eigenvalues(&eig)?;
        let scale = eig.iter().map(|l| (l / m as f64).sqrt()).collect();
        Ok(CirculantSampler { n, hurst, scale, fft })
    }

    /// One coordinate path `X(j/n)`, `j = 0..=n`, from the given RNG.
    fn path<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = self
            .scale
            .iter()
            .map(|s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        self.fft.process(&mut buf);
        cumulative(buf[..self.n].iter().map(|c| c.re))
    }

    pub fn sample(&self, d: usize, seed: u64) -> Result<FbmPath> {
        check_size(self.n, d, Method::Circulant)?;
        let columns: Vec<Vec<f64>> = (0..d).map(|c| self.path(&mut stream(seed, c))).collect();
        Ok(interleave(
            FbmMetadata {
                hurst: self.hurst,
                n: self.n,
                d,
                seed,
                method: Method::Circulant,
            },
            &columns,
        ))
    }
}

/// Clamps eigenvalues in `[−EIGEN_CLAMP·max, 0)` to zero; anything lower
/// means the embedding is not nonnegative definite.
pub fn clamp_eigenvalues(eig: &[f64]) -> Result<Vec<f64>> {
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < -EIGEN_CLAMP * max || eig.iter().any(|l| !l.is_finite()) {
        return Err(Error::EmbeddingFailed { min, max });
    }
    Ok(eig.iter().map(|l| l.max(0.0)).collect())
}

/// Cholesky factor of the path covariance at `1/n, …, 1`.
pub struct CholeskySampler {
    n: usize,
    hurst: f64,
    factor: DMatrix<f64>,
}

impl CholeskySampler {
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        check_size(n, 1, Method::Cholesky)?;
        let t = |i: usize| (i + 1) as f64 / n as f64;
        let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, t(i), t(j)));
        let factor = cov.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        Ok(CholeskySampler { n, hurst, factor })
    }

    fn path<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; self.n + 1];
        for (i, o) in out.iter_mut().skip(1).enumerate() {
            *o = (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum();
        }
        out
    }

    pub fn sample(&self, d: usize, seed: u64) -> Result<FbmPath> {
        check_size(self.n, d, Method::Cholesky)?;
        let columns: Vec<Vec<f64>> = (0..d).map(|c| self.path(&mut stream(seed, c))).collect();
        Ok(interleave(
            FbmMetadata {
                hurst: self.hurst,
                n: self.n,
                d,
                seed,
                method: Method::Cholesky,
            },
            &columns,
        ))
    }
}

fn stream(seed: u64, coordinate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(coordinate as u64);
    rng
}

fn cumulative<I: Iterator<Item = f64>>(increments: I) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for x in increments {
        acc += x;
        out.push(acc);
    }
    out
}

fn interleave(meta: FbmMetadata, columns: &[Vec<f64>]) -> FbmPath {
    let rows = meta.n + 1;
    let mut values = Vec::with_capacity(rows * meta.d);
    for j in 0..rows {
        values.extend(columns.iter().map(|c| c[j]));
    }
    FbmPath { meta, values }
}

/// Samples a `d`-dimensional path on `n` steps.
pub fn simulate(n: usize, d: usize, hurst: f64, seed: u64, method: Method) -> Result<FbmPath> {
    check_hurst(hurst)?;
    check_size(n, d, method)?;
    match method {
        Method::Circulant => CirculantSampler::new(n, hurst)?.sample(d, seed),
        Method::Cholesky => CholeskySampler::new(n, hurst)?.sample(d, seed),
    }
}

/// One cell of [`covariance_zscores`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCell {
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub expected: f64,
    /// `(empirical − expected) / se` with the Gaussian product variance
    /// `C(s,s)C(t,t) + C(s,t)²`.
    pub z: f64,
}

/// Empirical `E[X(s)X(t)]` over `replicates` one-dimensional paths (seeds
/// `seed..seed+replicates`) on the times `j·⌊n/grid⌋/n`, `j = 1..=grid`,
/// against the exact covariance.
pub fn covariance_zscores(
    n: usize,
    hurst: f64,
    method: Method,
    grid: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<CovarianceCell>> {
    if grid == 0 || grid > n || replicates < 2 {
        return Err(invalid("need 1 ≤ grid ≤ n and at least two replicates"));
    }
    let stride = n / grid;
    let idx: Vec<usize> = (1..=grid).map(|j| j * stride).collect();
    let sampler: Box<dyn Fn(u64) -> Result<FbmPath>> = match method {
        Method::Circulant => {
            let s = CirculantSampler::new(n, hurst)?;
            Box::new(move |sd| s.sample(1, sd))
        }
        Method::Cholesky => {
            let s = CholeskySampler::new(n, hurst)?;
            Box::new(move |sd| s.sample(1, sd))
        }
    };
    let rows = (0..replicates as u64)
        .map(|r| {
            let p = sampler(seed + r)?;
            Ok(idx.iter().map(|&j| p.value(j)[0]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = idx.iter().map(|&j| j as f64 / n as f64).collect();
    let mut cells = Vec::with_capacity(grid * grid);
    for (a, &s) in times.iter().enumerate() {
        for (b, &t) in times.iter().enumerate() {
            let empirical = rows.iter().map(|x| x[a] * x[b]).sum::<f64>() / replicates as f64;
            let expected = fbm_covariance(hurst, s, t);
            let var = fbm_covariance(hurst, s, s) * fbm_covariance(hurst, t, t) + expected * expected;
            let z = (empirical - expected) / (var / replicates as f64).sqrt();
            cells.push(CovarianceCell { s, t, empirical, expected, z });
        }
    }
    Ok(cells)
}

/// `X(E)`: each point of the 1-D cloud `E ⊂ [0,1]` is snapped to the
/// nearest grid time (error at most `1/2n`) and mapped through the path.
///
/// Points sharing a grid time collapse to one image point. The image
/// resolution is `max(res(E), 1/n)^H`, the Hölder image of the finest
/// scale the input and grid both resolve.
pub fn image_cloud(path: &FbmPath, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.dim() != 1 {
        return Err(invalid(format!("image_cloud needs a 1-D cloud, got dimension {}", cloud.dim())));
    }
    let n = path.n();
    let mut indices = Vec::with_capacity(cloud.len());
    for &x in cloud.coords() {
        if !(-1e-12..=1.0 + 1e-12).contains(&x) {
            return Err(Error::InvalidCloud(format!("point {x} outside [0, 1]")));
        }
        indices.push(((x.clamp(0.0, 1.0) * n as f64).round() as usize).min(n));
    }
    indices.sort_unstable();
    indices.dedup();
    let coords: Vec<f64> = indices.iter().flat_map(|&j| path.value(j).iter().copied()).collect();
    let snap = 0.5 / n as f64;
    let resolution = cloud.resolution().max(1.0 / n as f64).powf(path.hurst());
    let m = path.metadata();
    let label = format!(
        "X({}) H={} d={} n={} seed={} method={} snap<={snap:e}",
        cloud.label(),
        m.hurst,
        m.d,
        m.n,
        m.seed,
        m.method
    );
    PointCloud::merged(path.dim(), coords, resolution, label)
}

/// On-disk store of paths keyed by [`FbmMetadata::key`]: `<key>.csv`
/// plus `<key>.json`.
#[derive(Clone, Debug)]
pub struct PathCache {
    dir: PathBuf,
}

impl PathCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(PathCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, meta: &FbmMetadata) -> (PathBuf, PathBuf) {
        let key = meta.key();
        (self.dir.join(format!("{key}.csv")), self.dir.join(format!("{key}.json")))
    }

    pub fn load(&self, meta: &FbmMetadata) -> Result<Option<FbmPath>> {
        let (csv_path, json_path) = self.paths(meta);
        if !csv_path.exists() || !json_path.exists() {
            return Ok(None);
        }
        let stored: FbmMetadata = serde_json::from_reader(fs::File::open(&json_path)?)?;
        if &stored != meta {
            return Ok(None);
        }
        FbmPath::read_csv(fs::File::open(&csv_path)?, stored).map(Some)
    }

    pub fn store(&self, path: &FbmPath) -> Result<()> {
        let (csv_path, json_path) = self.paths(path.metadata());
        let mut csv_bytes = Vec::new();
        path.write_csv(&mut csv_bytes)?;
        crate::atomic::write_file(&csv_path, &csv_bytes)?;
        crate::atomic::write_file(&json_path, &serde_json::to_vec_pretty(path.metadata())?)?;
        Ok(())
    }

    /// Loads the path if cached, otherwise simulates and stores it.
    pub fn get_or_simulate(&self, meta: &FbmMetadata) -> Result<FbmPath> {
        if let Some(p) = self.load(meta)? {
            return Ok(p);
        }
        let p = simulate(meta.n, meta.d, meta.hurst, meta.seed, meta.method)?;
        self.store(&p)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointset::gen_cantor;
    use approx::assert_abs_diff_eq;

    // mean and standard error of x_i·y_i; both variables are centred
    fn product_stats(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let p: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();
        let mean = p.iter().sum::<f64>() / n;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn autocovariance_examples() {
        for k in 1..20 {
            assert_eq!(fgn_autocovariance(0.5, 0.125, k).unwrap(), 0.0);
        }
        for h in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(fgn_autocovariance(h, 0.25, 0).unwrap(), 0.25f64.powf(2.0 * h), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(fgn_autocovariance(0.7, 1.0, 1).unwrap(), 0.5 * (2f64.powf(1.4) - 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(fgn_autocovariance(0.7, 1.0, 1).unwrap(), 0.3195, epsilon = 1e-4);
        assert!(fgn_autocovariance(1.0, 1.0, 1).is_err());
        assert!(fgn_autocovariance(0.0, 1.0, 1).is_err());
        let c = FgnCovariance::new(0.3, 0.5, 8).unwrap();
        assert_eq!(c.at(-3), c.at(3));
    }

    #[test]
    fn increments_sum_to_path_covariance() {
        // Var X(k·step) = Σ_{|i-j|<k} γ(i-j)
        for h in [0.2, 0.5, 0.8] {
            let step = 1.0 / 64.0;
            let c = FgnCovariance::new(h, step, 64).unwrap();
            for k in [1i64, 5, 64] {
                let var: f64 = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| c.at(i - j)).sum();
                assert_abs_diff_eq!(var, (k as f64 * step).powf(2.0 * h), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn paths_start_at_zero_and_repeat() {
        for method in [Method::Circulant, Method::Cholesky] {
            let a = simulate(64, 3, 0.3, 11, method).unwrap();
            assert_eq!(a.values().len(), 65 * 3);
            assert!(a.value(0).iter().all(|v| *v == 0.0));
            let b = simulate(64, 3, 0.3, 11, method).unwrap();
            assert_eq!(a, b);
            let c = simulate(64, 3, 0.3, 12, method).unwrap();
            assert_ne!(a.values(), c.values());
        }
    }

    #[test]
    fn coordinates_use_separate_streams() {
        let a = simulate(32, 2, 0.6, 5, Method::Circulant).unwrap();
        let b = simulate(32, 1, 0.6, 5, Method::Circulant).unwrap();
        assert_eq!(a.coordinate(0), b.coordinate(0));
        assert_ne!(a.coordinate(0), a.coordinate(1));
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(simulate(48, 1, 0.5, 0, Method::Circulant).is_err());
        assert!(simulate(64, 0, 0.5, 0, Method::Circulant).is_err());
        assert!(matches!(
            simulate(1 << 13, 1, 0.5, 0, Method::Cholesky),
            Err(Error::TooManyPoints { .. })
        ));
        assert!(simulate(64, 1, 1.2, 0, Method::Circulant).is_err());
    }

    #[test]
    fn eigenvalue_clamp() {
        assert_eq!(clamp_eigenvalues(&[1.0, -1e-9, 0.5]).unwrap(), vec![1.0, 0.0, 0.5]);
        assert!(matches!(clamp_eigenvalues(&[1.0, -1e-6]), Err(Error::EmbeddingFailed { .. })));
    }

    #[test]
    fn brownian_variance_at_one() {
        let s = CirculantSampler::new(1 << 10, 0.5).unwrap();
        let ends: Vec<f64> = (0..2000).map(|seed| s.sample(1, seed).unwrap().value(1 << 10)[0]).collect();
        let var = ends.iter().map(|x| x * x).sum::<f64>() / ends.len() as f64;
        assert!((var - 1.0).abs() <= 0.1, "{var}");
    }

    #[test]
    fn covariance_at_quarter_points() {
        let n = 1 << 10;
        let s = CirculantSampler::new(n, 0.7).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for seed in 0..2000 {
            let p = s.sample(1, seed).unwrap();
            xs.push(p.value(n / 4)[0]);
            ys.push(p.value(3 * n / 4)[0]);
        }
        let (cov, se) = product_stats(&xs, &ys);
        let want = 0.5 * (0.25f64.powf(1.4) + 0.75f64.powf(1.4) - 0.5f64.powf(1.4));
        assert!((cov - want).abs() <= 3.0 * se, "{cov} vs {want} (se {se})");
    }

    #[test]
    fn zscore_grid_is_symmetric_and_centred() {
        let cells = covariance_zscores(256, 0.6, Method::Circulant, 4, 600, 11).unwrap();
        assert_eq!(cells.len(), 16);
        for a in 0..4 {
            for b in 0..4 {
                let (x, y) = (&cells[4 * a + b], &cells[4 * b + a]);
                assert_eq!(x.empirical, y.empirical);
                assert!(x.z.abs() <= 4.5, "{x:?}");
            }
        }
        assert!((cells[15].expected - 1.0).abs() < 1e-15);
        assert!(covariance_zscores(256, 0.6, Method::Circulant, 0, 600, 11).is_err());
    }

    #[test]
    fn cross_coordinates_are_uncorrelated() {
        let s = CirculantSampler::new(256, 0.4).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for seed in 0..2000 {
            let p = s.sample(2, seed).unwrap();
            xs.push(p.value(128)[0]);
            ys.push(p.value(200)[1]);
        }
        let (cov, se) = product_stats(&xs, &ys);
        assert!(cov.abs() <= 4.0 * se, "{cov} (se {se})");
    }

    #[test]
    fn cholesky_matches_circulant() {
        let n = 1 << 10;
        let hurst = 0.3;
        let circ = CirculantSampler::new(n, hurst).unwrap();
        let chol = CholeskySampler::new(n, hurst).unwrap();
        let times = [n / 8, n / 2, n];
        let collect = |f: &dyn Fn(u64) -> FbmPath| -> Vec<Vec<f64>> {
            (0..2000u64)
                .map(|seed| {
                    let p = f(seed);
                    times.iter().map(|&t| p.value(t)[0]).collect()
                })
                .collect()
        };
        let a = collect(&|seed| circ.sample(1, seed).unwrap());
        let b = collect(&|seed| chol.sample(1, seed + 1_000_000).unwrap());
        for i in 0..times.len() {
            for j in 0..=i {
                let col = |v: &Vec<Vec<f64>>, k: usize| v.iter().map(|r| r[k]).collect::<Vec<_>>();
                let (ca, sa) = product_stats(&col(&a, i), &col(&a, j));
                let (cb, sb) = product_stats(&col(&b, i), &col(&b, j));
                let z = (ca - cb) / (sa * sa + sb * sb).sqrt();
                assert!(z.abs() <= 4.0, "entry ({i},{j}): {ca} vs {cb}");
            }
        }
    }

    #[test]
    fn image_cloud_examples() {
        let p = simulate(1 << 6, 2, 0.5, 3, Method::Circulant).unwrap();
        let origin = PointCloud::new(1, vec![0.0], 1e-3, "zero").unwrap();
        let img = image_cloud(&p, &origin).unwrap();
        assert_eq!(img.len(), 1);
        assert_eq!(img.point(0), &[0.0, 0.0]);

        let grid: Vec<f64> = (1..=64).map(|j| j as f64 / 64.0).collect();
        let full = PointCloud::new(1, grid, 1.0 / 64.0, "grid").unwrap();
        let img = image_cloud(&p, &full).unwrap();
        assert_eq!(img.len(), 64);
        assert_eq!(img.point(63), p.value(64));

        let outside = PointCloud::new(1, vec![0.5, 1.5], 1e-3, "bad").unwrap();
        assert!(image_cloud(&p, &outside).is_err());
    }

    #[test]
    fn cantor_image_snaps_within_half_step() {
        let n = 1 << 15;
        let e = gen_cantor(1.0 / 3.0, 7).unwrap();
        let p = simulate(n, 1, 0.7, 1, Method::Circulant).unwrap();
        let img = image_cloud(&p, &e).unwrap();
        assert_eq!(img.len(), e.len());
        for (i, &x) in e.coords().iter().enumerate() {
            let j = (x * n as f64).round();
            assert!((x - j / n as f64).abs() <= 2f64.powi(-16));
            assert!(img.coords().contains(&p.value(j as usize)[0]), "point {i}");
        }
        assert!(img.label().contains("snap<=1.52587890625e-5"));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PathCache::new(dir.path()).unwrap();
        let meta = FbmMetadata {
            hurst: 0.35,
            n: 128,
            d: 2,
            seed: 9,
            method: Method::Circulant,
        };
        assert!(cache.load(&meta).unwrap().is_none());
        let made = cache.get_or_simulate(&meta).unwrap();
        let loaded = cache.load(&meta).unwrap().unwrap();
        assert_eq!(made, loaded);
        assert_eq!(meta.key().len(), 64);
        let other = FbmMetadata { seed: 10, ..meta.clone() };
        assert_ne!(meta.key(), other.key());
    }

    #[test]
    fn method_names() {
        assert_eq!("Cholesky".parse::<Method>().unwrap(), Method::Cholesky);
        assert_eq!(Method::Circulant.to_string(), "circulant");
        assert!("wavelet".parse::<Method>().is_err());
    }
}
