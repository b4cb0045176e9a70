//! Exact sampling of fractional Brownian motion on uniform grids and the
//! iterated integrals (areas) of its piecewise-linear interpolation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};

/// Derives the seed of path `index` from a master seed (splitmix64 finaliser).
pub fn path_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed(master, index))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocov(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Clone)]
enum Method {
    Circulant {
        /// `sqrt(lambda_k / M)` for the `M = 2N` circulant eigenvalues.
        scale: Arc<Vec<f64>>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        /// Row-major lower factor of the `N x N` noise covariance.
        lower: Arc<Vec<f64>>,
    },
}

/// Reusable sampler for fBm on `N` uniform steps over `[0, T]`.
#[derive(Clone)]
pub struct FbmSampler {
    hurst: f64,
    steps: usize,
    horizon: f64,
    method: Method,
}

impl FbmSampler {
    /// Circulant embedding with a dense Cholesky fallback when the embedding
    /// has a materially negative eigenvalue.
    pub fn new(hurst: f64, steps: usize, horizon: f64) -> Result<FbmSampler> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidSpec(format!("hurst must lie in (0, 1), got {hurst}")));
        }
        if steps == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidSpec("steps and horizon must be positive".into()));
        }
        let method = match circulant(hurst, steps) {
            Ok(m) => m,
            Err(_) => cholesky(hurst, steps)?,
        };
        Ok(FbmSampler {
            hurst,
            steps,
            horizon,
            method,
        })
    }

    /// Forces the dense factorisation; used to cross-check the embedding.
    pub fn new_cholesky(hurst: f64, steps: usize, horizon: f64) -> Result<FbmSampler> {
        Ok(FbmSampler {
            hurst,
            steps,
            horizon,
            method: cholesky(hurst, steps)?,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn uses_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    /// Fills `out[c]` (length `N` each) with independent noise increments.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Vec<f64>]) {
        let n = self.steps;
        let dt_h = (self.horizon / n as f64).powf(self.hurst);
        match &self.method {
            Method::Circulant { scale, fft } => {
                let m = 2 * n;
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                let mut c = 0;
                while c < out.len() {
                    for (b, s) in buf.iter_mut().zip(scale.iter()) {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        *b = Complex64::new(re * s, im * s);
                    }
                    fft.process(&mut buf);
                    fill(&mut out[c], n, |k| buf[k].re * dt_h);
                    if c + 1 < out.len() {
                        fill(&mut out[c + 1], n, |k| buf[k].im * dt_h);
                    }
                    c += 2;
                }
            }
            Method::Cholesky { lower } => {
                for o in out.iter_mut() {
                    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    fill(o, n, |i| {
                        let row = &lower[i * n..i * n + i + 1];
                        row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() * dt_h
                    });
                }
            }
        }
    }

    /// Samples a `dim`-dimensional path with independent components.
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> FbmPath {
        let mut incs = vec![Vec::new(); dim];
        self.sample_increments(rng, &mut incs);
        FbmPath::from_increments(self.horizon, self.hurst, &incs)
    }

    /// Path number `index` of the stream defined by `master`.
    pub fn sample_indexed(&self, dim: usize, master: u64, index: u64) -> FbmPath {
        self.sample(dim, &mut path_rng(master, index))
    }
}

fn fill(out: &mut Vec<f64>, n: usize, f: impl Fn(usize) -> f64) {
    out.clear();
    out.extend((0..n).map(f));
}

fn circulant(hurst: f64, n: usize) -> Result<Method> {
    let m = 2 * n;
    let mut row: Vec<Complex64> = (0..m)
        .map(|k| {
            let lag = if k <= n { k } else { m - k };
            Complex64::new(fgn_autocov(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let max = row.iter().map(|c| c.re).fold(0.0f64, f64::max);
    let mut scale = Vec::with_capacity(m);
    for (k, c) in row.iter().enumerate() {
        let lam = c.re;
        if lam < -1e-10 * max.max(1.0) {
            return Err(Error::NotPsd { index: k, value: lam });
        }
        scale.push((lam.max(0.0) / m as f64).sqrt());
    }
    Ok(Method::Circulant {
        scale: Arc::new(scale),
        fft,
    })
}

fn cholesky(hurst: f64, n: usize) -> Result<Method> {
    let cov: Vec<f64> = (0..n).map(|k| fgn_autocov(hurst, k)).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = cov[i - j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::NotPsd { index: i, value: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(Method::Cholesky { lower: Arc::new(l) })
}

/// Sampled path on a uniform grid, values stored row-major `(N+1) x d`.
#[derive(Clone, Debug, Serialize)]
pub struct FbmPath {
    pub hurst: f64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl FbmPath {
    pub fn from_increments(horizon: f64, hurst: f64, incs: &[Vec<f64>]) -> FbmPath {
        let dim = incs.len();
        let n = incs.first().map_or(0, |v| v.len());
        let mut values = vec![0.0; (n + 1) * dim];
        for (c, inc) in incs.iter().enumerate() {
            let mut acc = 0.0;
            for (k, dx) in inc.iter().enumerate() {
                acc += dx;
                values[(k + 1) * dim + c] = acc;
            }
        }
        FbmPath {
            hurst,
            dim,
            times: (0..=n).map(|k| horizon * k as f64 / n as f64).collect(),
            values,
        }
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn value(&self, k: usize, c: usize) -> f64 {
        self.values[k * self.dim + c]
    }

    /// Component `c` as a standalone series.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.value(k, c)).collect()
    }

    /// The path `s -> c^H B_{s/c}` on `[0, cT]`, equal in law to the original.
    pub fn rescaled(&self, c: f64) -> FbmPath {
        let f = c.powf(self.hurst);
        FbmPath {
            hurst: self.hurst,
            dim: self.dim,
            times: self.times.iter().map(|t| t * c).collect(),
            values: self.values.iter().map(|v| v * f).collect(),
        }
    }

    /// `x2_{st}(i, j) = ∫_s^t (x^i_u - x^i_s) dx^j_u` of the piecewise-linear
    /// interpolation between grid indices `s <= t`, row-major `d x d`.
    pub fn area_between(&self, s: usize, t: usize) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        let xs = self.at(s).to_vec();
        for k in s..t {
            let x0 = self.at(k);
            let x1 = self.at(k + 1);
            for i in 0..d {
                let di = x1[i] - x0[i];
                let base = x0[i] - xs[i];
                for j in 0..d {
                    let dj = x1[j] - x0[j];
                    a[i * d + j] += base * dj + 0.5 * di * dj;
                }
            }
        }
        a
    }

    /// Areas over consecutive blocks of `block` grid steps.
    pub fn levy_area(&self, block: usize) -> Result<AreaProcess> {
        let n = self.steps();
        if block == 0 || n % block != 0 {
            return Err(Error::Dimension(format!(
                "block size {block} does not divide {n} steps"
            )));
        }
        let blocks = n / block;
        let mut areas = Vec::with_capacity(blocks * self.dim * self.dim);
        for b in 0..blocks {
            areas.extend(self.area_between(b * block, (b + 1) * block));
        }
        Ok(AreaProcess {
            dim: self.dim,
            block,
            areas,
        })
    }
}

/// Areas of consecutive coarse blocks, each a row-major `d x d` matrix.
#[derive(Clone, Debug)]
pub struct AreaProcess {
    pub dim: usize,
    /// Fine steps per coarse block.
    pub block: usize,
    areas: Vec<f64>,
}

impl AreaProcess {
    /// Number of coarse blocks.
    pub fn blocks(&self) -> usize {
        self.areas.len() / (self.dim * self.dim)
    }

    pub fn block(&self, b: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.areas[b * s..(b + 1) * s]
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.block(b)[i * self.dim + j]
    }
}

/// Samples one path with its own seed.
pub fn sample_fbm(hurst: f64, steps: usize, dim: usize, horizon: f64, seed: u64) -> Result<FbmPath> {
    let sampler = FbmSampler::new(hurst, steps, horizon)?;
    Ok(sampler.sample(dim, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autocov_at_half_is_white() {
        assert!((fgn_autocov(0.5, 0) - 1.0).abs() < 1e-15);
        assert!(fgn_autocov(0.5, 3).abs() < 1e-15);
        assert!(fgn_autocov(0.75, 1) > 0.0);
        assert!(fgn_autocov(0.3, 1) < 0.0);
    }

    #[test]
    fn embedding_is_psd_over_range() {
        for h in [0.1, 0.3, 0.45, 0.5, 0.6, 0.75, 0.9, 0.99] {
            for n in [1, 2, 7, 64, 1000] {
                assert!(FbmSampler::new(h, n, 1.0).unwrap().uses_circulant(), "{h} {n}");
            }
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let s = FbmSampler::new(0.7, 32, 1.0).unwrap();
        let a = s.sample_indexed(3, 42, 5);
        let b = s.sample_indexed(3, 42, 5);
        let c = s.sample_indexed(3, 42, 6);
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
        assert_eq!(a.value(0, 2), 0.0);
    }

    #[test]
    fn area_symmetric_part_and_chen() {
        let p = sample_fbm(0.4, 64, 2, 1.0, 9).unwrap();
        let a = p.area_between(8, 40);
        for i in 0..2 {
            for j in 0..2 {
                let sym = 0.5 * (a[i * 2 + j] + a[j * 2 + i]);
                let di = p.value(40, i) - p.value(8, i);
                let dj = p.value(40, j) - p.value(8, j);
                assert!((sym - 0.5 * di * dj).abs() < 1e-12);
            }
        }
        let left = p.area_between(8, 21);
        let right = p.area_between(21, 40);
        for i in 0..2 {
            for j in 0..2 {
                let di = p.value(21, i) - p.value(8, i);
                let dj = p.value(40, j) - p.value(21, j);
                let chen = left[i * 2 + j] + right[i * 2 + j] + di * dj;
                assert!((a[i * 2 + j] - chen).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_must_divide_grid() {
        let p = sample_fbm(0.6, 12, 1, 1.0, 0).unwrap();
        assert!(p.levy_area(5).is_err());
        assert_eq!(p.levy_area(4).unwrap().blocks(), 3);
    }
}
