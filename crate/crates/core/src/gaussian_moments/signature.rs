//! Iterated integrals of piecewise-linear paths and Monte Carlo estimators
//! built on them. Channel 0 is time, channel `j >= 1` is `B^j`, so a noise
//! word indexes the signature directly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm_sim::{FbmPath, FbmSampler};
use crate::stats::MeanEstimate;

/// Truncated signature; level `k` holds `dim^k` coefficients with the first
/// letter most significant.
#[derive(Clone, Debug)]
pub struct Signature {
    pub dim: usize,
    pub depth: usize,
    levels: Vec<Vec<f64>>,
}

impl Signature {
    pub fn identity(dim: usize, depth: usize) -> Signature {
        let mut levels = Vec::with_capacity(depth + 1);
        levels.push(vec![1.0]);
        for k in 1..=depth {
            levels.push(vec![0.0; dim.pow(k as u32)]);
        }
        Signature { dim, depth, levels }
    }

    /// Right-multiplies by the signature of a straight segment with increment `v`.
    pub fn push_segment(&mut self, v: &[f64], powers: &mut Vec<Vec<f64>>) {
        // powers[j] = v^{⊗j} / j!
        powers.resize(self.depth + 1, Vec::new());
        powers[0] = vec![1.0];
        for j in 1..=self.depth {
            let (head, tail) = powers.split_at_mut(j);
            let prev = &head[j - 1];
            let cur = &mut tail[0];
            cur.clear();
            let inv = 1.0 / j as f64;
            for &p in prev.iter() {
                for &x in v {
                    cur.push(p * x * inv);
                }
            }
        }
        for k in (1..=self.depth).rev() {
            let (lower, upper) = self.levels.split_at_mut(k);
            let target = &mut upper[0];
            for (i, s_i) in lower.iter().enumerate() {
                let p = &powers[k - i];
                let stride = p.len();
                for (a, &sa) in s_i.iter().enumerate() {
                    if sa == 0.0 {
                        continue;
                    }
                    let row = &mut target[a * stride..(a + 1) * stride];
                    for (t, &pb) in row.iter_mut().zip(p.iter()) {
                        *t += sa * pb;
                    }
                }
            }
        }
    }

    pub fn coefficient(&self, word: &[usize]) -> f64 {
        let k = word.len();
        if k > self.depth {
            return f64::NAN;
        }
        let idx = word.iter().fold(0usize, |acc, &c| acc * self.dim + c);
        self.levels[k][idx]
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }
}

/// Time-augmented signature of an fBm path between grid indices `s < t`.
pub fn path_signature(path: &FbmPath, s: usize, t: usize, depth: usize) -> Signature {
    let dim = path.dim + 1;
    let mut sig = Signature::identity(dim, depth);
    let mut powers = Vec::new();
    let mut v = vec![0.0; dim];
    for k in s..t {
        v[0] = path.times[k + 1] - path.times[k];
        for c in 0..path.dim {
            v[c + 1] = path.value(k + 1, c) - path.value(k, c);
        }
        sig.push_segment(&v, &mut powers);
    }
    sig
}

/// Iterated integral of a single word along the time-augmented path between
/// grid indices `s < t`, by prefix dynamic programming.
pub fn word_integral(path: &FbmPath, word: &[usize], s: usize, t: usize) -> f64 {
    let k = word.len();
    let mut z = vec![0.0; k + 1];
    z[0] = 1.0;
    let mut inc = vec![0.0; k];
    for step in s..t {
        for (r, &c) in word.iter().enumerate() {
            inc[r] = if c == 0 {
                path.times[step + 1] - path.times[step]
            } else {
                path.value(step + 1, c - 1) - path.value(step, c - 1)
            };
        }
        for p in (1..=k).rev() {
            // sum_{i<p} z_i * prod_{r=i+1..p} inc / (p-i)!
            let mut acc = 0.0;
            let mut prod = 1.0;
            for i in (0..p).rev() {
                prod *= inc[i] / (p - i) as f64;
                acc += z[i] * prod;
            }
            z[p] += acc;
        }
    }
    z[k]
}

#[derive(Clone, Debug, Serialize)]
pub struct WordEstimate {
    pub word: Vec<usize>,
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo settings for path-simulation estimates.
#[derive(Clone, Copy, Debug)]
pub struct SimSettings {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

fn noise_dim(words: &[Vec<usize>]) -> usize {
    words
        .iter()
        .flat_map(|w| w.iter().copied())
        .max()
        .unwrap_or(0)
}

/// Per-path values of `g(path)` over paths `0..paths`, in path order.
pub(crate) fn per_path<T: Send, F>(paths: usize, f: F) -> Vec<T>
where
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..paths as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..paths as u64).map(f).collect()
    }
}

/// `E ∫_{Δ^k} dB^w` for each word, estimated from piecewise-linear
/// interpolations of simulated paths on `[0, 1]`.
pub fn simulate_expected_words(
    words: &[Vec<usize>],
    hurst: f64,
    sim: SimSettings,
) -> Result<Vec<WordEstimate>> {
    let samples = simulate_word_samples(words, hurst, sim, |x| x)?;
    Ok(words
        .iter()
        .zip(samples)
        .map(|(w, est)| WordEstimate {
            word: w.clone(),
            mean: est.mean,
            stderr: est.stderr,
        })
        .collect())
}

/// Same as [`simulate_expected_words`] for `E |∫ dB^w|^2`.
pub fn simulate_second_moments(
    words: &[Vec<usize>],
    hurst: f64,
    sim: SimSettings,
) -> Result<Vec<WordEstimate>> {
    let samples = simulate_word_samples(words, hurst, sim, |x| x * x)?;
    Ok(words
        .iter()
        .zip(samples)
        .map(|(w, est)| WordEstimate {
            word: w.clone(),
            mean: est.mean,
            stderr: est.stderr,
        })
        .collect())
}

fn simulate_word_samples(
    words: &[Vec<usize>],
    hurst: f64,
    sim: SimSettings,
    transform: impl Fn(f64) -> f64 + Sync + Send,
) -> Result<Vec<MeanEstimate>> {
    if sim.paths < 2 {
        return Err(Error::InvalidSpec("need at least two paths".into()));
    }
    let dim = noise_dim(words);
    let depth = words.iter().map(|w| w.len()).max().unwrap_or(0);
    let sampler = FbmSampler::new(hurst, sim.steps, 1.0)?;
    let use_signature = words.len() > 4;
    let per: Vec<Vec<f64>> = per_path(sim.paths, |p| {
        let path = sampler.sample_indexed(dim.max(1), sim.seed, p);
        if use_signature {
            let sig = path_signature(&path, 0, sim.steps, depth);
            words.iter().map(|w| transform(sig.coefficient(w))).collect()
        } else {
            words
                .iter()
                .map(|w| transform(word_integral(&path, w, 0, sim.steps)))
                .collect()
        }
    });
    Ok((0..words.len())
        .map(|i| {
            let col: Vec<f64> = per.iter().map(|r| r[i]).collect();
            MeanEstimate::from_samples(&col)
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityReport {
    pub mean: f64,
    pub stderr: f64,
    /// True when the estimate lies more than three standard errors below zero.
    pub flagged: bool,
}

/// Estimates `E Π_i ∫_{Δ([s_i, t_i])} dB^{α_i}` for factors given as
/// `(word, s_i, t_i)` with `0 <= s_i < t_i <= 1` on a grid of `steps`.
pub fn positivity_check(
    factors: &[(Vec<usize>, f64, f64)],
    hurst: f64,
    sim: SimSettings,
) -> Result<PositivityReport> {
    let dim = factors
        .iter()
        .flat_map(|f| f.0.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    let sampler = FbmSampler::new(hurst, sim.steps, 1.0)?;
    let idx = |t: f64| ((t * sim.steps as f64).round() as usize).min(sim.steps);
    let vals: Vec<f64> = per_path(sim.paths, |p| {
        let path = sampler.sample_indexed(dim, sim.seed, p);
        factors
            .iter()
            .map(|(w, s, t)| word_integral(&path, w, idx(*s), idx(*t)))
            .product()
    });
    let est = MeanEstimate::from_samples(&vals);
    Ok(PositivityReport {
        mean: est.mean,
        stderr: est.stderr,
        flagged: est.mean < -3.0 * est.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm_sim::sample_fbm;

    #[test]
    fn signature_matches_word_integrals() {
        let p = sample_fbm(0.6, 40, 2, 1.0, 5).unwrap();
        let sig = path_signature(&p, 3, 37, 4);
        for w in [vec![1], vec![0, 2], vec![1, 2, 1], vec![2, 0, 1, 1], vec![0, 0, 0]] {
            let a = sig.coefficient(&w);
            let b = word_integral(&p, &w, 3, 37);
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{w:?}");
        }
    }

    #[test]
    fn single_letter_words_are_powers() {
        let p = sample_fbm(0.4, 64, 1, 1.0, 1).unwrap();
        let b = p.value(64, 0);
        for k in 1..=5usize {
            let w = vec![1; k];
            let exact = b.powi(k as i32) / (1..=k).product::<usize>() as f64;
            assert!((word_integral(&p, &w, 0, 64) - exact).abs() < 1e-12);
        }
        let t = word_integral(&p, &[0, 0], 0, 64);
        assert!((t - 0.5).abs() < 1e-14);
    }

    #[test]
    fn chen_identity_for_signatures() {
        let p = sample_fbm(0.7, 30, 2, 1.0, 2).unwrap();
        let whole = path_signature(&p, 0, 30, 3);
        let left = path_signature(&p, 0, 11, 3);
        let right = path_signature(&p, 11, 30, 3);
        let w = [1, 0, 2];
        let chen: f64 = (0..=3)
            .map(|i| left.coefficient(&w[..i]) * right.coefficient(&w[i..]))
            .sum();
        assert!((whole.coefficient(&w) - chen).abs() < 1e-12);
    }
}
