//! Integrals of products of singular power kernels over the unit simplex.
//!
//! In gap coordinates `g_0 = t_1, g_i = t_{i+1} - t_i, g_k = 1 - t_k` the
//! uniform law on the simplex is Dirichlet(1, ..., 1), and each pair `(p, q)`
//! contributes `(g_p + ... + g_{q-1})^β`. Writing the gaps as normalised
//! independent unit exponentials turns the integral into
//! `E[Π_I (Σ_{i∈I} G_i)^β] / Γ(k + 1 + qβ)`. Disjoint groups of intervals
//! factorise, an interval containing all others of its group peels off as a
//! ratio of gamma functions, two crossing intervals reduce to a nested
//! one-dimensional integral, and anything else is estimated by importance
//! sampled Monte Carlo.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::Serialize;
use statrs::function::gamma::{gamma, ln_gamma};

use super::quad::exp_sinh;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMethod {
    Exact,
    Quadrature,
    MonteCarlo,
}

impl KernelMethod {
    fn combine(self, other: KernelMethod) -> KernelMethod {
        use KernelMethod::*;
        match (self, other) {
            (MonteCarlo, _) | (_, MonteCarlo) => MonteCarlo,
            (Quadrature, _) | (_, Quadrature) => Quadrature,
            _ => Exact,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelIntegral {
    pub value: f64,
    /// Absolute error estimate (a standard error for Monte Carlo).
    pub error: f64,
    pub method: KernelMethod,
}

const QUAD_TOL: f64 = 1e-13;
const MC_SAMPLES: usize = 1_000_000;
const MC_SEED: u64 = 0x5eed_0f_1a7e;

type CacheKey = (usize, Vec<(usize, usize)>, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, KernelIntegral>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, KernelIntegral>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `∫_{0<t_1<...<t_k<1} Π_{(p,q)} |t_q - t_p|^{2H-2} dt` for one-based,
/// position-disjoint pairs. Requires `H > 1/2`.
pub fn simplex_kernel_integral(
    k: usize,
    pairs: &[(usize, usize)],
    hurst: f64,
) -> Result<KernelIntegral> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(Error::Unsupported(format!(
            "kernel |t-s|^(2H-2) is not integrable for H = {hurst}"
        )));
    }
    let mut norm: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    let mut used = vec![false; k + 1];
    for &(p, q) in pairs {
        let (p, q) = (p.min(q), p.max(q));
        if p == 0 || q > k || p == q || used[p] || used[q] {
            return Err(Error::Dimension(format!(
                "pair ({p}, {q}) invalid for {k} positions"
            )));
        }
        used[p] = true;
        used[q] = true;
        norm.push((p, q));
    }
    norm.sort_unstable();
    let key = (k, norm.clone(), hurst.to_bits());
    if let Some(hit) = cache().lock().unwrap().get(&key) {
        return Ok(*hit);
    }
    let beta = 2.0 * hurst - 2.0;
    let intervals: Vec<(usize, usize)> = norm.iter().map(|&(p, q)| (p, q - 1)).collect();
    let e = gap_expectation(&intervals, beta);
    let denom = gamma(k as f64 + 1.0 + norm.len() as f64 * beta);
    let out = KernelIntegral {
        value: e.value / denom,
        error: e.error / denom,
        method: e.method,
    };
    cache().lock().unwrap().insert(key, out);
    Ok(out)
}

/// `E[Π_I (Σ_{i∈I} G_i)^β]` over inclusive gap ranges with unit exponential gaps.
fn gap_expectation(intervals: &[(usize, usize)], beta: f64) -> KernelIntegral {
    if intervals.is_empty() {
        return KernelIntegral {
            value: 1.0,
            error: 0.0,
            method: KernelMethod::Exact,
        };
    }
    let comps = components(intervals);
    if comps.len() > 1 {
        let mut value = 1.0;
        let mut rel = 0.0;
        let mut method = KernelMethod::Exact;
        for c in comps {
            let r = gap_expectation(&c, beta);
            value *= r.value;
            rel += r.error / r.value.abs();
            method = method.combine(r.method);
        }
        return KernelIntegral {
            value,
            error: rel * value.abs(),
            method,
        };
    }
    let lo = intervals.iter().map(|i| i.0).min().unwrap();
    let hi = intervals.iter().map(|i| i.1).max().unwrap();
    if let Some(top) = intervals.iter().position(|&i| i == (lo, hi)) {
        let n = (hi - lo + 1) as f64;
        let m = intervals.len() as f64;
        let mut rest = intervals.to_vec();
        rest.remove(top);
        let inner = gap_expectation(&rest, beta);
        let ratio = (ln_gamma(n + m * beta) - ln_gamma(n + (m - 1.0) * beta)).exp();
        return KernelIntegral {
            value: inner.value * ratio,
            error: inner.error * ratio,
            method: inner.method,
        };
    }
    if intervals.len() == 2 {
        return crossing_pair(intervals[0], intervals[1], beta);
    }
    importance_sampled(intervals, beta)
}

fn components(intervals: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let n = intervals.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for a in 0..n {
        for b in a + 1..n {
            let (x, y) = (intervals[a], intervals[b]);
            if x.0.max(y.0) <= x.1.min(y.1) {
                let (ra, rb) = (find(&mut label, a), find(&mut label, b));
                label[ra] = rb;
            }
        }
    }
    let mut groups: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for (i, &iv) in intervals.iter().enumerate() {
        let r = find(&mut label, i);
        groups.entry(r).or_default().push(iv);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort();
    out
}

/// Two crossing intervals `X∪S` and `S∪Y` with disjoint gap blocks `X, S, Y`:
/// condition on the shared block sum and integrate the outer blocks.
fn crossing_pair(a: (usize, usize), b: (usize, usize), beta: f64) -> KernelIntegral {
    let (a, b) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    debug_assert!(a.0 < b.0 && b.0 <= a.1 && a.1 < b.1);
    let nx = (b.0 - a.0) as f64;
    let ns = (a.1 - b.0 + 1) as f64;
    let ny = (b.1 - a.1) as f64;
    let mut inner_err: f64 = 0.0;
    let mut phi = |n: f64, g: f64| -> f64 {
        let ln_gn = ln_gamma(n);
        let r = exp_sinh(
            |x| ((g + x).ln() * beta + (n - 1.0) * x.ln() - x - ln_gn).exp(),
            QUAD_TOL,
        );
        inner_err = inner_err.max(r.error / r.value.abs().max(1e-300));
        r.value
    };
    let ln_gs = ln_gamma(ns);
    let outer = exp_sinh(
        |g| {
            let w = ((ns - 1.0) * g.ln() - g - ln_gs).exp();
            if w == 0.0 {
                return 0.0;
            }
            w * phi(nx, g) * phi(ny, g)
        },
        QUAD_TOL,
    );
    KernelIntegral {
        value: outer.value,
        error: outer.error + 2.0 * inner_err * outer.value.abs(),
        method: KernelMethod::Quadrature,
    }
}

/// Importance sampling with gamma proposals whose shapes shrink by `β` per
/// covering interval, which keeps the weights square integrable near the
/// singular faces.
fn importance_sampled(intervals: &[(usize, usize)], beta: f64) -> KernelIntegral {
    let lo = intervals.iter().map(|i| i.0).min().unwrap();
    let hi = intervals.iter().map(|i| i.1).max().unwrap();
    let gaps: Vec<usize> = (lo..=hi).collect();
    let shapes: Vec<f64> = gaps
        .iter()
        .map(|&g| {
            let cover = intervals.iter().filter(|iv| iv.0 <= g && g <= iv.1).count();
            (1.0 + beta * cover as f64).max(0.05)
        })
        .collect();
    let dists: Vec<Gamma<f64>> = shapes.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let norms: Vec<f64> = shapes.iter().map(|&a| gamma(a)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(MC_SEED);
    let mut draws = vec![0.0; gaps.len()];
    let mut samples = Vec::with_capacity(MC_SAMPLES);
    for _ in 0..MC_SAMPLES {
        let mut w = 1.0;
        for (i, d) in dists.iter().enumerate() {
            let g: f64 = rng.sample(d).max(f64::MIN_POSITIVE);
            draws[i] = g;
            w *= norms[i] * g.powf(1.0 - shapes[i]);
        }
        let mut f = 1.0;
        for iv in intervals {
            let s: f64 = draws[iv.0 - lo..=iv.1 - lo].iter().sum();
            f *= s.powf(beta);
        }
        samples.push(f * w);
    }
    let est = crate::stats::MeanEstimate::from_samples(&samples);
    KernelIntegral {
        value: est.mean,
        error: est.stderr,
        method: KernelMethod::MonteCarlo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_product_is_simplex_volume() {
        let r = simplex_kernel_integral(0, &[], 0.75).unwrap();
        assert!((r.value - 1.0).abs() < 1e-15);
        let r = simplex_kernel_integral(3, &[], 0.75).unwrap();
        assert!((r.value - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_pair_closed_forms() {
        // k = 2, pair (1,2): ∫∫_{s<t} (t-s)^β = 1/((β+1)(β+2))
        let r = simplex_kernel_integral(2, &[(1, 2)], 0.75).unwrap();
        assert!((r.value - 4.0 / 3.0).abs() < 1e-13);
        // k = 3, pair (1,3): 1/(2H(2H+1))
        let r = simplex_kernel_integral(3, &[(1, 3)], 0.75).unwrap();
        assert!((r.value - 4.0 / 15.0).abs() < 1e-13);
        assert_eq!(r.method, KernelMethod::Exact);
    }

    #[test]
    fn crossing_completes_single_letter_identity() {
        // the three matchings of four equal letters sum to E[B^4]/4! / γ^2
        for h in [0.55, 0.6, 0.75, 0.9] {
            let g = h * (2.0 * h - 1.0);
            let a = simplex_kernel_integral(4, &[(1, 2), (3, 4)], h).unwrap();
            let b = simplex_kernel_integral(4, &[(1, 4), (2, 3)], h).unwrap();
            let c = simplex_kernel_integral(4, &[(1, 3), (2, 4)], h).unwrap();
            assert_eq!(c.method, KernelMethod::Quadrature);
            let total = g * g * (a.value + b.value + c.value);
            assert!((total - 0.125).abs() < 1e-10, "H = {h}: {total}");
        }
    }

    #[test]
    fn importance_sampling_agrees_with_identity() {
        // six equal letters: 15 matchings sum to 15/720 / γ^3
        let h = 0.8;
        let g = h * (2.0 * h - 1.0);
        let mut total = 0.0;
        let mut err2 = 0.0;
        for m in super::super::perfect_matchings(&[1, 2, 3, 4, 5, 6]) {
            let r = simplex_kernel_integral(6, &m, h).unwrap();
            total += r.value;
            err2 += r.error * r.error;
        }
        let expected = 15.0 / 720.0 / g.powi(3);
        assert!((total - expected).abs() < 4.0 * err2.sqrt() + 1e-9 * expected);
    }

    #[test]
    fn rejects_rough_regime_and_bad_pairs() {
        assert!(simplex_kernel_integral(2, &[(1, 2)], 0.5).is_err());
        assert!(simplex_kernel_integral(2, &[(1, 3)], 0.7).is_err());
        assert!(simplex_kernel_integral(3, &[(1, 2), (2, 3)], 0.7).is_err());
    }
}
