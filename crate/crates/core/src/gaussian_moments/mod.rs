//! Expected iterated integrals `E ∫_{Δ^k} dB^α` of fractional Brownian motion,
//! with `dB^0 = dt`, over the simplex `0 < t_1 < ... < t_k < 1`.
//!
//! For `H > 1/2` the expectation is `γ_H^{q} Σ_M ∫_{Δ^k} Π_{(p,r)∈M} |t_r -
//! t_p|^{2H-2}` summed over perfect matchings `M` of the nonzero positions
//! that pair equal letters, where `q = |α|/2` and `γ_H = H(2H - 1)`.

mod quad;
mod signature;
mod simplex;

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::symexpr::MomentMethod;

pub use quad::{exp_sinh, tanh_sinh, QuadResult};
pub use signature::{
    path_signature, positivity_check, simulate_expected_words, simulate_second_moments,
    word_integral, PositivityReport, Signature, SimSettings, WordEstimate,
};
pub use simplex::{simplex_kernel_integral, KernelIntegral, KernelMethod};

pub(crate) use signature::per_path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    /// Odd number of noise letters.
    OddZero,
    /// Closed form (deterministic words, single-letter words, `H = 1/2`).
    ClosedForm,
    /// Pairing formula with exact or quadrature kernel integrals.
    Pairing,
    /// Pairing formula with at least one sampled kernel integral.
    PairingSampled,
    /// Path simulation.
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentResult {
    pub value: f64,
    pub error_estimate: f64,
    pub method: MomentSource,
    /// Valid matchings as one-based position pairs.
    pub matchings: Vec<Vec<(usize, usize)>>,
}

#[derive(Clone, Copy, Debug)]
pub struct MomentOptions {
    pub method: MomentMethod,
    pub tol: f64,
    pub mc_paths: usize,
    pub mc_steps: usize,
    pub seed: u64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            method: MomentMethod::Auto,
            tol: 1e-6,
            mc_paths: 20_000,
            mc_steps: 256,
            seed: 0,
        }
    }
}

/// `γ_H = H(2H - 1)`.
pub fn gamma_h(hurst: f64) -> f64 {
    hurst * (2.0 * hurst - 1.0)
}

/// All perfect matchings of the given positions, as sorted pair lists.
pub fn perfect_matchings(positions: &[usize]) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        let first = rest[0];
        for k in 1..rest.len() {
            let mut remaining = rest[1..].to_vec();
            let partner = remaining.remove(k - 1);
            cur.push((first, partner));
            rec(&remaining, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if positions.len() % 2 == 0 {
        rec(positions, &mut Vec::new(), &mut out);
    }
    out
}

/// Perfect matchings of the nonzero positions of `α` pairing equal letters.
pub fn valid_matchings(alpha: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut by_letter: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0 {
            by_letter.entry(a).or_default().push(i + 1);
        }
    }
    let mut letters: Vec<_> = by_letter.into_iter().collect();
    letters.sort();
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for (_, pos) in letters {
        let ms = perfect_matchings(&pos);
        if ms.is_empty() {
            return Vec::new();
        }
        let mut next = Vec::with_capacity(out.len() * ms.len());
        for base in &out {
            for m in &ms {
                let mut v = base.clone();
                v.extend_from_slice(m);
                v.sort_unstable();
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Closed forms: deterministic words, words in a single noise letter, and `H = 1/2`.
pub fn closed_form(alpha: &[usize], hurst: f64) -> Option<f64> {
    let k = alpha.len();
    let noise: Vec<usize> = alpha.iter().copied().filter(|&a| a != 0).collect();
    if noise.is_empty() {
        return Some(1.0 / factorial(k));
    }
    if noise.len() == k && noise.iter().all(|&a| a == noise[0]) {
        // ∫ dB^{(i,...,i)} = (B^i_1)^k / k!
        let q = k / 2;
        return Some(1.0 / (2f64.powi(q as i32) * factorial(q)));
    }
    if hurst == 0.5 {
        return Some(brownian_expected_word(alpha));
    }
    None
}

/// Expected Stratonovich signature of `(t, W)`: tile the word by blocks
/// `0` (weight 1) and `ii` (weight 1/2), divided by the factorial of the
/// number of blocks.
pub fn brownian_expected_word(alpha: &[usize]) -> f64 {
    // f[pos][blocks]
    let k = alpha.len();
    let mut f = vec![vec![0.0; k + 1]; k + 1];
    f[0][0] = 1.0;
    for pos in 0..k {
        for b in 0..=pos {
            let v = f[pos][b];
            if v == 0.0 {
                continue;
            }
            if alpha[pos] == 0 {
                f[pos + 1][b + 1] += v;
            } else if pos + 1 < k && alpha[pos + 1] == alpha[pos] {
                f[pos + 2][b + 1] += 0.5 * v;
            }
        }
    }
    (0..=k).map(|b| f[k][b] / factorial(b)).sum()
}

/// `E ∫_{Δ^k} dB^α` on `[0, 1]`.
pub fn expected_iterated_integral(
    alpha: &[usize],
    hurst: f64,
    opts: &MomentOptions,
) -> Result<MomentResult> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidSpec(format!("hurst must lie in (0, 1), got {hurst}")));
    }
    let noise = alpha.iter().filter(|&&a| a != 0).count();
    let matchings = valid_matchings(alpha);
    if noise % 2 == 1 {
        return Ok(MomentResult {
            value: 0.0,
            error_estimate: 0.0,
            method: MomentSource::OddZero,
            matchings,
        });
    }
    if opts.method != MomentMethod::Mc {
        if let Some(v) = closed_form(alpha, hurst) {
            return Ok(MomentResult {
                value: v,
                error_estimate: 0.0,
                method: MomentSource::ClosedForm,
                matchings,
            });
        }
    }
    let use_pairing = match opts.method {
        MomentMethod::Pairing => {
            if hurst <= 0.5 {
                return Err(Error::Unsupported(format!(
                    "pairing formula needs H > 1/2, got {hurst}"
                )));
            }
            true
        }
        MomentMethod::Mc => false,
        MomentMethod::Auto => hurst > 0.5,
    };
    if use_pairing {
        let (value, error, sampled) = pairing_sum(alpha, hurst, &matchings)?;
        return Ok(MomentResult {
            value,
            error_estimate: error,
            method: if sampled {
                MomentSource::PairingSampled
            } else {
                MomentSource::Pairing
            },
            matchings,
        });
    }
    let est = simulate_expected_words(
        &[alpha.to_vec()],
        hurst,
        SimSettings {
            paths: opts.mc_paths,
            steps: opts.mc_steps,
            seed: opts.seed,
        },
    )?;
    Ok(MomentResult {
        value: est[0].mean,
        error_estimate: est[0].stderr,
        method: MomentSource::MonteCarlo,
        matchings,
    })
}

fn pairing_sum(
    alpha: &[usize],
    hurst: f64,
    matchings: &[Vec<(usize, usize)>],
) -> Result<(f64, f64, bool)> {
    let k = alpha.len();
    let q = alpha.iter().filter(|&&a| a != 0).count() / 2;
    let scale = gamma_h(hurst).powi(q as i32);
    let mut value = 0.0;
    let mut err = 0.0;
    let mut sampled = false;
    for m in matchings {
        let r = simplex_kernel_integral(k, m, hurst)?;
        value += r.value;
        err += r.error;
        sampled |= r.method == KernelMethod::MonteCarlo;
    }
    Ok((scale * value, scale * err, sampled))
}

/// All shuffles of two words, with multiplicity.
pub fn shuffles(a: &[usize], b: &[usize]) -> Vec<Vec<usize>> {
    if a.is_empty() {
        return vec![b.to_vec()];
    }
    if b.is_empty() {
        return vec![a.to_vec()];
    }
    let mut out = Vec::new();
    for mut w in shuffles(&a[..a.len() - 1], b) {
        w.push(a[a.len() - 1]);
        out.push(w);
    }
    for mut w in shuffles(a, &b[..b.len() - 1]) {
        w.push(b[b.len() - 1]);
        out.push(w);
    }
    out
}

/// `E |∫_{Δ^k} dB^α|^2` on `[0, 1]`. The square is expanded into the
/// shuffle of `α` with itself, which splits the product of two simplices
/// into the simplices of its interleavings.
pub fn second_moment(alpha: &[usize], hurst: f64, opts: &MomentOptions) -> Result<MomentResult> {
    let k = alpha.len();
    let noise: Vec<usize> = alpha.iter().copied().filter(|&a| a != 0).collect();
    if opts.method != MomentMethod::Mc {
        let single = noise.len() == k && noise.iter().all(|&a| a == noise.first().copied().unwrap_or(0));
        if noise.is_empty() || single {
            // (t^k/k!)^2 or E[B^{2k}]/(k!)^2
            let num = if noise.is_empty() {
                1.0
            } else {
                (1..=k).map(|i| (2 * i - 1) as f64).product()
            };
            return Ok(MomentResult {
                value: num / (factorial(k) * factorial(k)),
                error_estimate: 0.0,
                method: MomentSource::ClosedForm,
                matchings: Vec::new(),
            });
        }
    }
    if opts.method == MomentMethod::Mc || (opts.method == MomentMethod::Auto && hurst <= 0.5) {
        let est = simulate_second_moments(
            &[alpha.to_vec()],
            hurst,
            SimSettings {
                paths: opts.mc_paths,
                steps: opts.mc_steps,
                seed: opts.seed,
            },
        )?;
        return Ok(MomentResult {
            value: est[0].mean,
            error_estimate: est[0].stderr,
            method: MomentSource::MonteCarlo,
            matchings: Vec::new(),
        });
    }
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for w in shuffles(alpha, alpha) {
        *counts.entry(w).or_default() += 1;
    }
    let mut words: Vec<_> = counts.into_iter().collect();
    words.sort();
    let inner = MomentOptions {
        method: opts.method,
        ..*opts
    };
    let mut value = 0.0;
    let mut err = 0.0;
    let mut method = MomentSource::ClosedForm;
    for (w, c) in words {
        let r = expected_iterated_integral(&w, hurst, &inner)?;
        value += c as f64 * r.value;
        err += c as f64 * r.error_estimate;
        method = match (method, r.method) {
            (_, MomentSource::PairingSampled) | (MomentSource::PairingSampled, _) => {
                MomentSource::PairingSampled
            }
            (_, MomentSource::MonteCarlo) | (MomentSource::MonteCarlo, _) => MomentSource::MonteCarlo,
            (_, MomentSource::Pairing) | (MomentSource::Pairing, _) => MomentSource::Pairing,
            _ => MomentSource::ClosedForm,
        };
    }
    Ok(MomentResult {
        value,
        error_estimate: err,
        method,
        matchings: Vec::new(),
    })
}

/// Splits `α` around its one-based position `j`, which must carry letter `i`:
/// the Malliavin derivative `D^i_s ∫ dB^α` is a sum over such positions of
/// the inner integral of `α_{1..j-1}` up to `s` times the outer integral of
/// `α_{j+1..}` from `s`.
pub fn derivative_split(alpha: &[usize], i: usize, j: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if j == 0 || j > alpha.len() {
        return Err(Error::Dimension(format!(
            "position {j} outside 1..={}",
            alpha.len()
        )));
    }
    if alpha[j - 1] != i {
        return Err(Error::Dimension(format!(
            "position {j} carries letter {}, not {i}",
            alpha[j - 1]
        )));
    }
    Ok((alpha[..j - 1].to_vec(), alpha[j..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairing() -> MomentOptions {
        MomentOptions {
            method: MomentMethod::Pairing,
            ..MomentOptions::default()
        }
    }

    #[test]
    fn matching_counts() {
        assert_eq!(valid_matchings(&[1, 1, 1, 1]).len(), 3);
        assert_eq!(valid_matchings(&[1, 2, 1, 2]).len(), 1);
        assert_eq!(valid_matchings(&[1, 0, 1]), vec![vec![(1, 3)]]);
        assert!(valid_matchings(&[1, 2]).is_empty());
        assert_eq!(valid_matchings(&[0, 0]), vec![Vec::<(usize, usize)>::new()]);
        assert_eq!(perfect_matchings(&[1, 2, 3, 4, 5, 6]).len(), 15);
    }

    #[test]
    fn reference_values() {
        let h = 0.75;
        let v = |a: &[usize]| expected_iterated_integral(a, h, &pairing()).unwrap().value;
        assert!((v(&[1, 1]) - 0.5).abs() < 1e-12);
        assert!((v(&[1, 1, 1, 1]) - 0.125).abs() < 1e-12);
        assert_eq!(v(&[1, 2]), 0.0);
        assert!((v(&[1, 0, 1]) - 0.1).abs() < 1e-12);
        assert!((v(&[0, 0]) - 0.5).abs() < 1e-15);
        assert_eq!(v(&[1, 0, 0]), 0.0);
    }

    #[test]
    fn brownian_limit_matches_tiling() {
        assert!((brownian_expected_word(&[1, 1]) - 0.5).abs() < 1e-15);
        assert!((brownian_expected_word(&[1, 0, 1])).abs() < 1e-15);
        // (1,1,0): blocks 11 then 0 -> 1/2 * 1 / 2!
        assert!((brownian_expected_word(&[1, 1, 0]) - 0.25).abs() < 1e-15);
        assert!((brownian_expected_word(&[1, 1, 2, 2]) - 0.125).abs() < 1e-15);
        // the pairing value approaches the Brownian one as H decreases to 1/2
        let near = expected_iterated_integral(&[1, 1, 0], 0.5001, &pairing()).unwrap();
        assert!((near.value - 0.25).abs() < 1e-3);
    }

    #[test]
    fn second_moment_reference_values() {
        for h in [0.6, 0.75, 0.9] {
            let m = |a: &[usize]| second_moment(a, h, &pairing()).unwrap().value;
            assert!((m(&[0]) - 1.0).abs() < 1e-12);
            assert!((m(&[1]) - 1.0).abs() < 1e-12);
            assert!((m(&[1, 1]) - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn second_moment_general_route_matches_closed_form() {
        // bypass the closed form by going through the shuffle expansion
        let h = 0.7;
        let opts = pairing();
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for w in shuffles(&[1, 1], &[1, 1]) {
            *counts.entry(w).or_default() += 1;
        }
        let mut total = 0.0;
        for (w, c) in counts {
            let g = gamma_h(h).powi(2);
            let s: f64 = valid_matchings(&w)
                .iter()
                .map(|m| simplex_kernel_integral(w.len(), m, h).unwrap().value)
                .sum();
            total += c as f64 * g * s;
        }
        assert!((total - 0.75).abs() < 1e-9);
        let mixed = second_moment(&[1, 0], h, &opts).unwrap();
        assert_eq!(mixed.method, MomentSource::Pairing);
        assert!(mixed.value > 0.0);
    }

    #[test]
    fn shuffle_counts() {
        assert_eq!(shuffles(&[1, 2], &[3, 4]).len(), 6);
        assert_eq!(shuffles(&[1, 2, 3], &[1, 2, 3]).len(), 20);
    }

    #[test]
    fn derivative_split_positions() {
        assert_eq!(
            derivative_split(&[1, 0, 2, 1], 2, 3).unwrap(),
            (vec![1, 0], vec![1])
        );
        assert!(derivative_split(&[1, 0], 1, 2).is_err());
        assert!(derivative_split(&[1, 0], 1, 3).is_err());
    }

    #[test]
    fn pairing_rejected_in_rough_regime() {
        assert!(expected_iterated_integral(&[1, 0, 1], 0.4, &pairing()).is_err());
        // closed forms stay available
        let r = expected_iterated_integral(&[1, 1], 0.4, &pairing()).unwrap();
        assert_eq!(r.value, 0.5);
    }
}
