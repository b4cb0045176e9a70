//! Monte Carlo estimates of `P_t f(a)`, remainder-decay fits against the
//! expansion, and the acceptance suite.

mod suite;

pub use suite::{
    run_suite, CriterionResult, Metric, Scale, SuiteConfig, SuiteReport, Tolerances, CRITERIA,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansion_engine::{Expansion, ExpansionPlan, MomentProvider};
use crate::fbm_sim::{FbmPath, FbmSampler};
use crate::gaussian_moments::per_path;
use crate::sde_solver::{solve, VectorFields, DEFAULT_BOUND};
use crate::stats::{linear_fit, MeanEstimate};
use crate::symexpr::{Compiled, Expr, McSettings, Scheme, SdeSpec};

/// Estimate of `E f(X_t)` at one time.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct McPoint {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub failed: usize,
}

fn validate_mc(spec: &SdeSpec, cfg: &McSettings) -> Result<()> {
    if cfg.paths < 2 || cfg.steps == 0 || cfg.area_refine == 0 {
        return Err(Error::InvalidSpec(
            "need at least two paths, one step and a positive area refinement".into(),
        ));
    }
    if let Some(t) = cfg.t_values.iter().find(|&&t| !(t > 0.0 && t <= spec.horizon)) {
        return Err(Error::InvalidSpec(format!(
            "t = {t} outside (0, {}]",
            spec.horizon
        )));
    }
    Ok(())
}

/// Paths on `[0, 1]` with the grid the scheme needs; rescaling by `t`
/// gives paths on `[0, t]` with common random numbers across `t`.
fn unit_sampler(spec: &SdeSpec, cfg: &McSettings) -> Result<FbmSampler> {
    let fine = if cfg.scheme == Scheme::Rough {
        cfg.steps * cfg.area_refine
    } else {
        cfg.steps
    };
    FbmSampler::new(spec.hurst, fine, 1.0)
}

/// `E f(X_t)` for each `t` in `cfg.t_values`, one unit-interval path per
/// index rescaled to each `t`. Paths whose solve fails are dropped; more
/// than 0.1% failures at any `t` is an error.
pub fn mc_estimate(spec: &SdeSpec, cfg: &McSettings) -> Result<Vec<McPoint>> {
    validate_mc(spec, cfg)?;
    let fields = VectorFields::new(spec);
    if spec.hurst <= 0.5 && cfg.scheme != Scheme::Rough && !fields.sigma_is_constant() {
        return Err(Error::Unsupported(format!(
            "the {:?} scheme needs H > 1/2 for state-dependent diffusion; use the rough scheme",
            cfg.scheme
        )));
    }
    let sampler = unit_sampler(spec, cfg)?;
    let f = Compiled::new(&spec.f);
    let ts = cfg.t_values.clone();
    let rows: Vec<Vec<f64>> = per_path(cfg.paths, |p| {
        let unit = sampler.sample_indexed(spec.d, cfg.seed, p);
        ts.iter()
            .map(|&t| {
                let path = unit.rescaled(t);
                match solve(&fields, spec, &path, cfg.scheme, cfg.area_refine, DEFAULT_BOUND) {
                    Ok(traj) => f.eval(traj.terminal()).unwrap_or(f64::NAN),
                    Err(_) => f64::NAN,
                }
            })
            .collect()
    });
    let mut out = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[i]).filter(|v| v.is_finite()).collect();
        let failed = cfg.paths - vals.len();
        if failed * 1000 > cfg.paths {
            return Err(Error::TooManyFailedPaths {
                failed,
                total: cfg.paths,
            });
        }
        let est = MeanEstimate::from_samples(&vals);
        out.push(McPoint {
            t,
            mean: est.mean,
            stderr: est.stderr,
            paths: vals.len(),
            failed,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeStatus {
    Fitted,
    /// Fewer than three points rise above three standard errors.
    Inconclusive,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RemainderPoint {
    pub t: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub expansion: f64,
    pub expansion_stderr: f64,
    pub difference: f64,
    /// Whether the point entered the fit.
    pub used: bool,
}

/// Fitted decay of `|MC - expansion|` against `t` for one order.
#[derive(Clone, Debug, Serialize)]
pub struct RemainderReport {
    pub order: usize,
    /// `(m + 1) H`.
    pub target: f64,
    pub points: Vec<RemainderPoint>,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub status: SlopeStatus,
}

/// Least-squares slope of `log y` on `log t` over points flagged `used`.
fn log_slope(ts: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&xs, &ls).map(|f| (f.slope, f.slope_stderr))
}

/// Compares an expansion with Monte Carlo estimates.
pub fn remainder_report(expansion: &Expansion, mc: &[McPoint]) -> RemainderReport {
    let mut points = Vec::with_capacity(mc.len());
    for p in mc {
        let e = expansion.evaluate(p.t);
        let es = expansion.stderr(p.t);
        let diff = p.mean - e;
        let noise = (p.stderr * p.stderr + es * es).sqrt();
        points.push(RemainderPoint {
            t: p.t,
            mc_mean: p.mean,
            mc_stderr: p.stderr,
            expansion: e,
            expansion_stderr: es,
            difference: diff,
            used: diff.abs() >= 3.0 * noise && diff != 0.0,
        });
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.used)
        .map(|p| (p.t, p.difference.abs()))
        .unzip();
    let fit = if ts.len() >= 3 { log_slope(&ts, &ys) } else { None };
    RemainderReport {
        order: expansion.order,
        target: expansion.remainder_order,
        points,
        slope: fit.map(|f| f.0),
        slope_stderr: fit.map(|f| f.1),
        status: if fit.is_some() {
            SlopeStatus::Fitted
        } else {
            SlopeStatus::Inconclusive
        },
    }
}

/// Remainder slopes for several orders sharing one Monte Carlo run.
pub fn remainder_slopes(
    spec: &SdeSpec,
    orders: &[usize],
    cfg: &McSettings,
    provider: &dyn MomentProvider,
) -> Result<Vec<RemainderReport>> {
    if cfg.t_values.len() < 5 {
        return Err(Error::InvalidSpec("slope fits need at least five t values".into()));
    }
    let mc = mc_estimate(spec, cfg)?;
    orders
        .iter()
        .map(|&m| {
            let e = ExpansionPlan::with_provider(spec, m, provider)?.expansion_at(&spec.a)?;
            Ok(remainder_report(&e, &mc))
        })
        .collect()
}

/// Slope of `E|I|` against `t`, with `I` a weighted iterated integral.
#[derive(Clone, Debug, Serialize)]
pub struct IteratedReport {
    pub word: Vec<usize>,
    /// `r - |α| (1 - H)` with `|α|` the number of noise letters.
    pub target: f64,
    pub points: Vec<McPoint>,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub status: SlopeStatus,
}

/// `E|∫_{Δ^r([0,t])} g(X_{s_1}) dB^{α_1}_{s_1} ... dB^{α_r}_{s_r}|` for each `t`,
/// and the fitted decay exponent. The first letter acts at the earliest
/// time. `X` solves the equation with the area-corrected scheme on the
/// path grid; the iterated integral uses trapezoidal steps, exact for
/// constant `g` on piecewise-linear paths up to `r = 2`.
pub fn iterated_integral_slope(
    alpha: &[usize],
    g: &Expr,
    spec: &SdeSpec,
    cfg: &McSettings,
) -> Result<IteratedReport> {
    validate_mc(spec, cfg)?;
    if alpha.is_empty() || alpha.iter().any(|&c| c > spec.d) {
        return Err(Error::Dimension(format!(
            "word {alpha:?} is empty or uses letters beyond {}",
            spec.d
        )));
    }
    let fields = VectorFields::new(spec);
    let gc = Compiled::new(g);
    let constant = g.as_const();
    let sampler = FbmSampler::new(spec.hurst, cfg.steps, 1.0)?;
    let ts = cfg.t_values.clone();
    let rows: Vec<Vec<f64>> = per_path(cfg.paths, |p| {
        let unit = sampler.sample_indexed(spec.d, cfg.seed, p);
        ts.iter()
            .map(|&t| {
                let path = unit.rescaled(t);
                let weights: Option<Vec<f64>> = match constant {
                    Some(c) => Some(vec![c; path.times.len()]),
                    None => solve(&fields, spec, &path, Scheme::Rough, 1, DEFAULT_BOUND)
                        .ok()
                        .and_then(|traj| {
                            (0..traj.times.len())
                                .map(|k| gc.eval(traj.state(k)).ok())
                                .collect()
                        }),
                };
                match weights {
                    Some(w) => weighted_iterated_integral(&path, alpha, &w).abs(),
                    None => f64::NAN,
                }
            })
            .collect()
    });
    let mut points = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[i]).filter(|v| v.is_finite()).collect();
        let failed = cfg.paths - vals.len();
        if failed * 1000 > cfg.paths {
            return Err(Error::TooManyFailedPaths {
                failed,
                total: cfg.paths,
            });
        }
        let est = MeanEstimate::from_samples(&vals);
        points.push(McPoint {
            t,
            mean: est.mean,
            stderr: est.stderr,
            paths: vals.len(),
            failed,
        });
    }
    let (tu, yu): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.mean > 3.0 * p.stderr)
        .map(|p| (p.t, p.mean))
        .unzip();
    let fit = if tu.len() >= 3 { log_slope(&tu, &yu) } else { None };
    let noise = alpha.iter().filter(|&&c| c != 0).count() as f64;
    Ok(IteratedReport {
        word: alpha.to_vec(),
        target: alpha.len() as f64 - noise * (1.0 - spec.hurst),
        points,
        slope: fit.map(|f| f.0),
        slope_stderr: fit.map(|f| f.1),
        status: if fit.is_some() {
            SlopeStatus::Fitted
        } else {
            SlopeStatus::Inconclusive
        },
    })
}

/// `Z_0 = g`, `Z_i(k+1) = Z_i(k) + ½(Z_{i-1}(k) + Z_{i-1}(k+1)) δB^{α_i}_k`.
fn weighted_iterated_integral(path: &FbmPath, alpha: &[usize], g: &[f64]) -> f64 {
    let n = path.steps();
    let mut prev = g.to_vec();
    let mut cur = vec![0.0; n + 1];
    for &letter in alpha {
        cur[0] = 0.0;
        for k in 0..n {
            let inc = if letter == 0 {
                path.times[k + 1] - path.times[k]
            } else {
                path.value(k + 1, letter - 1) - path.value(k, letter - 1)
            };
            cur[k + 1] = cur[k] + 0.5 * (prev[k] + prev[k + 1]) * inc;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm_sim::sample_fbm;
    use crate::gaussian_moments::word_integral;

    fn trivial(h: f64, f: &str) -> SdeSpec {
        SdeSpec::new(h, vec![0.0], &["0"], &[vec!["1"]], f).unwrap()
    }

    fn cfg(paths: usize, ts: Vec<f64>) -> McSettings {
        McSettings {
            paths,
            steps: 32,
            seed: 11,
            scheme: Scheme::Heun,
            area_refine: 4,
            t_values: ts,
        }
    }

    #[test]
    fn trivial_equation_mean_and_variance() {
        let mc = mc_estimate(&trivial(0.75, "x1"), &cfg(4000, vec![1.0])).unwrap();
        assert!(mc[0].mean.abs() < 3.0 * mc[0].stderr);
        let mc = mc_estimate(&trivial(0.75, "x1^2"), &cfg(4000, vec![1.0, 0.5])).unwrap();
        assert!((mc[0].mean - 1.0).abs() < 3.0 * mc[0].stderr);
        assert!((mc[1].mean - 0.5f64.powf(1.5)).abs() < 3.0 * mc[1].stderr);
    }

    #[test]
    fn estimates_are_deterministic() {
        let sp = trivial(0.7, "sin(x1)");
        let a = mc_estimate(&sp, &cfg(200, vec![0.3])).unwrap();
        let b = mc_estimate(&sp, &cfg(200, vec![0.3])).unwrap();
        assert_eq!(a[0].mean.to_bits(), b[0].mean.to_bits());
    }

    #[test]
    fn exact_expansion_is_inconclusive() {
        let sp = trivial(0.75, "x1^2");
        let c = cfg(2000, vec![0.4, 0.3, 0.2, 0.15, 0.1]);
        let r = remainder_slopes(&sp, &[2], &c, &crate::expansion_engine::DefaultMoments::from_spec(&sp))
            .unwrap();
        assert_eq!(r[0].status, SlopeStatus::Inconclusive);
    }

    #[test]
    fn trapezoid_matches_piecewise_linear_words() {
        let p = sample_fbm(0.4, 64, 2, 1.0, 3).unwrap();
        let ones = vec![1.0; 65];
        for w in [vec![1], vec![1, 1], vec![0, 0], vec![2, 1], vec![1, 0]] {
            let a = weighted_iterated_integral(&p, &w, &ones);
            let b = word_integral(&p, &w, 0, 64);
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn rejects_young_scheme_for_rough_multiplicative_noise() {
        let sp = SdeSpec::new(0.4, vec![1.0], &["0"], &[vec!["x1"]], "x1").unwrap();
        assert!(matches!(
            mc_estimate(&sp, &cfg(10, vec![0.5])),
            Err(Error::Unsupported(_))
        ));
    }
}
