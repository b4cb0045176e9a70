//! Pathwise solvers for `dX = b(X) dt + σ(X) dB` along a sampled fBm path,
//! and the variational equation giving the Malliavin derivative `D_s X_t`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm_sim::{AreaProcess, FbmPath};
use crate::symexpr::{Compiled, Scheme, SdeSpec};

/// Default bound on `|X|` beyond which a solve is reported as diverged.
pub const DEFAULT_BOUND: f64 = 1e8;

/// Compiled coefficients and their first derivatives.
#[derive(Clone, Debug)]
pub struct VectorFields {
    pub n: usize,
    pub d: usize,
    b: Vec<Compiled>,
    /// `σ^{i,j}` at `i * d + j`, `j` zero-based.
    sigma: Vec<Compiled>,
    /// `∂_k b^i` at `i * n + k`.
    db: Vec<Compiled>,
    /// `∂_k σ^{i,j}` at `(i * d + j) * n + k`.
    dsigma: Vec<Compiled>,
    sigma_constant: bool,
}

impl VectorFields {
    pub fn new(spec: &SdeSpec) -> VectorFields {
        let (n, d) = (spec.n, spec.d);
        let b = spec.drift().iter().map(Compiled::new).collect();
        let db = spec
            .drift()
            .iter()
            .flat_map(|e| (0..n).map(move |k| Compiled::new(&e.diff(k))))
            .collect();
        let mut sigma = Vec::with_capacity(n * d);
        let mut dsigma = Vec::with_capacity(n * d * n);
        let mut sigma_constant = true;
        for i in 0..n {
            for j in 1..=d {
                let e = spec.sigma(i, j);
                sigma.push(Compiled::new(e));
                for k in 0..n {
                    let de = e.diff(k);
                    sigma_constant &= de.is_zero();
                    dsigma.push(Compiled::new(&de));
                }
            }
        }
        VectorFields {
            n,
            d,
            b,
            sigma,
            db,
            dsigma,
            sigma_constant,
        }
    }

    /// True when every diffusion coefficient is constant.
    pub fn sigma_is_constant(&self) -> bool {
        self.sigma_constant
    }
}

/// Scratch space and evaluation helpers shared by the steppers.
struct Eval<'a> {
    f: &'a VectorFields,
    stack: Vec<f64>,
}

impl Eval<'_> {
    fn get(&mut self, c: &Compiled, x: &[f64], step: usize) -> Result<f64> {
        let v = c.eval_with(x, &mut self.stack);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "coefficient not finite at step {step}, state {x:?}"
            )))
        }
    }

    /// `b(x) dt + σ(x) dB` added to `out`.
    fn increment(&mut self, x: &[f64], dt: f64, db: &[f64], step: usize, out: &mut [f64]) -> Result<()> {
        let (n, d) = (self.f.n, self.f.d);
        for i in 0..n {
            let mut acc = self.get(&self.f.b[i], x, step)? * dt;
            for j in 0..d {
                if db[j] != 0.0 {
                    acc += self.get(&self.f.sigma[i * d + j], x, step)? * db[j];
                }
            }
            out[i] += acc;
        }
        Ok(())
    }

    /// `Σ_{k,j',j} ∂_k σ^{i,j}(x) σ^{k,j'}(x) x²(j', j)` added to `out`.
    fn area_term(&mut self, x: &[f64], area: &[f64], step: usize, out: &mut [f64]) -> Result<()> {
        let (n, d) = (self.f.n, self.f.d);
        let mut sig = vec![0.0; n * d];
        for (c, s) in sig.iter_mut().enumerate() {
            *s = self.get(&self.f.sigma[c], x, step)?;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..d {
                for k in 0..n {
                    let dk = self.get(&self.f.dsigma[(i * d + j) * n + k], x, step)?;
                    if dk == 0.0 {
                        continue;
                    }
                    for jp in 0..d {
                        acc += dk * sig[k * d + jp] * area[jp * d + j];
                    }
                }
            }
            out[i] += acc;
        }
        Ok(())
    }

    /// Linearised increment `(∂b(x) dt + Σ_j ∂σ_j(x) dB^j) y`.
    fn linear(&mut self, x: &[f64], y: &[f64], dt: f64, db: &[f64], step: usize) -> Result<Vec<f64>> {
        let (n, d) = (self.f.n, self.f.d);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            for k in 0..n {
                if y[k] == 0.0 {
                    continue;
                }
                let mut a = self.get(&self.f.db[i * n + k], x, step)? * dt;
                for j in 0..d {
                    if db[j] != 0.0 {
                        a += self.get(&self.f.dsigma[(i * d + j) * n + k], x, step)? * db[j];
                    }
                }
                *o += a * y[k];
            }
        }
        Ok(out)
    }
}

/// Solution on a uniform grid, states row-major `(N+1) x n`.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub n: usize,
    pub states: Vec<f64>,
    pub scheme: Scheme,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.steps())
    }

    /// `max_k |X_k - Y_k|` against a trajectory on a grid refined by an
    /// integer factor.
    pub fn sup_distance(&self, finer: &Trajectory) -> Result<f64> {
        let (a, b) = (self.steps(), finer.steps());
        if a == 0 || b % a != 0 || self.n != finer.n {
            return Err(Error::Dimension(format!(
                "grids of {a} and {b} steps are not nested"
            )));
        }
        let r = b / a;
        let mut best: f64 = 0.0;
        for k in 0..=a {
            for (u, v) in self.state(k).iter().zip(finer.state(k * r)) {
                best = best.max((u - v).abs());
            }
        }
        Ok(best)
    }
}

fn check_inputs(spec: &SdeSpec, path: &FbmPath) -> Result<()> {
    if path.dim != spec.d {
        return Err(Error::Dimension(format!(
            "path has {} components, equation has {} noises",
            path.dim, spec.d
        )));
    }
    if (path.hurst - spec.hurst).abs() > 1e-12 {
        return Err(Error::InvalidSpec(format!(
            "path sampled with H = {}, equation has H = {}",
            path.hurst, spec.hurst
        )));
    }
    Ok(())
}

fn guard(x: &[f64], bound: f64, step: usize, time: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(Error::Diverged { step, time });
    }
    Ok(())
}

/// Euler or Heun scheme in the Young sense; requires `H > 1/2`.
pub fn solve_young(spec: &SdeSpec, path: &FbmPath, scheme: Scheme) -> Result<Trajectory> {
    if spec.hurst <= 0.5 {
        return Err(Error::Unsupported(format!(
            "Young schemes need H > 1/2, got {}",
            spec.hurst
        )));
    }
    solve_young_unchecked(&VectorFields::new(spec), spec, path, scheme, DEFAULT_BOUND)
}

/// [`solve_young`] with precompiled fields and no restriction on `H`.
pub fn solve_young_unchecked(
    fields: &VectorFields,
    spec: &SdeSpec,
    path: &FbmPath,
    scheme: Scheme,
    bound: f64,
) -> Result<Trajectory> {
    check_inputs(spec, path)?;
    let (n, d) = (spec.n, spec.d);
    let steps = path.steps();
    let mut ev = Eval {
        f: fields,
        stack: Vec::new(),
    };
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(&spec.a);
    let mut x = spec.a.clone();
    let mut db = vec![0.0; d];
    for k in 0..steps {
        let dt = path.times[k + 1] - path.times[k];
        for (j, v) in db.iter_mut().enumerate() {
            *v = path.value(k + 1, j) - path.value(k, j);
        }
        let mut next = x.clone();
        ev.increment(&x, dt, &db, k, &mut next)?;
        if scheme == Scheme::Heun {
            let pred = next;
            let mut avg = x.clone();
            ev.increment(&x, 0.5 * dt, &half(&db), k, &mut avg)?;
            ev.increment(&pred, 0.5 * dt, &half(&db), k, &mut avg)?;
            next = avg;
        } else if scheme == Scheme::Rough {
            return Err(Error::Unsupported(
                "the rough scheme needs an area process".into(),
            ));
        }
        guard(&next, bound, k + 1, path.times[k + 1])?;
        states.extend_from_slice(&next);
        x = next;
    }
    Ok(Trajectory {
        times: path.times.clone(),
        n,
        states,
        scheme,
    })
}

fn half(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 0.5 * x).collect()
}

/// Area-corrected one-step scheme on the coarse grid of `area`:
/// `X' = X + b dt + σ δx + (∂σ σ) x²`.
pub fn solve_rough(spec: &SdeSpec, path: &FbmPath, area: &AreaProcess) -> Result<Trajectory> {
    if spec.hurst <= 1.0 / 3.0 {
        return Err(Error::Unsupported(format!(
            "the rough scheme needs H > 1/3, got {}",
            spec.hurst
        )));
    }
    solve_rough_with(&VectorFields::new(spec), spec, path, area, DEFAULT_BOUND)
}

/// [`solve_rough`] with precompiled fields and an explicit divergence bound.
pub fn solve_rough_with(
    fields: &VectorFields,
    spec: &SdeSpec,
    path: &FbmPath,
    area: &AreaProcess,
    bound: f64,
) -> Result<Trajectory> {
    check_inputs(spec, path)?;
    if area.dim != path.dim || area.blocks() * area.block != path.steps() {
        return Err(Error::Dimension(format!(
            "area process ({} blocks of {}) does not match a path of {} steps",
            area.blocks(),
            area.block,
            path.steps()
        )));
    }
    let (n, d) = (spec.n, spec.d);
    let blocks = area.blocks();
    let mut ev = Eval {
        f: fields,
        stack: Vec::new(),
    };
    let mut states = Vec::with_capacity((blocks + 1) * n);
    states.extend_from_slice(&spec.a);
    let mut times = Vec::with_capacity(blocks + 1);
    times.push(path.times[0]);
    let mut x = spec.a.clone();
    let mut db = vec![0.0; d];
    for b in 0..blocks {
        let (p, q) = (b * area.block, (b + 1) * area.block);
        let dt = path.times[q] - path.times[p];
        for (j, v) in db.iter_mut().enumerate() {
            *v = path.value(q, j) - path.value(p, j);
        }
        let mut next = x.clone();
        ev.increment(&x, dt, &db, b, &mut next)?;
        if !fields.sigma_constant {
            ev.area_term(&x, area.block(b), b, &mut next)?;
        }
        guard(&next, bound, b + 1, path.times[q])?;
        states.extend_from_slice(&next);
        times.push(path.times[q]);
        x = next;
    }
    Ok(Trajectory {
        times,
        n,
        states,
        scheme: Scheme::Rough,
    })
}

/// Dispatches on the scheme; the rough scheme uses area blocks of
/// `area_refine` path steps.
pub fn solve(
    fields: &VectorFields,
    spec: &SdeSpec,
    path: &FbmPath,
    scheme: Scheme,
    area_refine: usize,
    bound: f64,
) -> Result<Trajectory> {
    match scheme {
        Scheme::Rough => {
            let area = path.levy_area(area_refine)?;
            solve_rough_with(fields, spec, path, &area, bound)
        }
        _ => solve_young_unchecked(fields, spec, path, scheme, bound),
    }
}

/// `D_s^j X_t` on the trajectory grid, zero before `s`.
#[derive(Clone, Debug, Serialize)]
pub struct VariationalPath {
    /// Grid index of the differentiation time.
    pub s: usize,
    /// One-based noise component.
    pub j: usize,
    pub n: usize,
    /// Row-major `(N+1) x n`.
    pub values: Vec<f64>,
}

impl VariationalPath {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }
}

/// Solves the linearised equation along `traj` from `σ^{.,j}(X_s)` at grid
/// index `s`, with the same scheme as the trajectory. `j` is one-based.
pub fn variational_path(
    spec: &SdeSpec,
    path: &FbmPath,
    traj: &Trajectory,
    s: usize,
    j: usize,
) -> Result<VariationalPath> {
    if spec.hurst <= 0.5 {
        return Err(Error::Unsupported(format!(
            "the variational equation is implemented for H > 1/2, got {}",
            spec.hurst
        )));
    }
    check_inputs(spec, path)?;
    if traj.steps() != path.steps() || traj.scheme == Scheme::Rough {
        return Err(Error::Dimension(
            "trajectory must come from a Young scheme on the path grid".into(),
        ));
    }
    if j == 0 || j > spec.d || s > traj.steps() {
        return Err(Error::Dimension(format!(
            "component {j} or grid index {s} out of range"
        )));
    }
    let (n, d) = (spec.n, spec.d);
    let fields = VectorFields::new(spec);
    let mut ev = Eval {
        f: &fields,
        stack: Vec::new(),
    };
    let steps = traj.steps();
    let mut values = vec![0.0; (steps + 1) * n];
    let mut y: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        y.push(ev.get(&fields.sigma[i * d + j - 1], traj.state(s), s)?);
    }
    values[s * n..(s + 1) * n].copy_from_slice(&y);
    let mut db = vec![0.0; d];
    for k in s..steps {
        let dt = path.times[k + 1] - path.times[k];
        for (c, v) in db.iter_mut().enumerate() {
            *v = path.value(k + 1, c) - path.value(k, c);
        }
        let a0 = ev.linear(traj.state(k), &y, dt, &db, k)?;
        let next: Vec<f64> = if traj.scheme == Scheme::Heun {
            let pred: Vec<f64> = y.iter().zip(&a0).map(|(u, v)| u + v).collect();
            let a1 = ev.linear(traj.state(k + 1), &pred, dt, &db, k)?;
            y.iter()
                .zip(a0.iter().zip(&a1))
                .map(|(u, (p, q))| u + 0.5 * (p + q))
                .collect()
        } else {
            y.iter().zip(&a0).map(|(u, v)| u + v).collect()
        };
        guard(&next, DEFAULT_BOUND, k + 1, path.times[k + 1])?;
        values[(k + 1) * n..(k + 2) * n].copy_from_slice(&next);
        y = next;
    }
    Ok(VariationalPath { s, j, n, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm_sim::sample_fbm;

    fn spec(h: f64, a: Vec<f64>, drift: &[&str], diff: &[Vec<&str>]) -> SdeSpec {
        SdeSpec::new(h, a, drift, diff, "x1").unwrap()
    }

    #[test]
    fn additive_noise_is_exact() {
        let sp = spec(0.7, vec![0.5, -1.0], &["0", "0"], &[vec!["1", "0"], vec!["0", "1"]]);
        let p = sample_fbm(0.7, 64, 2, 1.0, 3).unwrap();
        for scheme in [Scheme::Euler, Scheme::Heun] {
            let tr = solve_young(&sp, &p, scheme).unwrap();
            for k in 0..=64 {
                assert!((tr.state(k)[0] - 0.5 - p.value(k, 0)).abs() < 1e-13);
                assert!((tr.state(k)[1] + 1.0 - p.value(k, 1)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn linear_ode_by_euler() {
        let sp = spec(0.7, vec![1.0], &["x1"], &[vec!["0"]]);
        let p = sample_fbm(0.7, 1 << 10, 1, 1.0, 4).unwrap();
        let tr = solve_young(&sp, &p, Scheme::Euler).unwrap();
        let e = std::f64::consts::E;
        assert!((tr.terminal()[0] - e).abs() / e < 1e-2);
    }

    #[test]
    fn heun_follows_chain_rule() {
        let sp = spec(0.75, vec![1.0], &["0"], &[vec!["x1"]]);
        let mut errs = Vec::new();
        for n in [64usize, 256, 1024] {
            let base = sample_fbm(0.75, 1024, 1, 1.0, 5).unwrap();
            let stride = 1024 / n;
            let coarse = FbmPath {
                hurst: 0.75,
                dim: 1,
                times: (0..=n).map(|k| base.times[k * stride]).collect(),
                values: (0..=n).map(|k| base.values[k * stride]).collect(),
            };
            let tr = solve_young(&sp, &coarse, Scheme::Heun).unwrap();
            let exact = base.value(1024, 0).exp();
            errs.push((tr.terminal()[0] - exact).abs());
        }
        assert!(errs[2] < errs[0]);
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn constant_diffusion_rough_equals_euler() {
        let sp = spec(0.4, vec![0.3], &["sin(x1)"], &[vec!["2"]]);
        let p = sample_fbm(0.4, 128, 1, 1.0, 6).unwrap();
        let area = p.levy_area(1).unwrap();
        let rough = solve_rough(&sp, &p, &area).unwrap();
        let euler = solve_young_unchecked(&VectorFields::new(&sp), &sp, &p, Scheme::Euler, DEFAULT_BOUND)
            .unwrap();
        assert_eq!(rough.states, euler.states);
    }

    #[test]
    fn young_rejects_rough_regime() {
        let sp = spec(0.4, vec![0.0], &["0"], &[vec!["1"]]);
        let p = sample_fbm(0.4, 8, 1, 1.0, 0).unwrap();
        assert!(matches!(solve_young(&sp, &p, Scheme::Euler), Err(Error::Unsupported(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let sp = spec(0.7, vec![1.0], &["x1^3"], &[vec!["0"]]);
        let p = sample_fbm(0.7, 64, 1, 10.0, 0).unwrap();
        assert!(matches!(
            solve_young(&sp, &p, Scheme::Euler),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn variational_path_for_additive_noise() {
        let sp = spec(0.7, vec![0.0, 0.0], &["0", "0"], &[vec!["1", "0"], vec!["0", "1"]]);
        let p = sample_fbm(0.7, 32, 2, 1.0, 1).unwrap();
        let tr = solve_young(&sp, &p, Scheme::Heun).unwrap();
        let v = variational_path(&sp, &p, &tr, 10, 2).unwrap();
        for k in 0..=32 {
            let want = if k >= 10 { [0.0, 1.0] } else { [0.0, 0.0] };
            assert_eq!(v.at(k), &want);
        }
    }

    #[test]
    fn deterministic_output() {
        let sp = spec(0.6, vec![1.0], &["-x1"], &[vec!["cos(x1)"]]);
        let p = sample_fbm(0.6, 64, 1, 1.0, 9).unwrap();
        let a = solve_young(&sp, &p, Scheme::Heun).unwrap();
        let b = solve_young(&sp, &p, Scheme::Heun).unwrap();
        assert_eq!(a.states, b.states);
    }
}
