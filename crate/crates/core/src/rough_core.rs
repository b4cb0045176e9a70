//! Discrete algebraic integration on a uniform grid: increments and the
//! coboundary δ, Hölder seminorms, the sewing map Λ, controlled paths, and
//! compensated Riemann sums against a piecewise-linear path with its area.
//!
//! Conventions: `(δg)_{st} = g_t - g_s`, `(δh)_{sut} = h_{st} - h_{su} - h_{ut}`
//! and `(δk)_{suvt} = k_{uvt} - k_{svt} + k_{sut} - k_{suv}`. Products
//! concatenate time arguments, `(gh)_{t_1..t_{m+n-1}} = g_{t_1..t_n} h_{t_n..}`,
//! and a value of dimension `l*d` multiplies one of dimension `d` as a
//! row-major `l x d` matrix.

use crate::error::{Error, Result};
use crate::fbm_sim::{AreaProcess, FbmPath};
use crate::symexpr::{Compiled, Expr};

/// Grid function `t_k -> g_k`, values row-major `(N+1) x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment1 {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Function of grid pairs, stored densely for all `(s, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment2 {
    pub times: Vec<f64>,
    pub dim: usize,
    data: Vec<f64>,
}

/// Function of grid triples, stored densely; intended for small grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment3 {
    pub times: Vec<f64>,
    pub dim: usize,
    data: Vec<f64>,
}

/// Function of grid quadruples, stored densely; intended for small grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment4 {
    pub times: Vec<f64>,
    pub dim: usize,
    data: Vec<f64>,
}

fn check_grids(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "grids of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `out += g h` with `g` an `l x d` matrix and `h` a `d` vector.
fn matvec_add(g: &[f64], h: &[f64], out: &mut [f64]) {
    let d = h.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += g[r * d..(r + 1) * d]
            .iter()
            .zip(h)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}

fn out_dim(gdim: usize, hdim: usize) -> Result<usize> {
    if hdim == 0 || gdim % hdim != 0 {
        return Err(Error::Dimension(format!(
            "cannot multiply dimension {gdim} by dimension {hdim}"
        )));
    }
    Ok(gdim / hdim)
}

impl Increment1 {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Increment1> {
        if values.len() != times.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} points of dimension {dim}",
                values.len(),
                times.len()
            )));
        }
        Ok(Increment1 { times, dim, values })
    }

    pub fn from_fn(times: &[f64], dim: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Increment1 {
        let mut values = Vec::with_capacity(times.len() * dim);
        for k in 0..times.len() {
            let v = f(k);
            assert_eq!(v.len(), dim);
            values.extend(v);
        }
        Increment1 {
            times: times.to_vec(),
            dim,
            values,
        }
    }

    pub fn scalar(times: &[f64], values: Vec<f64>) -> Increment1 {
        assert_eq!(times.len(), values.len());
        Increment1 {
            times: times.to_vec(),
            dim: 1,
            values,
        }
    }

    pub fn from_path(path: &FbmPath) -> Increment1 {
        Increment1 {
            times: path.times.clone(),
            dim: path.dim,
            values: path.values.clone(),
        }
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Pointwise product `(gh)_t = g_t h_t`.
    pub fn mul(&self, h: &Increment1) -> Result<Increment1> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let mut values = vec![0.0; self.points() * l];
        for k in 0..self.points() {
            matvec_add(self.at(k), h.at(k), &mut values[k * l..(k + 1) * l]);
        }
        Ok(Increment1 {
            times: self.times.clone(),
            dim: l,
            values,
        })
    }

    /// `(gh)_{st} = g_s h_{st}`.
    pub fn mul2(&self, h: &Increment2) -> Result<Increment2> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let n = self.points();
        let mut out = Increment2::zeros(&self.times, l);
        for s in 0..n {
            for t in 0..n {
                let o = out.index(s, t);
                matvec_add(self.at(s), h.get(s, t), &mut out.data[o..o + l]);
            }
        }
        Ok(out)
    }

    /// `(gh)_{sut} = g_s h_{sut}`.
    pub fn mul3(&self, h: &Increment3) -> Result<Increment3> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let n = self.points();
        let mut out = Increment3::zeros(&self.times, l);
        for s in 0..n {
            for u in 0..n {
                for t in 0..n {
                    let o = out.index(s, u, t);
                    matvec_add(self.at(s), h.get(s, u, t), &mut out.data[o..o + l]);
                }
            }
        }
        Ok(out)
    }
}

/// `(δg)_{st} = g_t - g_s`.
pub fn delta1(g: &Increment1) -> Increment2 {
    let n = g.points();
    let dim = g.dim;
    let mut out = Increment2::zeros(&g.times, dim);
    for s in 0..n {
        for t in 0..n {
            let o = out.index(s, t);
            for c in 0..dim {
                out.data[o + c] = g.at(t)[c] - g.at(s)[c];
            }
        }
    }
    out
}

impl Increment2 {
    pub fn zeros(times: &[f64], dim: usize) -> Increment2 {
        let n = times.len();
        Increment2 {
            times: times.to_vec(),
            dim,
            data: vec![0.0; n * n * dim],
        }
    }

    pub fn from_fn(times: &[f64], dim: usize, mut f: impl FnMut(usize, usize) -> Vec<f64>) -> Increment2 {
        let mut out = Increment2::zeros(times, dim);
        let n = times.len();
        for s in 0..n {
            for t in 0..n {
                let v = f(s, t);
                assert_eq!(v.len(), dim);
                let o = out.index(s, t);
                out.data[o..o + dim].copy_from_slice(&v);
            }
        }
        out
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    fn index(&self, s: usize, t: usize) -> usize {
        (s * self.points() + t) * self.dim
    }

    pub fn get(&self, s: usize, t: usize) -> &[f64] {
        let o = self.index(s, t);
        &self.data[o..o + self.dim]
    }

    /// Scalar value of a one-dimensional increment.
    pub fn value(&self, s: usize, t: usize) -> f64 {
        self.get(s, t)[0]
    }

    /// `(gh)_{st} = g_{st} h_t`.
    pub fn mul1(&self, h: &Increment1) -> Result<Increment2> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let n = self.points();
        let mut out = Increment2::zeros(&self.times, l);
        for s in 0..n {
            for t in 0..n {
                let o = out.index(s, t);
                matvec_add(self.get(s, t), h.at(t), &mut out.data[o..o + l]);
            }
        }
        Ok(out)
    }

    /// `(gh)_{sut} = g_{su} h_{ut}`.
    pub fn mul2(&self, h: &Increment2) -> Result<Increment3> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let n = self.points();
        let mut out = Increment3::zeros(&self.times, l);
        for s in 0..n {
            for u in 0..n {
                for t in 0..n {
                    let o = out.index(s, u, t);
                    matvec_add(self.get(s, u), h.get(u, t), &mut out.data[o..o + l]);
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Increment2) -> Result<Increment2> {
        check_grids(&self.times, &other.times)?;
        if self.dim != other.dim {
            return Err(Error::Dimension("increment dimensions differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        Ok(out)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `(δh)_{sut} = h_{st} - h_{su} - h_{ut}`.
pub fn delta2(h: &Increment2) -> Increment3 {
    let n = h.points();
    let dim = h.dim;
    let mut out = Increment3::zeros(&h.times, dim);
    for s in 0..n {
        for u in 0..n {
            for t in 0..n {
                let o = out.index(s, u, t);
                for c in 0..dim {
                    out.data[o + c] = h.get(s, t)[c] - h.get(s, u)[c] - h.get(u, t)[c];
                }
            }
        }
    }
    out
}

impl Increment3 {
    pub fn zeros(times: &[f64], dim: usize) -> Increment3 {
        let n = times.len();
        Increment3 {
            times: times.to_vec(),
            dim,
            data: vec![0.0; n * n * n * dim],
        }
    }

    pub fn from_fn(
        times: &[f64],
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> Vec<f64>,
    ) -> Increment3 {
        let mut out = Increment3::zeros(times, dim);
        let n = times.len();
        for s in 0..n {
            for u in 0..n {
                for t in 0..n {
                    let v = f(s, u, t);
                    assert_eq!(v.len(), dim);
                    let o = out.index(s, u, t);
                    out.data[o..o + dim].copy_from_slice(&v);
                }
            }
        }
        out
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    fn index(&self, s: usize, u: usize, t: usize) -> usize {
        let n = self.points();
        ((s * n + u) * n + t) * self.dim
    }

    pub fn get(&self, s: usize, u: usize, t: usize) -> &[f64] {
        let o = self.index(s, u, t);
        &self.data[o..o + self.dim]
    }

    pub fn value(&self, s: usize, u: usize, t: usize) -> f64 {
        self.get(s, u, t)[0]
    }

    /// `(gh)_{sut} = g_{sut} h_t`.
    pub fn mul1(&self, h: &Increment1) -> Result<Increment3> {
        check_grids(&self.times, &h.times)?;
        let l = out_dim(self.dim, h.dim)?;
        let n = self.points();
        let mut out = Increment3::zeros(&self.times, l);
        for s in 0..n {
            for u in 0..n {
                for t in 0..n {
                    let o = out.index(s, u, t);
                    matvec_add(self.get(s, u, t), h.at(t), &mut out.data[o..o + l]);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Increment3) -> Result<Increment3> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Increment3) -> Result<Increment3> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Increment3, sign: f64) -> Result<Increment3> {
        check_grids(&self.times, &other.times)?;
        if self.dim != other.dim {
            return Err(Error::Dimension("increment dimensions differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += sign * b;
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry over ordered triples `s <= u <= t`.
    pub fn ordered_max_abs(&self) -> f64 {
        let n = self.points();
        let mut best: f64 = 0.0;
        for s in 0..n {
            for u in s..n {
                for t in u..n {
                    for v in self.get(s, u, t) {
                        best = best.max(v.abs());
                    }
                }
            }
        }
        best
    }
}

/// `(δk)_{suvt} = k_{uvt} - k_{svt} + k_{sut} - k_{suv}`.
pub fn delta3(k: &Increment3) -> Increment4 {
    let n = k.points();
    let dim = k.dim;
    let mut data = vec![0.0; n * n * n * n * dim];
    let mut o = 0;
    for s in 0..n {
        for u in 0..n {
            for v in 0..n {
                for t in 0..n {
                    for c in 0..dim {
                        data[o] = k.get(u, v, t)[c] - k.get(s, v, t)[c] + k.get(s, u, t)[c]
                            - k.get(s, u, v)[c];
                        o += 1;
                    }
                }
            }
        }
    }
    Increment4 {
        times: k.times.clone(),
        dim,
        data,
    }
}

impl Increment4 {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `sup_{s<t} |h_{st}| / |t - s|^μ` over all grid pairs, with the max-norm
/// on vector values.
pub fn holder_seminorm(h: &Increment2, mu: f64) -> f64 {
    let n = h.points();
    let mut best: f64 = 0.0;
    for s in 0..n {
        for t in s + 1..n {
            let v = h.get(s, t).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            best = best.max(v / (h.times[t] - h.times[s]).powf(mu));
        }
    }
    best
}

/// Same as [`holder_seminorm`] restricted to dyadic intervals
/// `[i 2^k, (i+1) 2^k]` of grid steps.
pub fn dyadic_holder_seminorm(h: &Increment2, mu: f64) -> f64 {
    let steps = h.points() - 1;
    let mut best: f64 = 0.0;
    let mut width = 1;
    while width <= steps {
        let mut s = 0;
        while s + width <= steps {
            let t = s + width;
            let v = h.get(s, t).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            best = best.max(v / (h.times[t] - h.times[s]).powf(mu));
            s += width;
        }
        width *= 2;
    }
    best
}

/// `sup_{s<u<t} |h_{sut}| / (|u - s|^κ |t - u|^γ)` for a scalar 3-increment
/// given as a function of grid indices.
pub fn product_seminorm(
    times: &[f64],
    h: impl Fn(usize, usize, usize) -> f64,
    kappa: f64,
    gamma: f64,
) -> f64 {
    let n = times.len();
    let mut best: f64 = 0.0;
    for s in 0..n {
        for u in s + 1..n {
            let a = (times[u] - times[s]).powf(kappa);
            for t in u + 1..n {
                let b = (times[t] - times[u]).powf(gamma);
                best = best.max(h(s, u, t).abs() / (a * b));
            }
        }
    }
    best
}

/// Discrete sewing map: the unique scalar 2-increment vanishing on
/// consecutive grid pairs whose coboundary is the closed 3-increment `h`,
/// `Λh_{st} = Σ_{s<u<t} h_{s,u,u+1}`. Pairs `s >= t` are set to zero.
pub fn sew(times: &[f64], h: impl Fn(usize, usize, usize) -> f64) -> Increment2 {
    let n = times.len();
    let mut out = Increment2::zeros(times, 1);
    for s in 0..n {
        let mut acc = 0.0;
        for t in s + 2..n {
            acc += h(s, t - 1, t);
            let o = out.index(s, t);
            out.data[o] = acc;
        }
    }
    out
}

/// [`sew`] on a stored 3-increment, after checking that `δh` vanishes up to
/// `tol` relative to the size of `h`.
pub fn sew_checked(h: &Increment3, tol: f64) -> Result<Increment2> {
    if h.dim != 1 {
        return Err(Error::Dimension("sewing expects a scalar increment".into()));
    }
    let n = h.points();
    let scale = h.max_abs().max(1.0);
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for u in s + 1..n {
            for v in u + 1..n {
                for t in v + 1..n {
                    let d = h.value(u, v, t) - h.value(s, v, t) + h.value(s, u, t)
                        - h.value(s, u, v);
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    if worst > tol * scale {
        return Err(Error::Domain(format!(
            "3-increment is not closed: |δh| reaches {worst:e}"
        )));
    }
    Ok(sew(&h.times, |s, u, t| h.value(s, u, t)))
}

/// Splits a scalar 2-increment `g` as `δf + Λδg` with `f_t = Σ_{k<t} g_{k,k+1}`.
/// Returns `(f, Λδg)`.
pub fn decompose(g: &Increment2) -> Result<(Increment1, Increment2)> {
    if g.dim != 1 {
        return Err(Error::Dimension("decomposition expects a scalar increment".into()));
    }
    let n = g.points();
    let mut f = vec![0.0; n];
    for k in 1..n {
        f[k] = f[k - 1] + g.value(k - 1, k);
    }
    let lambda = sew(&g.times, |s, u, t| {
        g.value(s, t) - g.value(s, u) - g.value(u, t)
    });
    Ok((Increment1::scalar(&g.times, f), lambda))
}

/// Weakly controlled path on the grid of a driver `x`: values `z` of
/// dimension `k` and Gubinelli derivative `ζ` of shape `k x d`. The
/// remainder `r_{st} = δz_{st} - ζ_s δx_{st}` is evaluated on demand, so the
/// controlled identity holds by construction.
#[derive(Clone, Debug)]
pub struct ControlledPath {
    pub times: Vec<f64>,
    pub k: usize,
    pub d: usize,
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Driver values, row-major `(N+1) x d`.
    pub x: Vec<f64>,
}

impl ControlledPath {
    pub fn new(path: &FbmPath, k: usize, z: Vec<f64>, zeta: Vec<f64>) -> Result<ControlledPath> {
        let n = path.times.len();
        if z.len() != n * k || zeta.len() != n * k * path.dim {
            return Err(Error::Dimension(format!(
                "controlled path needs {} values and {} derivatives",
                n * k,
                n * k * path.dim
            )));
        }
        Ok(ControlledPath {
            times: path.times.clone(),
            k,
            d: path.dim,
            z,
            zeta,
            x: path.values.clone(),
        })
    }

    /// The driver itself: `z = x`, `ζ = I`.
    pub fn driver(path: &FbmPath) -> ControlledPath {
        let d = path.dim;
        let n = path.times.len();
        let mut zeta = vec![0.0; n * d * d];
        for p in 0..n {
            for i in 0..d {
                zeta[p * d * d + i * d + i] = 1.0;
            }
        }
        ControlledPath {
            times: path.times.clone(),
            k: d,
            d,
            z: path.values.clone(),
            zeta,
            x: path.values.clone(),
        }
    }

    /// A constant value with zero derivative.
    pub fn constant(path: &FbmPath, c: &[f64]) -> ControlledPath {
        let n = path.times.len();
        ControlledPath {
            times: path.times.clone(),
            k: c.len(),
            d: path.dim,
            z: c.iter().copied().cycle().take(n * c.len()).collect(),
            zeta: vec![0.0; n * c.len() * path.dim],
            x: path.values.clone(),
        }
    }

    pub fn points(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, p: usize) -> &[f64] {
        &self.z[p * self.k..(p + 1) * self.k]
    }

    pub fn derivative(&self, p: usize) -> &[f64] {
        let w = self.k * self.d;
        &self.zeta[p * w..(p + 1) * w]
    }

    fn driver_at(&self, p: usize) -> &[f64] {
        &self.x[p * self.d..(p + 1) * self.d]
    }

    /// `r_{st} = δz_{st} - ζ_s δx_{st}`.
    pub fn remainder(&self, s: usize, t: usize) -> Vec<f64> {
        let dx: Vec<f64> = (0..self.d)
            .map(|j| self.driver_at(t)[j] - self.driver_at(s)[j])
            .collect();
        let mut r: Vec<f64> = (0..self.k)
            .map(|i| self.value(t)[i] - self.value(s)[i])
            .collect();
        let zs = self.derivative(s);
        for (i, ri) in r.iter_mut().enumerate() {
            for j in 0..self.d {
                *ri -= zs[i * self.d + j] * dx[j];
            }
        }
        r
    }

    /// The remainder as a stored 2-increment (dense, for small grids).
    pub fn remainder_increment(&self) -> Increment2 {
        Increment2::from_fn(&self.times, self.k, |s, t| {
            if s == t {
                vec![0.0; self.k]
            } else {
                self.remainder(s, t)
            }
        })
    }

    /// Controlled path solving `δz = 𝒥(m dx)` from `z_0`, built by
    /// compensated one-step sums of the matrix integrand `m` (values of
    /// shape `k x d`) along the piecewise-linear driver.
    pub fn integrate(m: &ControlledPath, z0: &[f64]) -> Result<ControlledPath> {
        let d = m.d;
        if m.k % d != 0 || m.k / d != z0.len() {
            return Err(Error::Dimension(format!(
                "integrand of dimension {} does not map R^{d} to R^{}",
                m.k,
                z0.len()
            )));
        }
        let k = z0.len();
        let n = m.points();
        let mut z = Vec::with_capacity(n * k);
        z.extend_from_slice(z0);
        let mut area = vec![0.0; d * d];
        for p in 0..n - 1 {
            let dx: Vec<f64> = (0..d)
                .map(|j| m.driver_at(p + 1)[j] - m.driver_at(p)[j])
                .collect();
            for i in 0..d {
                for j in 0..d {
                    area[i * d + j] = 0.5 * dx[i] * dx[j];
                }
            }
            let step = compensated_step(m, p, &dx, &area, k);
            for (c, s) in step.iter().enumerate() {
                let prev = z[p * k + c];
                z.push(prev + s);
            }
        }
        Ok(ControlledPath {
            times: m.times.clone(),
            k,
            d,
            z,
            zeta: m.z.clone(),
            x: m.x.clone(),
        })
    }
}

/// One compensated step `m_s δx + ζ^m_s x²` for an integrand of shape
/// `rows x d`, giving a vector of length `rows`.
fn compensated_step(m: &ControlledPath, p: usize, dx: &[f64], area: &[f64], rows: usize) -> Vec<f64> {
    let d = m.d;
    let mv = m.value(p);
    let zeta = m.derivative(p);
    let mut out = vec![0.0; rows];
    for (r, o) in out.iter_mut().enumerate() {
        for j in 0..d {
            let c = r * d + j;
            *o += mv[c] * dx[j];
            for i in 0..d {
                // ζ^{c, i} x²(i, j) = Σ ∂_i m^c ∫ δx^i dx^j
                *o += zeta[c * d + i] * area[i * d + j];
            }
        }
    }
    out
}

fn check_resolution(m: &ControlledPath, area: &AreaProcess, s: usize, t: usize) -> Result<()> {
    let n = m.points() - 1;
    if area.dim != m.d || area.blocks() * area.block != n {
        return Err(Error::Dimension(format!(
            "area process with {} blocks of {} does not cover {n} steps of dimension {}",
            area.blocks(),
            area.block,
            m.d
        )));
    }
    if s > t || t > n || s % area.block != 0 || t % area.block != 0 {
        return Err(Error::Dimension(format!(
            "interval [{s}, {t}] is not aligned to blocks of {}",
            area.block
        )));
    }
    Ok(())
}

/// Compensated Riemann sum of `∫_s^t m dx` over the blocks of `area`, for a
/// row-vector integrand `m` (dimension `d`, derivative `d x d`). The
/// bounds are fine grid indices aligned to the block size.
pub fn compensated_integral(
    m: &ControlledPath,
    area: &AreaProcess,
    s: usize,
    t: usize,
) -> Result<f64> {
    if m.k != m.d {
        return Err(Error::Dimension(format!(
            "integrand of dimension {} is not a row vector over {} drivers",
            m.k, m.d
        )));
    }
    check_resolution(m, area, s, t)?;
    let sums = cumulative_compensated(m, area, 1)?;
    Ok(sums[t / area.block][0] - sums[s / area.block][0])
}

/// Running compensated sums from 0 at every block boundary, for an
/// integrand of shape `rows x d`.
pub fn cumulative_compensated(
    m: &ControlledPath,
    area: &AreaProcess,
    rows: usize,
) -> Result<Vec<Vec<f64>>> {
    if m.k != rows * m.d {
        return Err(Error::Dimension(format!(
            "integrand of dimension {} does not have shape {rows} x {}",
            m.k, m.d
        )));
    }
    check_resolution(m, area, 0, m.points() - 1)?;
    let d = m.d;
    let mut acc = vec![0.0; rows];
    let mut out = Vec::with_capacity(area.blocks() + 1);
    out.push(acc.clone());
    for b in 0..area.blocks() {
        let (p, q) = (b * area.block, (b + 1) * area.block);
        let dx: Vec<f64> = (0..d)
            .map(|j| m.driver_at(q)[j] - m.driver_at(p)[j])
            .collect();
        let step = compensated_step(m, p, &dx, area.block(b), rows);
        for (a, s) in acc.iter_mut().zip(step) {
            *a += s;
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// Left-point Riemann sum `Σ m_{t_k} · δx_{t_k t_{k+1}}` over grid indices
/// `s..t`, taking every `stride`-th point. `m` and `x` share dimension.
pub fn young_integral(m: &Increment1, x: &Increment1, s: usize, t: usize, stride: usize) -> Result<f64> {
    check_grids(&m.times, &x.times)?;
    if m.dim != x.dim {
        return Err(Error::Dimension("integrand and integrator dimensions differ".into()));
    }
    if stride == 0 || s > t || t >= m.points() || (t - s) % stride != 0 {
        return Err(Error::Dimension(format!(
            "interval [{s}, {t}] is not a multiple of stride {stride}"
        )));
    }
    let mut acc = 0.0;
    let mut p = s;
    while p < t {
        let q = p + stride;
        for c in 0..m.dim {
            acc += m.at(p)[c] * (x.at(q)[c] - x.at(p)[c]);
        }
        p = q;
    }
    Ok(acc)
}

/// [`young_integral`] at strides `2^levels, ..., 2, 1`, coarse to fine.
pub fn young_refinements(
    m: &Increment1,
    x: &Increment1,
    s: usize,
    t: usize,
    levels: u32,
) -> Result<Vec<f64>> {
    (0..=levels)
        .rev()
        .map(|l| young_integral(m, x, s, t, 1 << l))
        .collect()
}

/// Compensated sums of `∫_s^t m dx` with area blocks of `2^levels, ..., 2, 1`
/// fine steps, coarse to fine.
pub fn compensated_refinements(
    m: &ControlledPath,
    path: &FbmPath,
    s: usize,
    t: usize,
    levels: u32,
) -> Result<Vec<f64>> {
    (0..=levels)
        .rev()
        .map(|l| {
            let area = path.levy_area(1 << l)?;
            compensated_integral(m, &area, s, t)
        })
        .collect()
}

/// `φ(z)` as a controlled path: `ẑ = φ(z)`, `ζ̂ = ∇φ(z) ζ`.
pub fn compose_controlled(phi: &[Expr], z: &ControlledPath) -> Result<ControlledPath> {
    let k = z.k;
    let d = z.d;
    let out_k = phi.len();
    let vals: Vec<Compiled> = phi.iter().map(Compiled::new).collect();
    let grads: Vec<Vec<Compiled>> = phi
        .iter()
        .map(|e| (0..k).map(|v| Compiled::new(&e.diff(v))).collect())
        .collect();
    let n = z.points();
    let mut zv = Vec::with_capacity(n * out_k);
    let mut zeta = vec![0.0; n * out_k * d];
    for p in 0..n {
        let point = z.value(p);
        let zd = z.derivative(p);
        for (r, (v, g)) in vals.iter().zip(&grads).enumerate() {
            zv.push(v.eval(point).map_err(|e| at_point(e, p))?);
            for (a, ga) in g.iter().enumerate() {
                let da = ga.eval(point).map_err(|e| at_point(e, p))?;
                if da == 0.0 {
                    continue;
                }
                for j in 0..d {
                    zeta[(p * out_k + r) * d + j] += da * zd[a * d + j];
                }
            }
        }
    }
    Ok(ControlledPath {
        times: z.times.clone(),
        k: out_k,
        d,
        z: zv,
        zeta,
        x: z.x.clone(),
    })
}

fn at_point(e: Error, p: usize) -> Error {
    match e {
        Error::Domain(msg) => Error::Domain(format!("{msg} at grid point {p}")),
        other => other,
    }
}

/// Discrepancy in the change-of-variable formula
/// `δ(f(z))_{st} = 𝒥_{st}(∇f(z) m dx)` for `z` with `δz = 𝒥(m dx)`, the
/// right side computed by compensated sums over the blocks of `area`.
/// Returns the sup over block-aligned pairs.
pub fn ito_residual(f: &Expr, z: &ControlledPath, m: &ControlledPath, area: &AreaProcess) -> Result<f64> {
    let r = ito_residual_path(f, z, m, area)?;
    let (lo, hi) = r
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

/// The residual `R_{0t}` of [`ito_residual`] at every block boundary `t`.
pub fn ito_residual_path(
    f: &Expr,
    z: &ControlledPath,
    m: &ControlledPath,
    area: &AreaProcess,
) -> Result<Vec<f64>> {
    let (k, d) = (z.k, z.d);
    if m.k != k * d || m.d != d || m.points() != z.points() {
        return Err(Error::Dimension(format!(
            "integrand of dimension {} does not match a path in R^{k} over {d} drivers",
            m.k
        )));
    }
    let fv = Compiled::new(f);
    let grad: Vec<Expr> = (0..k).map(|a| f.diff(a)).collect();
    let hess: Vec<Vec<Compiled>> = grad
        .iter()
        .map(|g| (0..k).map(|b| Compiled::new(&g.diff(b))).collect())
        .collect();
    let grad: Vec<Compiled> = grad.iter().map(Compiled::new).collect();
    // w^j = Σ_a ∂_a f(z) m^{a j},
    // ζ_w^{j i} = Σ_{a b} ∂_{ab} f(z) m^{b i} m^{a j} + Σ_a ∂_a f(z) ζ_m^{(a j) i}
    let n = z.points();
    let mut w = vec![0.0; n * d];
    let mut zeta = vec![0.0; n * d * d];
    let mut fz = vec![0.0; n];
    for p in 0..n {
        let zp = z.value(p);
        let mp = m.value(p);
        let mz = m.derivative(p);
        fz[p] = fv.eval(zp).map_err(|e| at_point(e, p))?;
        for a in 0..k {
            let ga = grad[a].eval(zp).map_err(|e| at_point(e, p))?;
            for j in 0..d {
                w[p * d + j] += ga * mp[a * d + j];
                for i in 0..d {
                    zeta[(p * d + j) * d + i] += ga * mz[(a * d + j) * d + i];
                }
            }
            for b in 0..k {
                let hab = hess[a][b].eval(zp).map_err(|e| at_point(e, p))?;
                if hab == 0.0 {
                    continue;
                }
                for j in 0..d {
                    for i in 0..d {
                        zeta[(p * d + j) * d + i] += hab * mp[b * d + i] * mp[a * d + j];
                    }
                }
            }
        }
    }
    let integrand = ControlledPath {
        times: z.times.clone(),
        k: d,
        d,
        z: w,
        zeta,
        x: z.x.clone(),
    };
    let sums = cumulative_compensated(&integrand, area, 1)?;
    Ok(sums
        .iter()
        .enumerate()
        .map(|(b, c)| fz[b * area.block] - fz[0] - c[0])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm_sim::sample_fbm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Vec<f64> {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    }

    fn random1(times: &[f64], dim: usize, seed: u64) -> Increment1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Increment1::from_fn(times, dim, |_| (0..dim).map(|_| rng_val(&mut rng)).collect())
    }

    fn rng_val(rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(-1.0..1.0)
    }

    #[test]
    fn constant_has_zero_increment() {
        let t = grid(8);
        let g = Increment1::scalar(&t, vec![3.0; 9]);
        assert_eq!(delta1(&g).max_abs(), 0.0);
    }

    #[test]
    fn delta_squares_to_zero_exactly() {
        let t = grid(15);
        let g = random1(&t, 2, 1);
        assert_eq!(delta2(&delta1(&g)).max_abs(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Increment2::from_fn(&t[..9], 1, |s, t| {
            if s == t {
                vec![0.0]
            } else {
                vec![rng_val(&mut rng)]
            }
        });
        assert_eq!(delta3(&delta2(&h)).max_abs(), 0.0);
    }

    #[test]
    fn coboundary_of_iterated_integral_is_product_of_increments() {
        // 𝒥(df dg)_{st} = Σ_{s<=k<t} (f_k - f_s)(g_{k+1} - g_k) as a Riemann sum
        let t = grid(12);
        let f = random1(&t, 1, 3);
        let g = random1(&t, 1, 4);
        let j = Increment2::from_fn(&t, 1, |s, u| {
            let mut acc = 0.0;
            for k in s..u {
                acc += (f.values[k] - f.values[s]) * (g.values[k + 1] - g.values[k]);
            }
            vec![acc]
        });
        let lhs = delta2(&j);
        let rhs = delta1(&f).mul2(&delta1(&g)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().ordered_max_abs() < 1e-14);
    }

    #[test]
    fn holder_seminorm_examples() {
        let t = grid(16);
        let id = Increment1::scalar(&t, t.clone());
        assert!((holder_seminorm(&delta1(&id), 1.0) - 1.0).abs() < 1e-12);
        assert_eq!(holder_seminorm(&Increment2::zeros(&t, 1), 0.5), 0.0);
        let sq = Increment2::from_fn(&t, 1, |s, u| vec![(t[u] - t[s]).powi(2)]);
        assert!((holder_seminorm(&sq, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sewing_inverts_delta_on_closed_increments() {
        let t = grid(16);
        let f = random1(&t, 1, 5);
        let g = random1(&t, 1, 6);
        let h = delta1(&f).mul2(&delta1(&g)).unwrap();
        let lam = sew_checked(&h, 1e-12).unwrap();
        assert!(delta2(&lam).sub(&h).unwrap().ordered_max_abs() < 1e-13);
        assert_eq!(sew(&t, |_, _, _| 0.0).max_abs(), 0.0);
    }

    #[test]
    fn sewing_rejects_open_increments() {
        let t = grid(6);
        let h = Increment3::from_fn(&t, 1, |s, u, v| vec![(s * u * v) as f64]);
        assert!(sew_checked(&h, 1e-12).is_err());
    }

    #[test]
    fn controlled_identity_holds_for_composition() {
        let p = sample_fbm(0.4, 32, 1, 1.0, 7).unwrap();
        let x = ControlledPath::driver(&p);
        let sq: Expr = "x1^2".parse().unwrap();
        let z = compose_controlled(&[sq], &x).unwrap();
        for s in 0..32 {
            assert!((z.derivative(s)[0] - 2.0 * p.value(s, 0)).abs() < 1e-14);
            for t in s + 1..=32 {
                let dx = p.value(t, 0) - p.value(s, 0);
                assert!((z.remainder(s, t)[0] - dx * dx).abs() < 1e-12);
            }
        }
        let id = compose_controlled(&["x1".parse().unwrap()], &x).unwrap();
        assert_eq!(id.zeta, x.zeta);
        let c = compose_controlled(&["2.5".parse().unwrap()], &x).unwrap();
        assert!(c.zeta.iter().all(|v| *v == 0.0));
        assert_eq!(c.remainder(3, 20)[0], 0.0);
    }

    #[test]
    fn compensated_integral_of_constant_is_exact() {
        let p = sample_fbm(0.4, 64, 2, 1.0, 8).unwrap();
        let m = ControlledPath::constant(&p, &[1.5, -0.5]);
        for block in [1, 4, 16] {
            let area = p.levy_area(block).unwrap();
            let v = compensated_integral(&m, &area, 16, 64).unwrap();
            let exact = 1.5 * (p.value(64, 0) - p.value(16, 0)) - 0.5 * (p.value(64, 1) - p.value(16, 1));
            assert!((v - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn compensated_integral_of_driver_is_half_square() {
        // diagonal area is exactly half the squared increment
        let p = sample_fbm(0.4, 256, 1, 1.0, 9).unwrap();
        let m = ControlledPath::driver(&p);
        let area = p.levy_area(16).unwrap();
        let v = compensated_integral(&m, &area, 0, 256).unwrap();
        let exact = 0.5 * p.value(256, 0).powi(2);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn riemann_integral_of_time() {
        let n = 1 << 12;
        let t = grid(n);
        let m = Increment1::scalar(&t, t.clone());
        let left = young_integral(&m, &m, 0, n, 1).unwrap();
        assert!((left - 0.5).abs() < 1.0 / n as f64);
        // with the area the sum is exact for a linear path
        let path = FbmPath {
            hurst: 0.5,
            dim: 1,
            times: t.clone(),
            values: t.clone(),
        };
        let x = ControlledPath::driver(&path);
        let area = path.levy_area(1).unwrap();
        let v = compensated_integral(&x, &area, 0, n).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ito_residual_trivial_cases() {
        let p = sample_fbm(0.4, 128, 2, 1.0, 10).unwrap();
        let x = ControlledPath::driver(&p);
        let mut eye = vec![0.0; 129 * 4];
        for k in 0..129 {
            eye[k * 4] = 1.0;
            eye[k * 4 + 3] = 1.0;
        }
        let m = ControlledPath::new(&p, 4, eye, vec![0.0; 129 * 8]).unwrap();
        let area = p.levy_area(8).unwrap();
        let lin: Expr = "2*x1 - 3*x2 + 1".parse().unwrap();
        assert!(ito_residual(&lin, &x, &m, &area).unwrap() < 1e-12);
        let c: Expr = "4".parse().unwrap();
        assert_eq!(ito_residual(&c, &x, &m, &area).unwrap(), 0.0);
    }

    #[test]
    fn integrate_recovers_driver_for_identity_integrand() {
        let p = sample_fbm(0.4, 64, 2, 1.0, 11).unwrap();
        let mut eye = vec![0.0; 65 * 4];
        for k in 0..65 {
            eye[k * 4] = 1.0;
            eye[k * 4 + 3] = 1.0;
        }
        let m = ControlledPath::new(&p, 4, eye, vec![0.0; 65 * 8]).unwrap();
        let z = ControlledPath::integrate(&m, &[0.0, 0.0]).unwrap();
        for (a, b) in z.z.iter().zip(&p.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
