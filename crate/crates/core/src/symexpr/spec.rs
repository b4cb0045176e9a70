use serde::{Deserialize, Serialize};

use super::{parse, Expr};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Heun,
    Rough,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    /// Pairing formula where available, Monte Carlo otherwise.
    #[default]
    Auto,
    Pairing,
    Mc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionSettings {
    pub order: usize,
}

impl Default for ExpansionSettings {
    fn default() -> Self {
        ExpansionSettings { order: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Fine substeps per solver step used to build the area for the rough scheme.
    pub area_refine: usize,
    pub t_values: Vec<f64>,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            paths: 10_000,
            steps: 128,
            seed: 0,
            scheme: Scheme::Heun,
            area_refine: 4,
            t_values: vec![0.4, 0.3, 0.2, 0.15, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentSettings {
    pub method: MomentMethod,
    pub tol: f64,
    pub mc_paths: usize,
    pub mc_steps: usize,
}

impl Default for MomentSettings {
    fn default() -> Self {
        MomentSettings {
            method: MomentMethod::Auto,
            tol: 1e-6,
            mc_paths: 20_000,
            mc_steps: 256,
        }
    }
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    hurst: f64,
    n: usize,
    d: usize,
    a: Vec<f64>,
    #[serde(rename = "T", default = "one")]
    horizon: f64,
    drift: Vec<String>,
    diffusion: Vec<Vec<String>>,
    f: String,
    #[serde(default)]
    expansion: ExpansionSettings,
    #[serde(default)]
    mc: McSettings,
    #[serde(default)]
    moments: MomentSettings,
}

fn one() -> f64 {
    1.0
}

/// `dX = b(X) dt + sigma(X) dB`, `X_0 = a`, observed through `f`.
#[derive(Clone, Debug)]
pub struct SdeSpec {
    pub hurst: f64,
    pub n: usize,
    pub d: usize,
    pub a: Vec<f64>,
    pub horizon: f64,
    /// `fields[0]` is the drift, `fields[j]` the `j`-th diffusion column.
    pub fields: Vec<Vec<Expr>>,
    pub f: Expr,
    pub expansion: ExpansionSettings,
    pub mc: McSettings,
    pub moments: MomentSettings,
}

impl SdeSpec {
    pub fn from_json(text: &str) -> Result<SdeSpec> {
        let raw: RawSpec = serde_json::from_str(text)?;
        SdeSpec::from_raw(raw)
    }

    /// Builds a spec from expression strings; `diffusion[i][j]` is `sigma^{i,j}`.
    pub fn new(
        hurst: f64,
        a: Vec<f64>,
        drift: &[&str],
        diffusion: &[Vec<&str>],
        f: &str,
    ) -> Result<SdeSpec> {
        let n = a.len();
        let d = diffusion.first().map_or(0, |r| r.len());
        SdeSpec::from_raw(RawSpec {
            hurst,
            n,
            d,
            a,
            horizon: 1.0,
            drift: drift.iter().map(|s| s.to_string()).collect(),
            diffusion: diffusion
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
            f: f.to_string(),
            expansion: ExpansionSettings::default(),
            mc: McSettings::default(),
            moments: MomentSettings::default(),
        })
    }

    fn from_raw(raw: RawSpec) -> Result<SdeSpec> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(raw.hurst > 0.0 && raw.hurst < 1.0) {
            return bad(format!("hurst must lie in (0, 1), got {}", raw.hurst));
        }
        if raw.n == 0 {
            return bad("n must be positive".into());
        }
        if raw.a.len() != raw.n {
            return Err(Error::Dimension(format!(
                "a has {} entries, n = {}",
                raw.a.len(),
                raw.n
            )));
        }
        if raw.drift.len() != raw.n {
            return Err(Error::Dimension(format!(
                "drift has {} entries, n = {}",
                raw.drift.len(),
                raw.n
            )));
        }
        if raw.diffusion.len() != raw.n || raw.diffusion.iter().any(|r| r.len() != raw.d) {
            return Err(Error::Dimension(format!(
                "diffusion must be {} rows of {} expressions",
                raw.n, raw.d
            )));
        }
        if !(raw.horizon > 0.0 && raw.horizon.is_finite()) {
            return bad(format!("T must be positive, got {}", raw.horizon));
        }
        if raw.a.iter().any(|v| !v.is_finite()) {
            return bad("a must be finite".into());
        }
        if raw.mc.steps == 0 || raw.mc.paths == 0 || raw.mc.area_refine == 0 {
            return bad("mc.paths, mc.steps and mc.area_refine must be positive".into());
        }
        let n = raw.n;
        let p = |s: &String| parse(s, n);
        let mut fields = vec![raw.drift.iter().map(p).collect::<Result<Vec<_>>>()?];
        for j in 0..raw.d {
            fields.push(
                raw.diffusion
                    .iter()
                    .map(|row| p(&row[j]))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(SdeSpec {
            hurst: raw.hurst,
            n,
            d: raw.d,
            a: raw.a,
            horizon: raw.horizon,
            fields,
            f: p(&raw.f)?,
            expansion: raw.expansion,
            mc: raw.mc,
            moments: raw.moments,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawSpec {
            hurst: self.hurst,
            n: self.n,
            d: self.d,
            a: self.a.clone(),
            horizon: self.horizon,
            drift: self.fields[0].iter().map(|e| e.to_string()).collect(),
            diffusion: (0..self.n)
                .map(|i| (1..=self.d).map(|j| self.fields[j][i].to_string()).collect())
                .collect(),
            f: self.f.to_string(),
            expansion: self.expansion.clone(),
            mc: self.mc.clone(),
            moments: self.moments.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("spec serialises")
    }

    pub fn drift(&self) -> &[Expr] {
        &self.fields[0]
    }

    /// `sigma^{i,j}` with `j` one-based, matching noise letters.
    pub fn sigma(&self, i: usize, j: usize) -> &Expr {
        &self.fields[j][i]
    }

    /// Vector field for letter `j`: 0 is the drift, `j >= 1` a diffusion column.
    pub fn field(&self, j: usize) -> &[Expr] {
        &self.fields[j]
    }

    /// Human-readable warnings for unbounded primitives in the coefficients.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, col) in self.fields.iter().enumerate() {
            for (i, e) in col.iter().enumerate() {
                let names = e.unbounded_primitives();
                if !names.is_empty() {
                    let which = if j == 0 {
                        format!("drift[{}]", i + 1)
                    } else {
                        format!("diffusion[{}][{}]", i + 1, j)
                    };
                    out.push(format!("{which} uses unbounded primitive(s): {}", names.join(", ")));
                }
            }
        }
        out
    }
}

/// `D^j e = sum_k V_j^k d_k e`, with `V_0 = b` and `V_j = sigma^{., j}`.
pub fn apply_d(spec: &SdeSpec, e: &Expr, j: usize) -> Expr {
    let mut acc = Expr::Const(0.0);
    for k in 0..spec.n {
        let coeff = &spec.field(j)[k];
        if coeff.is_zero() {
            continue;
        }
        acc = Expr::add(acc, Expr::mul(coeff.clone(), e.diff(k)));
    }
    acc
}

/// `D^alpha e = D^{alpha_1} ... D^{alpha_m} e`; `D^{alpha_m}` acts first.
pub fn apply_d_alpha(spec: &SdeSpec, e: &Expr, alpha: &[usize]) -> Expr {
    let mut acc = e.clone();
    for &j in alpha.iter().rev() {
        acc = apply_d(spec, &acc, j);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"{
        "hurst": 0.75, "n": 2, "d": 1, "a": [1.0, 0.5], "T": 1.0,
        "drift": ["-x1", "x1*x2"],
        "diffusion": [["sin(x2)"], ["1"]],
        "f": "x1^2 + x2",
        "expansion": {"order": 2},
        "mc": {"paths": 100, "steps": 16, "seed": 3, "scheme": "euler"},
        "moments": {"method": "pairing", "tol": 1e-8}
    }"#;

    #[test]
    fn parses_full_spec() {
        let s = SdeSpec::from_json(SPEC).unwrap();
        assert_eq!(s.n, 2);
        assert_eq!(s.d, 1);
        assert_eq!(s.sigma(0, 1).to_string(), "sin(x2)");
        assert_eq!(s.mc.scheme, Scheme::Euler);
        assert_eq!(s.moments.method, MomentMethod::Pairing);
        let again = SdeSpec::from_json(&s.to_json()).unwrap();
        assert_eq!(again.fields, s.fields);
        assert_eq!(again.f, s.f);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_shapes() {
        let extra = SPEC.replace("\"T\": 1.0,", "\"T\": 1.0, \"bogus\": 1,");
        assert!(matches!(SdeSpec::from_json(&extra), Err(Error::Json(_))));
        let nested = SPEC.replace("\"order\": 2", "\"order\": 2, \"x\": 0");
        assert!(matches!(SdeSpec::from_json(&nested), Err(Error::Json(_))));
        let short = SPEC.replace("[1.0, 0.5]", "[1.0]");
        assert!(matches!(SdeSpec::from_json(&short), Err(Error::Dimension(_))));
        let var = SPEC.replace("sin(x2)", "sin(x3)");
        assert!(matches!(
            SdeSpec::from_json(&var),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn operator_composition_order() {
        // D^1 D^0 f = sigma . grad (b . grad f); with f = x, b = x^2, sigma = 1
        // this is d/dx (x^2) = 2x, while D^0 D^1 f = x^2 * d/dx(1) = 0.
        let s = SdeSpec::new(0.75, vec![1.0], &["x1^2"], &[vec!["1"]], "x1").unwrap();
        let e = apply_d_alpha(&s, &s.f, &[1, 0]);
        assert_eq!(e.eval(&[3.0]).unwrap(), 6.0);
        let e = apply_d_alpha(&s, &s.f, &[0, 1]);
        assert_eq!(e.eval(&[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn warns_on_unbounded_coefficients() {
        let s = SdeSpec::new(0.75, vec![1.0], &["exp(x1)"], &[vec!["sin(x1)"]], "x1").unwrap();
        let w = s.warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("drift[1]"));
    }
}
