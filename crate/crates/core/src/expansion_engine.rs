//! Small-time expansion `P_t f(a) ≈ Σ_t F(t)(a) E(I_t(1)_{0,1}) t^{ρ(t)}`
//! over labelled trees with at most `m + 1` nodes.
//!
//! Concrete trees (a template tree together with its slot assignment) are
//! generated depth first: removing the highest-numbered node, always a leaf,
//! gives the unique parent in the search. A tree whose elementary
//! differential is structurally zero only has structurally zero extensions,
//! so its subtree is skipped and counted as pruned.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian_moments::{
    closed_form, expected_iterated_integral, simulate_expected_words, MomentOptions,
    MomentResult, MomentSource, SimSettings,
};
use crate::symexpr::{apply_d_alpha, MomentMethod, SdeSpec};
use crate::tree_enum::{DerivativeTable, Label, LabelledTree, PointEvaluator};

/// Supplies `E ∫_{Δ^k([0,1])} dB^α` for a batch of words.
pub trait MomentProvider {
    fn moments(&self, words: &[Vec<usize>], hurst: f64) -> Result<Vec<MomentResult>>;
}

/// Closed forms and the pairing formula where available, otherwise one
/// batched path simulation for all remaining words.
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultMoments {
    pub opts: MomentOptions,
}

impl DefaultMoments {
    pub fn from_spec(spec: &SdeSpec) -> DefaultMoments {
        DefaultMoments {
            opts: MomentOptions {
                method: spec.moments.method,
                tol: spec.moments.tol,
                mc_paths: spec.moments.mc_paths,
                mc_steps: spec.moments.mc_steps,
                seed: spec.mc.seed,
            },
        }
    }
}

impl MomentProvider for DefaultMoments {
    fn moments(&self, words: &[Vec<usize>], hurst: f64) -> Result<Vec<MomentResult>> {
        let mut out: Vec<Option<MomentResult>> = vec![None; words.len()];
        let mut simulate = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let odd = w.iter().filter(|&&c| c != 0).count() % 2 == 1;
            let closed = self.opts.method != MomentMethod::Mc && closed_form(w, hurst).is_some();
            let pairing = match self.opts.method {
                MomentMethod::Auto => hurst > 0.5,
                MomentMethod::Pairing => true,
                MomentMethod::Mc => false,
            };
            if odd || closed || pairing {
                out[i] = Some(expected_iterated_integral(w, hurst, &self.opts).map_err(|e| {
                    Error::Domain(format!("moment of word {w:?}: {e}"))
                })?);
            } else {
                simulate.push(i);
            }
        }
        if !simulate.is_empty() {
            let batch: Vec<Vec<usize>> = simulate.iter().map(|&i| words[i].clone()).collect();
            let est = simulate_expected_words(
                &batch,
                hurst,
                SimSettings {
                    paths: self.opts.mc_paths,
                    steps: self.opts.mc_steps,
                    seed: self.opts.seed,
                },
            )?;
            for (&i, e) in simulate.iter().zip(est) {
                out[i] = Some(MomentResult {
                    value: e.mean,
                    error_estimate: e.stderr,
                    method: MomentSource::MonteCarlo,
                    matchings: Vec::new(),
                });
            }
        }
        Ok(out.into_iter().map(|m| m.expect("every word handled")).collect())
    }
}

/// One concrete tree of the expansion.
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionTerm {
    pub tree_id: u64,
    pub bracket: String,
    /// Letters filling the slots `j1, ..., js`.
    pub assignment: Vec<usize>,
    /// Letters of nodes `2..=l`.
    pub word: Vec<usize>,
    /// `F(t)(a)`.
    pub coefficient: f64,
    /// `E(I_t(1)_{0,1})`.
    pub moment: f64,
    pub moment_stderr: f64,
    pub moment_method: MomentSource,
    pub det: usize,
    pub stoch: usize,
    /// `ρ(t) = H s + d`.
    pub exponent: f64,
}

impl ExpansionTerm {
    pub fn value(&self, t: f64) -> f64 {
        self.coefficient * self.moment * t.powf(self.exponent)
    }
}

/// Terms sharing an exponent `ρ`, merged when exponents differ by < 1e-12.
#[derive(Clone, Debug, Serialize)]
pub struct AggregateTerm {
    pub exponent: f64,
    /// Distinct `(s, d)` pairs contributing to this power.
    pub powers: Vec<(usize, usize)>,
    pub coefficient: f64,
    /// Propagated standard error from simulated moments.
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Expansion {
    pub hurst: f64,
    pub order: usize,
    pub a: Vec<f64>,
    pub terms: Vec<ExpansionTerm>,
    /// Concrete trees skipped because their elementary differential is
    /// structurally zero.
    pub pruned: u128,
    /// All concrete trees with at most `order + 1` nodes.
    pub total: u128,
    /// `(m + 1) H`.
    pub remainder_order: f64,
}

/// Compensated (Kahan) summation.
fn kahan(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

impl Expansion {
    /// `Σ_t F(t)(a) E(I_t) t^ρ`.
    pub fn evaluate(&self, t: f64) -> f64 {
        kahan(self.terms.iter().map(|term| term.value(t)))
    }

    /// Standard error of [`Expansion::evaluate`] from simulated moments,
    /// treating the moment errors as independent.
    pub fn stderr(&self, t: f64) -> f64 {
        kahan(self.terms.iter().map(|term| {
            (term.coefficient * term.moment_stderr * t.powf(term.exponent)).powi(2)
        }))
        .sqrt()
    }

    /// Polynomial form in `t` and `t^H`, ordered by exponent.
    pub fn aggregate(&self) -> Vec<AggregateTerm> {
        let mut groups: Vec<(AggregateTerm, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut sorted: Vec<&ExpansionTerm> = self.terms.iter().collect();
        sorted.sort_by(|a, b| a.exponent.total_cmp(&b.exponent));
        for term in sorted {
            let value = term.coefficient * term.moment;
            let err = (term.coefficient * term.moment_stderr).powi(2);
            match groups.last_mut() {
                Some((g, vals, errs)) if (term.exponent - g.exponent).abs() < 1e-12 => {
                    if !g.powers.contains(&(term.stoch, term.det)) {
                        g.powers.push((term.stoch, term.det));
                    }
                    vals.push(value);
                    errs.push(err);
                }
                _ => groups.push((
                    AggregateTerm {
                        exponent: term.exponent,
                        powers: vec![(term.stoch, term.det)],
                        coefficient: 0.0,
                        stderr: 0.0,
                    },
                    vec![value],
                    vec![err],
                )),
            }
        }
        groups
            .into_iter()
            .map(|(mut g, vals, errs)| {
                g.coefficient = kahan(vals.into_iter());
                g.stderr = kahan(errs.into_iter()).sqrt();
                g.powers.sort_unstable();
                g
            })
            .collect()
    }

    /// `Σ F(t)(a)` over concrete trees grouped by label word.
    pub fn coefficients_by_word(&self) -> BTreeMap<Vec<usize>, f64> {
        let mut out: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for term in &self.terms {
            out.entry(term.word.clone()).or_default().push(term.coefficient);
        }
        out.into_iter()
            .map(|(w, v)| (w, kahan(v.into_iter())))
            .collect()
    }

    /// Copy without terms whose moment is exactly zero.
    pub fn without_zero_moments(&self) -> Expansion {
        let mut e = self.clone();
        e.terms.retain(|t| t.moment != 0.0);
        e
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            #[serde(flatten)]
            expansion: &'a Expansion,
            aggregate: Vec<AggregateTerm>,
        }
        serde_json::to_string_pretty(&Report {
            expansion: self,
            aggregate: self.aggregate(),
        })
        .expect("expansion serialises")
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "order {} at a = {:?}, H = {}: {} terms, {} of {} concrete trees pruned as zero\n",
            self.order,
            self.a,
            self.hurst,
            self.terms.len(),
            self.pruned,
            self.total
        );
        s.push_str("bracket\tj\tF(t)(a)\tE(I_t)\trho\n");
        for t in &self.terms {
            s.push_str(&format!(
                "{}\t{:?}\t{}\t{}\t{}\n",
                t.bracket, t.assignment, t.coefficient, t.moment, t.exponent
            ));
        }
        s.push_str("aggregate:\n");
        for g in self.aggregate() {
            s.push_str(&format!("  t^{}: {}\n", g.exponent, g.coefficient));
        }
        s
    }
}

struct PlanEntry {
    tree: LabelledTree,
    word: Vec<usize>,
}

/// Structural part of an expansion: the non-zero concrete trees and the
/// moments of their words. Coefficients are evaluated per point.
pub struct ExpansionPlan<'s> {
    spec: &'s SdeSpec,
    order: usize,
    table: DerivativeTable<'s>,
    entries: Vec<PlanEntry>,
    moments: HashMap<Vec<usize>, MomentResult>,
    pruned: u128,
    total: u128,
}

/// Number of concrete trees with exactly `l` nodes over `d` noises:
/// `(l-1)! (d+1)^(l-1)`.
pub fn count_concrete_trees(l: usize, d: usize) -> u128 {
    if l == 0 {
        return 0;
    }
    (1..l as u128).product::<u128>() * ((d as u128 + 1).pow(l as u32 - 1))
}

impl<'s> ExpansionPlan<'s> {
    pub fn new(spec: &'s SdeSpec, order: usize) -> Result<ExpansionPlan<'s>> {
        ExpansionPlan::with_provider(spec, order, &DefaultMoments::from_spec(spec))
    }

    pub fn with_provider(
        spec: &'s SdeSpec,
        order: usize,
        provider: &dyn MomentProvider,
    ) -> Result<ExpansionPlan<'s>> {
        let mut table = DerivativeTable::new(spec);
        let mut entries = Vec::new();
        let mut tree = LabelledTree::root();
        let mut word = Vec::new();
        if table.tree_is_zero(&tree, &word) {
            // f is identically zero in its value
        } else {
            search(&mut table, &mut tree, &mut word, order + 1, spec.d, &mut entries);
        }
        let total: u128 = (1..=order + 1).map(|l| count_concrete_trees(l, spec.d)).sum();
        let pruned = total - entries.len() as u128;
        let mut keys: Vec<Vec<usize>> = entries.iter().map(|e| e.word.clone()).collect();
        keys.sort();
        keys.dedup();
        // the law of fBm is invariant under time reversal, which reverses words
        let canon = |w: &Vec<usize>| {
            let r: Vec<usize> = w.iter().rev().copied().collect();
            if r < *w {
                r
            } else {
                w.clone()
            }
        };
        let mut unique: Vec<Vec<usize>> = keys.iter().map(canon).collect();
        unique.sort();
        unique.dedup();
        let results = provider.moments(&unique, spec.hurst)?;
        if results.len() != unique.len() {
            return Err(Error::Dimension("moment provider returned a short batch".into()));
        }
        let by_canon: HashMap<Vec<usize>, MomentResult> = unique.into_iter().zip(results).collect();
        let moments = keys
            .into_iter()
            .map(|w| {
                let m = by_canon[&canon(&w)].clone();
                (w, m)
            })
            .collect();
        Ok(ExpansionPlan {
            spec,
            order,
            table,
            entries,
            moments,
            pruned,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The expansion at the starting point `a`.
    pub fn expansion_at(&mut self, a: &[f64]) -> Result<Expansion> {
        if a.len() != self.spec.n {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, equation has {}",
                a.len(),
                self.spec.n
            )));
        }
        let hurst = self.spec.hurst;
        let mut eval = PointEvaluator::new(&mut self.table, a);
        let mut terms = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let coefficient = eval.elementary_differential(&e.tree, &e.word).map_err(|err| {
                Error::Domain(format!("F({}) with letters {:?}: {err}", e.tree.bracket(), e.word))
            })?;
            let m = &self.moments[&e.word];
            let (det, stoch) = (e.tree.num_det(), e.tree.num_stoch());
            terms.push(ExpansionTerm {
                tree_id: e.tree.id(),
                bracket: e.tree.bracket(),
                assignment: e.word.iter().copied().filter(|&c| c != 0).collect(),
                word: e.word.clone(),
                coefficient,
                moment: m.value,
                moment_stderr: m.error_estimate,
                moment_method: m.method,
                det,
                stoch,
                exponent: hurst * stoch as f64 + det as f64,
            });
        }
        terms.sort_by_key(|t| (t.tree_id, t.assignment.clone()));
        Ok(Expansion {
            hurst,
            order: self.order,
            a: a.to_vec(),
            terms,
            pruned: self.pruned,
            total: self.total,
            remainder_order: (self.order + 1) as f64 * hurst,
        })
    }
}

fn search(
    table: &mut DerivativeTable<'_>,
    tree: &mut LabelledTree,
    word: &mut Vec<usize>,
    max_nodes: usize,
    d: usize,
    out: &mut Vec<PlanEntry>,
) {
    out.push(PlanEntry {
        tree: tree.clone(),
        word: word.clone(),
    });
    if tree.len() == max_nodes {
        return;
    }
    for parent in 0..tree.len() {
        for letter in 0..=d {
            let label = if letter == 0 { Label::Det } else { Label::Stoch };
            tree.push(parent, label);
            word.push(letter);
            if !table.tree_is_zero(tree, word) {
                search(table, tree, word, max_nodes, d, out);
            }
            word.pop();
            tree.pop();
        }
    }
}

/// The order-`m` expansion of `P_t f(a)` at the equation's starting point.
pub fn expand(spec: &SdeSpec, order: usize) -> Result<Expansion> {
    ExpansionPlan::new(spec, order)?.expansion_at(&spec.a)
}

/// Same as [`expand`] with an explicit moment source.
pub fn expand_with(spec: &SdeSpec, order: usize, provider: &dyn MomentProvider) -> Result<Expansion> {
    ExpansionPlan::with_provider(spec, order, provider)?.expansion_at(&spec.a)
}

/// `𝒟^α f(a)` keyed by the tree label word, which lists the operators in
/// the order they act on `f` (the reverse of `α`). Words up to length `m`.
pub fn operator_coefficients(spec: &SdeSpec, order: usize, a: &[f64]) -> Result<BTreeMap<Vec<usize>, f64>> {
    let mut out = BTreeMap::new();
    let mut frontier = vec![(Vec::new(), spec.f.clone())];
    out.insert(Vec::new(), spec.f.eval(a)?);
    for _ in 0..order {
        let mut next = Vec::new();
        for (w, e) in &frontier {
            for j in 0..=spec.d {
                let de = apply_d_alpha(spec, e, &[j]);
                let mut w2: Vec<usize> = w.clone();
                w2.push(j);
                out.insert(w2.clone(), de.eval(a)?);
                next.push((w2, de));
            }
        }
        frontier = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial(h: f64, f: &str) -> SdeSpec {
        SdeSpec::new(h, vec![0.3], &["0"], &[vec!["1"]], f).unwrap()
    }

    #[test]
    fn order_zero_is_the_observable() {
        let sp = SdeSpec::new(0.7, vec![0.5], &["x1"], &[vec!["sin(x1)"]], "exp(x1)").unwrap();
        let e = expand(&sp, 0).unwrap();
        assert_eq!(e.terms.len(), 1);
        for t in [0.0, 0.3, 1.0] {
            assert!((e.evaluate(t) - 0.5f64.exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn trivial_equation_square() {
        let sp = SdeSpec::new(0.7, vec![0.0], &["0"], &[vec!["1"]], "x1^2").unwrap();
        let e = expand(&sp, 3).unwrap();
        for t in [0.1, 0.5, 1.0] {
            assert!((e.evaluate(t) - t.powf(1.4)).abs() < 1e-14);
        }
        assert_eq!(e.evaluate(0.0), 0.0);
    }

    #[test]
    fn trivial_equation_prunes_to_bushes() {
        let sp = trivial(0.75, "exp(x1)");
        let e = expand(&sp, 8).unwrap();
        // one bushy tree per size
        assert_eq!(e.terms.len(), 9);
        assert_eq!(e.total, (1..=9).map(|l| count_concrete_trees(l, 1)).sum::<u128>());
        for g in e.aggregate() {
            assert_eq!(g.powers.len(), 1);
            let k = g.powers[0].0;
            let ck = if k % 2 == 0 {
                1.0 / (2f64.powi(k as i32 / 2) * (1..=k / 2).product::<usize>() as f64)
            } else {
                0.0
            };
            assert!((g.coefficient - ck * 0.3f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn word_sums_match_operator_form() {
        let sp = SdeSpec::new(
            0.7,
            vec![0.2, -0.4],
            &["sin(x2)", "x1*x2"],
            &[vec!["1 + x2^2", "0.5"], vec!["cos(x1)", "x1"]],
            "x1^2*x2 + exp(x2)",
        )
        .unwrap();
        let e = expand(&sp, 3).unwrap();
        let ops = operator_coefficients(&sp, 3, &sp.a).unwrap();
        let words = e.coefficients_by_word();
        for (w, v) in &ops {
            let tree_sum = words.get(w).copied().unwrap_or(0.0);
            assert!((tree_sum - v).abs() < 1e-9 * (1.0 + v.abs()), "{w:?}: {tree_sum} vs {v}");
        }
    }

    #[test]
    fn odd_trees_have_zero_moment() {
        let sp = SdeSpec::new(0.8, vec![0.4], &["x1"], &[vec!["sin(x1)"]], "x1^3").unwrap();
        let e = expand(&sp, 2).unwrap();
        let templates: std::collections::BTreeSet<u64> = e.terms.iter().map(|t| t.tree_id).collect();
        assert_eq!(templates.len(), 11);
        for t in &e.terms {
            if t.stoch % 2 == 1 {
                assert_eq!(t.moment, 0.0);
            }
        }
    }
}
