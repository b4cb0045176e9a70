//! Labelled rooted trees indexing the terms of the expansion.
//!
//! Nodes are numbered `1..=l` with every parent carrying a smaller number than
//! its children. Node 1 is the root (label `γ`); every other node is either
//! deterministic (`τ_0`) or stochastic (`τ_j`). Stochastic nodes own the
//! index slots `j1, j2, ...` in increasing node order.
//!
//! The bracket notation writes the root as `(...)^1`, a deterministic node as
//! `[...]^i` and a stochastic node as `{...}_{jk}^i`; leaves are `τ_0^i` and
//! `τ_{jk}^i`, and a lone root is `γ^1`. Deterministic children are listed
//! before stochastic ones, each group by node number.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::symexpr::{Expr, SdeSpec};

/// Default cap on the number of nodes; `(l-1)! 2^(l-1)` grows quickly.
pub const DEFAULT_MAX_NODES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Label {
    Root,
    Det,
    Stoch,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelledTree {
    /// `parent[i]` is the parent of node `i` (zero-based); `parent[0]` is unused.
    parent: Vec<usize>,
    labels: Vec<Label>,
}

/// Number of labelled trees with exactly `l` nodes: `(l-1)! 2^(l-1)`.
pub fn count_trees(l: usize) -> u64 {
    if l == 0 {
        return 0;
    }
    (1..l as u64).product::<u64>() << (l - 1)
}

impl LabelledTree {
    pub fn root() -> LabelledTree {
        LabelledTree {
            parent: vec![0],
            labels: vec![Label::Root],
        }
    }

    /// Builds a tree from one-based parents of nodes `2..=l` and their labels.
    pub fn from_parts(parents: &[usize], labels: &[Label]) -> Result<LabelledTree> {
        if parents.len() != labels.len() {
            return Err(Error::Dimension(
                "parents and labels must have equal length".into(),
            ));
        }
        let mut t = LabelledTree::root();
        for (k, (&p, &lab)) in parents.iter().zip(labels).enumerate() {
            let node = k + 2;
            if p == 0 || p >= node {
                return Err(Error::InvalidSpec(format!(
                    "parent of node {node} must lie in 1..{node}, got {p}"
                )));
            }
            if lab == Label::Root {
                return Err(Error::InvalidSpec("only node 1 may be the root".into()));
            }
            t.push(p - 1, lab);
        }
        Ok(t)
    }

    /// Appends a node below the zero-based `parent`.
    pub fn push(&mut self, parent: usize, label: Label) {
        debug_assert!(parent < self.parent.len());
        self.parent.push(parent);
        self.labels.push(label);
    }

    pub fn pop(&mut self) {
        if self.parent.len() > 1 {
            self.parent.pop();
            self.labels.pop();
        }
    }

    /// Number of nodes `l`.
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// One-based parent of one-based node `node >= 2`.
    pub fn parent_of(&self, node: usize) -> usize {
        self.parent[node - 1] + 1
    }

    /// Number of deterministic nodes `d(t)`.
    pub fn num_det(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Det).count()
    }

    /// Number of stochastic nodes `s(t)`.
    pub fn num_stoch(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Stoch).count()
    }

    /// Belongs to the Stratonovich-relevant family: even number of stochastic nodes.
    pub fn is_strato(&self) -> bool {
        self.num_stoch() % 2 == 0
    }

    /// Small-time exponent `rho(t) = H s(t) + d(t)`.
    pub fn rho(&self, hurst: f64) -> f64 {
        hurst * self.num_stoch() as f64 + self.num_det() as f64
    }

    /// One-based index slot of a zero-based stochastic node.
    pub fn slot_of(&self, node: usize) -> Option<usize> {
        if self.labels[node] != Label::Stoch {
            return None;
        }
        Some(self.labels[..=node].iter().filter(|&&l| l == Label::Stoch).count())
    }

    /// Zero-based children of a zero-based node, in node order.
    pub fn children(&self, node: usize) -> Vec<usize> {
        (node + 1..self.len())
            .filter(|&c| self.parent[c] == node)
            .collect()
    }

    /// Label word template of nodes `2..=l`: 0 for `τ_0`, `k` for slot `jk`.
    pub fn label_word_template(&self) -> Vec<usize> {
        (1..self.len())
            .map(|i| self.slot_of(i).unwrap_or(0))
            .collect()
    }

    /// Concrete word for an index assignment (`assignment[k-1]` fills slot `jk`).
    pub fn label_word(&self, assignment: &[usize]) -> Vec<usize> {
        self.label_word_template()
            .into_iter()
            .map(|slot| if slot == 0 { 0 } else { assignment[slot - 1] })
            .collect()
    }

    pub fn template_string(&self) -> String {
        let parts: Vec<String> = self
            .label_word_template()
            .into_iter()
            .map(|s| if s == 0 { "0".to_string() } else { format!("j{s}") })
            .collect();
        format!("({})", parts.join(","))
    }

    /// Position of the tree in the canonical enumeration order.
    pub fn id(&self) -> u64 {
        let l = self.len();
        let offset: u64 = (1..l).map(count_trees).sum();
        let mut rank_p = 0u64;
        for node in 1..l {
            // node has `node` choices of parent (zero-based 0..node)
            rank_p = rank_p * node as u64 + self.parent[node] as u64;
        }
        let mut rank_l = 0u64;
        for node in 1..l {
            rank_l = rank_l * 2 + u64::from(self.labels[node] == Label::Stoch);
        }
        offset + (rank_p << (l - 1)) + rank_l
    }

    pub fn bracket(&self) -> String {
        if self.len() == 1 {
            return "γ^1".to_string();
        }
        let mut s = String::from("(");
        self.write_children(0, &mut s);
        s.push_str(")^1");
        s
    }

    fn write_children(&self, node: usize, out: &mut String) {
        let mut kids = self.children(node);
        kids.sort_by_key(|&c| (self.labels[c] == Label::Stoch, c));
        for (k, c) in kids.into_iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            self.write_node(c, out);
        }
    }

    fn write_node(&self, node: usize, out: &mut String) {
        let number = node + 1;
        let leaf = self.children(node).is_empty();
        match (self.labels[node], leaf) {
            (Label::Det, true) => out.push_str(&format!("τ_0^{number}")),
            (Label::Stoch, true) => {
                out.push_str(&format!("τ_{{j{}}}^{number}", self.slot_of(node).unwrap()))
            }
            (Label::Det, false) => {
                out.push('[');
                self.write_children(node, out);
                out.push_str(&format!("]^{number}"));
            }
            (Label::Stoch, false) => {
                out.push('{');
                self.write_children(node, out);
                out.push_str(&format!("}}_{{j{}}}^{number}", self.slot_of(node).unwrap()));
            }
            (Label::Root, _) => unreachable!("root is never a child"),
        }
    }

    /// Parses the bracket notation produced by [`LabelledTree::bracket`].
    pub fn parse_bracket(src: &str) -> Result<LabelledTree> {
        BracketParser { src, pos: 0 }.tree()
    }
}

impl fmt::Display for LabelledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bracket())
    }
}

struct ParsedNode {
    number: usize,
    label: Label,
    slot: Option<usize>,
    children: Vec<ParsedNode>,
}

struct BracketParser<'a> {
    src: &'a str,
    pos: usize,
}

impl BracketParser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::TreeSyntax {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            self.err(format!("expected `{token}`"))
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws();
        let digits: String = self.src[self.pos..]
            .chars()
            .take_while(|c| c.is_ascii_digit())
            .collect();
        if digits.is_empty() {
            return self.err("expected a number");
        }
        self.pos += digits.len();
        digits
            .parse()
            .or_else(|_| self.err("number out of range"))
    }

    fn node_number(&mut self) -> Result<usize> {
        self.expect("^")?;
        self.number()
    }

    fn slot(&mut self) -> Result<usize> {
        self.expect("_{j")?;
        let k = self.number()?;
        self.expect("}")?;
        Ok(k)
    }

    fn list(&mut self, close: &str) -> Result<Vec<ParsedNode>> {
        let mut out = vec![self.node()?];
        while self.eat(",") {
            out.push(self.node()?);
        }
        self.expect(close)?;
        Ok(out)
    }

    fn node(&mut self) -> Result<ParsedNode> {
        if self.eat("τ_0") {
            let number = self.node_number()?;
            return Ok(ParsedNode {
                number,
                label: Label::Det,
                slot: None,
                children: vec![],
            });
        }
        if self.eat("τ") {
            let slot = self.slot()?;
            let number = self.node_number()?;
            return Ok(ParsedNode {
                number,
                label: Label::Stoch,
                slot: Some(slot),
                children: vec![],
            });
        }
        if self.eat("[") {
            let children = self.list("]")?;
            let number = self.node_number()?;
            return Ok(ParsedNode {
                number,
                label: Label::Det,
                slot: None,
                children,
            });
        }
        if self.eat("{") {
            let children = self.list("}")?;
            let slot = self.slot()?;
            let number = self.node_number()?;
            return Ok(ParsedNode {
                number,
                label: Label::Stoch,
                slot: Some(slot),
                children,
            });
        }
        self.err("expected a node")
    }

    fn tree(&mut self) -> Result<LabelledTree> {
        let root = if self.eat("γ") {
            let n = self.node_number()?;
            ParsedNode {
                number: n,
                label: Label::Root,
                slot: None,
                children: vec![],
            }
        } else if self.eat("(") {
            let children = self.list(")")?;
            let n = self.node_number()?;
            ParsedNode {
                number: n,
                label: Label::Root,
                slot: None,
                children,
            }
        } else {
            return self.err("expected `γ` or `(`");
        };
        self.skip_ws();
        if self.pos != self.src.len() {
            return self.err("trailing input");
        }
        if root.number != 1 {
            return self.err("root must be node 1");
        }
        let mut entries: Vec<(usize, usize, Label, Option<usize>)> = Vec::new();
        flatten(&root, 0, &mut entries);
        entries.sort_by_key(|e| e.0);
        let l = entries.len();
        let mut t = LabelledTree::root();
        for (k, &(number, parent, label, _)) in entries.iter().enumerate().skip(1) {
            if number != k + 1 {
                return self.err(format!("node numbers must be 1..{l} without gaps"));
            }
            if parent >= number {
                return self.err(format!(
                    "node {number} has parent {parent}; parents must be smaller"
                ));
            }
            t.push(parent - 1, label);
        }
        if entries[0].0 != 1 {
            return self.err("duplicate node numbers");
        }
        for (k, &(number, _, _, slot)) in entries.iter().enumerate() {
            if slot.is_some() && slot != t.slot_of(k) {
                return self.err(format!(
                    "node {number} carries slot j{}, expected j{}",
                    slot.unwrap(),
                    t.slot_of(k).unwrap()
                ));
            }
        }
        Ok(t)
    }
}

fn flatten(
    node: &ParsedNode,
    parent: usize,
    out: &mut Vec<(usize, usize, Label, Option<usize>)>,
) {
    out.push((node.number, parent, node.label, node.slot));
    for c in &node.children {
        flatten(c, node.number, out);
    }
}

/// All labelled trees with at most `max_nodes` nodes in canonical order:
/// by node count, then parent vector, then label word (`τ_0` before `τ_j`).
pub fn enumerate_lts(max_nodes: usize) -> Result<Vec<LabelledTree>> {
    enumerate_trees(max_nodes, DEFAULT_MAX_NODES, false)
}

/// Like [`enumerate_lts`] with an explicit cap and an optional filter that
/// keeps only trees with an even number of stochastic nodes.
pub fn enumerate_trees(max_nodes: usize, cap: usize, strato_only: bool) -> Result<Vec<LabelledTree>> {
    if max_nodes > cap {
        return Err(Error::TreeCap {
            requested: max_nodes,
            cap,
        });
    }
    let mut out = Vec::new();
    for l in 1..=max_nodes {
        let m = l - 1;
        let mut parents = vec![0usize; m];
        loop {
            for word in 0u64..(1u64 << m) {
                let mut t = LabelledTree::root();
                for k in 0..m {
                    let stoch = (word >> (m - 1 - k)) & 1 == 1;
                    t.push(parents[k], if stoch { Label::Stoch } else { Label::Det });
                }
                if !strato_only || t.is_strato() {
                    out.push(t);
                }
            }
            // odometer: zero-based node k+1 may attach to 0..=k
            let mut advanced = false;
            let mut k = m;
            while k > 0 {
                k -= 1;
                if parents[k] < k {
                    parents[k] += 1;
                    for p in parents.iter_mut().skip(k + 1) {
                        *p = 0;
                    }
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                break;
            }
        }
    }
    Ok(out)
}

/// All assignments of `d` noise letters (`1..=d`) to the `s` slots of `tree`,
/// lexicographically ordered.
pub fn index_assignments(tree: &LabelledTree, d: usize) -> Vec<Vec<usize>> {
    let s = tree.num_stoch();
    if s > 0 && d == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = vec![1usize; s];
    loop {
        out.push(cur.clone());
        let mut k = s;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if cur[k] < d {
                cur[k] += 1;
                for c in cur.iter_mut().skip(k + 1) {
                    *c = 1;
                }
                break;
            }
        }
    }
}

/// Identifies the coefficient function attached to a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldRef {
    /// The observable `f`.
    Observable,
    /// Letter `j`: 0 is the drift, `j >= 1` a diffusion column.
    Letter(usize),
}

/// Memoised symbolic partial derivatives of `f`, `b` and the columns of `sigma`.
pub struct DerivativeTable<'a> {
    spec: &'a SdeSpec,
    exprs: HashMap<(FieldRef, usize, Vec<usize>), Expr>,
    zero_tensor: HashMap<(FieldRef, usize), bool>,
}

impl<'a> DerivativeTable<'a> {
    pub fn new(spec: &'a SdeSpec) -> Self {
        DerivativeTable {
            spec,
            exprs: HashMap::new(),
            zero_tensor: HashMap::new(),
        }
    }

    pub fn spec(&self) -> &SdeSpec {
        self.spec
    }

    fn components(&self, field: FieldRef) -> usize {
        match field {
            FieldRef::Observable => 1,
            FieldRef::Letter(_) => self.spec.n,
        }
    }

    fn base(&self, field: FieldRef, comp: usize) -> &Expr {
        match field {
            FieldRef::Observable => &self.spec.f,
            FieldRef::Letter(j) => &self.spec.field(j)[comp],
        }
    }

    /// Derivative of component `comp` along the sorted multi-index `vars`.
    pub fn derivative(&mut self, field: FieldRef, comp: usize, vars: &[usize]) -> &Expr {
        let key = (field, comp, vars.to_vec());
        if !self.exprs.contains_key(&key) {
            let e = match vars.split_last() {
                None => self.base(field, comp).clone(),
                Some((&last, rest)) => self.derivative(field, comp, rest).diff(last),
            };
            self.exprs.insert(key.clone(), e);
        }
        &self.exprs[&key]
    }

    /// True when every order-`order` partial derivative of every component
    /// simplifies to the literal zero.
    pub fn tensor_is_zero(&mut self, field: FieldRef, order: usize) -> bool {
        if let Some(&z) = self.zero_tensor.get(&(field, order)) {
            return z;
        }
        let n = self.spec.n;
        let mut zero = true;
        'outer: for comp in 0..self.components(field) {
            for vars in sorted_multi_indices(n, order) {
                if !self.derivative(field, comp, &vars).is_zero() {
                    zero = false;
                    break 'outer;
                }
            }
        }
        self.zero_tensor.insert((field, order), zero);
        zero
    }

    /// True when the elementary differential of the concrete tree vanishes
    /// identically, decided symbolically node by node.
    pub fn tree_is_zero(&mut self, tree: &LabelledTree, word: &[usize]) -> bool {
        (0..tree.len()).any(|node| {
            let field = node_field(tree, word, node);
            let order = tree.children(node).len();
            self.tensor_is_zero(field, order)
        })
    }
}

fn node_field(tree: &LabelledTree, word: &[usize], node: usize) -> FieldRef {
    if node == 0 {
        FieldRef::Observable
    } else {
        debug_assert_eq!(word[node - 1] == 0, tree.labels()[node] == Label::Det);
        FieldRef::Letter(word[node - 1])
    }
}

/// Non-decreasing sequences of length `order` over `0..n`.
pub fn sorted_multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(order);
    fn rec(n: usize, order: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(n, order, v, cur, out);
            cur.pop();
        }
    }
    rec(n, order, 0, &mut cur, &mut out);
    out
}

/// Numeric values of the derivative table at a fixed point.
pub struct PointEvaluator<'t, 'a> {
    table: &'t mut DerivativeTable<'a>,
    point: Vec<f64>,
    values: HashMap<(FieldRef, usize, Vec<usize>), f64>,
}

impl<'t, 'a> PointEvaluator<'t, 'a> {
    pub fn new(table: &'t mut DerivativeTable<'a>, point: &[f64]) -> Self {
        PointEvaluator {
            table,
            point: point.to_vec(),
            values: HashMap::new(),
        }
    }

    pub fn value(&mut self, field: FieldRef, comp: usize, vars: &[usize]) -> Result<f64> {
        let key = (field, comp, vars.to_vec());
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = self.table.derivative(field, comp, vars).eval(&self.point)?;
        self.values.insert(key, v);
        Ok(v)
    }

    /// Elementary differential `F(t)(a)` for the concrete label word `word`
    /// (letters of nodes `2..=l`).
    pub fn elementary_differential(&mut self, tree: &LabelledTree, word: &[usize]) -> Result<f64> {
        if word.len() + 1 != tree.len() {
            return Err(Error::Dimension(format!(
                "word has {} letters for a tree with {} nodes",
                word.len(),
                tree.len()
            )));
        }
        Ok(self.node_value(tree, word, 0)?[0])
    }

    fn node_value(&mut self, tree: &LabelledTree, word: &[usize], node: usize) -> Result<Vec<f64>> {
        let field = node_field(tree, word, node);
        let kids = tree.children(node);
        let child_vals = kids
            .iter()
            .map(|&c| self.node_value(tree, word, c))
            .collect::<Result<Vec<_>>>()?;
        let n = self.table.spec.n;
        let comps = self.table.components(field);
        let k = kids.len();
        let mut out = vec![0.0; comps];
        let mut idx = vec![0usize; k];
        loop {
            let weight: f64 = idx
                .iter()
                .zip(&child_vals)
                .map(|(&j, v)| v[j])
                .product();
            if weight != 0.0 {
                let mut sorted = idx.clone();
                sorted.sort_unstable();
                for (comp, o) in out.iter_mut().enumerate() {
                    *o += self.value(field, comp, &sorted)? * weight;
                }
            }
            let mut p = k;
            loop {
                if p == 0 {
                    return Ok(out);
                }
                p -= 1;
                if idx[p] + 1 < n {
                    idx[p] += 1;
                    for q in idx.iter_mut().skip(p + 1) {
                        *q = 0;
                    }
                    break;
                }
            }
        }
    }
}

/// Convenience wrapper: `F(t)(a)` for a template tree and slot assignment.
pub fn elementary_differential(
    tree: &LabelledTree,
    assignment: &[usize],
    spec: &SdeSpec,
    a: &[f64],
) -> Result<f64> {
    if assignment.len() != tree.num_stoch() {
        return Err(Error::Dimension(format!(
            "{} slots, {} letters assigned",
            tree.num_stoch(),
            assignment.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&j| j == 0 || j > spec.d) {
        return Err(Error::Dimension(format!("letter {bad} outside 1..={}", spec.d)));
    }
    let mut table = DerivativeTable::new(spec);
    let mut eval = PointEvaluator::new(&mut table, a);
    eval.elementary_differential(tree, &tree.label_word(assignment))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_level() {
        let all = enumerate_lts(5).unwrap();
        for l in 1..=5 {
            let c = all.iter().filter(|t| t.len() == l).count() as u64;
            assert_eq!(c, count_trees(l));
        }
        assert_eq!(count_trees(8), 645_120);
    }

    #[test]
    fn ids_follow_enumeration_order() {
        for (k, t) in enumerate_lts(5).unwrap().iter().enumerate() {
            assert_eq!(t.id(), k as u64);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            enumerate_lts(9),
            Err(Error::TreeCap { requested: 9, cap: 8 })
        ));
    }

    #[test]
    fn named_trees_print_as_expected() {
        // node 2 deterministic under the root, node 3 stochastic under the
        // root, node 4 stochastic under node 2
        let t = LabelledTree::from_parts(&[1, 1, 2], &[Label::Det, Label::Stoch, Label::Stoch])
            .unwrap();
        assert_eq!(t.bracket(), "([τ_{j2}^4]^2, τ_{j1}^3)^1");
        assert_eq!(t.num_det(), 1);
        assert_eq!(t.num_stoch(), 2);
        assert_eq!(t.label_word_template(), vec![0, 1, 2]);

        let t = LabelledTree::from_parts(&[1, 2, 2], &[Label::Stoch, Label::Stoch, Label::Det])
            .unwrap();
        assert_eq!(t.bracket(), "({τ_0^4, τ_{j2}^3}_{j1}^2)^1");
        assert_eq!(LabelledTree::root().bracket(), "γ^1");
    }

    #[test]
    fn bracket_round_trip_small() {
        for t in enumerate_lts(5).unwrap() {
            let back = LabelledTree::parse_bracket(&t.bracket()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn bracket_parser_rejects_bad_input() {
        assert!(LabelledTree::parse_bracket("(τ_0^3)^1").is_err());
        assert!(LabelledTree::parse_bracket("(τ_{j2}^2)^1").is_err());
        assert!(LabelledTree::parse_bracket("([τ_0^2]^3)^1").is_err());
        assert!(LabelledTree::parse_bracket("(τ_0^2)^1 x").is_err());
        assert!(LabelledTree::parse_bracket("γ^2").is_err());
    }

    #[test]
    fn assignments_enumerate_d_pow_s() {
        let t = LabelledTree::from_parts(&[1, 1, 2], &[Label::Stoch, Label::Stoch, Label::Stoch])
            .unwrap();
        let a = index_assignments(&t, 2);
        assert_eq!(a.len(), 8);
        assert_eq!(a[0], vec![1, 1, 1]);
        assert_eq!(a[7], vec![2, 2, 2]);
        assert_eq!(index_assignments(&LabelledTree::root(), 3), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn elementary_differentials_of_named_trees() {
        // f = x1 x2, b = (x2, x1^2), sigma columns (x1, 1) and (x2^2, x1)
        let spec = SdeSpec::new(
            0.75,
            vec![0.3, -0.7],
            &["x2", "x1^2"],
            &[vec!["x1", "x2^2"], vec!["1", "x1"]],
            "x1*x2",
        )
        .unwrap();
        let a = [0.3, -0.7];
        let (x, y) = (a[0], a[1]);
        let s1 = [x, 1.0];
        let s2 = [y * y, x];
        // F = f''(b'(sigma^{j2}), sigma^{j1}); f'' = [[0,1],[1,0]], b' = [[0,1],[2x,0]]
        let t = LabelledTree::from_parts(&[1, 1, 2], &[Label::Det, Label::Stoch, Label::Stoch])
            .unwrap();
        for (j1, j2) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let (u, v) = ([s1, s2][j1 - 1], [s1, s2][j2 - 1]);
            let bv = [v[1], 2.0 * x * v[0]];
            let expected = bv[0] * u[1] + bv[1] * u[0];
            let got = elementary_differential(&t, &[j1, j2], &spec, &a).unwrap();
            assert!((got - expected).abs() < 1e-14, "{j1}{j2}");
        }
        // F = f'(sigma^{j1}''(b, sigma^{j2})); sigma^1'' = 0 except nothing,
        // sigma^2 = (x2^2, x1) has d2d2 of first component = 2
        let t = LabelledTree::from_parts(&[1, 2, 2], &[Label::Stoch, Label::Stoch, Label::Det])
            .unwrap();
        let b = [y, x * x];
        for j2 in [1, 2] {
            let v = [s1, s2][j2 - 1];
            let second = [2.0 * b[1] * v[1], 0.0];
            let expected = second[0] * y + second[1] * x;
            let got = elementary_differential(&t, &[2, j2], &spec, &a).unwrap();
            assert!((got - expected).abs() < 1e-14);
            assert_eq!(elementary_differential(&t, &[1, j2], &spec, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn structural_zero_detection() {
        let spec = SdeSpec::new(0.75, vec![0.0], &["0"], &[vec!["1"]], "x1^2").unwrap();
        let mut table = DerivativeTable::new(&spec);
        let bushy = LabelledTree::from_parts(&[1, 1], &[Label::Stoch, Label::Stoch]).unwrap();
        assert!(!table.tree_is_zero(&bushy, &[1, 1]));
        let chain = LabelledTree::from_parts(&[1, 2], &[Label::Stoch, Label::Stoch]).unwrap();
        assert!(table.tree_is_zero(&chain, &[1, 1]));
        let det = LabelledTree::from_parts(&[1], &[Label::Det]).unwrap();
        assert!(table.tree_is_zero(&det, &[0]));
        let three = LabelledTree::from_parts(&[1, 1, 1], &[Label::Stoch; 3]).unwrap();
        assert!(table.tree_is_zero(&three, &[1, 1, 1]));
    }
}
