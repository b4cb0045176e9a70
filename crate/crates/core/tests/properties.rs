//! Algebraic invariants checked on generated inputs.

use fracdev_core::expansion_engine::{operator_coefficients, ExpansionPlan};
use fracdev_core::rough_core::{delta1, delta2, delta3, Increment1, Increment2};
use fracdev_core::symexpr::{parse, Expr, Func, SdeSpec};
use fracdev_core::tree_enum::{enumerate_lts, Label, LabelledTree};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (-8i32..=8).prop_map(|k| Expr::Const(k as f64 / 4.0)),
        (0usize..3).prop_map(Expr::Var),
    ]
}

/// Expressions built from the raw variants, so printing sees every shape.
fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            inner.clone().prop_map(move |a| Expr::Neg(b(a))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Mul(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Div(b(x), b(y))),
            (inner.clone(), 0u32..4).prop_map(move |(x, k)| Expr::Pow(b(x), b(Expr::Const(k as f64)))),
            (inner, 0usize..4).prop_map(move |(x, f)| {
                let func = [Func::Sin, Func::Cos, Func::Exp, Func::Tanh][f];
                Expr::Call(func, b(x))
            }),
        ]
    })
}

/// Smooth expressions without division, for derivative checks.
fn smooth() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(3, 16, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Mul(b(x), b(y))),
            (inner.clone(), 0u32..3).prop_map(move |(x, k)| Expr::Pow(b(x), b(Expr::Const(k as f64)))),
            (inner, 0usize..3).prop_map(move |(x, f)| {
                Expr::Call([Func::Sin, Func::Cos, Func::Tanh][f], b(x))
            }),
        ]
    })
}

fn same_value(a: Result<f64, impl std::fmt::Debug>, b: Result<f64, impl std::fmt::Debug>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()))
        }
        (Ok(x), Ok(y)) => x.is_finite() == y.is_finite(),
        (Err(_), Err(_)) => true,
        // a folded constant may overflow where the original raised
        (Ok(x), Err(_)) | (Err(_), Ok(x)) => !x.is_finite(),
    }
}

fn tree() -> impl Strategy<Value = LabelledTree> {
    (1usize..=6).prop_flat_map(|l| {
        let parents: Vec<BoxedStrategy<usize>> =
            (0..l - 1).map(|k| (1..=k + 1).boxed()).collect();
        (parents, prop::collection::vec(any::<bool>(), l - 1)).prop_map(|(p, s)| {
            let labels: Vec<Label> = s
                .into_iter()
                .map(|b| if b { Label::Stoch } else { Label::Det })
                .collect();
            LabelledTree::from_parts(&p, &labels).unwrap()
        })
    })
}

fn increment1(n: usize, dim: usize) -> impl Strategy<Value = Increment1> {
    prop::collection::vec(-1.0f64..1.0, n * dim).prop_map(move |v| {
        let times: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        Increment1::new(times, dim, v).unwrap()
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn printed_expressions_parse_to_the_same_function(e in expr(), x in prop::array::uniform3(-2.0f64..2.0)) {
        let printed = e.to_string();
        let back = parse(&printed, 3).unwrap();
        prop_assert!(same_value(e.eval(&x), back.eval(&x)), "{printed} -> {back}");
        prop_assert_eq!(back.to_string(), parse(&back.to_string(), 3).unwrap().to_string());
    }

    #[test]
    fn derivatives_match_central_differences(e in smooth(), x in prop::array::uniform3(-1.0f64..1.0), v in 0usize..3) {
        let d = e.diff(v).eval(&x).unwrap();
        let h = 1e-5;
        let mut up = x;
        let mut down = x;
        up[v] += h;
        down[v] -= h;
        let fd = (e.eval(&up).unwrap() - e.eval(&down).unwrap()) / (2.0 * h);
        prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{e}: {d} vs {fd}");
    }

    #[test]
    fn brackets_round_trip(t in tree()) {
        let s = t.bracket();
        prop_assert_eq!(LabelledTree::parse_bracket(&s).unwrap(), t.clone());
        let all = enumerate_lts(t.len()).unwrap();
        prop_assert_eq!(&all[t.id() as usize], &t);
    }

    #[test]
    fn coboundary_squares_to_zero(g in increment1(12, 2), hv in prop::collection::vec(-1.0f64..1.0, 100)) {
        prop_assert!(delta2(&delta1(&g)).max_abs() < 1e-15);
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let h = Increment2::from_fn(&times, 1, |s, t| vec![if s == t { 0.0 } else { hv[s * 10 + t] }]);
        prop_assert!(delta3(&delta2(&h)).max_abs() < 1e-14);
    }

    #[test]
    fn product_rules(f in increment1(10, 1), g in increment1(10, 1), hv in prop::collection::vec(-1.0f64..1.0, 100)) {
        let h = Increment2::from_fn(&f.times, 1, |s, t| vec![if s == t { 0.0 } else { hv[s * 10 + t] }]);
        let lhs = delta2(&g.mul2(&h).unwrap());
        let rhs = g.mul3(&delta2(&h)).unwrap().sub(&delta1(&g).mul2(&h).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().ordered_max_abs() < 1e-14);
        let j = Increment2::from_fn(&f.times, 1, |s, t| {
            vec![(s..t).map(|k| (f.values[k] - f.values[s]) * (g.values[k + 1] - g.values[k])).sum()]
        });
        let prod = delta1(&f).mul2(&delta1(&g)).unwrap();
        prop_assert!(delta2(&j).sub(&prod).unwrap().ordered_max_abs() < 1e-13);
    }
}

fn two_d_spec() -> SdeSpec {
    SdeSpec::new(
        0.65,
        vec![0.2, -0.4],
        &["x2 - x1", "sin(x1)"],
        &[vec!["1 + x2^2", "0.5"], vec!["x1", "cos(x2)"]],
        "exp(0.5*x1) * x2",
    )
    .unwrap()
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn expansion_bookkeeping(a in prop::array::uniform2(-1.0f64..1.0), order in 0usize..=3) {
        let spec = two_d_spec();
        let mut plan = ExpansionPlan::new(&spec, order).unwrap();
        let e = plan.expansion_at(&a).unwrap();
        prop_assert_eq!(e.terms.len() as u128 + e.pruned, e.total);
        prop_assert!((e.evaluate(0.0) - spec.f.eval(&a).unwrap()).abs() < 1e-14);
        let ops = operator_coefficients(&spec, order, &a).unwrap();
        for (word, c) in e.coefficients_by_word() {
            let want = ops[&word];
            prop_assert!((c - want).abs() <= 1e-10 * (1.0 + want.abs()), "{word:?}: {c} vs {want}");
        }
        // words whose trees were all pruned have zero operator value
        for (word, v) in &ops {
            if !e.terms.iter().any(|t| &t.word == word) {
                prop_assert!(v.abs() < 1e-10, "{word:?} = {v}");
            }
        }
    }
}
