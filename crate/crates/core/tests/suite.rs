//! Suite plumbing: selection, exit codes and detection of a bad moment table.

use fracdev_core::expansion_engine::{DefaultMoments, MomentProvider};
use fracdev_core::gaussian_moments::MomentResult;
use fracdev_core::harness::{run_suite, Scale, SuiteConfig};
use fracdev_core::Result;

/// Returns correct moments except for `(1, 1)`, which is off by 10%.
struct Corrupted;

impl MomentProvider for Corrupted {
    fn moments(&self, words: &[Vec<usize>], hurst: f64) -> Result<Vec<MomentResult>> {
        let mut out = DefaultMoments::default().moments(words, hurst)?;
        for (w, m) in words.iter().zip(out.iter_mut()) {
            if w == &[1, 1] {
                m.value *= 1.1;
            }
        }
        Ok(out)
    }
}

fn quick(criteria: Vec<usize>) -> SuiteConfig {
    SuiteConfig {
        seed: 1,
        scale: Scale::Quick,
        criteria,
        ..SuiteConfig::default()
    }
}

#[test]
fn empty_selection_exits_zero() {
    let r = run_suite(&quick(vec![]), &DefaultMoments::default());
    assert!(r.results.is_empty());
    assert_eq!(r.exit_code(), 0);
}

#[test]
fn single_exact_check_passes() {
    let r = run_suite(&quick(vec![3]), &DefaultMoments::default());
    assert_eq!(r.results.len(), 1);
    assert!(r.passed, "{}", r.to_text());
}

#[test]
fn corrupted_moment_table_fails_by_name() {
    let r = run_suite(&quick(vec![1, 3, 4]), &Corrupted);
    assert_eq!(r.exit_code(), 1);
    let failed: Vec<&str> = r.results.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    assert_eq!(failed, ["order-2 expansion identity", "trivial-equation series"]);
    assert!(r.to_text().contains("[FAIL] criterion  3"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["passed"], false);
}
