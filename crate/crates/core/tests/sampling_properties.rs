use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toolsim_core::tools::{sample_tools, ParamKind, ParamSpec, Repository, ToolSpec};

fn repo(sizes: &[usize]) -> Repository {
    let mut tools = vec![];
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            tools.push(ToolSpec {
                name: format!("c{c}_t{i}"),
                description: "d".into(),
                category: format!("cat{c}"),
                parameters: vec![ParamSpec {
                    name: "x".into(),
                    kind: ParamKind::Integer,
                    description: "x".into(),
                    required: false,
                }],
            });
        }
    }
    Repository::new(tools).unwrap()
}

/// Checks category-first drawing from the output alone: each category shows
/// up as one contiguous run, and every run but the last is the whole category.
fn check_category_order(repo: &Repository, drawn: &[ToolSpec]) -> Result<(), String> {
    let sizes: BTreeMap<&str, usize> = repo.categories().map(|c| (c, repo.category(c).unwrap().count())).collect();
    let mut runs: Vec<(&str, usize)> = vec![];
    for t in drawn {
        match runs.last_mut() {
            Some((c, n)) if *c == t.category => *n += 1,
            _ => runs.push((t.category.as_str(), 1)),
        }
    }
    let distinct: BTreeSet<&str> = runs.iter().map(|r| r.0).collect();
    if distinct.len() != runs.len() {
        return Err(format!("category revisited: {runs:?}"));
    }
    for (c, n) in &runs[..runs.len() - 1] {
        if *n != sizes[c] {
            return Err(format!("category {c} left before exhaustion"));
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn draws_are_distinct_and_category_first(
        sizes in prop::collection::vec(1usize..5, 1..6),
        seed in any::<u64>(),
        frac in 0.0f64..1.0,
    ) {
        let r = repo(&sizes);
        let count = 1 + ((r.len() - 1) as f64 * frac) as usize;
        let drawn = sample_tools(&r, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(drawn.len(), count);
        let names: BTreeSet<&str> = drawn.iter().map(|t| t.name.as_str()).collect();
        prop_assert_eq!(names.len(), count);
        check_category_order(&r, &drawn).map_err(TestCaseError::fail)?;
        let again = sample_tools(&r, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(drawn, again);
    }
}

#[test]
fn every_category_can_come_first() {
    let r = repo(&[2, 2, 2]);
    let mut firsts = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3000 {
        let d = sample_tools(&r, 1, &mut rng).unwrap();
        *firsts.entry(d[0].category.clone()).or_insert(0usize) += 1;
    }
    assert_eq!(firsts.len(), 3);
    for n in firsts.values() {
        assert!((*n as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.04);
    }
}

#[test]
fn count_bounds() {
    let r = repo(&[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(sample_tools(&r, 0, &mut rng).is_err());
    assert!(sample_tools(&r, 3, &mut rng).is_err());
    assert_eq!(sample_tools(&r, 2, &mut rng).unwrap().len(), 2);
}
