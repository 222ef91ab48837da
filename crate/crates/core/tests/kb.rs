use std::collections::BTreeSet;
use std::path::PathBuf;

use ram_core::kb::{build_kb, load_dataset_dir, parse_role_json, parse_tabular, subset_by_arity, RawFact, Split};

fn multiset(facts: &[RawFact]) -> Vec<(String, Vec<String>)> {
    let mut v: Vec<_> = facts.iter().map(|f| (f.relation.clone(), f.entities.clone())).collect();
    v.sort();
    v
}

#[test]
fn role_json_write_then_parse() {
    let text = concat!(
        r#"{"Movie":"Terminator 2","Actor":"Schwarzenegger","Character":"T-800"}"#,
        "\n",
        r#"{"from":"x","to":"y"}"#,
        "\n",
        r#"{"Movie":"Alien","Actor":"Weaver","Character":"Ripley"}"#,
        "\n"
    );
    let parsed = parse_role_json(text.as_bytes()).unwrap();
    let kb = build_kb(&parsed.facts, &[], &[], true).unwrap();
    assert_eq!(kb.vocab.roles.as_ref().unwrap().len(), 5);
    let mut out = Vec::new();
    kb.write_role_json(Split::Train, &mut out).unwrap();
    let again = parse_role_json(out.as_slice()).unwrap();
    assert_eq!(again.facts, parsed.facts);
    assert_eq!(again.facts[0].relation, "Actor|Character|Movie");
}

#[test]
fn role_json_writer_needs_roles() {
    let kb = build_kb(&[RawFact::new("r", &["a", "b"])], &[], &[], false).unwrap();
    assert!(kb.write_role_json(Split::Train, Vec::new()).is_err());
}

#[test]
fn tabular_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = "r\ta\tb\nr\tb\tc\ns\ta\tb\tc\nr\ta\tb\tc\n";
    std::fs::write(dir.path().join("train.txt"), train).unwrap();
    std::fs::write(dir.path().join("valid.txt"), "r\tc\ta\n").unwrap();
    std::fs::write(dir.path().join("test.txt"), "s\tc\tb\td\n").unwrap();
    let kb = load_dataset_dir(dir.path(), 0).unwrap();
    assert_eq!(kb.vocab.n_relations(), 3);
    assert_eq!(kb.vocab.max_arity, 3);
    assert_eq!(kb.stats.eval_only_entities, 1);

    let mut out = Vec::new();
    kb.write_tabular(Split::Train, &mut out).unwrap();
    let back = parse_tabular(out.as_slice()).unwrap();
    assert_eq!(multiset(&back), multiset(&parse_tabular(train.as_bytes()).unwrap()));
}

#[test]
fn subset_twice_is_identical() {
    let raws: Vec<RawFact> = (0..60)
        .map(|i| {
            let (a, b, c) = (format!("e{i}"), format!("e{}", i + 1), format!("e{}", i + 2));
            if i % 3 == 0 {
                RawFact::new("t", &[&a, &b, &c])
            } else {
                RawFact::new("b", &[&a, &b])
            }
        })
        .collect();
    let kb = build_kb(&raws, &[], &raws[..3], false).unwrap();
    let a = subset_by_arity(&kb, |_| true, 0.3, 8).unwrap();
    let b = subset_by_arity(&kb, |_| true, 0.3, 8).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.train.iter().filter(|f| f.arity() == 2).count(), 12);
    assert_eq!(a.train.iter().filter(|f| f.arity() == 3).count(), 20);
}

fn benchmark(name: &str) -> Option<PathBuf> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let dirs = std::env::var_os("RAM_DATA_DIR")
        .map(|d| PathBuf::from(d).join(name))
        .into_iter()
        .chain([root.join("data").join(name)]);
    dirs.into_iter().find(|d| d.is_dir())
}

#[test]
fn benchmark_vocabulary_statistics() {
    let expected: [(&str, usize, usize, &[usize]); 2] = [
        ("FB-AUTO", 3388, 8, &[2, 4, 5]),
        ("JF17K", 28645, 322, &[2, 3, 4, 5, 6]),
    ];
    for (name, n_e, n_r, arities) in expected {
        let Some(dir) = benchmark(name) else {
            eprintln!("{name} not available; statistics not checked");
            continue;
        };
        let kb = load_dataset_dir(&dir, 0).unwrap();
        assert_eq!(kb.vocab.n_entities(), n_e, "{name}");
        assert_eq!(kb.vocab.n_relations(), n_r, "{name}");
        let got: BTreeSet<usize> = kb.vocab.arities().into_iter().collect();
        assert_eq!(got, arities.iter().copied().collect(), "{name}");
    }
}
