//! Replays the checked-in fuzz seeds through the same entry points and
//! checks as the fuzz targets, so they run on stable in every test pass.

use std::fs;
use std::path::PathBuf;

use unlinkability::container::TemplateDatabase;
use unlinkability::linkability::profile_from_densities;
use unlinkability::protocol::ProtocolConfig;
use unlinkability::score::{parse_labeled_csv, parse_score_column};
use unlinkability::{DensityPair, Label, ScoreSet};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn ok_names(results: &[(String, bool)]) -> Vec<&str> {
    results
        .iter()
        .filter(|r| r.1)
        .map(|r| r.0.as_str())
        .collect()
}

#[test]
fn score_column_seeds() {
    let mut results = Vec::new();
    for (name, data) in seeds("score_column") {
        let text = std::str::from_utf8(&data).unwrap();
        let parsed = parse_score_column(text, Label::Mated);
        if let Ok(values) = &parsed {
            let set = ScoreSet::new(values.clone(), values.clone(), "seed").unwrap();
            let mut out = Vec::new();
            set.write_column(Label::Mated, &mut out).unwrap();
            let again =
                parse_score_column(std::str::from_utf8(&out).unwrap(), Label::Mated).unwrap();
            assert!(
                again
                    .iter()
                    .map(|v| v.to_bits())
                    .eq(values.iter().map(|v| v.to_bits())),
                "{name}"
            );
        }
        results.push((name, parsed.is_ok()));
    }
    assert_eq!(ok_names(&results), ["basic", "crlf", "precision"]);
}

#[test]
fn labeled_csv_seeds() {
    let mut results = Vec::new();
    for (name, data) in seeds("labeled_csv") {
        let parsed = parse_labeled_csv(std::str::from_utf8(&data).unwrap());
        if let Ok(scores) = &parsed {
            let set = ScoreSet::from_labeled(scores.clone(), "seed").unwrap();
            let csv = set.to_labeled_csv_string();
            let back = ScoreSet::from_labeled(parse_labeled_csv(&csv).unwrap(), "seed").unwrap();
            assert_eq!(back.to_labeled_csv_string(), csv, "{name}");
        }
        results.push((name, parsed.is_ok()));
    }
    assert!(ok_names(&results).contains(&"basic"));
    assert!(!ok_names(&results).contains(&"unknown_label"));
}

#[test]
fn container_seeds() {
    let mut results = Vec::new();
    for (name, data) in seeds("container_decode") {
        let decoded = TemplateDatabase::decode(&data);
        if let Ok(db) = &decoded {
            assert_eq!(db.encode().unwrap(), data, "{name}");
        }
        results.push((name, decoded.is_ok()));
    }
    assert_eq!(ok_names(&results), ["protected_xor", "raw_2x2x10"]);
}

#[test]
fn density_json_seeds() {
    let mut results = Vec::new();
    for (name, data) in seeds("density_json") {
        let parsed = serde_json::from_slice::<DensityPair>(&data);
        if let Ok(dp) = &parsed {
            for omega in [1e-4, 1.0] {
                let p = profile_from_densities(dp, omega).unwrap();
                assert!((0.0..=1.0).contains(&p.d_sys), "{name}");
            }
        }
        results.push((name, parsed.is_ok()));
    }
    assert_eq!(ok_names(&results), ["discrete", "disjoint"]);
}

#[test]
fn protocol_config_seeds() {
    for (name, data) in seeds("protocol_config") {
        let text = std::str::from_utf8(&data).unwrap();
        let cfg = ProtocolConfig::parse(text, name.ends_with(".json"))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
