use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use unlinkability::plot::parse_data_list;
use unlinkability::protocol::EvaluationReport;
use unlinkability::LinkabilityProfile;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unlink-eval"));
    c.env_remove("UNLINK_EVAL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_column(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let p = dir.join(name);
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&p, text).unwrap();
    p
}

fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Value of `attr` on the first element whose text contains `marker`.
fn svg_attr<'a>(svg: &'a str, marker: &str, attr: &str) -> &'a str {
    let start = svg
        .find(marker)
        .unwrap_or_else(|| panic!("{marker} not in svg"));
    let tag = &svg[start..];
    let tag = &tag[..tag.find('>').unwrap()];
    let key = format!("{attr}=\"");
    let at = tag.find(&key).unwrap_or_else(|| panic!("{attr} missing")) + key.len();
    &tag[at..at + tag[at..].find('"').unwrap()]
}

#[test]
fn eval_identical_scores_are_unlinkable() {
    let dir = TempDir::new().unwrap();
    let v = uniform(1, 2000, 0.0, 1.0);
    let m = write_column(dir.path(), "m.csv", &v);
    let nm = write_column(dir.path(), "nm.csv", &v);
    let o = run(&["eval", "--mated", s(&m), "--nonmated", s(&nm)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "D_sys = 0.0000");
}

#[test]
fn eval_disjoint_scores_are_fully_linkable() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(2, 2000, 0.0, 0.3));
    let nm = write_column(dir.path(), "nm.csv", &uniform(3, 2000, 0.7, 1.0));
    let o = run(&["eval", "--mated", s(&m), "--nonmated", s(&nm)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "D_sys = 1.0000");
}

#[test]
fn eval_rejects_bad_omega_and_missing_files() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(4, 100, 0.0, 1.0));
    let o = run(&[
        "eval",
        "--mated",
        s(&m),
        "--nonmated",
        s(&m),
        "--omega",
        "-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("omega must be positive"),
        "{}",
        stderr(&o)
    );

    let gone = dir.path().join("gone.csv");
    let o = run(&["eval", "--mated", s(&m), "--nonmated", s(&gone)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gone.csv"));
}

#[test]
fn eval_warns_on_small_samples() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(5, 50, 0.0, 0.6));
    let nm = write_column(dir.path(), "nm.csv", &uniform(6, 50, 0.4, 1.0));
    let o = run(&["eval", "--mated", s(&m), "--nonmated", s(&nm)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

#[test]
fn eval_plot_data_matches_json() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(7, 3000, 0.0, 0.6));
    let nm = write_column(dir.path(), "nm.csv", &uniform(8, 3000, 0.3, 1.0));
    let out = dir.path().join("out");
    let o = run(&[
        "eval",
        "--mated",
        s(&m),
        "--nonmated",
        s(&nm),
        "--sweep",
        "0.001,0.1,1",
        "--out",
        s(&out),
        "--plot",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);

    let profile: LinkabilityProfile =
        serde_json::from_str(&fs::read_to_string(out.join("linkability.json")).unwrap()).unwrap();
    let svg = fs::read_to_string(out.join("linkability.svg")).unwrap();
    let d_sys: f64 = svg_attr(&svg, r#"class="title""#, "data-d-sys")
        .parse()
        .unwrap();
    assert_eq!(d_sys.to_bits(), profile.d_sys.to_bits());
    let marker = r#"data-series="d_local""#;
    let ys = parse_data_list(svg_attr(&svg, marker, "data-y")).unwrap();
    let xs = parse_data_list(svg_attr(&svg, marker, "data-x")).unwrap();
    assert_eq!(ys, profile.d_local);
    assert_eq!(xs, profile.edges);
    assert!(out.join("omega_sweep.svg").exists());
    let sweep: Vec<LinkabilityProfile> =
        serde_json::from_str(&fs::read_to_string(out.join("omega_sweep.json")).unwrap()).unwrap();
    assert!(sweep.windows(2).all(|w| w[0].d_sys <= w[1].d_sys));
}

fn synth(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--subjects",
        "20",
        "--samples",
        "3",
        "--bits",
        "512",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synth_is_deterministic_and_records_keys() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = synth(d, &["--seed", "9", "--save-databases"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 5 + 11, "{names:?}");
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n:?}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["keys"], 10);
    // 20 * (C(30, 2) - 10 * C(3, 2))
    assert_eq!(manifest["counts"]["mated"], 20 * (435 - 30));
}

#[test]
fn synth_rejects_invalid_combinations() {
    let dir = TempDir::new().unwrap();
    let o = synth(
        dir.path(),
        &["--scheme", "bloom", "--function", "reconstruction"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--experimental"), "{}", stderr(&o));

    let o = synth(dir.path(), &["--keys", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = synth(dir.path(), &["--keys", "3"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("recommended"));
}

#[test]
fn compare_prints_side_by_side_table() {
    let dir = TempDir::new().unwrap();
    let o = synth(
        dir.path(),
        &["--scheme", "remap", "--rekey-fraction", "0.5"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let p = |n: &str| dir.path().join(n);
    let out = p("cmp");
    let o = run(&[
        "compare",
        "--accuracy-mated",
        s(&p("accuracy_mated.csv")),
        "--accuracy-nonmated",
        s(&p("accuracy_nonmated.csv")),
        "--crosskey-mated",
        s(&p("mated.csv")),
        "--crosskey-nonmated",
        s(&p("nonmated.csv")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    for row in [
        "EER (accuracy)",
        "EER (cross-key)",
        "RTMR crossing",
        "KL divergence",
        "D_sys",
    ] {
        assert!(table.contains(row), "{table}");
    }
    for f in ["compare.json", "det.svg", "rtmr.svg", "linkability.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(out.join("det.svg")).unwrap();
    assert!(svg.contains(r#"data-series="accuracy""#));
    assert!(svg.contains(r#"data-series="cross-key""#));
}

#[test]
fn compare_reports_undefined_kl_on_separable_scores() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(10, 500, 0.0, 0.2));
    let nm = write_column(dir.path(), "nm.csv", &uniform(11, 500, 0.6, 1.0));
    let o = run(&[
        "compare",
        "--accuracy-mated",
        s(&m),
        "--accuracy-nonmated",
        s(&nm),
        "--crosskey-mated",
        s(&m),
        "--crosskey-nonmated",
        s(&nm),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kl = stdout(&o)
        .lines()
        .find(|l| l.starts_with("KL divergence"))
        .unwrap()
        .to_string();
    assert!(kl.ends_with("undefined"), "{kl}");
}

const PROTOCOL: &str = r#"
keys = 10
seed = 3
functions = ["pic_hd", "hamming_weight", "reconstruction", "permuted_xor"]

[corpus]
n_subjects = 20
samples_per_subject = 3
template_bits = 512
intra_flip_rate = 0.1

[scheme]
kind = "xor_salt"
"#;

#[test]
fn protocol_writes_report() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("p.toml");
    fs::write(&cfg, PROTOCOL).unwrap();
    let out = dir.path().join("report");
    let o = run(&["protocol", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("aggregated: D_sys = "),
        "{}",
        stdout(&o)
    );
    // permuted_xor does not apply to XOR salting; it fails on its own.
    assert!(stderr(&o).contains("permuted_xor"), "{}", stderr(&o));

    let report: EvaluationReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.metadata.keys, 10);
    assert!(report.per_function["permuted_xor"].error.is_some());
    let max = report
        .per_function
        .values()
        .filter_map(|f| f.d_sys)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.aggregated_d_sys, Some(max));
    assert_eq!(report.aggregated_from.as_deref(), Some("reconstruction"));
    assert!(out.join("pic_hd_linkability.svg").exists());
    assert!(out.join("pic_hd_mated.csv").exists());
}

#[test]
fn protocol_rejects_bad_configs() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("single key", PROTOCOL.replace("keys = 10", "keys = 1")),
        (
            "no functions",
            PROTOCOL.replace(
                r#"["pic_hd", "hamming_weight", "reconstruction", "permuted_xor"]"#,
                "[]",
            ),
        ),
        (
            "missing functions",
            PROTOCOL.replace(
                r#"functions = ["pic_hd", "hamming_weight", "reconstruction", "permuted_xor"]"#,
                "",
            ),
        ),
        ("unknown field", format!("colour = 1\n{PROTOCOL}")),
        ("unknown function", PROTOCOL.replace("pic_hd", "pic-hd-x")),
    ];
    for (name, text) in cases {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, text).unwrap();
        let o = run(&["protocol", s(&cfg), "--out", s(&dir.path().join("r"))]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
    }
}

#[test]
fn bad_thread_count_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let m = write_column(dir.path(), "m.csv", &uniform(12, 100, 0.0, 1.0));
    let o = bin()
        .args(["eval", "--mated", s(&m), "--nonmated", s(&m)])
        .env("UNLINK_EVAL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
