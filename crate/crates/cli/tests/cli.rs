use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swcert::certify::StabilityCertificate;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swcert"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn swcert")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Copy of a bundled config with textual substitutions.
fn patched(name: &str, edits: &[(&str, &str)]) -> tempfile::NamedTempFile {
    let mut text = std::fs::read_to_string(config(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in {name}");
        text = text.replace(from, to);
    }
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn certify_exit_codes() {
    let cfg = config("delay_free.json");
    let o = run(&["certify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("certified"), "{}", stdout(&o));

    let hard = patched("delay_free.json", &[("\"rho\": 0.5", "\"rho\": 0.7"), ("\"h\": 22", "\"h\": 20")]);
    let o = run(&["certify", "--config", hard.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let ragged = patched("delay_free.json", &[("[-0.5, 1.1]", "[-0.5]")]);
    let o = run(&["certify", "--config", ragged.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("row 1") && e.contains("line"), "{e}");

    let unknown = patched("delay_free.json", &[("\"rho\": 0.5", "\"rho\": 0.5, \"gain\": 1")]);
    let o = run(&["certify", "--config", unknown.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gain"));
}

#[test]
fn certificate_json_round_trips() {
    let cfg = config("nilpotent_pair.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cert.json");
    let o = run(&["certify", "--config", cfg.to_str().unwrap(), "--json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let from_stdout: StabilityCertificate = serde_json::from_str(&stdout(&o)).unwrap();
    let from_file: StabilityCertificate = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(
        serde_json::to_value(&from_stdout).unwrap(),
        serde_json::to_value(&from_file).unwrap()
    );
    assert!(from_file.is_stable());
    // both LPs agree on the optimal value
    let o1 = run(&["certify", "--config", cfg.to_str().unwrap(), "--json", "--lp", "1"]);
    let lp1: StabilityCertificate = serde_json::from_str(&stdout(&o1)).unwrap();
    assert!((lp1.j - from_file.j).abs() <= 1e-9);
}

#[test]
fn sweep_is_byte_reproducible_and_signs_match() {
    let cfg = config("delay_free_sweep.json");
    let args = ["sweep", "--config", cfg.to_str().unwrap(), "--h-max", "12", "--no-timing"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let rows = csv_rows(&stdout(&a));
    assert_eq!(rows.len(), 12 * 3);
    for r in &rows {
        let (h, rho, j): (usize, f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        assert_eq!(r[5], "0");
        // rho=0.3 certifies from h=10; rho=0.7 never does in this range
        if rho == 0.3 && h >= 10 {
            assert!(j < 0.0, "h={h} rho=0.3 j={j}");
        }
        if rho == 0.7 {
            assert!(j > 0.0, "h={h} rho=0.7 j={j}");
        }
    }
}

#[test]
fn sweep_empty_grid_writes_header_only() {
    let cfg = config("delay_free_sweep.json");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--h-max", "3", "--param", "rho="]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "h,rho,j,verdict,status,wall_ms");
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let cfg = config("delay_free_sweep.json");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--param", "rho_d=0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("rho_d"));
}

#[test]
fn two_channel_low_delay_loss_cells_certify() {
    let cfg = config("two_channel_sweep.json");
    let o = run(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--h", "14", "--param", "rho_n=0.4", "--param", "rho_d=0,0.1",
        "--no-timing",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    for r in rows {
        let j: f64 = r[3].parse().unwrap();
        assert!(j < 0.0, "{r:?}");
    }
}

#[test]
fn bench_reports_variable_counts() {
    let o = run(&["bench", "--h-max", "15", "--m-max", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "15,3,14348907,136"));
    assert!(text.lines().any(|l| l == "15,2,32768,16"));
    assert_eq!(text.lines().count(), 1 + 15 * 4);
}

#[test]
fn oracle_four_cycle_pairs() {
    let cfg = config("four_cycle.json");
    let o = run(&["oracle", "--config", cfg.to_str().unwrap(), "--h", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    let get = |q: &str| rows.iter().find(|r| r[0] == q).map(|r| r[1].parse::<f64>().unwrap());
    assert_eq!(get("(1,2)"), Some(0.5));
    assert_eq!(get("(2,2)"), Some(0.5));
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_matches_sampled_gilbert_elliott() {
    let cfg = config("gilbert_elliott.json");
    let o = run(&["oracle", "--config", cfg.to_str().unwrap(), "--h", "3", "--steps", "200000", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for r in csv_rows(&stdout(&o)) {
        let diff: f64 = r[3].parse().unwrap();
        assert!(diff < 1e-2, "{r:?}");
    }
}

#[test]
fn simulate_certified_scenarios_decay() {
    for name in ["nilpotent_pair.json", "two_channel_blocked.json"] {
        let cfg = config(name);
        let c = run(&["certify", "--config", cfg.to_str().unwrap()]);
        assert_eq!(c.status.code(), Some(0), "{name}: {}", stderr(&c));
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "10000", "--runs", "100"]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        let rows = csv_rows(&stdout(&o));
        assert_eq!(rows.len(), 100);
        for r in rows {
            let ratio: f64 = r[5].parse().unwrap();
            assert!(ratio < 1e-6, "{name}: {r:?}");
        }
    }
}

#[test]
fn simulate_is_seed_deterministic() {
    let cfg = config("two_channel_blocked.json");
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--steps", "50", "--seed", "3", "--trace"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn attack_pattern_destabilizes() {
    // one block with 24 of 30 steps lost, then four with 18 of 30
    let heavy = "011111101111110011111101111110";
    let light = "000111111000111111000111111000";
    let pattern: Vec<String> = std::iter::once(heavy)
        .chain(std::iter::repeat(light).take(4))
        .flat_map(|b| b.chars().map(|c| if c == '1' { "2" } else { "1" }))
        .map(String::from)
        .collect();
    let cfg = config("delay_free_attack.json");
    let o = run(&["attack", "--config", cfg.to_str().unwrap(), "--pattern", &pattern.join(",")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let field = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap_or_else(|| panic!("{key} missing from {text}"))
            .parse()
            .unwrap()
    };
    assert!((field("monodromy spectral radius: ") - 1.12367).abs() < 1e-5, "{text}");
    assert!(field("growth over 10 periods: ") > 10.0, "{text}");
    assert!(text.contains("[0.36, 0.64]"), "{text}");
}

#[test]
fn attack_extracts_nilpotent_switching() {
    let cfg = config("nilpotent_pair_attack.json");
    let o = run(&["attack", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("period: 2") && text.contains("[0.5, 0.5]"), "{text}");
    assert!(text.contains("monodromy spectral radius: 2.0"), "{text}");
}

#[test]
fn lp_debug_prints_model_and_check() {
    let cfg = config("nilpotent_pair.json");
    let o = run(&["lp-debug", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("solution:") && text.contains("certificate check:"));
}
