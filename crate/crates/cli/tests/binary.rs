use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/small.csv");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(FIXTURE, dir.path().join("small.csv")).unwrap();
    dir
}

fn funfx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_funfx"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = funfx(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FIT: &[&str] = &[
    "fit",
    "-i",
    "small.csv",
    "-o",
    "out",
    "--grid-t",
    "5",
    "--grid-x",
    "4",
];
const BANDS: &[&str] = &[
    "bands",
    "-i",
    "small.csv",
    "-o",
    "out",
    "-B",
    "40",
    "--grid-t",
    "5",
    "--grid-x",
    "4",
    "--draws",
    "200",
    "--seed",
    "7",
];
const TEST: &[&str] = &[
    "test",
    "-i",
    "small.csv",
    "-o",
    "out",
    "-B",
    "20",
    "--d-t",
    "5",
    "--d-x",
    "5",
    "--null-d-t",
    "5",
    "--seed",
    "3",
];

/// Compares every file the command writes with `tests/golden/<name>/`.
/// Set `FUNFX_UPDATE_GOLDEN=1` to rewrite the golden copies.
fn golden(name: &str, args: &[&str]) {
    let dir = workdir();
    ok(dir.path(), args);
    let want_dir = Path::new(GOLDEN).join(name);
    let update = std::env::var_os("FUNFX_UPDATE_GOLDEN").is_some();
    if update {
        std::fs::create_dir_all(&want_dir).unwrap();
    }
    for f in files(&dir.path().join("out")) {
        let fname = f.file_name().unwrap();
        let got = std::fs::read_to_string(&f).unwrap();
        let want_path = want_dir.join(fname);
        if update {
            std::fs::write(&want_path, &got).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&want_path)
            .unwrap_or_else(|_| panic!("missing golden {}", want_path.display()));
        assert_eq!(got, want, "{name}/{}", fname.to_string_lossy());
    }
}

#[test]
fn fit_golden() {
    golden("fit", FIT);
}

#[test]
fn bands_golden() {
    golden("bands", BANDS);
}

#[test]
fn test_golden() {
    golden("test", TEST);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    for args in [BANDS, TEST] {
        let a = workdir();
        let b = workdir();
        ok(a.path(), &[args, &["--single-threaded"]].concat());
        ok(b.path(), &[args, &["--threads", "4"]].concat());
        let (fa, fb) = (files(&a.path().join("out")), files(&b.path().join("out")));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            let (sx, sy) = (
                std::fs::read_to_string(x).unwrap(),
                std::fs::read_to_string(y).unwrap(),
            );
            // The embedded config records the thread setting; everything else must match.
            let strip = |s: &str| {
                s.lines()
                    .filter(|l| !l.contains("\"threads\""))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(&sx), strip(&sy), "{}", x.display());
        }
    }
}

#[test]
fn outputs_carry_schema_config_and_seed() {
    let dir = workdir();
    ok(dir.path(), BANDS);
    let out = dir.path().join("out");
    let j = json(&out.join("bands.json"));
    assert_eq!(j["schema"], "funfx/1");
    assert_eq!(j["seed"], 7);
    assert_eq!(j["config"]["bootstrap"]["replicates"], 40);
    for f in ["bands.csv", "surface.csv"] {
        let first = std::fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert!(
            first.starts_with("# schema=funfx/1 command=bands seed=7"),
            "{first}"
        );
    }
    let csv = std::fs::read_to_string(out.join("bands.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 5 * 4);
}

#[test]
fn test_command_contract() {
    let dir = workdir();
    ok(dir.path(), TEST);
    let j = json(&dir.path().join("out/test.json"));
    let p = j["result"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(j["result"]["null_draws"].as_array().unwrap().len(), 20);
    let draws = std::fs::read_to_string(dir.path().join("out/null_draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 2 + 20);
}

#[test]
fn simulate_reports_size_by_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "command = \"simulate\"\noutput_dir = \"out\"\n[sim]\nnsim = 2\n[sim.dgp]\nn = 15\ngrid_len = 21\n[sim.size_power]\nns = [15]\nalphas = [0.05, 0.10, 0.15]\n[sim.size_power.test]\nreplicates = 10\nseed = 0\nresampling = \"residual\"\nnull_d_t = 7\ngrid_t = 21\ngrid_x = 21\n";
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    ok(dir.path(), &["simulate", "--config", "run.toml"]);
    let j = json(&dir.path().join("out/report.json"));
    let row = &j["result"]["rows"][0];
    assert_eq!(row["n"], 15);
    let keys: Vec<&String> = row["size_by_alpha"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["0.05", "0.10", "0.15"]);
}

fn error_of(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii())
        .unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn exit_codes() {
    let dir = workdir();
    let quantile = funfx(
        dir.path(),
        &[
            "bands",
            "-i",
            "small.csv",
            "-o",
            "out",
            "-B",
            "2",
            "--method",
            "quantile",
            "--alpha",
            "0.05",
        ],
    );
    assert_eq!(quantile.status.code(), Some(2));
    assert!(error_of(&quantile)["message"]
        .as_str()
        .unwrap()
        .contains("insufficient bootstrap replicates"));

    let no_input = funfx(dir.path(), &["fit"]);
    assert_eq!(no_input.status.code(), Some(2));
    assert_eq!(error_of(&no_input)["error"], "config");

    let bad_flag = funfx(dir.path(), &["fit", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(2));

    let text = std::fs::read_to_string(dir.path().join("small.csv")).unwrap();
    let ragged: String = text
        .lines()
        .enumerate()
        .filter(|(k, _)| *k != 30)
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    std::fs::write(dir.path().join("ragged.csv"), ragged).unwrap();
    let out = funfx(dir.path(), &["fit", "-i", "ragged.csv", "-o", "out"]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_of(&out);
    assert!(
        e["message"].as_str().unwrap().contains("subject 1 visit 3"),
        "{e}"
    );
}

#[test]
fn print_config_round_trips() {
    let dir = workdir();
    let out = funfx(
        dir.path(),
        &[
            "bands",
            "-i",
            "small.csv",
            "--alpha",
            "0.1",
            "--print-config",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let c = funfx_cli::RunConfig::from_toml(&text).unwrap();
    assert_eq!(c.band.alpha, 0.1);
    assert_eq!(c.command, funfx_cli::Command::Bands);
}
