use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn opmin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opmin")).args(args).output().expect("spawn opmin")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn plan_writes_header_and_seventeen_digit_floats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "budget = 40\ninitial_states = [[-1.0, 1.5]]\n[system]\nname = \"cubic_integrator\"\n",
    );
    let out = dir.path().join("run");
    let o = opmin(&["plan", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(out.join("plan_result.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# opmin 0.1.0"));
    assert_eq!(lines.next(), Some("# config:"));
    assert!(text.contains("# budget = 40"));
    let rows = data_lines(&out.join("plan_result.csv"));
    assert!(rows[0].starts_with("horizon,value,sequence,first_input"));
    let value = rows[1].split(',').nth(1).unwrap();
    let mantissa = value.split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(mantissa.replace('.', "").len(), 17, "{value}");
}

#[test]
fn invalid_budget_exits_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "budget = 0\ninitial_states = [[1.0, 2.0]]\n[system]\nname = \"cubic_integrator\"\n",
    );
    let o = opmin(&["plan", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("command=plan") && err.contains("kind="), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "budgte = 5\n[system]\nname = \"cubic_integrator\"\n");
    let o = opmin(&["plan", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_output_does_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "budgets = [5, 20]\nsteps = 30\ninitial_states = [[-1.0, 1.5], [2.0, -1.0], [0.5, 0.5]]\n\
         [system]\nname = \"cubic_integrator\"\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = opmin(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let rows = data_lines(&a.join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows, data_lines(&b.join("sweep.csv")));
}

#[test]
fn oracle_check_seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[system]\nname = \"random_affine\"\nseed = 1\n[oracle]\ninstances = 5\nmax_budget = 10\n",
    );
    let out = dir.path().join("o");
    let o = opmin(&["oracle-check", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("oracle_check.csv")).unwrap();
    assert!(text.contains("# seed = 11"));
    assert_eq!(data_lines(&out.join("oracle_check.csv")).len(), 6);
}
