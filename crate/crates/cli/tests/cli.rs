use std::path::Path;
use std::process::{Command, Output};

fn cmlsim(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cmlsim"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("CMLSIM_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("CMLSIM_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn list_presets_names_every_figure() {
    let o = cmlsim(&["list-presets"], None);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in [
        "fig2-mnist-iid",
        "fig2-mnist-noniid",
        "fig3-scc-delta",
        "fig5-dissensus",
        "fig6-knowledge-p2p",
        "fig7-knowledge-server",
        "fig8-health",
        "baseline-mean-iid",
    ] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn validate_prints_a_config_that_validates_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let minimal = write(dir.path(), "min.toml", "preset = \"fig5-dissensus\"\n");
    let o = cmlsim(&["validate", "--config", &minimal], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resolved = String::from_utf8(o.stdout).unwrap();
    let again = write(dir.path(), "resolved.toml", &resolved);
    let o2 = cmlsim(&["validate", "--config", &again], None);
    assert_eq!(String::from_utf8(o2.stdout).unwrap(), resolved);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let negative = write(
        dir.path(),
        "neg.toml",
        "preset = \"fig3-scc-delta\"\n[aggregator]\ndelta = -1.0\n",
    );
    let o = cmlsim(&["validate", "--config", &negative], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3: aggregator.delta: delta must be ≥ 0"), "{}", stderr(&o));

    let unknown = write(dir.path(), "unk.toml", "preset = \"fig3-scc-delta\"\nlearning = 1\n");
    let o = cmlsim(&["validate", "--config", &unknown], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning"), "{}", stderr(&o));

    let o = cmlsim(&["run", "fig4", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fig8-health"), "{}", stderr(&o));

    let o = cmlsim(&["run", "fig8-health"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CMLSIM_OUT_DIR"));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "missing.toml",
        "preset = \"fig8-health\"\n[data]\npima_csv = \"no/such.csv\"\n",
    );
    let out = dir.path().join("out");
    let o = cmlsim(&["run", "fig8-health", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let o = cmlsim(&["plot", "fig2", "--in", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn health_run_is_reproducible_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = cmlsim(&["run", "fig8-health", "--seed", "3", "--out", a.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = cmlsim(&["run", "fig8-health", "--seed", "3"], Some(&b));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for file in ["metrics.csv", "predictions.csv", "config.toml", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let config = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(config.contains("seed = 3"));

    for fig in ["fig8", "fig9"] {
        let o = cmlsim(&["plot", fig, "--in", a.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let first = std::fs::read(a.join(format!("plot-{fig}.csv"))).unwrap();
        cmlsim(&["plot", fig, "--in", a.to_str().unwrap()], None);
        assert_eq!(std::fs::read(a.join(format!("plot-{fig}.csv"))).unwrap(), first);
    }
    let fig8 = std::fs::read_to_string(a.join("plot-fig8.csv")).unwrap();
    assert_eq!(fig8.lines().next().unwrap(), "epoch,scc_err,mkrum_err,rofl_err");
    assert_eq!(fig8.lines().count(), 51);
}

#[test]
fn config_file_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "short.toml",
        "preset = \"fig8-health\"\nseed = 5\n[training]\nepochs = 2\n",
    );
    let out = dir.path().join("out");
    let o = cmlsim(&["run", "fig8-health", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("fig8-health,5,")));
    assert!(metrics.lines().skip(1).all(|l| {
        let epoch: usize = l.split(',').nth(3).unwrap().parse().unwrap();
        epoch <= 2
    }));
}
