use std::path::Path;
use std::process::{Command, Output};

use excess_core::config::RunConfig;
use excess_core::mcmc::McmcConfig;

fn engine(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_excess-engine")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// A synthetic world with samplers shortened so a full run takes seconds.
fn quick_world(dir: &Path) {
    let o = engine(&["simulate", "--out", "world", "--seed", "3"], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.join("world/run.toml");
    let mut c = RunConfig::load(&path).unwrap();
    let quick = McmcConfig { chains: 2, warmup: 300, draws: 300, keep: 100, rhat_limit: 1e9, ess_min: 0.0 };
    c.covariate.mcmc = quick.clone();
    c.subnational.share_mcmc = quick.clone();
    c.subnational.ar1_mcmc = quick.clone();
    c.validation.fold_mcmc = quick;
    c.subnational.constrained.iterations = 20_000;
    c.subnational.constrained.burn_in = 5_000;
    c.gamma.samples = 2_000;
    std::fs::write(&path, c.to_toml()).unwrap();
}

#[test]
fn print_config_emits_loadable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = engine(&["--print-config"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[covariate.mcmc]") && text.contains("[subnational.constrained]"));
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}

#[test]
fn bad_config_and_missing_inputs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[run]\nsead = 1\n").unwrap();
    assert_eq!(code(&engine(&["--config", "bad.toml", "run", "--out", "o"], dir.path())), 2);
    let o = engine(&["--data", "nowhere", "run", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("mortality.csv"));
    assert_ne!(code(&engine(&["frobnicate"], dir.path())), 0);
}

#[test]
fn failed_sampler_diagnostics_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    quick_world(dir.path());
    let path = dir.path().join("world/run.toml");
    let mut c = RunConfig::load(&path).unwrap();
    c.covariate.mcmc = McmcConfig { chains: 2, warmup: 20, draws: 20, keep: 10, rhat_limit: 1.0001, ess_min: 1e6 };
    std::fs::write(&path, c.to_toml()).unwrap();
    let o = engine(&["--config", "world/run.toml", "covariate", "fit", "--draws", "cov.bin"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stage_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    quick_world(dir.path());
    let cfg = ["--config", "world/run.toml"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = cfg.iter().chain(extra).copied().collect();
        let o = engine(&args, dir.path());
        assert_eq!(code(&o), 0, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["expected", "fit", "--out", "expected.csv"]);
    let text = std::fs::read_to_string(dir.path().join("expected.csv")).unwrap();
    assert!(text.starts_with("iso3,t,eta_hat,sigma_hat,trend_kind\n"));
    run(&["seasonal", "fit", "--out", "seasonal.json"]);
    assert!(std::fs::read_to_string(dir.path().join("seasonal.json")).unwrap().contains("\"beta\""));
    run(&["covariate", "fit", "--draws", "cov.bin", "--csv", "cov.csv"]);
    let draws = excess_core::draws_io::DrawsFile::load(&dir.path().join("cov.bin")).unwrap();
    assert_eq!(draws.require("coefficients").unwrap().dims[0], 100);
    run(&["subnational", "fit", "--country", "S20", "--draws", "s20.bin"]);
    let s20 = excess_core::draws_io::DrawsFile::load(&dir.path().join("s20.bin")).unwrap();
    assert_eq!(s20.require("S20.deaths").unwrap().dims, vec![24, 100]);
}

#[test]
fn run_then_summarize_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    quick_world(dir.path());
    let o = engine(&["--config", "world/run.toml", "run", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    for f in ["summary.csv", "indicators.csv", "ranks.csv", "draws.bin", "metadata.json", "config.toml", "routing.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    let country_rows = summary.lines().filter(|l| l.starts_with("country,")).count();
    assert_eq!(country_rows, 30 * 27, "one row per country and period");

    let o = engine(
        &["--config", "world/run.toml", "excess", "summarize", "--draws", "run/draws.bin", "--out", "again/summary.csv", "--plots", "plots"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("again/summary.csv")).unwrap(), summary);
    for f in ["timeseries.csv", "cumulative.csv", "rank_heatmap.csv"] {
        assert!(dir.path().join("plots").join(f).exists(), "{f}");
    }
}
