use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const SYNTH: &str = r#"
[synthpop]
rows = 2
cols = 3
mean_area_size = 250
[sim]
expected_n = 400
"#;

fn pgsae(cmd: &str, config: &Path, sets: &[&str]) -> (i32, String) {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pgsae"));
    c.arg(cmd).arg("--config").arg(config);
    for s in sets {
        c.arg("--set").arg(s);
    }
    let out = c.output().unwrap();
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// A temp directory holding a small generated population in `pop/`.
fn population() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "synth.toml", &format!("seed = 5\noutput = \"pop\"\n{SYNTH}"));
    let (code, text) = pgsae("synthpop", &cfg, &[]);
    assert_eq!(code, 0, "{text}");
    dir
}

fn fit_config(dir: &Path, name: &str, engine: &str, output: &str) -> PathBuf {
    write(
        dir,
        name,
        &format!(
            r#"
seed = 11
output = "{output}"
[data]
survey = "pop/survey_sample.csv"
population = "pop/population_frame.csv"
fit = "{output}"
[model]
engine = "{engine}"
[mcmc]
burnin = 100
retained = 150
[vb]
draws = 120
"#
        ),
    )
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn synthpop_writes_population_and_sample() {
    let dir = population();
    for f in ["population_units.csv", "population_frame.csv", "adjacency.csv", "survey_sample.csv", "truth.csv", "synthpop_manifest.json"] {
        assert!(dir.path().join("pop").join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(dir.path().join("pop/survey_sample.csv")).unwrap();
    assert!(header.starts_with("run,id,response,trials,weight,area,x1,x2"));
}

#[test]
fn fit_and_predict_gibbs() {
    let dir = population();
    let cfg = fit_config(dir.path(), "fit.toml", "gibbs", "gibbs");
    let (code, text) = pgsae("fit", &cfg, &[]);
    assert_eq!(code, 0, "{text}");
    let out = dir.path().join("gibbs");
    assert_eq!(data_rows(&out.join("draws.csv")), 150);
    assert!(out.join("schema.json").exists());
    assert!(out.join("fit_timings.json").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("fit_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["draws"], 150);

    let (code, text) = pgsae("predict", &cfg, &[]);
    assert_eq!(code, 0, "{text}");
    let est = fs::read_to_string(out.join("estimates.csv")).unwrap();
    assert!(est.starts_with("run,domain,point,se,ci_low,ci_high,n_draws,flags"));
    // Six areas plus the overall domain.
    assert_eq!(est.lines().count(), 8);
    assert!(est.lines().any(|l| l.split(',').nth(1) == Some("all")));
}

#[test]
fn fit_vb_writes_checkpoint_and_draw_count() {
    let dir = population();
    let cfg = fit_config(dir.path(), "fit.toml", "vb", "vb");
    let (code, text) = pgsae("fit", &cfg, &[]);
    assert_eq!(code, 0, "{text}");
    let out = dir.path().join("vb");
    assert!(out.join("vb_checkpoint.bin").exists());
    assert_eq!(data_rows(&out.join("draws.csv")), 120);
    let post = pgsae_cli::commands::load_checkpoint(&out.join("vb_checkpoint.bin")).unwrap();
    assert!(post.converged);
}

#[test]
fn reruns_are_byte_identical_apart_from_timings() {
    let dir = population();
    let a = fit_config(dir.path(), "a.toml", "gibbs", "a");
    let b = fit_config(dir.path(), "b.toml", "gibbs", "b");
    for cfg in [&a, &b] {
        assert_eq!(pgsae("fit", cfg, &[]).0, 0);
        assert_eq!(pgsae("predict", cfg, &["predict.mode=\"sampled\""]).0, 0);
    }
    for f in ["draws.csv", "schema.json", "estimates.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        // The run hash only differs through the output path.
        let strip = |v: Vec<u8>| {
            String::from_utf8(v)
                .unwrap()
                .lines()
                .map(|l| l.split_once(',').map(|x| x.1).unwrap_or(l).to_string())
                .filter(|l| !l.contains("\"run\""))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(x), strip(y), "{f}");
    }
    let first = fs::read(dir.path().join("a/draws.csv")).unwrap();
    assert_eq!(pgsae("fit", &a, &[]).0, 0);
    assert_eq!(first, fs::read(dir.path().join("a/draws.csv")).unwrap());
}

#[test]
fn missing_weight_column_is_a_validation_error() {
    let dir = population();
    let survey = fs::read_to_string(dir.path().join("pop/survey_sample.csv")).unwrap();
    let dropped: String = survey
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(4);
            f.join(",") + "\n"
        })
        .collect();
    write(dir.path(), "pop/survey_sample.csv", &dropped);
    let cfg = fit_config(dir.path(), "fit.toml", "gibbs", "out");
    let (code, text) = pgsae("fit", &cfg, &[]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("weight"), "{text}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = population();
    let cfg = fit_config(dir.path(), "fit.toml", "gibbs", "out");
    let (code, text) = pgsae("fit", &cfg, &["mcmc.brunin=3"]);
    assert_eq!(code, 2, "{text}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn predict_reports_covariate_mismatch() {
    let dir = population();
    let cfg = fit_config(dir.path(), "fit.toml", "vb", "out");
    assert_eq!(pgsae("fit", &cfg, &[]).0, 0);
    let frame = fs::read_to_string(dir.path().join("pop/population_frame.csv")).unwrap();
    let renamed = frame.replacen("x2", "region", 1);
    write(dir.path(), "pop/bad_frame.csv", &renamed);
    let (code, text) = pgsae("predict", &cfg, &["data.population=\"pop/bad_frame.csv\""]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("x2") && text.contains("region"), "{text}");
    assert!(!dir.path().join("out/estimates.csv").exists());
}

#[test]
fn predict_without_fit_fails_cleanly() {
    let dir = population();
    let cfg = fit_config(dir.path(), "fit.toml", "gibbs", "nothing");
    let (code, text) = pgsae("predict", &cfg, &[]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn multinomial_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write(
        dir.path(),
        "synth.toml",
        &format!("seed = 8\noutput = \"pop\"\n{}", SYNTH.replace("[sim]", "categories = 3\n[sim]")),
    );
    let (code, text) = pgsae("synthpop", &synth, &[]);
    assert_eq!(code, 0, "{text}");
    let cfg = fit_config(dir.path(), "fit.toml", "vb", "mn");
    let (code, text) = pgsae("fit", &cfg, &["model.family=\"multinomial\""]);
    assert_eq!(code, 0, "{text}");
    let out = dir.path().join("mn");
    for f in ["draws_stick1.csv", "draws_stick2.csv", "categories.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (code, text) = pgsae("predict", &cfg, &["model.family=\"multinomial\""]);
    assert_eq!(code, 0, "{text}");
    let est = fs::read_to_string(out.join("estimates.csv")).unwrap();
    // Three categories over six areas plus overall.
    assert_eq!(est.lines().count(), 1 + 3 * 7);
    let all: f64 = est
        .lines()
        .filter(|l| l.split(',').nth(1).is_some_and(|d| d.starts_with("all:")))
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((all - 1.0).abs() < 1e-9, "{all}");
}

fn sim_config(dir: &Path, extra: &str) -> PathBuf {
    write(
        dir,
        "sim.toml",
        &format!(
            r#"
seed = 3
output = "sim"
{}
replicates = 2
oracle = true
{extra}
[mcmc]
burnin = 150
retained = 150
[vb]
draws = 150
"#,
            SYNTH
        ),
    )
}

#[test]
fn simulate_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), "");
    let (code, text) = pgsae("simulate", &cfg, &[]);
    assert_eq!(code, 0, "{text}");
    let out = dir.path().join("sim");
    let board = fs::read_to_string(out.join("scoreboard.csv")).unwrap();
    let oracle = board.lines().find(|l| l.contains(",oracle,")).unwrap();
    let fields: Vec<&str> = oracle.split(',').collect();
    assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0, "{oracle}");
    assert_eq!(fields[5].parse::<f64>().unwrap(), 1.0, "{oracle}");
    for name in ["direct", "unweighted", "gibbs", "vb"] {
        assert!(board.contains(&format!(",{name},")), "{board}");
    }
    assert!(out.join("simulate_timings.csv").exists());
    assert_eq!(data_rows(&out.join("replicate_log.csv")), 2 * 5);
    let before = fs::read(out.join("domain_scores.csv")).unwrap();
    assert_eq!(pgsae("simulate", &cfg, &[]).0, 0);
    assert_eq!(before, fs::read(out.join("domain_scores.csv")).unwrap());
}

#[test]
fn replicate_failures_over_threshold_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), "failure_threshold = 0.0");
    let (code, text) = pgsae("simulate", &cfg, &["sim.expected_n=3", "sim.engines=[\"vb\"]"]);
    assert_eq!(code, 4, "{text}");
    assert!(dir.path().join("sim/replicate_log.csv").exists());
}
