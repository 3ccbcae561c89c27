use std::fs;
use std::path::Path;

use nbbart::commands::{fit, simulate, FitOutput};
use nbbart::config::{FileConfig, Overrides, RunConfig};
use nbbart::draws_file::{read_draws, render, write_draws};
use nbbart::parallel::run_chains_parallel;
use nbbart::AppError;
use nbbart_core::data::{build_weight_matrix, select_predictor_space, PredictorSpace, Standardize};
use nbbart_core::gibbs::{run_chains, ChainConfig, Hyperparameters, Problem, TreeSettings};
use nbbart_core::synth::{generate_dataset, SynthConfig};

fn small_fit(dir: &Path) -> FitOutput {
    let sim = RunConfig::resolve(FileConfig::default(), Overrides { out: Some(dir.join("sim")), seed: Some(3), ..Overrides::default() }).unwrap();
    simulate(&sim).unwrap();
    let flags = Overrides {
        data: Some(dir.join("sim/data.csv")),
        adjacency: Some(dir.join("sim/adjacency.csv")),
        out: Some(dir.join("fit")),
        seed: Some(4),
        chains: Some(2),
        iters: Some(40),
        burn_in: Some(20),
        thin: Some(4),
        ..Overrides::default()
    };
    fit(&RunConfig::resolve(FileConfig::default(), flags).unwrap()).unwrap()
}

#[test]
fn fit_round_trips_through_the_draws_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_fit(dir.path());
    let path = dir.path().join("fit/draws.txt");
    let (meta, draws) = read_draws(&path).unwrap();
    assert_eq!(meta, out.meta);
    assert_eq!(draws, out.draws);
    assert_eq!(draws.chains[0].draws.len(), 5);
    assert!(!draws.chains[0].draws[0].trees.is_empty());
    assert_eq!(render(&meta, &draws).unwrap(), fs::read_to_string(&path).unwrap());

    let again = dir.path().join("again.txt");
    write_draws(&again, &meta, &draws).unwrap();
    assert_eq!(fs::read(&again).unwrap(), fs::read(&path).unwrap());
}

#[test]
fn damaged_draws_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_fit(dir.path());
    let text = fs::read_to_string(dir.path().join("fit/draws.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let write = |name: &str, body: String| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    };

    let cases = [
        ("magic.txt", text.replacen("#nbbart-draws", "#something", 1), "not a draws file"),
        ("version.txt", text.replacen("#nbbart-draws 1", "#nbbart-draws 9", 1), "version"),
        ("truncated.txt", lines[..lines.len() / 2].join("\n"), ""),
        ("number.txt", {
            let mut l: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            let row = l.iter().position(|s| s.starts_with("0,0,")).unwrap();
            l[row] = l[row].replacen("0,0,", "0,0,abc", 1);
            l.join("\n")
        }, ""),
    ];
    for (name, body, needle) in cases {
        match read_draws(&write(name, body)) {
            Err(e @ AppError::Data(_)) => {
                assert!(e.to_string().contains(needle), "{name}: {e}");
                assert_eq!(e.exit_code(), 3);
            }
            other => panic!("{name}: expected a data error, got {other:?}"),
        }
    }
    match read_draws(&dir.path().join("missing.txt")) {
        Err(e @ AppError::Io { .. }) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected an io error, got {other:?}"),
    }
}

#[test]
fn parallel_chains_equal_sequential_chains() {
    let out = generate_dataset(&SynthConfig::default()).unwrap();
    let space = PredictorSpace::custom(&["log_aadt_per_lane"], &["truck_pct", "speed_limit"]).unwrap();
    let d = select_predictor_space(&out.dataset, &space, Standardize::default()).unwrap();
    let w = build_weight_matrix(&out.dataset, 3, None).unwrap();
    let problem = Problem { counts: out.dataset.counts(), f: &d.f, x: Some(&d.x), weights: &w };
    let config = ChainConfig { n_iter: 30, burn_in: 10, thin: 2, seed: 11, trees: TreeSettings { m: 10, ..TreeSettings::default() }, ..ChainConfig::default() };
    let hyper = Hyperparameters::default_for(2);
    let sequential = run_chains(problem, &hyper, &config, 3).unwrap();
    let parallel = run_chains_parallel(problem, &hyper, &config, 3).unwrap();
    assert_eq!(sequential, parallel);
}
