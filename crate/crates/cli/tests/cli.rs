use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Vector3;
use nanomap::GaussianPoint;
use nanomap_cli::commands::{self, ChainOptions, CLOUD_LOG, CORRECTION_LOG, POSE_LOG, QUERY_FILE, SCENARIO_FILE, TRUTH_LOG};
use nanomap_cli::config::Config;
use nanomap_cli::logs;
use nanomap_sim::scenario::{CorrectionSpec, EdgeSigmaSpec};
use nanomap_sim::{presets, Scenario, ScenarioSpec};

fn small_hover(sigma: f64) -> ScenarioSpec {
    let mut spec = presets::hover();
    spec.camera.cols = 64;
    spec.camera.rows = 48;
    spec.drift.sigma_actual = sigma;
    spec.drift.seed = 3;
    spec
}

fn nanomap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanomap")).args(args).env_remove("NANOMAP_CONFIG").output().expect("run nanomap")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn exported(spec: ScenarioSpec) -> (tempfile::TempDir, commands::Export) {
    let dir = tempfile::tempdir().unwrap();
    let export = commands::export_scenario(&Scenario::new(spec).unwrap(), dir.path()).unwrap();
    (dir, export)
}

fn read_rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes).records().map(Result::unwrap).collect()
}

#[test]
fn exported_logs_reload_to_the_same_streams() {
    let mut spec = small_hover(0.2);
    spec.corrections = CorrectionSpec::SlidingWindow { period: 1.0, window: 1.0 };
    spec.edge_sigma = EdgeSigmaSpec::Isotropic { variance: 1e-4 };
    let (dir, export) = exported(spec.clone());
    let d = dir.path();
    let (streams, camera) = commands::load_streams(&d.join(POSE_LOG), &d.join(CLOUD_LOG), Some(&d.join(CORRECTION_LOG)), Some(&d.join(QUERY_FILE))).unwrap();
    assert!(!export.streams.corrections.is_empty());
    assert_eq!(streams, export.streams);
    assert_eq!(camera, export.camera);
    let truth = logs::read_poses("truth", std::io::BufReader::new(std::fs::File::open(d.join(TRUTH_LOG)).unwrap())).unwrap();
    assert_eq!(truth, export.truth);
    let back: ScenarioSpec = toml::from_str(&std::fs::read_to_string(d.join(SCENARIO_FILE)).unwrap()).unwrap();
    assert_eq!(back, spec);
    let config = Config::load(Some(&d.join(commands::CHAIN_CONFIG))).unwrap();
    assert_eq!(config, export.config);
}

#[test]
fn noise_free_surface_queries_hit_their_points() {
    let (_dir, export) = exported(small_hover(0.0));
    let (t, cloud) = export.streams.clouds.last().unwrap().clone();
    let opts = ChainOptions::from_section(&export.config.chain);
    let queries: Vec<GaussianPoint<f64>> = cloud.valid_points().step_by(23).map(|(_, p)| GaussianPoint::deterministic(opts.mount.apply(p))).collect();
    assert!(queries.len() > 20);
    let mut streams = commands::single_query(&export.streams, t, queries[0]);
    streams.queries = vec![(t, queries.clone())];
    let mut out = Vec::new();
    commands::replay_to_csv(&streams, export.camera.clone(), &opts, &mut out).unwrap();
    let rows = read_rows(&out);
    assert_eq!(rows.len(), queries.len());
    for (row, q) in rows.iter().zip(&queries) {
        assert_eq!(&row[2], "1", "answered from the newest frame");
        let d: f64 = row[8].parse().unwrap();
        assert!(d <= 1e-6, "distance {d}");
        let p = Vector3::new(row[5].parse().unwrap(), row[6].parse().unwrap(), row[7].parse::<f64>().unwrap());
        assert!((p - q.mean()).norm() <= 1e-6);
    }
}

#[test]
fn replays_are_byte_identical() {
    let (dir, _) = exported(small_hover(0.1));
    let d = dir.path();
    let args = ["replay", "--poses", &path(d, POSE_LOG), "--clouds", &path(d, CLOUD_LOG), "--corrections", &path(d, CORRECTION_LOG), "--queries", &path(d, QUERY_FILE), "--edge-sigma", "0.0001"];
    let a = nanomap(&args);
    let b = nanomap(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let rows = read_rows(&a.stdout);
    assert!(rows.len() > 100);
}

#[test]
fn an_empty_query_file_gives_a_header_only_csv() {
    let (dir, _) = exported(small_hover(0.0));
    let d = dir.path();
    std::fs::write(d.join("none.txt"), "# no queries\n").unwrap();
    let out = nanomap(&["replay", "--poses", &path(d, POSE_LOG), "--clouds", &path(d, CLOUD_LOG), "--queries", &path(d, "none.txt")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "time,query_id,search_depth,frame_index,rank,x,y,z,distance\n");
}

#[test]
fn bad_input_fails_with_one_line() {
    let (dir, _) = exported(small_hover(0.0));
    let d = dir.path();
    std::fs::write(d.join("bad.log"), "0.0 0 0 0 1 0 0 0\n0.0 1 0 0 1 0 0 0\n").unwrap();
    std::fs::write(d.join("q.txt"), "0.5 1 0 0 0 0 0 0 0\n").unwrap();
    let cases: Vec<(Vec<String>, &str)> = vec![
        (vec!["replay".into(), "--poses".into(), path(d, "bad.log"), "--clouds".into(), path(d, CLOUD_LOG), "--queries".into(), path(d, "q.txt")], "bad.log:2"),
        (vec!["replay".into(), "--poses".into(), path(d, "missing.log"), "--clouds".into(), path(d, CLOUD_LOG), "--queries".into(), path(d, "q.txt")], "missing.log"),
        (vec!["replay".into(), "--poses".into(), path(d, POSE_LOG), "--clouds".into(), path(d, POSE_LOG), "--queries".into(), path(d, "q.txt")], "poses.log:2: expected a 'frame' header"),
        (vec!["bench-histogram".into(), "--scenario".into(), "nowhere".into()], "nowhere"),
        (vec!["replay".into(), "--capacity".into(), "lots".into()], "lots"),
    ];
    for (args, needle) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = nanomap(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = stderr(&out);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("nanomap: ") && err.contains(needle), "{args:?}: {err}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let (dir, export) = exported(small_hover(0.0));
    let d = dir.path();
    let (t, cloud) = export.streams.clouds.last().unwrap().clone();
    let p = cloud.valid_points().nth(100).unwrap().1;
    let point = format!("{},{},{}", p.x, p.y, p.z);
    let config: PathBuf = d.join("k.toml");
    std::fs::write(&config, "[chain]\nk = 3\n").unwrap();
    let base = ["query", "--poses", &path(d, POSE_LOG), "--clouds", &path(d, CLOUD_LOG), "--time", &t.to_string(), "--point", &point];
    let count = |extra: &[&str], env: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nanomap"));
        cmd.args(base).args(extra).env_remove("NANOMAP_CONFIG");
        if let Some(e) = env {
            cmd.env("NANOMAP_CONFIG", e);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        read_rows(&out.stdout).len()
    };
    let config_arg = config.display().to_string();
    assert_eq!(count(&[], None), 1);
    assert_eq!(count(&["--config", &config_arg], None), 3);
    assert_eq!(count(&[], Some(&config)), 3);
    assert_eq!(count(&["--config", &config_arg, "-k", "2"], None), 2);
}

#[test]
fn bench_output_is_deterministic_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("hover.toml");
    std::fs::write(&spec, toml::to_string(&small_hover(0.0)).unwrap()).unwrap();
    let spec = spec.display().to_string();
    let run = |args: &[&str]| {
        let out = nanomap(args);
        assert!(out.status.success(), "{}", stderr(&out));
        read_rows(&out.stdout)
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, f)| f.to_string()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let common = ["--scenario", &spec, "--cols", "32", "--rows", "24", "--trials", "2", "--warmup", "0", "--history", "6"];
    let mut pose = vec!["bench-pose-updates", "--n-poses", "0,3,6"];
    pose.extend(common);
    let a = run(&pose);
    assert_eq!(a, run(&pose));
    assert_eq!(a.len(), 2 * (3 + 3 + 1));
    let mut query = vec!["bench-queries", "--n-queries", "0,5", "--histories", "2,6", "--history-queries", "5"];
    query.extend(common);
    let a = run(&query);
    assert_eq!(a, run(&query));
    assert_eq!(a.len(), 2 * (3 * 2 + 2));
}
