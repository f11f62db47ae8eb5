use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn backmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backmap")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn backmap_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_backmap")).args(args).env("RUST_LOG", "warn").env(key, value).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Fits a lookup-table model on the peptide ensemble.
fn fitted_model(dir: &TempDir) -> String {
    let model = path(dir, "model.json");
    let out = backmap(&["fit", s(&fixture("peptide_ensemble.pdb")), "--model", &model]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    model
}

fn ca_only_pdb(coords: &[[f64; 3]]) -> String {
    let mut text = String::new();
    for (i, c) in coords.iter().enumerate() {
        text.push_str(&format!(
            "ATOM  {:>5}  CA  ALA A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C\n",
            i + 1,
            i + 1,
            c[0],
            c[1],
            c[2]
        ));
    }
    text.push_str("END\n");
    text
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&backmap(&[])), 1);
    assert_eq!(code(&backmap(&["frobnicate"])), 1);
    assert_eq!(code(&backmap(&["backmap", "x.pdb", "--model", "m.json", "--out", "o.pdb", "--mode", "sideways"])), 1);
    assert_eq!(code(&backmap(&["fetch", "not-an-id"])), 1);
    assert_eq!(code(&backmap(&["backmap", "--help"])), 0);

    let dir = TempDir::new().unwrap();
    let model = fitted_model(&dir);
    let out = backmap(&["backmap", s(&fixture("peptide_ensemble.pdb")), "--model", &model, "--out", &path(&dir, "o.pdb")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--cg-map"), "{}", stderr(&out));
    let out = backmap(&[
        "eval",
        s(&fixture("polyglu_helix.pdb")),
        s(&fixture("polyglu_helix.pdb")),
        "--threads",
        "0",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = backmap(&["preprocess", &path(&dir, "missing.pdb"), &path(&dir, "out.pdb")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.pdb"));

    let bad = path(&dir, "bad.pdb");
    fs::write(&bad, "ATOM      1  CA  XYZ A   1       0.000   0.000   0.000  1.00  0.00           C\nEND\n").unwrap();
    let out = backmap(&["stats", &bad]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("XYZ"), "{}", stderr(&out));

    let out = backmap(&["eval", s(&fixture("polyglu_helix.pdb")), s(&fixture("peptide_ensemble.pdb"))]);
    assert_eq!(code(&out), 2);

    let model = path(&dir, "broken.json");
    fs::write(&model, "{\"version\": 99}").unwrap();
    let out = backmap(&["backmap", s(&fixture("polyglu_helix.pdb")), "--cg-map", "--model", &model, "--out", &path(&dir, "o.pdb")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn collinear_trace_is_a_numeric_error() {
    let dir = TempDir::new().unwrap();
    let model = fitted_model(&dir);
    let trace = path(&dir, "line.pdb");
    fs::write(&trace, ca_only_pdb(&[[0.0, 0.0, 0.0], [3.8, 0.0, 0.0], [7.6, 0.0, 0.0], [11.4, 0.0, 0.0]])).unwrap();
    let out = backmap(&["backmap", &trace, "--model", &model, "--out", &path(&dir, "o.pdb")]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(!dir.path().join("o.pdb").exists());
}

#[test]
fn backmap_is_reproducible_across_runs_and_thread_counts() {
    let dir = TempDir::new().unwrap();
    let model = fitted_model(&dir);
    let input = fixture("peptide_ensemble.pdb");
    let mut outputs = Vec::new();
    for (name, threads) in [("a.pdb", "1"), ("b.pdb", "4"), ("c.pdb", "4")] {
        let out_path = path(&dir, name);
        let out = backmap(&[
            "backmap", s(&input), "--cg-map", "--model", &model, "--out", &out_path, "--mode", "stochastic", "--seed", "3",
            "--threads", threads,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(fs::read(&out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("REMARK   1 BACKMAP MODE stochastic SEED 3\n"));
    assert_eq!(text.matches("MODEL").count(), 10);

    let out = backmap(&[
        "backmap", s(&input), "--cg-map", "--model", &model, "--out", &path(&dir, "d.pdb"), "--mode", "stochastic", "--seed", "4",
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(fs::read(path(&dir, "d.pdb")).unwrap(), outputs[0]);

    let reports: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let r = path(&dir, &format!("r{t}.json"));
            let out = backmap(&["eval", s(&input), &path(&dir, "a.pdb"), "--report", &r, "--threads", t]);
            assert_eq!(code(&out), 0, "{}", stderr(&out));
            fs::read(r).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn zmatrix_text_round_trip() {
    let dir = TempDir::new().unwrap();
    let z = path(&dir, "z.txt");
    let input = fixture("peptide_ensemble.pdb");
    assert_eq!(code(&backmap(&["zmat", "extract", s(&input), &z])), 0);
    let text = fs::read_to_string(&z).unwrap();
    assert!(text.starts_with("# chain res_index atom j k l d theta tau\n"));
    assert_eq!(text.matches("FRAME").count(), 10);

    let rebuilt = path(&dir, "re.pdb");
    let out = backmap(&["zmat", "rebuild", &z, "--trace", s(&input), "--out", &rebuilt]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let max: f64 = stdout.lines().find_map(|l| l.strip_prefix("max_rmsd ")).unwrap().parse().unwrap();
    assert!(max < 1e-4, "{stdout}");

    let z2 = path(&dir, "z2.txt");
    assert_eq!(code(&backmap(&["zmat", "extract", &rebuilt, &z2])), 0);
    let z3 = path(&dir, "z3.txt");
    let rebuilt2 = path(&dir, "re2.pdb");
    assert_eq!(code(&backmap(&["zmat", "rebuild", &z2, "--trace", &rebuilt, "--out", &rebuilt2])), 0);
    assert_eq!(code(&backmap(&["zmat", "extract", &rebuilt2, &z3])), 0);
    assert_eq!(fs::read(&z2).unwrap(), fs::read(&z3).unwrap());
}

#[test]
fn preprocess_writes_log_and_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let once = path(&dir, "once.pdb");
    let twice = path(&dir, "twice.pdb");
    let out = backmap(&["preprocess", s(&fixture("complex_h.pdb")), &once, "--cap", "2", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(format!("{once}.log")).unwrap();
    assert!(log.contains("seed 5"), "{log}");
    let text = fs::read_to_string(&once).unwrap();
    assert_eq!(text.matches("MODEL").count(), 2);
    assert!(!text.lines().any(|l| l.ends_with(" H")));
    assert_eq!(code(&backmap(&["preprocess", &once, &twice, "--cap", "2", "--seed", "5"])), 0);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());

    let again = path(&dir, "again.pdb");
    assert_eq!(code(&backmap(&["preprocess", s(&fixture("complex_h.pdb")), &again, "--cap", "2", "--seed", "5"])), 0);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn fit_with_network_records_trajectory() {
    let dir = TempDir::new().unwrap();
    let model = path(&dir, "net.json");
    let csv = path(&dir, "loss.csv");
    let out = backmap(&[
        "fit", s(&fixture("peptide_ensemble.pdb")), "--model", &model, "--train-net", "--epochs", "3", "--loss-csv", &csv,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["version"], 1);
    assert!(json["net"].is_object());
    assert_eq!(json["fit_metadata"]["loss_trajectory"].as_array().unwrap().len(), 4);
    assert_eq!(json["fit_metadata"]["ensemble_ids"][0], "peptide_ensemble");
    let rows: Vec<String> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows[0], "epoch,mean_recon_loss");
    assert_eq!(rows.len(), 5);

    let out_path = path(&dir, "gen.pdb");
    let out = backmap(&["backmap", s(&fixture("peptide_ensemble.pdb")), "--cg-map", "--model", &model, "--out", &out_path]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn eval_report_matches_golden() {
    let helix = fixture("polyglu_helix.pdb");
    let out = backmap(&["eval", s(&helix), s(&helix)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden("self_eval.json"));
}

#[test]
fn eval_broadcasts_single_truth_frame() {
    let dir = TempDir::new().unwrap();
    let model = fitted_model(&dir);
    let gen = path(&dir, "gen.pdb");
    let helix = fixture("polyglu_helix.pdb");
    assert_eq!(code(&backmap(&["fit", s(&helix), "--model", &model])), 0);
    let out = backmap(&["backmap", s(&helix), "--cg-map", "--model", &model, "--out", &gen, "--mode", "stochastic"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = path(&dir, "r.json");
    assert_eq!(code(&backmap(&["eval", s(&helix), &gen, "--report", &report])), 0);
    let text = fs::read_to_string(report).unwrap();
    let positions: Vec<usize> = ["\"rmsd\"", "\"ged_ratio\"", "\"clash_ratio_pct\"", "\"interaction_atom\"", "\"interaction_pi\"", "\"frames\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 1);
    assert!(json["rmsd"].as_f64().unwrap() > 0.0);
}

#[test]
fn stats_tables_match_golden() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "rg.csv");
    let hist = path(&dir, "hist.csv");
    let pair = path(&dir, "pair.csv");
    let out = backmap(&[
        "stats",
        s(&fixture("polyglu_helix.pdb")),
        s(&fixture("peptide_ensemble.pdb")),
        s(&fixture("complex_h.pdb")),
        "--csv",
        &csv,
        "--hist",
        &hist,
        "--pair",
        "A:2:CA,A:4:CA",
        "--pair-csv",
        &pair,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&csv).unwrap(), golden("compactness.csv"));
    let hist = fs::read_to_string(&hist).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "bin_lo,bin_hi,count");
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[1].split(',').take(2).collect::<Vec<_>>(), ["0.0000", "0.1000"]);
    let pairs = fs::read_to_string(&pair).unwrap();
    assert_eq!(pairs.lines().next(), Some("entry,frame,distance"));
    assert_eq!(pairs.lines().filter(|l| l.starts_with("peptide_ensemble,")).count(), 10);
    let helix_row = pairs.lines().find(|l| l.starts_with("polyglu_helix,0,")).unwrap();
    let d: f64 = helix_row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((d - 5.4).abs() < 0.3, "{helix_row}");

    let out = backmap(&["stats", s(&fixture("complex_h.pdb")), "--pair", "A:2:CA,A:9:CA"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("A:9:CA"));

    let out = backmap(&["stats", s(&fixture("polyglu_helix.pdb")), "--pair", "A:5:CA"]);
    assert_eq!(code(&out), 1);
}

/// Minimal HTTP server answering every request with `body`, or 404 for ids
/// containing `missing`.
fn serve(body: &'static [u8]) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/entries", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut header = String::new();
            while reader.read_line(&mut header).unwrap() > 2 {
                header.clear();
            }
            let reply = if request_line.contains("missing") || request_line.contains("PED00404") {
                b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_vec()
            } else {
                let mut r = format!("HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len()).into_bytes();
                r.extend_from_slice(body);
                r
            };
            let _ = stream.write_all(&reply);
        }
    });
    (base, hits)
}

#[test]
fn fetch_downloads_once_then_hits_cache() {
    let (base, hits) = serve(include_bytes!("../../core/tests/fixtures/polyglu_helix.pdb"));
    let dir = TempDir::new().unwrap();
    let out_dir = path(&dir, "data");
    let out = backmap_env(&["fetch", "PED00001e001", "--out", &out_dir], "BACKMAP_FETCH_BASE_URL", &base);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let printed = String::from_utf8(out.stdout).unwrap();
    let file = PathBuf::from(printed.trim());
    assert_eq!(fs::read(&file).unwrap(), include_bytes!("../../core/tests/fixtures/polyglu_helix.pdb"));
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let out = backmap_env(&["fetch", "PED00001e001", "--out", &out_dir], "BACKMAP_FETCH_BASE_URL", &base);
    assert_eq!(code(&out), 0);
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let out = backmap_env(&["fetch", "PED00404", "--out", &out_dir], "BACKMAP_FETCH_BASE_URL", &base);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not found"), "{}", stderr(&out));
}
