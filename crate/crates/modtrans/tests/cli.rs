use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modtrans::zoo::sha256_hex;
use modtrans_testkit::http::{FixtureServer, Route};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn modtrans(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modtrans"))
        .args(args)
        .env("MODTRANS_CACHE_DIR", cache)
        .output()
        .expect("spawn modtrans")
}

fn run(args: &[&str]) -> Output {
    let cache = tempfile::tempdir().unwrap();
    modtrans(args, cache.path())
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn translate_minimal_fixture_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.txt");
    let f = fixture("fixture_min.onnx");
    let o = run(&[
        "translate",
        "--input",
        path_str(&f),
        "--strategy",
        "data",
        "-o",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "DATA\n1\nl0 -1 1 NONE 0 1 NONE 0 1 ALLREDUCE 4 1\n"
    );
    assert!(o.stdout.is_empty());
}

#[test]
fn translate_with_compute_table_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("times.txt");
    fs::write(
        &table,
        "# name fwd ig wg update\nl0 5 5 5 1\nunused 1 2 3 4\n",
    )
    .unwrap();
    let f = fixture("fixture_min.onnx");
    let o = run(&[
        "translate",
        "-i",
        path_str(&f),
        "--compute-table",
        path_str(&table),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "DATA\n1\nl0 -1 5 NONE 0 5 NONE 0 5 ALLREDUCE 4 1\n"
    );
    assert!(stderr(&o).contains("\"unused\""), "{}", stderr(&o));
}

#[test]
fn translate_reports_time_in_ms() {
    let f = fixture("vgg16.onnx");
    let o = run(&["translate", "-i", path_str(&f), "--time", "--repeat", "3"]);
    assert_eq!(code(&o), 0);
    let err = stderr(&o);
    let ms: f64 = err
        .lines()
        .find_map(|l| l.strip_prefix("translate_ms: "))
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no timing line in {err:?}"));
    assert!((0.0..1000.0).contains(&ms), "{ms}");
    assert_eq!(stdout(&o).lines().nth(1), Some("16"));
    // Timing goes to stderr; the workload on stdout has no timestamps.
    let again = run(&["translate", "-i", path_str(&f)]);
    assert_eq!(stdout(&o), stdout(&again));
}

#[test]
fn model_strategy_without_activation_table_exits_4() {
    let f = fixture("vgg16.onnx");
    let o = run(&["translate", "-i", path_str(&f), "--strategy", "model"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("--activation-table"), "{}", stderr(&o));
    let o = run(&["translate", "-i", path_str(&f), "--strategy", "hybrid"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("--hybrid-map"), "{}", stderr(&o));
}

#[test]
fn model_strategy_with_tables() {
    let dir = tempfile::tempdir().unwrap();
    let acts = dir.path().join("acts.txt");
    let tags = dir.path().join("tags.txt");
    fs::write(&acts, "l0 4096\n").unwrap();
    fs::write(&tags, "l0 MODEL\n").unwrap();
    let f = fixture("fixture_min.onnx");
    let a = run(&[
        "translate",
        "-i",
        path_str(&f),
        "-s",
        "model",
        "--activation-table",
        path_str(&acts),
    ]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(
        stdout(&a),
        "MODEL\n1\nl0 -1 1 ALLGATHER 4096 1 ALLGATHER 4096 1 NONE 0 1\n"
    );
    let h = run(&[
        "translate",
        "-i",
        path_str(&f),
        "-s",
        "hybrid",
        "--activation-table",
        path_str(&acts),
        "--hybrid-map",
        path_str(&tags),
    ]);
    assert_eq!(code(&h), 0, "{}", stderr(&h));
    assert!(stdout(&h).starts_with("HYBRID_DATA_MODEL\n1\nl0 -1 1 ALLGATHER 4096"));
}

#[test]
fn inspect_vgg_tables() {
    for (name, rows, last) in [
        ("vgg16.onnx", 16, "vgg16-dense2-weight"),
        ("vgg19.onnx", 19, "vgg19-dense2-weight"),
    ] {
        let o = run(&["inspect", "-i", path_str(&fixture(name))]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Name"));
        assert_eq!(lines.len(), rows + 2);
        let last_row: Vec<&str> = lines[rows].split_whitespace().collect();
        assert_eq!(last_row, [last, "4096000", "FLOAT", "16384000"]);
    }
}

#[test]
fn inspect_json_is_machine_readable() {
    let o = run(&[
        "inspect",
        "-i",
        path_str(&fixture("vgg16.onnx")),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[0]["name"], "vgg16-conv0-weight");
    assert_eq!(rows[0]["variables"], 1728);
    assert_eq!(rows[0]["dtype"], "FLOAT");
    assert_eq!(rows[0]["model_size_bytes"], 6912);
}

#[test]
fn inspect_filter_flags() {
    let f = fixture("vgg16.onnx");
    let all = run(&[
        "inspect",
        "-i",
        path_str(&f),
        "--include-all",
        "--format",
        "json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&all.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 32);
    let dense = run(&[
        "inspect",
        "-i",
        path_str(&f),
        "--exclude",
        "conv",
        "--format",
        "json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&dense.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 3);
    let labelled = run(&[
        "inspect",
        "-i",
        path_str(&f),
        "--label",
        "net",
        "--format",
        "json",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&labelled.stdout).unwrap();
    assert_eq!(rows[0]["name"], "net-conv0-weight");
}

#[test]
fn rename_map_overrides_names() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("rename.tsv");
    fs::write(&map, "l0\tfirst-layer\n").unwrap();
    let o = run(&[
        "translate",
        "-i",
        path_str(&fixture("fixture_min.onnx")),
        "--rename-map",
        path_str(&map),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("\nfirst-layer -1 "));
}

#[test]
fn resnet50_diff_against_reference() {
    let model = fixture("resnet50.onnx");
    let reference = fixture("resnet50_reference.txt");
    let multiset = run(&[
        "diff",
        path_str(&model),
        path_str(&reference),
        "--mode",
        "multiset",
    ]);
    assert_eq!(code(&multiset), 0, "{}", stdout(&multiset));

    let ordered = run(&[
        "diff",
        path_str(&model),
        path_str(&reference),
        "--mode",
        "ordered",
    ]);
    assert_eq!(code(&ordered), 1);
    let listed = stdout(&ordered)
        .lines()
        .filter(|l| l.trim_start().starts_with("position"))
        .count();
    assert_eq!(listed, 8, "{}", stdout(&ordered));

    let json = run(&[
        "diff",
        path_str(&model),
        path_str(&reference),
        "--format",
        "json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["mismatches"].as_array().unwrap().len(), 8);
    assert_eq!(v["is_match"], false);
}

#[test]
fn self_diff_matches_in_both_modes() {
    for f in ["resnet50.onnx", "resnet50_reference.txt", "vgg19.onnx"] {
        let p = fixture(f);
        for mode in ["ordered", "multiset"] {
            let o = run(&["diff", path_str(&p), path_str(&p), "--mode", mode]);
            assert_eq!(code(&o), 0, "{f} {mode}: {}", stdout(&o));
        }
    }
}

#[test]
fn list_includes_evaluated_models() {
    let o = run(&["list"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    for n in ["resnet50", "vgg16", "vgg19"] {
        assert!(names.iter().any(|x| x == n), "{n} missing from {names:?}");
    }
}

#[test]
fn fetch_twice_reports_cache_hit() {
    let body = fs::read(fixture("vgg16.onnx")).unwrap();
    let digest = sha256_hex(&body);
    let srv = FixtureServer::start([("/vgg16.onnx".to_string(), Route::Body(body))]);
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("zoo.json");
    fs::write(
        &manifest,
        format!(
            r#"{{"vgg16": {{"url": "{}", "sha256": "{digest}"}}}}"#,
            srv.url("/vgg16.onnx")
        ),
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let args = ["--manifest", path_str(&manifest), "fetch", "vgg16"];

    let first = modtrans(&args, &cache);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).contains("downloaded"), "{}", stdout(&first));
    let second = modtrans(&args, &cache);
    assert_eq!(code(&second), 0);
    assert!(stdout(&second).contains("cache hit"), "{}", stdout(&second));
    assert_eq!(srv.hits(), 1);

    // Translating by zoo name uses the cached copy.
    let t = modtrans(
        &[
            "--manifest",
            path_str(&manifest),
            "--offline",
            "translate",
            "--model",
            "vgg16",
        ],
        &cache,
    );
    assert_eq!(code(&t), 0, "{}", stderr(&t));
    assert!(
        stdout(&t).contains("\nvgg16-dense0-weight -1 1 NONE 0 1 NONE 0 1 ALLREDUCE 411041792 1\n")
    );
    assert_eq!(srv.hits(), 1);
}

#[test]
fn fetch_unknown_model_exits_2() {
    let o = run(&["fetch", "nosuchmodel"]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("unknown model \"nosuchmodel\""),
        "{}",
        stderr(&o)
    );
}

#[test]
fn exit_code_per_error_class() {
    let dir = tempfile::tempdir().unwrap();

    // 2: decode
    let garbage = dir.path().join("garbage.onnx");
    fs::write(&garbage, [0x0a, 0xff, 0x01]).unwrap();
    assert_eq!(code(&run(&["translate", "-i", path_str(&garbage)])), 2);
    let bad_workload = dir.path().join("bad.txt");
    fs::write(
        &bad_workload,
        "DATA\n2\nl0 -1 1 NONE 0 1 NONE 0 1 ALLREDUCE 4 1\n",
    )
    .unwrap();
    assert_eq!(
        code(&run(&[
            "diff",
            path_str(&bad_workload),
            path_str(&bad_workload)
        ])),
        2
    );

    // 3: extract (nothing passes the filter; bad rename map)
    let f = fixture("fixture_min.onnx");
    assert_eq!(
        code(&run(&["translate", "-i", path_str(&f), "--min-rank", "3"])),
        3
    );
    let map = dir.path().join("map.tsv");
    fs::write(&map, "only-one-column\n").unwrap();
    assert_eq!(
        code(&run(&[
            "inspect",
            "-i",
            path_str(&f),
            "--rename-map",
            path_str(&map)
        ])),
        3
    );

    // 4: generate (malformed compute table; missing activation entry)
    let table = dir.path().join("times.txt");
    fs::write(&table, "l0 1 2\n").unwrap();
    assert_eq!(
        code(&run(&[
            "translate",
            "-i",
            path_str(&f),
            "--compute-table",
            path_str(&table)
        ])),
        4
    );
    let acts = dir.path().join("acts.txt");
    fs::write(&acts, "other 8\n").unwrap();
    assert_eq!(
        code(&run(&[
            "translate",
            "-i",
            path_str(&f),
            "-s",
            "model",
            "--activation-table",
            path_str(&acts)
        ])),
        4
    );

    // 5: io
    let missing = dir.path().join("missing.onnx");
    assert_eq!(code(&run(&["translate", "-i", path_str(&missing)])), 5);
    let out = dir.path().join("no-such-dir/out.txt");
    assert_eq!(
        code(&run(&[
            "translate",
            "-i",
            path_str(&f),
            "-o",
            path_str(&out)
        ])),
        5
    );
    assert_eq!(code(&run(&["--offline", "fetch", "vgg16"])), 5);

    // success
    assert_eq!(code(&run(&["translate", "-i", path_str(&f)])), 0);
}
