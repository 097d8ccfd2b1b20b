//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test -p modtrans --test acceptance`.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use modtrans::pipeline::{self, ExtractOptions, GenerateOptions};
use modtrans::zoo::{
    fetch_model, sha256_hex, FetchSource, HttpTransport, ModelCache, Transport, ZooEntry, ZooError,
    ZooManifest,
};
use modtrans_core::{
    emit_workload, extract_layers, generate_workload, parse_model, parse_workload, CommDescriptor,
    CommInputs, CommType, ComputeTimeTable, DataType, FilterPolicy, LayerNaming,
    ParallelismStrategy, WorkloadFile, WorkloadLayerLine,
};
use modtrans_testkit::http::{FixtureServer, Route};
use modtrans_testkit::{full_payload_model, random_model, OracleModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANDOM_CASES: usize = 1000;
const SEED: u64 = 0x6d6f_6474_7261_6e73;

/// (name, variables, model size in bytes); every row is FLOAT.
const VGG16_TABLE: [(&str, u64, u64); 16] = [
    ("vgg16-conv0-weight", 1728, 6912),
    ("vgg16-conv1-weight", 36864, 147456),
    ("vgg16-conv2-weight", 73728, 294912),
    ("vgg16-conv3-weight", 147456, 589824),
    ("vgg16-conv4-weight", 294912, 1179648),
    ("vgg16-conv5-weight", 589824, 2359296),
    ("vgg16-conv6-weight", 589824, 2359296),
    ("vgg16-conv7-weight", 1179648, 4718592),
    ("vgg16-conv8-weight", 2359296, 9437184),
    ("vgg16-conv9-weight", 2359296, 9437184),
    ("vgg16-conv10-weight", 2359296, 9437184),
    ("vgg16-conv11-weight", 2359296, 9437184),
    ("vgg16-conv12-weight", 2359296, 9437184),
    ("vgg16-dense0-weight", 102760448, 411041792),
    ("vgg16-dense1-weight", 16777216, 67108864),
    ("vgg16-dense2-weight", 4096000, 16384000),
];

const VGG19_TABLE: [(&str, u64, u64); 19] = [
    ("vgg19-conv0-weight", 1728, 6912),
    ("vgg19-conv1-weight", 36864, 147456),
    ("vgg19-conv2-weight", 73728, 294912),
    ("vgg19-conv3-weight", 147456, 589824),
    ("vgg19-conv4-weight", 294912, 1179648),
    ("vgg19-conv5-weight", 589824, 2359296),
    ("vgg19-conv6-weight", 589824, 2359296),
    ("vgg19-conv7-weight", 589824, 2359296),
    ("vgg19-conv8-weight", 1179648, 4718592),
    ("vgg19-conv9-weight", 2359296, 9437184),
    ("vgg19-conv10-weight", 2359296, 9437184),
    ("vgg19-conv11-weight", 2359296, 9437184),
    ("vgg19-conv12-weight", 2359296, 9437184),
    ("vgg19-conv13-weight", 2359296, 9437184),
    ("vgg19-conv14-weight", 2359296, 9437184),
    ("vgg19-conv15-weight", 2359296, 9437184),
    ("vgg19-dense0-weight", 102760448, 411041792),
    ("vgg19-dense1-weight", 16777216, 67108864),
    ("vgg19-dense2-weight", 4096000, 16384000),
];

/// ResNet50 per-layer sizes as extracted from the zoo export.
const RESNET50_EXTRACTED: [u64; 54] = [
    37632, 16384, 147456, 65536, 65536, 65536, 147456, 65536, 65536, 147456, 65536, 131072, 589824,
    262144, 524288, 262144, 589824, 262144, 262144, 589824, 262144, 262144, 589824, 262144, 524288,
    2359296, 1048576, 2097152, 1048576, 2359296, 1048576, 1048576, 2359296, 1048576, 1048576,
    2359296, 1048576, 1048576, 2359296, 1048576, 1048576, 2359296, 1048576, 2097152, 9437184,
    4194304, 8388608, 4194304, 9437184, 4194304, 4194304, 9437184, 4194304, 8192000,
];

/// The same layers as listed in the simulator's hand-written ResNet50 file.
const RESNET50_REFERENCE: [u64; 54] = [
    37632, 16384, 147456, 65536, 65536, 65536, 147456, 65536, 65536, 147456, 65536, 131072, 589824,
    262144, 524288, 262144, 589824, 262144, 262144, 589824, 262144, 262144, 589824, 262144,
    2097152, 524288, 2359296, 1048576, 1048576, 2359296, 1048576, 1048576, 2359296, 1048576,
    1048576, 2359296, 1048576, 1048576, 2359296, 1048576, 1048576, 2359296, 1048576, 8388608,
    2097152, 9437184, 4194304, 4194304, 9437184, 4194304, 4194304, 9437184, 4194304, 8192000,
];

const RESNET50_MISMATCHES: [u64; 8] = [24, 25, 26, 27, 43, 44, 45, 46];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn label_of(name: &str) -> String {
    name.trim_end_matches(".onnx").to_string()
}

fn golden_table(file: &str, table: &[(&str, u64, u64)]) -> Outcome {
    let start = Instant::now();
    let path = fixture(file);
    let bytes = pipeline::read_file(&path).map_err(|e| e.to_string())?;
    let opts = ExtractOptions::new(label_of(file));
    let t = pipeline::translate(&bytes, file, &opts, &GenerateOptions::default())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    ensure!(
        t.layers.len() == table.len(),
        "{} records, expected {}",
        t.layers.len(),
        table.len()
    );
    for (i, (got, &(name, vars, size))) in t.layers.iter().zip(table).enumerate() {
        let want = (name, vars, DataType::FLOAT, size);
        let have = (
            got.name.as_str(),
            got.variables,
            got.dtype,
            got.model_size_bytes,
        );
        ensure!(have == want, "row {i}: got {have:?}, expected {want:?}");
    }
    ensure!(
        elapsed < Duration::from_secs(5),
        "took {elapsed:?}, limit 5 s"
    );
    Ok(format!(
        "{}/{} rows exact in {:.1} ms",
        table.len(),
        table.len(),
        elapsed.as_secs_f64() * 1e3
    ))
}

fn criterion_1() -> Outcome {
    golden_table("vgg16.onnx", &VGG16_TABLE)
}

fn criterion_2() -> Outcome {
    golden_table("vgg19.onnx", &VGG19_TABLE)
}

fn criterion_3() -> Outcome {
    let model = fixture("resnet50.onnx");
    let reference = fixture("resnet50_reference.txt");

    // Check both operands before diffing them.
    let bytes = fs::read(&model).map_err(|e| e.to_string())?;
    let extracted = pipeline::operand_sizes(&bytes, "resnet50", &ExtractOptions::new("resnet50"))
        .map_err(|e| e.to_string())?;
    ensure!(
        extracted == RESNET50_EXTRACTED,
        "extracted sizes differ from the expected sizes"
    );
    let text = fs::read_to_string(&reference).map_err(|e| e.to_string())?;
    let wl = parse_workload(&text).map_err(|e| e.to_string())?;
    ensure!(
        wl.wg_sizes() == RESNET50_REFERENCE,
        "reference workload differs from the expected sizes"
    );

    let diff = |mode: &str| {
        Command::new(env!("CARGO_BIN_EXE_modtrans"))
            .args(["diff", "--format", "json", "--mode", mode])
            .arg(&model)
            .arg(&reference)
            .output()
            .expect("spawn modtrans")
    };
    let multiset = diff("multiset");
    ensure!(
        multiset.status.code() == Some(0),
        "multiset diff exited {:?}",
        multiset.status.code()
    );
    let ordered = diff("ordered");
    ensure!(
        ordered.status.code() == Some(1),
        "ordered diff exited {:?}",
        ordered.status.code()
    );
    let report: serde_json::Value =
        serde_json::from_slice(&ordered.stdout).map_err(|e| e.to_string())?;
    let positions: Vec<u64> = report["mismatches"]
        .as_array()
        .ok_or("no mismatches array")?
        .iter()
        .map(|m| m["key"].as_u64().unwrap_or(u64::MAX))
        .collect();
    ensure!(
        positions == RESNET50_MISMATCHES,
        "mismatched positions {positions:?}"
    );
    Ok("multiset exit 0; ordered exit 1 with 8 mismatches at 24-27, 43-46".into())
}

/// Rebuilds a fixture with real-size zeroed payloads in every initializer.
fn full_size_copy(file: &str) -> Vec<u8> {
    let meta = parse_model(&fs::read(fixture(file)).unwrap()).unwrap();
    let shapes: Vec<(String, Vec<i64>)> = meta
        .graph
        .initializers
        .iter()
        .map(|t| (t.name.clone(), t.dims.iter().map(|&d| d as i64).collect()))
        .collect();
    full_payload_model(&meta.graph.name, &shapes)
}

fn criterion_4() -> Outcome {
    let mut report = Vec::new();
    for file in ["resnet50.onnx", "vgg16.onnx", "vgg19.onnx"] {
        let bytes = full_size_copy(file);
        let opts = ExtractOptions::new(label_of(file));
        let (t, median) =
            pipeline::translate_timed(&bytes, file, &opts, &GenerateOptions::default(), 5)
                .map_err(|e| e.to_string())?;
        ensure!(!t.layers.is_empty(), "{file}: no layers");
        ensure!(
            median < Duration::from_secs(1),
            "{file}: median {median:?} over 5 runs, limit 1 s"
        );
        report.push(format!(
            "{} {} MB {:.2} ms",
            label_of(file),
            bytes.len() >> 20,
            median.as_secs_f64() * 1e3
        ));
    }
    Ok(report.join(", "))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut initializers = 0;
    for case in 0..RANDOM_CASES {
        let oracle: OracleModel = random_model(&mut rng);
        let clean = parse_model(&oracle.encode()).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(
            clean.graph.initializers.len() == oracle.initializers.len(),
            "case {case}: initializer count"
        );
        for (got, want) in clean.graph.initializers.iter().zip(&oracle.initializers) {
            let dims: Vec<u64> = want.dims.iter().map(|&d| d as u64).collect();
            ensure!(
                got.name == want.name && got.dims == dims && got.dtype == DataType(want.data_type),
                "case {case}: {got:?} != {want:?}"
            );
        }
        let noisy = parse_model(&oracle.encode_noisy(&mut rng))
            .map_err(|e| format!("case {case} with unknown fields: {e}"))?;
        ensure!(
            noisy == clean,
            "case {case}: unknown fields changed the output"
        );
        initializers += oracle.initializers.len();
    }
    Ok(format!(
        "{RANDOM_CASES} models, {initializers} initializers, identical with unknown fields injected"
    ))
}

fn random_comm(rng: &mut impl Rng) -> CommDescriptor {
    if rng.gen_bool(0.3) {
        return CommDescriptor::NONE;
    }
    let ty = CommType::ALL[rng.gen_range(1..CommType::ALL.len())];
    let size = if rng.gen_bool(0.1) {
        u64::MAX
    } else {
        rng.gen_range(1..=1 << 40)
    };
    CommDescriptor::new(ty, size).unwrap()
}

fn random_workload(rng: &mut impl Rng) -> WorkloadFile {
    const NAME_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_.";
    let strategy = ParallelismStrategy::ALL[rng.gen_range(0..3)];
    let n = rng.gen_range(1..=60);
    let layers = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=24);
            let name = (0..len)
                .map(|_| NAME_CHARS[rng.gen_range(0..NAME_CHARS.len())] as char)
                .collect();
            WorkloadLayerLine {
                name,
                fwd_compute: rng.gen(),
                fwd_comm: random_comm(rng),
                ig_compute: rng.gen(),
                ig_comm: random_comm(rng),
                wg_compute: rng.gen(),
                wg_comm: random_comm(rng),
                wg_update_time: rng.gen(),
            }
        })
        .collect();
    WorkloadFile::new(strategy, layers).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for case in 0..RANDOM_CASES {
        let w = random_workload(&mut rng);
        let text = emit_workload(&w);
        let back = parse_workload(&text).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(back == w, "case {case}: round trip changed the workload");
        ensure!(
            emit_workload(&back) == text,
            "case {case}: emit not deterministic"
        );
    }
    Ok(format!(
        "{RANDOM_CASES} workloads, parse(emit(w)) == w and emit byte-stable"
    ))
}

fn data_conservation(graph: &modtrans_core::OnnxGraph, label: &str) -> Result<Option<u64>, String> {
    let Ok(layers) = extract_layers(graph, &FilterPolicy::default(), &LayerNaming::new(label))
    else {
        return Ok(None);
    };
    if layers.is_empty() {
        return Ok(None);
    }
    let (w, _) = generate_workload(
        &layers,
        ParallelismStrategy::Data,
        &CommInputs::default(),
        &ComputeTimeTable::default(),
    )
    .map_err(|e| e.to_string())?;
    let wg: u64 = w.layers().iter().map(|l| l.wg_comm.size_bytes()).sum();
    let total: u64 = layers.iter().map(|l| l.model_size_bytes).sum();
    ensure!(wg == total, "{label}: sum wg {wg} != sum sizes {total}");
    for l in w.layers() {
        ensure!(
            l.fwd_comm == CommDescriptor::NONE && l.ig_comm == CommDescriptor::NONE,
            "{label}: layer {} has forward or input-gradient communication",
            l.name
        );
    }
    Ok(Some(total))
}

fn criterion_7() -> Outcome {
    let mut checked = Vec::new();
    for file in [
        "fixture_min.onnx",
        "vgg16.onnx",
        "vgg19.onnx",
        "resnet50.onnx",
    ] {
        let model = parse_model(&fs::read(fixture(file)).unwrap()).map_err(|e| e.to_string())?;
        let total = data_conservation(&model.graph, &label_of(file))?
            .ok_or_else(|| format!("{file}: no layers"))?;
        checked.push(format!("{} {total} B", label_of(file)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let mut random = 0;
    for _ in 0..RANDOM_CASES {
        let model = parse_model(&random_model(&mut rng).encode()).map_err(|e| e.to_string())?;
        if data_conservation(&model.graph, "random")?.is_some() {
            random += 1;
        }
    }
    ensure!(
        random > RANDOM_CASES / 4,
        "only {random} random models had layers"
    );
    Ok(format!(
        "{}; plus {random} random models",
        checked.join(", ")
    ))
}

struct Interrupted;

impl Transport for Interrupted {
    fn get(&self, _url: &str) -> Result<Box<dyn std::io::Read + '_>, ZooError> {
        struct Partial(bool);
        impl std::io::Read for Partial {
            fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
                if std::mem::replace(&mut self.0, true) {
                    return Err(std::io::ErrorKind::ConnectionReset.into());
                }
                let n = buf.len().min(512);
                buf[..n].fill(0);
                Ok(n)
            }
        }
        Ok(Box::new(Partial(false)))
    }
}

fn dir_entries(dir: &Path) -> usize {
    fs::read_dir(dir).map(|rd| rd.count()).unwrap_or(0)
}

fn criterion_8() -> Outcome {
    let body = fs::read(fixture("vgg16.onnx")).unwrap();
    let srv = FixtureServer::start([("/vgg16.onnx".to_string(), Route::Body(body.clone()))]);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = ModelCache::new(dir.path());
    let http = HttpTransport::default();
    let entry = |sha256: Option<String>| ZooEntry {
        url: srv.url("/vgg16.onnx"),
        sha256,
        size_bytes: Some(body.len() as u64),
    };

    let mut good = ZooManifest::default();
    good.insert("vgg16", entry(Some(sha256_hex(&body))));
    let first = fetch_model("vgg16", &good, &cache, Some(&http)).map_err(|e| e.to_string())?;
    ensure!(
        first.source == FetchSource::Network && first.bytes == body,
        "first fetch"
    );
    let before = srv.hits();
    let second = fetch_model("vgg16", &good, &cache, Some(&http)).map_err(|e| e.to_string())?;
    ensure!(
        second.source == FetchSource::Cache,
        "second fetch was not a cache hit"
    );
    ensure!(
        srv.hits() == before,
        "cache hit made {} requests",
        srv.hits() - before
    );

    let bad_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad_cache = ModelCache::new(bad_dir.path());
    let mut bad = ZooManifest::default();
    bad.insert("vgg16", entry(Some("f".repeat(64))));
    match fetch_model("vgg16", &bad, &bad_cache, Some(&http)) {
        Err(ZooError::DigestMismatch { .. }) => {}
        other => return Err(format!("digest mismatch not rejected: {other:?}")),
    }
    ensure!(
        dir_entries(bad_dir.path()) == 0,
        "rejected download left files behind"
    );

    // Atomic writes: an interrupted download publishes nothing.
    let cut_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cut_cache = ModelCache::new(cut_dir.path());
    ensure!(
        fetch_model("vgg16", &good, &cut_cache, Some(&Interrupted)).is_err(),
        "interrupted download succeeded"
    );
    ensure!(
        dir_entries(cut_dir.path()) == 0,
        "interrupted download left files behind"
    );
    ensure!(
        dir_entries(dir.path()) == 2,
        "cache holds more than model + metadata"
    );

    Ok(format!(
        "fetch, cache hit with 0 requests, digest rejection, atomic writes ({} requests total)",
        srv.hits()
    ))
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 8] = [
        ("VGG16 layer table", criterion_1),
        ("VGG19 layer table", criterion_2),
        ("ResNet50 against reference workload", criterion_3),
        ("translation under 1 s at full size", criterion_4),
        ("decoder matches reference encoder", criterion_5),
        ("workload round trip", criterion_6),
        ("DATA parallel byte conservation", criterion_7),
        ("zoo client against local server", criterion_8),
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {title}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {title}: {why}", i + 1);
            }
        }
    }
    let _ = panic::take_hook();
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
