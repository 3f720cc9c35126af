//! End-to-end checks of the `condense` binary: artifact layout, exit
//! codes, and determinism of saved outputs. Each test builds its own
//! miniature IDX dataset in a temporary directory and points the binary
//! at it through the data-root environment variable.

use condense::data::{load_dataset, read_synthetic_set, write_idx_images, write_idx_labels, RawImages};
use condense::engine::{init_synthetic, InitMode};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const SIDE: usize = 8;
const TRAIN_PER_CLASS: usize = 6;
const TEST_PER_CLASS: usize = 2;

fn fixture_pixel(class: usize, image: usize, y: usize, x: usize) -> u8 {
    ((class * 37 + image * 11 + y * 5 + x * 3) % 256) as u8
}

fn write_split(dir: &Path, stem: &str, per_class: usize) {
    let n = 10 * per_class;
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for class in 0..10 {
        for image in 0..per_class {
            labels.push(class);
            for y in 0..SIDE {
                for x in 0..SIDE {
                    data.push(fixture_pixel(class, image, y, x));
                }
            }
        }
    }
    let raw = RawImages { data, n, c: 1, h: SIDE, w: SIDE };
    write_idx_images(&dir.join(format!("{stem}-images-idx3-ubyte")), &raw).unwrap();
    write_idx_labels(&dir.join(format!("{stem}-labels-idx1-ubyte")), &labels).unwrap();
}

/// Lays out `<root>/mnist/{train,t10k}-*` and returns the root.
fn fixture_root() -> TempDir {
    let root = TempDir::new().unwrap();
    let dir = root.path().join("mnist");
    std::fs::create_dir(&dir).unwrap();
    write_split(&dir, "train", TRAIN_PER_CLASS);
    write_split(&dir, "t10k", TEST_PER_CLASS);
    root
}

fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condense"))
        .args(args)
        .env("CONDENSE_DATA_ROOT", root)
        .output()
        .expect("binary should launch")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("no exit code");
    assert_eq!(
        got,
        want,
        "exit code mismatch\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small-architecture overrides shared by the tests that actually train.
const TINY: &[&str] = &[
    "arch.depth=1",
    "arch.width=4",
    "condense.batch_real=8",
    "condense.batch_syn=8",
];

#[test]
fn zero_iteration_run_saves_exactly_the_initial_set() {
    let root = fixture_root();
    let out = TempDir::new().unwrap();
    let out_dir = out.path().join("run");
    let status = run(
        root.path(),
        &[
            "condense",
            "--out",
            out_dir.to_str().unwrap(),
            "condense.outer_iters=0",
            "condense.ipc=2",
            "condense.init=real",
            "condense.seed=7",
        ],
    );
    assert_code(&status, 0);

    let saved = read_synthetic_set(&out_dir.join("synthetic.dsa")).unwrap();
    let dataset = load_dataset("mnist", root.path()).unwrap();
    let expected = init_synthetic(&dataset, 2, InitMode::Real, 7).unwrap();
    assert_eq!(saved.labels, expected.labels);
    let a: Vec<u32> = saved.images.data().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = expected.images.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b, "saved pixels must be bitwise equal to the untouched initialization");
    assert!(saved.trace.per_iter.is_empty());
    assert!(out_dir.join("config.ini").exists());
    assert!(out_dir.join("grid.png").exists());
}

#[test]
fn evaluation_artifacts_are_byte_identical_across_runs() {
    let root = fixture_root();
    let work = TempDir::new().unwrap();
    let syn_dir = work.path().join("syn");
    let mut args = vec![
        "condense",
        "--out",
        syn_dir.to_str().unwrap(),
        "condense.outer_iters=0",
        "condense.ipc=1",
        "condense.seed=3",
    ];
    args.extend_from_slice(TINY);
    assert_code(&run(root.path(), &args), 0);
    let syn = syn_dir.join("synthetic.dsa");

    let eval_out = |dir: &PathBuf| {
        let mut args = vec![
            "eval",
            "--out",
            dir.to_str().unwrap(),
            "--from",
            syn.to_str().unwrap(),
            "eval.sets=1",
            "eval.nets=2",
            "eval.epochs=3",
            "eval.batch=8",
            "eval.seed=11",
        ];
        args.extend_from_slice(TINY);
        assert_code(&run(root.path(), &args), 0);
    };
    let d1 = work.path().join("e1");
    let d2 = work.path().join("e2");
    eval_out(&d1);
    eval_out(&d2);

    for name in ["report.json", "report.txt"] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let json = std::fs::read_to_string(d1.join("report.json")).unwrap();
    assert!(json.contains("\"accuracies\""), "report should carry per-run accuracies");
}

#[test]
fn unknown_configuration_keys_exit_with_the_config_code() {
    let root = fixture_root();
    let out = run(root.path(), &["condense", "condense.bogus=1"]);
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("condense.bogus"), "stderr should name the key, got: {err}");
}

#[test]
fn malformed_override_values_exit_with_the_config_code() {
    let root = fixture_root();
    let out = run(root.path(), &["condense", "condense.outer_iters=soon"]);
    assert_code(&out, 2);
}

#[test]
fn usage_errors_exit_with_the_config_code() {
    let root = fixture_root();
    let out = run(root.path(), &["condnse"]);
    assert_code(&out, 2);
}

#[test]
fn missing_dataset_exits_with_the_data_code() {
    let empty = TempDir::new().unwrap();
    let out = run(empty.path(), &["condense", "condense.outer_iters=0"]);
    assert_code(&out, 3);
}

#[test]
fn missing_config_file_exits_with_the_data_code() {
    let root = fixture_root();
    let out = run(root.path(), &["condense", "--config", "/nonexistent/run.ini"]);
    assert_code(&out, 3);
}

#[test]
fn divergence_exits_with_its_own_code_and_marks_the_partial_trace() {
    let root = fixture_root();
    let out = TempDir::new().unwrap();
    let out_dir = out.path().join("run");
    let mut args = vec![
        "condense",
        "--out",
        out_dir.to_str().unwrap(),
        "condense.outer_iters=6",
        "condense.ipc=1",
        "condense.lr_net=1e20",
        "condense.seed=1",
    ];
    args.extend_from_slice(TINY);
    let result = run(root.path(), &args);
    assert_code(&result, 4);

    let partial = std::fs::read_to_string(out_dir.join("trace-partial.txt")).unwrap();
    assert!(partial.contains("PARTIAL ARTIFACT"), "partial trace must be marked, got:\n{partial}");
    assert!(!out_dir.join("synthetic.dsa").exists(), "diverged run must not save a set");
}

#[test]
fn export_renders_a_saved_set_to_png() {
    let root = fixture_root();
    let work = TempDir::new().unwrap();
    let syn_dir = work.path().join("syn");
    assert_code(
        &run(
            root.path(),
            &[
                "condense",
                "--out",
                syn_dir.to_str().unwrap(),
                "condense.outer_iters=0",
                "condense.ipc=1",
            ],
        ),
        0,
    );
    let png = work.path().join("grid.png");
    assert_code(
        &run(
            root.path(),
            &[
                "export",
                "--from",
                syn_dir.join("synthetic.dsa").to_str().unwrap(),
                "--to",
                png.to_str().unwrap(),
            ],
        ),
        0,
    );
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
}

#[test]
fn config_file_and_overrides_land_in_the_saved_configuration() {
    let root = fixture_root();
    let work = TempDir::new().unwrap();
    let cfg = work.path().join("run.ini");
    std::fs::write(&cfg, "[condense]\nouter_iters = 0\nseed = 5\n\n[arch]\nwidth = 4\ndepth = 1\n")
        .unwrap();
    let out_dir = work.path().join("run");
    assert_code(
        &run(
            root.path(),
            &[
                "condense",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "condense.seed=9",
            ],
        ),
        0,
    );
    let saved = std::fs::read_to_string(out_dir.join("config.ini")).unwrap();
    assert!(saved.contains("seed = 9"), "override should win over the file:\n{saved}");
    assert!(saved.contains("outer_iters = 0"), "file settings should persist:\n{saved}");
    assert!(saved.contains("width = 4"), "file settings should persist:\n{saved}");
}
