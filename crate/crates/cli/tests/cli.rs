use std::path::Path;
use std::process::{Command, Output};

fn graphcover(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphcover"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const GRAPH: &str = r#"{
  "objects": [
    { "id": "sun", "category": "sun", "grid_cell": 2, "size": 4, "appearance": { "mode": "seed", "seed": 4 } },
    { "id": "house", "category": "house", "grid_cell": 17, "size": 6, "appearance": { "mode": "random" } },
    { "id": "t", "category": "title", "grid_cell": 7, "size": 3, "appearance": { "mode": "random" }, "text": "Lorem Ipsum" }
  ],
  "relations": [{ "subject": "sun", "predicate": "above", "object": "house" }]
}"#;

/// Trains two steps on a fresh synthetic corpus; the checkpoint lands in
/// `dir/ckpt`.
fn trained(dir: &Path) {
    ok(&graphcover(dir, &["synth-data", "--out", "data", "--scenes", "12", "--covers", "4"]));
    std::fs::write(
        dir.join("run.toml"),
        "profile = \"overfit10\"\n[data]\nscene_annotations = \"data/annotations.json\"\nscene_images = \"data/images\"\ncovers = \"data/covers\"\n",
    )
    .unwrap();
    ok(&graphcover(dir, &["train", "--config", "run.toml", "--checkpoint", "ckpt", "--iterations", "2"]));
    std::fs::write(dir.join("graph.json"), GRAPH).unwrap();
}

#[test]
fn train_then_generate_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    assert!(dir.join("ckpt/manifest.json").exists());
    let csv = std::fs::read_to_string(dir.join("ckpt/losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let gen = |out: &str, extra: &[&str]| {
        let mut args = vec!["generate", "--checkpoint", "ckpt", "--graph", "graph.json", "--out", out, "--seed", "3"];
        args.extend(extra);
        ok(&graphcover(dir, &args));
    };
    gen("a", &[]);
    gen("b", &[]);
    let a = std::fs::read(dir.join("a/cover_00.png")).unwrap();
    assert_eq!(a, std::fs::read(dir.join("b/cover_00.png")).unwrap());
    assert_eq!(&a[1..4], b"PNG");

    gen("c", &["--variations", "4", "--title", "Dusk"]);
    let files: Vec<Vec<u8>> = (0..4).map(|v| std::fs::read(dir.join(format!("c/cover_{v:02}.png"))).unwrap()).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(files[i], files[j]);
        }
    }
    assert!(!dir.join("c/cover_04.png").exists());

    // Resuming continues the step count and appends to the log.
    ok(&graphcover(dir, &["train", "--config", "run.toml", "--checkpoint", "ckpt", "--iterations", "3", "--resume"]));
    let csv = std::fs::read_to_string(dir.join("ckpt/losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("2,"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.json"), r#"{ "objects": [ { "id": "x" } ], "relations": [] }"#).unwrap();
    let out = graphcover(dir, &["generate", "--checkpoint", "nowhere", "--graph", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/objects/0"));

    std::fs::write(dir.join("graph.json"), GRAPH).unwrap();
    let out = graphcover(dir, &["generate", "--checkpoint", "nowhere", "--graph", "graph.json"]);
    assert_eq!(out.status.code(), Some(3));

    let out = graphcover(dir, &["train", "--profile", "overfit10", "--checkpoint", "ckpt"]);
    assert_eq!(out.status.code(), Some(3), "missing dataset");

    let out = graphcover(dir, &["train", "--profile", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}
