use std::path::Path;
use std::process::{Command, Output};

fn fedtune(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedtune"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 12] = [
    "--set",
    "model.family=convex",
    "--set",
    "selection.scheme=all",
    "--set",
    "data.n=240",
    "--set",
    "partition.num_clients=3",
    "--set",
    "schedule.batch_size=4",
    "--set",
    "schedule.t_agg=5",
];

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out, "--set", "method=direct_sgd", "--set", "optimizer.lr=0.1"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    fedtune(&args, dir)
}

#[test]
fn partition_creates_missing_dirs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["partition", "--out", "a/b/parts", "--seed", "7"];
    args.extend_from_slice(&SMALL);
    let first = fedtune(&args, tmp.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let manifest = std::fs::read(tmp.path().join("a/b/parts/manifest.csv")).unwrap();
    let again = fedtune(&args, tmp.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(tmp.path().join("a/b/parts/manifest.csv")).unwrap(), manifest);
    assert!(tmp.path().join("a/b/parts/shard_2.csv").exists());
    assert!(tmp.path().join("a/b/parts/config.txt").exists());
}

#[test]
fn train_writes_a_reproducible_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(tmp.path(), "run", &["--set", "schedule.epochs=3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    for f in ["config.txt", "manifest.csv", "metrics.csv", "model.bin", "shard_0.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let epochs: std::collections::BTreeSet<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs.into_iter().collect::<Vec<_>>(), vec!["1", "2", "3"]);

    // The snapshot alone reproduces the run.
    let replay = fedtune(&["train", "--config", "run/config.txt", "--out", "replay"], tmp.path());
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    for f in ["metrics.csv", "model.bin", "manifest.csv"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(tmp.path().join("replay").join(f)).unwrap(), "{f}");
    }
    let cfg_a = std::fs::read_to_string(run.join("config.txt")).unwrap();
    let cfg_b = std::fs::read_to_string(tmp.path().join("replay/config.txt")).unwrap();
    assert_eq!(cfg_a.replace("output.dir = run", "output.dir = replay"), cfg_b);
}

#[test]
fn train_from_a_partition_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["partition", "--out", "parts"];
    args.extend_from_slice(&SMALL);
    assert_eq!(fedtune(&args, tmp.path()).status.code(), Some(0));
    let out = train(tmp.path(), "from_manifest", &["--set", "data.source=manifest", "--set", "data.path=parts/manifest.csv", "--set", "schedule.epochs=1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(tmp.path().join("parts/shard_1.csv")).unwrap(),
        std::fs::read(tmp.path().join("from_manifest/shard_1.csv")).unwrap()
    );
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_value = train(tmp.path(), "x", &["--set", "optimizer.lr=abc"]);
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_value.stderr).contains("optimizer.lr"));

    std::fs::write(tmp.path().join("bad.txt"), "seed = 1\nschedule.epochs = many\n").unwrap();
    let bad_file = fedtune(&["train", "--config", "bad.txt"], tmp.path());
    assert_eq!(bad_file.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_file.stderr).contains("line 2"));

    let missing = fedtune(&["train", "--config", "nope.txt"], tmp.path());
    assert_eq!(missing.status.code(), Some(5));

    let unshared = fedtune(
        &[
            "train", "--out", "ffa", "--set", "method=ffalora", "--set", "adapter.shared_a=false", "--set", "schedule.epochs=1",
            "--set", "data.n=200", "--set", "partition.num_clients=2",
        ],
        tmp.path(),
    );
    assert_eq!(unshared.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&unshared.stderr);
    assert!(msg.contains("contract") && msg.contains("round 1"), "{msg}");

    let no_data = train(tmp.path(), "y", &["--set", "data.source=csv", "--set", "data.path=missing.csv"]);
    assert_eq!(no_data.status.code(), Some(5));
}

#[test]
fn report_summarizes_and_names_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, lr) in [("sgd_a", "0.1"), ("sgd_b", "0.02")] {
        let out = train(tmp.path(), name, &["--set", &format!("optimizer.lr={lr}"), "--set", "schedule.epochs=2"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let rep = fedtune(&["report", "sgd_a/metrics.csv", "sgd_b/metrics.csv", "--out", "rep"], tmp.path());
    assert_eq!(rep.status.code(), Some(0), "{}", String::from_utf8_lossy(&rep.stderr));
    let table = String::from_utf8_lossy(&rep.stdout);
    assert!(table.contains("sgd_a") && table.contains("sgd_b"));
    let svg = std::fs::read_to_string(tmp.path().join("rep/macro_f1.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let again = fedtune(&["report", "sgd_a/metrics.csv", "sgd_b/metrics.csv", "--out", "rep2"], tmp.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(svg, std::fs::read_to_string(tmp.path().join("rep2/macro_f1.svg")).unwrap());

    let text = std::fs::read_to_string(tmp.path().join("sgd_a/metrics.csv")).unwrap();
    let stripped: String = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    std::fs::write(tmp.path().join("cut.csv"), stripped).unwrap();
    let bad = fedtune(&["report", "cut.csv"], tmp.path());
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bound_ffalora"));
}
