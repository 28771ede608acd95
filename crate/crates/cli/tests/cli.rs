use std::path::Path;
use std::process::{Command, Output};

use dupot::data::{save_embeddings, write_interactions, EmbeddingTable, InteractionRecord};
use dupot::rng::SeededRng;

const PIPELINE: &str = "\
seed = 7
artifacts = out
source.users = su.dupe
source.items = si.dupe
source.interactions = s.csv
target.users = tu.dupe
target.items = ti.dupe
target.interactions = t.csv
autoencoder.latent = 3
autoencoder.max_epochs = 5
gmm.k = 2
train.max_epochs = 3
";

/// Two small domains sharing 30 users, items in two well separated blobs;
/// ratings are high or low by the parity of user and item index.
fn write_corpus(dir: &Path, extra: &str) {
    let mut rng = SeededRng::new(3);
    for (domain, n_users, per_user) in [("s", 40, 8), ("t", 30, 5)] {
        let mut users = EmbeddingTable::new(6).unwrap();
        let mut items = EmbeddingTable::new(6).unwrap();
        for u in 0..n_users {
            let z: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            users.insert_f64(format!("u{u}"), &z).unwrap();
        }
        for i in 0..20 {
            let z: Vec<f64> = (0..6)
                .map(|_| rng.normal() + if i % 2 == 0 { 3.0 } else { -3.0 })
                .collect();
            items.insert_f64(format!("{domain}{i}"), &z).unwrap();
        }
        let mut records = Vec::new();
        for u in 0..n_users {
            for _ in 0..per_user {
                let i = rng.below(20);
                let rating = if (i + u).is_multiple_of(2) { 4.5 } else { 1.5 };
                records.push(
                    InteractionRecord::new(format!("u{u}"), format!("{domain}{i}"), rating)
                        .unwrap(),
                );
            }
        }
        save_embeddings(&users, &dir.join(format!("{domain}u.dupe"))).unwrap();
        save_embeddings(&items, &dir.join(format!("{domain}i.dupe"))).unwrap();
        write_interactions(&records, &dir.join(format!("{domain}.csv"))).unwrap();
    }
    std::fs::write(dir.join("pipeline.conf"), format!("{PIPELINE}{extra}")).unwrap();
}

fn dupot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dupot"))
        .arg("--config")
        .arg(dir.join("pipeline.conf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn full_run_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "");
    for step in [
        &["split"][..],
        &["train-ae"],
        &["fit-gmm"],
        &["train-domain", "--domain", "source"],
        &["train-domain", "--domain", "target"],
        &["transport"],
        &["predict"],
    ] {
        let out = dupot(dir.path(), step);
        assert!(out.status.success(), "{step:?}: {}", stderr(&out));
    }
    let out = dupot(dir.path(), &["evaluate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("rmse="), "{stdout}");
    let root = dir.path().join("out");
    assert!(root.join("eval.json").is_file());
    let header = std::fs::read_to_string(root.join("predictions.csv")).unwrap();
    assert!(header.starts_with("user_id,item_id,"), "{header}");
}

#[test]
fn predict_before_transport_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "");
    let out = dupot(dir.path(), &["predict"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("missing artifact"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();

    write_corpus(dir.path(), "gmm.kk = 3\n");
    let out = dupot(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gmm.kk"), "{}", stderr(&out));

    write_corpus(dir.path(), "train.learning_rate = -1\n");
    assert_eq!(dupot(dir.path(), &["split"]).status.code(), Some(2));

    write_corpus(dir.path(), "");
    std::fs::remove_file(dir.path().join("su.dupe")).unwrap();
    let out = dupot(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("source.users"), "{}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_dupot"))
        .args(["--config", "/nonexistent/pipeline.conf", "split"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let out = dupot(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_embeddings_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "");
    let path = dir.path().join("ti.dupe");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let out = dupot(dir.path(), &["split"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "");
    let test_csv = |seed: &str| {
        let out = dupot(dir.path(), &["--seed", seed, "split"]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(dir.path().join("out/split/test.csv")).unwrap()
    };
    let (a, b, a2) = (test_csv("1"), test_csv("2"), test_csv("1"));
    assert_eq!(a, a2);
    assert_ne!(a, b);
}
