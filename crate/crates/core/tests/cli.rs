use std::process::{Command, Stdio};

const CONFIG: &str = "model = \"ADMM\"\nclients = 2\nrepetitions = 2\ncv = false\n\n\
[dataset]\nkind = \"synthetic\"\nn = 40\np = 2\n\n[grid]\nrho = [0.01]\nrounds = [4]\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fdrsvm"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn bench_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("res.json");
    let s = bin().args(["bench", "--config"]).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    assert_eq!(s.code(), Some(0));
    assert!(out.exists() && dir.path().join("res_rounds.csv").exists());

    let model = dir.path().join("model.json");
    let o = bin().args(["train", "--config"]).arg(&cfg).arg("--model-out").arg(&model).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained = String::from_utf8(o.stdout).unwrap();
    let o = bin().args(["evaluate", "--model"]).arg(&model).arg("--config").arg(&cfg).output().unwrap();
    assert!(o.status.success());
    // same split, same model: the metric lines agree
    let last = |s: &str| s.lines().last().unwrap().to_string();
    assert_eq!(last(&trained), last(&String::from_utf8(o.stdout).unwrap()));

    let csv = dir.path().join("d.csv");
    std::fs::write(&csv, "a,b,y\n0,0,n\n1,1,p\n0.2,0.1,n\n0.9,0.8,p\n").unwrap();
    let o = bin()
        .args(["evaluate", "--model"])
        .arg(&model)
        .arg("--csv")
        .arg(&csv)
        .args(["--label-column", "y", "--positive-label", "p"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "model = \"Nope\"\n").unwrap();
    assert_eq!(bin().args(["bench", "--config"]).arg(&cfg).status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["cv", "--config", "/nonexistent.toml"]).status().unwrap().code(), Some(1));
}

#[test]
fn failing_runs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("missing.toml");
    // the csv path does not exist, so every repetition fails
    std::fs::write(
        &cfg,
        "model = \"FedAvg\"\nrepetitions = 2\ncv = false\n[dataset]\nkind = \"csv\"\npath = \"/nonexistent.csv\"\nlabel_column = \"y\"\npositive_label = \"1\"\n",
    )
    .unwrap();
    assert_eq!(bin().args(["bench", "--config"]).arg(&cfg).status().unwrap().code(), Some(2));
}

#[test]
fn serve_and_clients_over_loopback() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let server = bin()
        .args(["serve", "--config"])
        .arg(&cfg)
        .args(["--addr", &addr])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let clients: Vec<_> = (0..2)
        .map(|g| {
            bin()
                .args(["client", "--config"])
                .arg(&cfg)
                .args(["--addr", &addr, "--index", &g.to_string()])
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in clients {
        assert!(c.wait().unwrap().success());
    }
    let out = server.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("f1 ="));
}
