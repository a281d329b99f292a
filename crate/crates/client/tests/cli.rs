use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use costguard_client::Client;
use costguard_core::api::{CreateSessionRequest, ErrorKind, SampleJson};
use costguard_core::stream::stream_to_string;
use costguard_core::synth::{generate, GeneratorConfig};
use costguard_core::{ControllerConfig, Prediction};

/// One in-process service shared by every test in this binary.
fn server() -> &'static str {
    static URL: OnceLock<String> = OnceLock::new();
    URL.get_or_init(|| {
        let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                costguard_server::serve(listener, std::future::pending())
                    .await
                    .unwrap();
            });
        });
        format!("http://{}", rx.recv().unwrap())
    })
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_costguard"))
        .args(args)
        .env("COSTGUARD_SERVER", server())
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_stream(path: &Path, k: usize, n: usize, seed: u64) {
    let samples = generate(&GeneratorConfig::new(k, n, seed)).unwrap();
    fs::write(path, stream_to_string(&samples).unwrap()).unwrap();
}

#[test]
fn generate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = cli(&[
            "generate",
            "-k",
            "10",
            "-n",
            "2000",
            "--seed",
            "7",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = fs::read(&a).unwrap();
    assert_eq!(a, fs::read(&b).unwrap());
    let local = stream_to_string(&generate(&GeneratorConfig::new(10, 2000, 7)).unwrap()).unwrap();
    assert_eq!(a, local.into_bytes());

    let out = cli(&["generate", "-k", "10", "-n", "5", "--seed", "8"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);
}

#[test]
fn generate_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(
        &cfg,
        r#"{"k": 4, "n": 30, "seed": 2, "miscalibration": 0.5}"#,
    )
    .unwrap();
    let out = cli(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("p_0,p_1,p_2,p_3,y_0,y_1,y_2,y_3\n"));
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn run_is_deterministic_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.csv");
    write_stream(&stream, 10, 1200, 11);
    let s = stream.to_str().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let metrics = dir.path().join(format!("m{i}.csv"));
        let log = dir.path().join(format!("l{i}.csv"));
        let out = cli(&[
            "run",
            "--stream",
            s,
            "--targets",
            "10,30",
            "--seeds",
            "3",
            "--n-test",
            "400",
            "--burn-in",
            "100",
            "--no-timing",
            "--assert",
            "--out",
            metrics.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push((
            fs::read_to_string(metrics).unwrap(),
            fs::read_to_string(log).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let (metrics, log) = &outputs[0];
    // 3 seeds × 2 targets, then mean and std per target.
    assert_eq!(metrics.lines().count(), 1 + 6 + 4);
    assert_eq!(log.lines().count(), 1 + 3 * 2 * 300);
    assert!(log.starts_with("seed,target,step,set_bits,cost,value,threshold\n"));
}

#[test]
fn weights_file_feeds_weighted_value() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.csv");
    write_stream(&stream, 4, 300, 3);
    let weights = dir.path().join("w.txt");
    fs::write(&weights, "1, 2\n3 4\n").unwrap();
    let out = cli(&[
        "run",
        "--stream",
        stream.to_str().unwrap(),
        "--targets",
        "20",
        "--seeds",
        "1",
        "--n-test",
        "300",
        "--burn-in",
        "50",
        "--value",
        "tpc",
        "--weights-file",
        weights.to_str().unwrap(),
        "--no-timing",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    fs::write(&weights, "1, two").unwrap();
    let out = cli(&[
        "run",
        "--stream",
        stream.to_str().unwrap(),
        "--weights-file",
        weights.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("two"));
}

#[test]
fn oracle_check_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.csv");
    write_stream(&stream, 10, 600, 5);
    let report = dir.path().join("r.json");
    for mode in ["expected", "violation"] {
        let out = cli(&[
            "oracle-check",
            "--stream",
            stream.to_str().unwrap(),
            "--mode",
            mode,
            "--targets",
            "5,20,50",
            "--n-test",
            "600",
            "--burn-in",
            "100",
            "--checkpoints",
            "25",
            "--assert",
            "--out",
            report.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let summary = String::from_utf8(out.stdout).unwrap();
        assert!(summary.contains("checks=75"), "{summary}");
        assert!(summary.contains("mismatches=0"), "{summary}");
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(json["mismatches"].as_array().unwrap().len(), 0);
    }
}

#[test]
fn bench_writes_rows() {
    let out = cli(&[
        "bench",
        "--n-grid",
        "100,1000",
        "--updates",
        "50",
        "--oracle-updates",
        "2",
        "--oracle-budget-secs",
        "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("log-log slope"));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,n,per_update_us,updates,status"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(code(&cli(&["run"])), 1);
    assert_eq!(
        code(&cli(&["run", "--stream", "/nonexistent/stream.csv"])),
        1
    );
    assert_eq!(code(&cli(&["generate", "-k", "10"])), 1);
    assert_eq!(code(&cli(&["generate", "-k", "99", "-n", "5"])), 1);
    assert_eq!(code(&cli(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("s.csv");
    write_stream(&stream, 10, 50, 1);
    let out = cli(&[
        "run",
        "--stream",
        stream.to_str().unwrap(),
        "--mode",
        "violation",
        "--delta",
        "2",
    ]);
    assert_eq!(code(&out), 1);
    let out = cli(&[
        "run",
        "--stream",
        stream.to_str().unwrap(),
        "--universe",
        "nonsense",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nonsense"));

    let out = Command::new(env!("CARGO_BIN_EXE_costguard"))
        .args([
            "--server",
            "http://127.0.0.1:1",
            "generate",
            "-k",
            "3",
            "-n",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn malformed_stream_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("bad.csv");
    let good = stream_to_string(&generate(&GeneratorConfig::new(3, 10, 1)).unwrap()).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    lines[6] = "0.5,0.5,1.7,0,0,1";
    fs::write(&stream, lines.join("\n")).unwrap();
    for cmd in ["run", "oracle-check"] {
        let out = cli(&[cmd, "--stream", stream.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "{}", stderr(&out));
        assert!(stderr(&out).contains("line 7"), "{}", stderr(&out));
    }

    let short = dir.path().join("short.csv");
    write_stream(&short, 10, 100, 1);
    let out = cli(&[
        "run",
        "--stream",
        short.to_str().unwrap(),
        "--n-test",
        "3000",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

/// A stream whose label distribution flips after calibration breaks
/// exchangeability, so the expected-cost check must fail.
#[test]
fn failed_guarantee_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("shift.csv");
    let mut text = String::from("p_0,p_1,p_2,y_0,y_1,y_2\n");
    for _ in 0..200 {
        text.push_str("0.900000000,0.900000000,0.900000000,1,1,1\n");
    }
    for _ in 0..200 {
        text.push_str("0.900000000,0.900000000,0.900000000,0,0,0\n");
    }
    fs::write(&stream, text).unwrap();
    let args = [
        "run",
        "--stream",
        stream.to_str().unwrap(),
        "--targets",
        "10",
        "--seeds",
        "1",
        "--n-test",
        "400",
        "--burn-in",
        "200",
        "--no-timing",
    ];
    let out = cli(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("FAILED"));
    let mut with_assert = args.to_vec();
    with_assert.push("--assert");
    let out = cli(&with_assert);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[tokio::test]
async fn library_session_round_trip() {
    let client = Client::new(server());
    client.health().await.unwrap();
    let info = client
        .create_session(&CreateSessionRequest::new(
            10,
            ControllerConfig::violation(20.0, 0.1).with_burn_in(20),
        ))
        .await
        .unwrap();
    let samples = generate(&GeneratorConfig::new(10, 60, 4)).unwrap();
    let batch: Vec<SampleJson> = samples[..20].iter().map(SampleJson::from).collect();
    let obs = client.observe(&info.id, batch).await.unwrap();
    assert_eq!(obs.n_seen, 20);

    let pred = client
        .predict(&info.id, samples[20].probs.clone())
        .await
        .unwrap();
    assert!(matches!(pred.prediction, Prediction::Set { .. }));
    let step = client
        .step(&info.id, &SampleJson::from(&samples[21]))
        .await
        .unwrap();
    assert_eq!(step.n_seen, 21);

    let forgot = client.forget(&info.id, obs.ids[0]).await.unwrap();
    assert!(forgot.removed);
    assert_eq!(forgot.n_seen, 20);
    assert!(!client.forget(&info.id, obs.ids[0]).await.unwrap().removed);

    let t = client.threshold(&info.id).await.unwrap();
    assert!(t.threshold.is_some());
    let snap = client.snapshot(&info.id).await.unwrap();
    assert!(snap.lines().any(|l| l == "# n_seen=20"), "{snap}");

    client.delete_session(&info.id).await.unwrap();
    let err = client.session(&info.id).await.unwrap_err();
    assert_eq!(err.kind(), Some(ErrorKind::NotFound));
}
