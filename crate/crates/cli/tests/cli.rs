use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output};
use std::time::{Duration, Instant};

use darts_core::condition::Condition;
use darts_core::feed::{Feed, GROUND_TRUTH_FILE};
use darts_core::pipeline::{Dataset, ImageMode, PipelineConfig, TrajectoryImage};
use darts_core::sim::ScenarioFile;
use darts_tcdnet::{load_checkpoint, save_checkpoint, MetricsReport, Model, ModelConfig};
use serde_json::Value;

fn run(bin: &str, args: &[&str]) -> Output {
    let out = Command::new(bin).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{bin} {args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scenario(dir: &Path, flight_s: f64) -> PathBuf {
    let mut f = ScenarioFile::default();
    f.scenario.duration_s = flight_s + 60.0;
    f.scenario.demand_vphpl = 900.0;
    f.drone.start_time_s = 30.0;
    f.drone.duration_s = Some(flight_s);
    let p = dir.join("short.toml");
    std::fs::write(&p, f.to_toml()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sim_run_writes_feed_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), 60.0);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run(env!("CARGO_BIN_EXE_sim"), &["run", "--scenario", s(&sc), "--out", s(&a), "--seed", "7"]);
    run(env!("CARGO_BIN_EXE_sim"), &["run", "--scenario", s(&sc), "--out", s(&b), "--seed", "7"]);
    run(env!("CARGO_BIN_EXE_sim"), &["run", "--scenario", s(&sc), "--out", s(&c), "--seed", "8"]);

    let (feed, stats) = Feed::read_dir_lenient(&a).unwrap();
    assert_eq!(stats.malformed, 0);
    assert!(feed.frames.len() > 100, "{} frames", feed.frames.len());
    assert!(!feed.gps.is_empty());
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(a.join(GROUND_TRUTH_FILE)).unwrap()).unwrap();
    assert!(truth.is_object());

    let frames = |d: &Path| std::fs::read(d.join("frames.jsonl")).unwrap();
    assert_eq!(frames(&a), frames(&b), "same seed, same feed");
    assert_ne!(frames(&a), frames(&c), "seed flag overrides the file");
}

#[test]
fn sim_run_rejects_bad_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[scenario]\ndemand_vphpl = -3.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sim"))
        .args(["run", "--scenario", s(&p), "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

fn pipeline() -> PipelineConfig {
    PipelineConfig { canvas_width: 32, canvas_height: 32, ..Default::default() }
}

/// Classes told apart by where the ink sits, so two epochs suffice to
/// produce a checkpoint and a table.
fn synthetic_dataset() -> Dataset {
    let mut images = Vec::new();
    for (k, label) in Condition::ALL.into_iter().enumerate() {
        for i in 0..10 {
            let mut img = TrajectoryImage::blank(i as f64 * 20.0, 20.0, 32, 32, 1);
            for y in 0..32 {
                for x in (k * 10)..(k * 10 + 10) {
                    img.pixels[y * 32 + x] = 1.0;
                }
            }
            img.label = Some(label);
            images.push(img);
        }
    }
    Dataset::from_images(pipeline(), images, 3).unwrap()
}

#[test]
fn tcdnet_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_dataset().write(&dir.path().join("data")).unwrap();
    let cfg = dir.path().join("tcdnet.toml");
    std::fs::write(
        &cfg,
        r#"
checkpoint = "model.tcdn"
report = "report.json"
model_seed = 1

[data]
dataset = "data"

[pipeline]
canvas_width = 32
canvas_height = 32

[model]
input_channels = 1
block_widths = [4, 8, 8]
dense_widths = [16, 8]

[train]
max_epochs = 2
batch_size = 8
"#,
    )
    .unwrap();

    let out = run(env!("CARGO_BIN_EXE_tcdnet"), &["train", "--config", s(&cfg)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("split sizes"), "{text}");
    let (model, header) = load_checkpoint::<f32>(&dir.path().join("model.tcdn")).unwrap();
    assert_eq!(model.config.block_widths, vec![4, 8, 8]);
    assert_eq!(header.pipeline, Some(pipeline()));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["history"].as_array().unwrap().len(), 2);

    let out = run(env!("CARGO_BIN_EXE_tcdnet"), &["eval", "--config", s(&cfg)]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let report: MetricsReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(text.trim(), report.to_text().trim());
}

#[test]
fn tcdnet_config_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "checkpoint = \"m\"\nbogus = 1\n[data]\n").unwrap();
    assert!(darts_cli::TcdnetConfig::load(&cfg).is_err());
    std::fs::write(&cfg, "checkpoint = \"m\"\n[data]\n").unwrap();
    let c = darts_cli::TcdnetConfig::load(&cfg).unwrap();
    assert_eq!(c.checkpoint, dir.path().join("m"));
    assert!(darts_cli::load_dataset(&c).is_err(), "no data source");
}

struct Kill(Child);

impl Drop for Kill {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn simulated_flight_replayed_into_service() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(dir.path(), 250.0);
    let feed = dir.path().join("feed");
    run(env!("CARGO_BIN_EXE_sim"), &["run", "--scenario", s(&sc), "--out", s(&feed)]);

    let model = Model::<f32>::build(ModelConfig::reduced(ImageMode::Monochrome.channels()), 0).unwrap();
    save_checkpoint(&model, Some(&pipeline()), &dir.path().join("model.tcdn")).unwrap();
    let port = free_port();
    let cfg = dir.path().join("service.toml");
    std::fs::write(
        &cfg,
        format!(
            "bind = \"127.0.0.1:{port}\"\ndata_dir = \"archive\"\ncheckpoint = \"model.tcdn\"\nfeed_key = \"fk\"\n\
             [operator]\nusername = \"op\"\npassword = \"pw\"\n"
        ),
    )
    .unwrap();
    let _server = Kill(Command::new(env!("CARGO_BIN_EXE_service")).args(["run", "--config", s(&cfg)]).stderr(std::process::Stdio::null()).stdout(std::process::Stdio::null()).spawn().unwrap());
    let base = format!("http://127.0.0.1:{port}");

    let rt = tokio::runtime::Runtime::new().unwrap();
    let http = reqwest::Client::new();
    let token = rt.block_on(async {
        let t = Instant::now();
        while http.get(format!("{base}/health")).send().await.is_err() {
            assert!(t.elapsed() < Duration::from_secs(30), "service did not come up");
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
        let session: Value = http
            .post(format!("{base}/auth/login"))
            .json(&serde_json::json!({"username": "op", "password": "pw"}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let token = session["token"].as_str().unwrap().to_string();
        let r = http
            .post(format!("{base}/control/start"))
            .bearer_auth(&token)
            .json(&serde_json::json!({"freeway": "I-75"}))
            .send()
            .await
            .unwrap();
        assert!(r.status().is_success(), "{}", r.text().await.unwrap());
        token
    });

    let out = run(
        env!("CARGO_BIN_EXE_feed"),
        &["replay", "--dir", s(&feed), "--speed", "50", "--target", &base, "--key", "fk"],
    );
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["ingest"]["malformed"], 0);
    // 250 s: lane 0 closes 120 and 240, lane 1 closes 160, lane 2 closes 200.
    assert_eq!(summary["ingest"]["completed_segments"], 4, "{summary}");

    rt.block_on(async {
        let stop: Value =
            http.post(format!("{base}/control/stop")).bearer_auth(&token).send().await.unwrap().json().await.unwrap();
        let id = stop["flight"]["flight_id"].as_str().expect("stopped flight").to_string();
        let detail: Value =
            http.get(format!("{base}/flights/{id}")).bearer_auth(&token).send().await.unwrap().json().await.unwrap();
        let segments = detail["segments"].as_array().unwrap();
        assert_eq!(segments.len(), 4);
        for seg in segments {
            assert_eq!(seg["status"], "ok", "{seg}");
        }
        assert_eq!(detail["summary"]["freeway"], "I-75");
    });
}
