use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flashsr_core::corpus::synthetic_corpus;
use flashsr_core::dsp::{read_wav, write_wav, WavEncoding};
use flashsr_core::eval::eval_suite;

const TINY: &str = r#"
[data]
synthetic_clips = 2
clip_samples = 16000

[pipeline.codec]
base_width = 8

[pipeline.denoiser]
widths = [8, 16]
time_dim = 16
attention_heads = 2

[pipeline.distill]
batch_size = 2

[pipeline.vocoder]
initial_channels = 16

[pipeline.vocoder_train]
batch_size = 1
segment_frames = 16
"#;

fn flashsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flashsr"))
        .args(args)
        .args(["--out-dir", dir.join("out").to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_path(o: Output) -> PathBuf {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn strip_wall_clock(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>().join("\n")
}

#[test]
fn config_errors_exit_3() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "[pipeline.codec]\nwidth = 4\n").unwrap();
    let o = flashsr(d.path(), &["--config", d.path().join("bad.toml").to_str().unwrap(), "train-codec", "--data", "synthetic"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pipeline.codec.width"));
    std::fs::write(d.path().join("broken.toml"), "seed = = 1").unwrap();
    let o = flashsr(d.path(), &["--config", d.path().join("broken.toml").to_str().unwrap(), "train-codec", "--data", "synthetic"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let o = flashsr(d.path(), &["--config", &cfg, "train-teacher", "--data", "synthetic", "--codec", "nope.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.ckpt"));
}

#[test]
fn full_flow_on_tiny_models() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path());
    let base = ["--config", cfg.as_str(), "--seed", "3"];
    let run = |extra: &[&str]| flashsr(d.path(), &[&base[..], extra].concat());

    let codec = ok_path(run(&["--steps", "1", "train-codec", "--data", "synthetic"]));
    let name = codec.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("train-codec-1-") && name.ends_with(".ckpt") && name.len() == "train-codec-1-".len() + 8 + 5);
    let teacher = ok_path(run(&["--steps", "2", "train-teacher", "--data", "synthetic", "--codec", codec.to_str().unwrap()]));
    let distill_args = [
        "--steps",
        "1",
        "distill",
        "--data",
        "synthetic",
        "--codec",
        codec.to_str().unwrap(),
        "--teacher",
        teacher.to_str().unwrap(),
    ];
    let student = ok_path(run(&distill_args));
    let log = std::fs::read_to_string(student.with_extension("csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    assert!(log.starts_with("step,L_distil,L_dmd,L_adv,L_disc,lambda_adv,lambda_dmd,wall_clock"));

    // Rerun: identical log apart from the wall-clock column.
    std::fs::rename(student.with_extension("csv"), d.path().join("first.csv")).unwrap();
    ok_path(run(&distill_args));
    let again = std::fs::read_to_string(student.with_extension("csv")).unwrap();
    assert_eq!(strip_wall_clock(&log), strip_wall_clock(&again));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(student.with_extension("json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "distill");
    let ck_hash = manifest["outputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(ck_hash, flashsr_cli::manifest::file_sha256(&student).unwrap());

    let vocoder = ok_path(run(&["--steps", "1", "train-vocoder", "--data", "synthetic"]));

    let clip = synthetic_corpus(1, 16000, 16000, 9).unwrap().remove(0).audio;
    let input = d.path().join("in.wav");
    write_wav(&input, &clip, WavEncoding::Pcm16).unwrap();
    let model = [
        "--codec",
        codec.to_str().unwrap(),
        "--generator",
        student.to_str().unwrap(),
        "--vocoder",
        vocoder.to_str().unwrap(),
    ];
    let out = ok_path(run(&[&["infer", "--input", input.to_str().unwrap()][..], &model[..]].concat()));
    let w = read_wav(&out).unwrap();
    assert_eq!((w.len(), w.sample_rate()), (16000, 16000));

    let csv = ok_path(run(&[&["evaluate", "--data", "synthetic", "--rtf-repeats", "1"][..], &model[..]].concat()));
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 1 + 2 * 3);
}

#[test]
fn identity_evaluation_reproduces_unprocessed_metrics() {
    let d = tempfile::tempdir().unwrap();
    let cfg_path = write_config(d.path());
    let csv = ok_path(flashsr(d.path(), &["--config", &cfg_path, "--seed", "5", "evaluate", "--data", "synthetic", "--model", "identity"]));
    let cfg = flashsr_cli::RunConfig::load(Path::new(&cfg_path), None).unwrap();
    let items = synthetic_corpus(2, 16000, 16000, 5).unwrap();
    let p = &cfg.pipeline;
    let direct = eval_suite(|lr, _| Ok(lr.clone()), &items, &p.cutoffs, &p.simulation, &p.metric, 5).unwrap();
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), direct.rows.len());
    for (r, e) in rows.iter().zip(&direct.rows) {
        assert_eq!(&r[0], e.item_id);
        assert_eq!(r[2].parse::<f64>().unwrap(), e.cutoff_hz);
        assert_eq!(r[3].parse::<f64>().unwrap(), e.lsd);
        assert_eq!(r[4].parse::<f64>().unwrap(), e.stft_d);
    }
}

#[test]
fn simulate_lr_and_dataset_cache() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("wavs");
    std::fs::create_dir_all(data.join("speech")).unwrap();
    for (i, it) in synthetic_corpus(2, 8000, 16000, 1).unwrap().iter().enumerate() {
        write_wav(data.join(format!("speech/c{i}.wav")), &it.audio, WavEncoding::Float32).unwrap();
    }
    let cache = d.path().join("cache");
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_flashsr"))
            .args(["simulate-lr", "--in-dir", data.to_str().unwrap(), "--out-dir", d.path().join("out").to_str().unwrap()])
            .env("FLASHSR_CACHE", &cache)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    };
    let manifest = ok_path(run());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["extra"]["items"][0]["category"], "speech");
    let slot = std::fs::read_dir(&cache).unwrap().next().unwrap().unwrap().path();
    assert!(slot.join("index.json").exists());
    // Second run is served from the cache and yields the same outputs.
    let m2: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ok_path(run())).unwrap()).unwrap();
    assert_eq!(m["outputs"], m2["outputs"]);
}
