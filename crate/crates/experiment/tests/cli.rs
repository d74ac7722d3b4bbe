use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn specreg(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specreg"))
        .args(args)
        .env("SPECREG_DATA_DIR", data_dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    out
}

/// A 60/40-image MNIST-shaped dataset whose classes differ by a bright block position.
fn fake_mnist(root: &Path) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    for (prefix, count) in [("train", 60u32), ("t10k", 40u32)] {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..count {
            let label = (i % 10) as u8;
            let mut img = vec![0u8; 784];
            for r in 0..4 {
                for c in 0..4 {
                    img[(2 * label as usize + r) * 28 + 4 + c + (i as usize % 3)] = 230;
                }
            }
            pixels.extend(img);
            labels.push(label);
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), idx(0x803, &[count, 28, 28], &pixels)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx(0x801, &[count], &labels)).unwrap();
    }
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn mnist_config(out: &Path) -> String {
    format!(
        "shallow_mlp on mnist\nscale = desk\nseed = 3\noutput_dir = {}\n\n[data]\nsubset = none\n\n\
         [model]\nlayers = dense:12:tanh, dense:10:identity\n\n[train]\nbatch_size = 20\nepochs = 2\n\n\
         [spectral]\nbeta = 1.0\nalpha_target = 2.0\n\n[attack]\nkinds = fgsm, pgd\nepsilons = 0, 0.1\niterations = 3\nsamples = all\n",
        out.display()
    )
}

fn synthetic_config(out: &Path) -> String {
    format!(
        "shallow_mlp on synthetic\nseed = 9\noutput_dir = {}\n\n[data]\nclasses = 3\nper_class = 30\n\
         validation_per_class = 10\ndim = 8\nseparation = 3.0\n\n[model]\nlayers = dense:10:tanh, dense:3:identity\n\n\
         [train]\nbatch_size = 16\nepochs = 2\nlearning_rate = 0.01\n\n[attack]\nkinds = fgsm\nepsilons = 0, 0.05\n",
        out.display()
    )
}

#[test]
fn usage_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&specreg(tmp.path(), &[])), 1);
    assert_eq!(code(&specreg(tmp.path(), &["train"])), 1);
    assert_eq!(code(&specreg(tmp.path(), &["train", "/no/such/config"])), 1);
    assert_eq!(code(&specreg(tmp.path(), &["attack", "x.spfg", "--kind", "bogus", "--eps", "0.1"])), 1);
    assert_eq!(code(&specreg(tmp.path(), &["--help"])), 0);
}

#[test]
fn bad_config_exits_1_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.conf", "shallow_mlp on mnist\n[train]\nbatch_size = 1\n");
    let out = specreg(tmp.path(), &["train", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let cfg = write_config(tmp.path(), "typo.conf", "shallow_mlp on mnist\n[train]\nepoch = 3\n");
    assert_eq!(code(&specreg(tmp.path(), &["train", &cfg])), 1);
}

#[test]
fn missing_or_corrupt_data_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.conf", &mnist_config(&tmp.path().join("out")));
    assert_eq!(code(&specreg(&tmp.path().join("empty"), &["train", &cfg])), 2);

    fake_mnist(tmp.path());
    fs::write(tmp.path().join("mnist/t10k-labels-idx1-ubyte"), idx(0x801, &[40], &[11; 40])).unwrap();
    assert_eq!(code(&specreg(tmp.path(), &["train", &cfg])), 2);

    let junk = tmp.path().join("junk.spfg");
    fs::write(&junk, b"NOPE").unwrap();
    assert_eq!(code(&specreg(tmp.path(), &["spectrum", junk.to_str().unwrap(), "--layer", "0"])), 2);
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let cfg = write_config(tmp.path(), "run.conf", &synthetic_config(&blocker.join("out")));
    assert_eq!(code(&specreg(tmp.path(), &["train", &cfg])), 3);
}

#[test]
fn train_then_attack_and_spectrum_the_checkpoint() {
    let tmp = TempDir::new().unwrap();
    fake_mnist(tmp.path());
    let out_dir = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "run.conf", &mnist_config(&out_dir));
    let out = specreg(tmp.path(), &["train", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("measured alpha"));

    let records = fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 1);
    let checkpoint = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "spfg"))
        .expect("checkpoint written");
    assert_eq!(&fs::read(&checkpoint).unwrap()[..4], b"SPFG");
    let ckpt = checkpoint.to_str().unwrap();

    let out = specreg(tmp.path(), &["attack", ckpt, "--kind", "pgd", "--eps", "0,0.05,0.1", "--iterations", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epsilon,adv_acc");
    assert_eq!(lines.len(), 4);
    let accs: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(accs.iter().all(|a| (0.0..=1.0).contains(a)));

    let out = specreg(tmp.path(), &["attack", ckpt, "--kind", "fgsm", "--eps", "-0.1"]);
    assert_eq!(code(&out), 1);

    let out = specreg(tmp.path(), &["spectrum", ckpt, "--layer", "0", "--samples", "40"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("index,lambda\n"));
    assert!(text.lines().last().unwrap().starts_with("# alpha "));
    assert_eq!(code(&specreg(tmp.path(), &["spectrum", ckpt, "--layer", "1"])), 1);
}

#[test]
fn sweep_resume_and_figures() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("sweep");
    let cfg = write_config(tmp.path(), "sweep.conf", &synthetic_config(&out_dir));
    let args = ["sweep", &cfg, "--betas", "0,1", "--alphas", "1.5,3", "--jobs", "2"];
    let out = specreg(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("3 cells done (0 resumed), 0 failed"));
    assert_eq!(fs::read_dir(out_dir.join("records")).unwrap().count(), 3);
    assert!(out_dir.join("summary.csv").exists());

    let mut resume = args.to_vec();
    resume.push("--resume");
    let out = specreg(tmp.path(), &resume);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("3 cells done (3 resumed), 0 failed"));
    let lines: usize = fs::read_dir(out_dir.join("records"))
        .unwrap()
        .map(|e| fs::read_to_string(e.unwrap().path()).unwrap().lines().count())
        .sum();
    assert_eq!(lines, 3);

    let figs = tmp.path().join("figs");
    let out = specreg(tmp.path(), &["figures", out_dir.to_str().unwrap(), "--out", figs.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(figs.join("accuracy_vs_alpha.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "run_id,beta,alpha_target,alpha_measured,epoch,val_acc,attack,epsilon,adv_acc"
    );
    let svg = fs::read_to_string(figs.join("accuracy_vs_alpha.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    assert_eq!(code(&specreg(tmp.path(), &["figures", tmp.path().join("nothing").to_str().unwrap()])), 2);
}
