use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use specreg::config::{parse_config_with_scale, Scale};
use specreg::error::ExperimentError;
use specreg::figures::{collect_records, emit_figures};
use specreg::run::{data_dir, load_data, persist, run_with_data};
use specreg::sweep::{run_sweep, SweepSpec, DEFAULT_ALPHAS, DEFAULT_BETAS};
use specreg_core::attacks::{adversarial_accuracy, AttackConfig, AttackKind};
use specreg_core::data::{load_cifar10, load_mnist, subset, Dataset, ImageShape};
use specreg_core::nn::{checkpoint, forward, ModelParams};
use specreg_core::spectral::{fit_with_config, spectrum, SpectralLossConfig};

#[derive(Parser)]
#[command(name = "specreg", version, about = "Spectral regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Fgsm,
    Pgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mnist,
    Cifar10,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model, attack it and append its record.
    Train {
        config: PathBuf,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
    },
    /// Run a β × α_target grid.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = DEFAULT_BETAS.to_vec())]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = DEFAULT_ALPHAS.to_vec())]
        alphas: Vec<f64>,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        /// Skip cells whose record already exists for the same config digest.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Adversarial accuracy of a checkpoint on the validation set.
    Attack {
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        eps: Vec<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
        #[arg(long, default_value_t = 0.01)]
        mu: f64,
        #[arg(long, default_value_t = 40)]
        iterations: usize,
        #[arg(long)]
        signed_step: bool,
    },
    /// Eigenspectrum and power-law fit of one hidden layer on a validation batch.
    Spectrum {
        checkpoint: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
    },
    /// SVG and CSV figures from the records below a directory.
    Figures {
        records_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Attack strength for the accuracy-over-alpha figures.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
}

fn read_config(path: &Path, scale: Option<ScaleArg>) -> Result<specreg::RunConfig, ExperimentError> {
    let text =
        fs::read_to_string(path).map_err(|e| ExperimentError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config_with_scale(&text, scale.map(Scale::from))?)
}

fn validation_for(params: &ModelParams<f64>, dataset: Option<DatasetArg>) -> Result<Dataset<f64>, ExperimentError> {
    let kind = match (dataset, params.input_shape()) {
        (Some(d), _) => d,
        (None, s) if s == ImageShape::new(28, 28, 1) => DatasetArg::Mnist,
        (None, s) if s == ImageShape::new(32, 32, 3) => DatasetArg::Cifar10,
        (None, s) => {
            return Err(ExperimentError::Usage(format!("cannot infer the dataset for input {s:?}; pass --dataset")))
        }
    };
    let root = data_dir();
    let (_, validation) = match kind {
        DatasetArg::Mnist => load_mnist(nested(&root, "mnist"))?,
        DatasetArg::Cifar10 => load_cifar10(nested(&root, "cifar10"))?,
    };
    Ok(validation)
}

fn nested(root: &Path, name: &str) -> PathBuf {
    let p = root.join(name);
    if p.is_dir() {
        p
    } else {
        root.to_path_buf()
    }
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Train { config, scale } => {
            let cfg = read_config(&config, scale)?;
            let data = load_data(&cfg)?;
            let (record, params) = run_with_data(&cfg, &data)?;
            let record = persist(&cfg, record, &params)?;
            println!("run {}", record.run_id);
            println!("validation accuracy {:.4}", record.final_val_accuracy);
            match record.final_alpha {
                Some(a) => println!("measured alpha {a:.4}"),
                None => println!("measured alpha n/a"),
            }
            for c in &record.robustness {
                let pts: Vec<String> = c.points.iter().map(|(e, a)| format!("{e}:{a:.4}")).collect();
                println!("{} {}", c.attack, pts.join(" "));
            }
            println!("records appended to {}", cfg.output_dir.join("records.jsonl").display());
        }
        Command::Sweep { config, betas, alphas, scale, resume, replicates, jobs } => {
            let cfg = read_config(&config, scale)?;
            let data = load_data(&cfg)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let spec = SweepSpec { betas, alphas, replicates, jobs, resume };
            let outcome = run_sweep(&cfg, &spec, &data)?;
            println!(
                "{} cells done ({} resumed), {} failed; summary in {}",
                outcome.records.len(),
                outcome.resumed,
                outcome.failures.len(),
                cfg.output_dir.join("summary.csv").display()
            );
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("failed {}: {}", f.run_id, f.error);
                }
            }
        }
        Command::Attack { checkpoint: path, kind, eps, samples, dataset, mu, iterations, signed_step } => {
            let params = checkpoint::load::<f64>(&path)?;
            let mut validation = validation_for(&params, dataset)?;
            if let Some(n) = samples.filter(|&n| n < validation.len()) {
                validation = subset(&validation, n, 0)?;
            }
            let kind = match kind {
                KindArg::Fgsm => AttackKind::Fgsm,
                KindArg::Pgd => AttackKind::Pgd,
            };
            let base = AttackConfig { kind, mu, iterations, signed_step, ..AttackConfig::pgd(0.0) };
            println!("epsilon,adv_acc");
            for e in eps {
                let cfg = base.with_epsilon(e);
                cfg.validate().map_err(|err| ExperimentError::Usage(err.to_string()))?;
                let acc =
                    adversarial_accuracy(&params, &validation, &cfg).map_err(ExperimentError::runtime("attack"))?;
                println!("{e},{acc}");
            }
        }
        Command::Spectrum { checkpoint: path, layer, samples, dataset } => {
            let params = checkpoint::load::<f64>(&path)?;
            if layer + 1 >= params.layers().len() {
                return Err(ExperimentError::Usage(format!(
                    "layer {layer} is not a hidden layer (model has {} hidden layers)",
                    params.hidden_layers()
                )));
            }
            let validation = validation_for(&params, dataset)?;
            let ids: Vec<usize> = (0..samples.min(validation.len())).collect();
            let (batch, _) = validation.batch(&ids);
            let (_, trace) = forward(&params, &batch).map_err(ExperimentError::runtime("forward pass"))?;
            let cfg = SpectralLossConfig::<f64>::default();
            let spec = spectrum(trace.activations(layer), cfg.path, cfg.solver)
                .map_err(|e| ExperimentError::runtime("spectrum")(e.into()))?;
            println!("index,lambda");
            for (i, l) in spec.lambdas.iter().enumerate() {
                println!("{},{l}", i + 1);
            }
            let fit = fit_with_config(&spec, &cfg).map_err(|e| ExperimentError::runtime("power-law fit")(e.into()))?;
            println!(
                "# alpha {} intercept {} window [{}, {}]{}",
                fit.alpha,
                fit.intercept,
                fit.window.first,
                fit.window.last,
                if fit.near_degenerate { " near-degenerate" } else { "" }
            );
        }
        Command::Figures { records_dir, out, eps } => {
            let records = collect_records(&records_dir)?;
            let out = out.unwrap_or_else(|| records_dir.join("figures"));
            let written = emit_figures(&records, &out, eps)?;
            println!("{} records, {} files written to {}", records.len(), written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
