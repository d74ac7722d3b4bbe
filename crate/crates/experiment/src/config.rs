//! Run configuration files.
//!
//! Line-oriented `key = value` pairs grouped under `[section]` headers; `#`
//! starts a comment. Top-level keys come before the first header. A bare line
//! `<preset> on <dataset>` is shorthand for `preset = ...` plus `dataset = ...`.
//!
//! ```text
//! preset = shallow_mlp          # shallow_mlp | deep_mlp | cnn
//! dataset = mnist               # mnist | cifar10 | synthetic
//! scale = desk                  # desk | paper (default paper)
//! seed = 7
//! output_dir = runs/example
//!
//! [data]
//! subset = 10000                # training samples, or none
//! validation_subset = none
//! # synthetic only: classes, per_class, validation_per_class, dim, separation
//!
//! [model]
//! layers = dense:256:tanh, dense:10:identity   # overrides the preset
//! regularized_layers = last     # last | comma-separated hidden layer indices
//!
//! [train]
//! batch_size = 256
//! epochs = 15
//! learning_rate = 0.001
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_epsilon = 1e-7
//!
//! [spectral]
//! beta = 1.0
//! alpha_target = 3.0
//! window = auto                 # auto | auto:<i_min> | <i_min>..<i_max>
//! lambda_floor_rel = 1e-10
//! path = auto                   # auto | feature | gram
//! solver = tridiagonal          # tridiagonal | jacobi
//!
//! [attack]
//! kinds = fgsm, pgd
//! epsilons = 0, 0.01, 0.05, 0.1
//! mu = 0.01
//! iterations = 40
//! signed_step = false
//! random_start = none           # none | <seed>
//! samples = 1000                # validation samples attacked, or all
//!
//! [output]
//! checkpoint = true
//! ```
//!
//! Every key is optional; missing values come from the preset at the chosen
//! scale. Layer entries are `dense:<units>:<activation>` or
//! `conv:<filters>:<kernel>:<activation>`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use specreg_core::attacks::{default_epsilon_grid, AttackConfig, AttackKind};
use specreg_core::data::ImageShape;
use specreg_core::linalg::EigenSolver;
use specreg_core::nn::{Activation, AdamConfig, LayerSelection, LayerSpec, TrainConfig};
use specreg_core::spectral::{FitWindow, SpectralLossConfig, SpectrumPath, WindowSpec};
use thiserror::Error;

/// Learning rate of the desk presets; the published 1e-4 barely moves α in 15 epochs.
pub const DESK_LEARNING_RATE: f64 = 4e-3;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    ShallowMlp,
    DeepMlp,
    Cnn,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::ShallowMlp => "shallow_mlp",
            Preset::DeepMlp => "deep_mlp",
            Preset::Cnn => "cnn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "shallow_mlp" => Some(Preset::ShallowMlp),
            "deep_mlp" => Some(Preset::DeepMlp),
            "cnn" => Some(Preset::Cnn),
            _ => None,
        }
    }

    /// Hidden and output layers at the given scale.
    pub fn layers(self, scale: Scale, classes: usize) -> Vec<LayerSpec> {
        let tanh = Activation::Tanh;
        let mut layers = match (self, scale) {
            (Preset::ShallowMlp, Scale::Paper) => vec![LayerSpec::Dense { units: 2000, activation: tanh }],
            (Preset::ShallowMlp, Scale::Desk) => vec![LayerSpec::Dense { units: 256, activation: tanh }],
            (Preset::DeepMlp, Scale::Paper) => vec![LayerSpec::Dense { units: 1000, activation: tanh }; 3],
            (Preset::DeepMlp, Scale::Desk) => vec![LayerSpec::Dense { units: 128, activation: tanh }; 3],
            (Preset::Cnn, _) => vec![
                LayerSpec::Conv2d { filters: 16, kernel: 3, activation: tanh },
                LayerSpec::Conv2d { filters: 32, kernel: 3, activation: tanh },
            ],
        };
        layers.push(LayerSpec::Dense { units: classes, activation: Activation::Identity });
        layers
    }

    fn epochs(self, scale: Scale) -> usize {
        match (self, scale) {
            (Preset::Cnn, Scale::Paper) => 200,
            (_, Scale::Paper) => 50,
            (_, Scale::Desk) => 15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Scale::Desk),
            "paper" => Some(Scale::Paper),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Mnist,
    Cifar10,
    /// Gaussian blobs; fast fixture for tests and smoke runs.
    Synthetic {
        classes: usize,
        per_class: usize,
        validation_per_class: usize,
        dim: usize,
        separation: f64,
    },
}

impl DatasetSource {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSource::Mnist => "mnist",
            DatasetSource::Cifar10 => "cifar10",
            DatasetSource::Synthetic { .. } => "synthetic",
        }
    }

    pub fn shape(&self) -> ImageShape {
        match *self {
            DatasetSource::Mnist => ImageShape::new(28, 28, 1),
            DatasetSource::Cifar10 => ImageShape::new(32, 32, 3),
            DatasetSource::Synthetic { dim, .. } => ImageShape::flat(dim),
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            DatasetSource::Synthetic { classes, .. } => classes,
            _ => 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DatasetSource,
    /// Stratified training subset size.
    pub train_subset: Option<usize>,
    pub validation_subset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackGrid {
    pub kinds: Vec<AttackKind>,
    /// Ascending, starting at 0.
    pub epsilons: Vec<f64>,
    pub mu: f64,
    pub iterations: usize,
    pub signed_step: bool,
    pub random_start: Option<u64>,
    /// Validation samples attacked; `None` attacks all of them.
    pub samples: Option<usize>,
}

impl AttackGrid {
    pub fn config(&self, kind: AttackKind) -> AttackConfig {
        AttackConfig {
            kind,
            epsilon: 0.0,
            mu: self.mu,
            iterations: self.iterations,
            signed_step: self.signed_step,
            random_start: self.random_start,
            pixel_bounds: (0.0, 1.0),
        }
    }
}

/// Fully resolved run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    /// Kept for provenance even when `layers` was given explicitly.
    pub preset: Option<Preset>,
    pub data: DataConfig,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<LayerSpec>,
    pub train: TrainConfig<f64>,
    pub attack: AttackGrid,
    pub output_dir: PathBuf,
    pub checkpoint: bool,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn beta(&self) -> f64 {
        self.train.spectral.beta
    }

    pub fn alpha_target(&self) -> f64 {
        self.train.spectral.alpha_target
    }

    /// Canonical text; `parse_config(&c.serialize()) == Ok(c)`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let list = |xs: &[String]| xs.join(", ");
        let opt = |v: Option<usize>, none: &str| v.map_or(none.to_string(), |n| n.to_string());
        if let Some(p) = self.preset {
            let _ = writeln!(s, "preset = {}", p.name());
        }
        let _ = writeln!(s, "dataset = {}", self.data.source.name());
        let _ = writeln!(s, "scale = {}", self.scale.name());
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());

        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "subset = {}", opt(self.data.train_subset, "none"));
        let _ = writeln!(s, "validation_subset = {}", opt(self.data.validation_subset, "none"));
        if let DatasetSource::Synthetic { classes, per_class, validation_per_class, dim, separation } = self.data.source
        {
            let _ = writeln!(s, "classes = {classes}");
            let _ = writeln!(s, "per_class = {per_class}");
            let _ = writeln!(s, "validation_per_class = {validation_per_class}");
            let _ = writeln!(s, "dim = {dim}");
            let _ = writeln!(s, "separation = {separation:?}");
        }

        let _ = writeln!(s, "\n[model]");
        let layers: Vec<String> = self.layers.iter().map(|l| layer_text(l)).collect();
        let _ = writeln!(s, "layers = {}", list(&layers));
        let selection = match &self.train.regularized_layers {
            LayerSelection::Last => "last".to_string(),
            LayerSelection::Layers(ids) => list(&ids.iter().map(|i| i.to_string()).collect::<Vec<_>>()),
        };
        let _ = writeln!(s, "regularized_layers = {selection}");

        let t = &self.train;
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "learning_rate = {:?}", t.learning_rate);
        let _ = writeln!(s, "adam_beta1 = {:?}", t.adam.beta1);
        let _ = writeln!(s, "adam_beta2 = {:?}", t.adam.beta2);
        let _ = writeln!(s, "adam_epsilon = {:?}", t.adam.epsilon);

        let sp = &t.spectral;
        let _ = writeln!(s, "\n[spectral]");
        let _ = writeln!(s, "beta = {:?}", sp.beta);
        let _ = writeln!(s, "alpha_target = {:?}", sp.alpha_target);
        let window = match sp.window {
            WindowSpec::Auto { first: 1 } => "auto".to_string(),
            WindowSpec::Auto { first } => format!("auto:{first}"),
            WindowSpec::Fixed(w) => format!("{}..{}", w.first, w.last),
        };
        let _ = writeln!(s, "window = {window}");
        let _ = writeln!(s, "lambda_floor_rel = {:?}", sp.lambda_floor_rel);
        let _ = writeln!(s, "path = {}", sp.path.name());
        let _ = writeln!(s, "solver = {}", sp.solver.name());

        let a = &self.attack;
        let _ = writeln!(s, "\n[attack]");
        let kinds: Vec<String> = a.kinds.iter().map(|k| k.name().to_string()).collect();
        let _ = writeln!(s, "kinds = {}", list(&kinds));
        let eps: Vec<String> = a.epsilons.iter().map(|e| format!("{e:?}")).collect();
        let _ = writeln!(s, "epsilons = {}", list(&eps));
        let _ = writeln!(s, "mu = {:?}", a.mu);
        let _ = writeln!(s, "iterations = {}", a.iterations);
        let _ = writeln!(s, "signed_step = {}", a.signed_step);
        let _ = writeln!(s, "random_start = {}", a.random_start.map_or("none".to_string(), |v| v.to_string()));
        let _ = writeln!(s, "samples = {}", opt(a.samples, "all"));

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "checkpoint = {}", self.checkpoint);
        s
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

fn layer_text(l: &LayerSpec) -> String {
    match *l {
        LayerSpec::Dense { units, activation } => format!("dense:{units}:{}", activation.name()),
        LayerSpec::Conv2d { filters, kernel, activation } => format!("conv:{filters}:{kernel}:{}", activation.name()),
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("", &["preset", "dataset", "scale", "seed", "output_dir"]),
    ("data", &["subset", "validation_subset", "classes", "per_class", "validation_per_class", "dim", "separation"]),
    ("model", &["layers", "regularized_layers"]),
    ("train", &["batch_size", "epochs", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon"]),
    ("spectral", &["beta", "alpha_target", "window", "lambda_floor_rel", "path", "solver"]),
    ("attack", &["kinds", "epsilons", "mu", "iterations", "signed_step", "random_start", "samples"]),
    ("output", &["checkpoint"]),
];

/// Raw `section.key → (line, value)` table.
struct Entries(HashMap<String, (usize, String)>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.remove(key)
    }

    fn parse<T>(
        &mut self,
        key: &str,
        f: impl Fn(&str) -> Option<T>,
        expected: &str,
    ) -> Result<Option<(usize, T)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => f(&v)
                .map(|x| Some((line, x)))
                .ok_or_else(|| ConfigError::at(line, format!("{key}: expected {expected}, got '{v}'"))),
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, expected: &str) -> Result<Option<(usize, T)>, ConfigError> {
        self.parse(key, |v| v.parse().ok(), expected)
    }
}

fn parse_optional_count(v: &str, none: &str) -> Option<Option<usize>> {
    if v == none {
        Some(None)
    } else {
        v.parse().ok().map(Some)
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    v.split(',').map(|x| f(x.trim())).collect()
}

fn parse_layer(v: &str) -> Option<LayerSpec> {
    let parts: Vec<&str> = v.split(':').collect();
    let act = |s: &str| match s {
        "tanh" => Some(Activation::Tanh),
        "identity" => Some(Activation::Identity),
        _ => None,
    };
    match parts.as_slice() {
        ["dense", units, a] => Some(LayerSpec::Dense { units: units.parse().ok()?, activation: act(a)? }),
        ["conv", filters, kernel, a] => Some(LayerSpec::Conv2d {
            filters: filters.parse().ok()?,
            kernel: kernel.parse().ok()?,
            activation: act(a)?,
        }),
        _ => None,
    }
}

fn parse_window(v: &str) -> Option<WindowSpec> {
    if v == "auto" {
        return Some(WindowSpec::Auto { first: 1 });
    }
    if let Some(first) = v.strip_prefix("auto:") {
        return Some(WindowSpec::Auto { first: first.parse().ok()? });
    }
    let (a, b) = v.split_once("..")?;
    Some(WindowSpec::Fixed(FitWindow::new(a.trim().parse().ok()?, b.trim().parse().ok()?)))
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn split_lines(text: &str) -> Result<Entries, ConfigError> {
    let mut entries = HashMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, format!("malformed section header '{content}'")))?
                .trim();
            if name.is_empty() || !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let pairs: Vec<(String, String)> = match content.split_once('=') {
            Some((k, v)) => vec![(k.trim().to_string(), v.trim().to_string())],
            None => {
                let words: Vec<&str> = content.split_whitespace().collect();
                match words.as_slice() {
                    [preset, "on", dataset] if section.is_empty() => {
                        vec![("preset".into(), preset.to_string()), ("dataset".into(), dataset.to_string())]
                    }
                    _ => return Err(ConfigError::at(line, format!("expected 'key = value', got '{content}'"))),
                }
            }
        };
        for (key, value) in pairs {
            let allowed = KEYS.iter().find(|(s, _)| *s == section).map_or(&[][..], |(_, k)| k);
            if !allowed.contains(&key.as_str()) {
                let place = if section.is_empty() { "top level".to_string() } else { format!("[{section}]") };
                return Err(ConfigError::at(line, format!("unknown key '{key}' in {place}")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("{key}: missing value")));
            }
            let full = if section.is_empty() { key.clone() } else { format!("{section}.{key}") };
            if let Some((first, _)) = entries.insert(full, (line, value)) {
                return Err(ConfigError::at(line, format!("duplicate key '{key}' (first set on line {first})")));
            }
        }
    }
    Ok(Entries(entries))
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_scale(text, None)
}

/// Parses, then materializes defaults; `scale` overrides the file's value.
pub fn parse_config_with_scale(text: &str, scale_override: Option<Scale>) -> Result<RunConfig, ConfigError> {
    let mut e = split_lines(text)?;

    let preset = e.parse("preset", Preset::from_name, "shallow_mlp, deep_mlp or cnn")?;
    let dataset_name = e.parse(
        "dataset",
        |v| ["mnist", "cifar10", "synthetic"].contains(&v).then(|| v.to_string()),
        "mnist, cifar10 or synthetic",
    )?;
    let scale = e.parse("scale", Scale::from_name, "desk or paper")?.map(|(_, s)| s);
    let scale = scale_override.or(scale).unwrap_or(Scale::Paper);
    let seed = e.num::<u64>("seed", "an unsigned integer")?.map_or(0, |(_, v)| v);
    let output_dir = e.take("output_dir").map(|(_, v)| PathBuf::from(v));

    let synthetic_keys = ["classes", "per_class", "validation_per_class", "dim", "separation"];
    let source = match dataset_name.as_ref().map(|(_, n)| n.as_str()) {
        None | Some("mnist") => DatasetSource::Mnist,
        Some("cifar10") => DatasetSource::Cifar10,
        _ => {
            let classes = e.num("data.classes", "a positive integer")?.map_or(3, |(_, v)| v);
            let per_class = e.num("data.per_class", "a positive integer")?.map_or(100, |(_, v)| v);
            let validation_per_class = e.num("data.validation_per_class", "a positive integer")?.map_or(50, |(_, v)| v);
            let dim = e.num("data.dim", "a positive integer")?.map_or(16, |(_, v)| v);
            let separation = e.num::<f64>("data.separation", "a number")?.map_or(3.0, |(_, v)| v);
            if classes == 0 || per_class == 0 || validation_per_class == 0 || dim == 0 {
                return Err(ConfigError::general("synthetic dataset counts must be positive"));
            }
            if !(separation >= 0.0) || !separation.is_finite() {
                return Err(ConfigError::general("synthetic separation must be finite and >= 0"));
            }
            DatasetSource::Synthetic { classes, per_class, validation_per_class, dim, separation }
        }
    };
    for key in synthetic_keys {
        if let Some((line, _)) = e.take(&format!("data.{key}")) {
            return Err(ConfigError::at(line, format!("'{key}' only applies to the synthetic dataset")));
        }
    }

    let desk = scale == Scale::Desk;
    let real_data = !matches!(source, DatasetSource::Synthetic { .. });
    let train_subset = e
        .parse("data.subset", |v| parse_optional_count(v, "none"), "a count or none")?
        .map_or((desk && real_data).then_some(10_000), |(_, v)| v);
    let validation_subset = e
        .parse("data.validation_subset", |v| parse_optional_count(v, "none"), "a count or none")?
        .map_or(None, |(_, v)| v);
    if train_subset == Some(0) || validation_subset == Some(0) {
        return Err(ConfigError::general("subset sizes must be positive"));
    }

    let explicit_layers = e.0.contains_key("model.layers");
    let preset_value = preset.map(|(_, p)| p).or((!explicit_layers).then_some(Preset::ShallowMlp));
    let layers = match e.parse(
        "model.layers",
        |v| parse_list(v, parse_layer),
        "a list of dense:<units>:<act> / conv:<filters>:<kernel>:<act>",
    )? {
        Some((line, layers)) => {
            if layers.is_empty() {
                return Err(ConfigError::at(line, "layers: empty list"));
            }
            layers
        }
        None => preset_value.unwrap_or(Preset::ShallowMlp).layers(scale, source.classes()),
    };
    let regularized_layers = match e.take("model.regularized_layers") {
        None => LayerSelection::Last,
        Some((_, v)) if v == "last" => LayerSelection::Last,
        Some((line, v)) => LayerSelection::Layers(parse_list(&v, |x| x.parse().ok()).ok_or_else(|| {
            ConfigError::at(line, format!("regularized_layers: expected last or indices, got '{v}'"))
        })?),
    };

    let mut train = TrainConfig::<f64> { seed, regularized_layers, ..TrainConfig::default() };
    train.batch_size = match e.num::<usize>("train.batch_size", "a positive integer")? {
        Some((line, b)) if b < 2 => {
            return Err(ConfigError::at(
                line,
                format!("batch_size = {b}: centering needs at least 2 samples per batch"),
            ))
        }
        Some((_, b)) => b,
        None if desk => 256,
        None => 2500,
    };
    train.epochs = match e.num::<usize>("train.epochs", "a positive integer")? {
        Some((line, 0)) => return Err(ConfigError::at(line, "epochs must be at least 1")),
        Some((_, n)) => n,
        None => preset_value.unwrap_or(Preset::ShallowMlp).epochs(scale),
    };
    train.learning_rate = match e.num::<f64>("train.learning_rate", "a number")? {
        Some((line, lr)) if !(lr >= 0.0) || !lr.is_finite() => {
            return Err(ConfigError::at(line, "learning_rate must be finite and >= 0"))
        }
        Some((_, lr)) => lr,
        None if desk => DESK_LEARNING_RATE,
        None => 1e-4,
    };
    let mut adam = AdamConfig::<f64>::default();
    if let Some((_, v)) = e.num("train.adam_beta1", "a number")? {
        adam.beta1 = v;
    }
    if let Some((_, v)) = e.num("train.adam_beta2", "a number")? {
        adam.beta2 = v;
    }
    if let Some((_, v)) = e.num("train.adam_epsilon", "a number")? {
        adam.epsilon = v;
    }
    adam.validate().map_err(|err| ConfigError::general(err.to_string()))?;
    train.adam = adam;

    let mut spectral = SpectralLossConfig::<f64>::default();
    if let Some((line, v)) = e.num::<f64>("spectral.beta", "a number")? {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(ConfigError::at(line, "beta must be finite and >= 0"));
        }
        spectral.beta = v;
    }
    if let Some((line, v)) = e.num::<f64>("spectral.alpha_target", "a number")? {
        if !v.is_finite() {
            return Err(ConfigError::at(line, "alpha_target must be finite"));
        }
        spectral.alpha_target = v;
    }
    if let Some((_, w)) = e.parse("spectral.window", parse_window, "auto, auto:<i_min> or <i_min>..<i_max>")? {
        spectral.window = w;
    }
    if let Some((_, v)) = e.num("spectral.lambda_floor_rel", "a number")? {
        spectral.lambda_floor_rel = v;
    }
    if let Some((_, p)) = e.parse("spectral.path", SpectrumPath::from_name, "auto, feature or gram")? {
        spectral.path = p;
    }
    if let Some((_, s)) = e.parse("spectral.solver", EigenSolver::from_name, "tridiagonal or jacobi")? {
        spectral.solver = s;
    }
    spectral.validate().map_err(|err| ConfigError::general(err.to_string()))?;
    train.spectral = spectral;

    let kinds = e
        .parse("attack.kinds", |v| parse_list(v, AttackKind::from_name), "a list of fgsm/pgd")?
        .map_or(vec![AttackKind::Fgsm, AttackKind::Pgd], |(_, k)| k);
    let epsilons =
        match e.parse("attack.epsilons", |v| parse_list(v, |x| x.parse::<f64>().ok()), "a list of numbers")? {
            Some((line, eps)) => {
                if eps.first() != Some(&0.0)
                    || eps.windows(2).any(|w| !(w[0] < w[1]))
                    || eps.iter().any(|x| !x.is_finite())
                {
                    return Err(ConfigError::at(line, "epsilons must ascend strictly from 0"));
                }
                eps
            }
            None => default_epsilon_grid(),
        };
    let mu = match e.num::<f64>("attack.mu", "a number")? {
        Some((line, m)) if !(m > 0.0) || !m.is_finite() => return Err(ConfigError::at(line, "mu must be positive")),
        Some((_, m)) => m,
        None => 0.01,
    };
    let iterations = match e.num::<usize>("attack.iterations", "a positive integer")? {
        Some((line, 0)) => return Err(ConfigError::at(line, "iterations must be at least 1")),
        Some((_, n)) => n,
        None => 40,
    };
    let signed_step = e.parse("attack.signed_step", parse_bool, "true or false")?.is_some_and(|(_, b)| b);
    let random_start = e
        .parse(
            "attack.random_start",
            |v| if v == "none" { Some(None) } else { v.parse().ok().map(Some) },
            "none or a seed",
        )?
        .and_then(|(_, v)| v);
    let samples = match e.parse("attack.samples", |v| parse_optional_count(v, "all"), "a count or all")? {
        Some((line, Some(0))) => return Err(ConfigError::at(line, "samples must be positive")),
        Some((_, v)) => v,
        None => (desk && real_data).then_some(1000),
    };
    let checkpoint = e.parse("output.checkpoint", parse_bool, "true or false")?.map_or(true, |(_, b)| b);

    // every key was consumed; anything left is a programming error in KEYS
    debug_assert!(e.0.is_empty(), "unconsumed keys: {:?}", e.0.keys());

    let output_dir = output_dir.unwrap_or_else(|| {
        PathBuf::from(format!("runs/{}-{}", preset_value.map_or("custom", Preset::name), source.name()))
    });
    let config = RunConfig {
        scale,
        preset: preset_value,
        data: DataConfig { source, train_subset, validation_subset },
        layers,
        train,
        attack: AttackGrid { kinds, epsilons, mu, iterations, signed_step, random_start, samples },
        output_dir,
        checkpoint,
    };
    check_architecture(&config)?;
    Ok(config)
}

fn check_architecture(c: &RunConfig) -> Result<(), ConfigError> {
    specreg_core::nn::ModelParams::<f64>::init(c.data.source.shape(), &c.layers, 0)
        .map_err(|e| ConfigError::general(e.to_string()))?;
    let last = c.layers.last().expect("non-empty layers");
    if !matches!(last, LayerSpec::Dense { units, .. } if *units == c.data.source.classes()) {
        return Err(ConfigError::general(format!(
            "the last layer must be dense with {} units (one per class)",
            c.data.source.classes()
        )));
    }
    c.train.regularized_layers.resolve(c.layers.len()).map_err(|e| ConfigError::general(e.to_string()))?;
    if c.train.spectral.beta > 0.0 && c.layers.len() < 2 {
        return Err(ConfigError::general("spectral penalty needs at least one hidden layer"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_preset_gets_published_defaults() {
        let c = parse_config("shallow_mlp on mnist\n").unwrap();
        assert_eq!(c.preset, Some(Preset::ShallowMlp));
        assert_eq!(c.train.batch_size, 2500);
        assert_eq!(c.train.epochs, 50);
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.layers[0], LayerSpec::Dense { units: 2000, activation: Activation::Tanh });
        assert_eq!(c.data.train_subset, None);
    }

    #[test]
    fn cnn_on_cifar_trains_for_200_epochs() {
        let c = parse_config("cnn on cifar10").unwrap();
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.layers.len(), 3);
        assert_eq!(c.data.source.shape(), ImageShape::new(32, 32, 3));
    }

    #[test]
    fn desk_scale_shrinks() {
        let c = parse_config("preset = deep_mlp\nscale = desk").unwrap();
        assert_eq!(c.layers[..3], [LayerSpec::Dense { units: 128, activation: Activation::Tanh }; 3]);
        assert_eq!((c.train.batch_size, c.train.epochs, c.data.train_subset), (256, 15, Some(10_000)));
        let paper = parse_config_with_scale("preset = deep_mlp\nscale = desk", Some(Scale::Paper)).unwrap();
        assert_eq!(paper.layers[0], LayerSpec::Dense { units: 1000, activation: Activation::Tanh });
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_config("preset = cnn\n\n[train]\nbatch_size = 1\n").unwrap_err();
        assert_eq!(err.line, Some(4));
        assert!(err.message.contains("batch_size"));
        assert_eq!(parse_config("[train]\nbatchsize = 3").unwrap_err().line, Some(2));
        assert_eq!(parse_config("[nope]").unwrap_err().line, Some(1));
        assert_eq!(parse_config("[spectral]\nbeta = lots").unwrap_err().line, Some(2));
        assert_eq!(parse_config("seed = 1\nseed = 2").unwrap_err().line, Some(2));
        assert_eq!(parse_config("[attack]\nepsilons = 0.1, 0.2").unwrap_err().line, Some(2));
        assert_eq!(parse_config("dataset = mnist\n[data]\ndim = 3").unwrap_err().line, Some(3));
        assert!(parse_config("[model]\nlayers = dense:5:tanh").is_err());
    }

    #[test]
    fn round_trip() {
        let text = "\
dataset = synthetic
seed = 3
[data]
classes = 4
dim = 9
separation = 2.5
[model]
layers = dense:7:tanh, dense:5:tanh, dense:4:identity
regularized_layers = 0, 1
[spectral]
beta = 0.1
alpha_target = 2.0
window = 1..5
solver = jacobi
[attack]
kinds = pgd
epsilons = 0, 0.05
random_start = 11
signed_step = true
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.preset, None);
        assert_eq!(parse_config(&c.serialize()).unwrap(), c);
        let p = parse_config("cnn on mnist\nscale = desk").unwrap();
        assert_eq!(parse_config(&p.serialize()).unwrap(), p);
    }
}
