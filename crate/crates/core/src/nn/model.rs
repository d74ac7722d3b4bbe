use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{conv_backward, conv_forward, ConvGeometry};
use super::loss::softmax_cross_entropy;
use super::train::TrainConfig;
use super::NnError;
use crate::data::{Dataset, ImageShape};
use crate::linalg::Matrix;
use crate::spectral::{spectral_loss_and_grad, SpectralEvaluation};
use crate::Real;

/// Rows per forward pass when scoring a whole dataset.
const EVAL_CHUNK: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }
}

/// Layer type plus the shapes it was built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// `y = x·W + b`, `W` stored `inputs × outputs` row-major.
    Dense { inputs: usize, outputs: usize },
    /// Stride 1, no padding, HWC in and out.
    Conv2d { input: ImageShape, kernel: usize, filters: usize },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d { input, .. } => input.len(),
        }
    }

    pub fn output_shape(&self) -> ImageShape {
        match *self {
            LayerKind::Dense { outputs, .. } => ImageShape::flat(outputs),
            LayerKind::Conv2d { input, kernel, filters } => ConvGeometry { input, kernel, filters }.output(),
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().len()
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, outputs } => inputs * outputs,
            LayerKind::Conv2d { input, kernel, filters } => kernel * kernel * input.channels * filters,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { filters, .. } => filters,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerKind::Dense { inputs, outputs } => (inputs, outputs),
            LayerKind::Conv2d { input, kernel, filters } => {
                (kernel * kernel * input.channels, kernel * kernel * filters)
            }
        }
    }
}

/// Architecture entry; input sizes are inferred while building.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Conv2d { filters: usize, kernel: usize, activation: Activation },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub kind: LayerKind,
    pub activation: Activation,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Ordered layer parameters of a feedforward classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    input: ImageShape,
    layers: Vec<Layer<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights and zero biases, seeded.
    pub fn init(input: ImageShape, specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        if specs.is_empty() {
            return Err(NnError::Architecture("no layers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (kind, activation) = match *spec {
                LayerSpec::Dense { units, activation } => {
                    (LayerKind::Dense { inputs: shape.len(), outputs: units }, activation)
                }
                LayerSpec::Conv2d { filters, kernel, activation } => {
                    if kernel == 0 || kernel > shape.height || kernel > shape.width {
                        return Err(NnError::Architecture(format!(
                            "layer {i}: {kernel}x{kernel} kernel does not fit a {}x{} input",
                            shape.height, shape.width
                        )));
                    }
                    (LayerKind::Conv2d { input: shape, kernel, filters }, activation)
                }
            };
            if kind.output_len() == 0 || kind.input_len() == 0 {
                return Err(NnError::Architecture(format!("layer {i} has an empty input or output")));
            }
            let (fan_in, fan_out) = kind.fans();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..kind.weight_len()).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
            let biases = vec![T::zero(); kind.bias_len()];
            shape = kind.output_shape();
            layers.push(Layer { kind, activation, weights, biases });
        }
        Ok(Self { input, layers })
    }

    /// tanh hidden layers of the given widths followed by a linear output layer.
    pub fn mlp(input: ImageShape, hidden: &[usize], classes: usize, seed: u64) -> Result<Self, NnError> {
        let mut specs: Vec<LayerSpec> =
            hidden.iter().map(|&units| LayerSpec::Dense { units, activation: Activation::Tanh }).collect();
        specs.push(LayerSpec::Dense { units: classes, activation: Activation::Identity });
        Self::init(input, &specs, seed)
    }

    /// tanh convolutions followed by a linear output layer.
    pub fn cnn(
        input: ImageShape,
        filters: &[usize],
        kernel: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut specs: Vec<LayerSpec> = filters
            .iter()
            .map(|&filters| LayerSpec::Conv2d { filters, kernel, activation: Activation::Tanh })
            .collect();
        specs.push(LayerSpec::Dense { units: classes, activation: Activation::Identity });
        Self::init(input, &specs, seed)
    }

    /// Checks that shapes chain and all parameters are finite.
    pub fn from_layers(input: ImageShape, layers: Vec<Layer<T>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Architecture("no layers".into()));
        }
        let mut shape = input;
        for (i, layer) in layers.iter().enumerate() {
            let fits = match layer.kind {
                LayerKind::Dense { inputs, .. } => inputs == shape.len(),
                LayerKind::Conv2d { input, kernel, .. } => {
                    input == shape && kernel >= 1 && kernel <= input.height && kernel <= input.width
                }
            };
            if !fits {
                return Err(NnError::Architecture(format!("layer {i} does not accept input {shape:?}")));
            }
            if layer.weights.len() != layer.kind.weight_len() || layer.biases.len() != layer.kind.bias_len() {
                return Err(NnError::Architecture(format!("layer {i} parameter lengths do not match its shape")));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite("parameters"));
            }
            shape = layer.kind.output_shape();
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.kind.output_len())
    }

    /// Every layer but the output layer.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.biases])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.biases])
    }
}

/// Which hidden layers carry the spectral penalty.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum LayerSelection {
    /// The hidden layer feeding the output layer.
    #[default]
    Last,
    /// Explicit 0-based layer indices; each must be a hidden layer.
    Layers(Vec<usize>),
}

impl LayerSelection {
    /// Sorted, de-duplicated hidden-layer indices.
    pub fn resolve(&self, layers: usize) -> Result<Vec<usize>, NnError> {
        let hidden = layers.saturating_sub(1);
        match self {
            LayerSelection::Last => Ok(if hidden == 0 { Vec::new() } else { vec![hidden - 1] }),
            LayerSelection::Layers(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids.dedup();
                if let Some(&bad) = ids.iter().find(|&&i| i >= hidden) {
                    return Err(NnError::Config(format!(
                        "layer {bad} is not a hidden layer (model has {hidden} hidden layers)"
                    )));
                }
                Ok(ids)
            }
        }
    }
}

/// Per-layer values from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    /// Pre-activation output of every layer, N × features.
    pub pre: Vec<Matrix<T>>,
    /// Post-activation output of every layer, N × features (flattened HWC for conv).
    pub post: Vec<Matrix<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.post.last().expect("trace has at least one layer")
    }

    /// Hidden activation matrix of layer `layer`.
    pub fn activations(&self, layer: usize) -> &Matrix<T> {
        &self.post[layer]
    }
}

fn check_batch<T: Real>(params: &ModelParams<T>, batch: &Matrix<T>) -> Result<(), NnError> {
    let expected = params.input.len();
    if batch.cols() != expected {
        return Err(NnError::InputShape { expected, got: batch.cols() });
    }
    Ok(())
}

fn check_labels<T: Real>(params: &ModelParams<T>, batch: &Matrix<T>, labels: &[usize]) -> Result<(), NnError> {
    if labels.len() != batch.rows() {
        return Err(NnError::LabelCount { images: batch.rows(), labels: labels.len() });
    }
    let classes = params.classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::Label { label, classes });
    }
    Ok(())
}

fn layer_forward<T: Real>(layer: &Layer<T>, input: &Matrix<T>) -> Matrix<T> {
    match layer.kind {
        LayerKind::Dense { inputs, outputs } => {
            let n = input.rows();
            let mut out = Matrix::zeros(n, outputs);
            for r in 0..n {
                out.row_mut(r).copy_from_slice(&layer.biases);
            }
            T::gemm(
                n,
                inputs,
                outputs,
                T::one(),
                input.as_slice(),
                false,
                &layer.weights,
                false,
                T::one(),
                out.as_mut_slice(),
            );
            out
        }
        LayerKind::Conv2d { input: shape, kernel, filters } => {
            conv_forward(input, &layer.weights, &layer.biases, &ConvGeometry { input: shape, kernel, filters })
        }
    }
}

fn activate<T: Real>(activation: Activation, pre: &Matrix<T>) -> Matrix<T> {
    match activation {
        Activation::Identity => pre.clone(),
        Activation::Tanh => pre.map(T::tanh),
    }
}

/// Logits and the full per-layer trace.
pub fn forward<T: Real>(params: &ModelParams<T>, batch: &Matrix<T>) -> Result<(Matrix<T>, ForwardTrace<T>), NnError> {
    check_batch(params, batch)?;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Matrix<T>> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let input = post.last().unwrap_or(batch);
        let z = layer_forward(layer, input);
        post.push(activate(layer.activation, &z));
        pre.push(z);
    }
    let logits = post.last().expect("at least one layer").clone();
    Ok((logits, ForwardTrace { input: batch.clone(), pre, post }))
}

/// Logits only.
pub fn predict<T: Real>(params: &ModelParams<T>, batch: &Matrix<T>) -> Result<Matrix<T>, NnError> {
    check_batch(params, batch)?;
    let mut current: Option<Matrix<T>> = None;
    for layer in &params.layers {
        let z = layer_forward(layer, current.as_ref().unwrap_or(batch));
        current = Some(match layer.activation {
            Activation::Identity => z,
            Activation::Tanh => z.map(T::tanh),
        });
    }
    Ok(current.expect("at least one layer"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Gradients laid out like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.biases])
    }

    pub fn matches(&self, params: &ModelParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.len() == p.weights.len() && g.biases.len() == p.biases.len())
    }
}

/// Reverse pass. `injected[l]`, when present, is added to `∂/∂post[l]`.
fn backward<T: Real>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    d_logits: Matrix<T>,
    injected: &[(usize, &Matrix<T>)],
    want_input_grad: bool,
) -> (Gradients<T>, Option<Matrix<T>>) {
    let count = params.layers.len();
    let mut grads: Vec<Option<LayerGrads<T>>> = vec![None; count];
    let mut d_post = d_logits;
    let mut d_input = None;
    for l in (0..count).rev() {
        let layer = &params.layers[l];
        for &(idx, extra) in injected {
            if idx == l {
                for (d, &e) in d_post.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                    *d += e;
                }
            }
        }
        let mut d_pre = d_post;
        if layer.activation == Activation::Tanh {
            for (d, &y) in d_pre.as_mut_slice().iter_mut().zip(trace.post[l].as_slice()) {
                *d *= T::one() - y * y;
            }
        }
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let need_dx = l > 0 || want_input_grad;
        let (weights, biases, dx) = match layer.kind {
            LayerKind::Dense { inputs, outputs } => {
                let n = input.rows();
                let mut dw = vec![T::zero(); inputs * outputs];
                T::gemm(
                    inputs,
                    n,
                    outputs,
                    T::one(),
                    input.as_slice(),
                    true,
                    d_pre.as_slice(),
                    false,
                    T::zero(),
                    &mut dw,
                );
                let mut db = vec![T::zero(); outputs];
                for r in 0..n {
                    for (b, &v) in db.iter_mut().zip(d_pre.row(r)) {
                        *b += v;
                    }
                }
                let dx = need_dx.then(|| {
                    let mut dx = Matrix::zeros(n, inputs);
                    T::gemm(
                        n,
                        outputs,
                        inputs,
                        T::one(),
                        d_pre.as_slice(),
                        false,
                        &layer.weights,
                        true,
                        T::zero(),
                        dx.as_mut_slice(),
                    );
                    dx
                });
                (dw, db, dx)
            }
            LayerKind::Conv2d { input: shape, kernel, filters } => {
                conv_backward(input, &d_pre, &layer.weights, &ConvGeometry { input: shape, kernel, filters }, need_dx)
            }
        };
        grads[l] = Some(LayerGrads { weights, biases });
        match dx {
            Some(dx) if l > 0 => d_post = dx,
            Some(dx) => {
                d_input = Some(dx);
                break;
            }
            None => break,
        }
    }
    let layers = grads.into_iter().map(|g| g.expect("every layer visited")).collect();
    (Gradients { layers }, d_input)
}

/// Result of [`loss_and_grads`].
#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrads<T> {
    /// Cross-entropy plus every applied spectral penalty.
    pub total_loss: T,
    pub cross_entropy: T,
    pub spectral_loss: T,
    pub grads: Gradients<T>,
    /// α of the first regularized layer, when the penalty was evaluated.
    pub measured_alpha: Option<T>,
    /// The spectral fit failed on this batch and was skipped.
    pub spectral_failed: bool,
}

/// Mean cross-entropy plus `β·|α − α_target|` on each regularized layer, and
/// parameter gradients with the spectral gradient injected at those layers.
///
/// A failed spectral fit drops the penalty for the whole batch with a warning.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    cfg: &TrainConfig<T>,
) -> Result<LossAndGrads<T>, NnError> {
    let (logits, trace) = forward(params, batch)?;
    check_labels(params, batch, labels)?;
    let ce = softmax_cross_entropy(&logits, labels);

    let mut evaluations: Vec<(usize, SpectralEvaluation<T>)> = Vec::new();
    let mut spectral_failed = false;
    if cfg.spectral.beta > T::zero() {
        for layer in cfg.regularized_layers.resolve(params.layers.len())? {
            match spectral_loss_and_grad(trace.activations(layer), &cfg.spectral) {
                Ok(eval) => evaluations.push((layer, eval)),
                Err(err) => {
                    log::warn!("spectral penalty skipped for this batch (layer {layer}): {err}");
                    spectral_failed = true;
                    evaluations.clear();
                    break;
                }
            }
        }
    }
    let spectral_loss = evaluations.iter().map(|(_, e)| e.loss).sum::<T>();
    let measured_alpha = evaluations.first().map(|(_, e)| e.fit.alpha);
    let injected: Vec<(usize, &Matrix<T>)> = evaluations.iter().map(|(l, e)| (*l, &e.grad)).collect();
    let (grads, _) = backward(params, &trace, ce.grad, &injected, false);
    Ok(LossAndGrads {
        total_loss: ce.mean + spectral_loss,
        cross_entropy: ce.mean,
        spectral_loss,
        grads,
        measured_alpha,
        spectral_failed,
    })
}

/// `∂L_j/∂x_j` for every image `j`, where `L_j` is that image's own
/// cross-entropy. The spectral penalty is not included.
pub fn input_gradient<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
) -> Result<Matrix<T>, NnError> {
    Ok(input_gradient_with_losses(params, batch, labels)?.1)
}

/// Per-image cross-entropy and its input gradient.
pub fn input_gradient_with_losses<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
) -> Result<(Vec<T>, Matrix<T>), NnError> {
    let (logits, trace) = forward(params, batch)?;
    check_labels(params, batch, labels)?;
    let ce = softmax_cross_entropy(&logits, labels);
    // undo the 1/N of the batch mean so each row is the gradient of its own loss
    let d_logits = ce.grad.scaled(T::from_usize(batch.rows()).unwrap());
    let (_, dx) = backward(params, &trace, d_logits, &[], true);
    Ok((ce.per_sample, dx.expect("input gradient requested")))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate<T: Real>(params: &ModelParams<T>, dataset: &Dataset<T>) -> Result<f64, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (images, labels) = dataset.batch(chunk);
        let logits = predict(params, &images)?;
        correct += labels.iter().enumerate().filter(|&(r, &y)| argmax(logits.row(r)) == y).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}
