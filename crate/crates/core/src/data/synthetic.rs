use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, Dataset, ImageShape, Split};
use crate::linalg::Matrix;
use crate::Real;

/// Isotropic unit-variance Gaussian blobs, one per class, affinely rescaled into `[0, 1]`.
///
/// Class means sit `separation` apart pairwise: on scaled coordinate axes when
/// `classes <= dim`, otherwise on seeded random directions. Sample `i` belongs
/// to class `i % classes`.
pub fn synthetic_gaussian_classes<T: Real>(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if classes == 0 || per_class == 0 || dim == 0 {
        return Err(DataError::Invalid("classes, per_class and dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            if classes <= dim {
                (0..dim).map(|d| if d == k { radius } else { 0.0 }).collect()
            } else {
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.into_iter().map(|v| v / norm * radius).collect()
            }
        })
        .collect();

    let n = classes * per_class;
    let mut raw = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for mean in &means[class] {
            let z: f64 = rng.sample(StandardNormal);
            raw.push(mean + z);
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels =
        raw.into_iter().map(|v| T::lit(if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.5 })).collect();
    let images = Matrix::from_raw(n, dim, pixels);
    Dataset::new(images, labels, ImageShape::flat(dim), classes, Split::Train)
}
