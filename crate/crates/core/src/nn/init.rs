use ndarray::Array2;
use rand::Rng;

use super::NnError;
use crate::rng::stream_rng;

/// Xavier/Glorot uniform initialisation of an `(fan_in, fan_out)` weight
/// matrix: entries uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: (usize, usize), seed: u64) -> Result<Array2<f64>, NnError> {
    let (fan_in, fan_out) = shape;
    if fan_in == 0 || fan_out == 0 {
        return Err(NnError::ZeroDimension(shape));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = stream_rng(seed, &[crate::rng::tag::INIT]);
    Ok(Array2::from_shape_simple_fn(shape, || {
        rng.random_range(-bound..=bound)
    }))
}
