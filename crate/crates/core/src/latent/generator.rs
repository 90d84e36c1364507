use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use super::LatentError;
use crate::rng::{stream_rng, tag};

/// A differentiable map from latent codes to observation vectors.
pub trait Generator: Send + Sync {
    fn latent_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// `G(z)`. Panics if `z` does not have `latent_dim` entries.
    fn forward(&self, z: ArrayView1<f64>) -> Array1<f64>;

    /// Gradient of `<cotangent, G(z)>` with respect to `z`.
    fn vjp(&self, z: ArrayView1<f64>, cotangent: ArrayView1<f64>) -> Array1<f64>;

    /// How the latent space is organized; used to plant group structure and
    /// group-independent score signal when sampling populations.
    fn layout(&self) -> LatentLayout;
}

/// Structural metadata of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentLayout {
    /// Orthonormal latent directions (rows) that may carry demographic
    /// attributes.
    pub attribute_basis: Array2<f64>,
    /// Observation-space readout vectors (rows) whose inner product with
    /// `G(z)` depends only on latent coordinates outside the attribute span.
    pub trait_readouts: Array2<f64>,
}

/// `G(z)` with dimension checks.
pub fn generate(gen: &dyn Generator, z: &[f64]) -> Result<Vec<f64>, LatentError> {
    check_dim(gen.latent_dim(), z.len())?;
    Ok(gen.forward(ArrayView1::from(z)).to_vec())
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), LatentError> {
    if expected != found {
        return Err(LatentError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Orthonormal columns from the thin QR of a Gaussian matrix.
fn orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let q = gaussian(rows, cols, rng).qr().q();
    Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
}

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn condition_number(m: &Array2<f64>) -> f64 {
    let sv = to_nalgebra(m).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Seeded two-layer stand-in for a pretrained face generator:
/// `x = W2 tanh(W1 z + b1)`.
///
/// The first layer is block structured. The first half of the hidden units
/// reads only the first `ATTRIBUTE_DIMS` latent coordinates (where
/// demographic attributes live), the second half reads only the rest (where
/// the scored traits live). `W2` is orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFaceGenerator {
    pub seed: u64,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
}

impl SyntheticFaceGenerator {
    pub const LATENT_DIM: usize = 16;
    pub const HIDDEN: usize = 64;
    pub const OUTPUT_DIM: usize = 64;
    pub const ATTRIBUTE_DIMS: usize = 8;
    pub const MAX_CONDITION: f64 = 100.0;
    const BLOCK_SCALE: f64 = 1.4;
    const BIAS_SD: f64 = 0.1;

    pub fn new(seed: u64) -> Result<Self, LatentError> {
        let mut rng = stream_rng(seed, &[tag::GENERATOR]);
        let (d, h, a) = (Self::LATENT_DIM, Self::HIDDEN, Self::ATTRIBUTE_DIMS);
        let half = h / 2;
        let mut w1 = Array2::zeros((h, d));
        let attr = orthonormal(half, a, &mut rng) * Self::BLOCK_SCALE;
        let traits = orthonormal(h - half, d - a, &mut rng) * Self::BLOCK_SCALE;
        w1.slice_mut(s![..half, ..a]).assign(&attr);
        w1.slice_mut(s![half.., a..]).assign(&traits);
        let b1 = Array1::from_shape_fn(h, |_| Self::BIAS_SD * rng.sample::<f64, _>(StandardNormal));
        let w2 = orthonormal(Self::OUTPUT_DIM, h, &mut rng);
        let gen = Self { seed, w1, b1, w2 };
        let kappa = condition_number(&gen.jacobian(ArrayView1::from(&vec![0.0; d])));
        if kappa > Self::MAX_CONDITION {
            return Err(LatentError::IllConditioned(kappa));
        }
        Ok(gen)
    }

    /// Jacobian `dG/dz` (`m x d`).
    pub fn jacobian(&self, z: ArrayView1<f64>) -> Array2<f64> {
        let act = (self.w1.dot(&z) + &self.b1).mapv(f64::tanh);
        let slope = act.mapv(|a| 1.0 - a * a);
        let scaled = &self.w1 * &slope.insert_axis(ndarray::Axis(1));
        self.w2.dot(&scaled)
    }

    pub fn jacobian_condition(&self, z: &[f64]) -> f64 {
        condition_number(&self.jacobian(ArrayView1::from(z)))
    }
}

impl Generator for SyntheticFaceGenerator {
    fn latent_dim(&self) -> usize {
        Self::LATENT_DIM
    }

    fn output_dim(&self) -> usize {
        Self::OUTPUT_DIM
    }

    fn forward(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let hidden = (self.w1.dot(&z) + &self.b1).mapv(f64::tanh);
        self.w2.dot(&hidden)
    }

    fn vjp(&self, z: ArrayView1<f64>, cotangent: ArrayView1<f64>) -> Array1<f64> {
        let act = (self.w1.dot(&z) + &self.b1).mapv(f64::tanh);
        let back = self.w2.t().dot(&cotangent) * act.mapv(|a| 1.0 - a * a);
        self.w1.t().dot(&back)
    }

    fn layout(&self) -> LatentLayout {
        let (d, a) = (Self::LATENT_DIM, Self::ATTRIBUTE_DIMS);
        let half = Self::HIDDEN / 2;
        // x = W2 h with W2 orthogonal, so (W2 e_k) . x = h_k.
        let readouts = self.w2.slice(s![.., half..]).t().to_owned();
        LatentLayout {
            attribute_basis: Array2::from_shape_fn((a, d), |(i, j)| f64::from(u8::from(i == j))),
            trait_readouts: readouts,
        }
    }
}

/// `x = W z` with `W` of shape `m x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    pub weights: Array2<f64>,
    /// Number of leading latent coordinates reserved for attributes.
    pub attribute_dims: usize,
}

impl LinearGenerator {
    pub fn new(weights: Array2<f64>, attribute_dims: usize) -> Self {
        Self {
            weights,
            attribute_dims,
        }
    }

    /// A seeded generator with orthonormal columns.
    pub fn orthonormal(
        output_dim: usize,
        latent_dim: usize,
        attribute_dims: usize,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, &[tag::GENERATOR]);
        Self::new(
            orthonormal(output_dim, latent_dim, &mut rng),
            attribute_dims,
        )
    }
}

impl Generator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, z: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&z)
    }

    fn vjp(&self, _z: ArrayView1<f64>, cotangent: ArrayView1<f64>) -> Array1<f64> {
        self.weights.t().dot(&cotangent)
    }

    fn layout(&self) -> LatentLayout {
        let (d, a) = (self.latent_dim(), self.attribute_dims);
        // Readouts are the dual basis of the trait columns: r_k . W z = z_k.
        let pinv = to_nalgebra(&self.weights)
            .pseudo_inverse(1e-12)
            .expect("pseudo-inverse of a finite matrix");
        LatentLayout {
            attribute_basis: Array2::from_shape_fn((a, d), |(i, j)| f64::from(u8::from(i == j))),
            trait_readouts: Array2::from_shape_fn((d - a, self.output_dim()), |(k, j)| {
                pinv[(a + k, j)]
            }),
        }
    }
}
