use rand::Rng;

use super::model::ModelConfig;
use crate::error::{Error, Result};
use crate::geometry::{patchify, unpatchify, VoxelGrid, GRID_RESOLUTION, LATTICE_SIDE, POOL_FACTOR};
use crate::tensor::Tensor;

/// Structured latent of a 64³ target in token layout `[L × p³C]`.
///
/// Channel 0 holds ±1 for occupied/empty 16³ cells (any-pooled); further
/// channels are zero.
pub fn encode_target(grid: &VoxelGrid, config: &ModelConfig) -> Result<Tensor> {
    if grid.resolution() != GRID_RESOLUTION {
        return Err(Error::Contract(format!(
            "target must be {GRID_RESOLUTION}³, got {}³",
            grid.resolution()
        )));
    }
    let pooled = grid.any_pool(POOL_FACTOR)?;
    let c = config.latent_channels;
    let mut volume = vec![0.0; LATTICE_SIDE.pow(3) * c];
    for (i, &b) in pooled.bits().iter().enumerate() {
        volume[i * c] = if b { 1.0 } else { -1.0 };
    }
    let tokens = patchify(&volume, LATTICE_SIDE, c, config.patch)?;
    Tensor::new(config.latent_shape(), tokens)
}

/// Thresholds channel 0 of a latent and upsamples to 64³.
pub fn decode_latent(z: &Tensor, config: &ModelConfig, threshold: f64) -> Result<VoxelGrid> {
    let shape = config.latent_shape();
    if z.shape() != shape {
        return Err(Error::shape("decode", z.shape(), &shape));
    }
    let c = config.latent_channels;
    let volume = unpatchify(z.data(), LATTICE_SIDE, c, config.patch)?;
    let mut coarse = VoxelGrid::new(LATTICE_SIDE);
    for (i, chunk) in volume.chunks(c).enumerate() {
        if chunk[0] > threshold {
            let k = i % LATTICE_SIDE;
            let j = (i / LATTICE_SIDE) % LATTICE_SIDE;
            let a = i / (LATTICE_SIDE * LATTICE_SIDE);
            coarse.set(a, j, k, true);
        }
    }
    Ok(coarse.upsample(POOL_FACTOR))
}

/// One conditional flow matching training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub z0: Tensor,
    pub eps: Tensor,
    pub t: f64,
    pub z_t: Tensor,
    /// Regression target `ε − z₀`.
    pub velocity: Tensor,
}

/// Draws `t ~ U[0,1)` and `ε ~ N(0, I)` and forms the linear interpolant.
pub fn make_flow_sample(z0: &Tensor, rng: &mut impl Rng) -> FlowSample {
    let t: f64 = rng.gen();
    let eps = Tensor::randn(z0.shape().to_vec(), rng);
    flow_sample_at(z0, eps, t)
}

pub fn flow_sample_at(z0: &Tensor, eps: Tensor, t: f64) -> FlowSample {
    let z_t: Vec<f64> = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(a, e)| (1.0 - t) * a + t * e)
        .collect();
    let v: Vec<f64> = z0.data().iter().zip(eps.data()).map(|(a, e)| e - a).collect();
    let shape = z0.shape().to_vec();
    FlowSample {
        z0: z0.clone(),
        z_t: Tensor::new(shape.clone(), z_t).expect("same shape"),
        velocity: Tensor::new(shape, v).expect("same shape"),
        eps,
        t,
    }
}
