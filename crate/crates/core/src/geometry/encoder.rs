use rand::Rng;

use super::voxel::{VoxelGrid, GRID_RESOLUTION};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Pooling factor from the 64³ grid to the token lattice.
pub const POOL_FACTOR: usize = 4;
pub const LATTICE_SIDE: usize = GRID_RESOLUTION / POOL_FACTOR;
/// Sine/cosine frequencies per axis in the cell positional features.
pub const POS_FREQS: usize = 2;
pub const POS_FEATURES: usize = 3 * 2 * POS_FREQS;

/// Fraction of active voxels in each 4³ block, as a 16³ volume.
pub fn pooled_occupancy(grid: &VoxelGrid) -> Result<Vec<f64>> {
    if grid.resolution() != GRID_RESOLUTION {
        return Err(Error::Contract(format!(
            "structure encoder expects resolution {GRID_RESOLUTION}, got {}",
            grid.resolution()
        )));
    }
    grid.average_pool(POOL_FACTOR)
}

/// Fixed `[side³ × POS_FEATURES]` sinusoidal features of cell centres.
pub fn cell_positional_features(side: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(side.pow(3) * POS_FEATURES);
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                for c in [i, j, k] {
                    let x = (c as f64 + 0.5) / side as f64;
                    for f in 0..POS_FREQS {
                        let w = std::f64::consts::PI * (1 << f) as f64;
                        out.push((w * x).sin());
                        out.push((w * x).cos());
                    }
                }
            }
        }
    }
    out
}

/// Learned map from `[occupancy, positional features]` to latent channels.
#[derive(Clone, Debug)]
pub struct StructureEncoderParams {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
}

impl StructureEncoderParams {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(
            format!("{prefix}.w"),
            Tensor::xavier_uniform(1 + POS_FEATURES, channels, rng),
        );
        let b = store.add(format!("{prefix}.b"), Tensor::zeros([channels]));
        Self { w, b, channels }
    }
}

/// Encoded volume: per-cell features on the tape plus the occupancy used to
/// decide which patches are empty.
#[derive(Clone, Debug)]
pub struct FeatureVolume {
    pub side: usize,
    pub channels: usize,
    pub occupancy: Vec<f64>,
    /// `[side³ × channels]`.
    pub features: Var,
}

pub fn toy_structure_encoder(
    tape: &mut Tape,
    store: &ParamStore,
    params: &StructureEncoderParams,
    grid: &VoxelGrid,
) -> Result<FeatureVolume> {
    let occupancy = pooled_occupancy(grid)?;
    let side = LATTICE_SIDE;
    let pos = cell_positional_features(side);
    let cells = side.pow(3);
    let mut input = Vec::with_capacity(cells * (1 + POS_FEATURES));
    for c in 0..cells {
        input.push(occupancy[c]);
        input.extend_from_slice(&pos[c * POS_FEATURES..(c + 1) * POS_FEATURES]);
    }
    let x = tape.constant([cells, 1 + POS_FEATURES], input)?;
    let w = tape.param(store, params.w);
    let b = tape.param(store, params.b);
    let features = tape.linear(x, w, Some(b))?;
    Ok(FeatureVolume {
        side,
        channels: params.channels,
        occupancy,
        features,
    })
}

/// Patch origins in lexicographic order and, per patch, the flat cell
/// indices it covers in `(a, b, c)` order.
pub fn patch_layout(side: usize, patch: usize) -> Result<Vec<([usize; 3], Vec<usize>)>> {
    if patch == 0 || side % patch != 0 {
        return Err(Error::Contract(format!(
            "patch size {patch} does not divide volume side {side}"
        )));
    }
    let n = side / patch;
    let mut out = Vec::with_capacity(n.pow(3));
    for pi in 0..n {
        for pj in 0..n {
            for pk in 0..n {
                let origin = [pi * patch, pj * patch, pk * patch];
                let mut cells = Vec::with_capacity(patch.pow(3));
                for a in 0..patch {
                    for b in 0..patch {
                        for c in 0..patch {
                            cells.push(((origin[0] + a) * side + origin[1] + b) * side + origin[2] + c);
                        }
                    }
                }
                out.push((origin, cells));
            }
        }
    }
    Ok(out)
}

/// Rearranges a `[side³ × channels]` volume into `[patches × patch³·channels]` tokens.
pub fn patchify(values: &[f64], side: usize, channels: usize, patch: usize) -> Result<Vec<f64>> {
    if values.len() != side.pow(3) * channels {
        return Err(Error::Contract(format!(
            "volume has {} values, expected {}",
            values.len(),
            side.pow(3) * channels
        )));
    }
    let mut out = Vec::with_capacity(values.len());
    for (_, cells) in patch_layout(side, patch)? {
        for c in cells {
            out.extend_from_slice(&values[c * channels..(c + 1) * channels]);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &[f64], side: usize, channels: usize, patch: usize) -> Result<Vec<f64>> {
    if tokens.len() != side.pow(3) * channels {
        return Err(Error::Contract(format!(
            "token buffer has {} values, expected {}",
            tokens.len(),
            side.pow(3) * channels
        )));
    }
    let mut out = vec![0.0; tokens.len()];
    let mut src = 0;
    for (_, cells) in patch_layout(side, patch)? {
        for c in cells {
            out[c * channels..(c + 1) * channels].copy_from_slice(&tokens[src..src + channels]);
            src += channels;
        }
    }
    Ok(out)
}

/// Geometry tokens and the lattice origin of each one's patch.
#[derive(Clone, Debug)]
pub struct GeoTokens {
    /// `[G × D]`, absent when every patch is empty.
    pub c_geo: Option<Var>,
    pub origins: Vec<[usize; 3]>,
}

impl GeoTokens {
    pub fn empty() -> Self {
        Self {
            c_geo: None,
            origins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Non-empty patches of the encoded volume, flattened and projected by `w`
/// (`[patch³·channels × D]`) and optional bias.
pub fn patchify_and_project(
    tape: &mut Tape,
    volume: &FeatureVolume,
    patch: usize,
    w: Var,
    b: Option<Var>,
) -> Result<GeoTokens> {
    let layout = patch_layout(volume.side, patch)?;
    let mut rows = Vec::new();
    let mut origins = Vec::new();
    for (origin, cells) in layout {
        if cells.iter().any(|&c| volume.occupancy[c] != 0.0) {
            origins.push(origin);
            rows.extend(cells);
        }
    }
    if origins.is_empty() {
        return Ok(GeoTokens::empty());
    }
    let g = origins.len();
    let gathered = tape.gather_rows(volume.features, &rows)?;
    let flat = tape.reshape(gathered, [g, patch.pow(3) * volume.channels])?;
    let c_geo = tape.linear(flat, w, b)?;
    Ok(GeoTokens {
        c_geo: Some(c_geo),
        origins,
    })
}
