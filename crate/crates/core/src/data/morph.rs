use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

/// Binary erosion with a `kernel × kernel` square; pixels outside the image
/// count as background. Computed as a horizontal then a vertical pass.
pub fn erode(mask: &Mask, kernel: usize) -> Mask {
    assert!(kernel % 2 == 1, "kernel size must be odd");
    let r = kernel / 2;
    let (w, h) = (mask.width(), mask.height());
    // Run lengths make each pass linear in the image size.
    let mut horiz = Mask::new(w, h);
    for row in 0..h {
        let mut run = vec![0usize; w];
        let mut n = 0;
        for col in (0..w).rev() {
            n = if mask.get(row, col) { n + 1 } else { 0 };
            run[col] = n;
        }
        for col in r..w.saturating_sub(r) {
            if run[col - r] >= kernel {
                horiz.set(row, col, true);
            }
        }
    }
    let mut out = Mask::new(w, h);
    for col in 0..w {
        let mut run = vec![0usize; h];
        let mut n = 0;
        for row in (0..h).rev() {
            n = if horiz.get(row, col) { n + 1 } else { 0 };
            run[row] = n;
        }
        for row in r..h.saturating_sub(r) {
            if run[row - r] >= kernel {
                out.set(row, col, true);
            }
        }
    }
    out
}

pub fn erode_n(mask: &Mask, kernel: usize, iterations: usize) -> Mask {
    (0..iterations).fold(mask.clone(), |m, _| erode(&m, kernel))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionMaskConfig {
    pub kernel: usize,
    pub min_erosions: usize,
    pub max_erosions: usize,
    /// Random rectangles cut from the canvas before erosion.
    pub bites: usize,
}

impl Default for OcclusionMaskConfig {
    fn default() -> Self {
        Self {
            kernel: 13,
            min_erosions: 1,
            max_erosions: 3,
            bites: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesizedMask {
    pub m_o: Mask,
    pub erosions_drawn: usize,
    pub erosions_applied: usize,
}

/// Occluder mask: the filled bounding box of `m_3docc`, eroded a random
/// number of times, with every `m_3dvis` pixel cleared.
///
/// If erosion empties the canvas the iteration count is lowered until
/// something survives.
pub fn synth_occlusion_mask<R: Rng + ?Sized>(
    m_3docc: &Mask,
    m_3dvis: &Mask,
    cfg: &OcclusionMaskConfig,
    rng: &mut R,
) -> Result<SynthesizedMask> {
    let (r0, c0, r1, c1) = m_3docc
        .bounding_box()
        .ok_or_else(|| Error::Contract("occluded region is empty".into()))?;
    if cfg.min_erosions > cfg.max_erosions {
        return Err(Error::Contract("min_erosions exceeds max_erosions".into()));
    }
    let mut canvas = Mask::from_fn(m_3docc.width(), m_3docc.height(), |r, c| {
        (r0..=r1).contains(&r) && (c0..=c1).contains(&c)
    });
    for _ in 0..cfg.bites {
        let bh = rng.gen_range(1..=(r1 - r0 + 1).div_ceil(3));
        let bw = rng.gen_range(1..=(c1 - c0 + 1).div_ceil(3));
        let top = if rng.gen_bool(0.5) { r0 } else { r1 + 1 - bh };
        let left = rng.gen_range(c0..=c1 + 1 - bw);
        for r in top..top + bh {
            for c in left..left + bw {
                canvas.set(r, c, false);
            }
        }
    }
    let drawn = rng.gen_range(cfg.min_erosions..=cfg.max_erosions);
    let mut n = drawn;
    let eroded = loop {
        let e = erode_n(&canvas, cfg.kernel, n);
        if !e.is_empty() {
            break e;
        }
        if n == 0 {
            return Err(Error::ErosionAnnihilated);
        }
        n -= 1;
    };
    Ok(SynthesizedMask {
        m_o: eroded.and_not(m_3dvis),
        erosions_drawn: drawn,
        erosions_applied: n,
    })
}
