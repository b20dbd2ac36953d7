use rand::Rng;
use rand_distr::StandardNormal;

use super::raster::Render;
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::tensor::Tensor;

/// Patches per image side.
pub const VIEW_GRID: usize = 8;
/// Raw per-patch features: foreground fraction, altered fraction,
/// mean depth offset, patch centre u, patch centre v.
pub const VIEW_FEATURES: usize = 5;
pub const VIEW_TOKENS: usize = VIEW_GRID * VIEW_GRID;

/// Stand-in for a 2D-completed image: a ground-truth render with pixels
/// inside the occluder mask randomly corrupted.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletedView {
    pub foreground: Mask,
    pub depth: Vec<f64>,
    /// Pixels whose content differs from the ground-truth render.
    pub altered: Mask,
}

/// Composites the ground truth with corruption inside `m_o`: each pixel there
/// flips foreground/background with probability `level`. New foreground
/// pixels get depth `reference_depth + 0.25·N(0,1)`.
pub fn complete_view<R: Rng + ?Sized>(
    truth: &Render,
    m_o: &Mask,
    level: f64,
    reference_depth: f64,
    rng: &mut R,
) -> Result<CompletedView> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Contract(format!("corruption level {level} outside [0,1]")));
    }
    let (w, h) = (truth.width(), truth.height());
    if (m_o.width(), m_o.height()) != (w, h) {
        return Err(Error::Contract("occluder mask size differs from render".into()));
    }
    let mut foreground = truth.silhouette();
    let mut depth: Vec<f64> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| truth.depth(r, c))
        .collect();
    let mut altered = Mask::new(w, h);
    if level > 0.0 {
        for r in 0..h {
            for c in 0..w {
                if m_o.get(r, c) && rng.gen_bool(level) {
                    let fg = !foreground.get(r, c);
                    foreground.set(r, c, fg);
                    depth[r * w + c] = if fg {
                        let n: f64 = rng.sample(StandardNormal);
                        reference_depth + 0.25 * n
                    } else {
                        f64::INFINITY
                    };
                    altered.set(r, c, true);
                }
            }
        }
    }
    Ok(CompletedView {
        foreground,
        depth,
        altered,
    })
}

/// Deterministic `[VIEW_TOKENS × VIEW_FEATURES]` patch statistics, row-major
/// over the patch grid.
pub fn view_features(view: &CompletedView, reference_depth: f64) -> Result<Tensor> {
    let (w, h) = (view.foreground.width(), view.foreground.height());
    if w % VIEW_GRID != 0 || h % VIEW_GRID != 0 {
        return Err(Error::Contract(format!(
            "image {w}×{h} not divisible into {VIEW_GRID}×{VIEW_GRID} patches"
        )));
    }
    let (pw, ph) = (w / VIEW_GRID, h / VIEW_GRID);
    let npx = (pw * ph) as f64;
    let mut data = Vec::with_capacity(VIEW_TOKENS * VIEW_FEATURES);
    for gr in 0..VIEW_GRID {
        for gc in 0..VIEW_GRID {
            let (mut fg, mut alt, mut dsum) = (0usize, 0usize, 0.0);
            for r in gr * ph..(gr + 1) * ph {
                for c in gc * pw..(gc + 1) * pw {
                    if view.foreground.get(r, c) {
                        fg += 1;
                        dsum += view.depth[r * w + c] - reference_depth;
                    }
                    if view.altered.get(r, c) {
                        alt += 1;
                    }
                }
            }
            data.push(fg as f64 / npx);
            data.push(alt as f64 / npx);
            data.push(if fg > 0 { dsum / fg as f64 } else { 0.0 });
            data.push((gc as f64 + 0.5) / VIEW_GRID as f64);
            data.push((gr as f64 + 0.5) / VIEW_GRID as f64);
        }
    }
    Tensor::new([VIEW_TOKENS, VIEW_FEATURES], data)
}

/// Raw view features of a corrupted completion of `truth`.
pub fn toy_view_encoder<R: Rng + ?Sized>(
    truth: &Render,
    m_o: &Mask,
    level: f64,
    reference_depth: f64,
    rng: &mut R,
) -> Result<Tensor> {
    let view = complete_view(truth, m_o, level, reference_depth, rng)?;
    view_features(&view, reference_depth)
}
