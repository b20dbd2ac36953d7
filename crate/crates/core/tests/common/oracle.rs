use amodal_core::image::Mask;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type P = [f64; 3];

pub fn d2(a: P, b: P) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

pub fn cloud(r: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<P> {
    // Mix of uniform noise and tight clusters so grids see both sparse and dense cells.
    let centers: Vec<P> = (0..3).map(|_| [0.0; 3].map(|_| r.gen_range(-0.4..0.4))).collect();
    (0..n)
        .map(|i| {
            if i % 3 == 0 {
                [0.0; 3].map(|_| r.gen_range(-0.5..0.5))
            } else {
                let c = centers[i % centers.len()];
                c.map(|v| (v + r.gen_range(-spread..spread)).clamp(-0.5, 0.5))
            }
        })
        .collect()
}

pub fn chamfer_oracle(a: &[P], b: &[P], squared: bool) -> f64 {
    let one = |x: &[P], y: &[P]| {
        x.iter()
            .map(|&p| {
                let m = y.iter().map(|&q| d2(p, q)).fold(f64::INFINITY, f64::min);
                if squared {
                    m
                } else {
                    m.sqrt()
                }
            })
            .sum::<f64>()
            / x.len() as f64
    };
    one(a, b) + one(b, a)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

/// Erosion by definition: a pixel survives when its whole window is set.
pub fn erode_oracle(m: &Mask, k: usize) -> Mask {
    let r = (k / 2) as isize;
    Mask::from_fn(m.width(), m.height(), |row, col| {
        (-r..=r).all(|dr| {
            (-r..=r).all(|dc| {
                let (y, x) = (row as isize + dr, col as isize + dc);
                y >= 0
                    && x >= 0
                    && (y as usize) < m.height()
                    && (x as usize) < m.width()
                    && m.get(y as usize, x as usize)
            })
        })
    })
}
