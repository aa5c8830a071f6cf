//! Programmatically drawn glyphs for smoke tests and demos.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::dataset::SymbolSample;
use crate::image::GrayImage;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyGlyph {
    Circle,
    Cross,
}

impl ToyGlyph {
    pub fn name(self) -> &'static str {
        match self {
            ToyGlyph::Circle => "circle",
            ToyGlyph::Cross => "cross",
        }
    }
}

fn seg_dist(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (dx, dy) = (bx - ax, by - ay);
    let t = (((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    libm::sqrtf((px - qx) * (px - qx) + (py - qy) * (py - qy))
}

/// One anti-aliased glyph with jittered center, size and stroke width.
pub fn draw(kind: ToyGlyph, canvas: usize, rng: &mut rng::Rng) -> GrayImage {
    let c = canvas as f32;
    let cx = c / 2.0 + rng.random_range(-0.08..0.08) * c;
    let cy = c / 2.0 + rng.random_range(-0.08..0.08) * c;
    let r = rng.random_range(0.22..0.34) * c;
    let half = rng.random_range(0.035..0.06) * c;
    let tilt: f32 = rng.random_range(-0.3..0.3);
    GrayImage::from_fn(canvas, canvas, |x, y| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let d = match kind {
            ToyGlyph::Circle => (libm::sqrtf((px - cx) * (px - cx) + (py - cy) * (py - cy)) - r).abs(),
            ToyGlyph::Cross => {
                let (s, co) = (libm::sinf(tilt), libm::cosf(tilt));
                let (ux, uy) = (r * (co - s), r * (s + co));
                let (vx, vy) = (r * (co + s), r * (s - co));
                seg_dist(px, py, cx - ux, cy - uy, cx + ux, cy + uy).min(seg_dist(px, py, cx - vx, cy - vy, cx + vx, cy + vy))
            }
        };
        (half + 0.5 - d).clamp(0.0, 1.0)
    })
}

/// `per_class` samples of each glyph kind, interleaved.
pub fn dataset(per_class: usize, canvas: usize, seed: u64) -> Vec<SymbolSample> {
    let mut r = rng::rng(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for kind in [ToyGlyph::Circle, ToyGlyph::Cross] {
            out.push(SymbolSample::new(draw(kind, canvas, &mut r), kind.name(), "toy"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_have_ink_and_differ() {
        let d = dataset(3, 32, 1);
        assert_eq!(d.len(), 6);
        for s in &d {
            assert!(s.image.max() > 0.9 && s.image.get(0, 0) == 0.0);
        }
        assert_eq!(d, dataset(3, 32, 1));
        // circles leave the center empty, crosses ink it
        assert!(d[0].image.get(16, 16) < 0.5 && d[1].image.get(16, 16) > 0.5);
    }
}
