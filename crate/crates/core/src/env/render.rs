//! Top-down rasterizer: arm segments first, then object discs on top.

use super::task::Color;
use crate::autodiff::Tensor;

pub const OBJECT_RADIUS: f64 = 0.025;
pub const ARM_HALF_WIDTH: f64 = 0.006;
pub const BACKGROUND: Color = [0.0, 0.0, 0.0];
pub const ARM_COLOR: Color = [0.35, 0.35, 0.35];

/// Pixel grid over a square arena. Row 0 is the top (largest y).
#[derive(Clone, Copy, Debug)]
pub struct Viewport {
    pub height: usize,
    pub width: usize,
    pub arena_size: f64,
}

impl Viewport {
    /// Arena coordinates of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) / self.width as f64 * self.arena_size,
            (1.0 - (row as f64 + 0.5) / self.height as f64) * self.arena_size,
        ]
    }

    /// Pixel containing an arena point, if it is inside the image.
    pub fn project(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let col = (p[0] / self.arena_size * self.width as f64).floor();
        let row = ((1.0 - p[1] / self.arena_size) * self.height as f64).floor();
        let inside = (0.0..self.width as f64).contains(&col) && (0.0..self.height as f64).contains(&row);
        inside.then_some((row as usize, col as usize))
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Renders to an `[H, W, 3]` tensor with values in `[0, 1]`.
pub fn rasterize(view: &Viewport, joints: [[f64; 2]; 3], objects: &[([f64; 2], Color)]) -> Tensor {
    let mut img = Vec::with_capacity(view.height * view.width * 3);
    for row in 0..view.height {
        for col in 0..view.width {
            let p = view.pixel_center(row, col);
            let mut c = BACKGROUND;
            if segment_distance(p, joints[0], joints[1]) <= ARM_HALF_WIDTH
                || segment_distance(p, joints[1], joints[2]) <= ARM_HALF_WIDTH
            {
                c = ARM_COLOR;
            }
            for (pos, color) in objects {
                if (p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2) <= OBJECT_RADIUS * OBJECT_RADIUS {
                    c = *color;
                }
            }
            img.extend(c.iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Tensor::new(&[view.height, view.width, 3], img)
}
