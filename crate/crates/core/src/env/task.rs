//! Reaching tasks: which color to reach, among two distractors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// RGB in `[0, 1]³`.
pub type Color = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    MetaTrain,
    MetaTest,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::MetaTrain => "meta-train",
            Split::MetaTest => "meta-test",
        })
    }
}

/// Cells per axis of the color-space checkerboard.
const CELLS: usize = 3;
/// Colors stay this far inside their cell, so colors from cells of opposite
/// parity are at least `2 · CELL_MARGIN` apart.
pub const CELL_MARGIN: f64 = 0.05;
/// Minimum RGB distance between objects of one task.
pub const MIN_OBJECT_COLOR_DISTANCE: f64 = 0.3;

/// Minimum RGB distance between any meta-train and any meta-test color.
pub const SPLIT_COLOR_GAP: f64 = 2.0 * CELL_MARGIN;

fn cell_of(c: f64) -> usize {
    ((c * CELLS as f64) as usize).min(CELLS - 1)
}

/// Which split's region of color space `color` belongs to, if any.
///
/// The RGB cube is cut into a 3×3×3 checkerboard; even cells belong to
/// meta-train and odd cells to meta-test. Colors within `CELL_MARGIN` of a
/// cell face belong to neither.
pub fn color_region(color: &Color) -> Option<Split> {
    let width = 1.0 / CELLS as f64;
    let mut parity = 0;
    for &c in color {
        let cell = cell_of(c);
        let lo = cell as f64 * width;
        if c < lo + CELL_MARGIN || c > lo + width - CELL_MARGIN {
            return None;
        }
        parity += cell;
    }
    Some(if parity % 2 == 0 { Split::MetaTrain } else { Split::MetaTest })
}

/// Uniform sample from a split's color region.
pub fn sample_color(split: Split, rng: &mut impl Rng) -> Color {
    let want = match split {
        Split::MetaTrain => 0,
        Split::MetaTest => 1,
    };
    let width = 1.0 / CELLS as f64;
    loop {
        let cell: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..CELLS));
        if cell.iter().sum::<usize>() % 2 != want {
            continue;
        }
        return std::array::from_fn(|i| {
            let lo = cell[i] as f64 * width + CELL_MARGIN;
            rng.random_range(lo..lo + width - 2.0 * CELL_MARGIN)
        });
    }
}

pub fn color_distance(a: &Color, b: &Color) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One reaching task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub seed: u64,
    pub split: Split,
    pub target_color: Color,
    pub distractor_colors: [Color; 2],
    /// Reference layout: target first, then the distractors. Episodes
    /// re-sample positions.
    pub positions: [[f64; 2]; 3],
}

impl Task {
    /// Object colors, target first.
    pub fn colors(&self) -> [Color; 3] {
        [self.target_color, self.distractor_colors[0], self.distractor_colors[1]]
    }
}

/// Where objects may be placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layout {
    pub arena_size: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub min_separation: f64,
    /// Keeps objects away from where the end-effector starts.
    pub min_start_distance: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Layout { arena_size: 0.6, min_radius: 0.06, max_radius: 0.19, min_separation: 0.1, min_start_distance: 0.08 }
    }
}

impl Layout {
    /// Three well-separated positions inside the arena, in an annulus around
    /// the arm's base so that each is reachable.
    pub fn sample_positions(&self, base: [f64; 2], start_ee: [f64; 2], rng: &mut impl Rng) -> [[f64; 2]; 3] {
        let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        loop {
            let mut out = [[0.0; 2]; 3];
            let mut ok = true;
            for i in 0..3 {
                // area-uniform over the annulus
                let r2 = rng.random_range(self.min_radius.powi(2)..self.max_radius.powi(2));
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let p = [base[0] + r2.sqrt() * theta.cos(), base[1] + r2.sqrt() * theta.sin()];
                let inside = p.iter().all(|&v| (0.0..=self.arena_size).contains(&v));
                if !inside
                    || dist(p, start_ee) < self.min_start_distance
                    || out[..i].iter().any(|&q| dist(p, q) < self.min_separation)
                {
                    ok = false;
                    break;
                }
                out[i] = p;
            }
            if ok {
                return out;
            }
        }
    }
}

/// Deterministic task from a seed. Target and distractor colors all come
/// from the split's color region and are pairwise at least
/// [`MIN_OBJECT_COLOR_DISTANCE`] apart.
pub fn sample_task(seed: u64, split: Split, layout: &Layout, base: [f64; 2], start_ee: [f64; 2]) -> Task {
    let stream = match split {
        Split::MetaTrain => 0,
        Split::MetaTest => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let colors = loop {
        let c: [Color; 3] = std::array::from_fn(|_| sample_color(split, &mut rng));
        let separated = (0..3).all(|i| (i + 1..3).all(|j| color_distance(&c[i], &c[j]) >= MIN_OBJECT_COLOR_DISTANCE));
        if separated {
            break c;
        }
    };
    let positions = layout.sample_positions(base, start_ee, &mut rng);
    Task { seed, split, target_color: colors[0], distractor_colors: [colors[1], colors[2]], positions }
}
