//! Synthetic ground-truth world: an analytic heightfield of terrain, boxes,
//! and tree canopies with material-dependent, season-varying albedo.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::SceneBounds;

/// Ground footprint covered by cameras and evaluated rasters; the field's
/// domain extends to [-1,1]^2 so slanted rays stay inside it.
pub const FOOTPRINT: [[f64; 2]; 2] = [[-0.8, 0.8], [-0.8, 0.8]];

/// Day fractions with unambiguous season labels in the ground-truth albedo
/// cycle: snow cover, full green foliage, brown foliage.
pub const PROTOTYPE_SNOW: f64 = 0.02;
pub const PROTOTYPE_GREEN: f64 = 0.50;
pub const PROTOTYPE_BROWN: f64 = 0.80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    Town,
    Field,
    Blocks,
}

impl ScenePreset {
    pub fn parse(s: &str) -> Option<ScenePreset> {
        match s {
            "town" => Some(ScenePreset::Town),
            "field" => Some(ScenePreset::Field),
            "blocks" => Some(ScenePreset::Blocks),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenePreset::Town => "town",
            ScenePreset::Field => "field",
            ScenePreset::Blocks => "blocks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Roof(usize),
    Road,
    Tree,
    Grass,
}

#[derive(Debug, Clone)]
pub struct BoxSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub top: f64,
    pub roof_color: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub crown: f64,
}

#[derive(Debug, Clone)]
struct RoadSpec {
    along_x: bool,
    center: f64,
    half_width: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub bounds: SceneBounds,
    pub z_meters_per_unit: f64,
    pub preset: ScenePreset,
    pub seed: u64,
    terrain_amp: f64,
    terrain_phase: [f64; 2],
    boxes: Vec<BoxSpec>,
    trees: Vec<TreeSpec>,
    roads: Vec<RoadSpec>,
    max_height: f64,
}

const SEASON_SNOW: [f64; 3] = [0.82, 0.84, 0.88];
const ROAD_COLOR: [f64; 3] = [0.16, 0.16, 0.17];

// (day fraction, color) anchors; the cycle interpolates cosine-smoothly and
// wraps at the year boundary.
const GRASS_CYCLE: &[(f64, [f64; 3])] = &[
    (0.00, SEASON_SNOW),
    (0.16, [0.42, 0.36, 0.25]),
    (0.35, [0.26, 0.52, 0.18]),
    (0.55, [0.22, 0.48, 0.15]),
    (0.72, [0.45, 0.38, 0.20]),
    (0.88, [0.50, 0.42, 0.28]),
    (0.94, SEASON_SNOW),
    (1.00, SEASON_SNOW),
];

const TREE_CYCLE: &[(f64, [f64; 3])] = &[
    (0.00, [0.72, 0.74, 0.79]),
    (0.20, [0.30, 0.28, 0.20]),
    (0.42, [0.13, 0.33, 0.10]),
    (0.60, [0.10, 0.30, 0.09]),
    (0.80, [0.36, 0.26, 0.12]),
    (0.92, [0.70, 0.72, 0.78]),
    (1.00, [0.72, 0.74, 0.79]),
];

fn cycle_color(cycle: &[(f64, [f64; 3])], t: f64) -> [f64; 3] {
    let t = t.rem_euclid(1.0);
    let mut i = 0;
    while i + 1 < cycle.len() && cycle[i + 1].0 < t {
        i += 1;
    }
    let (t0, c0) = cycle[i];
    let (t1, c1) = cycle[(i + 1).min(cycle.len() - 1)];
    if t1 <= t0 {
        return c0;
    }
    let w = 0.5 * (1.0 - (std::f64::consts::PI * (t - t0) / (t1 - t0)).cos());
    [
        c0[0] + (c1[0] - c0[0]) * w,
        c0[1] + (c1[1] - c0[1]) * w,
        c0[2] + (c1[2] - c0[2]) * w,
    ]
}

/// Interval where a*s^2 + b*s + c < 0, or None when it never is.
fn solve_quad_below(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-18 {
        if b.abs() < 1e-18 {
            return (c < 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
        }
        let s = -c / b;
        return Some(if b > 0.0 {
            (f64::NEG_INFINITY, s)
        } else {
            (s, f64::INFINITY)
        });
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        // no real roots: the parabola never crosses zero
        return (a < 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let sq = disc.sqrt();
    let r0 = (-b - sq) / (2.0 * a);
    let r1 = (-b + sq) / (2.0 * a);
    if a > 0.0 {
        Some((r0.min(r1), r0.max(r1)))
    } else {
        // negative outside the roots; report the forward-most branch
        Some((r0.max(r1), f64::INFINITY))
    }
}

fn hash2(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((ix as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((iy as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    h ^= h >> 31;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 27;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl SyntheticScene {
    pub fn generate(preset: ScenePreset, seed: u64, rng: &mut ChaCha8Rng) -> SyntheticScene {
        let roof_palette: [[f64; 3]; 5] = [
            [0.45, 0.42, 0.40],
            [0.55, 0.30, 0.25],
            [0.35, 0.38, 0.45],
            [0.60, 0.58, 0.55],
            [0.30, 0.32, 0.30],
        ];
        let mut boxes = Vec::new();
        let mut trees = Vec::new();
        let mut roads = Vec::new();
        let terrain_amp;
        match preset {
            ScenePreset::Town => {
                terrain_amp = 0.025;
                roads.push(RoadSpec {
                    along_x: true,
                    center: 0.05,
                    half_width: 0.05,
                });
                roads.push(RoadSpec {
                    along_x: false,
                    center: -0.3,
                    half_width: 0.05,
                });
                for i in 0..10 {
                    let w = rng.gen_range(0.10..0.22);
                    let h = rng.gen_range(0.10..0.22);
                    let cx = rng.gen_range(-0.62..0.62);
                    let cy = rng.gen_range(-0.62..0.62);
                    let top = rng.gen_range(0.10..0.30);
                    boxes.push(BoxSpec {
                        x0: cx - w / 2.0,
                        x1: cx + w / 2.0,
                        y0: cy - h / 2.0,
                        y1: cy + h / 2.0,
                        top,
                        roof_color: roof_palette[i % roof_palette.len()],
                    });
                }
                for _ in 0..8 {
                    trees.push(TreeSpec {
                        x: rng.gen_range(-0.7..0.7),
                        y: rng.gen_range(-0.7..0.7),
                        radius: rng.gen_range(0.05..0.11),
                        crown: rng.gen_range(0.05..0.11),
                    });
                }
            }
            ScenePreset::Field => {
                terrain_amp = 0.045;
                boxes.push(BoxSpec {
                    x0: -0.15,
                    x1: 0.12,
                    y0: -0.4,
                    y1: -0.2,
                    top: 0.14,
                    roof_color: roof_palette[1],
                });
                boxes.push(BoxSpec {
                    x0: 0.3,
                    x1: 0.5,
                    y0: 0.25,
                    y1: 0.5,
                    top: 0.1,
                    roof_color: roof_palette[0],
                });
                for _ in 0..14 {
                    trees.push(TreeSpec {
                        x: rng.gen_range(-0.75..0.75),
                        y: rng.gen_range(-0.75..0.75),
                        radius: rng.gen_range(0.05..0.13),
                        crown: rng.gen_range(0.05..0.12),
                    });
                }
            }
            ScenePreset::Blocks => {
                terrain_amp = 0.01;
                for gx in 0..3 {
                    for gy in 0..3 {
                        let cx = -0.55 + 0.55 * gx as f64;
                        let cy = -0.55 + 0.55 * gy as f64;
                        let top = 0.08 + 0.07 * ((gx * 3 + gy) % 4) as f64;
                        boxes.push(BoxSpec {
                            x0: cx - 0.12,
                            x1: cx + 0.12,
                            y0: cy - 0.12,
                            y1: cy + 0.12,
                            top,
                            roof_color: roof_palette[(gx * 3 + gy) % roof_palette.len()],
                        });
                    }
                }
                roads.push(RoadSpec {
                    along_x: true,
                    center: -0.275,
                    half_width: 0.04,
                });
                roads.push(RoadSpec {
                    along_x: true,
                    center: 0.275,
                    half_width: 0.04,
                });
            }
        }
        let terrain_phase = [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)];
        let mut scene = SyntheticScene {
            bounds: SceneBounds::standard(-0.12, 0.55),
            z_meters_per_unit: 100.0,
            preset,
            seed,
            terrain_amp,
            terrain_phase,
            boxes,
            trees,
            roads,
            max_height: 0.0,
        };
        let mut max_h = f64::MIN;
        for i in 0..128 {
            for j in 0..128 {
                let x = -1.0 + 2.0 * (i as f64 + 0.5) / 128.0;
                let y = -1.0 + 2.0 * (j as f64 + 0.5) / 128.0;
                max_h = max_h.max(scene.height(x, y));
            }
        }
        scene.max_height = max_h + 1e-3;
        scene
    }

    /// Bare test world: flat terrain, no boxes, trees, or roads.
    pub fn flat() -> SyntheticScene {
        SyntheticScene {
            bounds: SceneBounds::standard(-0.12, 0.55),
            z_meters_per_unit: 100.0,
            preset: ScenePreset::Field,
            seed: 0,
            terrain_amp: 0.0,
            terrain_phase: [0.0, 0.0],
            boxes: Vec::new(),
            trees: Vec::new(),
            roads: Vec::new(),
            max_height: 1e-3,
        }
    }

    /// Flat world with one box, for analytic shadow checks.
    pub fn single_box(top: f64) -> SyntheticScene {
        let mut s = SyntheticScene::flat();
        s.boxes.push(BoxSpec {
            x0: -0.3,
            x1: 0.0,
            y0: -0.2,
            y1: 0.2,
            top,
            roof_color: [0.5, 0.45, 0.4],
        });
        s.max_height = top + 1e-3;
        s
    }

    fn terrain(&self, x: f64, y: f64) -> f64 {
        self.terrain_amp
            * ((2.3 * x + self.terrain_phase[0]).cos() * (1.7 * y + self.terrain_phase[1]).cos()
                + 0.5 * (4.1 * x - 1.3 * y).sin())
    }

    /// Ground-truth altitude; coordinates clamp to [-1,1] so the terrain
    /// extends under every slanted ray.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        let y = y.clamp(-1.0, 1.0);
        let mut h = self.terrain(x, y);
        for b in &self.boxes {
            if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 {
                h = h.max(b.top);
            }
        }
        for t in &self.trees {
            let d2 = ((x - t.x) * (x - t.x) + (y - t.y) * (y - t.y)) / (t.radius * t.radius);
            if d2 < 1.0 {
                h = h.max(self.terrain(t.x, t.y) + t.crown * (1.0 - d2));
            }
        }
        h
    }

    pub fn max_height(&self) -> f64 {
        self.max_height
    }

    pub fn material(&self, x: f64, y: f64) -> Material {
        let x = x.clamp(-1.0, 1.0);
        let y = y.clamp(-1.0, 1.0);
        for (i, b) in self.boxes.iter().enumerate() {
            if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 {
                return Material::Roof(i);
            }
        }
        for t in &self.trees {
            let d2 = (x - t.x) * (x - t.x) + (y - t.y) * (y - t.y);
            if d2 < t.radius * t.radius {
                return Material::Tree;
            }
        }
        for r in &self.roads {
            let c = if r.along_x { y } else { x };
            if (c - r.center).abs() <= r.half_width {
                return Material::Road;
            }
        }
        Material::Grass
    }

    /// Season-dependent surface color before illumination, in [0.02, 0.98].
    pub fn albedo(&self, x: f64, y: f64, t_p: f64) -> [f64; 3] {
        let base = match self.material(x, y) {
            Material::Roof(i) => self.boxes[i].roof_color,
            Material::Road => ROAD_COLOR,
            Material::Tree => cycle_color(TREE_CYCLE, t_p),
            Material::Grass => cycle_color(GRASS_CYCLE, t_p),
        };
        let cell = 48.0;
        let n = hash2(
            self.seed,
            (x * cell).floor() as i64,
            (y * cell).floor() as i64,
        );
        let tex = 0.88 + 0.24 * n;
        [
            (base[0] * tex).clamp(0.02, 0.98),
            (base[1] * tex).clamp(0.02, 0.98),
            (base[2] * tex).clamp(0.02, 0.98),
        ]
    }

    /// Closed-form occlusion test toward the sun. Boxes intersect as slabs,
    /// tree crowns as quadratics; the terrain's slopes are too gentle to
    /// occlude above ~20 degrees elevation, below which a fine march covers
    /// it.
    pub fn occluded_toward(&self, p: [f64; 3], dir: [f64; 3]) -> bool {
        debug_assert!(dir[2] > 0.0);
        let eps = 1e-9;
        for b in &self.boxes {
            let mut t0: f64 = eps;
            let mut t1 = f64::INFINITY;
            let mut miss = false;
            for (axis, range) in [(0usize, [b.x0, b.x1]), (1, [b.y0, b.y1])] {
                if dir[axis].abs() < 1e-15 {
                    if p[axis] < range[0] || p[axis] > range[1] {
                        miss = true;
                        break;
                    }
                    continue;
                }
                let inv = 1.0 / dir[axis];
                let (mut lo, mut hi) = ((range[0] - p[axis]) * inv, (range[1] - p[axis]) * inv);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
            if miss || t1 <= t0 {
                continue;
            }
            // the ray climbs, so the earliest in-footprint point is lowest
            if p[2] + t0 * dir[2] < b.top - eps {
                return true;
            }
        }
        for t in &self.trees {
            // crown surface: base + crown * (1 - d^2 / r^2), valid for d < r
            let base = self.terrain(t.x, t.y);
            let ex = p[0] - t.x;
            let ey = p[1] - t.y;
            let a_xy = dir[0] * dir[0] + dir[1] * dir[1];
            let b_xy = 2.0 * (ex * dir[0] + ey * dir[1]);
            let c_xy = ex * ex + ey * ey;
            let r2 = t.radius * t.radius;
            // inside-footprint interval: a_xy s^2 + b_xy s + c_xy < r^2
            let Some((f0, f1)) = solve_quad_below(a_xy, b_xy, c_xy - r2) else {
                continue;
            };
            // below-crown interval: q(s) < 0
            let k = t.crown / r2;
            let qa = k * a_xy;
            let qb = k * b_xy + dir[2];
            let qc = k * c_xy + p[2] - base - t.crown;
            let Some((q0, q1)) = solve_quad_below(qa, qb, qc) else {
                continue;
            };
            let lo = f0.max(q0).max(eps);
            let hi = f1.min(q1);
            if hi > lo + eps {
                return true;
            }
        }
        // terrain slopes stay below tan(20 deg); only low sun needs the march
        if dir[2] / (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(1e-12) < 0.364 {
            let mut s = 1e-4;
            while s < 6.0 {
                let x = p[0] + s * dir[0];
                let y = p[1] + s * dir[1];
                let z = p[2] + s * dir[2];
                if z > self.max_height {
                    break;
                }
                if z < self.terrain(x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)) - eps {
                    return true;
                }
                s += 1e-4;
            }
        }
        false
    }

    /// Ground-truth ambient factor applied in shadow, below 0.5 everywhere.
    pub fn sky(&self, sun_elevation_deg: f64) -> [f64; 3] {
        let s = 0.22 + 0.0025 * sun_elevation_deg.clamp(0.0, 90.0);
        [
            (0.90 * s).min(0.45),
            (0.97 * s).min(0.45),
            (1.10 * s).min(0.45),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = SyntheticScene::generate(ScenePreset::Town, 9, &mut r1);
        let b = SyntheticScene::generate(ScenePreset::Town, 9, &mut r2);
        for (x, y) in [(0.1, 0.2), (-0.5, 0.6), (0.7, -0.7)] {
            assert_eq!(a.height(x, y), b.height(x, y));
            assert_eq!(a.albedo(x, y, 0.3), b.albedo(x, y, 0.3));
        }
    }

    #[test]
    fn heights_stay_inside_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SyntheticScene::generate(ScenePreset::Town, 3, &mut rng);
        for i in 0..64 {
            for j in 0..64 {
                let x = -1.0 + 2.0 * i as f64 / 63.0;
                let y = -1.0 + 2.0 * j as f64 / 63.0;
                let h = s.height(x, y);
                assert!(h > s.bounds.z[0] && h < s.bounds.z[1]);
            }
        }
    }

    #[test]
    fn albedo_range_and_roof_constancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = SyntheticScene::generate(ScenePreset::Blocks, 4, &mut rng);
        // roof point stays constant across the year; grass changes
        let (rx, ry) = (-0.55, -0.55);
        assert!(matches!(s.material(rx, ry), Material::Roof(_)));
        let roof_a = s.albedo(rx, ry, 0.05);
        let roof_b = s.albedo(rx, ry, 0.55);
        assert_eq!(roof_a, roof_b);
        let (gx, gy) = (0.3, 0.0);
        assert!(matches!(s.material(gx, gy), Material::Grass));
        let grass_a = s.albedo(gx, gy, 0.05);
        let grass_b = s.albedo(gx, gy, 0.55);
        assert_ne!(grass_a, grass_b);
        for t in 0..20 {
            let c = s.albedo(0.3, 0.7, t as f64 / 20.0);
            for v in c {
                assert!((0.02..=0.98).contains(&v));
            }
        }
    }

    #[test]
    fn snow_prototype_is_bright_and_green_prototype_is_green() {
        let snow = cycle_color(GRASS_CYCLE, PROTOTYPE_SNOW);
        assert!(snow[0] > 0.7 && snow[2] > 0.7);
        let green = cycle_color(GRASS_CYCLE, PROTOTYPE_GREEN);
        assert!(green[1] > green[0] && green[1] > green[2]);
        let brown = cycle_color(GRASS_CYCLE, PROTOTYPE_BROWN);
        assert!(brown[0] > brown[2]);
    }

    #[test]
    fn sky_stays_below_half() {
        let s = SyntheticScene::flat();
        for e in [10.0, 30.0, 50.0, 70.0, 90.0] {
            for v in s.sky(e) {
                assert!(v > 0.0 && v < 0.5);
            }
        }
    }
}
