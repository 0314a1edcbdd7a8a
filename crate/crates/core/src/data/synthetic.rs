//! Deterministic pavement-like scenes with pasted debris objects.
//!
//! The background is a smooth value-noise texture over a linear shading
//! gradient with a little per-pixel grain, optionally crossed by a worn
//! painted stripe or a faint crack. Debris objects are flat-coloured shapes
//! pasted with hard masks, so each ground-truth box is exactly the tight box
//! of its mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, PatchSpec};
use crate::error::{Error, Result};
use crate::imaging::{BoundingBox, ImagePatch, Raster, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Disc,
    Triangle,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Rectangle, Shape::Disc, Shape::Triangle, Shape::Cross];

    pub fn label(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Disc => "disc",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }

    /// Hard mask filling a `w×h` box and touching all four of its edges.
    pub fn mask(self, w: usize, h: usize) -> Vec<bool> {
        let mut m = vec![false; w * h];
        let (wf, hf) = (w as f32, h as f32);
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
                m[y * w + x] = match self {
                    Shape::Rectangle => true,
                    Shape::Disc => {
                        let nx = (cx - wf / 2.0) / (wf / 2.0);
                        let ny = (cy - hf / 2.0) / (hf / 2.0);
                        nx * nx + ny * ny <= 1.0
                    }
                    Shape::Triangle => {
                        // apex at the top centre, base on the bottom row
                        let half = (wf / 2.0) * (y as f32 + 1.0) / hf;
                        (cx - wf / 2.0).abs() <= half.max(0.5)
                    }
                    Shape::Cross => {
                        let bar_w = (w / 3).max(1);
                        let bar_h = (h / 3).max(1);
                        let in_v = x >= (w - bar_w) / 2 && x < (w - bar_w) / 2 + bar_w;
                        let in_h = y >= (h - bar_h) / 2 && y < (h - bar_h) / 2 + bar_h;
                        in_v || in_h
                    }
                };
            }
        }
        // odd-width triangles: make sure the apex row has a pixel
        if self == Shape::Triangle && !m[..w].iter().any(|&v| v) {
            m[w / 2] = true;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    /// Per-scene base gray level is drawn from this range.
    pub base_gray: (f32, f32),
    /// Per-channel colour cast amplitude.
    pub tint: f32,
    pub gradient_amplitude: f32,
    pub noise_amplitude: f32,
    /// Lattice spacing of the coarse noise octave, in pixels.
    pub noise_scale: usize,
    /// Per-pixel uniform grain amplitude.
    pub grain: f32,
    pub marking_probability: f64,
    pub crack_probability: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            base_gray: (0.35, 0.6),
            tint: 0.03,
            gradient_amplitude: 0.06,
            noise_amplitude: 0.06,
            noise_scale: 16,
            grain: 0.01,
            marking_probability: 0.25,
            crack_probability: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectParams {
    /// Inclusive object-count range for scenes that carry debris.
    pub count: (usize, usize),
    /// Inclusive side-length range in pixels.
    pub size: (usize, usize),
    pub shapes: Vec<Shape>,
    /// Per-channel colour range.
    pub color_range: (f32, f32),
    /// Minimum mean absolute channel difference from the base gray.
    pub min_contrast: f32,
}

impl Default for ObjectParams {
    fn default() -> Self {
        ObjectParams {
            count: (1, 1),
            size: (10, 28),
            shapes: Shape::ALL.to_vec(),
            color_range: (0.0, 1.0),
            min_contrast: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub seed: u64,
    pub patch: PatchSpec,
    #[serde(default)]
    pub texture: TextureParams,
    #[serde(default)]
    pub objects: ObjectParams,
    /// Probability that a scene carries no debris.
    #[serde(default)]
    pub fraction_clean: f64,
}

impl SyntheticSceneConfig {
    pub fn new(seed: u64, patch: PatchSpec) -> Self {
        SyntheticSceneConfig {
            seed,
            patch,
            texture: TextureParams::default(),
            objects: ObjectParams::default(),
            fraction_clean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.objects;
        let t = &self.texture;
        let side = self.patch.width.min(self.patch.height);
        let bad = |m: String| Err(Error::Config(m));
        if o.count.0 > o.count.1 || o.size.0 > o.size.1 || o.size.0 == 0 {
            return bad(format!("object ranges must be ordered, got count {:?} size {:?}", o.count, o.size));
        }
        if o.size.1 >= side && self.fraction_clean < 1.0 {
            return bad(format!("object size {} must be smaller than the {side}-pixel patch", o.size.1));
        }
        if o.shapes.is_empty() && o.count.1 > 0 {
            return bad("object shape set is empty".into());
        }
        if !(0.0..=1.0).contains(&self.fraction_clean)
            || !(0.0..=1.0).contains(&t.marking_probability)
            || !(0.0..=1.0).contains(&t.crack_probability)
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if t.base_gray.0 > t.base_gray.1 || o.color_range.0 > o.color_range.1 || t.noise_scale < 2 {
            return bad("texture ranges must be ordered and noise_scale >= 2".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SyntheticSceneConfig { seed, ..self.clone() }
    }

    /// Same texture, never any debris.
    pub fn clean(&self) -> Self {
        SyntheticSceneConfig {
            fraction_clean: 1.0,
            ..self.clone()
        }
    }
}

/// A pasted object in patch coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub patch: ImagePatch,
    pub ground_truth: Vec<GroundTruth>,
    pub objects: Vec<ObjectMask>,
}

/// Renders one scene; everything is a function of `config` (including its seed).
///
/// Panics if `config` fails [`SyntheticSceneConfig::validate`].
pub fn generate_synthetic_scene(config: &SyntheticSceneConfig) -> SyntheticScene {
    if let Err(e) = config.validate() {
        panic!("invalid synthetic scene config: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.patch.width, config.patch.height);
    let mut raster = render_texture(&config.texture, w, h, &mut rng);
    let base = mean_gray(&raster);

    let mut objects = Vec::new();
    let has_objects = config.objects.count.1 > 0 && !rng.random_bool(config.fraction_clean);
    if has_objects {
        let o = &config.objects;
        let count = rng.random_range(o.count.0..=o.count.1);
        let mut taken: Vec<BoundingBox> = Vec::new();
        for _ in 0..count {
            for _attempt in 0..32 {
                let ow = rng.random_range(o.size.0..=o.size.1);
                let oh = rng.random_range(o.size.0..=o.size.1);
                let x = rng.random_range(0..=w - ow);
                let y = rng.random_range(0..=h - oh);
                let shape = o.shapes[rng.random_range(0..o.shapes.len())];
                let color = object_color(o, base, &mut rng);
                let candidate = BoundingBox {
                    x_min: x as u32,
                    y_min: y as u32,
                    x_max: (x + ow) as u32,
                    y_max: (y + oh) as u32,
                };
                if taken.iter().any(|b| overlaps(b, &candidate)) {
                    continue;
                }
                let mask = shape.mask(ow, oh);
                for yy in 0..oh {
                    for xx in 0..ow {
                        if mask[yy * ow + xx] {
                            let g = config.texture.grain * (rng.random::<f32>() - 0.5);
                            raster.set_pixel(x + xx, y + yy, color.map(|c| c + g));
                        }
                    }
                }
                taken.push(candidate);
                objects.push(ObjectMask {
                    x,
                    y,
                    width: ow,
                    height: oh,
                    mask,
                    shape,
                });
                break;
            }
        }
    }

    let patch_id = format!("syn_{:016x}", config.seed);
    let ground_truth = objects
        .iter()
        .map(|o| GroundTruth {
            patch_id: patch_id.clone(),
            bbox: tight_box(o).expect("object masks are non-empty"),
            label: o.shape.label().to_string(),
        })
        .collect();
    SyntheticScene {
        patch: ImagePatch::new(raster),
        ground_truth,
        objects,
    }
}

/// `count` scenes whose seeds derive from `config.seed` and `stream`.
pub fn generate_scenes(config: &SyntheticSceneConfig, stream: u64, count: usize) -> Vec<SyntheticScene> {
    (0..count)
        .map(|i| generate_synthetic_scene(&config.with_seed(super::scene_seed(config.seed, stream, i as u64))))
        .collect()
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max && b.y_min < a.y_max
}

fn tight_box(o: &ObjectMask) -> Option<BoundingBox> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for y in 0..o.height {
        for x in 0..o.width {
            if o.mask[y * o.width + x] {
                b = Some(match b {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    b.map(|(x0, y0, x1, y1)| BoundingBox {
        x_min: (o.x + x0) as u32,
        y_min: (o.y + y0) as u32,
        x_max: (o.x + x1 + 1) as u32,
        y_max: (o.y + y1 + 1) as u32,
    })
}

fn mean_gray(r: &Raster) -> f32 {
    r.data().iter().sum::<f32>() / r.data().len() as f32
}

fn object_color(o: &ObjectParams, base: f32, rng: &mut ChaCha8Rng) -> [f32; 3] {
    let (lo, hi) = o.color_range;
    let mut best = [lo; 3];
    let mut best_contrast = -1.0;
    for _ in 0..64 {
        let c = [0; 3].map(|_| rng.random_range(lo..=hi));
        let contrast = c.iter().map(|v| (v - base).abs()).sum::<f32>() / 3.0;
        if contrast >= o.min_contrast {
            return c;
        }
        if contrast > best_contrast {
            best_contrast = contrast;
            best = c;
        }
    }
    best
}

/// Smoothly interpolated lattice noise in `[-1, 1]`.
struct ValueNoise {
    cols: usize,
    spacing: f32,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(w: usize, h: usize, spacing: usize, rng: &mut ChaCha8Rng) -> Self {
        let cols = w / spacing + 2;
        let rows = h / spacing + 2;
        ValueNoise {
            cols,
            spacing: spacing as f32,
            lattice: (0..cols * rows).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let (gx, gy) = (x / self.spacing, y / self.spacing);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(gx - ix as f32), smooth(gy - iy as f32));
        let v = |cx: usize, cy: usize| self.lattice[cy * self.cols + cx];
        let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
        let bot = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn render_texture(t: &TextureParams, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Raster {
    let base = rng.random_range(t.base_gray.0..=t.base_gray.1);
    let tint = [0; 3].map(|_| t.tint * rng.random_range(-1.0f32..=1.0));
    let angle = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let coarse = ValueNoise::new(w, h, t.noise_scale, rng);
    let fine = ValueNoise::new(w, h, (t.noise_scale / 2).max(2), rng);
    let diag = ((w * w + h * h) as f32).sqrt();

    let mut data = vec![0.0f32; w * h * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let ramp = ((px - w as f32 / 2.0) * gx + (py - h as f32 / 2.0) * gy) / diag;
            let n = coarse.at(px, py) + 0.5 * fine.at(px, py);
            let v = base + t.gradient_amplitude * ramp + t.noise_amplitude * n / 1.5;
            let g = t.grain * (rng.random::<f32>() - 0.5);
            for c in 0..CHANNELS {
                data[(y * w + x) * CHANNELS + c] = v + tint[c] + g;
            }
        }
    }

    if rng.random_bool(t.marking_probability) {
        paint_marking(&mut data, w, h, rng);
    }
    if rng.random_bool(t.crack_probability) {
        paint_crack(&mut data, w, h, rng);
    }
    Raster::from_unclamped(w, h, data)
}

/// Worn painted stripe with an anti-aliased edge.
fn paint_marking(data: &mut [f32], w: usize, h: usize, rng: &mut ChaCha8Rng) {
    let yellow = rng.random_bool(0.5);
    let paint = if yellow { [0.85, 0.75, 0.3] } else { [0.88, 0.88, 0.86] };
    let opacity = rng.random_range(0.4f32..=0.7);
    let width = rng.random_range(4.0f32..=8.0);
    let theta = if rng.random_bool(0.5) { 0.0 } else { std::f32::consts::FRAC_PI_2 }
        + rng.random_range(-0.15f32..=0.15);
    let (nx, ny) = (-theta.sin(), theta.cos());
    let (cx, cy) = (
        rng.random_range(0.2..=0.8) * w as f32,
        rng.random_range(0.2..=0.8) * h as f32,
    );
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f32 + 0.5 - cx) * nx + (y as f32 + 0.5 - cy) * ny).abs();
            let cover = (width / 2.0 + 1.0 - d).clamp(0.0, 2.0) / 2.0;
            if cover > 0.0 {
                let a = opacity * cover;
                for c in 0..CHANNELS {
                    let v = &mut data[(y * w + x) * CHANNELS + c];
                    *v = *v * (1.0 - a) + paint[c] * a;
                }
            }
        }
    }
}

/// Faint dark random-walk crack.
fn paint_crack(data: &mut [f32], w: usize, h: usize, rng: &mut ChaCha8Rng) {
    let depth = rng.random_range(0.03f32..=0.06);
    let steps = rng.random_range(w / 3..=w);
    let (mut x, mut y) = (rng.random_range(0.0..w as f32), rng.random_range(0.0..h as f32));
    let mut dir = rng.random_range(0.0..std::f32::consts::TAU);
    for _ in 0..steps {
        dir += rng.random_range(-0.4f32..=0.4);
        x += dir.cos();
        y += dir.sin();
        if x < 0.0 || y < 0.0 || x >= w as f32 || y >= h as f32 {
            break;
        }
        let i = (y as usize * w + x as usize) * CHANNELS;
        for v in &mut data[i..i + CHANNELS] {
            *v -= depth;
        }
    }
}
