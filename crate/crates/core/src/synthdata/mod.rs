//! Procedural 2D scene renderer and dataset builder.
//!
//! A scene is a flat gradient ground plus 1..5 flat shapes standing on it.
//! Each object casts a shadow: its silhouette stretched by the light
//! elongation factor along the light direction, translated by
//! `elongation * object_height` along that direction, optionally blurred at
//! the boundary, and darkening the ground multiplicatively. Rendering one
//! scene yields the image set {empty ground, per-object renders with and
//! without shadow, full ground truth}, from which object and shadow masks
//! are derived by pixel differencing, and per-foreground training tuples are
//! composed.
//!
//! All rasters are quantized to the 8-bit grid (multiples of 1/255) the
//! moment they are rendered, so masks, composites and files all agree
//! exactly.

mod io;

pub use io::{read_dataset, write_dataset, DatasetEntry, Manifest, GENERATOR_VERSION, SCHEMA_VERSION};

use crate::geometry::{bbox_from_mask, BBox, GeometryError, Mask};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("foreground shadow mask is empty")]
    EmptyShadow,
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("dataset schema version {found} does not match expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// RGB float raster, `(rows, cols, 3)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    pub fn new(data: Array3<f32>) -> Result<Self, DataError> {
        if data.dim().2 != 3 {
            return Err(DataError::CorruptDataset(
                "image must have 3 channels".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DataError::CorruptDataset(
                "image values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            data: Array3::zeros((h, w, 3)),
        }
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    /// `(rows, cols)`.
    pub fn resolution(&self) -> (usize, usize) {
        (self.data.dim().0, self.data.dim().1)
    }

    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        [
            self.data[(r, c, 0)],
            self.data[(r, c, 1)],
            self.data[(r, c, 2)],
        ]
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize8(&self) -> Image {
        Image {
            data: self.data.mapv(|v| quantize_channel(v)),
        }
    }

    /// 8-bit level of a channel value; only meaningful on quantized images.
    pub fn level(&self, r: usize, c: usize, ch: usize) -> u8 {
        (self.data[(r, c, ch)] * 255.0).round() as u8
    }
}

pub(crate) fn quantize_channel(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
    Capsule,
}

/// One flat object standing on the ground. The anchor is the ground-contact
/// point; the silhouette extends upward from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ShapeKind,
    /// Ground-contact point `(x, y)` in pixel coordinates.
    pub anchor: (f64, f64),
    pub width: f64,
    pub height: f64,
    pub color: [f32; 3],
    /// Rotation about the anchor, radians.
    pub orientation: f64,
}

impl ObjectSpec {
    /// Exact silhouette membership test at a pixel center.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (ax, ay) = self.anchor;
        // Rotate the query into the object frame.
        let (s, c) = self.orientation.sin_cos();
        let dx = x - ax;
        let dy = y - ay;
        let qx = ax + c * dx + s * dy;
        let qy = ay - s * dx + c * dy;
        let w2 = self.width / 2.0;
        match self.kind {
            ShapeKind::Rectangle => {
                (qx - ax).abs() <= w2 && qy <= ay && qy >= ay - self.height
            }
            ShapeKind::Ellipse => {
                let cy = ay - self.height / 2.0;
                let nx = (qx - ax) / w2;
                let ny = (qy - cy) / (self.height / 2.0);
                nx * nx + ny * ny <= 1.0
            }
            ShapeKind::Triangle => {
                if qy > ay || qy < ay - self.height {
                    return false;
                }
                let frac = (qy - (ay - self.height)) / self.height;
                (qx - ax).abs() <= w2 * frac
            }
            ShapeKind::Capsule => {
                let r = w2;
                let y0 = ay - r;
                let y1 = (ay - self.height + r).min(y0);
                let cy = qy.clamp(y1, y0);
                let dx = qx - ax;
                let dy = qy - cy;
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LightSpec {
    /// Direction angle of the cast shadow, radians; 0 points along +x.
    pub angle: f64,
    /// Elongation factor: shadow stretch and reach per unit object height.
    pub elongation: f64,
    /// Multiplicative ground attenuation inside the shadow, in `[0.3, 0.7]`.
    pub attenuation: f64,
    /// Gaussian blur sigma for the shadow boundary, pixels; 0 = hard.
    pub blur_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundSpec {
    pub top_color: [f32; 3],
    pub bottom_color: [f32; 3],
    pub noise_amplitude: f32,
    pub noise_seed: u64,
}

/// Style domain of a scene. The two domains share no shape kind and use
/// disjoint palettes, so no scene can belong to both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn shape_kinds(&self) -> &'static [ShapeKind] {
        match self {
            Domain::A => &[ShapeKind::Ellipse, ShapeKind::Capsule],
            Domain::B => &[ShapeKind::Rectangle, ShapeKind::Triangle],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "A" | "a" => Some(Domain::A),
            "B" | "b" => Some(Domain::B),
            _ => None,
        }
    }
}

/// Deterministic description of one scene; rendering it twice produces
/// bit-identical image sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub resolution: usize,
    pub domain: Domain,
    pub ground: GroundSpec,
    pub objects: Vec<ObjectSpec>,
    pub light: LightSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Minimum foreground shadow area in pixels.
    pub min_area: usize,
    /// Shadow pixels may not come closer than this to the frame border.
    pub frame_margin: usize,
    /// Maximum tolerated fraction of shadow pixels overlapping the object.
    pub max_object_overlap: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_area: 30,
            frame_margin: 2,
            max_object_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub domain: Domain,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Shadow direction arc, radians.
    pub angle_range: (f64, f64),
    pub elongation_range: (f64, f64),
    pub attenuation_range: (f64, f64),
    /// Blur sigma is drawn uniformly from this list.
    pub blur_choices: Vec<f64>,
    /// Object height range as a fraction of the resolution.
    pub height_frac_range: (f64, f64),
    pub width_frac_range: (f64, f64),
    pub orientation_range: (f64, f64),
    pub filter: FilterConfig,
}

impl GeneratorConfig {
    pub fn new(domain: Domain, resolution: usize) -> Self {
        Self {
            resolution,
            domain,
            min_objects: 1,
            max_objects: 5,
            angle_range: (-0.9, 0.9),
            elongation_range: (0.55, 1.1),
            attenuation_range: (0.3, 0.7),
            blur_choices: vec![0.0, 0.0, 1.0, 2.0],
            height_frac_range: (0.18, 0.38),
            width_frac_range: (0.14, 0.30),
            orientation_range: (-0.25, 0.25),
            filter: FilterConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.resolution < 32 {
            return Err(DataError::CorruptDataset("resolution too small".into()));
        }
        if self.min_objects < 1 || self.max_objects > 5 || self.min_objects > self.max_objects {
            return Err(DataError::CorruptDataset(
                "object count bounds must satisfy 1 <= min <= max <= 5".into(),
            ));
        }
        if self.attenuation_range.0 < 0.3 || self.attenuation_range.1 > 0.7 {
            return Err(DataError::CorruptDataset(
                "attenuation must stay within [0.3, 0.7]".into(),
            ));
        }
        Ok(())
    }
}

const GROUND_PALETTE_A: &[([f32; 3], [f32; 3])] = &[
    ([0.96, 0.82, 0.62], [0.82, 0.62, 0.50]),
    ([0.93, 0.74, 0.55], [0.78, 0.58, 0.48]),
    ([0.98, 0.88, 0.70], [0.85, 0.68, 0.52]),
];
const OBJECT_PALETTE_A: &[[f32; 3]] = &[
    [0.40, 0.16, 0.10],
    [0.36, 0.22, 0.08],
    [0.30, 0.10, 0.16],
    [0.42, 0.28, 0.12],
];
const GROUND_PALETTE_B: &[([f32; 3], [f32; 3])] = &[
    ([0.60, 0.78, 0.95], [0.48, 0.62, 0.82]),
    ([0.55, 0.82, 0.80], [0.48, 0.66, 0.68]),
    ([0.68, 0.72, 0.94], [0.52, 0.58, 0.80]),
];
const OBJECT_PALETTE_B: &[[f32; 3]] = &[
    [0.08, 0.16, 0.38],
    [0.10, 0.30, 0.28],
    [0.22, 0.12, 0.40],
    [0.06, 0.24, 0.42],
];

fn jitter_color(rng: &mut ChaCha8Rng, base: [f32; 3], amp: f32, lo: f32, hi: f32) -> [f32; 3] {
    let mut out = [0.0f32; 3];
    for (o, b) in out.iter_mut().zip(base.iter()) {
        *o = (b + rng.gen_range(-amp..amp)).clamp(lo, hi);
    }
    out
}

/// Deterministically samples a scene from a seed.
pub fn sample_scene(seed: u64, config: &GeneratorConfig) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = config.resolution as f64;
    let count = rng.gen_range(config.min_objects..=config.max_objects);

    let angle = rng.gen_range(config.angle_range.0..config.angle_range.1);
    let elongation = rng.gen_range(config.elongation_range.0..config.elongation_range.1);
    let attenuation = rng.gen_range(config.attenuation_range.0..config.attenuation_range.1);
    let blur_radius = config.blur_choices[rng.gen_range(0..config.blur_choices.len())];
    let light = LightSpec {
        angle,
        elongation,
        attenuation,
        blur_radius,
    };

    let (grounds, objects_palette) = match config.domain {
        Domain::A => (GROUND_PALETTE_A, OBJECT_PALETTE_A),
        Domain::B => (GROUND_PALETTE_B, OBJECT_PALETTE_B),
    };
    let (top, bottom) = grounds[rng.gen_range(0..grounds.len())];
    let ground = GroundSpec {
        top_color: jitter_color(&mut rng, top, 0.02, 0.47, 0.99),
        bottom_color: jitter_color(&mut rng, bottom, 0.02, 0.47, 0.99),
        noise_amplitude: 0.012,
        noise_seed: rng.gen(),
    };

    let kinds = config.domain.shape_kinds();
    let margin = config.filter.frame_margin as f64 + 1.0;
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let mut height = rng.gen_range(config.height_frac_range.0..config.height_frac_range.1) * res;
        let mut width = rng.gen_range(config.width_frac_range.0..config.width_frac_range.1) * res;
        let orientation = rng.gen_range(config.orientation_range.0..config.orientation_range.1);
        let color = objects_palette[rng.gen_range(0..objects_palette.len())];

        // Shrink until both the silhouette and its cast shadow have room.
        let anchor = loop {
            if kind == ShapeKind::Capsule {
                width = width.min(0.8 * height);
            }
            let reach_x = elongation * height * angle.cos();
            let reach_y = elongation * height * angle.sin();
            let pad = light.blur_radius * 3.0 + 2.0;
            let ext_x = width / 2.0 + height * config.orientation_range.1.sin().abs();
            let ext_up = height * elongation.max(1.0) * 1.1 + reach_y.abs() + pad;
            let lo_x = margin + ext_x + pad;
            let hi_x = res - 1.0 - margin - ext_x - reach_x.max(0.0) - pad;
            let lo_y = margin + ext_up;
            let hi_y = res - 1.0 - margin - reach_y.abs() - pad;
            if hi_x > lo_x && hi_y > lo_y {
                break (rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y));
            }
            height *= 0.85;
            width *= 0.85;
        };
        objects.push(ObjectSpec {
            kind,
            anchor,
            width,
            height,
            color,
            orientation,
        });
    }

    SceneSpec {
        seed,
        resolution: config.resolution,
        domain: config.domain,
        ground,
        objects,
        light,
    }
}

/// Shadow membership test for one object at a pixel center: the silhouette
/// stretched by `elongation` along the light direction about the anchor and
/// translated by `elongation * height` along the same direction.
pub fn shadow_contains(object: &ObjectSpec, light: &LightSpec, x: f64, y: f64) -> bool {
    let lambda = light.elongation;
    if lambda < 1e-6 {
        return false;
    }
    let (ax, ay) = object.anchor;
    let (uy, ux) = light.angle.sin_cos();
    let reach = lambda * object.height;
    // Undo the translation, then the stretch along (ux, uy).
    let dx = x - ax - reach * ux;
    let dy = y - ay - reach * uy;
    let along = dx * ux + dy * uy;
    let scaled = along * (1.0 / lambda - 1.0);
    let px = ax + dx + scaled * ux;
    let py = ay + dy + scaled * uy;
    object.contains(px, py)
}

fn pixel_hash(seed: u64, r: usize, c: usize) -> f32 {
    // splitmix64-style scramble; uniform in [0, 1).
    let mut z = seed
        .wrapping_add((r as u64) << 32)
        .wrapping_add(c as u64)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

fn ground_raster(scene: &SceneSpec) -> Array3<f32> {
    let n = scene.resolution;
    let g = &scene.ground;
    Array3::from_shape_fn((n, n, 3), |(r, c, ch)| {
        let t = r as f32 / (n - 1) as f32;
        let base = g.top_color[ch] * (1.0 - t) + g.bottom_color[ch] * t;
        let noise = (pixel_hash(g.noise_seed, r, c) - 0.5) * 2.0 * g.noise_amplitude;
        (base + noise).clamp(0.40, 1.0)
    })
}

fn silhouette_raster(object: &ObjectSpec, n: usize) -> ndarray::Array2<bool> {
    ndarray::Array2::from_shape_fn((n, n), |(r, c)| object.contains(c as f64, r as f64))
}

fn shadow_raster(object: &ObjectSpec, light: &LightSpec, n: usize) -> ndarray::Array2<f32> {
    let hard = ndarray::Array2::from_shape_fn((n, n), |(r, c)| {
        if shadow_contains(object, light, c as f64, r as f64) {
            1.0f32
        } else {
            0.0
        }
    });
    if light.blur_radius <= 0.0 {
        hard
    } else {
        gaussian_blur(&hard, light.blur_radius)
    }
}

fn gaussian_blur(field: &ndarray::Array2<f32>, sigma: f64) -> ndarray::Array2<f32> {
    let half = (sigma * 3.0).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * half + 1) as usize);
    let mut sum = 0.0f64;
    for i in -half..=half {
        let v = (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    let (h, w) = field.dim();
    let mut tmp = ndarray::Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for (ki, kv) in kernel.iter().enumerate() {
                let cc = c as i64 + ki as i64 - half;
                if cc >= 0 && (cc as usize) < w {
                    acc += kv * field[(r, cc as usize)] as f64;
                }
            }
            tmp[(r, c)] = acc as f32;
        }
    }
    let mut out = ndarray::Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for (ki, kv) in kernel.iter().enumerate() {
                let rr = r as i64 + ki as i64 - half;
                if rr >= 0 && (rr as usize) < h {
                    acc += kv * tmp[(rr as usize, c)] as f64;
                }
            }
            out[(r, c)] = acc as f32;
        }
    }
    out
}

/// All renders of one scene, each quantized to the 8-bit grid.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub empty: Image,
    /// Ground plus object `k` alone, no shadow.
    pub with_object: Vec<Image>,
    /// Ground plus object `k` and its own shadow.
    pub with_object_shadow: Vec<Image>,
    /// Ground plus every object and every shadow.
    pub ground_truth: Image,
}

/// Renders the per-object and full image sets for a scene.
///
/// Shadows darken the ground only; objects are painted after shadows, so a
/// shadow never darkens an object. Overlapping shadows take the pointwise
/// darkest factor rather than stacking.
pub fn render_image_set(scene: &SceneSpec) -> ImageSet {
    let n = scene.resolution;
    let ground = ground_raster(scene);
    let rho = scene.light.attenuation as f32;

    let silhouettes: Vec<_> = scene
        .objects
        .iter()
        .map(|o| silhouette_raster(o, n))
        .collect();
    let softs: Vec<_> = scene
        .objects
        .iter()
        .map(|o| shadow_raster(o, &scene.light, n))
        .collect();

    let paint = |base: &Array3<f32>, ks: &[usize]| -> Array3<f32> {
        let mut img = base.clone();
        for &k in ks {
            for ((r, c), on) in silhouettes[k].indexed_iter() {
                if *on {
                    for ch in 0..3 {
                        img[(r, c, ch)] = scene.objects[k].color[ch];
                    }
                }
            }
        }
        img
    };
    let shade = |soft: &[&ndarray::Array2<f32>]| -> Array3<f32> {
        let mut img = ground.clone();
        for r in 0..n {
            for c in 0..n {
                let mut factor = 1.0f32;
                for s in soft {
                    factor = factor.min(1.0 - (1.0 - rho) * s[(r, c)]);
                }
                if factor < 1.0 {
                    for ch in 0..3 {
                        img[(r, c, ch)] *= factor;
                    }
                }
            }
        }
        img
    };
    let quant = |data: Array3<f32>| -> Image {
        Image {
            data: data.mapv(quantize_channel),
        }
    };

    let empty = quant(ground.clone());
    let mut with_object = Vec::with_capacity(scene.objects.len());
    let mut with_object_shadow = Vec::with_capacity(scene.objects.len());
    for k in 0..scene.objects.len() {
        with_object.push(quant(paint(&ground, &[k])));
        let shaded = shade(&[&softs[k]]);
        with_object_shadow.push(quant(paint(&shaded, &[k])));
    }
    let all: Vec<usize> = (0..scene.objects.len()).collect();
    let soft_refs: Vec<&ndarray::Array2<f32>> = softs.iter().collect();
    let ground_truth = quant(paint(&shade(&soft_refs), &all));

    ImageSet {
        empty,
        with_object,
        with_object_shadow,
        ground_truth,
    }
}

/// Per-object binary masks derived by differencing quantized renders: a
/// pixel belongs to a mask when some channel moved by more than one 8-bit
/// level.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub object: Vec<Mask>,
    pub shadow: Vec<Mask>,
}

fn diff_mask(a: &Image, b: &Image) -> Mask {
    let (h, w) = a.resolution();
    Mask::from_fn(h, w, |r, c| {
        for ch in 0..3 {
            let la = a.level(r, c, ch) as i32;
            let lb = b.level(r, c, ch) as i32;
            if (la - lb).abs() > 1 {
                return 1.0;
            }
        }
        0.0
    })
}

pub fn derive_masks(set: &ImageSet) -> MaskSet {
    let object = set
        .with_object
        .iter()
        .map(|img| diff_mask(img, &set.empty))
        .collect();
    let shadow = set
        .with_object
        .iter()
        .zip(set.with_object_shadow.iter())
        .map(|(without, with)| diff_mask(with, without))
        .collect();
    MaskSet { object, shadow }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleMeta {
    pub seed: u64,
    /// 1-based index of the foreground object in its scene.
    pub foreground: usize,
    pub object_box: BBox,
    pub shadow_box: BBox,
    pub light: LightSpec,
    pub domain: Domain,
    pub resolution: usize,
    pub generator_version: u32,
}

/// One training/eval record: composite without the foreground shadow, the
/// four masks, the ground-truth image, and metadata.
#[derive(Debug, Clone)]
pub struct ShadowTuple {
    pub composite: Image,
    pub m_fo: Mask,
    pub m_fs: Mask,
    pub m_bo: Mask,
    pub m_bs: Mask,
    pub ground_truth: Image,
    pub meta: TupleMeta,
}

/// Composes the tuple for foreground object `k` (1-based): background masks
/// are unions over the other objects, and the composite copies the
/// ground-truth pixels wherever a background mask is set.
pub fn compose_tuple(
    set: &ImageSet,
    masks: &MaskSet,
    k: usize,
    scene: &SceneSpec,
) -> Result<ShadowTuple, DataError> {
    assert!(k >= 1 && k <= scene.objects.len(), "foreground index");
    let idx = k - 1;
    let n = scene.resolution;
    let m_fo = masks.object[idx].clone();
    let m_fs = masks.shadow[idx].clone();
    if m_fs.count_above(0.5) == 0 {
        return Err(DataError::EmptyShadow);
    }

    let mut m_bo = Mask::zeros(n, n);
    let mut m_bs = Mask::zeros(n, n);
    for j in 0..scene.objects.len() {
        if j == idx {
            continue;
        }
        m_bo = m_bo.union(&masks.object[j])?;
        m_bs = m_bs.union(&masks.shadow[j])?;
    }

    // The combined background weight is clipped to [0, 1]; with binary masks
    // this is exactly their union, and the blend reduces to a pixel select,
    // so composite == ground truth holds bitwise on background pixels.
    let i_o = &set.with_object[idx];
    let i_g = &set.ground_truth;
    let mut data = i_o.data().clone();
    for ((r, c), bo) in m_bo.data().indexed_iter() {
        if *bo > 0.5 || m_bs.data()[(r, c)] > 0.5 {
            for ch in 0..3 {
                data[(r, c, ch)] = i_g.data()[(r, c, ch)];
            }
        }
    }

    let object_box = bbox_from_mask(&m_fo, 0.5)?;
    let shadow_box = bbox_from_mask(&m_fs, 0.5).map_err(|_| DataError::EmptyShadow)?;
    Ok(ShadowTuple {
        composite: Image { data },
        m_fo,
        m_fs,
        m_bo,
        m_bs,
        ground_truth: set.ground_truth.clone(),
        meta: TupleMeta {
            seed: scene.seed,
            foreground: k,
            object_box,
            shadow_box,
            light: scene.light,
            domain: scene.domain,
            resolution: n,
            generator_version: GENERATOR_VERSION,
        },
    })
}

/// Accepts a tuple when the foreground shadow is large enough, stays clear
/// of the frame border, and does not mostly hide behind its own object.
pub fn quality_filter(tuple: &ShadowTuple, config: &FilterConfig) -> bool {
    let area = tuple.m_fs.count_above(0.5);
    if area < config.min_area {
        return false;
    }
    let (h, w) = tuple.m_fs.resolution();
    let m = config.frame_margin;
    for ((r, c), v) in tuple.m_fs.data().indexed_iter() {
        if *v > 0.5 && (r < m || c < m || r >= h - m || c >= w - m) {
            return false;
        }
    }
    tuple.m_fs.overlap_fraction(&tuple.m_fo, 0.5) < config.max_object_overlap
}

/// Generates `count` filter-passing tuples, walking scene seeds upward from
/// `base_seed`. Returns the tuples in generation order.
pub fn generate_tuples(
    config: &GeneratorConfig,
    base_seed: u64,
    count: usize,
) -> Result<Vec<ShadowTuple>, DataError> {
    config.validate()?;
    let mut out = Vec::with_capacity(count);
    let mut seed = base_seed;
    let mut attempts: u64 = 0;
    while out.len() < count {
        let scene = sample_scene(seed, config);
        let set = render_image_set(&scene);
        let masks = derive_masks(&set);
        for k in 1..=scene.objects.len() {
            if out.len() >= count {
                break;
            }
            match compose_tuple(&set, &masks, k, &scene) {
                Ok(tuple) => {
                    if quality_filter(&tuple, &config.filter) {
                        out.push(tuple);
                    }
                }
                Err(DataError::EmptyShadow) => {}
                Err(e) => return Err(e),
            }
        }
        seed = seed.wrapping_add(1);
        attempts += 1;
        if attempts > 50 * count as u64 + 1000 {
            return Err(DataError::CorruptDataset(
                "generator yield too low; check configuration".into(),
            ));
        }
    }
    Ok(out)
}
