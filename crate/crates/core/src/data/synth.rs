//! Procedurally rendered sprite faces with causally rendered attributes.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::schema::{default_schema, AttributeSchema};
use super::{Dataset, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::tensor::{rng, Rng, Tensor};

pub const MIN_IMAGE_SIZE: usize = 16;

const HAIR: usize = 0;
const SKIN: usize = 1;
const EYEWEAR: usize = 2;
const EXPRESSION: usize = 3;
const FACE_SHAPE: usize = 4;
const ACCESSORY: usize = 5;

const HAIR_COLORS: [[f64; 3]; 3] = [[0.08, 0.07, 0.06], [0.93, 0.82, 0.38], [0.62, 0.38, 0.10]];
const SKIN_COLORS: [[f64; 3]; 2] = [[0.96, 0.80, 0.68], [0.35, 0.22, 0.16]];
const GLASSES_COLOR: [f64; 3] = [0.10, 0.75, 0.90];
const EYE_COLOR: [f64; 3] = [0.05, 0.05, 0.08];
const MOUTH_COLOR: [f64; 3] = [0.80, 0.12, 0.20];
const HAT_COLOR: [f64; 3] = [0.55, 0.15, 0.60];
const BACKGROUND_NOISE: f64 = 0.04;

/// Sampling knobs of the generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Per group, relative class frequencies (normalized internally). The
    /// defaults are deliberately skewed.
    pub class_ratios: Vec<Vec<f64>>,
    /// Probability that any one group's label is withheld.
    pub unlabeled_rate: f64,
    /// Relative jitter of face position and scale.
    pub geometry_jitter: f64,
    /// Relative jitter of overall brightness.
    pub brightness_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_ratios: vec![
                vec![0.45, 0.25, 0.30],
                vec![0.60, 0.40],
                vec![0.70, 0.30],
                vec![0.55, 0.45],
                vec![0.50, 0.50],
                vec![0.75, 0.25],
            ],
            unlabeled_rate: 0.1,
            geometry_jitter: 0.1,
            brightness_jitter: 0.1,
        }
    }
}

impl SynthConfig {
    /// Normalized sampling probabilities of each group's classes.
    pub fn class_probabilities(&self) -> Vec<Vec<f64>> {
        self.class_ratios
            .iter()
            .map(|r| {
                let total: f64 = r.iter().sum();
                r.iter().map(|v| v / total).collect()
            })
            .collect()
    }

    fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.class_ratios.len() != schema.group_count()
            || self
                .class_ratios
                .iter()
                .zip(schema.groups())
                .any(|(r, g)| r.len() != g.labels.len())
        {
            return Err(Error::InvalidArgument(
                "class_ratios must give one weight per class of every group".into(),
            ));
        }
        if self
            .class_ratios
            .iter()
            .any(|r| r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || r.iter().sum::<f64>() <= 0.0)
        {
            return Err(Error::InvalidArgument("class ratios must be non-negative with a positive sum".into()));
        }
        if !(0.0..1.0).contains(&self.unlabeled_rate) {
            return Err(Error::InvalidArgument("unlabeled_rate must be in [0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.geometry_jitter) || !(0.0..0.5).contains(&self.brightness_jitter) {
            return Err(Error::InvalidArgument("jitter must be in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Everything needed to render one face; rendering is a pure function of it.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    /// True class per group of the built-in schema, in schema order.
    pub classes: [usize; 6],
    /// Face center as a fraction of the image side.
    pub center: (f64, f64),
    pub scale: f64,
    pub brightness: f64,
    pub background: [f64; 3],
    pub noise_seed: u64,
}

struct Geometry {
    cx: f64,
    cy: f64,
    s: f64,
    rx: f64,
    ry: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_r: f64,
    glasses_r: f64,
    glasses_t: f64,
}

impl FaceParams {
    fn geometry(&self, size: usize) -> Geometry {
        let side = size as f64;
        let s = self.scale * side;
        let (rx, ry) = if self.classes[FACE_SHAPE] == 0 {
            (0.26 * s, 0.28 * s)
        } else {
            (0.21 * s, 0.33 * s)
        };
        let cy = self.center.1 * side;
        Geometry {
            cx: self.center.0 * side,
            cy,
            s,
            rx,
            ry,
            eye_dx: 0.42 * rx,
            eye_y: cy - 0.12 * ry,
            eye_r: 0.04 * s,
            glasses_r: 0.085 * s,
            glasses_t: 0.035 * s,
        }
    }

    /// Pixel box `(x0, y0, x1, y1)`, inclusive, containing eyes and glasses.
    pub fn eye_region(&self, size: usize) -> (usize, usize, usize, usize) {
        let g = self.geometry(size);
        let reach = g.glasses_r + g.glasses_t;
        let x0 = (g.cx - g.eye_dx - reach).floor().max(0.0) as usize;
        let x1 = ((g.cx + g.eye_dx + reach).ceil() as usize).min(size - 1);
        let y0 = (g.eye_y - reach).floor().max(0.0) as usize;
        let y1 = ((g.eye_y + reach).ceil() as usize).min(size - 1);
        (x0, y0, x1, y1)
    }

    fn shade(&self, g: &Geometry, x: f64, y: f64) -> Option<[f64; 3]> {
        let c = &self.classes;
        let (dx, dy) = (x - g.cx, y - g.cy);

        if c[ACCESSORY] == 1 {
            let brim_bottom = g.cy - 0.78 * g.ry;
            let brim = dx.abs() <= 1.25 * g.rx && y <= brim_bottom && y >= brim_bottom - 0.04 * g.s;
            let crown = dx.abs() <= 0.85 * g.rx && y <= brim_bottom && y >= g.cy - g.ry - 0.16 * g.s;
            if brim || crown {
                return Some(HAT_COLOR);
            }
        }

        for side in [-1.0, 1.0] {
            let ex = g.cx + side * g.eye_dx;
            let d = ((x - ex).powi(2) + (y - g.eye_y).powi(2)).sqrt();
            if c[EYEWEAR] == 1 && (d - g.glasses_r).abs() <= g.glasses_t / 2.0 {
                return Some(GLASSES_COLOR);
            }
            if d <= g.eye_r {
                return Some(EYE_COLOR);
            }
        }
        if c[EYEWEAR] == 1
            && (y - g.eye_y).abs() <= g.glasses_t / 2.0
            && dx.abs() <= g.eye_dx - g.glasses_r
        {
            return Some(GLASSES_COLOR);
        }

        let mouth_y = g.cy + 0.45 * g.ry;
        if c[EXPRESSION] == 1 {
            // open grin: a filled lower half-ellipse
            let (hw, depth) = (0.55 * g.rx, 0.11 * g.s);
            let (u, v) = (dx / hw, (y - mouth_y) / depth);
            if v >= -0.15 && u * u + v * v <= 1.0 {
                return Some(MOUTH_COLOR);
            }
        } else if dx.abs() <= 0.4 * g.rx && (y - mouth_y).abs() <= 0.02 * g.s {
            return Some(MOUTH_COLOR);
        }

        if (dx / g.rx).powi(2) + (dy / g.ry).powi(2) <= 1.0 {
            if y < g.cy - 0.6 * g.ry {
                return Some(HAIR_COLORS[c[HAIR]]);
            }
            return Some(SKIN_COLORS[c[SKIN]]);
        }

        let hy = y - (g.cy - 0.08 * g.s);
        if (dx / (1.18 * g.rx)).powi(2) + (hy / (1.08 * g.ry)).powi(2) <= 1.0 && y < g.cy + 0.3 * g.ry {
            return Some(HAIR_COLORS[c[HAIR]]);
        }
        None
    }

    /// Renders a `3×size×size` image in `[0, 1]` with 2×2 supersampling.
    pub fn render(&self, size: usize) -> Result<Tensor> {
        if size < MIN_IMAGE_SIZE {
            return Err(Error::InvalidArgument(format!(
                "image size {size} is below the minimum of {MIN_IMAGE_SIZE}"
            )));
        }
        let g = self.geometry(size);
        let plane = size * size;
        let mut data = vec![0.0; 3 * plane];
        let mut noise_rng = rng(self.noise_seed);
        let noise = Normal::new(0.0, BACKGROUND_NOISE).expect("valid stddev");
        const OFFSETS: [f64; 2] = [0.25, 0.75];
        for py in 0..size {
            for px in 0..size {
                let n: [f64; 3] = std::array::from_fn(|_| noise.sample(&mut noise_rng));
                let mut acc = [0.0; 3];
                for oy in OFFSETS {
                    for ox in OFFSETS {
                        let color = self
                            .shade(&g, px as f64 + ox, py as f64 + oy)
                            .unwrap_or_else(|| std::array::from_fn(|ch| self.background[ch] + n[ch]));
                        for ch in 0..3 {
                            acc[ch] += color[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    data[ch * plane + py * size + px] = (acc[ch] / 4.0 * self.brightness).clamp(0.0, 1.0);
                }
            }
        }
        Tensor::from_vec(&[3, size, size], data)
    }
}

fn sample_class(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws the parameters of one face plus its (possibly withheld) labels.
pub fn sample_face(cfg: &SynthConfig, rng: &mut Rng) -> (FaceParams, Vec<Option<usize>>) {
    let probs = cfg.class_probabilities();
    let classes: [usize; 6] = std::array::from_fn(|g| sample_class(&probs[g], rng));
    let j = cfg.geometry_jitter;
    let center = (
        0.5 + 0.5 * j * rng.random_range(-1.0..=1.0),
        0.52 + 0.5 * j * rng.random_range(-1.0..=1.0),
    );
    let scale = 1.0 + j * rng.random_range(-1.0..=1.0);
    let brightness = 1.0 + cfg.brightness_jitter * rng.random_range(-1.0..=1.0);
    let level = rng.random_range(0.25..0.75);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
    let background = std::array::from_fn(|ch| level + tint[ch]);
    let noise_seed = rng.random();
    let labels = classes
        .iter()
        .map(|&c| (rng.random::<f64>() >= cfg.unlabeled_rate).then_some(c))
        .collect();
    (
        FaceParams {
            classes,
            center,
            scale,
            brightness,
            background,
            noise_seed,
        },
        labels,
    )
}

pub fn generate_synthetic_dataset(
    n: usize,
    seed: u64,
    schema: &AttributeSchema,
    image_size: usize,
) -> Result<Dataset> {
    generate_with_config(n, seed, schema, image_size, &SynthConfig::default())
}

pub fn generate_with_config(
    n: usize,
    seed: u64,
    schema: &AttributeSchema,
    image_size: usize,
    cfg: &SynthConfig,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "image size {image_size} is too small to render features (minimum {MIN_IMAGE_SIZE})"
        )));
    }
    if *schema != default_schema() {
        return Err(Error::InvalidArgument(
            "the sprite renderer only knows the built-in face schema".into(),
        ));
    }
    cfg.validate(schema)?;
    let mut rng = rng(seed);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let (face, labels) = sample_face(cfg, &mut rng);
        images.push(LabeledImage {
            image: face.render(image_size)?,
            labels,
        });
    }
    Dataset::new(schema.clone(), images, Split::Train)
}
