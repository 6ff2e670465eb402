//! Deterministic synthetic depth scenes and degraded "predictions".
//!
//! Scenes are analytic depth fields; degradations apply, in order, a constant
//! offset, a border-renormalized box blur, Gaussian noise and dropout to the
//! scene mean, then re-clamp to `[0, cap]`. Both are pure functions of their
//! specs: every random draw comes from a ChaCha8 stream seeded by the spec.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth::{DepthMap, DEFAULT_DEPTH_CAP};
use crate::error::{DepthError, Result};

const NOISE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Ramp,
    StepWall,
    Sphere,
    BoxRoom,
    Mixed,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Ramp,
        SceneKind::StepWall,
        SceneKind::Sphere,
        SceneKind::BoxRoom,
        SceneKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Ramp => "ramp",
            SceneKind::StepWall => "step_wall",
            SceneKind::Sphere => "sphere",
            SceneKind::BoxRoom => "box_room",
            SceneKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DepthError::InvalidInput(format!("unknown scene kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, width: usize, height: usize, near: f64, far: f64, seed: u64) -> Self {
        Self {
            kind,
            width,
            height,
            near,
            far,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(DepthError::InvalidInput(format!(
                "scenes must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far <= DEFAULT_DEPTH_CAP) {
            return Err(DepthError::InvalidInput(format!(
                "depth range [{}, {}] must satisfy 0 < near < far <= {DEFAULT_DEPTH_CAP}",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// First column of the near side of a `step_wall` scene.
    pub fn step_column(&self) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.random_range(self.width / 4..=3 * self.width / 4)
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<DepthMap> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (near, far) = (spec.near, spec.far);
    let span = far - near;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fw = (w - 1) as f64;
    let fh = (h - 1) as f64;

    let pixels: Vec<f64> = match spec.kind {
        SceneKind::Ramp => grid(w, h, |_, c| near + span * c as f64 / fw),
        SceneKind::StepWall => {
            let split = spec.step_column();
            grid(w, h, |_, c| if c < split { far } else { near })
        }
        SceneKind::Sphere => {
            let sphere = Sphere::random(&mut rng, w, h);
            grid(w, h, |r, c| far - span * sphere.bulge(r, c))
        }
        SceneKind::BoxRoom => {
            let room = Room::random(&mut rng, w, h);
            grid(w, h, |r, c| far - span * room.closeness(r, c))
        }
        SceneKind::Mixed => {
            // A room in the back, a ball and a block in front of it.
            let room = Room::random(&mut rng, w, h);
            let sphere = Sphere::random(&mut rng, w, h);
            let bw = rng.random_range(w / 6..=w / 3);
            let bh = rng.random_range(h / 6..=h / 3);
            let bc = rng.random_range(0..w - bw);
            let br = rng.random_range(0..h - bh);
            let block_depth = near + 0.25 * span;
            let back_near = near + 0.4 * span;
            let ramp_tilt = rng.random_range(-0.1..0.1);
            grid(w, h, |r, c| {
                let tilt = ramp_tilt * span * (c as f64 / fw - 0.5) * (r as f64 / fh);
                let back = (far - (far - back_near) * room.closeness(r, c) + tilt).clamp(back_near, far);
                let ball = far - span * sphere.bulge(r, c);
                let block = if (br..br + bh).contains(&r) && (bc..bc + bw).contains(&c) {
                    block_depth
                } else {
                    far
                };
                back.min(ball).min(block)
            })
        }
    };
    let pixels = pixels.into_iter().map(|v| v.clamp(near, far)).collect();
    DepthMap::new(w, h, pixels, DEFAULT_DEPTH_CAP)
}

fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| f(r, c))
        .collect()
}

struct Sphere {
    cx: f64,
    cy: f64,
    radius: f64,
}

impl Sphere {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Self {
        let (fw, fh) = (w as f64, h as f64);
        Self {
            cx: fw / 2.0 + rng.random_range(-fw / 8.0..fw / 8.0),
            cy: fh / 2.0 + rng.random_range(-fh / 8.0..fh / 8.0),
            radius: fw.min(fh) * rng.random_range(0.25..0.4),
        }
    }

    /// Height of the unit hemisphere above the background, in `[0, 1]`.
    fn bulge(&self, r: usize, c: usize) -> f64 {
        let dx = (c as f64 - self.cx) / self.radius;
        let dy = (r as f64 - self.cy) / self.radius;
        (1.0 - dx * dx - dy * dy).max(0.0).sqrt()
    }
}

struct Room {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
}

impl Room {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Self {
        let (fw, fh) = ((w - 1) as f64, (h - 1) as f64);
        let cx = fw / 2.0 + rng.random_range(-fw / 10.0..fw / 10.0);
        let cy = fh / 2.0 + rng.random_range(-fh / 10.0..fh / 10.0);
        Self {
            cx,
            cy,
            half_w: cx.max(fw - cx),
            half_h: cy.max(fh - cy),
        }
    }

    /// 0 at the back wall's vanishing point, 1 at the nearest image border.
    fn closeness(&self, r: usize, c: usize) -> f64 {
        let u = ((c as f64 - self.cx) / self.half_w).abs();
        let v = ((r as f64 - self.cy) / self.half_h).abs();
        u.max(v).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSpec {
    pub gaussian_noise_sigma: f64,
    pub blur_radius: usize,
    pub offset: f64,
    pub dropout_fraction: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_noise_sigma.is_finite() && self.gaussian_noise_sigma >= 0.0) {
            return Err(DepthError::InvalidInput("noise sigma must be finite and >= 0".into()));
        }
        if !(self.offset.is_finite() && self.offset >= 0.0) {
            return Err(DepthError::InvalidInput("offset must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(DepthError::InvalidInput("dropout fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn degrade(gt: &DepthMap, spec: &DegradeSpec) -> Result<DepthMap> {
    spec.validate()?;
    let (w, h) = (gt.width(), gt.height());
    let mut px: Vec<f64> = gt.pixels().iter().map(|&v| v + spec.offset).collect();
    if spec.blur_radius > 0 {
        px = box_blur(w, h, &px, spec.blur_radius);
    }
    if spec.gaussian_noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(NOISE_STREAM);
        let normal = Normal::new(0.0, spec.gaussian_noise_sigma)
            .map_err(|e| DepthError::InvalidInput(format!("noise distribution: {e}")))?;
        for v in &mut px {
            *v += normal.sample(&mut rng);
        }
    }
    if spec.dropout_fraction > 0.0 {
        let mean = px.iter().sum::<f64>() / px.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(DROPOUT_STREAM);
        for v in &mut px {
            if rng.random_bool(spec.dropout_fraction) {
                *v = mean;
            }
        }
    }
    let cap = gt.depth_cap();
    let px = px.into_iter().map(|v| v.clamp(0.0, cap)).collect();
    DepthMap::new(w, h, px, cap)
}

/// Mean over the `(2r+1)^2` neighborhood, clipped to the image.
fn box_blur(w: usize, h: usize, px: &[f64], radius: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(px.len());
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(h - 1));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(w - 1));
            let mut sum = 0.0;
            for rr in r0..=r1 {
                sum += px[rr * w + c0..=rr * w + c1].iter().sum::<f64>();
            }
            out.push(sum / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64);
        }
    }
    out
}

/// The five-scene benchmark suite: one scene of each kind at 64x64, depths in
/// `[1, 8]` m, degraded by a 0.3 m offset, radius-1 blur, 0.05 m noise and 2%
/// dropout. Scene `i` (1-based) uses seed `i` for both generation and
/// degradation.
pub fn standard_suite() -> Result<Vec<SuitePair>> {
    SceneKind::ALL
        .iter()
        .zip(1u64..)
        .map(|(&kind, seed)| {
            let scene = SceneSpec::new(kind, 64, 64, 1.0, 8.0, seed);
            let degradation = standard_degradation(seed);
            let gt = generate_scene(&scene)?;
            let degraded = degrade(&gt, &degradation)?;
            Ok(SuitePair {
                scene,
                degradation,
                ground_truth: gt,
                degraded,
            })
        })
        .collect()
}

pub fn standard_degradation(seed: u64) -> DegradeSpec {
    DegradeSpec {
        gaussian_noise_sigma: 0.05,
        blur_radius: 1,
        offset: 0.3,
        dropout_fraction: 0.02,
        seed,
    }
}

#[derive(Debug, Clone)]
pub struct SuitePair {
    pub scene: SceneSpec,
    pub degradation: DegradeSpec,
    pub ground_truth: DepthMap,
    pub degraded: DepthMap,
}
