//! Procedural face-patch generator with exact gaze ground truth.
//!
//! Faces are flat geometric primitives: a skin ellipse on a dark
//! background, two white eye disks with a colored iris and black pupil,
//! brow bars and a mouth ellipse. The iris center is displaced from the
//! eye center by `k * sin(yaw) * (cos(pitch), sin(pitch))` with
//! `k = eye_radius - iris_radius`, so the gaze encoding is invertible:
//! the iris centroid recovers the generating angles. Rendering is 2x
//! supersampled then box-downsampled; masks are computed analytically
//! from the same geometry with 1-pixel linear edges.

use crate::losses::GazeAngles;
use crate::rng::Rng64;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid identity {id}: {msg}")]
    InvalidIdentity { id: u32, msg: String },
    #[error("invalid gaze: yaw {0} outside [0, pi/2]")]
    InvalidGaze(f64),
    #[error("dataset i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("raster format: {0}")]
    Format(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

const RASTER_MAGIC: &[u8; 7] = b"GZLB-I1";

const BACKGROUND: [f64; 3] = [0.22, 0.24, 0.27];
/// Eye row sits this fraction of the image size above center.
const EYE_ROW_OFFSET: f64 = 0.08;
/// The white of the eye is drawn this much larger than the gaze-math
/// eye radius, so the extraction disk never sees the skin boundary.
const EYE_DRAW_PAD: f64 = 2.0;
const SCLERA: [f64; 3] = [0.92, 0.92, 0.90];
const PUPIL: [f64; 3] = [0.03, 0.03, 0.03];
const BROW: [f64; 3] = [0.16, 0.11, 0.08];
const MOUTH: [f64; 3] = [0.58, 0.18, 0.18];

// ---------------------------------------------------------------------------
// Identity and frame geometry
// ---------------------------------------------------------------------------

/// Geometry and appearance of one synthetic identity. All lengths are
/// in pixels of the target image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub skin_tone: [f64; 3],
    pub face_axes: (f64, f64),
    pub eye_spacing: f64,
    pub eye_radius: f64,
    pub iris_radius: f64,
    pub iris_color: [f64; 3],
    pub mouth_width: f64,
    pub mouth_height: f64,
    pub brow_offset: f64,
    pub identity_id: u32,
}

impl IdentityParams {
    /// Iris displacement scale: the iris stays inside the eye for any
    /// yaw because |d| = k sin(yaw) <= k = eye_radius - iris_radius.
    pub fn iris_travel(&self) -> f64 {
        self.eye_radius - self.iris_radius
    }

    pub fn validate(&self, image_size: usize) -> Result<(), SynthError> {
        let err = |msg: String| SynthError::InvalidIdentity {
            id: self.identity_id,
            msg,
        };
        if self.iris_radius >= self.eye_radius {
            return Err(err(format!(
                "iris radius {} must be smaller than eye radius {}",
                self.iris_radius, self.eye_radius
            )));
        }
        for c in self
            .skin_tone
            .iter()
            .chain(self.iris_color.iter())
        {
            if !(0.0..=1.0).contains(c) {
                return Err(err(format!("color channel {c} outside [0,1]")));
            }
        }
        let s = image_size as f64;
        let (cx, cy) = (s / 2.0, s / 2.0);
        let (a, b) = self.face_axes;
        // drawn eye disks, padded by a pixel, must sit inside the face
        // ellipse and must not overlap each other
        let ey = cy - EYE_ROW_OFFSET * s;
        let disk_r = self.eye_radius + EYE_DRAW_PAD + 1.0;
        for side in [-1.0, 1.0] {
            let ex = cx + side * self.eye_spacing / 2.0;
            for k in 0..64 {
                let ang = k as f64 * std::f64::consts::TAU / 64.0;
                let px = ex + disk_r * ang.cos();
                let py = ey + disk_r * ang.sin();
                let r2 = ((px - cx) / a).powi(2) + ((py - cy) / b).powi(2);
                if r2 > 1.0 {
                    return Err(err("eye extends outside the face ellipse".into()));
                }
            }
        }
        // extraction disks (radius eye_radius + 1) must stay clear of
        // the other eye's iris; the iris never reaches its own sclera
        // edge, so a 1.5 px gap between the math disks suffices
        if self.eye_spacing < 2.0 * self.eye_radius + 1.5 {
            return Err(err("eyes too close for separate gaze extraction".into()));
        }
        Ok(())
    }
}

/// Draw one identity from the seeded parameter distributions.
pub fn sample_identity(rng: &mut Rng64, image_size: usize, identity_id: u32) -> IdentityParams {
    let s = image_size as f64;
    let eye_radius = rng.range_f64(0.095, 0.115) * s;
    IdentityParams {
        skin_tone: [
            rng.range_f64(0.55, 0.85),
            rng.range_f64(0.42, 0.68),
            rng.range_f64(0.32, 0.55),
        ],
        face_axes: (rng.range_f64(0.39, 0.43) * s, rng.range_f64(0.41, 0.46) * s),
        eye_spacing: rng.range_f64(0.29, 0.32) * s,
        eye_radius,
        iris_radius: rng.range_f64(0.40, 0.47) * eye_radius,
        iris_color: [
            rng.range_f64(0.05, 0.35),
            rng.range_f64(0.10, 0.40),
            rng.range_f64(0.15, 0.45),
        ],
        mouth_width: rng.range_f64(0.16, 0.26) * s,
        mouth_height: rng.range_f64(0.035, 0.06) * s,
        brow_offset: rng.range_f64(0.045, 0.075) * s,
        identity_id,
    }
}

/// Perturb a base identity within `radius` (a fraction of each
/// parameter's spread) to build its similar-appearance partner.
pub fn perturb_identity(
    base: &IdentityParams,
    rng: &mut Rng64,
    radius: f64,
    identity_id: u32,
    image_size: usize,
) -> IdentityParams {
    let s = image_size as f64;
    let mut p = base.clone();
    p.identity_id = identity_id;
    let mut wiggle = |v: &mut f64, spread: f64, lo: f64, hi: f64| {
        *v = (*v + rng.jitter(radius * spread)).clamp(lo, hi);
    };
    for c in p.skin_tone.iter_mut().chain(p.iris_color.iter_mut()) {
        wiggle(c, 0.15, 0.0, 1.0);
    }
    wiggle(&mut p.face_axes.0, 0.02 * s, 0.385 * s, 0.435 * s);
    wiggle(&mut p.face_axes.1, 0.02 * s, 0.40 * s, 0.47 * s);
    wiggle(&mut p.eye_spacing, 0.02 * s, 0.285 * s, 0.325 * s);
    wiggle(&mut p.eye_radius, 0.008 * s, 0.092 * s, 0.116 * s);
    p.iris_radius = p.iris_radius.min(0.47 * p.eye_radius);
    wiggle(&mut p.iris_radius, 0.02 * p.eye_radius, 0.38 * p.eye_radius, 0.47 * p.eye_radius);
    wiggle(&mut p.mouth_width, 0.03 * s, 0.14 * s, 0.28 * s);
    wiggle(&mut p.mouth_height, 0.008 * s, 0.03 * s, 0.07 * s);
    wiggle(&mut p.brow_offset, 0.01 * s, 0.04 * s, 0.08 * s);
    p
}

/// Per-frame perturbations: small head shift plus a lighting gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameJitter {
    pub dx: f64,
    pub dy: f64,
    pub gain: f64,
}

pub fn jitter_from_seed(jitter_seed: u64, image_size: usize) -> FrameJitter {
    let mut rng = Rng64::new(jitter_seed);
    let s = image_size as f64;
    FrameJitter {
        dx: rng.jitter(0.02 * s),
        dy: rng.jitter(0.02 * s),
        gain: rng.range_f64(0.92, 1.08),
    }
}

/// Everything the centroid-based gaze extractor needs to invert the
/// iris displacement of a rendered (or reconstructed) frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameGeometry {
    pub eye_centers: [(f64, f64); 2],
    pub eye_radius: f64,
    pub iris_travel: f64,
}

pub fn frame_geometry(
    identity: &IdentityParams,
    jitter: FrameJitter,
    image_size: usize,
) -> FrameGeometry {
    let s = image_size as f64;
    let cx = s / 2.0 + jitter.dx;
    let cy = s / 2.0 + jitter.dy;
    let ey = cy - EYE_ROW_OFFSET * s;
    FrameGeometry {
        eye_centers: [
            (cx - identity.eye_spacing / 2.0, ey),
            (cx + identity.eye_spacing / 2.0, ey),
        ],
        eye_radius: identity.eye_radius,
        iris_travel: identity.iris_travel(),
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// One generated face patch with its region masks and gaze label.
#[derive(Clone, Debug)]
pub struct Sample {
    /// 3 x S x S, values in [0,1].
    pub image: Tensor,
    /// Single-plane S x S soft masks.
    pub mask_face: Tensor,
    pub mask_eyes: Tensor,
    pub mask_em: Tensor,
    pub gaze: GazeAngles,
    pub identity_id: u32,
    pub frame_index: u32,
}

struct Scene {
    cx: f64,
    cy: f64,
    face_axes: (f64, f64),
    eyes: [(f64, f64); 2],
    irises: [(f64, f64); 2],
    eye_radius: f64,
    iris_radius: f64,
    pupil_radius: f64,
    brows: [(f64, f64); 2],
    brow_axes: (f64, f64),
    mouth: (f64, f64),
    mouth_axes: (f64, f64),
    skin: [f64; 3],
    iris_color: [f64; 3],
    gain: f64,
}

impl Scene {
    fn build(id: &IdentityParams, gaze: GazeAngles, jitter: FrameJitter, image_size: usize) -> Scene {
        let geo = frame_geometry(id, jitter, image_size);
        let k = id.iris_travel();
        let (dx, dy) = (
            k * gaze.yaw.sin() * gaze.pitch.cos(),
            k * gaze.yaw.sin() * gaze.pitch.sin(),
        );
        let s = image_size as f64;
        let cx = s / 2.0 + jitter.dx;
        let cy = s / 2.0 + jitter.dy;
        Scene {
            cx,
            cy,
            face_axes: id.face_axes,
            eyes: geo.eye_centers,
            irises: [
                (geo.eye_centers[0].0 + dx, geo.eye_centers[0].1 + dy),
                (geo.eye_centers[1].0 + dx, geo.eye_centers[1].1 + dy),
            ],
            eye_radius: id.eye_radius,
            iris_radius: id.iris_radius,
            pupil_radius: 0.45 * id.iris_radius,
            brows: [
                (geo.eye_centers[0].0, geo.eye_centers[0].1 - id.eye_radius - id.brow_offset),
                (geo.eye_centers[1].0, geo.eye_centers[1].1 - id.eye_radius - id.brow_offset),
            ],
            brow_axes: (1.15 * id.eye_radius, 0.28 * id.eye_radius),
            mouth: (cx, cy + 0.55 * id.face_axes.1),
            mouth_axes: (id.mouth_width / 2.0, id.mouth_height / 2.0),
            skin: id.skin_tone,
            iris_color: id.iris_color,
            gain: jitter.gain,
        }
    }

    /// Layered analytic-coverage compositing: every primitive blends
    /// in with a linear one-pixel edge, so gradients of the rendered
    /// image are smooth enough for subpixel centroid extraction.
    fn color_at(&self, x: f64, y: f64) -> [f64; 3] {
        fn blend(c: &mut [f64; 3], col: [f64; 3], a: f64) {
            for ch in 0..3 {
                c[ch] = c[ch] * (1.0 - a) + col[ch] * a;
            }
        }
        let mut c = BACKGROUND;
        blend(
            &mut c,
            self.skin,
            coverage(ellipse_sdf(x, y, self.cx, self.cy, self.face_axes)),
        );
        blend(
            &mut c,
            MOUTH,
            coverage(ellipse_sdf(x, y, self.mouth.0, self.mouth.1, self.mouth_axes)),
        );
        for b in &self.brows {
            blend(
                &mut c,
                BROW,
                coverage(ellipse_sdf(x, y, b.0, b.1, self.brow_axes)),
            );
        }
        for (eye, iris) in self.eyes.iter().zip(&self.irises) {
            blend(
                &mut c,
                SCLERA,
                coverage(dist(x, y, eye.0, eye.1) - (self.eye_radius + EYE_DRAW_PAD)),
            );
            blend(
                &mut c,
                self.iris_color,
                coverage_soft(dist(x, y, iris.0, iris.1) - self.iris_radius),
            );
            blend(
                &mut c,
                PUPIL,
                coverage_soft(dist(x, y, iris.0, iris.1) - self.pupil_radius),
            );
        }
        [
            (c[0] * self.gain).clamp(0.0, 1.0),
            (c[1] * self.gain).clamp(0.0, 1.0),
            (c[2] * self.gain).clamp(0.0, 1.0),
        ]
    }
}

fn dist(x: f64, y: f64, cx: f64, cy: f64) -> f64 {
    ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
}

/// Signed-distance approximation for an ellipse, exact for circles.
fn ellipse_sdf(x: f64, y: f64, cx: f64, cy: f64, (a, b): (f64, f64)) -> f64 {
    let dx = x - cx;
    let dy = y - cy;
    let r = ((dx / a).powi(2) + (dy / b).powi(2)).sqrt();
    if r == 0.0 {
        return -a.min(b);
    }
    let grad = ((dx / (a * a)).powi(2) + (dy / (b * b)).powi(2)).sqrt() / r;
    (r - 1.0) / grad
}

/// Linear 1-pixel coverage ramp from a signed distance.
fn coverage(sdf: f64) -> f64 {
    (0.5 - sdf).clamp(0.0, 1.0)
}

/// Wider ramp used for the iris and pupil in the rendered image; the
/// extraction centroid interpolates a 2-pixel edge much better than a
/// hard one.
fn coverage_soft(sdf: f64) -> f64 {
    (0.5 - sdf / 2.0).clamp(0.0, 1.0)
}

/// Internal render product including the mouth mask, which the public
/// [`Sample`] folds into the eyes+mouth mask.
pub struct RenderedParts {
    pub image: Tensor,
    pub mask_face: Tensor,
    pub mask_eyes: Tensor,
    pub mask_mouth: Tensor,
    pub mask_em: Tensor,
}

pub fn render_parts(
    identity: &IdentityParams,
    gaze: GazeAngles,
    jitter: FrameJitter,
    image_size: usize,
) -> Result<RenderedParts, SynthError> {
    identity.validate(image_size)?;
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&gaze.yaw) {
        return Err(SynthError::InvalidGaze(gaze.yaw));
    }
    let s = image_size;
    let scene = Scene::build(identity, gaze, jitter, s);

    // composited color sampled at pixel centers (edges are already
    // analytically soft)
    let mut image = vec![0.0; 3 * s * s];
    for py in 0..s {
        for px in 0..s {
            let c = scene.color_at(px as f64 + 0.5, py as f64 + 0.5);
            for ch in 0..3 {
                image[ch * s * s + py * s + px] = c[ch];
            }
        }
    }

    // analytic masks with linear edges, sampled at pixel centers
    let mut face = vec![0.0; s * s];
    let mut eyes = vec![0.0; s * s];
    let mut mouth = vec![0.0; s * s];
    for py in 0..s {
        for px in 0..s {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;
            let i = py * s + px;
            face[i] = coverage(ellipse_sdf(x, y, scene.cx, scene.cy, scene.face_axes));
            let draw_r = scene.eye_radius + EYE_DRAW_PAD;
            let e0 = coverage(dist(x, y, scene.eyes[0].0, scene.eyes[0].1) - draw_r);
            let e1 = coverage(dist(x, y, scene.eyes[1].0, scene.eyes[1].1) - draw_r);
            eyes[i] = e0.max(e1);
            mouth[i] = coverage(ellipse_sdf(
                x,
                y,
                scene.mouth.0,
                scene.mouth.1,
                scene.mouth_axes,
            ));
            // eyes and mouth live strictly inside the face; keep the
            // subset invariant exact even at the soft edges
            eyes[i] = eyes[i].min(face[i]);
            mouth[i] = mouth[i].min(face[i]);
        }
    }
    let em: Vec<f64> = eyes
        .iter()
        .zip(&mouth)
        .map(|(&e, &m)| e.max(m))
        .collect();

    Ok(RenderedParts {
        image: Tensor::new(vec![3, s, s], image),
        mask_face: Tensor::new(vec![s, s], face),
        mask_eyes: Tensor::new(vec![s, s], eyes),
        mask_mouth: Tensor::new(vec![s, s], mouth),
        mask_em: Tensor::new(vec![s, s], em),
    })
}

/// Render one sample. Frame jitter and lighting come from
/// `jitter_seed`; identical arguments give bit-identical output.
pub fn render_face(
    identity: &IdentityParams,
    gaze: GazeAngles,
    jitter_seed: u64,
    image_size: usize,
) -> Result<Sample, SynthError> {
    let jitter = jitter_from_seed(jitter_seed, image_size);
    let parts = render_parts(identity, gaze, jitter, image_size)?;
    Ok(Sample {
        image: parts.image,
        mask_face: parts.mask_face,
        mask_eyes: parts.mask_eyes,
        mask_em: parts.mask_em,
        gaze,
        identity_id: identity.identity_id,
        frame_index: 0,
    })
}

// ---------------------------------------------------------------------------
// Gaze extraction (the inverse of the displacement encoding)
// ---------------------------------------------------------------------------

/// Recover gaze angles from an image by darkness-weighted iris
/// centroids inside each expected eye disk. Works on rendered ground
/// truth and on network reconstructions alike; quadratic weighting
/// keeps the centroid subpixel-accurate on anti-aliased edges.
pub fn extract_gaze(image: &Tensor, geo: &FrameGeometry) -> GazeAngles {
    let (s_h, s_w) = (image.shape()[1], image.shape()[2]);
    let plane = s_h * s_w;
    let data = image.data();
    let lum = |x: usize, y: usize| -> f64 {
        (data[y * s_w + x] + data[plane + y * s_w + x] + data[2 * plane + y * s_w + x]) / 3.0
    };

    let mut acc = (0.0, 0.0, 0.0); // accumulated unit vectors
    for &(ecx, ecy) in &geo.eye_centers {
        let r = geo.eye_radius + 1.0;
        let x_lo = ((ecx - r).floor().max(0.0)) as usize;
        let x_hi = ((ecx + r).ceil().min((s_w - 1) as f64)) as usize;
        let y_lo = ((ecy - r).floor().max(0.0)) as usize;
        let y_hi = ((ecy + r).ceil().min((s_h - 1) as f64)) as usize;

        // reference luminance: the brightest pixel in the disk (sclera)
        let mut ref_lum: f64 = 0.0;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if dist(px, py, ecx, ecy) <= r {
                    ref_lum = ref_lum.max(lum(x, y));
                }
            }
        }
        let mut wsum = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if dist(px, py, ecx, ecy) <= r {
                    let w = (ref_lum - lum(x, y)).max(0.0);
                    wsum += w;
                    cx += w * px;
                    cy += w * py;
                }
            }
        }
        let (dx, dy) = if wsum > 0.0 {
            (cx / wsum - ecx, cy / wsum - ecy)
        } else {
            (0.0, 0.0)
        };
        let d = (dx * dx + dy * dy).sqrt();
        let sin_yaw = (d / geo.iris_travel).clamp(0.0, 1.0);
        let yaw = sin_yaw.asin();
        let pitch = if d > 1e-12 { dy.atan2(dx) } else { 0.0 };
        let v = GazeAngles::new(pitch, yaw).to_vector();
        acc.0 += v.x;
        acc.1 += v.y;
        acc.2 += v.z;
    }
    // average the two eye estimates on the sphere
    let n = (acc.0 * acc.0 + acc.1 * acc.1 + acc.2 * acc.2).sqrt();
    let (x, y, z) = (acc.0 / n, acc.1 / n, acc.2 / n);
    let yaw = z.clamp(-1.0, 1.0).acos();
    let pitch = if yaw > 1e-12 { y.atan2(x) } else { 0.0 };
    GazeAngles::new(pitch, yaw)
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Admissible gaze cone for generated data.
pub const MAX_YAW: f64 = std::f64::consts::FRAC_PI_3;

pub fn sample_gaze(rng: &mut Rng64) -> GazeAngles {
    GazeAngles::new(
        rng.range_f64(-std::f64::consts::PI, std::f64::consts::PI),
        rng.range_f64(0.0, MAX_YAW),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_pairs: usize,
    /// Extra unpaired identities mixed into the pretraining corpus.
    pub extra_identities: usize,
    pub frames_per_identity: usize,
    pub eval_frames_per_pair: usize,
    pub image_size: usize,
    /// Relative parameter perturbation between pair partners.
    pub pairing_radius: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_pairs: 8,
            extra_identities: 0,
            frames_per_identity: 120,
            eval_frames_per_pair: 48,
            image_size: 64,
            pairing_radius: 0.5,
        }
    }
}

/// In-memory dataset: identities plus rendered samples. Pair `i`
/// consists of identities `2i` (original) and `2i+1` (character).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub identities: Vec<IdentityParams>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn n_identities(&self) -> usize {
        self.identities.len()
    }

    pub fn identity(&self, id: u32) -> &IdentityParams {
        &self.identities[id as usize]
    }

    pub fn samples_of(&self, id: u32) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.identity_id == id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Deterministic per-frame jitter seed.
    pub fn jitter_seed(dataset_seed: u64, identity_id: u32, frame_index: u32) -> u64 {
        Rng64::new(dataset_seed)
            .child(0x6672616d65) // frame stream
            .child(identity_id as u64)
            .child(frame_index as u64)
            .next_u64()
    }

    /// Synthesize the full training corpus.
    pub fn synthesize(cfg: &DatasetConfig, seed: u64) -> Result<Dataset, SynthError> {
        let root = Rng64::new(seed);
        let mut id_rng = root.child(0x6964); // identity stream
        let mut identities = Vec::new();
        for pair in 0..cfg.n_pairs {
            let base = sample_identity(&mut id_rng, cfg.image_size, (2 * pair) as u32);
            let twin = perturb_identity(
                &base,
                &mut id_rng,
                cfg.pairing_radius,
                (2 * pair + 1) as u32,
                cfg.image_size,
            );
            identities.push(base);
            identities.push(twin);
        }
        for extra in 0..cfg.extra_identities {
            identities.push(sample_identity(
                &mut id_rng,
                cfg.image_size,
                (2 * cfg.n_pairs + extra) as u32,
            ));
        }
        for id in &identities {
            id.validate(cfg.image_size)?;
        }

        let mut gaze_rng = root.child(0x67617a65); // gaze stream
        let mut samples = Vec::new();
        for id in &identities {
            for f in 0..cfg.frames_per_identity {
                let gaze = sample_gaze(&mut gaze_rng);
                let jseed = Self::jitter_seed(seed, id.identity_id, f as u32);
                let mut sample = render_face(id, gaze, jseed, cfg.image_size)?;
                sample.frame_index = f as u32;
                samples.push(sample);
            }
        }
        Ok(Dataset {
            config: cfg.clone(),
            seed,
            identities,
            samples,
        })
    }

    /// Fresh frames for evaluation, disjoint from the training stream.
    pub fn eval_frames(&self, identity_id: u32, count: usize) -> Result<Vec<Sample>, SynthError> {
        let root = Rng64::new(self.seed);
        let mut gaze_rng = root.child(0x6576616c).child(identity_id as u64);
        let id = self.identity(identity_id);
        let mut out = Vec::with_capacity(count);
        for f in 0..count {
            let gaze = sample_gaze(&mut gaze_rng);
            let frame_index = (self.config.frames_per_identity + f) as u32;
            let jseed = Self::jitter_seed(self.seed, identity_id, frame_index);
            let mut s = render_face(id, gaze, jseed, self.config.image_size)?;
            s.frame_index = frame_index;
            out.push(s);
        }
        Ok(out)
    }

    /// Geometry of one of this dataset's own frames.
    pub fn geometry_for(&self, identity_id: u32, frame_index: u32) -> FrameGeometry {
        self.geometry_mixed(identity_id, (identity_id, frame_index))
    }

    /// Geometry of `identity_id`'s face rendered at another frame's
    /// jitter. Swap outputs carry the character's identity at the
    /// source frame's head position, which is exactly this mix.
    pub fn geometry_mixed(&self, identity_id: u32, jitter_of: (u32, u32)) -> FrameGeometry {
        let jseed = Self::jitter_seed(self.seed, jitter_of.0, jitter_of.1);
        let jitter = jitter_from_seed(jseed, self.config.image_size);
        frame_geometry(self.identity(identity_id), jitter, self.config.image_size)
    }
}

// ---------------------------------------------------------------------------
// Raster + manifest i/o
// ---------------------------------------------------------------------------

/// Write a [C,H,W] (or [H,W]) tensor in the GZLB-I1 raster format:
/// magic, u32 LE width/height/channels, f32 LE channel-major data.
pub fn write_raster(path: &Path, t: &Tensor) -> Result<(), SynthError> {
    let (c, h, w) = match t.shape() {
        &[c, h, w] => (c, h, w),
        &[h, w] => (1, h, w),
        other => {
            return Err(SynthError::Format(format!(
                "raster expects [C,H,W] or [H,W], got {:?}",
                other
            )))
        }
    };
    let mut buf = Vec::with_capacity(7 + 12 + 4 * c * h * w);
    buf.extend_from_slice(RASTER_MAGIC);
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let io_err = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

pub fn read_raster(path: &Path) -> Result<Tensor, SynthError> {
    let bytes = std::fs::read(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cur = bytes.as_slice();
    let mut magic = [0u8; 7];
    cur.read_exact(&mut magic)
        .map_err(|_| SynthError::Format("truncated magic".into()))?;
    if &magic != RASTER_MAGIC {
        return Err(SynthError::Format("bad raster magic".into()));
    }
    let mut dims = [0u32; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b)
            .map_err(|_| SynthError::Format("truncated header".into()))?;
        *d = u32::from_le_bytes(b);
    }
    let (w, h, c) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let n = c * h * w;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b)
            .map_err(|_| SynthError::Format("truncated data".into()))?;
        data.push(f32::from_le_bytes(b) as f64);
    }
    let shape = if c == 1 { vec![h, w] } else { vec![c, h, w] };
    Ok(Tensor::new(shape, data))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub mask_face: String,
    pub mask_eyes: String,
    pub mask_em: String,
    pub identity_id: u32,
    pub frame_index: u32,
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub image_size: usize,
    pub seed: u64,
    pub config: DatasetConfig,
    pub identities: Vec<IdentityParams>,
    pub samples: Vec<ManifestEntry>,
}

/// Write every sample plus the manifest under `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest, SynthError> {
    let io_err = |path: &Path, source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let stem = format!("id{:03}_f{:04}", s.identity_id, s.frame_index);
        let files = [
            (format!("{stem}_img.gzlb"), &s.image),
            (format!("{stem}_face.gzlb"), &s.mask_face),
            (format!("{stem}_eyes.gzlb"), &s.mask_eyes),
            (format!("{stem}_em.gzlb"), &s.mask_em),
        ];
        for (name, tensor) in &files {
            write_raster(&dir.join(name), tensor)?;
        }
        entries.push(ManifestEntry {
            image: files[0].0.clone(),
            mask_face: files[1].0.clone(),
            mask_eyes: files[2].0.clone(),
            mask_em: files[3].0.clone(),
            identity_id: s.identity_id,
            frame_index: s.frame_index,
            pitch: s.gaze.pitch,
            yaw: s.gaze.yaw,
        });
    }
    let manifest = Manifest {
        image_size: dataset.config.image_size,
        seed: dataset.seed,
        config: dataset.config.clone(),
        identities: dataset.identities.clone(),
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SynthError::Manifest(e.to_string()))?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, json).map_err(|e| io_err(&mpath, e))?;
    Ok(manifest)
}

/// Load a dataset previously written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, SynthError> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|source| SynthError::Io {
        path: mpath.clone(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        samples.push(Sample {
            image: read_raster(&dir.join(&e.image))?,
            mask_face: read_raster(&dir.join(&e.mask_face))?,
            mask_eyes: read_raster(&dir.join(&e.mask_eyes))?,
            mask_em: read_raster(&dir.join(&e.mask_em))?,
            gaze: GazeAngles::new(e.pitch, e.yaw),
            identity_id: e.identity_id,
            frame_index: e.frame_index,
        });
    }
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        identities: manifest.identities,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::gaze_angle_error;

    fn test_identity(image_size: usize) -> IdentityParams {
        let mut rng = Rng64::new(100);
        sample_identity(&mut rng, image_size, 0)
    }

    #[test]
    fn zero_gaze_centers_iris() {
        let id = test_identity(64);
        let jitter = FrameJitter {
            dx: 0.0,
            dy: 0.0,
            gain: 1.0,
        };
        let scene = Scene::build(&id, GazeAngles::new(0.0, 0.0), jitter, 64);
        for (eye, iris) in scene.eyes.iter().zip(&scene.irises) {
            assert_eq!(eye, iris);
        }
    }

    #[test]
    fn opposite_pitch_mirrors_displacement() {
        let id = test_identity(64);
        let jitter = FrameJitter {
            dx: 0.0,
            dy: 0.0,
            gain: 1.0,
        };
        let yaw = 0.6;
        let a = Scene::build(&id, GazeAngles::new(0.0, yaw), jitter, 64);
        let b = Scene::build(&id, GazeAngles::new(std::f64::consts::PI, yaw), jitter, 64);
        let da = a.irises[0].0 - a.eyes[0].0;
        let db = b.irises[0].0 - b.eyes[0].0;
        assert!((da + db).abs() < 1e-9, "mirror: {da} vs {db}");
        assert!((a.irises[0].1 - a.eyes[0].1).abs() < 1e-9);
    }

    #[test]
    fn masks_nest_and_em_is_max() {
        let id = test_identity(64);
        let jitter = jitter_from_seed(5, 64);
        let parts = render_parts(&id, GazeAngles::new(1.0, 0.4), jitter, 64).unwrap();
        let eyes = parts.mask_eyes.data();
        let face = parts.mask_face.data();
        let mouth = parts.mask_mouth.data();
        let em = parts.mask_em.data();
        for i in 0..eyes.len() {
            assert!(eyes[i] <= face[i] + 1e-12);
            assert!(eyes[i] <= em[i] + 1e-12);
            assert!((em[i] - eyes[i].max(mouth[i])).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&face[i]));
        }
    }

    #[test]
    fn render_is_deterministic() {
        let id = test_identity(64);
        let g = GazeAngles::new(0.5, 0.3);
        let a = render_face(&id, g, 77, 64).unwrap();
        let b = render_face(&id, g, 77, 64).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.mask_em.data(), b.mask_em.data());
    }

    #[test]
    fn invalid_identity_is_rejected() {
        let mut id = test_identity(64);
        id.iris_radius = id.eye_radius + 1.0;
        assert!(matches!(
            render_face(&id, GazeAngles::new(0.0, 0.0), 1, 64),
            Err(SynthError::InvalidIdentity { .. })
        ));
    }

    #[test]
    fn gaze_roundtrip_within_half_degree() {
        let mut rng = Rng64::new(41);
        let mut worst: f64 = 0.0;
        for trial in 0..40 {
            let id = sample_identity(&mut rng, 64, trial);
            let gaze = sample_gaze(&mut rng);
            let jseed = rng.next_u64();
            let s = render_face(&id, gaze, jseed, 64).unwrap();
            let jitter = jitter_from_seed(jseed, 64);
            let geo = frame_geometry(&id, jitter, 64);
            let got = extract_gaze(&s.image, &geo);
            let err = crate::losses::degrees(gaze_angle_error(gaze, got));
            worst = worst.max(err);
        }
        assert!(worst < 0.5, "worst roundtrip error {worst} deg");
    }

    #[test]
    fn dataset_is_deterministic_and_counts_match() {
        let cfg = DatasetConfig {
            n_pairs: 1,
            extra_identities: 0,
            frames_per_identity: 10,
            eval_frames_per_pair: 4,
            image_size: 32,
            pairing_radius: 0.5,
        };
        let a = Dataset::synthesize(&cfg, 7).unwrap();
        let b = Dataset::synthesize(&cfg, 7).unwrap();
        assert_eq!(a.samples.len(), 20);
        let ids: std::collections::BTreeSet<u32> =
            a.samples.iter().map(|s| s.identity_id).collect();
        assert_eq!(ids.len(), 2);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.gaze, y.gaze);
        }
    }

    #[test]
    fn raster_roundtrip() {
        let id = test_identity(32);
        let s = render_face(&id, GazeAngles::new(0.2, 0.3), 9, 32).unwrap();
        let dir = std::env::temp_dir().join("gazelab_raster_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("img.gzlb");
        write_raster(&p, &s.image).unwrap();
        let back = read_raster(&p).unwrap();
        assert_eq!(back.shape(), s.image.shape());
        for (a, b) in back.data().iter().zip(s.image.data()) {
            assert!((a - b).abs() < 1e-7); // f32 storage
        }
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn dataset_file_roundtrip_hash_stable() {
        let cfg = DatasetConfig {
            n_pairs: 1,
            extra_identities: 0,
            frames_per_identity: 3,
            eval_frames_per_pair: 2,
            image_size: 32,
            pairing_radius: 0.5,
        };
        let ds = Dataset::synthesize(&cfg, 3).unwrap();
        let dir = std::env::temp_dir().join("gazelab_dataset_test");
        std::fs::remove_dir_all(&dir).ok();
        let m1 = write_dataset(&ds, &dir).unwrap();
        let text1 = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        let m2 = write_dataset(&ds, &dir).unwrap();
        let text2 = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        assert_eq!(text1, text2);
        assert_eq!(m1.samples.len(), m2.samples.len());
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.samples.len(), ds.samples.len());
        std::fs::remove_dir_all(&dir).ok();
    }
}
