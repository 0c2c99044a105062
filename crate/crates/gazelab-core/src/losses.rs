//! The loss mathematics: structural similarity and its dissimilarity
//! form, pixel MSE, the masked core reconstruction loss, the
//! eyes-and-mouth priority term, gaze-angle geometry, and the
//! gaze-gated eye reconstruction loss, plus their composition per
//! training condition.

use crate::tensor::{Graph, NodeId, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image {h}x{w} is smaller than the {n}x{n} ssim window")]
    ImageSmallerThanWindow { h: usize, w: usize, n: usize },
    #[error("invalid ssim config: {0}")]
    BadConfig(String),
}

// ---------------------------------------------------------------------------
// Gaze geometry
// ---------------------------------------------------------------------------

/// Pitch/yaw gaze direction in radians. Yaw is the polar angle of the
/// pitch/yaw -> Cartesian conversion below; pitch sweeps around the
/// view axis.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeAngles {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeAngles {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        GazeAngles { pitch, yaw }
    }

    /// x = sin(yaw)cos(pitch), y = sin(yaw)sin(pitch), z = cos(yaw).
    pub fn to_vector(self) -> GazeVector {
        GazeVector {
            x: self.yaw.sin() * self.pitch.cos(),
            y: self.yaw.sin() * self.pitch.sin(),
            z: self.yaw.cos(),
        }
    }
}

/// Unit gaze direction vector.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(self, o: GazeVector) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
}

/// Angle in radians between two gaze directions, in [0, pi].
///
/// Identical inputs short-circuit to exactly zero; otherwise the
/// normalized dot is clamped into [-1, 1] before arccos.
pub fn gaze_angle_error(a: GazeAngles, b: GazeAngles) -> f64 {
    let v1 = a.to_vector();
    let v2 = b.to_vector();
    if v1 == v2 {
        return 0.0;
    }
    let ratio = (v1.dot(v2) / (v1.norm() * v2.norm())).clamp(-1.0, 1.0);
    ratio.acos()
}

pub fn degrees(rad: f64) -> f64 {
    rad * 180.0 / std::f64::consts::PI
}

pub fn radians(deg: f64) -> f64 {
    deg * std::f64::consts::PI / 180.0
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Uniform,
    Gaussian { sigma: f64 },
}

/// Sliding-window configuration for structural similarity.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window_size: usize,
    pub window: WindowKind,
    pub c1: f64,
    pub c2: f64,
    pub data_range: f64,
}

impl SsimConfig {
    pub fn new(window_size: usize, window: WindowKind) -> Self {
        let l = 1.0;
        SsimConfig {
            window_size,
            window,
            c1: (0.01 * l) * (0.01 * l),
            c2: (0.03 * l) * (0.03 * l),
            data_range: l,
        }
    }

    /// 11x11 Gaussian (sigma 1.5) for images of at least 16 px,
    /// falling back to a 5x5 uniform window below that.
    pub fn default_for_image(size: usize) -> Self {
        if size >= 16 {
            SsimConfig::new(11, WindowKind::Gaussian { sigma: 1.5 })
        } else {
            SsimConfig::new(5, WindowKind::Uniform)
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(LossError::BadConfig(format!(
                "window size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(LossError::BadConfig(
                "stabilizers c1, c2 must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Normalized 1-D window profile (the 2-D window is its outer
    /// product, so windowed stats run as two separable passes).
    pub fn weights(&self) -> Vec<f64> {
        let n = self.window_size;
        let mut w = match self.window {
            WindowKind::Uniform => vec![1.0; n],
            WindowKind::Gaussian { sigma } => {
                let c = (n - 1) as f64 / 2.0;
                (0..n)
                    .map(|i| {
                        let d = i as f64 - c;
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
        };
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }
}

/// Loss term weights and composition switches. The lambda, alpha and
/// beta defaults follow DeepFaceLab's internal values.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_em: f64,
    pub alpha: f64,
    pub beta: f64,
    pub em_enabled: bool,
    pub gaze_enabled: bool,
    pub theta_detached: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 10.0,
            lambda2: 10.0,
            lambda3: 10.0,
            lambda_em: 300.0,
            alpha: 3.0,
            beta: 30.0,
            em_enabled: false,
            gaze_enabled: false,
            theta_detached: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda_em,
            self.alpha,
            self.beta,
        ];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(LossError::BadConfig("weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// The five training conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    Em,
    Gaze,
    GazeFinetune,
    EmGaze,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Pair,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Baseline,
        Condition::Em,
        Condition::Gaze,
        Condition::GazeFinetune,
        Condition::EmGaze,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Em => "em",
            Condition::Gaze => "gaze",
            Condition::GazeFinetune => "gaze_finetune",
            Condition::EmGaze => "em_gaze",
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        Condition::ALL.iter().copied().find(|c| c.dir_name() == s)
    }

    /// Resolve the composition switches for a training phase. The
    /// finetune condition runs the plain core loss during pretraining
    /// and enables the gaze term only on the pair phase.
    pub fn weights_for_phase(self, base: &LossWeights, phase: Phase) -> LossWeights {
        let mut w = *base;
        w.em_enabled = matches!(self, Condition::Em | Condition::EmGaze);
        w.gaze_enabled = match self {
            Condition::Gaze | Condition::EmGaze => true,
            Condition::GazeFinetune => phase == Phase::Pair,
            _ => false,
        };
        w
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

// ---------------------------------------------------------------------------
// Graph-level losses
// ---------------------------------------------------------------------------

fn check_pair(g: &Graph, y: NodeId, yhat: NodeId, op: &'static str) -> Result<(), LossError> {
    let (vy, vh) = (g.value(y), g.value(yhat));
    if vy.shape() != vh.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: vy.shape().to_vec(),
            rhs: vh.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Mean structural similarity over all valid windows and channels.
pub fn ssim_node(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId, LossError> {
    cfg.validate()?;
    check_pair(g, y, yhat, "ssim")?;
    let shape = g.value(y).shape().to_vec();
    let (h, w) = match shape.as_slice() {
        &[_, h, w] => (h, w),
        other => {
            return Err(LossError::BadConfig(format!(
                "ssim expects [C,H,W] images, got {:?}",
                other
            )))
        }
    };
    let n = cfg.window_size;
    if h < n || w < n {
        return Err(LossError::ImageSmallerThanWindow { h, w, n });
    }
    let wts = cfg.weights();
    let mu_y = g.window_mean(y, &wts)?;
    let mu_h = g.window_mean(yhat, &wts)?;
    let yy = g.mul(y, y)?;
    let hh = g.mul(yhat, yhat)?;
    let yh = g.mul(y, yhat)?;
    let e_yy = g.window_mean(yy, &wts)?;
    let e_hh = g.window_mean(hh, &wts)?;
    let e_yh = g.window_mean(yh, &wts)?;
    let mu_y2 = g.mul(mu_y, mu_y)?;
    let mu_h2 = g.mul(mu_h, mu_h)?;
    let mu_yh = g.mul(mu_y, mu_h)?;
    let var_y = g.sub(e_yy, mu_y2)?;
    let var_h = g.sub(e_hh, mu_h2)?;
    let cov = g.sub(e_yh, mu_yh)?;
    // (2 mu_y mu_h + c1)(2 cov + c2) / ((mu_y^2 + mu_h^2 + c1)(var_y + var_h + c2))
    let two_mu = g.mul_scalar(mu_yh, 2.0);
    let num_l = g.add_scalar(two_mu, cfg.c1);
    let two_cov = g.mul_scalar(cov, 2.0);
    let num_r = g.add_scalar(two_cov, cfg.c2);
    let num = g.mul(num_l, num_r)?;
    let mu_sum = g.add(mu_y2, mu_h2)?;
    let den_l = g.add_scalar(mu_sum, cfg.c1);
    let var_sum = g.add(var_y, var_h)?;
    let den_r = g.add_scalar(var_sum, cfg.c2);
    let den = g.mul(den_l, den_r)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

/// (1 - ssim) / 2.
pub fn dssim_node(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId, LossError> {
    let s = ssim_node(g, y, yhat, cfg)?;
    let neg = g.mul_scalar(s, -0.5);
    Ok(g.add_scalar(neg, 0.5))
}

/// Mean squared difference over all elements.
pub fn mse_node(g: &mut Graph, y: NodeId, yhat: NodeId) -> Result<NodeId, LossError> {
    check_pair(g, y, yhat, "mse")?;
    let d = g.sub(yhat, y)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Core reconstruction loss:
/// l1 * DSSIM(Y, Yh) + l2 * MSE(Y, Yh) + l3 * MSE(M, Mh).
pub fn core_loss_node(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    m_face: NodeId,
    m_face_hat: NodeId,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<NodeId, LossError> {
    let ds = dssim_node(g, y, yhat, cfg)?;
    let ms = mse_node(g, y, yhat)?;
    let mask_ms = mse_node(g, m_face, m_face_hat)?;
    let t1 = g.mul_scalar(ds, w.lambda1);
    let t2 = g.mul_scalar(ms, w.lambda2);
    let t3 = g.mul_scalar(mask_ms, w.lambda3);
    let t12 = g.add(t1, t2)?;
    Ok(g.add(t12, t3)?)
}

/// Eyes-and-mouth priority loss: lambda_em * mean(|Y.M - Yh.M|),
/// the mean running over all pixels and channels. `m_em` must already
/// be tiled to the image's channel count.
pub fn em_loss_node(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    m_em: NodeId,
    w: &LossWeights,
) -> Result<NodeId, LossError> {
    check_pair(g, y, yhat, "em_loss")?;
    check_pair(g, y, m_em, "em_loss mask")?;
    let ym = g.mul(y, m_em)?;
    let hm = g.mul(yhat, m_em)?;
    let d = g.sub(ym, hm)?;
    let a = g.abs(d);
    let m = g.mean(a);
    Ok(g.mul_scalar(m, w.lambda_em))
}

/// Cartesian gaze components from pitch/yaw scalar nodes.
pub fn gaze_vector_nodes(
    g: &mut Graph,
    pitch: NodeId,
    yaw: NodeId,
) -> Result<(NodeId, NodeId, NodeId), LossError> {
    let sin_yaw = g.sin(yaw);
    let cos_pitch = g.cos(pitch);
    let sin_pitch = g.sin(pitch);
    let x = g.mul(sin_yaw, cos_pitch)?;
    let y = g.mul(sin_yaw, sin_pitch)?;
    let z = g.cos(yaw);
    Ok((x, y, z))
}

/// Angle between two gaze vectors given as component scalar nodes;
/// normalized dot through the clamped arccos.
pub fn angle_between_nodes(
    g: &mut Graph,
    v1: (NodeId, NodeId, NodeId),
    v2: (NodeId, NodeId, NodeId),
) -> Result<NodeId, LossError> {
    let dot = {
        let xx = g.mul(v1.0, v2.0)?;
        let yy = g.mul(v1.1, v2.1)?;
        let zz = g.mul(v1.2, v2.2)?;
        let s = g.add(xx, yy)?;
        g.add(s, zz)?
    };
    let norm = |g: &mut Graph, v: (NodeId, NodeId, NodeId)| -> Result<NodeId, LossError> {
        let x2 = g.square(v.0);
        let y2 = g.square(v.1);
        let z2 = g.square(v.2);
        let s = g.add(x2, y2)?;
        let s = g.add(s, z2)?;
        Ok(g.sqrt(s))
    };
    let n1 = norm(g, v1)?;
    let n2 = norm(g, v2)?;
    let nn = g.mul(n1, n2)?;
    let ratio = g.div(dot, nn)?;
    Ok(g.acos(ratio))
}

/// Gaze reconstruction loss:
/// theta(expert(Y), expert(Yh)) * (alpha * DSSIM(Y.M, Yh.M) + beta * MSE(Y.M, Yh.M)).
///
/// `expert_fwd` runs the frozen gaze predictor on an image node and
/// returns (pitch, yaw) scalar nodes. With `theta_detached` the angle
/// acts as a plain scale during backward; otherwise gradients flow
/// through the expert on the reconstruction branch.
pub fn gaze_loss_node<F>(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    m_eyes: NodeId,
    mut expert_fwd: F,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<NodeId, LossError>
where
    F: FnMut(&mut Graph, NodeId) -> Result<(NodeId, NodeId), LossError>,
{
    check_pair(g, y, yhat, "gaze_loss")?;
    check_pair(g, y, m_eyes, "gaze_loss mask")?;
    let (p1, yaw1) = expert_fwd(g, y)?;
    let (p2, yaw2) = expert_fwd(g, yhat)?;
    let v1 = gaze_vector_nodes(g, p1, yaw1)?;
    let v2 = gaze_vector_nodes(g, p2, yaw2)?;
    let mut theta = angle_between_nodes(g, v1, v2)?;
    if w.theta_detached {
        theta = g.detach(theta);
    }
    let pixel = gaze_pixel_term_node(g, y, yhat, m_eyes, w, cfg)?;
    Ok(g.mul(theta, pixel)?)
}

/// The pixel half of the gaze loss: alpha * DSSIM + beta * MSE over the
/// eye-masked images. Split out so the theta gate can be studied in
/// isolation.
pub fn gaze_pixel_term_node(
    g: &mut Graph,
    y: NodeId,
    yhat: NodeId,
    m_eyes: NodeId,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<NodeId, LossError> {
    let ym = g.mul(y, m_eyes)?;
    let hm = g.mul(yhat, m_eyes)?;
    let ds = dssim_node(g, ym, hm, cfg)?;
    let ms = mse_node(g, ym, hm)?;
    let a = g.mul_scalar(ds, w.alpha);
    let b = g.mul_scalar(ms, w.beta);
    Ok(g.add(a, b)?)
}

/// Everything one reconstruction branch needs for its loss.
pub struct BranchInputs {
    pub y: NodeId,
    pub yhat: NodeId,
    /// Ground-truth face mask, single channel [1,H,W].
    pub m_face: NodeId,
    /// Predicted face mask, single channel [1,H,W].
    pub m_face_hat: NodeId,
    /// Eyes+mouth mask tiled to image channels.
    pub m_em: NodeId,
    /// Eyes mask tiled to image channels.
    pub m_eyes: NodeId,
}

/// Per-branch loss components (values, for logging).
#[derive(Clone, Copy, Debug, Default)]
pub struct BranchLossValues {
    pub core: f64,
    pub em: f64,
    pub gaze: f64,
}

/// Compose the full branch loss for a condition whose switches have
/// already been resolved by [`Condition::weights_for_phase`]. Returns
/// the total node plus the component values for the loss log.
pub fn branch_loss_node<F>(
    g: &mut Graph,
    inputs: &BranchInputs,
    expert_fwd: F,
    w: &LossWeights,
    cfg: &SsimConfig,
) -> Result<(NodeId, BranchLossValues), LossError>
where
    F: FnMut(&mut Graph, NodeId) -> Result<(NodeId, NodeId), LossError>,
{
    let mut values = BranchLossValues::default();
    let mut total = core_loss_node(g, inputs.y, inputs.yhat, inputs.m_face, inputs.m_face_hat, w, cfg)?;
    values.core = g.value(total).item();
    if w.em_enabled {
        let em = em_loss_node(g, inputs.y, inputs.yhat, inputs.m_em, w)?;
        values.em = g.value(em).item();
        total = g.add(total, em)?;
    }
    if w.gaze_enabled {
        let gz = gaze_loss_node(g, inputs.y, inputs.yhat, inputs.m_eyes, expert_fwd, w, cfg)?;
        values.gaze = g.value(gz).item();
        total = g.add(total, gz)?;
    }
    Ok((total, values))
}

// ---------------------------------------------------------------------------
// Value-level conveniences (measurement without training)
// ---------------------------------------------------------------------------

pub fn ssim(y: &Tensor, yhat: &Tensor, cfg: &SsimConfig) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let a = g.input(y);
    let b = g.input(yhat);
    let s = ssim_node(&mut g, a, b, cfg)?;
    Ok(g.value(s).item())
}

pub fn dssim(y: &Tensor, yhat: &Tensor, cfg: &SsimConfig) -> Result<f64, LossError> {
    Ok((1.0 - ssim(y, yhat, cfg)?) / 2.0)
}

pub fn mse(y: &Tensor, yhat: &Tensor) -> Result<f64, LossError> {
    let mut g = Graph::new();
    let a = g.input(y);
    let b = g.input(yhat);
    let m = mse_node(&mut g, a, b)?;
    Ok(g.value(m).item())
}
