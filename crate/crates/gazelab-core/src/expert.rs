//! Small trainable gaze predictor: three stride-2 conv blocks and two
//! dense layers ending in pitch/yaw regression heads. Trained on
//! synthetic data, then frozen for use inside the gaze loss and for
//! evaluation. Two independently seeded instances keep the training
//! expert and the evaluation expert separate.

use crate::losses::{angle_between_nodes, gaze_vector_nodes, GazeAngles, LossError};
use crate::rng::Rng64;
use crate::synth::Sample;
use crate::tensor::{
    adam_step, AdamConfig, AdamState, Graph, NodeId, ParamSet, Tensor, TensorError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("training dataset is empty (no gaze-labeled samples)")]
    EmptyDataset,
    #[error("expert checkpoint at {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

const CONV_CHANNELS: [usize; 3] = [8, 16, 32];
const FC_WIDTH: usize = 64;
const LEAKY_SLOPE: f64 = 0.1;

/// Frozen or trainable gaze predictor.
#[derive(Clone, Debug)]
pub struct ExpertModel {
    pub params: ParamSet,
    pub input_size: usize,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    pub frozen: bool,
}

/// Graph bindings for one expert instance. Frozen experts bind as
/// constants, so backward reaches their inputs but never their weights.
pub struct ExpertBinding {
    nodes: BTreeMap<String, NodeId>,
    mean: NodeId,
    inv_std: NodeId,
}

fn flat_features(input_size: usize) -> usize {
    let side = input_size / 8; // three stride-2 halvings
    CONV_CHANNELS[2] * side * side
}

impl ExpertModel {
    /// Randomly initialized, unfrozen expert.
    pub fn new(seed: u64, input_size: usize) -> ExpertModel {
        assert!(
            input_size % 8 == 0 && input_size >= 16,
            "expert input size must be a multiple of 8 and >= 16"
        );
        let mut rng = Rng64::new(seed).child(0x657870); // expert stream
        let mut params = ParamSet::new(seed);
        let mut conv_in = 3;
        for (i, &c_out) in CONV_CHANNELS.iter().enumerate() {
            params.insert(
                format!("conv{}.w", i + 1),
                init_uniform(&mut rng, vec![c_out, conv_in, 3, 3], conv_in * 9),
            );
            params.insert(format!("conv{}.b", i + 1), Tensor::zeros(vec![c_out]));
            conv_in = c_out;
        }
        let flat = flat_features(input_size);
        params.insert(
            "fc1.w".to_string(),
            init_uniform(&mut rng, vec![FC_WIDTH, flat], flat),
        );
        params.insert("fc1.b".to_string(), Tensor::zeros(vec![FC_WIDTH]));
        // small head init keeps early logits near the squash midpoint
        let mut head = init_uniform(&mut rng, vec![2, FC_WIDTH], FC_WIDTH);
        for v in head.data_mut() {
            *v *= 0.1;
        }
        params.insert("head.w".to_string(), head);
        params.insert("head.b".to_string(), Tensor::zeros(vec![2]));
        ExpertModel {
            params,
            input_size,
            norm_mean: [0.0; 3],
            norm_std: [1.0; 3],
            frozen: false,
        }
    }

    /// Freeze (idempotent). A frozen expert still passes gradients to
    /// its inputs but its parameters bind as constants.
    pub fn freeze(mut self) -> ExpertModel {
        self.frozen = true;
        self
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Bind parameters plus normalization constants into a graph.
    pub fn bind(&self, g: &mut Graph) -> ExpertBinding {
        let nodes = if self.frozen {
            self.params.bind_frozen(g)
        } else {
            self.params
                .iter()
                .map(|(name, t)| (name.clone(), g.param(&format!("expert.{name}"), t)))
                .collect()
        };
        let s = self.input_size;
        let mut mean = Vec::with_capacity(3 * s * s);
        let mut inv_std = Vec::with_capacity(3 * s * s);
        for ch in 0..3 {
            mean.extend(std::iter::repeat(self.norm_mean[ch]).take(s * s));
            inv_std.extend(std::iter::repeat(1.0 / self.norm_std[ch]).take(s * s));
        }
        let mean = g.input(&Tensor::new(vec![3, s, s], mean));
        let inv_std = g.input(&Tensor::new(vec![3, s, s], inv_std));
        ExpertBinding {
            nodes,
            mean,
            inv_std,
        }
    }

    /// Bilinear resize to the expert's input size, then per-channel
    /// (x - mean) / std. Differentiable.
    pub fn preprocess_node(
        &self,
        g: &mut Graph,
        b: &ExpertBinding,
        image: NodeId,
    ) -> Result<NodeId, TensorError> {
        let resized = g.resize_bilinear(image, self.input_size, self.input_size)?;
        let centered = g.sub(resized, b.mean)?;
        g.mul(centered, b.inv_std)
    }

    /// Full forward pass: returns (pitch, yaw) scalar nodes. Yaw is
    /// squashed onto [0, pi/2] through a sigmoid.
    pub fn forward_nodes(
        &self,
        g: &mut Graph,
        b: &ExpertBinding,
        image: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let mut x = self.preprocess_node(g, b, image)?;
        for i in 1..=CONV_CHANNELS.len() {
            let w = b.nodes[&format!("conv{i}.w")];
            let bias = b.nodes[&format!("conv{i}.b")];
            x = g.conv2d(x, w, 2, 1)?;
            x = g.bias_channels(x, bias)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let flat = flat_features(self.input_size);
        let v = g.reshape(x, vec![flat])?;
        let h = g.matvec(b.nodes["fc1.w"], v)?;
        let h = g.add(h, b.nodes["fc1.b"])?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let out = g.matvec(b.nodes["head.w"], h)?;
        let out = g.add(out, b.nodes["head.b"])?;
        let pitch = g.slice0(out, 0, 1)?;
        let yaw_raw = g.slice0(out, 1, 1)?;
        let yaw_sig = g.sigmoid(yaw_raw);
        let yaw = g.mul_scalar(yaw_sig, std::f64::consts::FRAC_PI_2);
        Ok((pitch, yaw))
    }

    /// Pure value-level prediction.
    pub fn predict(&self, image: &Tensor) -> Result<GazeAngles, TensorError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let img = g.input(image);
        let (p, y) = self.forward_nodes(&mut g, &b, img)?;
        Ok(GazeAngles::new(g.value(p).item(), g.value(y).item()))
    }

    /// Checkpoint: parameters in the standard binary format plus a JSON
    /// sidecar with preprocessing stats and training metadata.
    pub fn save(&self, dir: &Path, stem: &str, meta: &ExpertSidecar) -> Result<(), ExpertError> {
        std::fs::create_dir_all(dir).map_err(|e| ExpertError::Checkpoint {
            path: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        self.params.save(&dir.join(format!("{stem}.gzlbp")))?;
        let json = serde_json::to_string_pretty(meta).expect("sidecar serializes");
        std::fs::write(dir.join(format!("{stem}.json")), json).map_err(|e| {
            ExpertError::Checkpoint {
                path: dir.display().to_string(),
                msg: e.to_string(),
            }
        })?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<(ExpertModel, ExpertSidecar), ExpertError> {
        let ck = dir.join(format!("{stem}.gzlbp"));
        let side = dir.join(format!("{stem}.json"));
        let missing = |p: &Path, what: &str| ExpertError::Checkpoint {
            path: p.display().to_string(),
            msg: format!("{what} not found; run `train-expert` first"),
        };
        if !ck.exists() {
            return Err(missing(&ck, "expert checkpoint"));
        }
        if !side.exists() {
            return Err(missing(&side, "expert sidecar"));
        }
        let params = ParamSet::load(&ck)?;
        let text = std::fs::read_to_string(&side).map_err(|e| ExpertError::Checkpoint {
            path: side.display().to_string(),
            msg: e.to_string(),
        })?;
        let meta: ExpertSidecar =
            serde_json::from_str(&text).map_err(|e| ExpertError::Checkpoint {
                path: side.display().to_string(),
                msg: e.to_string(),
            })?;
        let mut params = params;
        params.rng_seed = meta.seed;
        Ok((
            ExpertModel {
                params,
                input_size: meta.input_size,
                norm_mean: meta.norm_mean,
                norm_std: meta.norm_std,
                frozen: true,
            },
            meta,
        ))
    }
}

fn init_uniform(rng: &mut Rng64, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.jitter(limit)).collect();
    Tensor::new(shape, data)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpertSidecar {
    pub input_size: usize,
    pub norm_mean: [f64; 3],
    pub norm_std: [f64; 3],
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub final_train_error_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertTrainConfig {
    pub input_size: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Stop once the running training error first reaches this level;
    /// mimics a deliberately imperfect off-the-shelf predictor.
    pub stop_at_error_deg: Option<f64>,
}

impl Default for ExpertTrainConfig {
    fn default() -> Self {
        ExpertTrainConfig {
            input_size: 64,
            iterations: 1500,
            batch_size: 16,
            lr: 1e-3,
            stop_at_error_deg: None,
        }
    }
}

/// Train an expert on labeled samples by minimizing the mean angle
/// between predicted and ground-truth gaze vectors. Deterministic for
/// a fixed seed.
pub fn train_expert(
    samples: &[Sample],
    cfg: &ExpertTrainConfig,
    seed: u64,
) -> Result<ExpertModel, ExpertError> {
    if samples.is_empty() {
        return Err(ExpertError::EmptyDataset);
    }
    let mut model = ExpertModel::new(seed, cfg.input_size);
    // normalization stats from the training split
    let mut mean = [0.0f64; 3];
    let mut var = [0.0f64; 3];
    let plane = samples[0].image.numel() / 3;
    let total = (samples.len() * plane) as f64;
    for s in samples {
        for ch in 0..3 {
            for &v in &s.image.data()[ch * plane..(ch + 1) * plane] {
                mean[ch] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= total;
    }
    for s in samples {
        for ch in 0..3 {
            for &v in &s.image.data()[ch * plane..(ch + 1) * plane] {
                var[ch] += (v - mean[ch]) * (v - mean[ch]);
            }
        }
    }
    model.norm_mean = mean;
    model.norm_std = [
        (var[0] / total).sqrt().max(1e-6),
        (var[1] / total).sqrt().max(1e-6),
        (var[2] / total).sqrt().max(1e-6),
    ];

    let mut batch_rng = Rng64::new(seed).child(0x657862); // batch stream
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut running_err_deg = f64::INFINITY;

    for _it in 0..cfg.iterations {
        let mut g = Graph::new();
        let binding = model.bind(&mut g);
        let mut loss_sum: Option<NodeId> = None;
        let mut theta_deg_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let s = &samples[batch_rng.below(samples.len())];
            let img = g.input(&s.image);
            let (p, y) = model.forward_nodes(&mut g, &binding, img)?;
            let v_pred = gaze_vector_nodes(&mut g, p, y)?;
            let lv = s.gaze.to_vector();
            let v_true = (
                g.constant_scalar(lv.x),
                g.constant_scalar(lv.y),
                g.constant_scalar(lv.z),
            );
            // squared chord distance |V_pred - V_true|^2 = 2(1 - cos theta):
            // same minimizer as the angle, smooth bounded gradients
            // everywhere (no arccos blowup at aligned or opposed vectors)
            let dx = g.sub(v_pred.0, v_true.0)?;
            let dy = g.sub(v_pred.1, v_true.1)?;
            let dz = g.sub(v_pred.2, v_true.2)?;
            let sq = {
                let x2 = g.square(dx);
                let y2 = g.square(dy);
                let z2 = g.square(dz);
                let s2 = g.add(x2, y2)?;
                g.add(s2, z2)?
            };
            loss_sum = Some(match loss_sum {
                None => sq,
                Some(acc) => g.add(acc, sq)?,
            });
            let theta = angle_between_nodes(&mut g, v_pred, v_true)?;
            theta_deg_sum += crate::losses::degrees(g.value(theta).item());
        }
        let sum = loss_sum.expect("batch size > 0");
        let loss = g.mul_scalar(sum, 1.0 / cfg.batch_size as f64);
        let batch_theta_deg = theta_deg_sum / cfg.batch_size as f64;
        running_err_deg = if running_err_deg.is_finite() {
            0.9 * running_err_deg + 0.1 * batch_theta_deg
        } else {
            batch_theta_deg
        };
        if let Some(target) = cfg.stop_at_error_deg {
            if running_err_deg <= target {
                break;
            }
        }
        let grads = g.backward(loss)?;
        let mut by_name = BTreeMap::new();
        for (full, t) in g.param_grads(&grads) {
            let name = full.strip_prefix("expert.").unwrap_or(&full).to_string();
            by_name.insert(name, t);
        }
        adam_step(&mut model.params, &by_name, &adam_cfg, &mut adam)?;
    }
    Ok(model)
}

/// Mean angular error (degrees) of an expert over samples.
pub fn mean_error_deg(model: &ExpertModel, samples: &[Sample]) -> Result<f64, ExpertError> {
    if samples.is_empty() {
        return Err(ExpertError::EmptyDataset);
    }
    let mut sum = 0.0;
    for s in samples {
        let pred = model.predict(&s.image)?;
        sum += crate::losses::degrees(crate::losses::gaze_angle_error(pred, s.gaze));
    }
    Ok(sum / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_face, sample_identity};

    fn tiny_samples(n: usize, size: usize) -> Vec<Sample> {
        let mut rng = Rng64::new(8);
        let id = sample_identity(&mut rng, size, 0);
        (0..n)
            .map(|i| {
                let gaze = crate::synth::sample_gaze(&mut rng);
                let mut s = render_face(&id, gaze, i as u64, size).unwrap();
                s.frame_index = i as u32;
                s
            })
            .collect()
    }

    #[test]
    fn untrained_predict_is_deterministic() {
        let samples = tiny_samples(1, 32);
        let m1 = ExpertModel::new(3, 32);
        let m2 = ExpertModel::new(3, 32);
        let a = m1.predict(&samples[0].image).unwrap();
        let b = m2.predict(&samples[0].image).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_total_and_in_range() {
        let samples = tiny_samples(20, 32);
        let m = ExpertModel::new(5, 32);
        for s in &samples {
            let p = m.predict(&s.image).unwrap();
            assert!(p.pitch.is_finite() && p.yaw.is_finite());
            assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&p.yaw));
        }
    }

    #[test]
    fn preprocess_constant_image_with_matching_mean_is_zero() {
        let mut m = ExpertModel::new(1, 32);
        m.norm_mean = [0.4, 0.4, 0.4];
        m.norm_std = [1.0, 1.0, 1.0];
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let img = g.input(&Tensor::full(vec![3, 32, 32], 0.4));
        let out = m.preprocess_node(&mut g, &b, img).unwrap();
        for &v in g.value(out).data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn freeze_is_idempotent_and_stops_param_grads() {
        let m = ExpertModel::new(7, 32).freeze().freeze();
        assert!(m.frozen);
        let samples = tiny_samples(1, 32);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let img = g.variable(&samples[0].image);
        let (p, y) = m.forward_nodes(&mut g, &b, img).unwrap();
        let s = g.add(p, y).unwrap();
        let grads = g.backward(s).unwrap();
        // no registered params at all when frozen
        assert!(g.registered_params().is_empty());
        // but the input still receives gradient
        let gi = grads.wrt(img).unwrap();
        assert!(gi.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(
            train_expert(&[], &ExpertTrainConfig::default(), 1),
            Err(ExpertError::EmptyDataset)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let samples = tiny_samples(12, 32);
        let cfg = ExpertTrainConfig {
            input_size: 32,
            iterations: 5,
            batch_size: 4,
            lr: 1e-3,
            stop_at_error_deg: None,
        };
        let a = train_expert(&samples, &cfg, 42).unwrap();
        let b = train_expert(&samples, &cfg, 42).unwrap();
        assert_eq!(a.params.to_bytes(), b.params.to_bytes());
        assert_eq!(a.norm_mean, b.norm_mean);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = ExpertModel::new(11, 32).freeze();
        let meta = ExpertSidecar {
            input_size: 32,
            norm_mean: m.norm_mean,
            norm_std: m.norm_std,
            seed: 11,
            iterations: 0,
            batch_size: 16,
            lr: 1e-3,
            final_train_error_deg: 0.0,
        };
        let dir = std::env::temp_dir().join("gazelab_expert_test");
        std::fs::create_dir_all(&dir).unwrap();
        m.save(&dir, "train", &meta).unwrap();
        let (back, meta2) = ExpertModel::load(&dir, "train").unwrap();
        assert_eq!(back.params.to_bytes(), m.params.to_bytes());
        assert_eq!(meta2.input_size, 32);
        assert!(back.frozen);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let err = ExpertModel::load(Path::new("/nonexistent_dir"), "train").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent_dir") && msg.contains("train-expert"), "{msg}");
    }
}
