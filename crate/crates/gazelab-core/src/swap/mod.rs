//! The LIAE dual-intermediate autoencoder.
//!
//! One shared encoder feeds two intermediate dense maps. The original
//! face decodes from `inter_ab(z) || inter_b(z)`; the character face
//! decodes from `inter_ab(z)` concatenated with a copy of itself. Face
//! swapping runs the character path on an original face, so the
//! identity baked into `inter_ab` and the decoder replaces the
//! original's while the attributes in the code survive.

mod train;

pub use train::{
    run_experiment, train, train_phase, ExperimentPlan, LossHistory, LossRecord, RunArtifacts,
    TrainData, TrainSchedule,
};

use crate::expert::ExpertError;
use crate::losses::LossError;
use crate::rng::Rng64;
use crate::synth::SynthError;
use crate::tensor::{Graph, NodeId, ParamSet, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SwapError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("pair phase requires exactly 2 identities, got {0}")]
    PairIdentityCount(usize),
    #[error("condition `{0}` needs a training expert but none was provided")]
    ExpertRequired(String),
    #[error("checkpoint at {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("run i/o at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

const LEAKY_SLOPE: f64 = 0.1;

/// Network dimensions. The decoder upsamples three times from S/8 back
/// to S; `full_res_conv` toggles a 3x3 mixing conv at full resolution
/// before the 1x1 output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub image_size: usize,
    pub latent_dim: usize,
    pub enc_channels: [usize; 3],
    pub dec_channels: [usize; 4],
    pub full_res_conv: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 64,
            latent_dim: 128,
            enc_channels: [6, 8, 12],
            dec_channels: [12, 10, 8, 6],
            full_res_conv: false,
        }
    }
}

impl ArchConfig {
    pub fn base_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn validate(&self) -> Result<(), SwapError> {
        if self.image_size % 8 != 0 || self.image_size < 16 {
            return Err(SwapError::Checkpoint {
                path: "(arch)".into(),
                msg: format!("image size {} must be a multiple of 8, >= 16", self.image_size),
            });
        }
        Ok(())
    }
}

/// Graph bindings for one model instance (params registered under
/// `enc.` / `iab.` / `ib.` / `dec.` prefixes).
pub struct LiaeBinding {
    enc: BTreeMap<String, NodeId>,
    iab: BTreeMap<String, NodeId>,
    ib: BTreeMap<String, NodeId>,
    dec: BTreeMap<String, NodeId>,
}

/// LIAE model: encoder, the two intermediates and the decoder.
#[derive(Debug)]
pub struct LiaeModel {
    pub encoder: ParamSet,
    pub inter_ab: ParamSet,
    pub inter_b: ParamSet,
    pub decoder: ParamSet,
    pub latent_dim: usize,
    pub arch: ArchConfig,
    /// Evaluation count of the original-identity intermediate; the
    /// swap path must never touch it.
    ib_evals: AtomicU64,
}

impl Clone for LiaeModel {
    fn clone(&self) -> Self {
        LiaeModel {
            encoder: self.encoder.clone(),
            inter_ab: self.inter_ab.clone(),
            inter_b: self.inter_b.clone(),
            decoder: self.decoder.clone(),
            latent_dim: self.latent_dim,
            arch: self.arch.clone(),
            ib_evals: AtomicU64::new(self.ib_evals.load(Ordering::Relaxed)),
        }
    }
}

fn init_uniform(rng: &mut Rng64, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.jitter(limit)).collect())
}

impl LiaeModel {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<LiaeModel, SwapError> {
        arch.validate()?;
        let mut rng = Rng64::new(seed).child(0x6c696165); // liae stream
        let base = arch.base_size();
        let latent = arch.latent_dim;

        let mut encoder = ParamSet::new(seed);
        let mut c_in = 3;
        for (i, &c_out) in arch.enc_channels.iter().enumerate() {
            encoder.insert(
                format!("conv{}.w", i + 1),
                init_uniform(&mut rng, vec![c_out, c_in, 3, 3], c_in * 9),
            );
            encoder.insert(format!("conv{}.b", i + 1), Tensor::zeros(vec![c_out]));
            c_in = c_out;
        }
        let enc_flat = arch.enc_channels[2] * base * base;
        encoder.insert(
            "fc.w".to_string(),
            init_uniform(&mut rng, vec![latent, enc_flat], enc_flat),
        );
        encoder.insert("fc.b".to_string(), Tensor::zeros(vec![latent]));

        let mut inter_ab = ParamSet::new(seed);
        inter_ab.insert(
            "fc.w".to_string(),
            init_uniform(&mut rng, vec![latent, latent], latent),
        );
        inter_ab.insert("fc.b".to_string(), Tensor::zeros(vec![latent]));

        let mut inter_b = ParamSet::new(seed);
        inter_b.insert(
            "fc.w".to_string(),
            init_uniform(&mut rng, vec![latent, latent], latent),
        );
        inter_b.insert("fc.b".to_string(), Tensor::zeros(vec![latent]));

        let mut decoder = ParamSet::new(seed);
        let dec_flat = arch.dec_channels[0] * base * base;
        decoder.insert(
            "fc.w".to_string(),
            init_uniform(&mut rng, vec![dec_flat, 2 * latent], 2 * latent),
        );
        decoder.insert("fc.b".to_string(), Tensor::zeros(vec![dec_flat]));
        for i in 0..2 {
            let (ci, co) = (arch.dec_channels[i], arch.dec_channels[i + 1]);
            decoder.insert(
                format!("conv{}.w", i + 1),
                init_uniform(&mut rng, vec![co, ci, 3, 3], ci * 9),
            );
            decoder.insert(format!("conv{}.b", i + 1), Tensor::zeros(vec![co]));
        }
        let head_in = if arch.full_res_conv {
            let (ci, co) = (arch.dec_channels[2], arch.dec_channels[3]);
            decoder.insert(
                "conv3.w".to_string(),
                init_uniform(&mut rng, vec![co, ci, 3, 3], ci * 9),
            );
            decoder.insert("conv3.b".to_string(), Tensor::zeros(vec![co]));
            co
        } else {
            arch.dec_channels[2]
        };
        decoder.insert(
            "head.w".to_string(),
            init_uniform(&mut rng, vec![4, head_in, 1, 1], head_in),
        );
        decoder.insert("head.b".to_string(), Tensor::zeros(vec![4]));

        Ok(LiaeModel {
            encoder,
            inter_ab,
            inter_b,
            decoder,
            latent_dim: latent,
            arch: arch.clone(),
            ib_evals: AtomicU64::new(0),
        })
    }

    pub fn ib_eval_count(&self) -> u64 {
        self.ib_evals.load(Ordering::Relaxed)
    }

    pub fn reset_ib_eval_count(&self) {
        self.ib_evals.store(0, Ordering::Relaxed);
    }

    pub fn bind(&self, g: &mut Graph) -> LiaeBinding {
        LiaeBinding {
            enc: self.encoder.bind(g, "enc."),
            iab: self.inter_ab.bind(g, "iab."),
            ib: self.inter_b.bind(g, "ib."),
            dec: self.decoder.bind(g, "dec."),
        }
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        image: NodeId,
    ) -> Result<NodeId, TensorError> {
        let mut x = image;
        for i in 1..=3 {
            let w = b.enc[&format!("enc.conv{i}.w")];
            let bias = b.enc[&format!("enc.conv{i}.b")];
            x = g.conv2d(x, w, 2, 1)?;
            x = g.bias_channels(x, bias)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let base = self.arch.base_size();
        let flat = self.arch.enc_channels[2] * base * base;
        let v = g.reshape(x, vec![flat])?;
        let z = g.matvec(b.enc["enc.fc.w"], v)?;
        g.add(z, b.enc["enc.fc.b"])
    }

    pub fn apply_inter_ab(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        z: NodeId,
    ) -> Result<NodeId, TensorError> {
        let h = g.matvec(b.iab["iab.fc.w"], z)?;
        let h = g.add(h, b.iab["iab.fc.b"])?;
        Ok(g.leaky_relu(h, LEAKY_SLOPE))
    }

    pub fn apply_inter_b(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        z: NodeId,
    ) -> Result<NodeId, TensorError> {
        self.ib_evals.fetch_add(1, Ordering::Relaxed);
        let h = g.matvec(b.ib["ib.fc.w"], z)?;
        let h = g.add(h, b.ib["ib.fc.b"])?;
        Ok(g.leaky_relu(h, LEAKY_SLOPE))
    }

    /// Decode a concatenated latent pair into (image, mask) nodes.
    /// The last decoder channel becomes the face mask through a sigmoid;
    /// image channels pass through the same squashing into [0,1].
    pub fn decode(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        z_pair: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let base = self.arch.base_size();
        let h = g.matvec(b.dec["dec.fc.w"], z_pair)?;
        let h = g.add(h, b.dec["dec.fc.b"])?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let mut x = g.reshape(h, vec![self.arch.dec_channels[0], base, base])?;
        for i in 1..=2 {
            let (oh, ow) = (base << i, base << i);
            x = g.resize_bilinear(x, oh, ow)?;
            let w = b.dec[&format!("dec.conv{i}.w")];
            let bias = b.dec[&format!("dec.conv{i}.b")];
            x = g.conv2d(x, w, 1, 1)?;
            x = g.bias_channels(x, bias)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let s = self.arch.image_size;
        x = g.resize_bilinear(x, s, s)?;
        if self.arch.full_res_conv {
            let w = b.dec["dec.conv3.w"];
            let bias = b.dec["dec.conv3.b"];
            x = g.conv2d(x, w, 1, 1)?;
            x = g.bias_channels(x, bias)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        let out = g.conv2d(x, b.dec["dec.head.w"], 1, 0)?;
        let out = g.bias_channels(out, b.dec["dec.head.b"])?;
        let out = g.sigmoid(out);
        let image = g.slice0(out, 0, 3)?;
        let mask = g.slice0(out, 3, 1)?;
        Ok((image, mask))
    }

    /// Original-face reconstruction path:
    /// D(I_AB(E(Y)) || I_B(E(Y))).
    pub fn forward_orig(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        image: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let z = self.encode(g, b, image)?;
        let z_ab = self.apply_inter_ab(g, b, z)?;
        let z_b = self.apply_inter_b(g, b, z)?;
        let pair = g.concat0(z_ab, z_b)?;
        self.decode(g, b, pair)
    }

    /// Character-face reconstruction path, which is also the swap path:
    /// D(I_AB(E(Y)) || I_AB(E(Y))) with the code concatenated onto a
    /// copy of itself. I_B is never evaluated here.
    pub fn forward_char(
        &self,
        g: &mut Graph,
        b: &LiaeBinding,
        image: NodeId,
    ) -> Result<(NodeId, NodeId), TensorError> {
        let z = self.encode(g, b, image)?;
        let z_ab = self.apply_inter_ab(g, b, z)?;
        let pair = g.concat0(z_ab, z_ab)?;
        self.decode(g, b, pair)
    }

    /// Train-time reconstruction of both faces.
    pub fn reconstruct_train(
        &self,
        y_orig: &Tensor,
        y_char: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor), TensorError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let yo = g.input(y_orig);
        let yc = g.input(y_char);
        let (ro, mo) = self.forward_orig(&mut g, &b, yo)?;
        let (rc, mc) = self.forward_char(&mut g, &b, yc)?;
        Ok((
            g.value(ro).clone(),
            g.value(mo).clone(),
            g.value(rc).clone(),
            g.value(mc).clone(),
        ))
    }

    /// Face swap: run the character path on an original face.
    pub fn swap(&self, y_orig: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let y = g.input(y_orig);
        let (img, mask) = self.forward_char(&mut g, &b, y)?;
        Ok((g.value(img).clone(), g.value(mask).clone()))
    }

    /// All four parameter sets under one checkpoint with prefixes.
    pub fn to_param_set(&self) -> ParamSet {
        let mut all = ParamSet::new(self.encoder.rng_seed);
        for (prefix, set) in [
            ("enc.", &self.encoder),
            ("iab.", &self.inter_ab),
            ("ib.", &self.inter_b),
            ("dec.", &self.decoder),
        ] {
            for (name, t) in set.iter() {
                all.insert(format!("{prefix}{name}"), t.clone());
            }
        }
        all
    }

    pub fn from_param_set(all: &ParamSet, arch: &ArchConfig) -> Result<LiaeModel, SwapError> {
        let mut model = LiaeModel::new(arch, all.rng_seed)?;
        for (full, t) in all.iter() {
            let (set, key) = if let Some(k) = full.strip_prefix("enc.") {
                (&mut model.encoder, k)
            } else if let Some(k) = full.strip_prefix("iab.") {
                (&mut model.inter_ab, k)
            } else if let Some(k) = full.strip_prefix("ib.") {
                (&mut model.inter_b, k)
            } else if let Some(k) = full.strip_prefix("dec.") {
                (&mut model.decoder, k)
            } else {
                return Err(SwapError::Checkpoint {
                    path: "(memory)".into(),
                    msg: format!("unknown parameter prefix in `{full}`"),
                });
            };
            if set.get(key).map(|cur| cur.shape() != t.shape()).unwrap_or(true) {
                return Err(SwapError::Checkpoint {
                    path: "(memory)".into(),
                    msg: format!("parameter `{full}` does not fit the architecture"),
                });
            }
            set.insert(key, t.clone());
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SwapError> {
        self.to_param_set().save(path).map_err(SwapError::from)
    }

    pub fn load(path: &Path, arch: &ArchConfig) -> Result<LiaeModel, SwapError> {
        if !path.exists() {
            return Err(SwapError::Checkpoint {
                path: path.display().to_string(),
                msg: "checkpoint not found; run `train-swap` or `experiment` first".into(),
            });
        }
        let all = ParamSet::load(path)?;
        LiaeModel::from_param_set(&all, arch)
    }

    /// Apply named gradients (full prefixed names) through Adam.
    pub fn apply_grads(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        cfg: &crate::tensor::AdamConfig,
        state: &mut crate::tensor::AdamState,
    ) -> Result<(), SwapError> {
        state.begin_step();
        for (full, grad) in grads {
            let (set, key) = if let Some(k) = full.strip_prefix("enc.") {
                (&mut self.encoder, k)
            } else if let Some(k) = full.strip_prefix("iab.") {
                (&mut self.inter_ab, k)
            } else if let Some(k) = full.strip_prefix("ib.") {
                (&mut self.inter_b, k)
            } else if let Some(k) = full.strip_prefix("dec.") {
                (&mut self.decoder, k)
            } else {
                continue;
            };
            if let Some(p) = set.get_mut(key) {
                crate::tensor::adam_update_single(full, p, grad, cfg, state)?;
            }
        }
        Ok(())
    }
}
