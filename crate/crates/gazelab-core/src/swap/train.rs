//! Two-phase training schedule and the (pair x condition) experiment
//! driver.
//!
//! Phase 1 pretrains on the pooled multi-identity corpus with samples
//! drawn into both branch roles uniformly at random; phase 2 trains on
//! the identity pair. Phase 1 streams are keyed by (seed, loss
//! profile) only, never by pair, so conditions sharing a phase-1 loss
//! profile share the pretrained weights bit for bit and the driver
//! computes each distinct pretrain exactly once.

use super::{ArchConfig, LiaeModel, SwapError};
use crate::expert::ExpertModel;
use crate::losses::{
    branch_loss_node, BranchInputs, BranchLossValues, Condition, LossError, LossWeights, Phase,
    SsimConfig,
};
use crate::rng::Rng64;
use crate::synth::{write_raster, Dataset, Sample};
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub pretrain_iters: u64,
    pub pair_iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub condition: Condition,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            pretrain_iters: 5_000,
            pair_iters: 1_000,
            batch_size: 8,
            lr: 1e-3,
            condition: Condition::Baseline,
            seed: 0,
            log_every: 50,
        }
    }
}

/// One logged step: loss components per branch. Disabled terms log as
/// zero.
#[derive(Clone, Debug, Serialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub phase: &'static str,
    pub total: f64,
    pub core_orig: f64,
    pub core_char: f64,
    pub em_orig: f64,
    pub em_char: f64,
    pub gaze_orig: f64,
    pub gaze_char: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,phase,total,core_orig,core_char,em_orig,em_char,gaze_orig,gaze_char\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.phase,
                r.total,
                r.core_orig,
                r.core_char,
                r.em_orig,
                r.em_char,
                r.gaze_orig,
                r.gaze_char
            ));
        }
        out
    }

    pub fn totals_for_phase(&self, phase: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.total)
            .collect()
    }
}

/// Sample pools for the two phases.
pub struct TrainData<'a> {
    pub pretrain: Vec<&'a Sample>,
    pub pair_orig: Vec<&'a Sample>,
    pub pair_char: Vec<&'a Sample>,
}

impl<'a> TrainData<'a> {
    /// Pools for pair `i`: identities 2i (original) and 2i+1
    /// (character); pretraining uses the whole corpus.
    pub fn for_pair(dataset: &'a Dataset, pair_index: usize) -> TrainData<'a> {
        let orig_id = (2 * pair_index) as u32;
        let char_id = (2 * pair_index + 1) as u32;
        TrainData {
            pretrain: dataset.samples.iter().collect(),
            pair_orig: dataset
                .samples
                .iter()
                .filter(|s| s.identity_id == orig_id)
                .collect(),
            pair_char: dataset
                .samples
                .iter()
                .filter(|s| s.identity_id == char_id)
                .collect(),
        }
    }

    fn validate_pair(&self) -> Result<(), SwapError> {
        let mut ids: Vec<u32> = self
            .pair_orig
            .iter()
            .chain(self.pair_char.iter())
            .map(|s| s.identity_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != 2 || self.pair_orig.is_empty() || self.pair_char.is_empty() {
            return Err(SwapError::PairIdentityCount(ids.len()));
        }
        Ok(())
    }
}

struct StepOutcome {
    total: f64,
    orig: BranchLossValues,
    char_: BranchLossValues,
}

fn mask_plane(m: &Tensor) -> Tensor {
    let (h, w) = (m.shape()[0], m.shape()[1]);
    Tensor::new(vec![1, h, w], m.data().to_vec())
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut LiaeModel,
    orig_items: &[&Sample],
    char_items: &[&Sample],
    w: &LossWeights,
    expert: Option<&ExpertModel>,
    cfg: &SsimConfig,
    adam_cfg: &AdamConfig,
    adam: &mut AdamState,
) -> Result<StepOutcome, SwapError> {
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let exp_binding = match (w.gaze_enabled, expert) {
        (true, Some(e)) => Some((e, e.bind(&mut g))),
        (true, None) => unreachable!("checked by caller"),
        _ => None,
    };

    let mut branch_total: Option<crate::tensor::NodeId> = None;
    let mut acc_orig = BranchLossValues::default();
    let mut acc_char = BranchLossValues::default();

    for (items, is_orig) in [(orig_items, true), (char_items, false)] {
        let mut branch_sum: Option<crate::tensor::NodeId> = None;
        for s in items {
            let y = g.input(&s.image);
            let (yhat, m_hat) = if is_orig {
                model.forward_orig(&mut g, &binding, y)?
            } else {
                model.forward_char(&mut g, &binding, y)?
            };
            let inputs = BranchInputs {
                y,
                yhat,
                m_face: g.input(&mask_plane(&s.mask_face)),
                m_face_hat: m_hat,
                m_em: g.input(&s.mask_em.tile_channels(3)),
                m_eyes: g.input(&s.mask_eyes.tile_channels(3)),
            };
            let mut fwd = |g: &mut Graph,
                           img: crate::tensor::NodeId|
             -> Result<(crate::tensor::NodeId, crate::tensor::NodeId), LossError> {
                let (e, b) = exp_binding.as_ref().expect("gaze loss needs an expert");
                e.forward_nodes(g, b, img).map_err(LossError::from)
            };
            let (node, values) = branch_loss_node(&mut g, &inputs, &mut fwd, w, cfg)?;
            let acc = if is_orig { &mut acc_orig } else { &mut acc_char };
            acc.core += values.core;
            acc.em += values.em;
            acc.gaze += values.gaze;
            branch_sum = Some(match branch_sum {
                None => node,
                Some(prev) => g.add(prev, node)?,
            });
        }
        if let Some(sum) = branch_sum {
            let mean = g.mul_scalar(sum, 1.0 / items.len() as f64);
            branch_total = Some(match branch_total {
                None => mean,
                Some(prev) => g.add(prev, mean)?,
            });
            let n = items.len() as f64;
            let acc = if is_orig { &mut acc_orig } else { &mut acc_char };
            acc.core /= n;
            acc.em /= n;
            acc.gaze /= n;
        }
    }

    let loss = branch_total.expect("at least one branch item");
    let total = g.value(loss).item();
    let grads = g.backward(loss)?;
    let by_name = g.param_grads(&grads);
    model.apply_grads(&by_name, adam_cfg, adam)?;
    Ok(StepOutcome {
        total,
        orig: acc_orig,
        char_: acc_char,
    })
}

fn draw<'a>(pool: &[&'a Sample], n: usize, rng: &mut Rng64) -> Vec<&'a Sample> {
    (0..n).map(|_| pool[rng.below(pool.len())]).collect()
}

/// Run one training phase in place, appending to `history`.
#[allow(clippy::too_many_arguments)]
pub fn train_phase(
    model: &mut LiaeModel,
    phase: Phase,
    data: &TrainData,
    iters: u64,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    expert: Option<&ExpertModel>,
    rng: &mut Rng64,
    history: &mut LossHistory,
    iter_offset: u64,
) -> Result<(), SwapError> {
    if iters == 0 {
        return Ok(());
    }
    let w = schedule.condition.weights_for_phase(weights, phase);
    w.validate()?;
    if w.gaze_enabled && expert.is_none() {
        return Err(SwapError::ExpertRequired(
            schedule.condition.dir_name().to_string(),
        ));
    }
    if phase == Phase::Pair {
        data.validate_pair()?;
    }
    let cfg = SsimConfig::default_for_image(model.arch.image_size);
    let adam_cfg = AdamConfig::with_lr(schedule.lr);
    let mut adam = AdamState::new();
    let phase_name = match phase {
        Phase::Pretrain => "pretrain",
        Phase::Pair => "pair",
    };
    for it in 0..iters {
        let (orig_items, char_items) = match phase {
            Phase::Pretrain => (
                draw(&data.pretrain, schedule.batch_size, rng),
                draw(&data.pretrain, schedule.batch_size, rng),
            ),
            Phase::Pair => (
                draw(&data.pair_orig, schedule.batch_size, rng),
                draw(&data.pair_char, schedule.batch_size, rng),
            ),
        };
        let out = train_step(
            model,
            &orig_items,
            &char_items,
            &w,
            expert,
            &cfg,
            &adam_cfg,
            &mut adam,
        )?;
        if it % schedule.log_every == 0 || it + 1 == iters {
            history.records.push(LossRecord {
                iteration: iter_offset + it,
                phase: phase_name,
                total: out.total,
                core_orig: out.orig.core,
                core_char: out.char_.core,
                em_orig: out.orig.em,
                em_char: out.char_.em,
                gaze_orig: out.orig.gaze,
                gaze_char: out.char_.gaze,
            });
        }
    }
    Ok(())
}

fn phase1_profile(condition: Condition, weights: &LossWeights) -> (&'static str, usize) {
    let w = condition.weights_for_phase(weights, Phase::Pretrain);
    match (w.em_enabled, w.gaze_enabled) {
        (false, false) => ("core", 0),
        (true, false) => ("em", 1),
        (false, true) => ("gaze", 2),
        (true, true) => ("em_gaze", 3),
    }
}

/// Full two-phase training for one pair under one condition.
pub fn train(
    model: &mut LiaeModel,
    data: &TrainData,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    expert: Option<&ExpertModel>,
) -> Result<LossHistory, SwapError> {
    let mut history = LossHistory::default();
    let root = Rng64::new(schedule.seed);
    let (_, profile_idx) = phase1_profile(schedule.condition, weights);
    let mut rng1 = root.child(0x706831).child(profile_idx as u64);
    train_phase(
        model,
        Phase::Pretrain,
        data,
        schedule.pretrain_iters,
        schedule,
        weights,
        expert,
        &mut rng1,
        &mut history,
        0,
    )?;
    let mut rng2 = root.child(0x706832);
    train_phase(
        model,
        Phase::Pair,
        data,
        schedule.pair_iters,
        schedule,
        weights,
        expert,
        &mut rng2,
        &mut history,
        schedule.pretrain_iters,
    )?;
    Ok(history)
}

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub conditions: Vec<Condition>,
    pub arch: ArchConfig,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub jobs: usize,
    pub progress: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            conditions: Condition::ALL.to_vec(),
            arch: ArchConfig::default(),
            schedule: TrainSchedule::default(),
            weights: LossWeights::default(),
            jobs: 0,
            progress: false,
        }
    }
}

/// Output of one trained (pair, condition) run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub pair_index: usize,
    pub condition: Condition,
    pub run_dir: PathBuf,
    /// Swapped reconstructions of the pair's evaluation frames.
    pub swapped: Vec<Tensor>,
    pub checkpoint_hash: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SwapError + '_ {
    move |source| SwapError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Train one model per (pair, condition), render the swapped
/// evaluation sequences, and write the run directories
/// (`runs/<pair>/<condition>/{checkpoint.gzlbp, losses.csv, swapped/}`).
///
/// Evaluation frames are rendered per pair with a stream disjoint from
/// training; the caller hands them in so reports and artifacts agree.
pub fn run_experiment(
    dataset: &Dataset,
    eval_frames: &[Vec<Sample>],
    expert: Option<&ExpertModel>,
    plan: &ExperimentPlan,
    out_dir: &Path,
) -> Result<Vec<RunArtifacts>, SwapError> {
    let needs_expert = plan.conditions.iter().any(|c| {
        let w = c.weights_for_phase(&plan.weights, Phase::Pair);
        let w1 = c.weights_for_phase(&plan.weights, Phase::Pretrain);
        w.gaze_enabled || w1.gaze_enabled
    });
    if needs_expert && expert.is_none() {
        return Err(SwapError::ExpertRequired(
            "one of the requested conditions".into(),
        ));
    }
    let n_pairs = dataset.config.n_pairs;
    assert_eq!(
        eval_frames.len(),
        n_pairs,
        "one evaluation sequence per pair"
    );
    let root = Rng64::new(plan.schedule.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(if plan.jobs == 0 { 0 } else { plan.jobs })
        .build()
        .expect("thread pool");

    // distinct phase-1 loss profiles
    let mut profiles: Vec<(&'static str, usize, Condition)> = Vec::new();
    for &c in &plan.conditions {
        let (name, idx) = phase1_profile(c, &plan.weights);
        if !profiles.iter().any(|(n, _, _)| *n == name) {
            profiles.push((name, idx, c));
        }
    }

    if plan.progress {
        eprintln!(
            "[gazelab] pretraining {} profile(s) x {} iters",
            profiles.len(),
            plan.schedule.pretrain_iters
        );
    }
    use rayon::prelude::*;
    let data_all = TrainData {
        pretrain: dataset.samples.iter().collect(),
        pair_orig: Vec::new(),
        pair_char: Vec::new(),
    };
    let pretrained: Vec<(usize, LiaeModel, LossHistory)> = pool.install(|| {
        profiles
            .par_iter()
            .map(|&(name, idx, cond)| {
                let model_seed = root.child(0x6d6f64).child(idx as u64).next_u64();
                let mut model = LiaeModel::new(&plan.arch, model_seed)?;
                let mut history = LossHistory::default();
                let mut rng = root.child(0x706831).child(idx as u64);
                let mut schedule = plan.schedule.clone();
                schedule.condition = cond;
                train_phase(
                    &mut model,
                    Phase::Pretrain,
                    &data_all,
                    schedule.pretrain_iters,
                    &schedule,
                    &plan.weights,
                    expert,
                    &mut rng,
                    &mut history,
                    0,
                )?;
                if plan.progress {
                    eprintln!("[gazelab] pretrain `{name}` done");
                }
                Ok((idx, model, history))
            })
            .collect::<Result<Vec<_>, SwapError>>()
    })?;

    let jobs: Vec<(usize, Condition)> = (0..n_pairs)
        .flat_map(|p| plan.conditions.iter().map(move |&c| (p, c)))
        .collect();
    if plan.progress {
        eprintln!(
            "[gazelab] training {} (pair, condition) runs x {} iters",
            jobs.len(),
            plan.schedule.pair_iters
        );
    }

    let artifacts: Vec<RunArtifacts> = pool.install(|| {
        jobs.par_iter()
            .map(|&(pair_index, condition)| {
                let (_, profile_idx) = phase1_profile(condition, &plan.weights);
                let (_, base_model, base_history) = pretrained
                    .iter()
                    .find(|(idx, _, _)| *idx == profile_idx)
                    .expect("profile pretrained above");
                let mut model = base_model.clone();
                let mut history = base_history.clone();
                let data = TrainData::for_pair(dataset, pair_index);
                let mut schedule = plan.schedule.clone();
                schedule.condition = condition;
                let mut rng = root
                    .child(0x706832)
                    .child(pair_index as u64)
                    .child(condition as u64);
                train_phase(
                    &mut model,
                    Phase::Pair,
                    &data,
                    schedule.pair_iters,
                    &schedule,
                    &plan.weights,
                    expert,
                    &mut rng,
                    &mut history,
                    schedule.pretrain_iters,
                )?;

                let run_dir = out_dir
                    .join("runs")
                    .join(format!("pair{pair_index:02}"))
                    .join(condition.dir_name());
                let swap_dir = run_dir.join("swapped");
                std::fs::create_dir_all(&swap_dir).map_err(io_err(&swap_dir))?;
                model.save(&run_dir.join("checkpoint.gzlbp"))?;
                std::fs::write(run_dir.join("losses.csv"), history.to_csv())
                    .map_err(io_err(&run_dir))?;

                let mut swapped = Vec::with_capacity(eval_frames[pair_index].len());
                for frame in &eval_frames[pair_index] {
                    let (img, _mask) = model.swap(&frame.image)?;
                    write_raster(
                        &swap_dir.join(format!("f{:04}.gzlb", frame.frame_index)),
                        &img,
                    )?;
                    swapped.push(img);
                }
                if plan.progress {
                    eprintln!(
                        "[gazelab] run pair{pair_index:02}/{} done",
                        condition.dir_name()
                    );
                }
                Ok(RunArtifacts {
                    pair_index,
                    condition,
                    run_dir,
                    swapped,
                    checkpoint_hash: model.to_param_set().content_hash(),
                })
            })
            .collect::<Result<Vec<_>, SwapError>>()
    })?;

    Ok(artifacts)
}
