//! Training-loop structure checks: where gradients flow per branch,
//! frozen-expert immutability, and the sanity trend of the loss.

use gazelab_core::expert::ExpertModel;
use gazelab_core::losses::*;
use gazelab_core::swap::{train, ArchConfig, LiaeModel, TrainData, TrainSchedule};
use gazelab_core::synth::{Dataset, DatasetConfig};
use gazelab_core::tensor::Graph;
use std::collections::BTreeMap;

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        image_size: 32,
        latent_dim: 16,
        enc_channels: [4, 6, 8],
        dec_channels: [8, 6, 5, 4],
        full_res_conv: false,
    }
}

fn tiny_dataset() -> Dataset {
    Dataset::synthesize(
        &DatasetConfig {
            n_pairs: 1,
            extra_identities: 0,
            frames_per_identity: 8,
            eval_frames_per_pair: 2,
            image_size: 32,
            pairing_radius: 0.5,
        },
        31,
    )
    .unwrap()
}

/// Gradients per parameter set for a gaze-only loss applied to the
/// requested branches.
fn gaze_only_grads(
    on_orig: bool,
    on_char: bool,
    theta_detached: bool,
) -> BTreeMap<String, bool> {
    let ds = tiny_dataset();
    let model = LiaeModel::new(&tiny_arch(), 3).unwrap();
    let expert = ExpertModel::new(9, 32).freeze();
    let w = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        gaze_enabled: true,
        theta_detached,
        ..Default::default()
    };
    let cfg = SsimConfig::default_for_image(32);
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let exp_binding = expert.bind(&mut g);
    let sample = &ds.samples[0];
    let mut total = None;
    for (enabled, is_orig) in [(on_orig, true), (on_char, false)] {
        if !enabled {
            continue;
        }
        let y = g.input(&sample.image);
        let (yhat, m_hat) = if is_orig {
            model.forward_orig(&mut g, &binding, y).unwrap()
        } else {
            model.forward_char(&mut g, &binding, y).unwrap()
        };
        let inputs = BranchInputs {
            y,
            yhat,
            m_face: {
                let m = sample.mask_face.clone();
                let (h, wd) = (m.shape()[0], m.shape()[1]);
                g.input(&gazelab_core::tensor::Tensor::new(
                    vec![1, h, wd],
                    m.data().to_vec(),
                ))
            },
            m_face_hat: m_hat,
            m_em: g.input(&sample.mask_em.tile_channels(3)),
            m_eyes: g.input(&sample.mask_eyes.tile_channels(3)),
        };
        let (node, _) = branch_loss_node(
            &mut g,
            &inputs,
            |g, img| expert.forward_nodes(g, &exp_binding, img).map_err(Into::into),
            &w,
            &cfg,
        )
        .unwrap();
        total = Some(match total {
            None => node,
            Some(prev) => g.add(prev, node).unwrap(),
        });
    }
    let loss = total.unwrap();
    let grads = g.backward(loss).unwrap();
    let by_name = g.param_grads(&grads);
    let mut nonzero = BTreeMap::new();
    for set in ["enc", "iab", "ib", "dec"] {
        let any = by_name
            .iter()
            .filter(|(k, _)| k.starts_with(&format!("{set}.")))
            .any(|(_, t)| t.data().iter().any(|&v| v != 0.0));
        nonzero.insert(set.to_string(), any);
    }
    nonzero
}

#[test]
fn gaze_gradients_reach_all_sets_via_orig_branch() {
    let flow = gaze_only_grads(true, true, false);
    assert!(flow["enc"] && flow["iab"] && flow["dec"], "{flow:?}");
    assert!(flow["ib"], "inter_b must receive orig-branch gaze gradient");
}

#[test]
fn char_branch_gaze_never_touches_inter_b() {
    let flow = gaze_only_grads(false, true, false);
    assert!(flow["enc"] && flow["iab"] && flow["dec"], "{flow:?}");
    assert!(!flow["ib"], "inter_b got gradient from the char branch");
}

#[test]
fn detached_theta_still_trains_through_pixel_terms() {
    let flow = gaze_only_grads(true, true, true);
    assert!(flow["enc"] && flow["iab"] && flow["ib"] && flow["dec"], "{flow:?}");
}

#[test]
fn theta_path_contributes_expert_gradients() {
    // attached vs detached theta must give different encoder
    // gradients; the difference is exactly the path through the expert
    let ds = tiny_dataset();
    let model = LiaeModel::new(&tiny_arch(), 5).unwrap();
    let expert = ExpertModel::new(11, 32).freeze();
    let cfg = SsimConfig::default_for_image(32);
    let grads_for = |detached: bool| -> Vec<f64> {
        let w = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            gaze_enabled: true,
            theta_detached: detached,
            ..Default::default()
        };
        let mut g = Graph::new();
        let binding = model.bind(&mut g);
        let exp_binding = expert.bind(&mut g);
        let sample = &ds.samples[0];
        let y = g.input(&sample.image);
        let (yhat, _m) = model.forward_orig(&mut g, &binding, y).unwrap();
        let m_eyes = g.input(&sample.mask_eyes.tile_channels(3));
        let loss = gaze_loss_node(
            &mut g,
            y,
            yhat,
            m_eyes,
            |g, img| expert.forward_nodes(g, &exp_binding, img).map_err(Into::into),
            &w,
            &cfg,
        )
        .unwrap();
        let grads = g.backward(loss).unwrap();
        let by_name = g.param_grads(&grads);
        by_name["enc.conv1.w"].data().to_vec()
    };
    let attached = grads_for(false);
    let detached = grads_for(true);
    assert_ne!(attached, detached);
}

#[test]
fn frozen_expert_hash_stable_across_swap_training() {
    let ds = tiny_dataset();
    let expert = ExpertModel::new(21, 32).freeze();
    let hash_before = expert.content_hash();
    let mut model = LiaeModel::new(&tiny_arch(), 7).unwrap();
    let schedule = TrainSchedule {
        pretrain_iters: 3,
        pair_iters: 3,
        batch_size: 2,
        lr: 1e-3,
        condition: Condition::EmGaze,
        seed: 13,
        log_every: 1,
    };
    let data = TrainData::for_pair(&ds, 0);
    train(&mut model, &data, &schedule, &LossWeights::default(), Some(&expert)).unwrap();
    assert_eq!(expert.content_hash(), hash_before);
}

#[test]
fn swap_path_identity_holds_after_training() {
    let ds = tiny_dataset();
    let mut model = LiaeModel::new(&tiny_arch(), 9).unwrap();
    let schedule = TrainSchedule {
        pretrain_iters: 5,
        pair_iters: 5,
        batch_size: 2,
        lr: 1e-3,
        condition: Condition::Baseline,
        seed: 17,
        log_every: 2,
    };
    let data = TrainData::for_pair(&ds, 0);
    train(&mut model, &data, &schedule, &LossWeights::default(), None).unwrap();
    let y = &ds.samples[3].image;
    let (swap_img, _) = model.swap(y).unwrap();
    let (_, _, char_img, _) = model.reconstruct_train(y, y).unwrap();
    assert_eq!(swap_img.data(), char_img.data());
}

#[test]
fn pretraining_loss_trends_downward() {
    // median of the last fifth of logged totals below the first fifth
    let ds = Dataset::synthesize(
        &DatasetConfig {
            n_pairs: 1,
            extra_identities: 0,
            frames_per_identity: 16,
            eval_frames_per_pair: 2,
            image_size: 32,
            pairing_radius: 0.5,
        },
        41,
    )
    .unwrap();
    let mut model = LiaeModel::new(&tiny_arch(), 11).unwrap();
    let schedule = TrainSchedule {
        pretrain_iters: 240,
        pair_iters: 0,
        batch_size: 4,
        lr: 2e-3,
        condition: Condition::Baseline,
        seed: 19,
        log_every: 4,
    };
    let data = TrainData::for_pair(&ds, 0);
    let history = train(&mut model, &data, &schedule, &LossWeights::default(), None).unwrap();
    let totals = history.totals_for_phase("pretrain");
    assert!(totals.len() >= 10);
    let fifth = totals.len() / 5;
    let median = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let first = median(&totals[..fifth]);
    let last = median(&totals[totals.len() - fifth..]);
    assert!(
        last < first,
        "loss did not trend down: first-fifth median {first}, last-fifth median {last}"
    );
}
