use gazelab_core::expert::{mean_error_deg, train_expert, ExpertTrainConfig};
use gazelab_core::synth::{Dataset, DatasetConfig};

fn main() {
    let cfg = DatasetConfig {
        n_pairs: 2, extra_identities: 2, frames_per_identity: 48,
        eval_frames_per_pair: 0, image_size: 48, pairing_radius: 0.5,
    };
    let ds = Dataset::synthesize(&cfg, 55).unwrap();
    let mut held_out = Vec::new();
    for id in 0..ds.n_identities() {
        held_out.extend(ds.eval_frames(id as u32, 8).unwrap());
    }
    for lr in [3e-3, 1e-3, 3e-4] {
        for iters in [400u64, 1200] {
            let t0 = std::time::Instant::now();
            let tc = ExpertTrainConfig { input_size: 48, iterations: iters, batch_size: 16, lr, stop_at_error_deg: None };
            let e = train_expert(&ds.samples, &tc, 77).unwrap().freeze();
            let err = mean_error_deg(&e, &held_out).unwrap();
            println!("lr={lr} iters={iters} heldout={err:.2} deg ({:.0}s)", t0.elapsed().as_secs_f32());
        }
    }
}
