//! Statistical and structural checks of the synthetic data generator.

use gazelab_core::rng::Rng64;
use gazelab_core::synth::{sample_gaze, Dataset, DatasetConfig, MAX_YAW};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn yaw_distribution_uniform_chi_square() {
    // 10k draws, 20 bins; goodness of fit must not reject uniformity
    let mut rng = Rng64::new(2024);
    const BINS: usize = 20;
    const N: usize = 10_000;
    let mut counts = [0usize; BINS];
    for _ in 0..N {
        let g = sample_gaze(&mut rng);
        assert!((0.0..=MAX_YAW).contains(&g.yaw));
        assert!(g.pitch.abs() <= std::f64::consts::PI);
        let b = ((g.yaw / MAX_YAW) * BINS as f64).min(BINS as f64 - 1.0) as usize;
        counts[b] += 1;
    }
    let expected = N as f64 / BINS as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((BINS - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(chi2);
    assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
}

#[test]
fn pitch_distribution_uniform_chi_square() {
    let mut rng = Rng64::new(2025);
    const BINS: usize = 20;
    const N: usize = 10_000;
    let mut counts = [0usize; BINS];
    for _ in 0..N {
        let g = sample_gaze(&mut rng);
        let frac = (g.pitch + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
        let b = ((frac) * BINS as f64).min(BINS as f64 - 1.0) as usize;
        counts[b] += 1;
    }
    let expected = N as f64 / BINS as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((BINS - 1) as f64).unwrap();
    assert!(1.0 - dist.cdf(chi2) > 0.01);
}

#[test]
fn manifest_written_twice_is_byte_identical() {
    let cfg = DatasetConfig {
        n_pairs: 1,
        extra_identities: 1,
        frames_per_identity: 4,
        eval_frames_per_pair: 2,
        image_size: 32,
        pairing_radius: 0.5,
    };
    let ds = Dataset::synthesize(&cfg, 7).unwrap();
    let dir1 = std::env::temp_dir().join("gazelab_manifest_a");
    let dir2 = std::env::temp_dir().join("gazelab_manifest_b");
    for d in [&dir1, &dir2] {
        std::fs::remove_dir_all(d).ok();
        gazelab_core::synth::write_dataset(&ds, d).unwrap();
    }
    let a = std::fs::read(dir1.join("manifest.json")).unwrap();
    let b = std::fs::read(dir2.join("manifest.json")).unwrap();
    assert_eq!(a, b);
    // and the rasters themselves
    for entry in std::fs::read_dir(&dir1).unwrap() {
        let name = entry.unwrap().file_name();
        let x = std::fs::read(dir1.join(&name)).unwrap();
        let y = std::fs::read(dir2.join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    std::fs::remove_dir_all(&dir1).ok();
    std::fs::remove_dir_all(&dir2).ok();
}

#[test]
fn pair_partners_are_similar_but_distinct() {
    let cfg = DatasetConfig {
        n_pairs: 4,
        extra_identities: 0,
        frames_per_identity: 1,
        eval_frames_per_pair: 1,
        image_size: 64,
        pairing_radius: 0.5,
    };
    let ds = Dataset::synthesize(&cfg, 11).unwrap();
    for pair in 0..4 {
        let a = ds.identity(2 * pair as u32);
        let b = ds.identity(2 * pair as u32 + 1);
        assert_ne!(a.skin_tone, b.skin_tone);
        // bounded perturbation: stays within a fraction of the scale
        assert!((a.eye_spacing - b.eye_spacing).abs() < 0.05 * 64.0);
        assert!((a.face_axes.0 - b.face_axes.0).abs() < 0.05 * 64.0);
    }
}

#[test]
fn eval_frames_disjoint_from_training_stream() {
    let cfg = DatasetConfig {
        n_pairs: 1,
        extra_identities: 0,
        frames_per_identity: 5,
        eval_frames_per_pair: 5,
        image_size: 32,
        pairing_radius: 0.5,
    };
    let ds = Dataset::synthesize(&cfg, 13).unwrap();
    let eval = ds.eval_frames(0, 5).unwrap();
    let train_gazes: Vec<_> = ds
        .samples
        .iter()
        .filter(|s| s.identity_id == 0)
        .map(|s| (s.gaze.pitch, s.gaze.yaw))
        .collect();
    for e in &eval {
        assert!(e.frame_index >= 5);
        assert!(!train_gazes.contains(&(e.gaze.pitch, e.gaze.yaw)));
    }
    // deterministic
    let eval2 = ds.eval_frames(0, 5).unwrap();
    for (a, b) in eval.iter().zip(&eval2) {
        assert_eq!(a.image.data(), b.image.data());
    }
}
