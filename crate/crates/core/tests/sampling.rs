use audio2anim::audio::{AudioFeatureFrame, N_MELS};
use audio2anim::codec::{CodecSpec, NUM_ATTRIBUTES};
use audio2anim::model::{AudioNorm, MappingModel, ModelConfig};
use audio2anim::rng::Philox;
use audio2anim::sampler::{generate_with, top_k_sample, ContextMode, SamplerConfig};

fn model(tau: usize, seed: u64) -> MappingModel {
    let config = ModelConfig {
        tau,
        d: 16,
        width: 24,
        heads: 3,
        layers: 2,
        ff_width: 48,
        audio_window: 3,
        ..Default::default()
    };
    let codec = CodecSpec::new(16, [(0.0, 1.0); NUM_ATTRIBUTES]).unwrap();
    MappingModel::new(config, codec, AudioNorm::default(), seed).unwrap()
}

fn audio(len: usize, seed: u64) -> Vec<AudioFeatureFrame> {
    let mut rng = Philox::new(seed);
    (0..len)
        .map(|i| AudioFeatureFrame {
            frame_index: i,
            mel: (0..3 * N_MELS).map(|_| rng.next_normal()).collect(),
            window: 3,
            log_scaled: true,
        })
        .collect()
}

#[test]
fn incremental_matches_recompute_past_tau() {
    for (tau, k) in [(5, 1), (5, 4), (12, 16)] {
        let m = model(tau, 3);
        let a = audio(4 * tau + 3, 8);
        let cfg = SamplerConfig { k, seed: 21, ..Default::default() };
        let inc = generate_with(&m, &a, 25.0, &cfg, ContextMode::Incremental).unwrap();
        let rec = generate_with(&m, &a, 25.0, &cfg, ContextMode::Recompute).unwrap();
        assert_eq!(inc.codes, rec.codes, "tau {tau} k {k}");
        assert_eq!(inc.sequence, rec.sequence);
    }
}

#[test]
fn length_limits_output() {
    let m = model(6, 1);
    let a = audio(30, 2);
    let cfg = SamplerConfig { length: Some(11), ..Default::default() };
    let g = generate_with(&m, &a, 25.0, &cfg, ContextMode::Incremental).unwrap();
    assert_eq!(g.codes.len(), 11);
    let too_long = SamplerConfig { length: Some(31), ..Default::default() };
    assert!(generate_with(&m, &a, 25.0, &too_long, ContextMode::Incremental).is_err());
}

/// Pearson χ² of `n` draws against the renormalized, tempered top-k mass.
fn chi_square(dist: &[f64], k: usize, temperature: f64, n: usize, seed: u64) -> (f64, usize) {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let kept = &order[..k];
    let weights: Vec<f64> = kept.iter().map(|&i| dist[i].powf(1.0 / temperature)).collect();
    let total: f64 = weights.iter().sum();

    let mut counts = vec![0usize; dist.len()];
    let mut rng = Philox::new(seed);
    for _ in 0..n {
        counts[top_k_sample(dist, k, temperature, rng.next_f64()).unwrap()] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        if !kept.contains(&i) {
            assert_eq!(c, 0, "outcome {i} is outside the top {k}");
        }
    }
    let stat = kept
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| {
            let e = n as f64 * w / total;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    (stat, k - 1)
}

#[test]
fn top_k_frequencies_pass_chi_square() {
    let dist = [0.05, 0.3, 0.02, 0.18, 0.12, 0.08, 0.15, 0.1];
    // 0.1% upper quantiles of χ² for 3 and 7 degrees of freedom
    let critical = |df: usize| match df {
        3 => 16.266,
        7 => 24.322,
        _ => unreachable!("no critical value for {df} df"),
    };
    for (k, t, seed) in [(4, 1.0, 1), (4, 0.5, 2), (8, 2.0, 4)] {
        let (stat, df) = chi_square(&dist, k, t, 40_000, seed);
        assert!(stat < critical(df), "k {k} T {t}: χ² {stat:.2} on {df} df");
    }
}

#[test]
fn full_support_matches_distribution() {
    // k = D, T = 1: plain categorical sampling; 1% upper quantile of χ²(7)
    let dist = [0.05, 0.3, 0.02, 0.18, 0.12, 0.08, 0.15, 0.1];
    let (stat, df) = chi_square(&dist, dist.len(), 1.0, 100_000, 3);
    assert_eq!(df, 7);
    assert!(stat < 18.475, "χ² {stat:.2}");
}

#[test]
fn k_one_ignores_the_uniform_draw() {
    let dist = [0.2, 0.5, 0.3];
    for u in [0.0, 0.3, 0.999_999] {
        assert_eq!(top_k_sample(&dist, 1, 1.0, u).unwrap(), 1);
    }
}
