use candle_core::Tensor;
use rand::Rng;

use super::{batch_tensor, Mode, ModelError, ProbEstimate, ResNet, TrainedModel};
use crate::dsp::Spectrogram;

/// Positive-class probability per row of a `(B, 2)` logit tensor.
pub fn positive_probabilities(logits: &Tensor) -> Result<Vec<f64>, ModelError> {
    let rows = logits.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
    Ok(rows.iter().map(|r| 1.0 / (1.0 + (r[0] - r[1]).exp())).collect())
}

fn forward_probs<R: Rng>(
    net: &ResNet,
    specs: &[&Spectrogram],
    input_size: [usize; 2],
    chunk: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(specs.len());
    for part in specs.chunks(chunk.max(1)) {
        let x = batch_tensor(part, input_size)?;
        out.extend(positive_probabilities(&net.forward(&x, mode, rng)?)?);
    }
    Ok(out)
}

/// Single pass with dropout off.
pub fn predict_deterministic(model: &TrainedModel, specs: &[Spectrogram]) -> Result<Vec<f64>, ModelError> {
    let refs: Vec<&Spectrogram> = specs.iter().collect();
    // never drawn from in deterministic mode
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    forward_probs(&model.net, &refs, model.config.input_size, model.config.inference_batch, Mode::Deterministic, &mut rng)
}

/// `n_mc` stochastic passes per spectrogram with independent dropout masks.
/// The passes of all spectrograms are packed into shared batches; batch norm
/// runs on stored statistics, so rows do not interact. Without dropout, or
/// with one pass, a single pass is made and the std is exactly zero.
pub fn mc_predict_batch<R: Rng>(
    model: &TrainedModel,
    specs: &[Spectrogram],
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<ProbEstimate>, ModelError> {
    if n_mc == 0 {
        return Err(ModelError::ZeroSamples);
    }
    let cfg = &model.config;
    if cfg.dropout_p == 0.0 || n_mc == 1 {
        let mode = if cfg.dropout_p == 0.0 { Mode::Deterministic } else { Mode::McDropout };
        let refs: Vec<&Spectrogram> = specs.iter().collect();
        let probs = forward_probs(&model.net, &refs, cfg.input_size, cfg.inference_batch, mode, rng)?;
        return Ok(probs.into_iter().map(|p| ProbEstimate { mean_prob: p, std: 0.0, n_samples: n_mc }).collect());
    }
    let refs: Vec<&Spectrogram> = specs.iter().flat_map(|s| std::iter::repeat_n(s, n_mc)).collect();
    let probs = forward_probs(&model.net, &refs, cfg.input_size, cfg.inference_batch, Mode::McDropout, rng)?;
    Ok(probs
        .chunks(n_mc)
        .map(|draws| {
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let var = draws.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
            ProbEstimate { mean_prob: mean.clamp(0.0, 1.0), std: var.sqrt(), n_samples: n_mc }
        })
        .collect())
}

pub fn mc_predict<R: Rng>(
    model: &TrainedModel,
    spec: &Spectrogram,
    n_mc: usize,
    rng: &mut R,
) -> Result<ProbEstimate, ModelError> {
    Ok(mc_predict_batch(model, std::slice::from_ref(spec), n_mc, rng)?.remove(0))
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::{ArchConfig, BinaryTask, BlockKind, ModelConfig, TrainingHistory};
    use super::*;

    fn model(p: f64) -> TrainedModel {
        let config = ModelConfig {
            dropout_p: p,
            pretrained: false,
            input_size: [32, 32],
            arch: ArchConfig { block: BlockKind::Basic, layers: [1, 1, 1, 1], base_width: 4 },
            inference_batch: 7,
            ..Default::default()
        };
        let net = ResNet::new(&config.arch, p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        TrainedModel { task: BinaryTask::PresentVsRest, config, net, history: TrainingHistory::default() }
    }

    fn probes(n: usize) -> Vec<Spectrogram> {
        (0..n)
            .map(|k| Spectrogram::new(Array2::from_shape_fn((16, 40), |(i, j)| ((i * 7 + j * 3 + k * 11) % 13) as f32 / 6.0 - 1.0)))
            .collect()
    }

    #[test]
    fn zero_dropout_is_deterministic_and_exact() {
        let m = model(0.0);
        let specs = probes(3);
        let a = mc_predict_batch(&m, &specs, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = mc_predict_batch(&m, &specs, 20, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let det = predict_deterministic(&m, &specs).unwrap();
        for ((x, y), d) in a.iter().zip(&b).zip(&det) {
            assert_eq!(x.mean_prob.to_bits(), y.mean_prob.to_bits());
            assert_eq!(x.mean_prob.to_bits(), d.to_bits());
            assert_eq!(x.std, 0.0);
            assert!((0.0..=1.0).contains(&x.mean_prob));
        }
    }

    #[test]
    fn single_sample_has_zero_std() {
        let e = mc_predict(&model(0.5), &probes(1)[0], 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(e.std, 0.0);
        assert_eq!(e.n_samples, 1);
    }

    #[test]
    fn dropout_gives_spread() {
        let est = mc_predict_batch(&model(0.2), &probes(4), 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(est.iter().all(|e| e.std > 0.0 && (0.0..=1.0).contains(&e.mean_prob)));
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(matches!(
            mc_predict(&model(0.2), &probes(1)[0], 0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(ModelError::ZeroSamples)
        ));
    }

    #[test]
    fn probabilities_match_softmax() {
        let logits = Tensor::new(&[[0.3f32, -1.2], [2.0, 2.0]], &candle_core::Device::Cpu).unwrap();
        let p = positive_probabilities(&logits).unwrap();
        let e0 = (0.3f64).exp();
        let e1 = (-1.2f64).exp();
        assert!((p[0] - e1 / (e0 + e1)).abs() < 1e-7);
        assert_eq!(p[1], 0.5);
    }
}
