use candle_core::{backprop::GradStore, DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_tensor, positive_probabilities, Mode, ModelError, SegmentClassifier, SegmentStore, TrainedModel};
use crate::dsp::Spectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_balanced_accuracy: Option<f64>,
    pub val_sensitivity: Option<f64>,
    pub val_specificity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

struct BinaryMetrics {
    loss: f64,
    balanced_accuracy: f64,
    sensitivity: Option<f64>,
    specificity: Option<f64>,
}

/// Mean binary cross-entropy and balanced accuracy at 0.5. A missing class
/// leaves its rate undefined and the balanced accuracy is the remaining rate.
fn binary_metrics(probs: &[f64], labels: &[bool]) -> BinaryMetrics {
    let eps = 1e-12;
    let loss = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| -(if y { p.max(eps).ln() } else { (1.0 - p).max(eps).ln() }))
        .sum::<f64>()
        / probs.len().max(1) as f64;
    let rate = |want: bool| {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == want).collect();
        (!idx.is_empty()).then(|| idx.iter().filter(|&&i| (probs[i] >= 0.5) == want).count() as f64 / idx.len() as f64)
    };
    let (sensitivity, specificity) = (rate(true), rate(false));
    let present: Vec<f64> = [sensitivity, specificity].into_iter().flatten().collect();
    BinaryMetrics {
        loss,
        balanced_accuracy: present.iter().sum::<f64>() / present.len().max(1) as f64,
        sensitivity,
        specificity,
    }
}

fn load_batch<S: SegmentStore + ?Sized>(
    store: &S,
    idx: &[usize],
    input_size: [usize; 2],
) -> Result<Tensor, ModelError> {
    let owned: Vec<_> = idx.iter().map(|&i| store.get(i)).collect::<Result<_, _>>()?;
    let refs: Vec<&Spectrogram> = owned.iter().map(|c| c.as_ref()).collect();
    Ok(batch_tensor(&refs, input_size)?)
}

fn evaluate<S: SegmentStore + ?Sized>(
    model: &SegmentClassifier,
    store: &S,
    labels: &[bool],
) -> Result<BinaryMetrics, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..store.len()).collect();
    let mut probs = Vec::with_capacity(idx.len());
    for part in idx.chunks(model.config.inference_batch) {
        let x = load_batch(store, part, model.config.input_size)?;
        probs.extend(positive_probabilities(&model.net.forward(&x, Mode::Deterministic, &mut rng)?)?);
    }
    Ok(binary_metrics(&probs, labels))
}

fn add_grads(acc: &mut Option<GradStore>, new: GradStore, vars: &[candle_core::Var]) -> candle_core::Result<()> {
    match acc {
        None => *acc = Some(new),
        Some(store) => {
            for v in vars {
                if let Some(g) = new.get(v.as_tensor()) {
                    let sum = match store.get(v.as_tensor()) {
                        Some(prev) => (prev + g)?,
                        None => g.clone(),
                    };
                    store.insert(v.as_tensor(), sum);
                }
            }
        }
    }
    Ok(())
}

/// Trains with Adam on unweighted cross-entropy. Labels are the per-segment
/// binary targets (`true` = positive class of the task). When a validation
/// set is given, the weights of the epoch with the best balanced accuracy
/// (dropout off) are returned; otherwise those of the last epoch.
pub fn train_segment_classifier<T, V>(
    model: SegmentClassifier,
    train: &T,
    train_labels: &[bool],
    val: Option<(&V, &[bool])>,
) -> Result<TrainedModel, ModelError>
where
    T: SegmentStore + ?Sized,
    V: SegmentStore + ?Sized,
{
    let cfg = model.config.clone();
    cfg.validate()?;
    if train.len() != train_labels.len() {
        return Err(ModelError::LabelCountMismatch { spectrograms: train.len(), labels: train_labels.len() });
    }
    if let Some((v, l)) = val {
        if v.len() != l.len() {
            return Err(ModelError::LabelCountMismatch { spectrograms: v.len(), labels: l.len() });
        }
    }
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        return Err(ModelError::SingleClassDataset);
    }

    let vars = model.net.trainable_vars();
    let mut opt = AdamW::new(vars.clone(), ParamsAdamW { lr: cfg.learning_rate, weight_decay: 0.0, ..Default::default() })?;
    // separate streams so the shuffle order does not depend on dropout draws
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let micro = cfg.micro_batch_size.unwrap_or(cfg.batch_size).min(cfg.batch_size);

    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, usize, std::collections::BTreeMap<String, Tensor>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut bn_step = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = None;
            let mut batch_loss = 0.0;
            for part in batch.chunks(micro) {
                let momentum = cfg.bn_momentum.unwrap_or(1.0 / (bn_step + 1) as f64);
                bn_step += 1;
                let x = load_batch(train, part, cfg.input_size)?;
                let targets: Vec<u32> = part.iter().map(|&i| train_labels[i] as u32).collect();
                let targets = Tensor::new(targets.as_slice(), &Device::Cpu)?;
                let logits = model.net.forward(&x, Mode::Train { bn_momentum: momentum }, &mut dropout_rng)?;
                let loss = candle_nn::loss::cross_entropy(&logits, &targets)?;
                let scaled = (&loss * (part.len() as f64 / batch.len() as f64))?;
                batch_loss += scaled.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                add_grads(&mut grads, scaled.backward()?, &vars)?;
            }
            opt.step(&grads.expect("batch is non-empty"))?;
            history.step_losses.push(batch_loss);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;

        let record = match val {
            Some((vstore, vlabels)) if !vstore.is_empty() => {
                let m = evaluate(&model, vstore, vlabels)?;
                if best.as_ref().is_none_or(|(b, _, _)| m.balanced_accuracy > *b) {
                    best = Some((m.balanced_accuracy, epoch, model.net.snapshot()?));
                }
                EpochRecord {
                    epoch,
                    train_loss,
                    val_loss: Some(m.loss),
                    val_balanced_accuracy: Some(m.balanced_accuracy),
                    val_sensitivity: m.sensitivity,
                    val_specificity: m.specificity,
                }
            }
            _ => EpochRecord {
                epoch,
                train_loss,
                val_loss: None,
                val_balanced_accuracy: None,
                val_sensitivity: None,
                val_specificity: None,
            },
        };
        info!(
            "{} epoch {epoch}/{}: train loss {train_loss:.4}, val balanced accuracy {}",
            model.task.slug(),
            cfg.max_epochs,
            record.val_balanced_accuracy.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
        history.epochs.push(record);
    }

    history.best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.net.restore(&snapshot)?;
            epoch
        }
        None => cfg.max_epochs,
    };
    Ok(TrainedModel { task: model.task, config: cfg, net: model.net, history })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::Rng;

    use super::super::{build_bayesian_resnet, ArchConfig, BinaryTask, BlockKind, ModelConfig};
    use super::*;

    fn cfg(epochs: usize) -> ModelConfig {
        ModelConfig {
            pretrained: false,
            input_size: [32, 32],
            arch: ArchConfig { block: BlockKind::Basic, layers: [1, 1, 1, 1], base_width: 8 },
            batch_size: 8,
            max_epochs: epochs,
            learning_rate: 1e-3,
            seed: 7,
            ..Default::default()
        }
    }

    /// Positives carry a bright horizontal band.
    fn toy(n: usize, seed: u64) -> (Vec<Spectrogram>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut specs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let v = Array2::from_shape_fn((16, 40), |(r, _)| {
                let noise: f32 = rng.random::<f32>() - 0.5;
                noise + if pos && (6..9).contains(&r) { 2.0 } else { 0.0 }
            });
            specs.push(Spectrogram::new(v));
            labels.push(pos);
        }
        (specs, labels)
    }

    #[test]
    fn two_epochs_history_and_decreasing_step() {
        let (train, labels) = toy(24, 1);
        let (val, vlabels) = toy(8, 2);
        let m = build_bayesian_resnet(BinaryTask::PresentVsRest, &cfg(2)).unwrap();
        let t = train_segment_classifier(m, &train, &labels, Some((&val, vlabels.as_slice()))).unwrap();
        assert_eq!(t.history.epochs.len(), 2);
        assert!(t.history.step_losses.iter().all(|l| l.is_finite()));
        assert!(t.history.step_losses.windows(2).any(|w| w[1] < w[0]));
        assert!((1..=2).contains(&t.history.best_epoch));
    }

    #[test]
    fn deterministic_given_seed() {
        let (train, labels) = toy(16, 3);
        let (val, vlabels) = toy(6, 4);
        let run = || {
            let m = build_bayesian_resnet(BinaryTask::UnknownVsRest, &cfg(1)).unwrap();
            train_segment_classifier(m, &train, &labels, Some((&val, vlabels.as_slice()))).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn contract_errors() {
        let (train, _) = toy(4, 0);
        let m = || build_bayesian_resnet(BinaryTask::PresentVsRest, &cfg(1)).unwrap();
        let none: Option<(&Vec<Spectrogram>, &[bool])> = None;
        assert!(matches!(
            train_segment_classifier(m(), &train, &[false; 4], none),
            Err(ModelError::SingleClassDataset)
        ));
        let empty: Vec<Spectrogram> = Vec::new();
        assert!(matches!(train_segment_classifier(m(), &empty, &[], none), Err(ModelError::EmptyDataset)));
        assert!(matches!(
            train_segment_classifier(m(), &train, &[true], none),
            Err(ModelError::LabelCountMismatch { .. })
        ));
    }

    #[test]
    fn metrics() {
        let m = binary_metrics(&[0.9, 0.4, 0.2, 0.6], &[true, true, false, false]);
        assert_eq!(m.sensitivity, Some(0.5));
        assert_eq!(m.specificity, Some(0.5));
        assert_eq!(m.balanced_accuracy, 0.5);
        let one = binary_metrics(&[0.9], &[true]);
        assert_eq!((one.balanced_accuracy, one.specificity), (1.0, None));
    }
}
