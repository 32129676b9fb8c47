use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::layers::Mode;
use super::network::{softmax, softmax_cross_entropy, Network, NetworkConfig};
use super::tensor::Tensor;
use crate::descriptor::{Descriptor, DescriptorConfig};
use crate::error::{Error, Result};
use crate::matching::LabeledDescriptor;
use crate::rng;

const EVAL_CHUNK: usize = 32;

/// Metrics recorded after each epoch; epoch 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the training set, dropout disabled.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

/// Optional knobs for [`train`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Held-out set scored after every epoch.
    pub validation: Option<&'a [LabeledDescriptor]>,
    /// Explicit class order; defaults to the sorted training labels.
    pub classes: Option<Vec<String>>,
    /// Stop once training accuracy reaches this value.
    pub target_train_acc: Option<f64>,
    /// Called after every logged epoch.
    pub on_epoch: Option<&'a dyn Fn(&EpochLog)>,
}

/// A trained classifier with everything needed to resume or predict.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: NetworkConfig,
    pub classes: Vec<String>,
    /// Layout of the descriptors the network was trained on.
    pub descriptor: DescriptorConfig,
    /// Unit-cube scale factor of the training data, applied again to
    /// clouds classified later.
    pub dataset_scale: Option<f64>,
    pub network: Network,
    pub adam: AdamState,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: String,
    pub probabilities: Vec<f64>,
}

/// Training CSV: `epoch,loss,train_acc,val_acc`.
pub fn training_log_csv(log: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "train_acc", "val_acc"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.train_acc.to_string(),
            e.val_acc.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn batch_tensor(cfg: &NetworkConfig, descs: &[&Descriptor]) -> Result<Tensor> {
    let per: usize = cfg.input_shape.iter().product();
    let mut data = Vec::with_capacity(per * descs.len());
    for d in descs {
        if d.weights.len() != per {
            return Err(Error::ConfigMismatch(format!(
                "descriptor has {} bins, network expects {per}",
                d.weights.len()
            )));
        }
        data.extend(d.weights.iter().map(|w| w * cfg.input_scale));
    }
    let mut shape = vec![descs.len()];
    shape.extend_from_slice(&cfg.input_shape);
    Tensor::new(shape, data)
}

fn label_indices(classes: &[String], data: &[LabeledDescriptor]) -> Result<Vec<usize>> {
    data.iter()
        .map(|s| {
            classes
                .iter()
                .position(|c| *c == s.label)
                .ok_or_else(|| Error::invalid(format!("label {:?} is not a known class", s.label)))
        })
        .collect()
}

/// Mean loss and accuracy of `net` on a labelled set, dropout disabled.
fn evaluate(net: &mut Network, cfg: &NetworkConfig, data: &[LabeledDescriptor], labels: &[usize]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (chunk, lab) in data.chunks(EVAL_CHUNK).zip(labels.chunks(EVAL_CHUNK)) {
        let descs: Vec<&Descriptor> = chunk.iter().map(|s| &s.descriptor).collect();
        let logits = net.forward(&batch_tensor(cfg, &descs)?, Mode::Eval)?;
        let (l, _) = softmax_cross_entropy(&logits, lab)?;
        loss += l * chunk.len() as f64;
        let n = cfg.n_classes;
        for (row, &y) in logits.data().chunks_exact(n).zip(lab) {
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh network on labelled descriptors with Adam.
pub fn train(data: &[LabeledDescriptor], cfg: &NetworkConfig, opts: &TrainOptions) -> Result<TrainedModel> {
    cfg.validate()?;
    let Some(first) = data.first() else {
        return Err(Error::invalid("training set is empty"));
    };
    let classes = match &opts.classes {
        Some(c) => c.clone(),
        None => data.iter().map(|s| s.label.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    for c in &classes {
        if !data.iter().any(|s| &s.label == c) {
            return Err(Error::invalid(format!("class {c:?} has no training samples")));
        }
    }
    let layout = first.descriptor.config.clone();
    for s in data.iter().chain(opts.validation.unwrap_or(&[])) {
        if !s.descriptor.config.same_layout(&layout) {
            return Err(Error::ConfigMismatch(format!("descriptor {:?} has a different layout", s.object_id)));
        }
    }
    let labels = label_indices(&classes, data)?;
    let val_labels = opts.validation.map(|v| label_indices(&classes, v)).transpose()?;

    batch_tensor(cfg, &[&first.descriptor])?;
    let mut model = TrainedModel::untrained(cfg, classes, layout)?;
    let mut net = model.network.clone();
    let hp = AdamParams::with_lr(cfg.learning_rate);
    let shuffle_seed = rng::derive_seed(cfg.seed, 1);
    let dropout_seed = rng::derive_seed(cfg.seed, 2);

    let record = |net: &mut Network, epoch: usize, log: &mut Vec<EpochLog>| -> Result<f64> {
        let (loss, train_acc) = evaluate(net, cfg, data, &labels)?;
        let val_acc = match (opts.validation, &val_labels) {
            (Some(v), Some(vl)) => Some(evaluate(net, cfg, v, vl)?.1),
            _ => None,
        };
        let entry = EpochLog { epoch, loss, train_acc, val_acc };
        if let Some(cb) = opts.on_epoch {
            cb(&entry);
        }
        log.push(entry);
        Ok(train_acc)
    };

    record(&mut net, 0, &mut model.log)?;
    let batch = cfg.batch_size.unwrap_or(data.len()).min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        if batch < data.len() {
            order.sort_unstable();
            order.shuffle(&mut rng::seeded(rng::derive_seed(shuffle_seed, epoch as u64)));
        }
        for idx in order.chunks(batch) {
            let descs: Vec<&Descriptor> = idx.iter().map(|&i| &data[i].descriptor).collect();
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let x = batch_tensor(cfg, &descs)?;
            net.zero_grads();
            let step = model.adam.step + 1;
            let logits = net.forward(&x, Mode::Train { seed: rng::derive_seed(dropout_seed, step) })?;
            let (_, grad) = softmax_cross_entropy(&logits, &y)?;
            net.backward(grad);
            model.adam.step = step;
            for (k, (p, g)) in net.params_and_grads_mut().into_iter().enumerate() {
                adam_step(p, g, &mut model.adam.m[k], &mut model.adam.v[k], &hp, step)?;
            }
        }
        net.clear_cache();
        model.epoch = epoch;
        let acc = record(&mut net, epoch, &mut model.log)?;
        if opts.target_train_acc.is_some_and(|t| acc >= t) {
            break;
        }
    }
    model.network = net;
    Ok(model)
}

impl TrainedModel {
    /// Freshly initialized model for `classes` over descriptors with the
    /// given layout.
    pub fn untrained(cfg: &NetworkConfig, classes: Vec<String>, descriptor: DescriptorConfig) -> Result<Self> {
        if classes.len() != cfg.n_classes {
            return Err(Error::ConfigMismatch(format!(
                "network has {} outputs but there are {} classes",
                cfg.n_classes,
                classes.len()
            )));
        }
        if descriptor.n_bins() != cfg.input_shape.iter().product::<usize>() {
            return Err(Error::ConfigMismatch(format!(
                "descriptor has {} bins, network input {:?}",
                descriptor.n_bins(),
                cfg.input_shape
            )));
        }
        let network = Network::from_config(cfg)?;
        let sizes: Vec<usize> = network.named_params().iter().map(|(_, p)| p.len()).collect();
        Ok(TrainedModel {
            config: cfg.clone(),
            classes,
            descriptor,
            dataset_scale: None,
            network,
            adam: AdamState::zeros(&sizes),
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// Class prediction with dropout disabled.
    pub fn predict(&mut self, descriptor: &Descriptor) -> Result<Prediction> {
        Ok(self.predict_batch(std::slice::from_ref(descriptor))?.remove(0))
    }

    pub fn predict_batch(&mut self, descriptors: &[Descriptor]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(descriptors.len());
        for chunk in descriptors.chunks(EVAL_CHUNK) {
            for d in chunk {
                if !d.config.same_layout(&self.descriptor) {
                    return Err(Error::ConfigMismatch(
                        "descriptor layout differs from the one the model was trained on".into(),
                    ));
                }
            }
            let refs: Vec<&Descriptor> = chunk.iter().collect();
            let logits = self.network.forward(&batch_tensor(&self.config, &refs)?, Mode::Eval)?;
            for row in logits.data().chunks_exact(self.config.n_classes) {
                let probabilities = softmax(row);
                let class = self.classes[argmax(&probabilities)].clone();
                out.push(Prediction { class, probabilities });
            }
        }
        Ok(out)
    }

    /// Output of layer `layer` (0-based) for one descriptor, without the
    /// batch axis; `None` returns the network input.
    pub fn activations(&mut self, descriptor: &Descriptor, layer: Option<usize>) -> Result<Tensor> {
        if !descriptor.config.same_layout(&self.descriptor) {
            return Err(Error::ConfigMismatch("descriptor layout differs from the model's".into()));
        }
        let n_layers = match layer {
            None => 0,
            Some(i) if i < self.network.num_layers() => i + 1,
            Some(i) => {
                return Err(Error::invalid(format!(
                    "layer index {i} out of range (network has {} layers)",
                    self.network.num_layers()
                )))
            }
        };
        let x = batch_tensor(&self.config, &[descriptor])?;
        let y = self.network.forward_to(&x, n_layers, Mode::Eval)?;
        let shape = y.shape()[1..].to_vec();
        y.reshape(&shape)
    }
}
