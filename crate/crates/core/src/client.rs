//! Client-side round: joint extractor/classifier training, generator fitting
//! on frozen extractor features, and upload of the public components.

use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{FedFgError, Result};
use crate::flow;
use crate::model::{PublicModel, SplitModel};
use crate::nn::{argmax, softmax_cross_entropy, ParamVector, TrainConfig};
use crate::rng::{self, Stream};

/// What a client sends to the server: the generator and classifier only.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub client_id: usize,
    pub generator: ParamVector,
    pub classifier: ParamVector,
}

impl Upload {
    pub fn new(client_id: usize, model: PublicModel) -> Self {
        Self {
            client_id,
            generator: model.generator,
            classifier: model.classifier,
        }
    }

    pub fn public(&self) -> PublicModel {
        PublicModel {
            generator: self.generator.clone(),
            classifier: self.classifier.clone(),
        }
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.generator.layout().names().chain(self.classifier.layout().names())
    }
}

/// Training statistics from one call to [`ClientState::local_update`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalReport {
    /// Mean cross-entropy over all classifier minibatches of the round.
    pub cls_loss: f64,
    /// Mean flow-matching loss of the final generator epoch.
    pub flow_loss: f64,
    /// Training stopped early on a non-finite loss.
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    extractor: ParamVector,
    classifier: ParamVector,
    generator: ParamVector,
    train: LabeledDataset,
    test: Option<LabeledDataset>,
    malicious: bool,
    seed: u64,
}

impl ClientState {
    /// `seed` is the run's master seed; per-round streams derive from it.
    pub fn new(
        id: usize,
        extractor: ParamVector,
        public: PublicModel,
        train: LabeledDataset,
        test: Option<LabeledDataset>,
        malicious: bool,
        seed: u64,
    ) -> Self {
        Self {
            id,
            extractor,
            classifier: public.classifier,
            generator: public.generator,
            train,
            test,
            malicious,
            seed,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn is_malicious(&self) -> bool {
        self.malicious
    }

    pub fn extractor(&self) -> &ParamVector {
        &self.extractor
    }

    pub fn classifier(&self) -> &ParamVector {
        &self.classifier
    }

    pub fn generator(&self) -> &ParamVector {
        &self.generator
    }

    pub fn train_data(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn test_data(&self) -> Option<&LabeledDataset> {
        self.test.as_ref()
    }

    pub fn data_size(&self) -> usize {
        self.train.len()
    }

    /// Replace the public components with the global ones; the extractor is untouched.
    pub fn sync_from_global(&mut self, global: &PublicModel) -> Result<()> {
        self.generator
            .ensure_same_layout(&global.generator, "sync generator")?;
        self.classifier
            .ensure_same_layout(&global.classifier, "sync classifier")?;
        self.generator = global.generator.clone();
        self.classifier = global.classifier.clone();
        Ok(())
    }

    pub fn make_upload(&self) -> Upload {
        Upload {
            client_id: self.id,
            generator: self.generator.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// Real features `E(x)` of the local training set.
    pub fn features(&self, model: &SplitModel) -> Result<Vec<(Vec<f64>, usize)>> {
        self.train
            .samples()
            .iter()
            .map(|s| Ok((model.extractor.forward_raw(self.extractor.values(), &s.x)?, s.y)))
            .collect()
    }

    /// Step 1 then Step 2 of the client round. Deterministic in `(seed, id, round)`.
    pub fn local_update(&mut self, model: &SplitModel, cfg: &TrainConfig, sigma: f64, round: usize) -> Result<LocalReport> {
        let mut rng = rng::substream(self.seed, Stream::Client, self.id as u64, round as u64);
        let mut report = LocalReport::default();

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut total = 0.0;
        let mut batches = 0usize;
        'epochs: for _ in 0..cfg.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                match self.classification_step(model, chunk, cfg.eta1)? {
                    Some(loss) => {
                        total += loss;
                        batches += 1;
                    }
                    None => {
                        report.diverged = true;
                        break 'epochs;
                    }
                }
            }
        }
        report.cls_loss = if batches > 0 { total / batches as f64 } else { f64::NAN };

        if cfg.flow_epochs > 0 && !report.diverged {
            let features = self.features(model)?;
            if features.iter().all(|(h, _)| h.iter().all(|v| v.is_finite())) {
                match flow::train_generator(&self.generator, &model.generator, &features, cfg, sigma, &mut rng) {
                    Ok(trained) => {
                        report.flow_loss = trained.epoch_losses.last().copied().unwrap_or(f64::NAN);
                        if trained.params.is_finite() {
                            self.generator = trained.params;
                        } else {
                            report.diverged = true;
                        }
                    }
                    Err(FedFgError::NonFinite(_)) => report.diverged = true,
                    Err(e) => return Err(e),
                }
            } else {
                report.diverged = true;
            }
        }
        Ok(report)
    }

    /// One joint SGD step on a minibatch. `None` when the loss is non-finite,
    /// in which case parameters are left unchanged.
    fn classification_step(&mut self, model: &SplitModel, chunk: &[usize], eta: f64) -> Result<Option<f64>> {
        let samples = self.train.samples();
        let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| (samples[i].x.as_slice(), samples[i].y)).collect();
        let (loss, g_ext, g_cls) = match joint_backward(model, &self.extractor, &self.classifier, &batch) {
            Ok(v) => v,
            Err(FedFgError::NonFinite(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || !g_ext.is_finite() || !g_cls.is_finite() {
            return Ok(None);
        }
        self.extractor.axpy(-eta, &g_ext)?;
        self.classifier.axpy(-eta, &g_cls)?;
        Ok(Some(loss))
    }

    /// Accuracy of own extractor composed with `classifier` on `data`.
    pub fn accuracy_with(&self, model: &SplitModel, classifier: &ParamVector, data: &LabeledDataset) -> Result<f64> {
        let mut correct = 0usize;
        for s in data.samples() {
            let h = model.extractor.forward_raw(self.extractor.values(), &s.x)?;
            let logits = model.classifier.forward_raw(classifier.values(), &h)?;
            if argmax(&logits) == s.y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn train_accuracy(&self, model: &SplitModel) -> Result<f64> {
        self.accuracy_with(model, &self.classifier, &self.train)
    }

    /// Mean cross-entropy of own extractor + own classifier on the training shard.
    pub fn train_loss(&self, model: &SplitModel) -> Result<f64> {
        let mut total = 0.0;
        for s in self.train.samples() {
            let h = model.extractor.forward_raw(self.extractor.values(), &s.x)?;
            let logits = model.classifier.forward_raw(self.classifier.values(), &h)?;
            total += softmax_cross_entropy(&logits, s.y)?.0;
        }
        Ok(total / self.train.len() as f64)
    }
}

/// Mean cross-entropy of `classifier(extractor(x))` over `batch` and its
/// gradients with respect to both parameter vectors.
pub fn joint_backward(
    model: &SplitModel,
    extractor: &ParamVector,
    classifier: &ParamVector,
    batch: &[(&[f64], usize)],
) -> Result<(f64, ParamVector, ParamVector)> {
    if batch.is_empty() {
        return Err(FedFgError::invalid("joint backward on an empty batch"));
    }
    if extractor.layout() != model.extractor.layout() || classifier.layout() != model.classifier.layout() {
        return Err(FedFgError::LayoutMismatch("joint backward"));
    }
    let mut g_ext = ParamVector::zeros(extractor.layout().clone());
    let mut g_cls = ParamVector::zeros(classifier.layout().clone());
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &(x, y) in batch {
        let et = model.extractor.forward_trace(extractor.values(), x)?;
        let ct = model.classifier.forward_trace(classifier.values(), et.output())?;
        let (loss, mut g) = softmax_cross_entropy(ct.output(), y)?;
        total += loss;
        g.iter_mut().for_each(|v| *v *= scale);
        let g_feat = model.classifier.backprop(classifier.values(), &ct, &g, g_cls.values_mut());
        model.extractor.backprop(extractor.values(), &et, &g_feat, g_ext.values_mut());
    }
    Ok((total * scale, g_ext, g_cls))
}
