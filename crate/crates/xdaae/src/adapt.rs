//! Domain adaptation: supervised pretraining on the labeled source domain,
//! confidence-thresholded pseudo-labeling of the unlabeled target domain,
//! joint semi-supervised training with the mixed consistency loss, and the
//! boosted variant that raises the threshold toward 1 over epochs.

use crate::datasets::{DomainBatch, DomainSet};
use crate::error::{Error, Result};
use crate::evaluate::content_accuracy;
use crate::nets::Nets;
use crate::objectives::LossReport;
use crate::trainer::{TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    /// Initial (basic: fixed) confidence threshold.
    pub t_init: f64,
    /// Scale factor of the boosting rate.
    pub w: f64,
    pub pretrain_steps: u64,
    pub train_epochs: u64,
    pub train: TrainConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig { t_init: 0.85, w: 10_000.0, pretrain_steps: 500, train_epochs: 10, train: TrainConfig::default() }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_init) {
            return Err(Error::InvalidConfig(format!("t_init must lie in [0,1], got {}", self.t_init)));
        }
        if !self.w.is_finite() || self.w <= 0.0 {
            return Err(Error::InvalidConfig(format!("boost scale w must be finite and positive, got {}", self.w)));
        }
        self.train.validate()
    }
}

/// Exponential saturation toward 1: t_init + (1 - t_init)(1 - exp(-i / w)).
pub fn threshold_schedule(t_init: f64, w: f64, i: u64) -> f64 {
    t_init + (1.0 - t_init) * (1.0 - (-(i as f64) / w).exp())
}

/// One accepted target sample: where it lives, what the classifier said, and
/// how confident it was.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub index: usize,
    pub label: u8,
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub threshold: f64,
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Threshold selection on softmax rows: keep rows whose max probability
/// exceeds t, labeled by argmax (ties to the lowest class index).
pub fn select_pseudo(probs: &[f32], k: usize, t: f64) -> Vec<PseudoLabel> {
    let mut out = Vec::new();
    for (i, row) in probs.chunks(k).enumerate() {
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        let confidence = row[best];
        if (confidence as f64) > t {
            out.push(PseudoLabel { index: i, label: best as u8, confidence });
        }
    }
    out
}

/// Run the content encoder over the target set and keep the confident
/// predictions. An empty result is valid.
pub fn pseudo_label(nets: &Nets, store: &crate::autodiff::ParamStore<f32>, target: &DomainSet, t: f64) -> Result<PseudoLabelSet> {
    let probs = nets.encode_content_eval(store, &target.images, target.n)?;
    Ok(PseudoLabelSet { threshold: t, entries: select_pseudo(&probs, nets.cfg.k, t) })
}

/// Per-epoch adaptation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: u64,
    pub t: f64,
    pub pseudo_count: usize,
    pub target_accuracy: f32,
}

pub fn trace_csv(baseline: f32, trace: &[EpochTrace]) -> String {
    let mut out = String::from("epoch,t,pseudo_count,target_accuracy\n");
    out.push_str(&format!("0,,0,{baseline}\n"));
    for row in trace {
        out.push_str(&format!("{},{},{},{}\n", row.epoch, row.t, row.pseudo_count, row.target_accuracy));
    }
    out
}

pub struct AdaptOutput {
    pub trainer: Trainer,
    /// Target-test accuracy right after pretraining (source-only classifier).
    pub baseline_accuracy: f32,
    pub trace: Vec<EpochTrace>,
    pub reports: Vec<LossReport>,
}

impl AdaptOutput {
    pub fn final_accuracy(&self) -> f32 {
        self.trace.last().map(|t| t.target_accuracy).unwrap_or(self.baseline_accuracy)
    }
}

fn pseudo_batch(trainer: &mut Trainer, target: &DomainSet, pseudo: &PseudoLabelSet) -> Result<Option<DomainBatch>> {
    if pseudo.is_empty() {
        return Ok(None);
    }
    let picks = trainer.sample_from(pseudo.entries.len(), trainer.cfg.batch_size);
    let mut images = Vec::with_capacity(picks.len() * crate::nets::IMAGE_PIXELS);
    let mut labels = Vec::with_capacity(picks.len());
    for p in picks {
        let e = &pseudo.entries[p];
        images.extend_from_slice(target.image(e.index));
        labels.push(e.label);
    }
    Ok(Some(DomainBatch::new(images, labels.len(), Some(labels), crate::nets::Domain::B)?))
}

fn adapt_run(
    cfg: &AdaptConfig,
    source: &DomainSet,
    target_train: &DomainSet,
    target_test: &DomainSet,
    boosted: bool,
) -> Result<AdaptOutput> {
    cfg.validate()?;
    if source.is_empty() || !source.is_labeled() {
        return Err(Error::arg("adapt", "source must be non-empty and labeled"));
    }
    if target_train.is_empty() {
        return Err(Error::arg("adapt", "target training set is empty"));
    }
    let target_unlabeled = target_train.without_labels();
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut reports = Vec::new();

    // phase 1: source-only classifier on the supervised-content path
    for _ in 0..cfg.pretrain_steps {
        let batch = trainer.draw_batch(source, true)?;
        reports.push(trainer.train_step_content_sup(Some(&batch), None)?);
    }
    let baseline_accuracy = content_accuracy(&trainer.nets, &trainer.store, target_test)?;

    // phase 2: pseudo-label, joint minimax pass, supervised pass
    let batch = cfg.train.batch_size;
    let mut t = cfg.t_init;
    let mut trace = Vec::new();
    for epoch in 1..=cfg.train_epochs {
        let pseudo = pseudo_label(&trainer.nets, &trainer.store, &target_unlabeled, t)?;

        // one pass over the smaller of the two training sets
        let joint_steps = (source.n.min(target_unlabeled.n) + batch - 1) / batch;
        for _ in 0..joint_steps {
            let bs = trainer.draw_batch(source, true)?;
            let bt = trainer.draw_batch(&target_unlabeled, false)?;
            reports.push(trainer.train_step_adapt_joint(&bs, &bt)?);
        }

        // supervised pass over source plus accepted target samples
        let sup_steps = (source.n + batch - 1) / batch;
        for _ in 0..sup_steps {
            let bs = trainer.draw_batch(source, true)?;
            let bt = pseudo_batch(&mut trainer, &target_unlabeled, &pseudo)?;
            reports.push(trainer.train_step_content_sup(Some(&bs), bt.as_ref())?);
        }

        let target_accuracy = content_accuracy(&trainer.nets, &trainer.store, target_test)?;
        trace.push(EpochTrace { epoch, t, pseudo_count: pseudo.len(), target_accuracy });
        if boosted {
            t = threshold_schedule(cfg.t_init, cfg.w, epoch);
        }
    }

    Ok(AdaptOutput { trainer, baseline_accuracy, trace, reports })
}

/// Fixed-threshold adaptation.
pub fn adapt_basic(cfg: &AdaptConfig, source: &DomainSet, target_train: &DomainSet, target_test: &DomainSet) -> Result<AdaptOutput> {
    adapt_run(cfg, source, target_train, target_test, false)
}

/// Adaptation with the threshold re-derived from the schedule every epoch.
pub fn adapt_boosted(cfg: &AdaptConfig, source: &DomainSet, target_train: &DomainSet, target_test: &DomainSet) -> Result<AdaptOutput> {
    adapt_run(cfg, source, target_train, target_test, true)
}
