//! Supervised and semi-supervised training loops: alternating discriminator /
//! encoder-generator steps, loss mixing per mode, metrics logging and
//! checkpointing.

use crate::autodiff::{apply_bn_updates, Adam, AdamConfig, BnMode, Fwd, ParamStore, TensorRef, BN_MOMENTUM};
use crate::checkpoint::{self, Checkpoint};
use crate::datasets::{DatasetPair, DomainBatch, DomainSet};
use crate::error::{Error, Result};
use crate::nets::{group_names, Domain, NetConfig, Nets, SUP_PATH_PREFIXES};
use crate::objectives::{
    adv_content_loss, adv_encoder_surrogate, adv_style_loss, cc_mixed, cc_supervised, cc_unsupervised,
    minimax_roles, reconstruction_loss, supervised_loss, CcContext, LossReport, LossWeights,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Supervised,
    SemiSupervised,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Supervised => "supervised",
            TrainMode::SemiSupervised => "semi_supervised",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub net: NetConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub lr_enc_gen: f32,
    pub lr_disc: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Labeled samples drawn per class in semi-supervised mode.
    pub labeled_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Supervised,
            weights: LossWeights::supervised_digits(),
            net: NetConfig::default(),
            batch_size: 64,
            steps: 1000,
            lr_enc_gen: 2e-4,
            lr_disc: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 42,
            checkpoint_every: 0,
            labeled_per_class: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be >= 2".into()));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        for (name, lr) in [("lr", self.lr_enc_gen), ("lr_disc", self.lr_disc)] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        self.weights.validate()?;
        self.net.validate()
    }

    fn adam(&self, lr: f32) -> AdamConfig {
        AdamConfig { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: 1e-8 }
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub nets: Nets,
    pub store: ParamStore<f32>,
    opt_enc_gen: Adam,
    opt_disc: Adam,
    rng: ChaCha20Rng,
    pub step: u64,
    /// Total samples ever fed to the supervised loss (label-economy audit).
    pub labels_consumed: u64,
    /// Which consistency-loss variants this trainer has evaluated.
    pub cc_used: BTreeSet<&'static str>,
}

/// Batch indices drawn with replacement.
fn sample_idx(rng: &mut ChaCha20Rng, n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..n)).collect()
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let nets = Nets::new(cfg.net)?;
        // parameter init draws from a stream distinct from the batch/prior one
        let store = nets.init_params(cfg.seed.wrapping_add(0x9e37_79b9));
        let opt_enc_gen = Adam::new(cfg.adam(cfg.lr_enc_gen));
        let opt_disc = Adam::new(cfg.adam(cfg.lr_disc));
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            cfg,
            nets,
            store,
            opt_enc_gen,
            opt_disc,
            rng,
            step: 0,
            labels_consumed: 0,
            cc_used: BTreeSet::new(),
        })
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        t.store = ck.store.clone();
        t.step = ck.step;
        ck.restore_optimizer("enc_gen", &mut t.opt_enc_gen);
        ck.restore_optimizer("disc", &mut t.opt_disc);
        t.rng = ChaCha20Rng::from_seed(ck.rng_seed);
        t.rng.set_word_pos(ck.rng_word_pos);
        Ok(t)
    }

    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        let mut optimizers = std::collections::BTreeMap::new();
        for (name, opt) in [("enc_gen", &self.opt_enc_gen), ("disc", &self.opt_disc)] {
            let slots: std::collections::BTreeMap<String, _> =
                opt.slots_iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            optimizers.insert(name.to_string(), slots);
        }
        Checkpoint {
            step: self.step,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
            meta: meta.to_string(),
            store: self.store.clone(),
            optimizers,
        }
    }

    fn image_node(fwd: &mut Fwd<'_, f32>, batch: &DomainBatch) -> Result<TensorRef> {
        fwd.graph.constant(&[batch.n, 3, 32, 32], batch.images.clone())
    }

    fn enc_gen_names(&self) -> Vec<String> {
        group_names(&self.store, &minimax_roles().minimizer_prefixes)
    }

    fn disc_names(&self) -> Vec<String> {
        group_names(&self.store, &minimax_roles().maximizer_prefixes)
    }

    /// Apply an optimizer step to the group members that were bound in this
    /// phase's graph; unbound members received no signal and stay put.
    fn apply_update(opt: &mut Adam, store: &mut ParamStore<f32>, fwd_grads: &std::collections::BTreeMap<String, Vec<f32>>, group: &[String]) -> Result<()> {
        let names: Vec<&str> = group.iter().map(|s| s.as_str()).filter(|n| fwd_grads.contains_key(*n)).collect();
        opt.step(store, fwd_grads, names)
    }

    /// Discriminator ascent on the written adversarial losses. Encoder
    /// outputs are detached; only discriminator parameters move. Returns
    /// (style value, content value).
    fn phase_disc(&mut self, xa: &DomainBatch, xb: &DomainBatch) -> Result<(f64, f64)> {
        let w = self.cfg.weights;
        let prior = self.nets.cfg.prior();
        let pa = prior.sample_style(&mut self.rng, xa.n, Domain::A);
        let pb = prior.sample_style(&mut self.rng, xb.n, Domain::B);
        let pc = if w.beta3 != 0.0 { Some(prior.sample_content(&mut self.rng, xa.n).0) } else { None };

        let mut fwd = Fwd::new(&self.store, BnMode::TrainFrozen);
        let xa_n = Self::image_node(&mut fwd, xa)?;
        let xb_n = Self::image_node(&mut fwd, xb)?;
        let (ea, eb) = self.nets.encode_pair(&mut fwd, xa_n, xb_n)?;
        let zs_a = fwd.graph.detach(ea.1);
        let zs_b = fwd.graph.detach(eb.1);
        let zc_a = if w.beta1 != 0.0 { Some(fwd.graph.detach(ea.0)) } else { None };
        let zc_b = if w.beta2 != 0.0 { Some(fwd.graph.detach(eb.0)) } else { None };
        let pa_n = fwd.graph.constant(&[xa.n, prior.style_dim_a], pa)?;
        let pb_n = fwd.graph.constant(&[xb.n, prior.style_dim_b], pb)?;
        let pc_n = match pc {
            Some(rows) => Some(fwd.graph.constant(&[xa.n, prior.k], rows)?),
            None => None,
        };

        let adv_s = adv_style_loss(&self.nets, &mut fwd, zs_a, zs_b, pa_n, pb_n, &w)?;
        let adv_c = adv_content_loss(&self.nets, &mut fwd, zc_a, zc_b, pc_n, &w)?;
        let objective = fwd.graph.add(adv_s.total, adv_c.total)?;
        let loss = fwd.graph.neg(objective);
        fwd.graph.backward(loss)?;
        let grads = fwd.grads();
        let adv_s_v = fwd.graph.scalar(adv_s.total) as f64;
        let adv_c_v = fwd.graph.scalar(adv_c.total) as f64;
        drop(fwd);
        let group = self.disc_names();
        Self::apply_update(&mut self.opt_disc, &mut self.store, &grads, &group)?;
        Ok((adv_s_v, adv_c_v))
    }

    /// One full supervised step: discriminator ascent, then encoder/generator
    /// descent on surrogate-adversarial + reconstruction + supervised +
    /// labeled-consistency losses.
    pub fn train_step_supervised(&mut self, batch_a: &DomainBatch, batch_b: &DomainBatch) -> Result<LossReport> {
        if self.cfg.mode != TrainMode::Supervised {
            return Err(Error::InvalidConfig("trainer is not in supervised mode".into()));
        }
        let labels_a = batch_a.labels.clone().ok_or_else(|| Error::arg("train_step", "batch A carries no labels"))?;
        let labels_b = batch_b.labels.clone().ok_or_else(|| Error::arg("train_step", "batch B carries no labels"))?;
        let w = self.cfg.weights;
        let mut report = LossReport::default();

        let (adv_s, adv_c) = self.phase_disc(batch_a, batch_b)?;
        report.insert("adv_style", adv_s)?;
        report.insert("adv_content", adv_c)?;
        report.insert("d_total", -(adv_s + adv_c))?;

        // encoder/generator phase
        let prior = self.nets.cfg.prior();
        let draw_b = prior.sample_style(&mut self.rng, batch_a.n, Domain::B);
        let draw_a = prior.sample_style(&mut self.rng, batch_b.n, Domain::A);

        let mut fwd = Fwd::new(&self.store, BnMode::Train);
        let xa = Self::image_node(&mut fwd, batch_a)?;
        let xb = Self::image_node(&mut fwd, batch_b)?;
        let (ea, eb) = self.nets.encode_pair(&mut fwd, xa, xb)?;
        let surrogate = adv_encoder_surrogate(&self.nets, &mut fwd, ea.1, eb.1, None, None, &w)?;
        let rec = reconstruction_loss(&self.nets, &mut fwd, xa, xb, ea, eb, &w)?;
        let sup = supervised_loss(&mut fwd, Some((ea.0, &labels_a)), Some((eb.0, &labels_b)), prior.k, &w)?;
        let draw_b_n = fwd.graph.constant(&[batch_a.n, prior.style_dim_b], draw_b)?;
        let draw_a_n = fwd.graph.constant(&[batch_b.n, prior.style_dim_a], draw_a)?;
        let ctx = CcContext { zc_a: ea.0, zc_b: eb.0, style_draw_b: draw_b_n, style_draw_a: draw_a_n };
        // the re-encode pass runs on generated images; keep those batch
        // statistics out of the running estimates
        fwd.bn_mode = BnMode::TrainFrozen;
        let cc = cc_supervised(&self.nets, &mut fwd, &ctx, &labels_a, &labels_b, &w)?;
        fwd.bn_mode = BnMode::Train;
        self.cc_used.insert("cc_su");

        let s1 = fwd.graph.add(surrogate, rec.total)?;
        let s2 = fwd.graph.add(sup, cc.total)?;
        let total = fwd.graph.add(s1, s2)?;
        fwd.graph.backward(total)?;
        let grads = fwd.grads();
        report.insert("enc_adv_surrogate", fwd.graph.scalar(surrogate) as f64)?;
        report.insert("rec", fwd.graph.scalar(rec.total) as f64)?;
        report.insert("sup", fwd.graph.scalar(sup) as f64)?;
        report.insert("cc_su", fwd.graph.scalar(cc.total) as f64)?;
        report.insert("eg_total", fwd.graph.scalar(total) as f64)?;
        let bn_updates = std::mem::take(&mut fwd.bn_updates);
        drop(fwd);
        let group = self.enc_gen_names();
        Self::apply_update(&mut self.opt_enc_gen, &mut self.store, &grads, &group)?;
        apply_bn_updates(&mut self.store, &bn_updates, BN_MOMENTUM)?;

        self.labels_consumed += (batch_a.n + batch_b.n) as u64;
        self.step += 1;
        Ok(report)
    }

    /// One semi-supervised step: the discriminator sees unlabeled codes as
    /// negatives; the encoder/generator side mixes reconstruction and
    /// adversarial surrogates on unlabeled data with supervised and
    /// labeled-consistency terms on the labeled subset, plus the unlabeled
    /// consistency loss.
    pub fn train_step_semisup(
        &mut self,
        labeled_a: &DomainBatch,
        labeled_b: &DomainBatch,
        unlabeled_a: &DomainBatch,
        unlabeled_b: &DomainBatch,
    ) -> Result<LossReport> {
        if self.cfg.mode != TrainMode::SemiSupervised {
            return Err(Error::InvalidConfig("trainer is not in semi-supervised mode".into()));
        }
        let labels_a = labeled_a.labels.clone().ok_or_else(|| Error::arg("train_step", "labeled batch A has no labels"))?;
        let labels_b = labeled_b.labels.clone().ok_or_else(|| Error::arg("train_step", "labeled batch B has no labels"))?;
        let w = self.cfg.weights;
        let mut report = LossReport::default();

        let (adv_s, adv_c) = self.phase_disc(unlabeled_a, unlabeled_b)?;
        report.insert("adv_style", adv_s)?;
        report.insert("adv_content", adv_c)?;
        report.insert("d_total", -(adv_s + adv_c))?;

        let prior = self.nets.cfg.prior();
        let su_draw_b = prior.sample_style(&mut self.rng, labeled_a.n, Domain::B);
        let su_draw_a = prior.sample_style(&mut self.rng, labeled_b.n, Domain::A);
        let un_draw_b = prior.sample_style(&mut self.rng, unlabeled_a.n, Domain::B);
        let un_draw_a = prior.sample_style(&mut self.rng, unlabeled_b.n, Domain::A);

        let mut fwd = Fwd::new(&self.store, BnMode::Train);
        let uxa = Self::image_node(&mut fwd, unlabeled_a)?;
        let uxb = Self::image_node(&mut fwd, unlabeled_b)?;
        let lxa = Self::image_node(&mut fwd, labeled_a)?;
        let lxb = Self::image_node(&mut fwd, labeled_b)?;
        // one pooled pass over all four batches keeps the shared layers'
        // batch statistics aligned with what eval-time rows experience
        let pooled_u = fwd.graph.concat_rows(uxa, uxb)?;
        let pooled_l = fwd.graph.concat_rows(lxa, lxb)?;
        let pooled = fwd.graph.concat_rows(pooled_u, pooled_l)?;
        let trunk = self.nets.trunk(&mut fwd, pooled)?;
        let zc_all = self.nets.content_head(&mut fwd, trunk)?;
        let (n_ua, n_ub, n_la, n_lb) = (unlabeled_a.n, unlabeled_b.n, labeled_a.n, labeled_b.n);
        let zc_ua = fwd.graph.slice_rows(zc_all, 0, n_ua)?;
        let zc_ub = fwd.graph.slice_rows(zc_all, n_ua, n_ua + n_ub)?;
        let lzc_a = fwd.graph.slice_rows(zc_all, n_ua + n_ub, n_ua + n_ub + n_la)?;
        let lzc_b = fwd.graph.slice_rows(zc_all, n_ua + n_ub + n_la, n_ua + n_ub + n_la + n_lb)?;
        let t_ua = fwd.graph.slice_rows(trunk, 0, n_ua)?;
        let t_ub = fwd.graph.slice_rows(trunk, n_ua, n_ua + n_ub)?;
        let zs_ua = self.nets.style_head(&mut fwd, t_ua, Domain::A)?;
        let zs_ub = self.nets.style_head(&mut fwd, t_ub, Domain::B)?;
        let uea = (zc_ua, zs_ua);
        let ueb = (zc_ub, zs_ub);

        let surrogate = adv_encoder_surrogate(&self.nets, &mut fwd, uea.1, ueb.1, Some(uea.0), Some(ueb.0), &w)?;
        let rec = reconstruction_loss(&self.nets, &mut fwd, uxa, uxb, uea, ueb, &w)?;
        let sup = supervised_loss(&mut fwd, Some((lzc_a, &labels_a)), Some((lzc_b, &labels_b)), prior.k, &w)?;

        let su_draw_b_n = fwd.graph.constant(&[labeled_a.n, prior.style_dim_b], su_draw_b)?;
        let su_draw_a_n = fwd.graph.constant(&[labeled_b.n, prior.style_dim_a], su_draw_a)?;
        let su_ctx = CcContext { zc_a: lzc_a, zc_b: lzc_b, style_draw_b: su_draw_b_n, style_draw_a: su_draw_a_n };
        // consistency passes run on generated images; keep their batch
        // statistics out of the running estimates
        fwd.bn_mode = BnMode::TrainFrozen;
        let cc_su = cc_supervised(&self.nets, &mut fwd, &su_ctx, &labels_a, &labels_b, &w)?;
        self.cc_used.insert("cc_su");

        let un_draw_b_n = fwd.graph.constant(&[unlabeled_a.n, prior.style_dim_b], un_draw_b)?;
        let un_draw_a_n = fwd.graph.constant(&[unlabeled_b.n, prior.style_dim_a], un_draw_a)?;
        let un_ctx = CcContext { zc_a: uea.0, zc_b: ueb.0, style_draw_b: un_draw_b_n, style_draw_a: un_draw_a_n };
        let cc_un = cc_unsupervised(&self.nets, &mut fwd, &un_ctx, &w)?;
        fwd.bn_mode = BnMode::Train;
        self.cc_used.insert("cc_un");

        let s1 = fwd.graph.add(surrogate, rec.total)?;
        let s2 = fwd.graph.add(sup, cc_su.total)?;
        let s3 = fwd.graph.add(s2, cc_un.total)?;
        let total = fwd.graph.add(s1, s3)?;
        fwd.graph.backward(total)?;
        let grads = fwd.grads();
        report.insert("enc_adv_surrogate", fwd.graph.scalar(surrogate) as f64)?;
        report.insert("rec", fwd.graph.scalar(rec.total) as f64)?;
        report.insert("sup", fwd.graph.scalar(sup) as f64)?;
        report.insert("cc_su", fwd.graph.scalar(cc_su.total) as f64)?;
        report.insert("cc_un", fwd.graph.scalar(cc_un.total) as f64)?;
        report.insert("eg_total", fwd.graph.scalar(total) as f64)?;
        let bn_updates = std::mem::take(&mut fwd.bn_updates);
        drop(fwd);
        let group = self.enc_gen_names();
        Self::apply_update(&mut self.opt_enc_gen, &mut self.store, &grads, &group)?;
        apply_bn_updates(&mut self.store, &bn_updates, BN_MOMENTUM)?;

        self.labels_consumed += (labeled_a.n + labeled_b.n) as u64;
        self.step += 1;
        Ok(report)
    }

    /// Joint adaptation step (labeled source A, unlabeled target B):
    /// discriminator ascent, then encoder/generator descent on surrogate +
    /// reconstruction + mixed consistency.
    pub fn train_step_adapt_joint(&mut self, source: &DomainBatch, target: &DomainBatch) -> Result<LossReport> {
        let labels_s = source.labels.clone().ok_or_else(|| Error::arg("train_step", "source batch has no labels"))?;
        let w = self.cfg.weights;
        let mut report = LossReport::default();

        let (adv_s, adv_c) = self.phase_disc(source, target)?;
        report.insert("adv_style", adv_s)?;
        report.insert("adv_content", adv_c)?;
        report.insert("d_total", -(adv_s + adv_c))?;

        let prior = self.nets.cfg.prior();
        let draw_b = prior.sample_style(&mut self.rng, source.n, Domain::B);
        let draw_a = prior.sample_style(&mut self.rng, target.n, Domain::A);

        let mut fwd = Fwd::new(&self.store, BnMode::Train);
        let xs = Self::image_node(&mut fwd, source)?;
        let xt = Self::image_node(&mut fwd, target)?;
        let (es, et) = self.nets.encode_pair(&mut fwd, xs, xt)?;
        let surrogate = adv_encoder_surrogate(&self.nets, &mut fwd, es.1, et.1, Some(es.0), Some(et.0), &w)?;
        let rec = reconstruction_loss(&self.nets, &mut fwd, xs, xt, es, et, &w)?;
        let draw_b_n = fwd.graph.constant(&[source.n, prior.style_dim_b], draw_b)?;
        let draw_a_n = fwd.graph.constant(&[target.n, prior.style_dim_a], draw_a)?;
        let ctx = CcContext { zc_a: es.0, zc_b: et.0, style_draw_b: draw_b_n, style_draw_a: draw_a_n };
        // consistency pass runs on generated images; keep its batch
        // statistics out of the running estimates
        fwd.bn_mode = BnMode::TrainFrozen;
        let cc = cc_mixed(&self.nets, &mut fwd, &ctx, &labels_s, &w)?;
        fwd.bn_mode = BnMode::Train;
        self.cc_used.insert("cc_suun");

        let s1 = fwd.graph.add(surrogate, rec.total)?;
        let total = fwd.graph.add(s1, cc.total)?;
        fwd.graph.backward(total)?;
        let grads = fwd.grads();
        report.insert("enc_adv_surrogate", fwd.graph.scalar(surrogate) as f64)?;
        report.insert("rec", fwd.graph.scalar(rec.total) as f64)?;
        report.insert("cc_suun", fwd.graph.scalar(cc.total) as f64)?;
        report.insert("eg_total", fwd.graph.scalar(total) as f64)?;
        let bn_updates = std::mem::take(&mut fwd.bn_updates);
        drop(fwd);
        let group = self.enc_gen_names();
        Self::apply_update(&mut self.opt_enc_gen, &mut self.store, &grads, &group)?;
        apply_bn_updates(&mut self.store, &bn_updates, BN_MOMENTUM)?;

        self.step += 1;
        Ok(report)
    }

    /// Supervised-content-only step: cross-entropy on one or two labeled
    /// batches, updating just the content-classifier path (shared trunk +
    /// content head).
    pub fn train_step_content_sup(
        &mut self,
        side_a: Option<&DomainBatch>,
        side_b: Option<&DomainBatch>,
    ) -> Result<LossReport> {
        let w = self.cfg.weights;
        let prior = self.nets.cfg.prior();
        let mut fwd = Fwd::new(&self.store, BnMode::Train);
        let mut arg_a = None;
        let mut labels_a = Vec::new();
        let mut arg_b = None;
        let mut labels_b = Vec::new();
        match (side_a, side_b) {
            (Some(ba), Some(bb)) => {
                labels_a = ba.labels.clone().ok_or_else(|| Error::arg("train_step", "side A has no labels"))?;
                labels_b = bb.labels.clone().ok_or_else(|| Error::arg("train_step", "side B has no labels"))?;
                let xa = Self::image_node(&mut fwd, ba)?;
                let xb = Self::image_node(&mut fwd, bb)?;
                let pooled = fwd.graph.concat_rows(xa, xb)?;
                let t = self.nets.trunk(&mut fwd, pooled)?;
                let zc = self.nets.content_head(&mut fwd, t)?;
                arg_a = Some(fwd.graph.slice_rows(zc, 0, ba.n)?);
                arg_b = Some(fwd.graph.slice_rows(zc, ba.n, ba.n + bb.n)?);
                self.labels_consumed += (ba.n + bb.n) as u64;
            }
            (one_a, one_b) => {
                if let Some(batch) = one_a {
                    labels_a = batch.labels.clone().ok_or_else(|| Error::arg("train_step", "side A has no labels"))?;
                    let x = Self::image_node(&mut fwd, batch)?;
                    let t = self.nets.trunk(&mut fwd, x)?;
                    arg_a = Some(self.nets.content_head(&mut fwd, t)?);
                    self.labels_consumed += batch.n as u64;
                }
                if let Some(batch) = one_b {
                    labels_b = batch.labels.clone().ok_or_else(|| Error::arg("train_step", "side B has no labels"))?;
                    let x = Self::image_node(&mut fwd, batch)?;
                    let t = self.nets.trunk(&mut fwd, x)?;
                    arg_b = Some(self.nets.content_head(&mut fwd, t)?);
                    self.labels_consumed += batch.n as u64;
                }
            }
        }
        let sup = supervised_loss(
            &mut fwd,
            arg_a.map(|z| (z, labels_a.as_slice())),
            arg_b.map(|z| (z, labels_b.as_slice())),
            prior.k,
            &w,
        )?;
        fwd.graph.backward(sup)?;
        let grads = fwd.grads();
        let mut report = LossReport::default();
        report.insert("sup", fwd.graph.scalar(sup) as f64)?;
        let bn_updates = std::mem::take(&mut fwd.bn_updates);
        drop(fwd);
        let group = group_names(&self.store, &SUP_PATH_PREFIXES);
        Self::apply_update(&mut self.opt_enc_gen, &mut self.store, &grads, &group)?;
        apply_bn_updates(&mut self.store, &bn_updates, BN_MOMENTUM)?;
        self.step += 1;
        Ok(report)
    }

    /// With-replacement batch draw from the trainer's RNG stream.
    pub fn draw_batch(&mut self, set: &DomainSet, with_labels: bool) -> Result<DomainBatch> {
        let idxs = sample_idx(&mut self.rng, set.n, self.cfg.batch_size);
        let b = set.batch(&idxs)?;
        if with_labels { Ok(b) } else { Ok(DomainBatch { labels: None, ..b }) }
    }

    /// `count` indices into `0..n`, drawn with replacement.
    pub fn sample_from(&mut self, n: usize, count: usize) -> Vec<usize> {
        sample_idx(&mut self.rng, n, count)
    }
}

pub struct RunOutput {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub reports: Vec<LossReport>,
}

/// Checkpoint metadata: run settings plus the network sizing needed to
/// rebuild the model around the stored parameters.
pub fn run_meta(cfg: &TrainConfig) -> String {
    format!(
        "mode={}\nseed={}\nbatch={}\nsteps={}\nk={}\nstyle_dim_a={}\nstyle_dim_b={}\nwidth={}\n",
        cfg.mode.name(),
        cfg.seed,
        cfg.batch_size,
        cfg.steps,
        cfg.net.k,
        cfg.net.style_dim_a,
        cfg.net.style_dim_b,
        cfg.net.width
    )
}

/// Full training run: iterates steps over the dataset pair, appends one CSV
/// row per loss term per step, writes periodic and final checkpoints.
/// Passing a checkpoint resumes the exact run (same batch and prior draws).
pub fn train_run(
    cfg: &TrainConfig,
    data: &DatasetPair,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");

    let mut trainer = match resume_from {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            Trainer::from_checkpoint(cfg.clone(), &ck)?
        }
        None => Trainer::new(cfg.clone())?,
    };

    // fail before training if the directory is not writable
    let mut metrics = std::fs::OpenOptions::new().create(true).append(true).open(&metrics_path)?;
    if trainer.step == 0 {
        metrics.write_all(b"step,term,value\n")?;
    }

    // semi-supervised label economy: the labeled subsets are fixed up front
    let semisup = if cfg.mode == TrainMode::SemiSupervised {
        let split_seed = cfg.seed ^ 0x5e11_5e11;
        let a = crate::datasets::semisup_split(&data.train_a, cfg.labeled_per_class, data.k, split_seed)?;
        let b = crate::datasets::semisup_split(&data.train_b, cfg.labeled_per_class, data.k, split_seed.wrapping_add(1))?;
        Some((a, b))
    } else {
        None
    };

    let meta = run_meta(cfg);
    let mut reports = Vec::new();
    while trainer.step < cfg.steps {
        let report = match cfg.mode {
            TrainMode::Supervised => {
                let ba = trainer.draw_batch(&data.train_a, true)?;
                let bb = trainer.draw_batch(&data.train_b, true)?;
                trainer.train_step_supervised(&ba, &bb)?
            }
            TrainMode::SemiSupervised => {
                let (sa, sb) = semisup.as_ref().expect("split prepared above");
                let la = trainer.draw_batch(&sa.labeled, true)?;
                let lb = trainer.draw_batch(&sb.labeled, true)?;
                let ua = trainer.draw_batch(&sa.unlabeled, false)?;
                let ub = trainer.draw_batch(&sb.unlabeled, false)?;
                trainer.train_step_semisup(&la, &lb, &ua, &ub)?
            }
        };
        metrics.write_all(report.csv_rows(trainer.step).as_bytes())?;
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 && trainer.step < cfg.steps {
            checkpoint::save(out_dir.join(format!("ck_step_{}.bin", trainer.step)), &trainer.checkpoint(&meta))?;
        }
        reports.push(report);
    }
    metrics.flush()?;
    let final_path = out_dir.join("ck_final.bin");
    checkpoint::save(&final_path, &trainer.checkpoint(&meta))?;
    Ok(RunOutput { final_checkpoint: final_path, metrics_path, reports })
}

#[cfg(test)]
mod tests;
