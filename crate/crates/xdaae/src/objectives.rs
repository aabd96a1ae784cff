//! Loss terms: style/content adversarial losses and their minimax routing,
//! reconstruction, supervised cross-entropy, and the three content-code
//! consistency variants (unsupervised, supervised, mixed).
//!
//! All builders operate on graph handles so terms compose into one backward
//! pass. Expectations are batch means; every log argument is clipped.

use crate::autodiff::{Fwd, Scalar, TensorRef, LOG_EPS};
use crate::error::{Error, Result};
use crate::nets::{Disc, Domain, Nets};
use std::collections::BTreeMap;

/// Term weights. Defaults follow the digit experiments; the semi-supervised
/// variant turns the encoder-side content-adversarial terms back on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f32,
    pub alpha2: f32,
    pub alpha3: f32,
    pub alpha4: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub beta3: f32,
    pub gamma1: f32,
    pub gamma2: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    pub eta1: f32,
    pub eta2: f32,
}

impl LossWeights {
    /// Supervised digit defaults: labels carry the content prior, so the
    /// encoder-side content-adversarial terms are off.
    pub fn supervised_digits() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            beta1: 0.0,
            beta2: 0.0,
            beta3: 1.0,
            gamma1: 2.0,
            gamma2: 0.15,
            lambda1: 5.0,
            lambda2: 0.5,
            eta1: 0.3,
            eta2: 0.3,
        }
    }

    /// Semi-supervised defaults: unlabeled content codes face the content
    /// discriminator.
    pub fn semisupervised_digits() -> Self {
        LossWeights { beta1: 1.0, beta2: 1.0, ..Self::supervised_digits() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(&'static str, f32)> {
        vec![
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ]
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::supervised_digits()
    }
}

/// A built loss: the total node plus named intermediate nodes (discriminator
/// outputs, re-encoded codes) so tests can re-sum the formulas sample by
/// sample.
pub struct LossNode {
    pub total: TensorRef,
    pub probes: Vec<(&'static str, TensorRef)>,
}

/// Named scalar values for one step, all finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    terms: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::arg("loss_report", format!("{name} is not finite: {value}")));
        }
        self.terms.insert(name.to_string(), value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.terms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// CSV rows `step,term,value`.
    pub fn csv_rows(&self, step: u64) -> String {
        let mut out = String::new();
        for (name, value) in self.iter() {
            out.push_str(&format!("{step},{name},{value}\n"));
        }
        out
    }
}

fn require_rows<F: Scalar>(fwd: &Fwd<'_, F>, t: TensorRef, what: &'static str) -> Result<usize> {
    let n = fwd.graph.shape(t)[0];
    if n == 0 {
        return Err(Error::arg("loss", format!("empty batch: {what}")));
    }
    Ok(n)
}

fn log_eps<F: Scalar>() -> F {
    F::from_f64(LOG_EPS)
}

/// mean(log(clamp(d, eps, 1))) for a column of discriminator outputs.
fn mean_log<F: Scalar>(fwd: &mut Fwd<'_, F>, d: TensorRef) -> Result<TensorRef> {
    let l = fwd.graph.log_clipped(d, log_eps::<F>());
    fwd.graph.mean_all(l)
}

/// mean(log(clamp(1 - d, eps, 1)))
fn mean_log_one_minus<F: Scalar>(fwd: &mut Fwd<'_, F>, d: TensorRef) -> Result<TensorRef> {
    let om = fwd.graph.one_minus(d);
    let l = fwd.graph.log_clipped(om, log_eps::<F>());
    fwd.graph.mean_all(l)
}

fn weighted_sum<F: Scalar>(fwd: &mut Fwd<'_, F>, terms: &[(f32, TensorRef)]) -> Result<TensorRef> {
    let mut acc: Option<TensorRef> = None;
    for (w, t) in terms {
        let scaled = fwd.graph.scale(*t, F::from_f32(*w));
        acc = Some(match acc {
            None => scaled,
            Some(a) => fwd.graph.add(a, scaled)?,
        });
    }
    Ok(match acc {
        Some(a) => a,
        None => fwd.graph.scalar_const(F::zero()),
    })
}

/// One-hot rows from integer labels, validated against K.
pub fn onehot_rows<F: Scalar>(fwd: &mut Fwd<'_, F>, labels: &[u8], k: usize) -> Result<TensorRef> {
    let mut rows = vec![F::zero(); labels.len() * k];
    for (r, l) in labels.iter().enumerate() {
        if (*l as usize) >= k {
            return Err(Error::arg("labels", format!("label {l} out of range for {k} categories")));
        }
        rows[r * k + *l as usize] = F::one();
    }
    fwd.graph.constant(&[labels.len(), k], rows)
}

/// Style-side adversarial loss:
/// a1*E[log(1-D_A(zs_a))] + a2*E[log(1-D_B(zs_b))] + a3*E[log D_A(pa)] + a4*E[log D_B(pb)].
/// `zs_a`/`zs_b` are encoded style codes; `prior_a`/`prior_b` are prior draws.
pub fn adv_style_loss<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    zs_a: TensorRef,
    zs_b: TensorRef,
    prior_a: TensorRef,
    prior_b: TensorRef,
    w: &LossWeights,
) -> Result<LossNode> {
    require_rows(fwd, zs_a, "style codes A")?;
    require_rows(fwd, zs_b, "style codes B")?;
    require_rows(fwd, prior_a, "style prior A")?;
    require_rows(fwd, prior_b, "style prior B")?;
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    if w.alpha1 != 0.0 {
        let d = nets.discriminate(fwd, zs_a, Disc::Style(Domain::A))?;
        probes.push(("d_style_a_enc", d));
        terms.push((w.alpha1, mean_log_one_minus(fwd, d)?));
    }
    if w.alpha2 != 0.0 {
        let d = nets.discriminate(fwd, zs_b, Disc::Style(Domain::B))?;
        probes.push(("d_style_b_enc", d));
        terms.push((w.alpha2, mean_log_one_minus(fwd, d)?));
    }
    if w.alpha3 != 0.0 {
        let d = nets.discriminate(fwd, prior_a, Disc::Style(Domain::A))?;
        probes.push(("d_style_a_prior", d));
        terms.push((w.alpha3, mean_log(fwd, d)?));
    }
    if w.alpha4 != 0.0 {
        let d = nets.discriminate(fwd, prior_b, Disc::Style(Domain::B))?;
        probes.push(("d_style_b_prior", d));
        terms.push((w.alpha4, mean_log(fwd, d)?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Content-side adversarial loss:
/// b1*E[log(1-Dc(zc_a))] + b2*E[log(1-Dc(zc_b))] + b3*E[log Dc(prior)].
/// Code arguments may be omitted when their weight is zero.
pub fn adv_content_loss<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    zc_a: Option<TensorRef>,
    zc_b: Option<TensorRef>,
    prior_content: Option<TensorRef>,
    w: &LossWeights,
) -> Result<LossNode> {
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    let need = |arg: Option<TensorRef>, what: &'static str| -> Result<TensorRef> {
        arg.ok_or_else(|| Error::arg("adv_content_loss", format!("{what} required by a nonzero weight")))
    };
    if w.beta1 != 0.0 {
        let zc = need(zc_a, "content codes A")?;
        require_rows(fwd, zc, "content codes A")?;
        let d = nets.discriminate(fwd, zc, Disc::Content)?;
        probes.push(("d_content_a_enc", d));
        terms.push((w.beta1, mean_log_one_minus(fwd, d)?));
    }
    if w.beta2 != 0.0 {
        let zc = need(zc_b, "content codes B")?;
        require_rows(fwd, zc, "content codes B")?;
        let d = nets.discriminate(fwd, zc, Disc::Content)?;
        probes.push(("d_content_b_enc", d));
        terms.push((w.beta2, mean_log_one_minus(fwd, d)?));
    }
    if w.beta3 != 0.0 {
        let p = need(prior_content, "content prior samples")?;
        require_rows(fwd, p, "content prior samples")?;
        let d = nets.discriminate(fwd, p, Disc::Content)?;
        probes.push(("d_content_prior", d));
        terms.push((w.beta3, mean_log(fwd, d)?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Non-saturating encoder objective: instead of minimizing log(1-D(E(x)))
/// the encoders minimize -log D(E(x)). The discriminator side keeps the
/// written form; only the encoder's gradient signal is reshaped.
pub fn adv_encoder_surrogate<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    zs_a: TensorRef,
    zs_b: TensorRef,
    zc_a: Option<TensorRef>,
    zc_b: Option<TensorRef>,
    w: &LossWeights,
) -> Result<TensorRef> {
    let mut terms = Vec::new();
    if w.alpha1 != 0.0 {
        let d = nets.discriminate(fwd, zs_a, Disc::Style(Domain::A))?;
        terms.push((w.alpha1, mean_log(fwd, d)?));
    }
    if w.alpha2 != 0.0 {
        let d = nets.discriminate(fwd, zs_b, Disc::Style(Domain::B))?;
        terms.push((w.alpha2, mean_log(fwd, d)?));
    }
    if w.beta1 != 0.0 {
        if let Some(zc) = zc_a {
            let d = nets.discriminate(fwd, zc, Disc::Content)?;
            terms.push((w.beta1, mean_log(fwd, d)?));
        }
    }
    if w.beta2 != 0.0 {
        if let Some(zc) = zc_b {
            let d = nets.discriminate(fwd, zc, Disc::Content)?;
            terms.push((w.beta2, mean_log(fwd, d)?));
        }
    }
    let sum = weighted_sum(fwd, &terms)?;
    Ok(fwd.graph.neg(sum))
}

/// Per-pixel mean-squared reconstruction error through the auto-encoding
/// path: g1*E[d(x_a, G_A([zc_a, zs_a]))] + g2*E[d(x_b, G_B([zc_b, zs_b]))].
pub fn reconstruction_loss<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    x_a: TensorRef,
    x_b: TensorRef,
    enc_a: (TensorRef, TensorRef),
    enc_b: (TensorRef, TensorRef),
    w: &LossWeights,
) -> Result<LossNode> {
    require_rows(fwd, x_a, "images A")?;
    require_rows(fwd, x_b, "images B")?;
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    if w.gamma1 != 0.0 {
        let z = fwd.graph.concat_cols(enc_a.0, enc_a.1)?;
        let recon = nets.generate(fwd, z, Domain::A)?;
        probes.push(("recon_a", recon));
        terms.push((w.gamma1, fwd.graph.mse(x_a, recon)?));
    }
    if w.gamma2 != 0.0 {
        let z = fwd.graph.concat_cols(enc_b.0, enc_b.1)?;
        let recon = nets.generate(fwd, z, Domain::B)?;
        probes.push(("recon_b", recon));
        terms.push((w.gamma2, fwd.graph.mse(x_b, recon)?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Supervised content loss: l1*E[CE(zc_a, labels_a)] + l2*E[CE(zc_b, labels_b)].
/// Either side may be absent (single-domain pretraining).
pub fn supervised_loss<F: Scalar>(
    fwd: &mut Fwd<'_, F>,
    side_a: Option<(TensorRef, &[u8])>,
    side_b: Option<(TensorRef, &[u8])>,
    k: usize,
    w: &LossWeights,
) -> Result<TensorRef> {
    if side_a.is_none() && side_b.is_none() {
        return Err(Error::arg("supervised_loss", "at least one labeled side required"));
    }
    let mut terms = Vec::new();
    for (weight, side, what) in [(w.lambda1, side_a, "A"), (w.lambda2, side_b, "B")] {
        if weight == 0.0 {
            continue;
        }
        if let Some((zc, labels)) = side {
            let n = require_rows(fwd, zc, "labeled codes")?;
            if labels.len() != n {
                return Err(Error::shape(
                    "supervised_loss",
                    format!("side {what}: {n} code rows vs {} labels", labels.len()),
                ));
            }
            let target = onehot_rows(fwd, labels, k)?;
            terms.push((weight, fwd.graph.cross_entropy(zc, target, log_eps::<F>())?));
        }
    }
    weighted_sum(fwd, &terms)
}

/// Inputs shared by the consistency losses: the original images' content
/// codes and one prior style draw per sample for each transform direction.
pub struct CcContext {
    pub zc_a: TensorRef,
    pub zc_b: TensorRef,
    /// Style draws from domain B's prior, used for the A -> B transform.
    pub style_draw_b: TensorRef,
    /// Style draws from domain A's prior, used for the B -> A transform.
    pub style_draw_a: TensorRef,
}

/// Transform `zc` with a style draw through the target generator and
/// re-encode its content code.
fn reencoded_transform<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    zc: TensorRef,
    style_draw: TensorRef,
    target: Domain,
) -> Result<(TensorRef, TensorRef)> {
    let z = fwd.graph.concat_cols(zc, style_draw)?;
    let image = nets.generate(fwd, z, target)?;
    let trunk = nets.trunk(fwd, image)?;
    let code = nets.content_head(fwd, trunk)?;
    Ok((image, code))
}

/// Unlabeled consistency: the re-encoded transform should match the
/// original's content code, which acts as a fixed soft target.
pub fn cc_unsupervised<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    ctx: &CcContext,
    w: &LossWeights,
) -> Result<LossNode> {
    require_rows(fwd, ctx.zc_a, "content codes A")?;
    require_rows(fwd, ctx.zc_b, "content codes B")?;
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    if w.eta1 != 0.0 {
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_a, ctx.style_draw_b, Domain::B)?;
        let target = fwd.graph.detach(ctx.zc_a);
        probes.push(("x_a_to_b", img));
        probes.push(("zc_a_to_b", code));
        terms.push((w.eta1, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    if w.eta2 != 0.0 {
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_b, ctx.style_draw_a, Domain::A)?;
        let target = fwd.graph.detach(ctx.zc_b);
        probes.push(("x_b_to_a", img));
        probes.push(("zc_b_to_a", code));
        terms.push((w.eta2, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Labeled consistency: the re-encoded transforms should classify as the
/// source labels.
pub fn cc_supervised<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    ctx: &CcContext,
    labels_a: &[u8],
    labels_b: &[u8],
    w: &LossWeights,
) -> Result<LossNode> {
    let k = nets.cfg.k;
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    if w.eta1 != 0.0 {
        let n = require_rows(fwd, ctx.zc_a, "content codes A")?;
        if labels_a.len() != n {
            return Err(Error::shape("cc_supervised", format!("{n} rows vs {} labels for A", labels_a.len())));
        }
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_a, ctx.style_draw_b, Domain::B)?;
        let target = onehot_rows(fwd, labels_a, k)?;
        probes.push(("x_a_to_b", img));
        probes.push(("zc_a_to_b", code));
        terms.push((w.eta1, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    if w.eta2 != 0.0 {
        let n = require_rows(fwd, ctx.zc_b, "content codes B")?;
        if labels_b.len() != n {
            return Err(Error::shape("cc_supervised", format!("{n} rows vs {} labels for B", labels_b.len())));
        }
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_b, ctx.style_draw_a, Domain::A)?;
        let target = onehot_rows(fwd, labels_b, k)?;
        probes.push(("x_b_to_a", img));
        probes.push(("zc_b_to_a", code));
        terms.push((w.eta2, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Mixed consistency for adaptation: labeled side A uses its labels, the
/// unlabeled side B falls back to the soft-target rule. Labels on side B,
/// if any, are ignored by construction.
pub fn cc_mixed<F: Scalar>(
    nets: &Nets,
    fwd: &mut Fwd<'_, F>,
    ctx: &CcContext,
    labels_a: &[u8],
    w: &LossWeights,
) -> Result<LossNode> {
    let k = nets.cfg.k;
    let mut terms = Vec::new();
    let mut probes = Vec::new();
    if w.eta1 != 0.0 {
        let n = require_rows(fwd, ctx.zc_a, "content codes A")?;
        if labels_a.len() != n {
            return Err(Error::shape("cc_mixed", format!("{n} rows vs {} labels for A", labels_a.len())));
        }
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_a, ctx.style_draw_b, Domain::B)?;
        let target = onehot_rows(fwd, labels_a, k)?;
        probes.push(("x_a_to_b", img));
        probes.push(("zc_a_to_b", code));
        terms.push((w.eta1, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    if w.eta2 != 0.0 {
        require_rows(fwd, ctx.zc_b, "content codes B")?;
        let (img, code) = reencoded_transform(nets, fwd, ctx.zc_b, ctx.style_draw_a, Domain::A)?;
        let target = fwd.graph.detach(ctx.zc_b);
        probes.push(("x_b_to_a", img));
        probes.push(("zc_b_to_a", code));
        terms.push((w.eta2, fwd.graph.cross_entropy(code, target, log_eps::<F>())?));
    }
    Ok(LossNode { total: weighted_sum(fwd, &terms)?, probes })
}

/// Gradient routing of the adversarial minimax game: encoders minimize, the
/// three discriminators maximize. The trainer realizes this as alternating
/// steps: discriminator ascent on the written losses, then encoder descent
/// on the non-saturating surrogate.
#[derive(Debug, Clone)]
pub struct MinimaxRoles {
    pub minimizer_prefixes: Vec<&'static str>,
    pub maximizer_prefixes: Vec<&'static str>,
    pub encoder_uses_nonsaturating_surrogate: bool,
}

pub fn minimax_roles() -> MinimaxRoles {
    MinimaxRoles {
        minimizer_prefixes: crate::nets::ENC_GEN_PREFIXES.to_vec(),
        maximizer_prefixes: crate::nets::DISC_PREFIXES.to_vec(),
        encoder_uses_nonsaturating_surrogate: true,
    }
}

#[cfg(test)]
mod tests;
