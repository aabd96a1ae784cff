//! Evaluation protocol: independently trained per-domain oracle classifiers,
//! transfer-accuracy scenarios over generated/transformed images, the
//! latent-code compression-ratio accounting, and figure-style grid emission.

use crate::autodiff::{apply_bn_updates, Adam, AdamConfig, BnMode, Fwd, ParamStore, BN_MOMENTUM};
use crate::datasets::DomainSet;
use crate::error::{Error, Result};
use crate::nets::{Domain, LatentCode, NetConfig, Nets, StyleSource, IMAGE_PIXELS, IMAGE_SIDE};
use crate::objectives::{supervised_loss, LossWeights};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

/// Argmax accuracy of the content encoder on a labeled set
/// (classifier-as-encoder reading).
pub fn content_accuracy(nets: &Nets, store: &ParamStore<f32>, set: &DomainSet) -> Result<f32> {
    if !set.is_labeled() {
        return Err(Error::arg("content_accuracy", "set carries no labels"));
    }
    let probs = nets.encode_content_eval(store, &set.images, set.n)?;
    let pred = Nets::argmax_rows(&probs, nets.cfg.k);
    let correct = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f32 / set.n as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub net: NetConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { net: NetConfig::default(), steps: 400, batch_size: 32, lr: 1e-3, seed: 7 }
    }
}

/// A per-domain classifier with the content-encoder architecture but its own
/// parameter store; used only to score generated and transformed images.
pub struct Oracle {
    pub nets: Nets,
    pub store: ParamStore<f32>,
    pub domain: Domain,
}

impl Oracle {
    pub fn predict(&self, images: &[f32], n: usize) -> Result<Vec<u8>> {
        let probs = self.nets.encode_content_eval(&self.store, images, n)?;
        Ok(Nets::argmax_rows(&probs, self.nets.cfg.k))
    }

    pub fn accuracy(&self, set: &DomainSet) -> Result<f32> {
        content_accuracy(&self.nets, &self.store, set)
    }
}

/// Train a classifier on one labeled domain. Parameters are freshly
/// initialized and never shared with any other network set.
pub fn train_oracle_classifier(data: &DomainSet, cfg: &OracleConfig) -> Result<Oracle> {
    if !data.is_labeled() {
        return Err(Error::arg("train_oracle", "training data carries no labels"));
    }
    let nets = Nets::new(cfg.net)?;
    let mut store = nets.init_params(cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let weights = LossWeights { lambda1: 1.0, ..LossWeights::supervised_digits() };
    let group = crate::nets::group_names(&store, &crate::nets::SUP_PATH_PREFIXES);
    for _ in 0..cfg.steps {
        let idxs: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..data.n)).collect();
        let batch = data.batch(&idxs)?;
        let mut fwd = Fwd::new(&store, BnMode::Train);
        let x = fwd.graph.constant(&[batch.n, 3, IMAGE_SIDE, IMAGE_SIDE], batch.images.clone())?;
        let t = nets.trunk(&mut fwd, x)?;
        let zc = nets.content_head(&mut fwd, t)?;
        let labels = batch.labels.as_deref().expect("labeled data");
        let loss = supervised_loss(&mut fwd, Some((zc, labels)), None, nets.cfg.k, &weights)?;
        fwd.graph.backward(loss)?;
        let grads = fwd.grads();
        let bn_updates = std::mem::take(&mut fwd.bn_updates);
        drop(fwd);
        let present: Vec<&str> = group.iter().map(|s| s.as_str()).filter(|n| grads.contains_key(*n)).collect();
        opt.step(&mut store, &grads, present)?;
        apply_bn_updates(&mut store, &bn_updates, BN_MOMENTUM)?;
    }
    Ok(Oracle { nets, store, domain: data.domain })
}

/// How evaluation images are produced before the oracle scores them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Content one-hot + prior style, decoded by the domain's generator; the
    /// content index is the ground truth.
    Prior { domain: Domain },
    /// Test images re-styled within their own domain.
    SelfTransfer { domain: Domain },
    /// Test images of `from` transformed into `to`.
    Cross { from: Domain, to: Domain },
}

impl Scenario {
    pub fn target_domain(&self) -> Domain {
        match self {
            Scenario::Prior { domain } => *domain,
            Scenario::SelfTransfer { domain } => *domain,
            Scenario::Cross { to, .. } => *to,
        }
    }

    /// Table-1-style column key (P/A/B to A/B).
    pub fn key(&self) -> String {
        match self {
            Scenario::Prior { domain } => format!("P2{domain}"),
            Scenario::SelfTransfer { domain } => format!("{domain}2{domain}"),
            Scenario::Cross { from, to } => format!("{from}2{to}"),
        }
    }
}

/// Oracle agreement rate on scenario-generated images. `test_set` supplies
/// the inputs (and truth labels) for the transfer scenarios; the prior
/// scenario draws `n_per_class` samples per category instead.
pub fn transfer_accuracy(
    nets: &Nets,
    store: &ParamStore<f32>,
    oracle: &Oracle,
    scenario: Scenario,
    test_set: Option<&DomainSet>,
    n_per_class: usize,
    rng: &mut ChaCha20Rng,
) -> Result<f32> {
    let target = scenario.target_domain();
    if oracle.domain != target {
        return Err(Error::arg(
            "transfer_accuracy",
            format!("oracle is for domain {}, scenario targets {target}", oracle.domain),
        ));
    }
    let (images, truth, n) = match scenario {
        Scenario::Prior { domain } => {
            let k = nets.cfg.k;
            if n_per_class == 0 {
                return Err(Error::arg("transfer_accuracy", "n_per_class must be >= 1"));
            }
            let n = k * n_per_class;
            let prior = nets.cfg.prior();
            let style = prior.sample_style(rng, n, domain);
            let sd = prior.style_dim(domain);
            let mut codes = Vec::with_capacity(n);
            let mut truth = Vec::with_capacity(n);
            for c in 0..k {
                for i in 0..n_per_class {
                    let row = c * n_per_class + i;
                    let mut content = vec![0.0f32; k];
                    content[c] = 1.0;
                    codes.push(LatentCode { content, style: style[row * sd..(row + 1) * sd].to_vec(), domain });
                    truth.push(c as u8);
                }
            }
            (nets.generate_eval(store, &codes)?, truth, n)
        }
        Scenario::SelfTransfer { .. } | Scenario::Cross { .. } => {
            let set = test_set.ok_or_else(|| Error::arg("transfer_accuracy", "transfer scenarios need a test set"))?;
            if !set.is_labeled() {
                return Err(Error::arg("transfer_accuracy", "test set carries no labels"));
            }
            let expect_from = match scenario {
                Scenario::SelfTransfer { domain } => domain,
                Scenario::Cross { from, .. } => from,
                _ => unreachable!(),
            };
            if set.domain != expect_from {
                return Err(Error::arg(
                    "transfer_accuracy",
                    format!("scenario reads domain {expect_from} inputs, test set is {}", set.domain),
                ));
            }
            let imgs = nets.transform_eval(store, &set.images, set.n, target, StyleSource::Prior, rng)?;
            (imgs, set.labels.clone(), set.n)
        }
    };
    let pred = oracle.predict(&images, n)?;
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(correct as f32 / n as f32)
}

/// Storage-bit ratio of an image against its latent code: one-hot content
/// costs `content_bits` (= K) and each style dimension `style_bits_per_dim`.
/// Integer arithmetic throughout; the division happens once at the end.
pub fn compression_ratio(
    image_dims: &[u64],
    image_bits_per_value: u64,
    content_bits: u64,
    style_dims: u64,
    style_bits_per_dim: u64,
) -> Result<f64> {
    if image_dims.is_empty() || image_dims.iter().any(|d| *d == 0) {
        return Err(Error::arg("compression_ratio", "image dims must be positive"));
    }
    let numerator: u128 = image_dims.iter().map(|d| *d as u128).product::<u128>() * image_bits_per_value as u128;
    let denominator: u128 = content_bits as u128 + style_dims as u128 * style_bits_per_dim as u128;
    if denominator == 0 {
        return Err(Error::arg("compression_ratio", "latent code has zero storage bits"));
    }
    Ok(numerator as f64 / denominator as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scenario: String,
    pub accuracy: f64,
    pub count: usize,
}

/// Per-scenario accuracies plus sample counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn push(&mut self, scenario: String, accuracy: f64, count: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&accuracy) || count == 0 {
            return Err(Error::arg("eval_report", format!("accuracy {accuracy} / count {count} out of range")));
        }
        self.rows.push(EvalRow { scenario, accuracy, count });
        Ok(())
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("scenario,accuracy,count\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.scenario, r.accuracy, r.count));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::from(format!("{:<10} {:>9} {:>7}\n", "scenario", "accuracy", "count"));
        for r in &self.rows {
            out.push_str(&format!("{:<10} {:>8.2}% {:>7}\n", r.scenario, r.accuracy * 100.0, r.count));
        }
        out
    }
}

/// Write a rows x cols grid of [-1, 1] images as an 8-bit PNG. An optional
/// red separator line is inserted after the given column (input column in
/// the transform figures). `upscale` is nearest-neighbor, 1 = raw size.
pub fn image_grid(
    images: &[f32],
    n: usize,
    rows: usize,
    cols: usize,
    separator_after_col: Option<usize>,
    upscale: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != n {
        return Err(Error::arg("image_grid", format!("{rows}x{cols} grid cannot hold {n} images")));
    }
    if images.len() != n * IMAGE_PIXELS {
        return Err(Error::shape("image_grid", format!("want {} values, got {}", n * IMAGE_PIXELS, images.len())));
    }
    if images.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 1.0) {
        return Err(Error::arg("image_grid", "image values must lie in [-1, 1]"));
    }
    if upscale == 0 {
        return Err(Error::arg("image_grid", "upscale must be >= 1"));
    }
    if let Some(c) = separator_after_col {
        if c == 0 || c >= cols {
            return Err(Error::arg("image_grid", format!("separator column {c} out of range 1..{cols}")));
        }
    }
    let side = IMAGE_SIDE;
    let cell = side * upscale;
    let sep_w = if separator_after_col.is_some() { 2 * upscale } else { 0 };
    let width = cols * cell + sep_w;
    let height = rows * cell;
    let mut img = image::RgbImage::new(width as u32, height as u32);
    // red separator background where applicable
    if let Some(c) = separator_after_col {
        let x0 = c * cell;
        for y in 0..height {
            for x in x0..x0 + sep_w {
                img.put_pixel(x as u32, y as u32, image::Rgb([255, 0, 0]));
            }
        }
    }
    let plane = side * side;
    for r in 0..rows {
        for c in 0..cols {
            let tile = &images[(r * cols + c) * IMAGE_PIXELS..(r * cols + c + 1) * IMAGE_PIXELS];
            let x_off = c * cell + if separator_after_col.map(|s| c >= s).unwrap_or(false) { sep_w } else { 0 };
            let y_off = r * cell;
            for y in 0..side {
                for x in 0..side {
                    let px = [
                        ((tile[y * side + x] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8,
                        ((tile[plane + y * side + x] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8,
                        ((tile[2 * plane + y * side + x] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8,
                    ];
                    for uy in 0..upscale {
                        for ux in 0..upscale {
                            img.put_pixel(
                                (x_off + x * upscale + ux) as u32,
                                (y_off + y * upscale + uy) as u32,
                                image::Rgb(px),
                            );
                        }
                    }
                }
            }
        }
    }
    img.save(path.as_ref()).map_err(|e| Error::Image(e.to_string()))
}
