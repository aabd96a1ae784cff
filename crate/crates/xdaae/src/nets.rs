//! The network set: shared low-level encoder trunk, content head, per-domain
//! style heads, per-domain generators and three code discriminators, plus the
//! encode / generate / transform / discriminate compositions.
//!
//! Topology: the content encoder is trunk + content head. Both style heads
//! branch from the activations of the trunk's second layer, so the trunk
//! parameters are physically shared by the content path and both style paths.

use crate::autodiff::{BnMode, Fwd, ParamStore, Scalar, TensorRef, BN_EPS};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_PIXELS: usize = IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

/// Which of the two image domains a batch, code or head belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::A => "a",
            Domain::B => "b",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::A => write!(f, "A"),
            Domain::B => write!(f, "B"),
        }
    }
}

/// Which discriminator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disc {
    Content,
    Style(Domain),
}

/// Prior over latent codes: uniform one-hot categories for content, isotropic
/// unit Gaussians for the per-domain styles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub k: usize,
    pub style_dim_a: usize,
    pub style_dim_b: usize,
}

impl PriorSpec {
    pub fn style_dim(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.style_dim_a,
            Domain::B => self.style_dim_b,
        }
    }

    /// n one-hot rows drawn uniformly over the K categories. Returns the flat
    /// (n, k) matrix and the drawn category indices.
    pub fn sample_content(&self, rng: &mut ChaCha20Rng, n: usize) -> (Vec<f32>, Vec<u8>) {
        let mut rows = vec![0.0f32; n * self.k];
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let c = rng.gen_range(0..self.k);
            rows[r * self.k + c] = 1.0;
            labels.push(c as u8);
        }
        (rows, labels)
    }

    /// n style rows from the unit Gaussian of the tagged domain.
    pub fn sample_style(&self, rng: &mut ChaCha20Rng, n: usize, domain: Domain) -> Vec<f32> {
        let d = self.style_dim(domain);
        (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
    }

    pub fn sample_codes(&self, rng: &mut ChaCha20Rng, n: usize, domain: Domain) -> Vec<LatentCode> {
        let (content, _) = self.sample_content(rng, n);
        let style = self.sample_style(rng, n, domain);
        let d = self.style_dim(domain);
        (0..n)
            .map(|r| LatentCode {
                content: content[r * self.k..(r + 1) * self.k].to_vec(),
                style: style[r * d..(r + 1) * d].to_vec(),
                domain,
            })
            .collect()
    }
}

/// A content part (probability vector over K categories) and a style part
/// (real vector of the tagged domain). Concatenation order is always
/// content-then-style.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub content: Vec<f32>,
    pub style: Vec<f32>,
    pub domain: Domain,
}

impl LatentCode {
    pub fn new(content: Vec<f32>, style: Vec<f32>, domain: Domain) -> Result<Self> {
        if content.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::arg("latent_code", "content entries must be finite and >= 0"));
        }
        let sum: f32 = content.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::arg("latent_code", format!("content sums to {sum}, not 1")));
        }
        if style.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("latent_code", "style entries must be finite"));
        }
        Ok(LatentCode { content, style, domain })
    }

    pub fn concat(&self) -> Vec<f32> {
        let mut z = self.content.clone();
        z.extend_from_slice(&self.style);
        z
    }
}

/// Sizing knobs for the whole network set. `width` scales every hidden
/// channel count so desk-scale runs can shrink the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub k: usize,
    pub style_dim_a: usize,
    pub style_dim_b: usize,
    pub width: f32,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { k: 10, style_dim_a: 8, style_dim_b: 8, width: 1.0 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("content categories k must be >= 2".into()));
        }
        if self.style_dim_a < 1 || self.style_dim_b < 1 {
            return Err(Error::InvalidConfig("style dims must be >= 1".into()));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::InvalidConfig("width multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec { k: self.k, style_dim_a: self.style_dim_a, style_dim_b: self.style_dim_b }
    }

    fn ch(&self, base: usize) -> usize {
        ((base as f32 * self.width).round() as usize).max(1)
    }

    pub fn style_dim(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.style_dim_a,
            Domain::B => self.style_dim_b,
        }
    }

    pub fn latent_dim(&self, domain: Domain) -> usize {
        self.k + self.style_dim(domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Dense,
}

/// One layer row of the architecture table used by the shape audit.
#[derive(Debug, Clone)]
pub struct LayerDesc {
    pub net: &'static str,
    pub name: String,
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batch_norm: bool,
}

/// Parameter names and shapes for the nine networks.
#[derive(Debug, Clone)]
pub struct Nets {
    pub cfg: NetConfig,
}

struct ConvSpec {
    name: String,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    bn: bool,
}

impl Nets {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Nets { cfg })
    }

    fn trunk_convs(&self) -> Vec<ConvSpec> {
        let c = |b| self.cfg.ch(b);
        vec![
            ConvSpec { name: "e_l.conv1".into(), ci: IMAGE_CHANNELS, co: c(64), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: "e_l.conv2".into(), ci: c(64), co: c(128), k: 4, stride: 2, padding: 1, bn: true },
        ]
    }

    fn content_convs(&self) -> Vec<ConvSpec> {
        let c = |b| self.cfg.ch(b);
        vec![
            ConvSpec { name: "e_hc.conv3".into(), ci: c(128), co: c(256), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: "e_hc.conv4".into(), ci: c(256), co: c(128), k: 4, stride: 1, padding: 0, bn: true },
        ]
    }

    fn style_convs(&self, domain: Domain) -> Vec<ConvSpec> {
        let c = |b| self.cfg.ch(b);
        let p = format!("e_s_{}", domain.tag());
        vec![
            ConvSpec { name: format!("{p}.conv1"), ci: c(128), co: c(128), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: format!("{p}.conv2"), ci: c(128), co: c(256), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: format!("{p}.conv3"), ci: c(256), co: c(256), k: 2, stride: 1, padding: 0, bn: true },
        ]
    }

    fn gen_tconvs(&self, domain: Domain) -> Vec<ConvSpec> {
        let c = |b| self.cfg.ch(b);
        let p = format!("g_{}", domain.tag());
        let zin = self.cfg.latent_dim(domain);
        vec![
            ConvSpec { name: format!("{p}.tconv1"), ci: zin, co: c(256), k: 4, stride: 1, padding: 0, bn: true },
            ConvSpec { name: format!("{p}.tconv2"), ci: c(256), co: c(128), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: format!("{p}.tconv3"), ci: c(128), co: c(64), k: 4, stride: 2, padding: 1, bn: true },
            ConvSpec { name: format!("{p}.tconv4"), ci: c(64), co: IMAGE_CHANNELS, k: 4, stride: 2, padding: 1, bn: false },
        ]
    }

    fn disc_dims(&self, which: Disc) -> (String, Vec<usize>) {
        let c = |b| self.cfg.ch(b);
        let (prefix, input) = match which {
            Disc::Content => ("d_c".to_string(), self.cfg.k),
            Disc::Style(d) => (format!("d_s_{}", d.tag()), self.cfg.style_dim(d)),
        };
        (prefix, vec![input, c(512), c(256), c(128), 1])
    }

    /// Architecture table covering every layer of the nine networks.
    pub fn architecture(&self) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let conv = |net: &'static str, s: &ConvSpec, kind: LayerKind| LayerDesc {
            net,
            name: s.name.clone(),
            kind,
            in_dim: s.ci,
            out_dim: s.co,
            kernel: s.k,
            stride: s.stride,
            padding: s.padding,
            batch_norm: s.bn,
        };
        for s in self.trunk_convs() {
            out.push(conv("e_l", &s, LayerKind::Conv));
        }
        for s in self.content_convs() {
            out.push(conv("e_hc", &s, LayerKind::Conv));
        }
        out.push(LayerDesc {
            net: "e_hc",
            name: "e_hc.fc".into(),
            kind: LayerKind::Dense,
            in_dim: self.cfg.ch(128),
            out_dim: self.cfg.k,
            kernel: 0,
            stride: 0,
            padding: 0,
            batch_norm: false,
        });
        for (net, d) in [("e_s_a", Domain::A), ("e_s_b", Domain::B)] {
            for s in self.style_convs(d) {
                out.push(conv(net, &s, LayerKind::Conv));
            }
            out.push(LayerDesc {
                net,
                name: format!("{net}.fc"),
                kind: LayerKind::Dense,
                in_dim: self.cfg.ch(256),
                out_dim: self.cfg.style_dim(d),
                kernel: 0,
                stride: 0,
                padding: 0,
                batch_norm: false,
            });
        }
        for (net, d) in [("g_a", Domain::A), ("g_b", Domain::B)] {
            for s in self.gen_tconvs(d) {
                out.push(conv(net, &s, LayerKind::ConvTranspose));
            }
        }
        for which in [Disc::Content, Disc::Style(Domain::A), Disc::Style(Domain::B)] {
            let (prefix, dims) = self.disc_dims(which);
            let net: &'static str = match which {
                Disc::Content => "d_c",
                Disc::Style(Domain::A) => "d_s_a",
                Disc::Style(Domain::B) => "d_s_b",
            };
            for i in 0..dims.len() - 1 {
                out.push(LayerDesc {
                    net,
                    name: format!("{prefix}.fc{}", i + 1),
                    kind: LayerKind::Dense,
                    in_dim: dims[i],
                    out_dim: dims[i + 1],
                    kernel: 0,
                    stride: 0,
                    padding: 0,
                    batch_norm: false,
                });
            }
        }
        out
    }

    /// Fresh parameter store: He-scaled normal weights, zero biases, identity
    /// batch-norm with unit running variance.
    pub fn init_params(&self, seed: u64) -> ParamStore<f32> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let he = |rng: &mut ChaCha20Rng, fan_in: usize, n: usize| -> Vec<f32> {
            let std = (2.0 / fan_in as f32).sqrt();
            (0..n).map(|_| rng.sample::<f32, _>(StandardNormal) * std).collect()
        };

        let add_conv = |rng: &mut ChaCha20Rng, store: &mut ParamStore<f32>, s: &ConvSpec, transpose: bool| {
            let numel = s.ci * s.co * s.k * s.k;
            let shape = if transpose { vec![s.ci, s.co, s.k, s.k] } else { vec![s.co, s.ci, s.k, s.k] };
            let w = he(rng, s.ci * s.k * s.k, numel);
            store.insert_param(format!("{}.w", s.name), shape, w);
            if s.bn {
                let c = s.co;
                store.insert_param(format!("{}.bn.gamma", s.name), vec![c], vec![1.0; c]);
                store.insert_param(format!("{}.bn.beta", s.name), vec![c], vec![0.0; c]);
                store.insert_buffer(format!("{}.bn.running_mean", s.name), vec![c], vec![0.0; c]);
                store.insert_buffer(format!("{}.bn.running_var", s.name), vec![c], vec![1.0; c]);
            } else if transpose {
                store.insert_param(format!("{}.b", s.name), vec![s.co], vec![0.0; s.co]);
            }
        };

        for s in self.trunk_convs().iter().chain(&self.content_convs()) {
            add_conv(&mut rng, &mut store, s, false);
        }
        let fc_in = self.cfg.ch(128);
        store.insert_param("e_hc.fc.w", vec![fc_in, self.cfg.k], he(&mut rng, fc_in, fc_in * self.cfg.k));
        store.insert_param("e_hc.fc.b", vec![self.cfg.k], vec![0.0; self.cfg.k]);

        for d in [Domain::A, Domain::B] {
            for s in self.style_convs(d) {
                add_conv(&mut rng, &mut store, &s, false);
            }
            let sin = self.cfg.ch(256);
            let sout = self.cfg.style_dim(d);
            store.insert_param(format!("e_s_{}.fc.w", d.tag()), vec![sin, sout], he(&mut rng, sin, sin * sout));
            store.insert_param(format!("e_s_{}.fc.b", d.tag()), vec![sout], vec![0.0; sout]);
        }

        for d in [Domain::A, Domain::B] {
            for s in self.gen_tconvs(d) {
                add_conv(&mut rng, &mut store, &s, true);
            }
        }

        for which in [Disc::Content, Disc::Style(Domain::A), Disc::Style(Domain::B)] {
            let (prefix, dims) = self.disc_dims(which);
            for i in 0..dims.len() - 1 {
                let (fi, fo) = (dims[i], dims[i + 1]);
                store.insert_param(format!("{prefix}.fc{}.w", i + 1), vec![fi, fo], he(&mut rng, fi, fi * fo));
                store.insert_param(format!("{prefix}.fc{}.b", i + 1), vec![fo], vec![0.0; fo]);
            }
        }
        store
    }

    fn conv_bn_relu<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, x: TensorRef, s: &ConvSpec) -> Result<TensorRef> {
        let w = fwd.param(&format!("{}.w", s.name))?;
        let y = fwd.graph.conv2d(x, w, s.stride, s.padding)?;
        let y = if s.bn { fwd.batchnorm(y, &format!("{}.bn", s.name), F::from_f64(BN_EPS))? } else { y };
        Ok(fwd.graph.relu(y))
    }

    fn check_image_input<F: Scalar>(&self, fwd: &Fwd<'_, F>, x: TensorRef) -> Result<usize> {
        let shape = fwd.graph.shape(x);
        if shape.len() != 4 || shape[1] != IMAGE_CHANNELS || shape[2] != IMAGE_SIDE || shape[3] != IMAGE_SIDE {
            return Err(Error::shape(
                "encode",
                format!("want (n, {IMAGE_CHANNELS}, {IMAGE_SIDE}, {IMAGE_SIDE}) images, got {:?}", shape),
            ));
        }
        Ok(shape[0])
    }

    /// Shared low layers; output feeds both the content head and the style heads.
    pub fn trunk<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, x: TensorRef) -> Result<TensorRef> {
        self.check_image_input(fwd, x)?;
        let mut h = x;
        for s in self.trunk_convs() {
            h = self.conv_bn_relu(fwd, h, &s)?;
        }
        Ok(h)
    }

    /// Content head on trunk activations: softmax probability rows (n, K).
    pub fn content_head<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, trunk2: TensorRef) -> Result<TensorRef> {
        let mut h = trunk2;
        for s in self.content_convs() {
            h = self.conv_bn_relu(fwd, h, &s)?;
        }
        let n = fwd.graph.shape(h)[0];
        let flat = fwd.graph.reshape(h, &[n, self.cfg.ch(128)])?;
        let w = fwd.param("e_hc.fc.w")?;
        let b = fwd.param("e_hc.fc.b")?;
        let logits = fwd.graph.dense(flat, w, b)?;
        fwd.graph.softmax_rows(logits)
    }

    /// Style head of the tagged domain on trunk activations: (n, style_dim),
    /// unbounded (no final nonlinearity).
    pub fn style_head<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, trunk2: TensorRef, domain: Domain) -> Result<TensorRef> {
        let mut h = trunk2;
        for s in self.style_convs(domain) {
            h = self.conv_bn_relu(fwd, h, &s)?;
        }
        let n = fwd.graph.shape(h)[0];
        let flat = fwd.graph.reshape(h, &[n, self.cfg.ch(256)])?;
        let w = fwd.param(&format!("e_s_{}.fc.w", domain.tag()))?;
        let b = fwd.param(&format!("e_s_{}.fc.b", domain.tag()))?;
        fwd.graph.dense(flat, w, b)
    }

    /// Full encoder for one domain: (content probabilities, style vector).
    pub fn encode<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, x: TensorRef, domain: Domain) -> Result<(TensorRef, TensorRef)> {
        let t = self.trunk(fwd, x)?;
        let zc = self.content_head(fwd, t)?;
        let zs = self.style_head(fwd, t, domain)?;
        Ok((zc, zs))
    }

    /// Encode one batch per domain through a single pooled trunk pass. The
    /// shared layers' batch statistics then cover both domains at once,
    /// matching the pooled running statistics used at eval time.
    pub fn encode_pair<F: Scalar>(
        &self,
        fwd: &mut Fwd<'_, F>,
        x_a: TensorRef,
        x_b: TensorRef,
    ) -> Result<((TensorRef, TensorRef), (TensorRef, TensorRef))> {
        let na = self.check_image_input(fwd, x_a)?;
        let nb = self.check_image_input(fwd, x_b)?;
        let pooled = fwd.graph.concat_rows(x_a, x_b)?;
        let t = self.trunk(fwd, pooled)?;
        let zc = self.content_head(fwd, t)?;
        let zc_a = fwd.graph.slice_rows(zc, 0, na)?;
        let zc_b = fwd.graph.slice_rows(zc, na, na + nb)?;
        let t_a = fwd.graph.slice_rows(t, 0, na)?;
        let t_b = fwd.graph.slice_rows(t, na, na + nb)?;
        let zs_a = self.style_head(fwd, t_a, Domain::A)?;
        let zs_b = self.style_head(fwd, t_b, Domain::B)?;
        Ok(((zc_a, zs_a), (zc_b, zs_b)))
    }

    /// Decode a latent matrix (n, K + style_dim) into images of the domain.
    pub fn generate<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, z: TensorRef, domain: Domain) -> Result<TensorRef> {
        let shape = fwd.graph.shape(z).to_vec();
        let want = self.cfg.latent_dim(domain);
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::shape(
                "generate",
                format!("domain {domain} wants (n, {want}) latent rows, got {:?}", shape),
            ));
        }
        let n = shape[0];
        let mut h = fwd.graph.reshape(z, &[n, want, 1, 1])?;
        let specs = self.gen_tconvs(domain);
        for (i, s) in specs.iter().enumerate() {
            let w = fwd.param(&format!("{}.w", s.name))?;
            h = fwd.graph.conv_transpose2d(h, w, s.stride, s.padding)?;
            if s.bn {
                h = fwd.batchnorm(h, &format!("{}.bn", s.name), F::from_f64(BN_EPS))?;
            }
            if i + 1 < specs.len() {
                h = fwd.graph.relu(h);
            } else {
                let b = fwd.param(&format!("{}.b", s.name))?;
                h = fwd.graph.bias_channel(h, b)?;
                h = fwd.graph.tanh(h);
            }
        }
        Ok(h)
    }

    /// Scalar-in-(0,1) judgement per code row.
    pub fn discriminate<F: Scalar>(&self, fwd: &mut Fwd<'_, F>, code: TensorRef, which: Disc) -> Result<TensorRef> {
        let (prefix, dims) = self.disc_dims(which);
        let shape = fwd.graph.shape(code).to_vec();
        if shape.len() != 2 || shape[1] != dims[0] {
            return Err(Error::shape(
                "discriminate",
                format!("{prefix} wants (n, {}) codes, got {:?}", dims[0], shape),
            ));
        }
        let mut h = code;
        for i in 0..dims.len() - 1 {
            let w = fwd.param(&format!("{prefix}.fc{}.w", i + 1))?;
            let b = fwd.param(&format!("{prefix}.fc{}.b", i + 1))?;
            h = fwd.graph.dense(h, w, b)?;
            if i + 2 < dims.len() {
                h = fwd.graph.relu(h);
            }
        }
        Ok(fwd.graph.sigmoid(h))
    }

    // ----- eval-mode conveniences (running statistics, chunked) -----

    fn eval_chunks<T>(
        &self,
        n: usize,
        images: &[f32],
        mut f: impl FnMut(&[f32], usize) -> Result<Vec<T>>,
    ) -> Result<Vec<T>> {
        if images.len() != n * IMAGE_PIXELS {
            return Err(Error::shape(
                "encode",
                format!("want {} values for {} images, got {}", n * IMAGE_PIXELS, n, images.len()),
            ));
        }
        let chunk = 64;
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            let slice = &images[start * IMAGE_PIXELS..(start + len) * IMAGE_PIXELS];
            out.extend(f(slice, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Content probability rows for a flat image batch, eval-mode batch norm.
    pub fn encode_content_eval(&self, store: &ParamStore<f32>, images: &[f32], n: usize) -> Result<Vec<f32>> {
        self.eval_chunks(n, images, |slice, len| {
            let mut fwd = Fwd::new(store, BnMode::Eval);
            let x = fwd.graph.constant(&[len, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], slice.to_vec())?;
            let t = self.trunk(&mut fwd, x)?;
            let zc = self.content_head(&mut fwd, t)?;
            Ok(fwd.graph.values(zc).to_vec())
        })
    }

    /// Style rows for a flat image batch of the tagged domain.
    pub fn encode_style_eval(&self, store: &ParamStore<f32>, images: &[f32], n: usize, domain: Domain) -> Result<Vec<f32>> {
        self.eval_chunks(n, images, |slice, len| {
            let mut fwd = Fwd::new(store, BnMode::Eval);
            let x = fwd.graph.constant(&[len, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], slice.to_vec())?;
            let t = self.trunk(&mut fwd, x)?;
            let zs = self.style_head(&mut fwd, t, domain)?;
            Ok(fwd.graph.values(zs).to_vec())
        })
    }

    /// Decode homogeneous latent codes (all of one domain) to images.
    pub fn generate_eval(&self, store: &ParamStore<f32>, codes: &[LatentCode]) -> Result<Vec<f32>> {
        if codes.is_empty() {
            return Err(Error::arg("generate", "empty code batch"));
        }
        let domain = codes[0].domain;
        let want = self.cfg.latent_dim(domain);
        let mut rows = Vec::with_capacity(codes.len() * want);
        for c in codes {
            if c.domain != domain {
                return Err(Error::arg("generate", "mixed domains in one batch"));
            }
            let z = c.concat();
            if z.len() != want {
                return Err(Error::shape(
                    "generate",
                    format!("latent code has {} dims, domain {domain} wants {want}", z.len()),
                ));
            }
            rows.extend(z);
        }
        let chunk = 64;
        let mut out = Vec::new();
        let mut start = 0;
        while start < codes.len() {
            let len = chunk.min(codes.len() - start);
            let mut fwd = Fwd::new(store, BnMode::Eval);
            let z = fwd.graph.constant(&[len, want], rows[start * want..(start + len) * want].to_vec())?;
            let y = self.generate(&mut fwd, z, domain)?;
            out.extend_from_slice(fwd.graph.values(y));
            start += len;
        }
        Ok(out)
    }

    /// Cross- or within-domain transformation: re-encode content, pair it
    /// with a style from the prior or a given vector, decode with the target
    /// generator.
    pub fn transform_eval(
        &self,
        store: &ParamStore<f32>,
        images: &[f32],
        n: usize,
        target: Domain,
        style: StyleSource<'_>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<f32>> {
        let content = self.encode_content_eval(store, images, n)?;
        let sd = self.cfg.style_dim(target);
        let style_rows: Vec<f32> = match style {
            StyleSource::Prior => self.cfg.prior().sample_style(rng, n, target),
            StyleSource::Given(v) => {
                if v.len() != n * sd {
                    return Err(Error::shape(
                        "transform",
                        format!("style vector has {} values, want {} ({} rows x {sd})", v.len(), n * sd, n),
                    ));
                }
                v.to_vec()
            }
        };
        let codes: Vec<LatentCode> = (0..n)
            .map(|r| LatentCode {
                content: content[r * self.cfg.k..(r + 1) * self.cfg.k].to_vec(),
                style: style_rows[r * sd..(r + 1) * sd].to_vec(),
                domain: target,
            })
            .collect();
        self.generate_eval(store, &codes)
    }

    /// Discriminator outputs for flat code rows, eval mode.
    pub fn discriminate_eval(&self, store: &ParamStore<f32>, codes: &[f32], n: usize, which: Disc) -> Result<Vec<f32>> {
        let mut fwd = Fwd::new(store, BnMode::Eval);
        let dim = match which {
            Disc::Content => self.cfg.k,
            Disc::Style(d) => self.cfg.style_dim(d),
        };
        if codes.len() != n * dim {
            return Err(Error::shape("discriminate", format!("want {} values, got {}", n * dim, codes.len())));
        }
        let c = fwd.graph.constant(&[n, dim], codes.to_vec())?;
        let y = self.discriminate(&mut fwd, c, which)?;
        Ok(fwd.graph.values(y).to_vec())
    }

    /// Argmax class per row of a content matrix; ties resolve to the lowest
    /// class index.
    pub fn argmax_rows(content: &[f32], k: usize) -> Vec<u8> {
        content
            .chunks(k)
            .map(|row| {
                let mut best = 0usize;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Where `transform` takes the style part.
#[derive(Debug, Clone, Copy)]
pub enum StyleSource<'a> {
    Prior,
    Given(&'a [f32]),
}

/// Parameter-name prefixes of the encoder/generator group (adversarial
/// minimizers) and the discriminator group (maximizers).
pub const ENC_GEN_PREFIXES: [&str; 6] = ["e_l.", "e_hc.", "e_s_a.", "e_s_b.", "g_a.", "g_b."];
pub const DISC_PREFIXES: [&str; 3] = ["d_c.", "d_s_a.", "d_s_b."];
/// Networks on the supervised-content-loss path.
pub const SUP_PATH_PREFIXES: [&str; 2] = ["e_l.", "e_hc."];

/// Names in the store matching any of the prefixes, sorted.
pub fn group_names(store: &ParamStore<f32>, prefixes: &[&str]) -> Vec<String> {
    store
        .param_names()
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|s| s.to_string())
        .collect()
}
