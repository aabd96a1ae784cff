//! Sectioned key = value run configuration.
//!
//! Grammar: `#` starts a comment, blank lines are ignored, `[section]` opens
//! a section, `key = value` assigns inside it. Unknown sections or keys are
//! errors naming the line. Absent keys resolve to the digit-experiment
//! defaults; `beta1`/`beta2` default by mode (0 supervised, 1 otherwise).
//!
//! Sections and keys:
//!   [train]   mode, batch_size, steps, seed, lr, lr_disc, adam_beta1,
//!             adam_beta2, checkpoint_every, labeled_per_class
//!   [weights] alpha1..alpha4, beta1..beta3, gamma1, gamma2,
//!             lambda1, lambda2, eta1, eta2
//!   [nets]    k, style_dim_a, style_dim_b, width
//!   [adapt]   t_init, w, pretrain_steps, train_epochs
//!   [data]    source (synth|idx), n_train_per_class, n_test_per_class,
//!             data_seed, rule_a, rule_b, images_train_a, labels_train_a,
//!             images_test_a, labels_test_a, images_train_b, labels_train_b,
//!             images_test_b, labels_test_b

use crate::adapt::AdaptConfig;
use crate::datasets::preprocess::Rule;
use crate::error::{Error, Result};
use crate::trainer::{TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synth,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxPaths {
    pub images_train_a: String,
    pub labels_train_a: String,
    pub images_test_a: String,
    pub labels_test_a: String,
    pub images_train_b: String,
    pub labels_train_b: String,
    pub images_test_b: String,
    pub labels_test_b: String,
}

impl Default for IdxPaths {
    fn default() -> Self {
        IdxPaths {
            images_train_a: String::new(),
            labels_train_a: String::new(),
            images_test_a: String::new(),
            labels_test_a: String::new(),
            images_train_b: String::new(),
            labels_train_b: String::new(),
            images_test_b: String::new(),
            labels_test_b: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub data_seed: u64,
    pub rule_a: Rule,
    pub rule_b: Rule,
    pub idx: IdxPaths,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            n_train_per_class: 140,
            n_test_per_class: 40,
            data_seed: 7,
            rule_a: Rule::Passthrough,
            rule_b: Rule::Mnist,
            idx: IdxPaths::default(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FullConfig {
    pub train: TrainConfig,
    pub adapt_t_init: f64,
    pub adapt_w: f64,
    pub adapt_pretrain_steps: u64,
    pub adapt_train_epochs: u64,
    pub data: DataConfig,
    beta12_explicit: bool,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            train: TrainConfig::default(),
            adapt_t_init: 0.85,
            adapt_w: 10_000.0,
            adapt_pretrain_steps: 500,
            adapt_train_epochs: 10,
            data: DataConfig::default(),
            beta12_explicit: false,
        }
    }
}

impl FullConfig {
    /// The adaptation view of this config. Adaptation is inherently
    /// semi-supervised, so unless the file pinned beta1/beta2 they resolve
    /// to the semi-supervised defaults here.
    pub fn adapt(&self) -> AdaptConfig {
        let mut train = self.train.clone();
        if !self.beta12_explicit {
            train.weights.beta1 = 1.0;
            train.weights.beta2 = 1.0;
        }
        AdaptConfig {
            t_init: self.adapt_t_init,
            w: self.adapt_w,
            pretrain_steps: self.adapt_pretrain_steps,
            train_epochs: self.adapt_train_epochs,
            train,
        }
    }

    /// Canonical text form; reparsing it reproduces this config exactly.
    pub fn emit(&self) -> String {
        let w = &self.train.weights;
        let n = &self.train.net;
        let d = &self.data;
        let mut out = String::new();
        out.push_str("[train]\n");
        out.push_str(&format!("mode = {}\n", self.train.mode.name()));
        out.push_str(&format!("batch_size = {}\n", self.train.batch_size));
        out.push_str(&format!("steps = {}\n", self.train.steps));
        out.push_str(&format!("seed = {}\n", self.train.seed));
        out.push_str(&format!("lr = {}\n", self.train.lr_enc_gen));
        out.push_str(&format!("lr_disc = {}\n", self.train.lr_disc));
        out.push_str(&format!("adam_beta1 = {}\n", self.train.adam_beta1));
        out.push_str(&format!("adam_beta2 = {}\n", self.train.adam_beta2));
        out.push_str(&format!("checkpoint_every = {}\n", self.train.checkpoint_every));
        out.push_str(&format!("labeled_per_class = {}\n", self.train.labeled_per_class));
        out.push_str("\n[weights]\n");
        for (name, v) in w.named() {
            // beta1/beta2 stay implicit unless the file pinned them, so the
            // mode-dependent defaulting survives a round trip
            if (name == "beta1" || name == "beta2") && !self.beta12_explicit {
                continue;
            }
            out.push_str(&format!("{name} = {v}\n"));
        }
        out.push_str("\n[nets]\n");
        out.push_str(&format!("k = {}\n", n.k));
        out.push_str(&format!("style_dim_a = {}\n", n.style_dim_a));
        out.push_str(&format!("style_dim_b = {}\n", n.style_dim_b));
        out.push_str(&format!("width = {}\n", n.width));
        out.push_str("\n[adapt]\n");
        out.push_str(&format!("t_init = {}\n", self.adapt_t_init));
        out.push_str(&format!("w = {}\n", self.adapt_w));
        out.push_str(&format!("pretrain_steps = {}\n", self.adapt_pretrain_steps));
        out.push_str(&format!("train_epochs = {}\n", self.adapt_train_epochs));
        out.push_str("\n[data]\n");
        out.push_str(&format!("source = {}\n", match d.source { DataSource::Synth => "synth", DataSource::Idx => "idx" }));
        out.push_str(&format!("n_train_per_class = {}\n", d.n_train_per_class));
        out.push_str(&format!("n_test_per_class = {}\n", d.n_test_per_class));
        out.push_str(&format!("data_seed = {}\n", d.data_seed));
        out.push_str(&format!("rule_a = {}\n", d.rule_a.name()));
        out.push_str(&format!("rule_b = {}\n", d.rule_b.name()));
        for (key, v) in [
            ("images_train_a", &d.idx.images_train_a),
            ("labels_train_a", &d.idx.labels_train_a),
            ("images_test_a", &d.idx.images_test_a),
            ("labels_test_a", &d.idx.labels_test_a),
            ("images_train_b", &d.idx.images_train_b),
            ("labels_train_b", &d.idx.labels_train_b),
            ("images_test_b", &d.idx.images_test_b),
            ("labels_test_b", &d.idx.labels_test_b),
        ] {
            if !v.is_empty() {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }
}

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::ConfigParse { line, detail: detail.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| bad(line, format!("{key}: cannot parse `{value}`")))
}

fn nonneg_f32(line: usize, key: &str, value: &str) -> Result<f32> {
    let v: f32 = parse_num(line, key, value)?;
    if !v.is_finite() || v < 0.0 {
        return Err(bad(line, format!("{key} must be finite and >= 0, got {value}")));
    }
    Ok(v)
}

/// Parse and resolve a configuration file body.
pub fn parse_config(text: &str) -> Result<FullConfig> {
    let mut cfg = FullConfig::default();
    let mut beta1 = None;
    let mut beta2 = None;
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if !content.ends_with(']') {
                return Err(bad(line, format!("malformed section header `{content}`")));
            }
            let name = &content[1..content.len() - 1];
            if !["train", "weights", "nets", "adapt", "data"].contains(&name) {
                return Err(bad(line, format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = match content.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => return Err(bad(line, format!("expected `key = value`, got `{content}`"))),
        };
        if section.is_empty() {
            return Err(bad(line, format!("key `{key}` appears before any [section]")));
        }
        match (section.as_str(), key) {
            ("train", "mode") => {
                cfg.train.mode = match value {
                    "supervised" => TrainMode::Supervised,
                    "semi_supervised" => TrainMode::SemiSupervised,
                    other => return Err(bad(line, format!("mode must be supervised|semi_supervised, got `{other}`"))),
                };
            }
            ("train", "batch_size") => {
                cfg.train.batch_size = parse_num(line, key, value)?;
                if cfg.train.batch_size < 2 {
                    return Err(bad(line, "batch_size must be >= 2"));
                }
            }
            ("train", "steps") => {
                cfg.train.steps = parse_num(line, key, value)?;
                if cfg.train.steps < 1 {
                    return Err(bad(line, "steps must be >= 1"));
                }
            }
            ("train", "seed") => cfg.train.seed = parse_num(line, key, value)?,
            ("train", "lr") => cfg.train.lr_enc_gen = nonneg_f32(line, key, value)?,
            ("train", "lr_disc") => cfg.train.lr_disc = nonneg_f32(line, key, value)?,
            ("train", "adam_beta1") => cfg.train.adam_beta1 = nonneg_f32(line, key, value)?,
            ("train", "adam_beta2") => cfg.train.adam_beta2 = nonneg_f32(line, key, value)?,
            ("train", "checkpoint_every") => cfg.train.checkpoint_every = parse_num(line, key, value)?,
            ("train", "labeled_per_class") => cfg.train.labeled_per_class = parse_num(line, key, value)?,
            ("weights", _) => {
                let v = nonneg_f32(line, key, value)?;
                let w = &mut cfg.train.weights;
                match key {
                    "alpha1" => w.alpha1 = v,
                    "alpha2" => w.alpha2 = v,
                    "alpha3" => w.alpha3 = v,
                    "alpha4" => w.alpha4 = v,
                    "beta1" => beta1 = Some(v),
                    "beta2" => beta2 = Some(v),
                    "beta3" => w.beta3 = v,
                    "gamma1" => w.gamma1 = v,
                    "gamma2" => w.gamma2 = v,
                    "lambda1" => w.lambda1 = v,
                    "lambda2" => w.lambda2 = v,
                    "eta1" => w.eta1 = v,
                    "eta2" => w.eta2 = v,
                    other => return Err(bad(line, format!("unknown key `{other}` in [weights]"))),
                }
            }
            ("nets", "k") => {
                cfg.train.net.k = parse_num(line, key, value)?;
                if cfg.train.net.k < 2 {
                    return Err(bad(line, "k must be >= 2"));
                }
            }
            ("nets", "style_dim_a") => cfg.train.net.style_dim_a = parse_num(line, key, value)?,
            ("nets", "style_dim_b") => cfg.train.net.style_dim_b = parse_num(line, key, value)?,
            ("nets", "width") => {
                cfg.train.net.width = parse_num(line, key, value)?;
                if !(cfg.train.net.width > 0.0) {
                    return Err(bad(line, "width must be positive"));
                }
            }
            ("adapt", "t_init") => {
                cfg.adapt_t_init = parse_num(line, key, value)?;
                if !(0.0..=1.0).contains(&cfg.adapt_t_init) {
                    return Err(bad(line, "t_init must lie in [0, 1]"));
                }
            }
            ("adapt", "w") => {
                cfg.adapt_w = parse_num(line, key, value)?;
                if !cfg.adapt_w.is_finite() || cfg.adapt_w <= 0.0 {
                    return Err(bad(line, "w must be finite and positive"));
                }
            }
            ("adapt", "pretrain_steps") => cfg.adapt_pretrain_steps = parse_num(line, key, value)?,
            ("adapt", "train_epochs") => cfg.adapt_train_epochs = parse_num(line, key, value)?,
            ("data", "source") => {
                cfg.data.source = match value {
                    "synth" => DataSource::Synth,
                    "idx" => DataSource::Idx,
                    other => return Err(bad(line, format!("source must be synth|idx, got `{other}`"))),
                };
            }
            ("data", "n_train_per_class") => {
                cfg.data.n_train_per_class = parse_num(line, key, value)?;
                if cfg.data.n_train_per_class < 1 {
                    return Err(bad(line, "n_train_per_class must be >= 1"));
                }
            }
            ("data", "n_test_per_class") => {
                cfg.data.n_test_per_class = parse_num(line, key, value)?;
                if cfg.data.n_test_per_class < 1 {
                    return Err(bad(line, "n_test_per_class must be >= 1"));
                }
            }
            ("data", "data_seed") => cfg.data.data_seed = parse_num(line, key, value)?,
            ("data", "rule_a") => cfg.data.rule_a = Rule::parse(value).map_err(|e| bad(line, e.to_string()))?,
            ("data", "rule_b") => cfg.data.rule_b = Rule::parse(value).map_err(|e| bad(line, e.to_string()))?,
            ("data", "images_train_a") => cfg.data.idx.images_train_a = value.to_string(),
            ("data", "labels_train_a") => cfg.data.idx.labels_train_a = value.to_string(),
            ("data", "images_test_a") => cfg.data.idx.images_test_a = value.to_string(),
            ("data", "labels_test_a") => cfg.data.idx.labels_test_a = value.to_string(),
            ("data", "images_train_b") => cfg.data.idx.images_train_b = value.to_string(),
            ("data", "labels_train_b") => cfg.data.idx.labels_train_b = value.to_string(),
            ("data", "images_test_b") => cfg.data.idx.images_test_b = value.to_string(),
            ("data", "labels_test_b") => cfg.data.idx.labels_test_b = value.to_string(),
            (sec, other) => return Err(bad(line, format!("unknown key `{other}` in [{sec}]"))),
        }
    }

    // beta1/beta2 default by mode unless pinned
    let default_beta = match cfg.train.mode {
        TrainMode::Supervised => 0.0,
        TrainMode::SemiSupervised => 1.0,
    };
    cfg.beta12_explicit = beta1.is_some() || beta2.is_some();
    cfg.train.weights.beta1 = beta1.unwrap_or(default_beta);
    cfg.train.weights.beta2 = beta2.unwrap_or(default_beta);

    cfg.train.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_to_published_defaults() {
        let cfg = parse_config("").unwrap();
        let w = &cfg.train.weights;
        assert_eq!(w.gamma1, 2.0);
        assert_eq!(w.gamma2, 0.15);
        assert_eq!(w.lambda1, 5.0);
        assert_eq!(w.lambda2, 0.5);
        assert_eq!(w.eta1, 0.3);
        assert_eq!(w.eta2, 0.3);
        assert_eq!((w.beta1, w.beta2, w.beta3), (0.0, 0.0, 1.0));
        assert_eq!((w.alpha1, w.alpha2, w.alpha3, w.alpha4), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(cfg.adapt_t_init, 0.85);
        assert_eq!(cfg.adapt_w, 10_000.0);
        assert_eq!(cfg.train.net.k, 10);
        assert_eq!((cfg.train.net.style_dim_a, cfg.train.net.style_dim_b), (8, 8));
        assert_eq!(cfg.train.batch_size, 64);
    }

    #[test]
    fn mode_switches_beta_defaults_unless_pinned() {
        let semi = parse_config("[train]\nmode = semi_supervised\n").unwrap();
        assert_eq!((semi.train.weights.beta1, semi.train.weights.beta2), (1.0, 1.0));
        let pinned = parse_config("[train]\nmode = semi_supervised\n[weights]\nbeta1 = 0.25\n").unwrap();
        assert_eq!((pinned.train.weights.beta1, pinned.train.weights.beta2), (0.25, 1.0));
        // the adapt view upgrades betas only when they were not pinned
        let sup = parse_config("").unwrap();
        assert_eq!(sup.adapt().train.weights.beta1, 1.0);
        let sup_pinned = parse_config("[weights]\nbeta1 = 0\nbeta2 = 0\n").unwrap();
        assert_eq!(sup_pinned.adapt().train.weights.beta1, 0.0);
    }

    #[test]
    fn unknown_keys_and_ranges_name_the_line() {
        let err = parse_config("[train]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("bogus"), "{err}");

        let err = parse_config("[weights]\ngamma1 = -1\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("gamma1"), "{err}");

        let err = parse_config("[bogus]\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");

        let err = parse_config("x = 1\n").unwrap_err();
        assert!(err.to_string().contains("before any"), "{err}");

        let err = parse_config("[adapt]\nt_init = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("t_init"), "{err}");
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let cfg = parse_config("# top comment\n\n[train]\n  steps = 7  # trailing\n").unwrap();
        assert_eq!(cfg.train.steps, 7);
    }

    #[test]
    fn emit_reparse_round_trips() {
        let text = "[train]\nmode = semi_supervised\nsteps = 123\nseed = 9\n[weights]\ngamma1 = 1.75\n[nets]\nk = 6\nwidth = 0.25\n[adapt]\nt_init = 0.6\n[data]\nn_train_per_class = 33\n";
        let cfg = parse_config(text).unwrap();
        let emitted = cfg.emit();
        let reparsed = parse_config(&emitted).unwrap();
        assert_eq!(reparsed.emit(), emitted);
        assert_eq!(reparsed, cfg);
    }
}
