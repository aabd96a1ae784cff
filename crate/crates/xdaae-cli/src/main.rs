//! Command-line surface: train, adapt, generate, transform, eval and grid
//! emission, with run directories that carry a resolved config, the seed and
//! an artifact manifest.

mod rundir;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rundir::RunDir;
use std::path::{Path, PathBuf};
use xdaae::adapt::{adapt_basic, adapt_boosted, trace_csv};
use xdaae::checkpoint;
use xdaae::config::{parse_config, DataSource, FullConfig};
use xdaae::datasets::idx::{load_idx_images, load_idx_labels};
use xdaae::datasets::preprocess::{preprocess, Rule};
use xdaae::datasets::synth::{synth_pair, SynthSpec};
use xdaae::datasets::{DatasetPair, DomainSet};
use xdaae::evaluate::{image_grid, train_oracle_classifier, transfer_accuracy, EvalReport, OracleConfig, Scenario};
use xdaae::nets::{Domain, Nets, StyleSource};
use xdaae::trainer::{run_meta, train_run};

/// Environment variable that prefixes relative IDX paths.
const DATA_ROOT_ENV: &str = "XDAAE_DATA_ROOT";

#[derive(Parser)]
#[command(name = "xdaae", version, about = "Cross-domain adversarial auto-encoder: train, adapt, generate, transform, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    A,
    B,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::A => Domain::A,
            DomainArg::B => Domain::B,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured dataset pair and write metrics + checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config step budget.
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from a checkpoint written by an identical config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Domain adaptation (labeled A as source, unlabeled B as target).
    Adapt {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Raise the confidence threshold over epochs instead of fixing it.
        #[arg(long)]
        boosted: bool,
    },
    /// Decode prior samples into per-domain grids (rows sweep the content
    /// categories, columns hold fixed style draws).
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        styles: usize,
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-style test inputs: input column, red separator, one column per
    /// fresh prior style draw.
    Transform {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "a")]
        from: DomainArg,
        #[arg(long, value_enum, default_value = "b")]
        to: DomainArg,
        #[arg(long, default_value_t = 8)]
        inputs: usize,
        #[arg(long, default_value_t = 6)]
        styles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Oracle-classifier evaluation over the six generation/transfer
    /// scenarios.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Prior-scenario samples per category.
        #[arg(long, default_value_t = 100)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render an IDX archive as a PNG contact sheet.
    Grid {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "passthrough")]
        rule: String,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long, default_value_t = 1)]
        upscale: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<FullConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
        None => String::new(),
    };
    Ok(parse_config(&text)?)
}

fn resolve_data_path(raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => Path::new(&root).join(p),
        None => p,
    }
}

fn load_idx_set(images: &str, labels: &str, rule: Rule, domain: Domain, k: usize) -> Result<DomainSet> {
    let raw = load_idx_images(resolve_data_path(images))?;
    let lab = load_idx_labels(resolve_data_path(labels))?;
    if lab.labels.len() != raw.n {
        bail!("{images}: {} images but {} labels", raw.n, lab.labels.len());
    }
    if let Some(bad) = lab.labels.iter().find(|l| (**l as usize) >= k) {
        bail!("{labels}: label {bad} out of range for k={k}");
    }
    let pixels = preprocess(&raw, rule)?;
    Ok(DomainSet::new(pixels, raw.n, lab.labels, domain)?)
}

fn load_data(cfg: &FullConfig) -> Result<DatasetPair> {
    match cfg.data.source {
        DataSource::Synth => Ok(synth_pair(&SynthSpec {
            k: cfg.train.net.k,
            n_train_per_class: cfg.data.n_train_per_class,
            n_test_per_class: cfg.data.n_test_per_class,
            seed: cfg.data.data_seed,
        })?),
        DataSource::Idx => {
            let d = &cfg.data;
            let k = cfg.train.net.k;
            for (name, v) in [
                ("images_train_a", &d.idx.images_train_a),
                ("labels_train_a", &d.idx.labels_train_a),
                ("images_test_a", &d.idx.images_test_a),
                ("labels_test_a", &d.idx.labels_test_a),
                ("images_train_b", &d.idx.images_train_b),
                ("labels_train_b", &d.idx.labels_train_b),
                ("images_test_b", &d.idx.images_test_b),
                ("labels_test_b", &d.idx.labels_test_b),
            ] {
                if v.is_empty() {
                    bail!("data source is idx but [data] {name} is not set");
                }
            }
            Ok(DatasetPair {
                train_a: load_idx_set(&d.idx.images_train_a, &d.idx.labels_train_a, d.rule_a, Domain::A, k)?,
                test_a: load_idx_set(&d.idx.images_test_a, &d.idx.labels_test_a, d.rule_a, Domain::A, k)?,
                train_b: load_idx_set(&d.idx.images_train_b, &d.idx.labels_train_b, d.rule_b, Domain::B, k)?,
                test_b: load_idx_set(&d.idx.images_test_b, &d.idx.labels_test_b, d.rule_b, Domain::B, k)?,
                k,
            })
        }
    }
}

fn load_model(path: &Path) -> Result<(Nets, xdaae::checkpoint::Checkpoint)> {
    let ck = checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let nets = Nets::new(ck.net_config()?)?;
    Ok((nets, ck))
}

fn cmd_train(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>, steps: Option<u64>, resume: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    let run = RunDir::acquire(&out)?;
    run.snapshot(&cfg.emit(), cfg.train.seed)?;
    let data = load_data(&cfg)?;
    let result = train_run(&cfg.train, &data, &run.dir, resume.as_deref())?;
    run.write_manifest()?;
    println!("trained {} steps; final checkpoint {}", cfg.train.steps, result.final_checkpoint.display());
    Ok(())
}

fn cmd_adapt(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>, boosted: bool) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let adapt_cfg = cfg.adapt();
    let run = RunDir::acquire(&out)?;
    // snapshot with the adapt-view weights pinned so the file replays exactly
    let mut snap = cfg.clone();
    snap.train = adapt_cfg.train.clone();
    run.snapshot(&snap.emit(), adapt_cfg.train.seed)?;
    let data = load_data(&cfg)?;
    let source = data.train_a.clone();
    let target_train = data.train_b.without_labels();
    let out_run = if boosted {
        adapt_boosted(&adapt_cfg, &source, &target_train, &data.test_b)?
    } else {
        adapt_basic(&adapt_cfg, &source, &target_train, &data.test_b)?
    };
    run.write_text("adapt_trace.csv", &trace_csv(out_run.baseline_accuracy, &out_run.trace))?;
    checkpoint::save(run.path("ck_final.bin"), &out_run.trainer.checkpoint(&run_meta(&adapt_cfg.train)))?;
    run.write_manifest()?;
    println!(
        "adaptation ({}) baseline {:.4} final {:.4}",
        if boosted { "boosted" } else { "basic" },
        out_run.baseline_accuracy,
        out_run.final_accuracy()
    );
    Ok(())
}

fn cmd_generate(ckpt: PathBuf, out: PathBuf, styles: usize, domain: Option<DomainArg>, seed: u64) -> Result<()> {
    if styles == 0 {
        bail!("--styles must be >= 1");
    }
    let (nets, ck) = load_model(&ckpt)?;
    let run = RunDir::acquire(&out)?;
    run.snapshot(
        &format!("command = generate\ncheckpoint = {}\nstyles = {styles}\nseed = {seed}\n", ckpt.display()),
        seed,
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = nets.cfg.k;
    let domains: Vec<Domain> = match domain {
        Some(d) => vec![d.into()],
        None => vec![Domain::A, Domain::B],
    };
    for d in domains {
        let prior = nets.cfg.prior();
        // one style draw per column, swept over every content category per row
        let style = prior.sample_style(&mut rng, styles, d);
        let sd = prior.style_dim(d);
        let mut codes = Vec::with_capacity(k * styles);
        for c in 0..k {
            for s in 0..styles {
                let mut content = vec![0.0f32; k];
                content[c] = 1.0;
                codes.push(xdaae::nets::LatentCode {
                    content,
                    style: style[s * sd..(s + 1) * sd].to_vec(),
                    domain: d,
                });
            }
        }
        let images = nets.generate_eval(&ck.store, &codes)?;
        let name = format!("generate_{}.png", d.tag());
        image_grid(&images, k * styles, k, styles, None, 1, run.path(&name))?;
        println!("wrote {}", run.path(&name).display());
    }
    run.write_manifest()?;
    Ok(())
}

fn cmd_transform(
    ckpt: PathBuf,
    config: Option<PathBuf>,
    out: PathBuf,
    from: DomainArg,
    to: DomainArg,
    inputs: usize,
    styles: usize,
    seed: u64,
) -> Result<()> {
    if inputs == 0 || styles == 0 {
        bail!("--inputs and --styles must be >= 1");
    }
    let cfg = load_config(&config)?;
    let (nets, ck) = load_model(&ckpt)?;
    let run = RunDir::acquire(&out)?;
    run.snapshot(&cfg.emit(), seed)?;
    let data = load_data(&cfg)?;
    let (from, to): (Domain, Domain) = (from.into(), to.into());
    let set = match from {
        Domain::A => &data.test_a,
        Domain::B => &data.test_b,
    };
    if set.n < inputs {
        bail!("test split of domain {from} has only {} images, want {inputs}", set.n);
    }
    let idxs: Vec<usize> = (0..inputs).collect();
    let batch = set.batch(&idxs)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // grid rows: [input | styled output x styles]
    let mut tiles = Vec::new();
    let mut outputs = Vec::with_capacity(styles);
    for _ in 0..styles {
        outputs.push(nets.transform_eval(&ck.store, &batch.images, inputs, to, StyleSource::Prior, &mut rng)?);
    }
    let pix = xdaae::nets::IMAGE_PIXELS;
    for i in 0..inputs {
        tiles.extend_from_slice(&batch.images[i * pix..(i + 1) * pix]);
        for o in &outputs {
            tiles.extend_from_slice(&o[i * pix..(i + 1) * pix]);
        }
    }
    let name = format!("transform_{}_to_{}.png", from.tag(), to.tag());
    image_grid(&tiles, inputs * (styles + 1), inputs, styles + 1, Some(1), 1, run.path(&name))?;
    run.write_manifest()?;
    println!("wrote {}", run.path(&name).display());
    Ok(())
}

fn cmd_eval(ckpt: PathBuf, config: Option<PathBuf>, out: PathBuf, samples_per_class: usize, seed: u64) -> Result<()> {
    let cfg = load_config(&config)?;
    let (nets, ck) = load_model(&ckpt)?;
    let run = RunDir::acquire(&out)?;
    run.snapshot(&cfg.emit(), seed)?;
    let data = load_data(&cfg)?;
    let oracle_cfg = |s: u64| OracleConfig {
        net: nets.cfg,
        steps: cfg.train.steps,
        batch_size: cfg.train.batch_size,
        lr: 1e-3,
        seed: s,
    };
    let oracle_a = train_oracle_classifier(&data.train_a, &oracle_cfg(seed ^ 0xa))?;
    let oracle_b = train_oracle_classifier(&data.train_b, &oracle_cfg(seed ^ 0xb))?;
    println!("oracle A test accuracy {:.4}", oracle_a.accuracy(&data.test_a)?);
    println!("oracle B test accuracy {:.4}", oracle_b.accuracy(&data.test_b)?);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut report = EvalReport::default();
    let scenarios = [
        (Scenario::Prior { domain: Domain::A }, None, samples_per_class * nets.cfg.k),
        (Scenario::SelfTransfer { domain: Domain::A }, Some(&data.test_a), data.test_a.n),
        (Scenario::Cross { from: Domain::B, to: Domain::A }, Some(&data.test_b), data.test_b.n),
        (Scenario::Prior { domain: Domain::B }, None, samples_per_class * nets.cfg.k),
        (Scenario::SelfTransfer { domain: Domain::B }, Some(&data.test_b), data.test_b.n),
        (Scenario::Cross { from: Domain::A, to: Domain::B }, Some(&data.test_a), data.test_a.n),
    ];
    for (scenario, set, count) in scenarios {
        let oracle = match scenario.target_domain() {
            Domain::A => &oracle_a,
            Domain::B => &oracle_b,
        };
        let acc = transfer_accuracy(&nets, &ck.store, oracle, scenario, set, samples_per_class, &mut rng)?;
        report.push(scenario.key(), acc as f64, count)?;
    }
    run.write_text("report.csv", &report.csv())?;
    run.write_text("report.txt", &report.table())?;
    run.write_manifest()?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_grid(images: PathBuf, out: PathBuf, rule: String, rows: Option<usize>, cols: Option<usize>, upscale: usize) -> Result<()> {
    let rule = Rule::parse(&rule)?;
    let raw = load_idx_images(resolve_data_path(&images.to_string_lossy()))?;
    let pixels = preprocess(&raw, rule)?;
    let n = raw.n;
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        (Some(r), None) => (r, n.div_ceil(r)),
        (None, Some(c)) => (n.div_ceil(c), c),
        (None, None) => {
            let c = (n as f64).sqrt().ceil() as usize;
            (n.div_ceil(c), c)
        }
    };
    if rows * cols != n {
        bail!("{n} images do not fill a {rows}x{cols} grid exactly; pass --rows/--cols");
    }
    let run = RunDir::acquire(&out)?;
    run.snapshot(&format!("command = grid\nimages = {}\nrule = {}\n", images.display(), rule.name()), 0)?;
    image_grid(&pixels, n, rows, cols, None, upscale, run.path("grid.png"))?;
    run.write_manifest()?;
    println!("wrote {}", run.path("grid.png").display());
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train { config, out, seed, steps, checkpoint } => cmd_train(config, out, seed, steps, checkpoint),
        Cmd::Adapt { config, out, seed, boosted } => cmd_adapt(config, out, seed, boosted),
        Cmd::Generate { checkpoint, out, styles, domain, seed } => cmd_generate(checkpoint, out, styles, domain, seed),
        Cmd::Transform { checkpoint, config, out, from, to, inputs, styles, seed } => {
            cmd_transform(checkpoint, config, out, from, to, inputs, styles, seed)
        }
        Cmd::Eval { checkpoint, config, out, samples_per_class, seed } => {
            cmd_eval(checkpoint, config, out, samples_per_class, seed)
        }
        Cmd::Grid { images, out, rule, rows, cols, upscale } => cmd_grid(images, out, rule, rows, cols, upscale),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
