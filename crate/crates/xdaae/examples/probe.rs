// Temporary calibration probe for desk-scale behavior.
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use xdaae::autodiff::{BnMode, Fwd};
use xdaae::checkpoint;
use xdaae::datasets::synth::{synth_pair, SynthSpec};
use xdaae::evaluate::{content_accuracy, train_oracle_classifier, OracleConfig};
use xdaae::nets::{Domain, NetConfig, Nets, StyleSource};

fn main() {
    let ck = checkpoint::load(std::env::args().nth(1).expect("ckpt path")).unwrap();
    let nets = Nets::new(ck.net_config().unwrap()).unwrap();
    let pair = synth_pair(&SynthSpec { k: 5, n_train_per_class: 100, n_test_per_class: 30, seed: 7 }).unwrap();

    println!("CDAAE content acc (eval BN) test A: {:.4}", content_accuracy(&nets, &ck.store, &pair.test_a).unwrap());
    println!("CDAAE content acc (eval BN) test B: {:.4}", content_accuracy(&nets, &ck.store, &pair.test_b).unwrap());

    let ocfg = OracleConfig { net: NetConfig { k: 5, style_dim_a: 4, style_dim_b: 4, width: 0.125 }, steps: 400, batch_size: 16, lr: 1e-3, seed: 1 };
    let oracle_b = train_oracle_classifier(&pair.train_b, &ocfg).unwrap();
    println!("oracle B own-domain acc: {:.4}", oracle_b.accuracy(&pair.test_b).unwrap());

    // eval-mode cross transform A->B then oracle B
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let t = nets
        .transform_eval(&ck.store, &pair.test_a.images, pair.test_a.n, Domain::B, StyleSource::Prior, &mut rng)
        .unwrap();
    let pred = oracle_b.predict(&t, pair.test_a.n).unwrap();
    let acc = pred.iter().zip(&pair.test_a.labels).filter(|(p, l)| p == l).count() as f32 / pair.test_a.n as f32;
    println!("eval-mode A->B transfer acc: {acc:.4}");

    // train-mode (batch statistics) version of the same pipeline
    let mut fwd = Fwd::new(&ck.store, BnMode::TrainFrozen);
    let n = pair.test_a.n;
    let x = fwd.graph.constant(&[n, 3, 32, 32], pair.test_a.images.clone()).unwrap();
    let tr = nets.trunk(&mut fwd, x).unwrap();
    let zc = nets.content_head(&mut fwd, tr).unwrap();
    let pred_train = Nets::argmax_rows(fwd.graph.values(zc), 5);
    let acc_enc = pred_train.iter().zip(&pair.test_a.labels).filter(|(p, l)| p == l).count() as f32 / n as f32;
    println!("train-mode encoder content acc test A: {acc_enc:.4}");

    let prior = nets.cfg.prior();
    let style = prior.sample_style(&mut rng, n, Domain::B);
    let s = fwd.graph.constant(&[n, 4], style).unwrap();
    let z = fwd.graph.concat_cols(zc, s).unwrap();
    let gen = nets.generate(&mut fwd, z, Domain::B).unwrap();
    let gen_imgs = fwd.graph.values(gen).to_vec();
    let pred2 = oracle_b.predict(&gen_imgs, n).unwrap();
    let acc2 = pred2.iter().zip(&pair.test_a.labels).filter(|(p, l)| p == l).count() as f32 / n as f32;
    println!("train-mode transform A->B + oracle acc: {acc2:.4}");
}
