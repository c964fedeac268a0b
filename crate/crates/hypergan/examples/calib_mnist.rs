use hypergan::config::RunConfig;
use hypergan::data::*;
use hypergan::eval::*;
use hypergan::model::*;
use hypergan::nets::ArchSpec;
use hypergan::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

fn env_f32(k: &str, d: f32) -> f32 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn env_usize(k: &str, d: usize) -> usize { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "fast-ci".into());
    let t0 = Instant::now();
    let mut cfg = RunConfig::preset(&preset).unwrap();
    cfg.train.lr_generator = env_f32("LRG", cfg.train.lr_generator);
    cfg.train.lr_discriminator = env_f32("LRD", cfg.train.lr_discriminator);
    cfg.train.beta = env_f32("BETA", cfg.train.beta);
    cfg.train.batch_size = env_usize("BS", cfg.train.batch_size);
    cfg.train.epochs = env_usize("EPOCHS", cfg.train.epochs);
    cfg.train.latent_batch = env_usize("LB", cfg.train.latent_batch);
    cfg.train.val_max = 500;
    let full = load_idx_dir(&cfg.data_dir.join("mnist"), true).unwrap();
    let ds = if cfg.take > 0 { take_n(&full, cfg.take, cfg.seed).unwrap() } else { full };
    println!("[{}] n={} bs={} ep={} lr_g={} lr_d={} beta={} lb={}", preset, ds.len(), cfg.train.batch_size, cfg.train.epochs, cfg.train.lr_generator, cfg.train.lr_discriminator, cfg.train.beta, cfg.train.latent_batch);
    let arch = ArchSpec::mnist();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = HyperGanModel::init(cfg.hypergan.clone(), &arch, &mut rng).unwrap();
    let res = train(&mut model, &ds, &cfg.train).unwrap();
    println!("trained {} steps in {:?}", res.steps_run, t0.elapsed());
    for r in &res.metrics {
        println!("  step {:5} task {:.4} adv_d {:.4} adv_g {:.4} val {:.4} cv {:?}", r.step, r.task_loss, r.adv_d, r.adv_g, r.val_acc,
            r.diversity_cv.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>());
    }
    let test = load_idx_dir(&cfg.data_dir.join("mnist"), false).unwrap();
    let sub = test.head(2000);
    let mut srng = ChaCha20Rng::seed_from_u64(4242);
    let nets = model.sample_networks(10, &mut srng).unwrap();
    let single = fuse_softmax(&nets[..1], &arch, &sub.inputs).unwrap();
    let acc1 = accuracy(&single, sub.targets.classes().unwrap());
    let ten = fuse_softmax(&nets, &arch, &sub.inputs).unwrap();
    let acc10 = accuracy(&ten, sub.targets.classes().unwrap());
    // latent stats
    let stats = latent_normality(&model, 500, &mut srng).unwrap();
    println!("test(2k): single {:.4}, 10-member {:.4}; latent {:?}", acc1, acc10,
        stats.iter().map(|(m,s)| format!("({m:.2},{:.2})", s.unwrap())).collect::<Vec<_>>());
    println!("total {:?}", t0.elapsed());
}
