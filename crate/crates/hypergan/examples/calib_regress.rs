use hypergan::config::RunConfig;
use hypergan::data::*;
use hypergan::model::*;
use hypergan::nets::*;
use hypergan::train::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let cfg = RunConfig::preset("regress1d").unwrap();
    let rs = make_regression_set(cfg.seed);
    let ds = rs.dataset();
    let arch = ArchSpec::regression();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = HyperGanModel::init(cfg.hypergan.clone(), &arch, &mut rng).unwrap();
    let res = train(&mut model, &ds, &cfg.train).unwrap();
    println!("trained {} steps in {:?}, early_stop={}", res.steps_run, t0.elapsed(), res.early_stopped);
    for r in res.metrics.iter().rev().take(3) {
        println!("  step {} task {:.4} adv_d {:.4} adv_g {:.4} val(-rmse) {:.4}", r.step, r.task_loss, r.adv_d, r.adv_g, r.val_acc);
    }

    // oracle: direct training
    let dcfg = DirectConfig { lr: 0.01, batch_size: 20, steps_override: Some(4000), eval_interval: 1000, val_fraction: 0.0, ..DirectConfig::default() };
    let (direct, trace) = train_direct(&arch, &ds, &dcfg).unwrap();
    println!("direct oracle final val(-rmse): {:.4}", trace.last().unwrap().1);

    // 100-member stats on the grid
    let grid = regression_eval_grid();
    let mut srng = ChaCha20Rng::seed_from_u64(777);
    let members = model.sample_networks(100, &mut srng).unwrap();
    let n = grid.shape()[0];
    let mut sums = vec![0.0f64; n];
    let mut sumsq = vec![0.0f64; n];
    for m in &members {
        let out = forward(&arch, m, &grid).unwrap();
        for (i, &v) in out.data().iter().enumerate() {
            sums[i] += v as f64;
            sumsq[i] += (v as f64) * (v as f64);
        }
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / 100.0).collect();
    let std: Vec<f64> = (0..n).map(|i| (sumsq[i]/100.0 - mean[i]*mean[i]).max(0.0).sqrt()).collect();

    // RMSE vs x^3 on [-3,3]
    let mut se = 0.0; let mut cnt = 0;
    for (i, &x) in grid.data().iter().enumerate() {
        if (-3.0..=3.0).contains(&x) {
            let t = (x as f64).powi(3);
            se += (mean[i] - t).powi(2);
            cnt += 1;
        }
    }
    let rmse = (se / cnt as f64).sqrt();
    let std0 = std[200]; // x = 0
    let stdm6 = std[0]; let stdp6 = std[400];
    println!("hypergan: RMSE[-3,3] = {rmse:.3}, std(0) = {std0:.3}, std(-6) = {stdm6:.3}, std(+6) = {stdp6:.3}");

    // direct net RMSE (oracle)
    let dout = forward(&arch, &direct, &grid).unwrap();
    let mut dse = 0.0; let mut dc = 0;
    for (i, &x) in grid.data().iter().enumerate() {
        if (-3.0..=3.0).contains(&x) {
            dse += (dout.data()[i] as f64 - (x as f64).powi(3)).powi(2);
            dc += 1;
        }
    }
    println!("direct RMSE[-3,3] = {:.3}", (dse/dc as f64).sqrt());
    println!("total time: {:?}", t0.elapsed());
}
