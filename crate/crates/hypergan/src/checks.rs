//! The full finite-difference verification suite behind the `gradcheck`
//! subcommand: every differentiable op at random probe points, the full
//! MNIST target forward, the tiny end-to-end generative stack, and a
//! sensitivity probe confirming the checker flags corrupted gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::model::{HyperGanConfig, HyperGanModel, ParamGroup};
use crate::nets::{forward_graph, ArchSpec, ParamSet, ParamValues};
use crate::tensor::gradcheck::{finite_diff_check, finite_diff_check_coords, finite_diff_vs};
use crate::tensor::{Graph, Tensor, Value};

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub rel_err: f64,
    pub pass: bool,
}

fn check(
    reports: &mut Vec<CheckReport>,
    name: &str,
    result: crate::tensor::Result<f64>,
) {
    match result {
        Ok(rel_err) => reports.push(CheckReport {
            name: name.to_string(),
            rel_err,
            pass: rel_err <= GRAD_TOLERANCE,
        }),
        Err(e) => reports.push(CheckReport {
            name: format!("{name} ({e})"),
            rel_err: f64::INFINITY,
            pass: false,
        }),
    }
}

/// Run every gradient check; all must pass within [`GRAD_TOLERANCE`].
pub fn gradient_suite() -> Vec<CheckReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xC0FFEE);
    let mut reports = Vec::new();
    let h = 1e-3;

    // matmul, both operands
    let a = Tensor::randn(&[3, 4], &mut rng);
    let b = Tensor::randn(&[4, 5], &mut rng);
    {
        let b = b.clone();
        check(
            &mut reports,
            "matmul/dA",
            finite_diff_check(
                move |g, va| {
                    let vb = g.constant(b.clone());
                    let c = g.matmul(va, vb)?;
                    Ok(g.sum_all(c))
                },
                &a,
                h,
            ),
        );
    }
    {
        let a = a.clone();
        check(
            &mut reports,
            "matmul/dB",
            finite_diff_check(
                move |g, vb| {
                    let va = g.constant(a.clone());
                    let c = g.matmul(va, vb)?;
                    Ok(g.sum_all(c))
                },
                &b,
                h,
            ),
        );
    }

    // conv2d: input, kernel, bias
    let x = Tensor::randn(&[2, 2, 7, 7], &mut rng);
    let w = Tensor::randn(&[3, 2, 3, 3], &mut rng);
    let bias = Tensor::randn(&[3], &mut rng);
    {
        let (w, bias) = (w.clone(), bias.clone());
        check(
            &mut reports,
            "conv2d/dX",
            finite_diff_check(
                move |g, vx| {
                    let vw = g.constant(w.clone());
                    let vb = g.constant(bias.clone());
                    let y = g.conv2d(vx, vw, vb)?;
                    Ok(g.sum_all(y))
                },
                &x,
                h,
            ),
        );
    }
    {
        let (x, bias) = (x.clone(), bias.clone());
        check(
            &mut reports,
            "conv2d/dW",
            finite_diff_check(
                move |g, vw| {
                    let vx = g.constant(x.clone());
                    let vb = g.constant(bias.clone());
                    let y = g.conv2d(vx, vw, vb)?;
                    Ok(g.sum_all(y))
                },
                &w,
                h,
            ),
        );
    }
    {
        let (x, w) = (x.clone(), w.clone());
        check(
            &mut reports,
            "conv2d/dBias",
            finite_diff_check(
                move |g, vb| {
                    let vx = g.constant(x.clone());
                    let vw = g.constant(w.clone());
                    let y = g.conv2d(vx, vw, vb)?;
                    Ok(g.sum_all(y))
                },
                &bias,
                h,
            ),
        );
    }

    // maxpool + crop through a conv stack (squared output so the pooled
    // values matter nonlinearly)
    let xp = Tensor::randn(&[2, 3, 6, 6], &mut rng);
    check(
        &mut reports,
        "maxpool2d",
        finite_diff_check(
            |g, vx| {
                let p = g.maxpool2d(vx)?;
                let sq = g.mul(p, p)?;
                Ok(g.sum_all(sq))
            },
            &xp,
            1e-4,
        ),
    );
    let xc = Tensor::randn(&[1, 2, 5, 5], &mut rng);
    check(
        &mut reports,
        "crop2d",
        finite_diff_check(
            |g, vx| {
                let c = g.crop2d(vx, 4, 4)?;
                let p = g.maxpool2d(c)?;
                let sq = g.mul(p, p)?;
                Ok(g.sum_all(sq))
            },
            &xc,
            1e-4,
        ),
    );

    // activations
    let xa = Tensor::randn(&[64], &mut rng);
    check(
        &mut reports,
        "leaky_relu(0.2)",
        finite_diff_check(
            |g, vx| {
                let y = g.leaky_relu(vx, 0.2);
                let sq = g.mul(y, y)?;
                Ok(g.sum_all(sq))
            },
            &xa,
            1e-4,
        ),
    );
    check(
        &mut reports,
        "relu",
        finite_diff_check(
            |g, vx| {
                let y = g.relu(vx);
                let sq = g.mul(y, y)?;
                Ok(g.sum_all(sq))
            },
            &xa,
            1e-4,
        ),
    );

    // elementwise / structural ops through a nonlinear readout
    let xs = Tensor::randn(&[4, 6], &mut rng);
    let other = Tensor::randn(&[4, 6], &mut rng);
    {
        let other = other.clone();
        check(
            &mut reports,
            "add+mul",
            finite_diff_check(
                move |g, vx| {
                    let vo = g.constant(other.clone());
                    let s = g.add(vx, vo)?;
                    let m = g.mul(s, s)?;
                    Ok(g.sum_all(m))
                },
                &xs,
                h,
            ),
        );
    }
    let row = Tensor::randn(&[6], &mut rng);
    {
        let xs = xs.clone();
        check(
            &mut reports,
            "add_row/dRow",
            finite_diff_check(
                move |g, vr| {
                    let vx = g.constant(xs.clone());
                    let y = g.add_row(vx, vr)?;
                    let m = g.mul(y, y)?;
                    Ok(g.sum_all(m))
                },
                &row,
                h,
            ),
        );
    }
    check(
        &mut reports,
        "scale+reshape+slice_cols",
        finite_diff_check(
            |g, vx| {
                let s = g.scale(vx, -1.7);
                let r = g.reshape(s, &[2, 12])?;
                let c = g.slice_cols(r, 3, 9)?;
                let m = g.mul(c, c)?;
                Ok(g.sum_all(m))
            },
            &xs,
            h,
        ),
    );

    // losses
    let logits = Tensor::randn(&[5, 7], &mut rng);
    check(
        &mut reports,
        "softmax_cross_entropy",
        finite_diff_check(
            |g, vl| g.softmax_cross_entropy(vl, &[0, 1, 2, 3, 4]),
            &logits,
            h,
        ),
    );
    let pred = Tensor::randn(&[6, 1], &mut rng);
    let target = Tensor::randn(&[6, 1], &mut rng);
    {
        let target = target.clone();
        check(
            &mut reports,
            "mse",
            finite_diff_check(
                move |g, vp| {
                    let vt = g.constant(target.clone());
                    g.mse(vp, vt)
                },
                &pred,
                h,
            ),
        );
    }
    let scores = Tensor::randn(&[8, 1], &mut rng);
    {
        let fake = Tensor::randn(&[8, 1], &mut rng);
        check(
            &mut reports,
            "bce_logit_pair/dReal",
            finite_diff_check(
                move |g, vr| {
                    let vf = g.constant(fake.clone());
                    g.bce_logit_pair(vr, vf)
                },
                &scores,
                h,
            ),
        );
    }
    {
        let real = Tensor::randn(&[8, 1], &mut rng);
        check(
            &mut reports,
            "bce_logit_pair/dFake",
            finite_diff_check(
                move |g, vf| {
                    let vr = g.constant(real.clone());
                    g.bce_logit_pair(vr, vf)
                },
                &scores,
                h,
            ),
        );
    }
    check(
        &mut reports,
        "bce_toward_one",
        finite_diff_check(|g, vs| g.bce_toward_one(vs), &scores, h),
    );

    // composite mlp
    let xm = Tensor::randn(&[3, 4], &mut rng);
    {
        let wm = Tensor::randn(&[4, 2], &mut rng);
        let ym = Tensor::randn(&[3, 2], &mut rng);
        check(
            &mut reports,
            "mse(leaky_relu(x*W))",
            finite_diff_check(
                move |g, vx| {
                    let vw = g.constant(wm.clone());
                    let vy = g.constant(ym.clone());
                    let hm = g.matmul(vx, vw)?;
                    let a = g.leaky_relu(hm, 0.2);
                    g.mse(a, vy)
                },
                &xm,
                h,
            ),
        );
    }

    // full MNIST target: 10 random weight coordinates per layer; small h
    // keeps pool/ReLU kinks outside the probe radius
    let arch = ArchSpec::mnist();
    let params = ParamSet::init(&arch, &mut rng);
    let xb = Tensor::rand_uniform(&[2, 1, 28, 28], 0.0, 1.0, &mut rng);
    let labels = vec![3u32, 8];
    for layer in 0..arch.layer_count() {
        let wt = params.layers[layer].weight.clone();
        let coords: Vec<usize> = (0..10)
            .map(|i| (i * 997 + layer * 131) % wt.len())
            .collect();
        let params = params.clone();
        let (arch2, xb2, labels2) = (arch.clone(), xb.clone(), labels.clone());
        check(
            &mut reports,
            &format!("mnist_forward/layer{layer}"),
            finite_diff_check_coords(
                move |g, vw| {
                    let mut values = ParamValues::register(g, &params, false);
                    let b = values.layers[layer].1;
                    values.layers[layer] = (vw, b);
                    let vx = g.constant(xb2.clone());
                    let logits = forward_graph(g, &arch2, &values, vx)?;
                    g.softmax_cross_entropy(logits, &labels2)
                },
                &wt,
                1e-6,
                &coords,
            ),
        );
    }

    // tiny end-to-end generative stack: task + beta * adversarial term,
    // gradient into the mixer's first weight
    let toy = ArchSpec::toy();
    let model = HyperGanModel::init(HyperGanConfig::tiny(), &toy, &mut rng).unwrap();
    let s_task = model.sample_noise(1, &mut rng);
    let s_adv = model.sample_noise(4, &mut rng);
    let xt = Tensor::randn(&[4, 2], &mut rng);
    let lt = vec![0u32, 1, 1, 0];
    let w0 = model.mixer.as_ref().unwrap().weights[0].clone();
    {
        let (model, toy) = (model.clone(), toy.clone());
        let (s_task, s_adv, xt, lt) = (s_task.clone(), s_adv.clone(), xt.clone(), lt.clone());
        check(
            &mut reports,
            "hypergan_end_to_end/mixer_w0",
            finite_diff_check(
                move |g, vw| {
                    let mut vals = model.register(g, ParamGroup::DiscriminatorSide);
                    vals.mixer.as_mut().unwrap().weights[0] = vw;
                    let n = toy.layer_count();
                    let vs = g.constant(s_task.clone());
                    let z = model.mix_graph(g, &vals, vs)?;
                    let codes = (0..n)
                        .map(|i| model.code_graph(g, z, i))
                        .collect::<crate::tensor::Result<Vec<_>>>()?;
                    let pv = model.generate_graph(g, &vals, &codes, &toy)?;
                    let vx = g.constant(xt.clone());
                    let out = forward_graph(g, &toy, &pv, vx)?;
                    let task = g.softmax_cross_entropy(out, &lt)?;
                    // adversarial term on a noise batch
                    let vsa = g.constant(s_adv.clone());
                    let za = model.mix_graph(g, &vals, vsa)?;
                    let mut adv: Option<Value> = None;
                    for i in 0..n {
                        let code = model.code_graph(g, za, i)?;
                        let score = model.discriminate_graph(g, &vals, code)?;
                        let term = g.bce_toward_one(score)?;
                        adv = Some(match adv {
                            Some(a) => g.add(a, term)?,
                            None => term,
                        });
                    }
                    let scaled = g.scale(adv.unwrap(), 1.0);
                    g.add(task, scaled)
                },
                &w0,
                1e-5,
            ),
        );
    }
    {
        let g0 = model.generators[0].weights[0].clone();
        let (model, toy) = (model.clone(), toy.clone());
        let (s_task, xt, lt) = (s_task.clone(), xt.clone(), lt.clone());
        check(
            &mut reports,
            "hypergan_end_to_end/gen0_w0",
            finite_diff_check(
                move |g, vw| {
                    let mut vals = model.register(g, ParamGroup::DiscriminatorSide);
                    vals.generators[0].weights[0] = vw;
                    let n = toy.layer_count();
                    let vs = g.constant(s_task.clone());
                    let z = model.mix_graph(g, &vals, vs)?;
                    let codes = (0..n)
                        .map(|i| model.code_graph(g, z, i))
                        .collect::<crate::tensor::Result<Vec<_>>>()?;
                    let pv = model.generate_graph(g, &vals, &codes, &toy)?;
                    let vx = g.constant(xt.clone());
                    let out = forward_graph(g, &toy, &pv, vx)?;
                    g.softmax_cross_entropy(out, &lt)
                },
                &g0,
                1e-5,
            ),
        );
    }

    // sensitivity: a sign-corrupted candidate gradient must be flagged
    let xf = Tensor::randn(&[5, 5], &mut rng);
    let build = |g: &Graph, vx: Value| -> crate::tensor::Result<Value> {
        let m = g.mul(vx, vx)?;
        Ok(g.sum_all(m))
    };
    let graph = Graph::new();
    let vx = graph.param(xf.clone());
    let loss = build(&graph, vx).unwrap();
    graph.backward(loss).unwrap();
    let good = graph.grad(vx).unwrap();
    let flipped = Tensor::from_vec(
        good.shape(),
        good.data().iter().map(|&v| -v).collect(),
    )
    .unwrap();
    let coords: Vec<usize> = (0..xf.len()).collect();
    let err_flipped = finite_diff_vs(build, &xf, h, &flipped, &coords).unwrap();
    reports.push(CheckReport {
        name: "sensitivity/sign_flip_detected".into(),
        rel_err: err_flipped,
        pass: err_flipped > 0.5,
    });

    reports
}
