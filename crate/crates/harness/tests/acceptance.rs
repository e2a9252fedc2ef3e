//! Acceptance suite: one PASS/FAIL line per criterion, run in order.
//!
//! Training-based criteria use MNIST / CIFAR-10 from `OVSW_DATA` when present and
//! full-size synthetic stand-ins otherwise. The 60-epoch CIFAR-10 flip-dynamics
//! run (criterion 7) is far beyond the default test budget; it lives in the
//! ignored `criterion_7_*` tests.
//!
//! Run with `cargo test --release -p ovsw --test acceptance -- --nocapture`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ovsw::experiments::{check_invariance, compare_optimizers, gamma_ablation, INVARIANCE_THRESHOLD};
use ovsw::train::{train, EpochMetrics};
use ovsw_core::binops::{poly_backward, ste_backward};
use ovsw_core::bitpack::{pack, packed_infer, report_sizes, xnor_popcount_dot, PackedModel};
use ovsw_core::network::{argmax_rows, build_model, save_model, Checkpoint, ModelSpec, ParamKind};
use ovsw_core::optim::{
    ags_scale, lars_step, ovsw_step, sad_decay, update_flip_state, OptimizerKind, OvswConfig, ParamSlot,
};
use ovsw_core::{Rng, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < budget_s,
        format!("runtime {:.1}s exceeds budget {budget_s}s", elapsed.as_secs_f64()),
    )
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.standard_normal()).collect()).unwrap()
}

fn metrics_without_wall(rows: &[EpochMetrics]) -> Vec<(usize, u64, u64, u64, u64)> {
    rows.iter()
        .map(|r| (r.epoch, r.train_loss.to_bits(), r.train_acc.to_bits(), r.test_acc.to_bits(), r.lr.to_bits()))
        .collect()
}

fn strip_wall_column(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0).collect::<Vec<_>>().join("\n")
}

// 1. Scaling every binarized weight by γ leaves logits and ∂L/∂W unchanged.
fn criterion_1() -> Outcome {
    let t = Instant::now();
    let r = check_invariance(&ModelSpec::mini_res(), 0, 8).map_err(|e| e.to_string())?;
    within(t.elapsed(), 30.0)?;
    check(r.rows.len() == 3, "expected one row per gamma")?;
    let worst = r.rows.iter().map(|x| x.logit_deviation.max(x.grad_deviation)).fold(0.0, f64::max);
    check(r.pass && worst <= INVARIANCE_THRESHOLD, format!("max deviation {worst:e}"))?;
    let control = r.negative_control.iter().map(|x| x.logit_deviation.max(x.grad_deviation)).fold(0.0, f64::max);
    check(r.negative_control_detected, format!("negative control stayed within threshold ({control:e})"))?;
    Ok(format!("max deviation {worst:e}; negative control (alpha scaled too) {control:e} > {INVARIANCE_THRESHOLD:e}"))
}

/// Piecewise quadratic whose derivative is the activation estimator.
fn poly_f(a: f64) -> f64 {
    if a < -1.0 {
        -1.0
    } else if a < 0.0 {
        2.0 * a + a * a
    } else if a < 1.0 {
        2.0 * a - a * a
    } else {
        1.0
    }
}

// 2. Estimator gradients against central finite differences.
fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(2);
    let mut points = Vec::new();
    while points.len() < 100 {
        let a = rng.uniform_f32(-1.6, 1.6);
        if [-1.0f32, 0.0, 1.0].iter().all(|k| (a - k).abs() >= 0.05) {
            points.push(a);
        }
    }
    let a = Tensor::from_vec(points.clone());
    let got = poly_backward(&a, &Tensor::full(&[100], 1.0)).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (&x, &g) in points.iter().zip(got.data()) {
        let fd = (poly_f(x as f64 + h) - poly_f(x as f64 - h)) / (2.0 * h);
        let err = (g as f64 - fd).abs();
        if fd == 0.0 {
            check(g == 0.0, format!("nonzero gradient {g} at {x} outside [-1, 1]"))?;
        } else {
            worst = worst.max(err / fd.abs());
        }
    }
    check(worst <= 1e-3, format!("worst relative error {worst:e}"))?;
    let up = random(&[257], &mut rng);
    check(ste_backward(&up) == up, "weight estimator is not the identity")?;
    within(t.elapsed(), 5.0)?;
    Ok(format!("100 points, worst relative error {worst:.2e}; weight estimator exact identity"))
}

// 3. AGS lower-bounds ‖G‖/‖W‖ per filter without turning the gradient.
fn criterion_3() -> Outcome {
    let t = Instant::now();
    let lambda = 0.04;
    let mut rng = Rng::new(3);
    let (mut scaled, mut untouched) = (0, 0);
    for _ in 0..100 {
        // 10 filters per tensor with gradient scales spanning six decades.
        let k = 1 + rng.below(60);
        let mut g = random(&[10, k], &mut rng);
        let w = random(&[10, k], &mut rng);
        for (f, row) in g.data_mut().chunks_mut(k).enumerate() {
            let s = 10f32.powf(rng.uniform_f32(-5.0, 1.0));
            row.iter_mut().for_each(|v| *v *= if f == 0 && rng.coin() { 0.0 } else { s });
        }
        let out = ags_scale(&g, &w, lambda).map_err(|e| e.to_string())?;
        for ((go, gi), wi) in out.data().chunks(k).zip(g.data().chunks(k)).zip(w.data().chunks(k)) {
            let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let (gn, wn, on) = (norm(gi), norm(wi), norm(go));
            if gn == 0.0 || wn == 0.0 {
                check(go == gi, "degenerate filter was modified")?;
                continue;
            }
            check(on / wn >= lambda * (1.0 - 1e-5), format!("post ratio {} below lambda", on / wn))?;
            let dot: f64 = go.iter().zip(gi).map(|(&a, &b)| a as f64 * b as f64).sum();
            check(dot / (on * gn) >= 1.0 - 1e-6, "direction changed")?;
            if gn / wn >= lambda {
                check(go.iter().zip(gi).all(|(a, b)| a.to_bits() == b.to_bits()), "above-threshold filter changed")?;
                untouched += 1;
            } else {
                scaled += 1;
            }
        }
    }
    within(t.elapsed(), 5.0)?;
    Ok(format!("1000 filters: {scaled} lifted to the bound, {untouched} above it left bit-identical"))
}

// 4. Flip-state EMA closed form and the strict σ boundary of the decay.
fn criterion_4() -> Outcome {
    let t = Instant::now();
    let m = 0.99;
    let plus = Tensor::full(&[1], 1.0);
    let minus = Tensor::full(&[1], -1.0);
    let mut s = vec![0.0];
    let mut cur = plus.clone();
    for k in 1..=300 {
        let next = if cur == plus { minus.clone() } else { plus.clone() };
        s = update_flip_state(&s, &cur, &next, m).map_err(|e| e.to_string())?;
        cur = next;
        let closed = 1.0 - m.powi(k);
        check((s[0] - closed).abs() <= 1e-9, format!("after {k} flips S = {} vs {closed}", s[0]))?;
    }
    // Random sequences against S_t = (1-m) Σ_j m^(t-j) f_j.
    let mut rng = Rng::new(4);
    let n = 64;
    let mut s = vec![0.0; n];
    let mut prev: Vec<f32> = (0..n).map(|_| if rng.coin() { 1.0 } else { -1.0 }).collect();
    let mut flips: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut worst = 0.0f64;
    for step in 1..=1000 {
        let next: Vec<f32> = prev.iter().map(|&p| if rng.below(5) == 0 { -p } else { p }).collect();
        s = update_flip_state(&s, &Tensor::from_vec(prev.clone()), &Tensor::from_vec(next.clone()), m)
            .map_err(|e| e.to_string())?;
        for (f, (a, b)) in flips.iter_mut().zip(prev.iter().zip(&next)) {
            f.push(if a != b { 1.0 } else { 0.0 });
        }
        prev = next;
        if step % 50 != 0 {
            continue;
        }
        for i in 0..n {
            let len = flips[i].len();
            let oracle: f64 = flips[i].iter().enumerate().map(|(j, f)| (1.0 - m) * m.powi((len - 1 - j) as i32) * f).sum();
            worst = worst.max((s[i] - oracle).abs());
        }
    }
    check(worst <= 1e-9, format!("recurrence deviation {worst:e}"))?;
    let sigma = 9e-4;
    let g = Tensor::from_vec(vec![0.5, 0.5, 0.5]);
    let w = Tensor::from_vec(vec![2.0, 2.0, 2.0]);
    let out = sad_decay(&g, &w, &[sigma, sigma - 1e-12, sigma + 1e-12], sigma, 1e-4).map_err(|e| e.to_string())?;
    check(out.data()[0] == 0.5 && out.data()[2] == 0.5, "state equal to or above sigma was decayed")?;
    check(out.data()[1] == 0.5 + 1e-4 * 2.0, "state below sigma was not decayed")?;
    within(t.elapsed(), 1.0)?;
    Ok(format!("S = 1 - m^k over 300 flips; 64x1000 random recurrence (checked every 50 steps) within {worst:.1e}; S = sigma untouched"))
}

// 5. OvSW with λ = σ = γ_pen = 0 retraces vanilla SGD bit for bit.
fn criterion_5() -> Outcome {
    let fx = common::mnist();
    let dir = tempfile::tempdir().unwrap();
    let base = ["epochs=2", "dataset.subset=0.05", "dataset.test_subset=0.2", "checkpoint_every=1", "seed=5"];
    let run = |extra: &[&str], name: &str| {
        let mut sets = base.to_vec();
        sets.extend_from_slice(extra);
        let out = dir.path().join(name);
        (train(&common::config(&sets, Some(&out)), &fx.split).unwrap(), out)
    };
    let (v, vd) = run(&["optimizer.kind=vanilla"], "vanilla");
    let (o, od) = run(
        &["optimizer.kind=ovsw", "optimizer.ags_lambda=0", "optimizer.sad_sigma=0", "optimizer.sad_penalty=0"],
        "ovsw",
    );
    check(metrics_without_wall(&v.metrics) == metrics_without_wall(&o.metrics), "metrics differ")?;
    for e in 1..=2 {
        let a = Checkpoint::load(&vd.join(format!("checkpoint_epoch{e}.ckpt"))).unwrap();
        let b = Checkpoint::load(&od.join(format!("checkpoint_epoch{e}.ckpt"))).unwrap();
        check(save_model(&a.model).unwrap() == save_model(&b.model).unwrap(), format!("weights differ after epoch {e}"))?;
        let (sa, sb) = (a.optimizer.unwrap(), b.optimizer.unwrap());
        check(sa.step == sb.step, "step counts differ")?;
        for (x, y) in sa.slots.iter().zip(&sb.slots) {
            check(x.velocity == y.velocity && x.flip_state == y.flip_state, format!("optimizer state of {} differs", x.name))?;
        }
    }
    check(v.flips == o.flips, "flip statistics differ")?;
    Ok(format!(
        "2 epochs, {} steps, MNIST 5% subset ({}): weights, buffers, momentum and metrics identical",
        v.optimizer.step,
        fx.source()
    ))
}

// 6. LARS keeps the raw gradient in its momentum buffer; OvSW stores the AGS-scaled one.
fn criterion_6() -> Outcome {
    let config = OvswConfig { total_steps: 10, ..OvswConfig::cifar() };
    let (m, phi) = (config.momentum as f32, config.weight_decay as f32);
    let w0 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.25, 2.0, 0.1, -0.3]).unwrap();
    let g = [
        Tensor::new(vec![2, 3], vec![1e-4, -2e-4, 3e-4, 0.5, -0.1, 0.2]).unwrap(),
        Tensor::new(vec![2, 3], vec![-2e-4, 1e-4, 1e-4, -0.3, 0.4, 0.1]).unwrap(),
    ];
    let mut lars_w = w0.clone();
    let mut lars = vec![ParamSlot::new("w", ParamKind::BinarizedWeight, &w0).unwrap()];
    let mut ovsw_w = w0.clone();
    let mut ovsw = vec![ParamSlot::new("w", ParamKind::BinarizedWeight, &w0).unwrap()];
    let mut expect_lars = Tensor::zeros(&[2, 3]);
    let mut expect_ovsw = Tensor::zeros(&[2, 3]);
    for (t, gt) in g.iter().enumerate() {
        // Oracle buffers from the pre-step weights.
        let raw: Vec<f32> = expect_lars.data().iter().zip(gt.data()).zip(lars_w.data())
            .map(|((&v, &gi), &wi)| m * v + (gi + phi * wi))
            .collect();
        let mut lifted = gt.data().to_vec();
        for (gr, wr) in lifted.chunks_mut(3).zip(ovsw_w.data().chunks(3)) {
            let gn = gr.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let wn = wr.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if gn / wn < config.ags_lambda {
                gr.iter_mut().for_each(|x| *x = (*x as f64 * config.ags_lambda * wn / gn) as f32);
            }
        }
        let s = ovsw[0].flip_state.clone().unwrap();
        let scaled: Vec<f32> = expect_ovsw.data().iter().zip(&lifted).zip(ovsw_w.data()).zip(&s)
            .map(|(((&v, &gi), &wi), &si)| {
                let gi = if si < config.sad_sigma { gi + config.sad_penalty as f32 * wi } else { gi };
                m * v + (gi + phi * wi)
            })
            .collect();
        expect_lars = Tensor::new(vec![2, 3], raw).unwrap();
        expect_ovsw = Tensor::new(vec![2, 3], scaled).unwrap();
        lars_step(&mut [&mut lars_w], &mut lars, std::slice::from_ref(gt), t as u64, &config).map_err(|e| e.to_string())?;
        ovsw_step(&mut [&mut ovsw_w], &mut ovsw, std::slice::from_ref(gt), t as u64, &config).map_err(|e| e.to_string())?;
        let close = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-6 * (1.0 + y.abs()));
        check(close(&lars[0].velocity, &expect_lars), format!("LARS buffer {:?} != m*V + (G + phi*W)", lars[0].velocity.data()))?;
        check(close(&ovsw[0].velocity, &expect_ovsw), format!("OvSW buffer {:?} != m*V + (scaled G + phi*W)", ovsw[0].velocity.data()))?;
        // AGS fires on the first filter, so the buffers must differ there.
        check(lars[0].velocity.data()[..3] != ovsw[0].velocity.data()[..3], "buffers agree although AGS activated")?;
    }
    Ok("two scripted steps: LARS buffer holds raw G + phi*W; OvSW buffer holds the scaled gradient".into())
}

// 7. Flip dynamics on CIFAR-10 MiniRes (see the ignored tests below).
fn criterion_7_run(subset: f64) -> Outcome {
    let fx = common::cifar10();
    let dir = tempfile::tempdir().unwrap();
    let subset = format!("dataset.subset={subset}");
    let cfg = common::config(&["dataset.name=cifar10", "epochs=60", &subset, "seed=0"], Some(dir.path()));
    let runs = compare_optimizers(&cfg, &fx.split, &[OptimizerKind::Vanilla, OptimizerKind::Ovsw]).map_err(|e| e.to_string())?;
    let deepest = "block6.weight";
    let (v, o) = (runs[0].layer(deepest).unwrap(), runs[1].layer(deepest).unwrap());
    let detail = format!(
        "{} : never-flipped vanilla {:.4} / ovsw {:.4}; test acc vanilla {:.4} / ovsw {:.4}",
        fx.source(), v.never_flipped_ratio, o.never_flipped_ratio, runs[0].final_test_acc, runs[1].final_test_acc
    );
    check(o.never_flipped_ratio <= 0.5 * v.never_flipped_ratio, format!("flip ratio ordering fails; {detail}"))?;
    check(runs[1].final_test_acc >= runs[0].final_test_acc + 0.005, format!("accuracy ordering fails; {detail}"))?;
    Ok(detail)
}

// 8. Larger initialization scale ⇒ fewer flips every epoch and lower accuracy.
fn criterion_8() -> Outcome {
    let t = Instant::now();
    let fx = common::mnist();
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::config(&["epochs=5", "dataset.subset=0.1", "dataset.test_subset=0.2", "seed=0"], Some(dir.path()));
    let runs = gamma_ablation(&cfg, &fx.split, &[1.0, 1000.0]).map_err(|e| e.to_string())?;
    within(t.elapsed(), 600.0)?;
    let deepest = "block4.weight";
    let (lo, hi) = (runs[0].layer(deepest).unwrap(), runs[1].layer(deepest).unwrap());
    check(lo.epoch_flip_rate.len() == 5 && hi.epoch_flip_rate.len() == 5, "expected five epochs")?;
    let strictly = lo.epoch_flip_rate.iter().zip(&hi.epoch_flip_rate).all(|(a, b)| b < a);
    let detail = format!(
        "{}: flip rates gamma=1 {:?} vs gamma=1000 {:?}; acc {:.4} vs {:.4}",
        fx.source(), lo.epoch_flip_rate, hi.epoch_flip_rate, runs[0].final_test_acc, runs[1].final_test_acc
    );
    check(strictly, format!("flip rate not strictly lower every epoch; {detail}"))?;
    check(runs[1].final_test_acc < runs[0].final_test_acc, format!("accuracy not lower; {detail}"))?;
    Ok(detail)
}

// 9. XNOR-popcount dots are integer-exact; packed inference matches float eval.
fn criterion_9() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(9);
    for _ in 0..500 {
        let n = 1 + rng.below(700);
        let a = random(&[1, n], &mut rng);
        let b = random(&[1, n], &mut rng);
        let sa: Vec<i64> = a.data().iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
        let sb: Vec<i64> = b.data().iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
        let float_dot: i64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
        let (pa, pb) = (pack(&a), pack(&b));
        let dot = xnor_popcount_dot(pa.row(0), pb.row(0)).map_err(|e| e.to_string())?;
        check(dot == float_dot, format!("n={n}: packed {dot} vs float {float_dot}"))?;
    }
    let mut report = Vec::new();
    // A briefly trained ToyConvNet on MNIST and a randomly initialised MiniRes on CIFAR-10.
    let mnist = common::mnist();
    let cfg = common::config(&["epochs=1", "dataset.subset=0.05", "dataset.test_subset=0.05", "seed=9"], None);
    let toy = train(&cfg, &mnist.split).map_err(|e| e.to_string())?.model;
    let cifar = common::cifar10();
    let res = build_model(&ModelSpec::mini_res(), &mut Rng::new(9)).unwrap();
    for (name, model, data) in [("toy", &toy, &mnist.split.test), ("minires", &res, &cifar.split.test)] {
        let packed = PackedModel::from_model(model).map_err(|e| e.to_string())?;
        let (mut worst, mut agree) = (0.0f32, 0usize);
        for start in (0..2000).step_by(250) {
            let (x, _) = data.batch(&(start..start + 250).collect::<Vec<_>>());
            let a = packed_infer(&packed, &x).map_err(|e| e.to_string())?;
            let b = model.forward_eval(&x).map_err(|e| e.to_string())?;
            worst = worst.max(a.sub(&b).unwrap().max_abs());
            agree += argmax_rows(&a).iter().zip(argmax_rows(&b)).filter(|(p, q)| **p == *q).count();
        }
        check(worst <= 1e-3, format!("{name}: max logit deviation {worst:e}"))?;
        check(agree as f64 / 2000.0 >= 0.999, format!("{name}: argmax agreement {agree}/2000"))?;
        report.push(format!("{name} max |dlogit| {worst:.1e}, argmax {agree}/2000"));
    }
    within(t.elapsed(), 120.0)?;
    Ok(format!("500 packed dots exact; {}", report.join("; ")))
}

// 10. Packed storage is 32x per binarized tensor (up to word padding); whole model in [10x, 32x).
fn criterion_10() -> Outcome {
    let t = Instant::now();
    let model = build_model(&ModelSpec::mini_res(), &mut Rng::new(10)).unwrap();
    let packed = PackedModel::from_model(&model).map_err(|e| e.to_string())?;
    for b in &model.blocks {
        let bits = b.in_channels() * 9;
        let padded = bits.div_ceil(64) * 64;
        let p = pack(&b.state.weight);
        let ratio = (b.state.weight.len() * 4) as f64 / p.nbytes() as f64;
        check(ratio == 32.0 * bits as f64 / padded as f64, format!("per-tensor ratio {ratio}"))?;
    }
    let r = report_sizes(&model, &packed).map_err(|e| e.to_string())?;
    check((10.0..32.0).contains(&r.ratio), format!("whole-model ratio {}", r.ratio))?;
    within(t.elapsed(), 10.0)?;
    Ok(serde_json::to_string(&r).unwrap())
}

// 11. Same config and seed ⇒ byte-identical checkpoints and metrics.
fn criterion_11() -> Outcome {
    let fx = common::mnist();
    let dir = tempfile::tempdir().unwrap();
    let sets = ["epochs=2", "dataset.subset=0.05", "dataset.test_subset=0.2", "checkpoint_every=1", "seed=11"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    train(&common::config(&sets, Some(&a)), &fx.split).map_err(|e| e.to_string())?;
    train(&common::config(&sets, Some(&b)), &fx.split).map_err(|e| e.to_string())?;
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["checkpoint_epoch1.ckpt", "checkpoint_epoch2.ckpt", "final.ckpt", "flip_histogram.csv", "flip_epochs.csv"] {
        check(read(&a, f) == read(&b, f), format!("{f} differs"))?;
    }
    let csv = |d: &std::path::Path| strip_wall_column(&String::from_utf8(read(d, "metrics.csv")).unwrap());
    check(csv(&a) == csv(&b), "metrics.csv differs outside wall_seconds")?;
    Ok(format!("two runs ({}): checkpoints, flip CSVs and metrics identical", fx.source()))
}

fn run(n: usize, f: fn() -> Outcome, failures: &mut Vec<usize>) {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t.elapsed().as_secs_f64();
    match result {
        Ok(detail) => println!("criterion {n:>2}: PASS [{secs:.1}s] {detail}"),
        Err(detail) => {
            println!("criterion {n:>2}: FAIL [{secs:.1}s] {detail}");
            failures.push(n);
        }
    }
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    run(1, criterion_1, &mut failures);
    run(2, criterion_2, &mut failures);
    run(3, criterion_3, &mut failures);
    run(4, criterion_4, &mut failures);
    run(5, criterion_5, &mut failures);
    run(6, criterion_6, &mut failures);
    println!(
        "criterion  7: NOT RUN — 60-epoch CIFAR-10 MiniRes comparison; run `cargo test --release -p ovsw --test acceptance -- --ignored --nocapture` with OVSW_DATA pointing at CIFAR-10"
    );
    run(8, criterion_8, &mut failures);
    run(9, criterion_9, &mut failures);
    run(10, criterion_10, &mut failures);
    run(11, criterion_11, &mut failures);
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

#[test]
#[ignore = "60 epochs of MiniRes per optimizer; hours on one CPU core"]
fn criterion_7_full() {
    let mut failures = Vec::new();
    run(7, || criterion_7_run(1.0), &mut failures);
    assert!(failures.is_empty());
}

#[test]
#[ignore = "60 epochs of MiniRes on a 25% subset per optimizer"]
fn criterion_7_quarter_subset() {
    let mut failures = Vec::new();
    run(7, || criterion_7_run(0.25), &mut failures);
    assert!(failures.is_empty());
}
