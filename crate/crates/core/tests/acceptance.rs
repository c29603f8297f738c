//! Acceptance criteria A1-A9. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --release -p humof-core --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use humof_core::checkpoint::{load_checkpoint, save_checkpoint};
use humof_core::config::RunConfig;
use humof_core::container::{read_dataset, write_dataset};
use humof_core::data::{canonicalize_sample_or_floor, MotionSequence, Sample};
use humof_core::decode::{horizon_frame, metrics, zero_velocity_baseline, Prediction};
use humof_core::gradcheck::{check_gradients, gradcheck_sample, TOLERANCE};
use humof_core::hhi::nearest_joint_distances;
use humof_core::hsi::point_interaction_features;
use humof_core::model::{Humof, InitScheme};
use humof_core::spectral::{dct_forward, dct_inverse, make_rescale_schedule};
use humof_core::synth::generate_dataset;
use humof_core::tape::Tape;
use humof_core::train::{evaluate, train};
use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_abs_diff, raw_sample, same_bits, tiny};

fn report(id: &str, ok: bool, detail: String) {
    let line = format!("\n{id} {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(ok, "{id} failed: {detail}");
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

#[test]
fn a1_spectral_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut roundtrip: f64 = 0.0;
    for _ in 0..50 {
        let x = Array1::from_shape_fn(90, |_| rng.random_range(-3.0..3.0));
        let back = dct_inverse(dct_forward(x.view(), 90).unwrap().view(), 90).unwrap();
        roundtrip = roundtrip.max(max_abs_diff(&x, &back));
    }
    let mut leak: f64 = 0.0;
    for value in [-2.5, 0.0, 1.0, 7.25] {
        let c = dct_forward(Array1::from_elem(90, value).view(), 90).unwrap();
        leak = leak.max(c.iter().skip(1).map(|v| v * v).sum::<f64>());
    }
    let elapsed = start.elapsed();
    report(
        "A1",
        roundtrip < 1e-9 && leak < 1e-12 && within(elapsed, Duration::from_secs(1)),
        format!("roundtrip max err {roundtrip:.2e}, constant-series AC energy {leak:.2e}, {elapsed:.2?}"),
    );
}

/// Orthonormal DCT-II coefficient `k` of `x`, straight from the definition.
fn dct_coeff(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    scale
        * x.iter()
            .enumerate()
            .map(|(i, v)| v * (PI * (i as f64 + 0.5) * k as f64 / n).cos())
            .sum::<f64>()
}

fn jittered(s: &Sample, rng: &mut ChaCha8Rng) -> Sample {
    let mut out = s.clone();
    let mut jitter = |m: &mut MotionSequence| m.coords.mapv_inplace(|v| v + rng.random_range(-0.05..0.05));
    jitter(&mut out.target);
    for o in &mut out.others {
        jitter(o);
    }
    out
}

#[test]
fn a2_oracle_equivalence() {
    let start = Instant::now();
    let cfg = tiny(&[1, 2, 3]);
    let (sigma, c) = (cfg.model.sigma_hs, cfg.model.dct_coeffs);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dist_err, mut feat_err): (f64, f64) = (0.0, 0.0);
    for i in 0..20 {
        let raw = raw_sample(&cfg, 100 + i);
        let s = jittered(&canonicalize_sample_or_floor(&raw, cfg.model.scene_points, i).unwrap(), &mut rng);
        let (j, h) = (s.joints(), s.history());
        for o in &s.others {
            let got = nearest_joint_distances(o, &s.target);
            for a in 0..j {
                for t in 0..h {
                    let mut best = f64::INFINITY;
                    for b in 0..j {
                        let p = o.joint_pos(a, t);
                        let q = s.target.joint_pos(b, t);
                        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                        best = best.min(d);
                    }
                    dist_err = dist_err.max((got[[a, t]] - best).abs());
                }
            }
        }
        let got = point_interaction_features(&s.scene, &s.target, sigma, c).unwrap().features;
        for n in 0..s.scene.len() {
            let p = s.scene.point(n);
            for jj in 0..j {
                let prox: Vec<f64> = (0..h)
                    .map(|t| {
                        let x = s.target.joint_pos(jj, t);
                        let d2 = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + (p[2] - x[2]).powi(2);
                        (-d2 / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                for k in 0..c {
                    let want = if k < h { dct_coeff(&prox, k) } else { 0.0 };
                    feat_err = feat_err.max((got[[n, jj * c + k]] - want).abs());
                }
            }
            for a in 0..3 {
                feat_err = feat_err.max((got[[n, j * c + a]] - p[a]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "A2",
        dist_err < 1e-6 && feat_err < 1e-6 && within(elapsed, Duration::from_secs(10)),
        format!("distance max diff {dist_err:.2e}, point feature max diff {feat_err:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn a3_gradient_check() {
    let start = Instant::now();
    let cfg = RunConfig::tiny();
    let (model, store) = Humof::new(&cfg.model, InitScheme::Random, 3).unwrap();
    let sample = gradcheck_sample(&cfg).unwrap();
    let r = check_gradients(&model, &store, &sample, None).unwrap();
    let elapsed = start.elapsed();
    let covered = r.params.len() == store.len()
        && r.params.iter().map(|p| p.entries).sum::<usize>() == store.num_elements();
    let worst = r.worst().unwrap();
    let find = |needle: &str| {
        r.params
            .iter()
            .filter(|p| p.name.contains(needle))
            .map(|p| p.max_rel_error)
            .fold(f64::NAN, f64::max)
    };
    let (pos, alpha) = (find("position"), find("alpha"));
    let dead = r.params.iter().filter(|p| p.zero_gradient).count();
    let refined: usize = r.params.iter().map(|p| p.refined).sum();
    report(
        "A3",
        covered && r.passed() && worst.max_rel_error < TOLERANCE && dead == 0 && within(elapsed, Duration::from_secs(300)),
        format!(
            "{} parameters / {} entries, worst {} at {:.2e}, position {pos:.2e}, alpha {alpha:.2e}, {dead} zero-gradient, {refined} with a reduced step, {elapsed:.2?}",
            r.params.len(),
            store.num_elements(),
            worst.name,
            worst.max_rel_error
        ),
    );
}

#[test]
fn a4_identity_at_init() {
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    for (mut cfg, heads) in [(tiny(&[1, 2]), 4), (RunConfig::standard(), 6)] {
        cfg.model.dct_coeffs = cfg.model.frames();
        cfg.model.d_model = 3 * cfg.model.dct_coeffs;
        cfg.model.heads = heads;
        let (model, store) = Humof::new(&cfg.model, InitScheme::Identity, 4).unwrap();
        let data = generate_dataset(&cfg.data.generator, &cfg.model, 4).unwrap();
        for s in &data {
            let p = model.predict(&store, s, 0).unwrap();
            let base = zero_velocity_baseline(s, cfg.model.horizon);
            worst = worst.max(max_abs_diff(&p.motion.coords, &base.motion.coords));
        }
        cases.push(format!("C={}", cfg.model.dct_coeffs));
    }
    report(
        "A4",
        worst < 1e-6,
        format!("identity-initialised forecast vs zero-velocity: max diff {worst:.2e} ({})", cases.join(", ")),
    );
}

#[test]
fn a5_overfit() {
    let start = Instant::now();
    let mut cfg = RunConfig::tiny();
    cfg.training.batch_size = 8;
    cfg.training.epochs = 500;
    cfg.training.learning_rate = 1e-3;
    let data = generate_dataset(&cfg.data.generator, &cfg.model, 8).unwrap();
    let run = || {
        let (model, mut store) = Humof::new(&cfg.model, cfg.training.init, cfg.training.seed).unwrap();
        let initial = model.mean_loss(&store, &data).unwrap().total;
        let summary = train(&model, &mut store, &data, &cfg.training, |_| {}).unwrap();
        let last = model.mean_loss(&store, &data).unwrap().total;
        (initial, last, summary)
    };
    let (initial, last, a) = run();
    let (_, last_again, b) = run();
    let deterministic = a.log == b.log && last.to_bits() == last_again.to_bits();
    let elapsed = start.elapsed();
    report(
        "A5",
        a.steps <= 500 && last < 0.05 * initial && deterministic && within(elapsed, Duration::from_secs(600)),
        format!(
            "{} steps, loss {initial:.1} -> {last:.3} mm^2 ({:.3}%), repeat identical: {deterministic}, {elapsed:.2?}",
            a.steps,
            100.0 * last / initial
        ),
    );
}

#[test]
fn a6_learns_interactions() {
    let start = Instant::now();
    let mut cfg = RunConfig::standard();
    cfg.training.epochs = 6;
    cfg.training.learning_rate = 1e-3;
    let train_set = generate_dataset(&cfg.data.generator, &cfg.model, 512).unwrap();
    let mut held_out = cfg.data.generator.clone();
    held_out.seed = cfg.data.generator.seed + 1;
    let eval_set = generate_dataset(&held_out, &cfg.model, 64).unwrap();

    let fit = |use_interactions: bool| {
        let mut c = cfg.clone();
        c.model.use_hhi = use_interactions;
        c.model.use_hsi = use_interactions;
        let (model, mut store) = Humof::new(&c.model, c.training.init, c.training.seed).unwrap();
        train(&model, &mut store, &train_set, &c.training, |_| {}).unwrap();
        evaluate(&model, &store, &eval_set, &c.eval.horizons).unwrap()
    };
    let full = fit(true);
    let ablation = fit(false);
    let (m, a, z) = (full.model.mean.path_mm, ablation.model.mean.path_mm, full.baseline.mean.path_mm);
    let elapsed = start.elapsed();
    report(
        "A6",
        m < z && m < a && within(elapsed, Duration::from_secs(7200)),
        format!("mean path error: model {m:.1} mm, no-interaction {a:.1} mm, zero-velocity {z:.1} mm, {elapsed:.2?}"),
    );
}

#[test]
fn a7_schedule_contracts() {
    let cfg = RunConfig::standard();
    let (model, store) = Humof::new(&cfg.model, InitScheme::Standard, 7).unwrap();
    let (j, levels) = (cfg.model.joints, cfg.model.hierarchy_counts());
    let mut counts_ok = true;
    let mut seen = Vec::new();
    for k in [1usize, 2] {
        let mut c = cfg.clone();
        c.data.generator.others = vec![k];
        let s = &generate_dataset(&c.data.generator, &c.model, 1).unwrap()[0];
        let mut t = Tape::new(&store);
        let counts = model.forward(&mut t, s).unwrap().counts;
        let want = vec![
            levels[3] + k,
            levels[3] + k,
            levels[2] + k,
            levels[2] + k,
            levels[1] + k * j,
            levels[1] + k * j,
        ];
        counts_ok &= counts == want;
        seen.push(format!("K={k}: {counts:?}"));
    }
    let mut schedule_ok = true;
    for layers in 1..=8 {
        for coeffs in 1..=24 {
            let s = make_rescale_schedule(layers, coeffs);
            for (l, v) in s.vectors.iter().enumerate() {
                schedule_ok &= v.len() == 3 * coeffs && v.iter().all(|&x| x > 0.0 && x <= 1.0);
                for axis in 0..3 {
                    for c in 1..coeffs {
                        schedule_ok &= v[axis * coeffs + c] <= v[axis * coeffs + c - 1];
                        schedule_ok &= v[axis * coeffs + c] == v[c];
                    }
                }
                if l > 0 {
                    schedule_ok &= v.iter().zip(s.vectors[l - 1].iter()).all(|(a, b)| a >= b);
                }
            }
            schedule_ok &= s.layers() == layers && s.layer(layers).iter().all(|&x| x == 1.0);
        }
    }
    let default = make_rescale_schedule(6, cfg.model.dct_coeffs);
    let last_ones = default.layer(6).iter().all(|&x| x == 1.0);
    let first_high = default.layer(1)[cfg.model.dct_coeffs - 1];
    report(
        "A7",
        counts_ok && schedule_ok && last_ones && (first_high - 1.0 / 6.0).abs() < 1e-12,
        format!("token counts {}, schedule invariants {schedule_ok}, layer-6 all ones {last_ones}, layer-1 top frequency {first_high:.4}", seen.join("; ")),
    );
}

#[test]
fn a8_invariance_suite() {
    let cfg = tiny(&[1, 2, 3]);
    let (model, store) = Humof::new(&cfg.model, InitScheme::Random, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut translation, mut persons, mut scene): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..16 {
        let raw = raw_sample(&cfg, 200 + i);
        let mut moved = raw.clone();
        moved.translate([rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-1.0..1.0)]);
        let a = model.predict(&store, &raw, i).unwrap();
        let b = model.predict(&store, &moved, i).unwrap();
        translation = translation.max(max_abs_diff(&a.motion.coords, &b.motion.coords));

        let canon = canonicalize_sample_or_floor(&raw, cfg.model.scene_points, i).unwrap();
        let base = model.predict(&store, &canon, 0).unwrap();
        let mut p = canon.clone();
        p.others.shuffle(&mut rng);
        let b = model.predict(&store, &p, 0).unwrap();
        persons = persons.max(max_abs_diff(&base.motion.coords, &b.motion.coords));

        let mut order: Vec<usize> = (0..canon.scene.len()).collect();
        order.shuffle(&mut rng);
        let mut p = canon.clone();
        p.scene.points = canon.scene.points.select(Axis(0), &order);
        let b = model.predict(&store, &p, 0).unwrap();
        scene = scene.max(max_abs_diff(&base.motion.coords, &b.motion.coords));
    }

    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&cfg.data.generator, &cfg.model, 16).unwrap();
    write_dataset(&data, &dir.path().join("data")).unwrap();
    let back = read_dataset(&dir.path().join("data")).unwrap();
    let dataset_exact = back.len() == data.len()
        && data.iter().zip(&back).all(|(x, y)| {
            same_bits(&x.target.coords, &y.target.coords)
                && same_bits(&x.scene.points, &y.scene.points)
                && x.others.iter().zip(&y.others).all(|(p, q)| same_bits(&p.coords, &q.coords))
                && same_bits(&x.future.as_ref().unwrap().coords, &y.future.as_ref().unwrap().coords)
        });
    save_checkpoint(&dir.path().join("ckpt"), &cfg, &store, 3).unwrap();
    let loaded = load_checkpoint(&dir.path().join("ckpt"), Some(&cfg)).unwrap();
    let checkpoint_exact = loaded.store.len() == store.len()
        && store.iter().all(|(id, name, v)| loaded.store.name(id) == name && same_bits(v, loaded.store.get(id)));
    report(
        "A8",
        translation < 1e-6 && persons < 1e-6 && scene < 1e-6 && dataset_exact && checkpoint_exact,
        format!(
            "translation {translation:.2e}, person order {persons:.2e}, scene order {scene:.2e}, dataset bit-exact {dataset_exact}, checkpoint bit-exact {checkpoint_exact}"
        ),
    );
}

#[test]
fn a9_metric_sanity() {
    let (j, h, t) = (13, 30, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truth = MotionSequence::new(
        ndarray::Array3::from_shape_fn((j, t, 3), |_| rng.random_range(-1.0..1.0)),
        30.0,
    )
    .unwrap();
    // Offset of 5 mm along a unit direction, applied to every joint.
    let dir = [3.0 / 13.0, 4.0 / 13.0, 12.0 / 13.0];
    let mut full = ndarray::Array3::zeros((j, h + t, 3));
    for jj in 0..j {
        for f in 0..t {
            for a in 0..3 {
                full[[jj, h + f, a]] = truth.coords[[jj, f, a]] + 0.005 * dir[a];
            }
        }
    }
    let pred = Prediction {
        motion: MotionSequence::new(full, 30.0).unwrap(),
        history: h,
    };
    let horizons = [0.5, 1.0, 1.5, 2.0];
    let r = metrics(&[pred], &[truth], &horizons).unwrap();
    let path_ok = r.horizons.iter().chain([&r.mean]).all(|e| (e.path_mm - 5.0).abs() < 1e-9 && e.pose_mm.abs() < 1e-9);
    let frames: Vec<usize> = horizons.iter().map(|&s| horizon_frame(s, 30.0, t).unwrap()).collect();
    let paths: Vec<String> = r.horizons.iter().map(|e| format!("{:.6}", e.path_mm)).collect();
    report(
        "A9",
        path_ok && frames == [15, 30, 45, 60],
        format!("path error per horizon [{}] mm, horizon frames {frames:?}", paths.join(", ")),
    );
}
