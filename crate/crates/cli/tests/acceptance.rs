//! Acceptance suite: numerical guarantees of the flow core, exactness of
//! the metrics, feature invariants, and a seeded synthetic end-to-end
//! benchmark for both variants, plus CLI-level ablation and determinism
//! checks. Each check prints one `acceptance <name>: pass` line; run with
//! `--nocapture` to see them on success.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajvad::eval::{ap, auroc, concat_frames, evaluate};
use trajvad::features::{compute_features, EPS, FEATURE_GROUPS, FEATURE_NAMES, NUM_FEATURES};
use trajvad::flow::{mean_pool, Flow, FlowModel, ModelConfig, ParamStore, Variant, POSE_DIM};
use trajvad::pose::compute_gate;
use trajvad::preprocess::{segment_track, smooth_track, Standardizer, Window};
use trajvad::scoring::{aggregate_videos, score_segments, score_window};
use trajvad::synth::{generate, write_scenario, AnomalyKind, ScenarioConfig};
use trajvad::track_io::{
    parse_labels, parse_pose, parse_tracks, write_detections, write_meta, RawDetection, VideoMeta,
};
use trajvad::training::{mean_loss, train, train_on_inputs, TrainConfig, TrainItem};

fn pass(name: &str, start: Instant, bound_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < bound_s,
        "acceptance {name}: fail (took {elapsed:.1}s, bound {bound_s}s)"
    );
    println!("acceptance {name}: pass ({elapsed:.1}s)");
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for v in store.data_mut().iter_mut() {
        *v = rng.gen_range(-scale..scale);
    }
}

fn random_flow(
    width: usize,
    k: usize,
    hidden: usize,
    cond_dim: Option<usize>,
    seed: u64,
) -> (ParamStore, Flow) {
    let mut store = ParamStore::new();
    let flow = Flow::new(&mut store, "", width, k, hidden, 2.0, cond_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randomize(&mut store, &mut rng, 0.4);
    (store, flow)
}

fn random_input(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn a01_flow_invertibility() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut pairs = 0usize;
    for (k, base) in [(6usize, 1_000u64), (18, 5_000)] {
        for i in 0..500u64 {
            let (store, flow) = random_flow(30, k, 8, None, base + i);
            let x = random_input(16 * 30, base + 100_000 + i);
            let (z, logdet) = flow.forward(&store, &x, 16, None).unwrap();
            assert!(logdet.is_finite());
            let back = flow.inverse(&store, &z, 16, None).unwrap();
            let err = x
                .iter()
                .zip(back.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(err);
            pairs += 1;
        }
    }
    assert!(pairs >= 1000);
    assert!(worst < 1e-6, "worst round-trip error {worst}");
    pass("01 flow-invertibility", start, 30.0);
}

/// log|det| of a dense matrix by LU decomposition with partial pivoting.
fn lu_log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        acc += p.abs().ln();
        for row in col + 1..n {
            let f = m[row][col] / p;
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    acc
}

fn dense_jacobian_logdet(
    flow: &Flow,
    store: &ParamStore,
    x: &[f64],
    t_len: usize,
    cond: Option<&[f64]>,
) -> f64 {
    let n = x.len();
    let h = 1e-6;
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (zp, _) = flow.forward(store, &xp, t_len, cond).unwrap();
        let (zm, _) = flow.forward(store, &xm, t_len, cond).unwrap();
        for i in 0..n {
            jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    lu_log_abs_det(jac)
}

#[test]
fn a02_logdet_exactness() {
    let start = Instant::now();
    // unconditioned tiny flows
    for (width, t_len, k, seed) in [(4usize, 3usize, 2usize, 121u64), (6, 4, 3, 122), (5, 2, 1, 123)] {
        let (store, flow) = random_flow(width, k, 6, None, seed);
        let x = random_input(t_len * width, seed + 7);
        let (_, logdet) = flow.forward(&store, &x, t_len, None).unwrap();
        let dense = dense_jacobian_logdet(&flow, &store, &x, t_len, None);
        let rel = (logdet - dense).abs() / dense.abs().max(1.0);
        assert!(rel < 1e-5, "unconditioned: analytic {logdet} vs dense {dense}");
    }
    // conditioned flows
    for (width, t_len, k, cd, seed) in [(4usize, 3usize, 2usize, 3usize, 131u64), (6, 4, 3, 5, 132)] {
        let (store, flow) = random_flow(width, k, 6, Some(cd), seed);
        let cond = random_input(cd, seed + 3);
        let x = random_input(t_len * width, seed + 7);
        let (_, logdet) = flow.forward(&store, &x, t_len, Some(&cond)).unwrap();
        let dense = dense_jacobian_logdet(&flow, &store, &x, t_len, Some(&cond));
        let rel = (logdet - dense).abs() / dense.abs().max(1.0);
        assert!(rel < 1e-5, "conditioned: analytic {logdet} vs dense {dense}");
    }
    pass("02 logdet-exactness", start, 60.0);
}

/// Row-major flow input: standardized features plus the class embedding.
fn assemble_x(model: &FlowModel, feats: &Array2<f64>, class_id: usize) -> Vec<f64> {
    let emb = model.embedding_row(class_id).unwrap().to_vec();
    let t_len = feats.nrows();
    let d = feats.ncols();
    let w = d + emb.len();
    let mut x = vec![0.0; t_len * w];
    for t in 0..t_len {
        for j in 0..d {
            x[t * w + j] = feats[[t, j]];
        }
        x[t * w + d..(t + 1) * w].copy_from_slice(&emb);
    }
    x
}

#[test]
fn a03_full_model_gradient_check() {
    let start = Instant::now();
    let mut mask = vec![false; NUM_FEATURES];
    for m in mask.iter_mut().take(4) {
        *m = true;
    }
    let config = ModelConfig {
        variant: Variant::P,
        window_len: 4,
        k_traj: 2,
        k_pose: 1,
        embed_dim: 2,
        num_classes: 2,
        feature_mask: mask,
        hidden: 4,
        ..ModelConfig::default()
    };
    let mut model = FlowModel::new(config, Standardizer::identity(NUM_FEATURES), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    randomize(&mut model.store, &mut rng, 0.3);

    let t = 3usize;
    let w = model.traj_width();
    let mut feats = Array2::zeros((t, 4));
    for v in feats.iter_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    let class_id = 1usize;
    let px: Vec<f64> = (0..t * POSE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = 0.7;
    let mu0 = model.config.mu0;
    let lambda = model.config.lambda;
    let denom = t as f64 * (w as f64 + POSE_DIM as f64 * g);

    // analytic gradient of the gated per-segment loss; the conditioning
    // latent is stop-gradient, so the finite-difference loss below keeps
    // it frozen at its base value
    let mut grads = model.store.zeros_like();
    let x = assemble_x(&model, &feats, class_id);
    let (ll_t, grad_x) = model
        .traj
        .backward_ll(&model.store, &x, t, None, mu0, -1.0 / denom, &mut grads)
        .unwrap();
    model.accumulate_embedding_grad(&grad_x, t, class_id, &mut grads);
    let (z, _) = model.traj.forward(&model.store, &x, t, None).unwrap();
    let cond = mean_pool(&z, t, w);
    let (ll_p, _) = model
        .pose
        .as_ref()
        .unwrap()
        .backward_ll(&model.store, &px, t, Some(&cond), mu0, -lambda * g / denom, &mut grads)
        .unwrap();
    let loss = -(ll_t + lambda * g * ll_p) / denom;
    assert!(loss.is_finite());

    let frozen_loss = |model: &FlowModel| -> f64 {
        let x = assemble_x(model, &feats, class_id);
        let (ll_t, _) = model
            .traj
            .log_likelihood(&model.store, &x, t, None, mu0)
            .unwrap();
        let (ll_p, _) = model
            .pose
            .as_ref()
            .unwrap()
            .log_likelihood(&model.store, &px, t, Some(&cond), mu0)
            .unwrap();
        -(ll_t + lambda * g * ll_p) / denom
    };

    let h = 1e-5;
    let n_params = model.store.data().len();
    assert!(n_params > 500, "tiny model still has every block: {n_params}");
    let mut worst = 0.0f64;
    for i in 0..n_params {
        let orig = model.store.data()[i];
        model.store.data_mut()[i] = orig + h;
        let lp = frozen_loss(&model);
        model.store.data_mut()[i] = orig - h;
        let lm = frozen_loss(&model);
        model.store.data_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (grads[i] - fd).abs() / fd.abs().max(1e-3);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst gradient relative error {worst}");
    pass("03 gradient-check", start, 60.0);
}

fn gaussian_items(n: usize, t_len: usize, d: usize, seed: u64) -> Vec<TrainItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut f = Array2::zeros((t_len, d));
            for v in f.iter_mut() {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
            TrainItem {
                features: f,
                class_id: 0,
                pose: None,
                provenance: format!("item{i}"),
            }
        })
        .collect()
}

#[test]
fn a04_density_sanity() {
    let start = Instant::now();
    let d = 4;
    let mut mask = vec![false; NUM_FEATURES];
    for m in mask.iter_mut().take(d) {
        *m = true;
    }
    let config = ModelConfig {
        window_len: 4,
        k_traj: 2,
        embed_dim: 0,
        num_classes: 1,
        feature_mask: mask,
        hidden: 16,
        ..ModelConfig::default()
    };
    let mut model = FlowModel::new(config, Standardizer::identity(NUM_FEATURES), 1).unwrap();
    let items = gaussian_items(512, 4, d, 500);
    let cfg = TrainConfig {
        batch_size: 64,
        epochs: 25,
        lr: 0.05,
        lr_final: 0.01,
        ..TrainConfig::default()
    };
    let losses = train_on_inputs(&mut model, &items, &cfg).unwrap();
    let held_out = gaussian_items(256, 4, d, 501);
    let nll = mean_loss(&model, &held_out).unwrap();
    // standard normal entropy per dimension: 0.5 * ln(2*pi*e) = 1.4189...
    let target = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!(
        (nll - target).abs() < 0.05,
        "held-out per-dim NLL {nll} vs {target} (losses {losses:?})"
    );
    pass("04 density-sanity", start, 180.0);
}

fn load_windows(
    dir: &Path,
    with_pose: bool,
    t_len: usize,
    stride: usize,
) -> (Vec<Window>, BTreeMap<String, VideoMeta>) {
    let (mut tracks, metas, mut report) =
        parse_tracks(&dir.join("tracks.csv"), &dir.join("meta.csv")).unwrap();
    if with_pose {
        parse_pose(&dir.join("pose.csv"), &mut tracks, &metas, &mut report).unwrap();
    }
    let windows = tracks
        .iter()
        .map(|t| smooth_track(t, 2))
        .flat_map(|t| segment_track(&t, t_len, stride))
        .collect();
    (windows, metas)
}

#[test]
fn a05_pose_reduction_law() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let scen = ScenarioConfig {
        seed: 21,
        videos: 2,
        frames: 120,
        objects: 3,
        class_mix: [0.5, 0.5, 0.0],
        with_pose: true,
        ..ScenarioConfig::default()
    };
    write_scenario(&generate(&scen).unwrap(), dir.path()).unwrap();
    let (mut windows, _) = load_windows(dir.path(), true, 8, 4);
    // one gated person window with a single missing pose frame: its
    // validity gate closes, so it must score on the trajectory alone
    let broken = windows
        .iter()
        .find(|w| w.class_id == 0 && w.has_full_pose())
        .expect("scenario yields fully posed person windows")
        .clone();
    let mut broken = broken;
    broken.pose.as_mut().unwrap().present[0] = false;
    windows.push(broken);

    let cfg_t = ModelConfig {
        variant: Variant::T,
        window_len: 8,
        k_traj: 4,
        k_pose: 2,
        embed_dim: 3,
        num_classes: 3,
        hidden: 8,
        ..ModelConfig::default()
    };
    let cfg_p = ModelConfig {
        variant: Variant::P,
        ..cfg_t.clone()
    };
    let (standardizer, _) = trajvad::training::prepare_items(&cfg_t, &windows).unwrap();
    let mut model_t = FlowModel::new(cfg_t, standardizer.clone(), 9).unwrap();
    let mut model_p = FlowModel::new(cfg_p, standardizer, 9).unwrap();

    // give both models identical random trajectory parameters, tensor by
    // tensor, and the pose model its own random pose parameters
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let shared: Vec<_> = model_t.store.specs().to_vec();
    for spec in &shared {
        let vals: Vec<f64> = (0..spec.len).map(|_| rng.gen_range(-0.3..0.3)).collect();
        model_t.store.data_mut()[spec.offset..spec.offset + spec.len].copy_from_slice(&vals);
        let id = model_p
            .store
            .find(&spec.name)
            .expect("pose model carries every trajectory tensor");
        model_p.store.get_mut(id).copy_from_slice(&vals);
    }
    let pose_specs: Vec<_> = model_p
        .store
        .specs()
        .iter()
        .filter(|s| s.name.starts_with("pose."))
        .cloned()
        .collect();
    assert!(!pose_specs.is_empty());
    for spec in &pose_specs {
        for v in model_p.store.data_mut()[spec.offset..spec.offset + spec.len].iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }

    let mut closed = 0usize;
    let mut gated_diff = 0usize;
    for w in &windows {
        let g = compute_gate(w, 0).value();
        let st = score_window(&model_t, w).unwrap();
        let sp = score_window(&model_p, w).unwrap();
        if g == 0.0 {
            assert_eq!(
                st.score.to_bits(),
                sp.score.to_bits(),
                "gate-closed window {}/{}@{} not bit-identical",
                w.video_id,
                w.track_id,
                w.start_frame
            );
            closed += 1;
        } else if st.score.to_bits() != sp.score.to_bits() {
            gated_diff += 1;
        }
    }
    assert!(closed >= 10, "only {closed} gate-closed windows exercised");
    assert!(gated_diff > 0, "pose branch never changed a gated score");
    pass("05 pose-reduction-law", start, 60.0);
}

/// O(n^2) all-pairs reference in the same half-win units.
fn auroc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins2: u128 = 0;
    let mut pos = 0u128;
    let mut neg = 0u128;
    for i in 0..scores.len() {
        if labels[i] == 1 {
            pos += 1;
            for j in 0..scores.len() {
                if labels[j] == 0 {
                    if scores[i] > scores[j] {
                        wins2 += 2;
                    } else if scores[i] == scores[j] {
                        wins2 += 1;
                    }
                }
            }
        } else {
            neg += 1;
        }
    }
    wins2 as f64 / (2 * pos * neg) as f64
}

/// Independent descending sweep over explicit thresholds.
fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let p: usize = labels.iter().map(|&l| l as usize).sum();
    let mut sum = 0.0;
    let mut prev_tp = 0usize;
    for th in thresholds {
        let tp = (0..scores.len())
            .filter(|&i| labels[i] == 1 && scores[i] >= th)
            .count();
        let total = scores.iter().filter(|&&s| s >= th).count();
        let block_p = tp - prev_tp;
        if block_p > 0 {
            sum += block_p as f64 * (tp as f64 / total as f64);
        }
        prev_tp = tp;
    }
    sum / p as f64
}

#[test]
fn a06_metric_oracles() {
    let start = Instant::now();
    // closed forms
    assert_eq!(auroc(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(ap(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0]).unwrap(), 1.0);
    let tied = [0.7; 10];
    let labels = [1, 0, 0, 0, 1, 0, 0, 1, 0, 0];
    assert_eq!(auroc(&tied, &labels).unwrap(), 0.5);
    assert_eq!(ap(&tied, &labels).unwrap(), 0.3);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..200 {
        let n = rng.gen_range(2..=200);
        // tie-heavy: draw from a small discrete grid half the time
        let discrete = case % 2 == 0;
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s = if discrete {
                rng.gen_range(0..4) as f64 * 0.5
            } else {
                rng.gen_range(-1.0..1.0)
            };
            scores.push(s);
            labels.push(u8::from(rng.gen_bool(0.35)));
        }
        if !labels.contains(&1) {
            labels[0] = 1;
        }
        if !labels.contains(&0) {
            labels[n - 1] = 0;
        }
        let a = auroc(&scores, &labels).unwrap();
        assert_eq!(a.to_bits(), auroc_oracle(&scores, &labels).to_bits(), "case {case}");
        let p = ap(&scores, &labels).unwrap();
        assert_eq!(p.to_bits(), ap_oracle(&scores, &labels).to_bits(), "case {case}");
    }
    pass("06 metric-oracles", start, 60.0);
}

fn plain_window(boxes: Vec<[f64; 4]>, conf: f64) -> Window {
    let n = boxes.len();
    Window {
        video_id: "v".into(),
        track_id: 1,
        part: 0,
        class_id: 0,
        start_frame: 0,
        boxes,
        confidences: vec![conf; n],
        pose: None,
    }
}

#[test]
fn a07_feature_invariants() {
    let start = Instant::now();

    // translation leaves everything outside the state group unchanged
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut boxes = Vec::new();
    let mut pos = (0.3, 0.5);
    for t in 0..16 {
        pos.0 += 0.004 + 0.001 * rng.gen_range(-1.0..1.0);
        pos.1 += 0.002 + 0.001 * rng.gen_range(-1.0..1.0);
        boxes.push([pos.0, pos.1, 0.08 + 0.0005 * t as f64, 0.15]);
    }
    let shifted: Vec<[f64; 4]> = boxes
        .iter()
        .map(|b| [b[0] + 0.07, b[1] - 0.05, b[2], b[3]])
        .collect();
    let fa = compute_features(&plain_window(boxes, 0.9)).unwrap();
    let fb = compute_features(&plain_window(shifted, 0.9)).unwrap();
    let state = FEATURE_GROUPS
        .iter()
        .find(|(name, _)| *name == "state")
        .map(|(_, r)| r.clone())
        .unwrap();
    for t in 0..16 {
        for j in 0..NUM_FEATURES {
            if !state.contains(&j) {
                let diff = (fa[[t, j]] - fb[[t, j]]).abs();
                assert!(diff < 1e-12, "feature {} moved by {diff}", FEATURE_NAMES[j]);
            }
        }
    }

    // jointly rescaling the resolution and the pixel boxes changes nothing
    let dir = tempfile::tempdir().unwrap();
    let features_at = |scale: f64, tag: &str| -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let dets: Vec<RawDetection> = (0..20)
            .map(|f| {
                let cx = (200.0 + 6.0 * f as f64 + rng.gen_range(-1.0..1.0)) * scale;
                let cy = (150.0 + 2.0 * f as f64 + rng.gen_range(-1.0..1.0)) * scale;
                RawDetection {
                    video_id: "v0".into(),
                    frame_index: f,
                    track_id: 1,
                    class_id: 0,
                    bbox: [cx, cy, 40.0 * scale, 90.0 * scale],
                    confidence: 0.9,
                }
            })
            .collect();
        let meta = VideoMeta {
            video_id: "v0".into(),
            frame_width: (856.0 * scale) as u32,
            frame_height: (480.0 * scale) as u32,
            frame_count: 20,
            fps: 24.0,
        };
        let tracks_path = dir.path().join(format!("tracks_{tag}.csv"));
        let meta_path = dir.path().join(format!("meta_{tag}.csv"));
        write_detections(&tracks_path, &dets).unwrap();
        write_meta(&meta_path, &[meta]).unwrap();
        let (tracks, _, _) = parse_tracks(&tracks_path, &meta_path).unwrap();
        assert_eq!(tracks.len(), 1);
        let windows = segment_track(&tracks[0], 16, 1);
        compute_features(&windows[0]).unwrap()
    };
    let base = features_at(1.0, "base");
    let doubled = features_at(2.0, "doubled");
    for t in 0..16 {
        for j in 0..NUM_FEATURES {
            let diff = (base[[t, j]] - doubled[[t, j]]).abs();
            assert!(diff < 1e-12, "feature {} moved by {diff}", FEATURE_NAMES[j]);
        }
    }

    // stationary box: exact constant vector
    let f = compute_features(&plain_window(vec![[0.4, 0.6, 0.1, 0.2]; 16], 0.9)).unwrap();
    for t in 0..16 {
        for (j, name) in FEATURE_NAMES.iter().enumerate() {
            let v = f[[t, j]];
            match *name {
                "c_x" => assert_eq!(v, 0.4),
                "c_y" => assert_eq!(v, 0.6),
                "w" => assert_eq!(v, 0.1),
                "h" => assert_eq!(v, 0.2),
                "area" => assert!((v - 0.02).abs() < 1e-15),
                "ratio" => assert_eq!(v, 0.1 / (0.2 + EPS)),
                "cos_theta" | "path_efficiency" => assert_eq!(v, 1.0),
                "conf" => assert_eq!(v, 0.9),
                _ => assert_eq!(v, 0.0, "feature {name} not exactly zero"),
            }
        }
    }
    pass("07 feature-invariants", start, 60.0);
}

#[test]
fn a08_end_to_end_benchmark() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    std::fs::create_dir_all(&train_dir).unwrap();
    std::fs::create_dir_all(&test_dir).unwrap();
    let train_scen = ScenarioConfig {
        seed: 11,
        videos: 20,
        frames: 160,
        objects: 3,
        with_pose: true,
        ..ScenarioConfig::default()
    };
    let test_scen = ScenarioConfig {
        seed: 12,
        videos: 10,
        frames: 240,
        objects: 3,
        anomaly_rate: 0.5,
        with_pose: true,
        ..ScenarioConfig::default()
    };
    write_scenario(&generate(&train_scen).unwrap(), &train_dir).unwrap();
    write_scenario(&generate(&test_scen).unwrap(), &test_dir).unwrap();

    let (train_windows, _) = load_windows(&train_dir, true, 16, 2);
    let (test_windows, test_metas) = load_windows(&test_dir, true, 16, 1);
    let gts = parse_labels(&test_dir.join("labels.csv")).unwrap();
    let anomalous: usize = gts
        .iter()
        .flat_map(|g| g.labels.iter())
        .map(|&l| l as usize)
        .sum();
    let total: usize = gts.iter().map(|g| g.labels.len()).sum();
    assert!((anomalous as f64 / total as f64 - 0.30).abs() < 0.05);

    let train_cfg = TrainConfig {
        epochs: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let eval_model = |config: ModelConfig| {
        let (model, _) = train(config, &train_cfg, &train_windows).unwrap();
        let segs = score_segments(&model, &test_windows).unwrap();
        let series = aggregate_videos(&segs, &test_metas, None);
        evaluate(&concat_frames(&series, &gts).unwrap()).unwrap()
    };
    let cfg_t = ModelConfig {
        k_traj: 6,
        k_pose: 6,
        hidden: 24,
        ..ModelConfig::default()
    };
    let report_t = eval_model(cfg_t.clone());
    let report_p = eval_model(ModelConfig {
        variant: Variant::P,
        ..cfg_t
    });
    println!(
        "acceptance 08 metrics: auroc_t={:.4} ap_t={:.4} auroc_p={:.4} ap_p={:.4}",
        report_t.auroc, report_t.ap, report_p.auroc, report_p.ap
    );
    assert!(report_t.auroc >= 0.90, "trajectory AUROC {:.4}", report_t.auroc);
    assert!(report_t.ap >= 0.85, "trajectory AP {:.4}", report_t.ap);
    assert!(
        (report_p.auroc - report_t.auroc).abs() <= 0.05,
        "pose variant drifted: {:.4} vs {:.4}",
        report_p.auroc,
        report_t.auroc
    );
    pass("08 end-to-end-benchmark", start, 300.0);
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_trajvad"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "trajvad {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn a09_confidence_ablation_is_negative() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let test_dir = dir.path().join("test");
    let p = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&[
        "synth", "--out", &p(&train_dir), "--seed", "31", "--videos", "10", "--frames", "160",
        "--objects", "3",
    ]);
    run_cli(&[
        "synth", "--out", &p(&test_dir), "--seed", "32", "--videos", "6", "--frames", "160",
        "--objects", "3", "--anomaly-rate", "0.5", "--anomalies", "confidence-collapse",
    ]);
    // sanity: the scenario really is confidence-collapse only
    assert!(ScenarioConfig {
        anomaly_rate: 0.5,
        anomalies: vec![AnomalyKind::ConfidenceCollapse],
        ..ScenarioConfig::default()
    }
    .validate()
    .is_ok());
    let out = run_cli(&[
        "ablate", "--group", "confidence",
        "--tracks", &p(&train_dir.join("tracks.csv")),
        "--meta", &p(&train_dir.join("meta.csv")),
        "--test-tracks", &p(&test_dir.join("tracks.csv")),
        "--test-meta", &p(&test_dir.join("meta.csv")),
        "--labels", &p(&test_dir.join("labels.csv")),
        "--epochs", "3", "--hidden", "16", "--stride", "2", "--seed", "7",
    ]);
    let delta: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("delta_auroc="))
        .expect("ablate prints delta_auroc")
        .parse()
        .unwrap();
    assert!(delta < 0.0, "removing confidence should hurt: delta {delta}");
    pass("09 confidence-ablation", start, 300.0);
}

#[test]
fn a10_pipeline_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = |p: &Path| p.to_str().unwrap().to_string();
    let run_pipeline = |tag: &str| -> std::path::PathBuf {
        let d = dir.path().join(tag);
        run_cli(&[
            "synth", "--out", &p(&d), "--seed", "41", "--videos", "6", "--frames", "96",
            "--objects", "2", "--anomaly-rate", "0.25", "--pose",
        ]);
        run_cli(&[
            "train",
            "--tracks", &p(&d.join("tracks.csv")),
            "--meta", &p(&d.join("meta.csv")),
            "--pose-file", &p(&d.join("pose.csv")),
            "--out", &p(&d.join("model.ckpt")),
            "--variant", "p", "--k", "2", "--k-pose", "2", "--hidden", "8",
            "--epochs", "2", "--stride", "4", "--seed", "3",
        ]);
        run_cli(&[
            "score",
            "--model", &p(&d.join("model.ckpt")),
            "--tracks", &p(&d.join("tracks.csv")),
            "--meta", &p(&d.join("meta.csv")),
            "--pose-file", &p(&d.join("pose.csv")),
            "--out", &p(&d.join("scores.csv")),
        ]);
        run_cli(&[
            "eval",
            "--scores", &p(&d.join("scores.csv")),
            "--labels", &p(&d.join("labels.csv")),
            "--out", &p(&d.join("report.txt")),
        ]);
        d
    };
    let a = run_pipeline("a");
    let b = run_pipeline("b");
    for file in ["tracks.csv", "model.ckpt", "scores.csv", "report.txt"] {
        let fa = std::fs::read(a.join(file)).unwrap();
        let fb = std::fs::read(b.join(file)).unwrap();
        assert_eq!(fa, fb, "{file} differs between identical-seed runs");
    }
    pass("10 pipeline-determinism", start, 300.0);
}
