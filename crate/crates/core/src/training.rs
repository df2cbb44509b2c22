//! Mini-batch NLL training with data-dependent ActNorm initialization,
//! Adam-style updates under a cosine learning-rate schedule, global-norm
//! gradient clipping, and fully deterministic seeded shuffling.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{compute_features, group_mask};
use crate::flow::{mean_pool, FlowModel, Gradients, ModelConfig, Variant, POSE_DIM};
use crate::pose::{compute_gate, normalize_pose};
use crate::preprocess::{Standardizer, Window};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate of the cosine schedule.
    pub lr: f64,
    /// Final learning rate of the cosine schedule.
    pub lr_final: f64,
    /// Global gradient-norm clip bound.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 8,
            lr: 1e-2,
            lr_final: 1e-4,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

/// One training segment, already standardized and pose-prepared.
#[derive(Debug, Clone)]
pub struct TrainItem {
    /// `t_len x d_effective` standardized trajectory features.
    pub features: Array2<f64>,
    pub class_id: usize,
    /// Pose-flow input and gate value, for gated variant-P segments.
    pub pose: Option<(Vec<f64>, f64)>,
    pub provenance: String,
}

fn assemble(model: &FlowModel, feats: &Array2<f64>, class_id: usize) -> Result<Vec<f64>> {
    let emb = model.embedding_row(class_id)?.to_vec();
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
    Ok(x)
}

/// Per-segment loss: the variant-appropriate normalized NLL.
fn item_loss(model: &FlowModel, item: &TrainItem) -> Result<f64> {
    let x = assemble(model, &item.features, item.class_id)?;
    let t = item.features.nrows();
    let w = model.traj_width();
    let (ll_t, z) = model.traj_ll(&x, t)?;
    match &item.pose {
        Some((px, g)) if *g > 0.0 => {
            let flow = model.pose.as_ref().ok_or_else(|| {
                Error::Invalid("pose item on a trajectory-only model".into())
            })?;
            let cond = mean_pool(&z, t, w);
            let (ll_p, _) =
                flow.log_likelihood(&model.store, px, t, Some(&cond), model.config.mu0)?;
            Ok(crate::pose::combined_score(
                ll_t,
                Some(ll_p),
                *g,
                model.config.lambda,
                t,
                w,
                POSE_DIM,
            ))
        }
        _ => Ok(-ll_t / (t as f64 * w as f64)),
    }
}

/// Mean loss over a set of items under the current parameters.
pub fn mean_loss(model: &FlowModel, items: &[TrainItem]) -> Result<f64> {
    let mut sum = 0.0;
    for item in items {
        sum += item_loss(model, item)?;
    }
    Ok(sum / items.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }
}

/// Trains an already constructed model in place on prepared items and
/// returns the mean loss per epoch.
pub fn train_on_inputs(
    model: &mut FlowModel,
    items: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::Invalid("training needs at least one segment".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Invalid("batch size must be at least 2".into()));
    }
    if items.len() < cfg.batch_size {
        return Err(Error::Invalid(format!(
            "training needs at least one full batch ({} segments, got {})",
            cfg.batch_size,
            items.len()
        )));
    }
    let n = items.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let mut adam = Adam::new(model.store.data().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_6A76_6164_5F74));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    // pose ActNorm init may need to accumulate across batches until it has
    // seen at least two gated segments
    let mut pose_init_rows: Vec<f64> = Vec::new();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            // data-dependent ActNorm initialization from the first batch
            if !model.traj.actnorm.initialized {
                let mut rows = Vec::new();
                for &i in batch {
                    rows.extend(assemble(model, &items[i].features, items[i].class_id)?);
                }
                let w = model.traj_width();
                let m = &mut *model;
                m.traj
                    .actnorm
                    .init_from_data(&mut m.store, &rows, rows.len() / w);
            }
            let pose_needs_init = model
                .pose
                .as_ref()
                .map(|p| !p.actnorm.initialized)
                .unwrap_or(false);
            if pose_needs_init {
                for &i in batch {
                    if let Some((px, g)) = &items[i].pose {
                        if *g > 0.0 {
                            pose_init_rows.extend_from_slice(px);
                        }
                    }
                }
                if pose_init_rows.len() >= 2 * POSE_DIM {
                    let m = &mut *model;
                    if let Some(pf) = m.pose.as_mut() {
                        pf.actnorm.init_from_data(
                            &mut m.store,
                            &pose_init_rows,
                            pose_init_rows.len() / POSE_DIM,
                        );
                    }
                    pose_init_rows = Vec::new();
                }
            }

            let mut grads = Gradients::zeros(model);
            let inv_batch = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let item = &items[i];
                let x = assemble(model, &item.features, item.class_id)?;
                let t = item.features.nrows();
                let w = model.traj_width();
                let g = match &item.pose {
                    Some((_, g)) => *g,
                    None => 0.0,
                };
                let denom = t as f64 * (w as f64 + POSE_DIM as f64 * g);
                let scale_t = -inv_batch / denom;
                let (ll_t, grad_x) = model.traj.backward_ll(
                    &model.store,
                    &x,
                    t,
                    None,
                    model.config.mu0,
                    scale_t,
                    &mut grads.data,
                )?;
                model.accumulate_embedding_grad(&grad_x, t, item.class_id, &mut grads.data);
                let mut loss = -ll_t / denom;
                if g > 0.0 {
                    let flow = model.pose.as_ref().ok_or_else(|| {
                        Error::Invalid("pose item on a trajectory-only model".into())
                    })?;
                    // conditioning is stop-gradient: recompute the latent
                    // without tracking it
                    let (z, _) = model.traj.forward(&model.store, &x, t, None)?;
                    let cond = mean_pool(&z, t, w);
                    let scale_p = -inv_batch * model.config.lambda * g / denom;
                    let (ll_p, _) = flow.backward_ll(
                        &model.store,
                        px_of(item),
                        t,
                        Some(&cond),
                        model.config.mu0,
                        scale_p,
                        &mut grads.data,
                    )?;
                    loss -= model.config.lambda * g * ll_p / denom;
                }
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss for segment {}",
                        item.provenance
                    )));
                }
                batch_loss += loss;
            }
            epoch_sum += batch_loss;

            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let progress = step as f64 / total_steps as f64;
            let lr = cfg.lr_final
                + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());
            adam.step(model.store.data_mut(), &grads.data, lr);
            step += 1;
        }
        epoch_losses.push(epoch_sum / n as f64);
    }
    Ok(epoch_losses)
}

fn px_of(item: &TrainItem) -> &[f64] {
    &item.pose.as_ref().expect("gated item carries pose input").0
}

/// Fits the standardizer on every window and builds training items,
/// including pose inputs for gated variant-P windows.
pub fn prepare_items(
    config: &ModelConfig,
    windows: &[Window],
) -> Result<(Standardizer, Vec<TrainItem>)> {
    if windows.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let mut raw = Vec::with_capacity(windows.len());
    let mut total_rows = 0;
    for w in windows {
        let f = compute_features(w)?;
        total_rows += f.nrows();
        raw.push(f);
    }
    let d = crate::features::NUM_FEATURES;
    let mut stacked = Array2::zeros((total_rows, d));
    let mut r = 0;
    for f in &raw {
        for row in f.rows() {
            for j in 0..d {
                stacked[[r, j]] = row[j];
            }
            r += 1;
        }
    }
    let standardizer = Standardizer::fit(&stacked, config.feature_mask.clone())?;

    let mut items = Vec::with_capacity(windows.len());
    for (w, f) in windows.iter().zip(raw.iter()) {
        let feats = standardizer.apply(f)?;
        let pose = match config.variant {
            Variant::T => None,
            Variant::P => {
                let g = compute_gate(w, config.person_class).value();
                if g > 0.0 {
                    Some((normalize_pose(w).features, g))
                } else {
                    None
                }
            }
        };
        items.push(TrainItem {
            features: feats,
            class_id: w.class_id,
            pose,
            provenance: format!("{}/track{}.{}@{}", w.video_id, w.track_id, w.part, w.start_frame),
        });
    }
    Ok((standardizer, items))
}

/// Full training entry point: fit statistics, build the model, train.
/// Returns the model and the per-epoch mean losses.
pub fn train(
    config: ModelConfig,
    cfg: &TrainConfig,
    windows: &[Window],
) -> Result<(FlowModel, Vec<f64>)> {
    let (standardizer, items) = prepare_items(&config, windows)?;
    let mut model = FlowModel::new(config, standardizer, cfg.seed)?;
    let losses = train_on_inputs(&mut model, &items, cfg)?;
    Ok((model, losses))
}

/// Leave-one-group-out training: drops one named feature group.
pub fn train_ablation(
    mut config: ModelConfig,
    cfg: &TrainConfig,
    windows: &[Window],
    group: &str,
) -> Result<(FlowModel, Vec<f64>)> {
    config.feature_mask = group_mask(group)
        .ok_or_else(|| Error::Invalid(format!("unknown feature group {group:?}")))?;
    train(config, cfg, windows)
}
