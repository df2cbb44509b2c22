//! The full learnable model: trajectory flow, optional pose flow, class
//! embedding table and standardization statistics, plus the configuration
//! record that is serialized into every checkpoint.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use super::Flow;
use crate::error::{Error, Result};
use crate::features::NUM_FEATURES;
use crate::preprocess::Standardizer;

/// Pose feature width: 17 keypoints, (x, y) each.
pub const POSE_DIM: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Trajectory-only scoring.
    T,
    /// Trajectory plus reliability-gated pose branch.
    P,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(Variant::T),
            "p" => Ok(Variant::P),
            other => Err(format!("unknown variant {other:?}, expected 't' or 'p'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Window length T.
    pub window_len: usize,
    /// Coupling layers in the trajectory flow.
    pub k_traj: usize,
    /// Coupling layers in the pose flow (variant P).
    pub k_pose: usize,
    /// Class embedding dimension E.
    pub embed_dim: usize,
    /// Number of object classes C.
    pub num_classes: usize,
    /// Prior mean offset.
    pub mu0: f64,
    /// Pose weight in the combined score.
    pub lambda: f64,
    /// Per-feature keep mask over the fixed 27-feature order.
    pub feature_mask: Vec<bool>,
    /// Hidden width of coupling subnets.
    pub hidden: usize,
    /// Scale clamp bound.
    pub s_max: f64,
    /// Class id whose tracks may use the pose branch.
    pub person_class: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::T,
            window_len: 16,
            k_traj: 6,
            k_pose: 18,
            embed_dim: 3,
            num_classes: 80,
            mu0: 3.0,
            lambda: 1.0,
            feature_mask: vec![true; NUM_FEATURES],
            hidden: 64,
            s_max: 2.0,
            person_class: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_mask.len() != NUM_FEATURES {
            return Err(Error::Invalid(format!(
                "feature mask must have {NUM_FEATURES} entries, got {}",
                self.feature_mask.len()
            )));
        }
        if !self.feature_mask.iter().any(|&m| m) {
            return Err(Error::Invalid("feature mask removes every feature".into()));
        }
        if self.window_len < 2 {
            return Err(Error::Invalid("window length must be >= 2".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Invalid("lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn d_effective(&self) -> usize {
        self.feature_mask.iter().filter(|&&m| m).count()
    }

    pub fn traj_width(&self) -> usize {
        self.d_effective() + self.embed_dim
    }
}

/// Flat gradient buffer matching a model's parameter layout.
pub struct Gradients {
    pub data: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &FlowModel) -> Self {
        Gradients {
            data: model.store.zeros_like(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.data.iter_mut() {
            *g *= factor;
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub traj: Flow,
    pub pose: Option<Flow>,
    pub embedding: super::TensorId,
    pub standardizer: Standardizer,
}

impl FlowModel {
    pub fn new(config: ModelConfig, standardizer: Standardizer, seed: u64) -> Result<FlowModel> {
        config.validate()?;
        let mut store = ParamStore::new();
        let embedding = store.alloc("embedding.table", &[config.num_classes, config.embed_dim]);
        let w = config.traj_width();
        let traj = Flow::new(&mut store, "", w, config.k_traj, config.hidden, config.s_max, None);
        let pose = match config.variant {
            Variant::T => None,
            Variant::P => Some(Flow::new(
                &mut store,
                "pose.",
                POSE_DIM,
                config.k_pose,
                config.hidden,
                config.s_max,
                Some(w),
            )),
        };
        let mut model = FlowModel {
            config,
            store,
            traj,
            pose,
            embedding,
            standardizer,
        };
        model.init_params(seed);
        Ok(model)
    }

    /// Seeded parameter initialization: embeddings are small normal draws,
    /// inner convolutions fan-in-scaled uniform, final convolutions zero so
    /// every coupling starts as the identity.
    fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs: Vec<_> = self.store.specs().to_vec();
        for spec in &specs {
            let kind = classify(&spec.name);
            let shape = spec.shape.clone();
            let data = &mut self.store.data_mut()[spec.offset..spec.offset + spec.len];
            match kind {
                ParamKind::Embedding => {
                    for v in data.iter_mut() {
                        *v = 0.1 * standard_normal(&mut rng);
                    }
                }
                ParamKind::InnerWeight => {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in data.iter_mut() {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
                ParamKind::Zero => {
                    for v in data.iter_mut() {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    pub fn d_effective(&self) -> usize {
        self.config.d_effective()
    }

    pub fn traj_width(&self) -> usize {
        self.config.traj_width()
    }

    pub fn embedding_row(&self, class_id: usize) -> Result<&[f64]> {
        if class_id >= self.config.num_classes {
            return Err(Error::ClassOutOfRange(class_id, self.config.num_classes));
        }
        let e = self.config.embed_dim;
        Ok(&self.store.get(self.embedding)[class_id * e..(class_id + 1) * e])
    }

    /// Standardize a raw `T x 27` feature matrix (dropping masked columns)
    /// and append the class embedding row, yielding the row-major flow
    /// input of width `d_effective + E`.
    pub fn assemble_input(&self, features: &Array2<f64>, class_id: usize) -> Result<Vec<f64>> {
        let std = self.standardizer.apply(features)?;
        let emb = self.embedding_row(class_id)?.to_vec();
        let t_len = std.nrows();
        let d = std.ncols();
        let w = d + emb.len();
        let mut x = vec![0.0; t_len * w];
        for t in 0..t_len {
            for j in 0..d {
                x[t * w + j] = std[[t, j]];
            }
            x[t * w + d..(t + 1) * w].copy_from_slice(&emb);
        }
        Ok(x)
    }

    pub fn traj_ll(&self, x: &[f64], t_len: usize) -> Result<(f64, Vec<f64>)> {
        self.traj
            .log_likelihood(&self.store, x, t_len, None, self.config.mu0)
    }

    /// Eq. 5: segment-normalized NLL; both the training loss and the
    /// trajectory-only anomaly score.
    pub fn traj_nll(&self, x: &[f64], t_len: usize) -> Result<f64> {
        let (ll, _) = self.traj_ll(x, t_len)?;
        Ok(-ll / (t_len as f64 * self.traj_width() as f64))
    }

    /// Pose log-likelihood conditioned on the mean-pooled trajectory latent.
    pub fn pose_ll(&self, pose_x: &[f64], t_len: usize, z_traj: &[f64]) -> Result<f64> {
        let flow = self
            .pose
            .as_ref()
            .ok_or_else(|| Error::Invalid("model has no pose flow".into()))?;
        let cond = super::mean_pool(z_traj, t_len, self.traj_width());
        let (ll, _) = flow.log_likelihood(&self.store, pose_x, t_len, Some(&cond), self.config.mu0)?;
        Ok(ll)
    }

    /// Adds the embedding-row gradient implied by a flow-input gradient.
    pub fn accumulate_embedding_grad(
        &self,
        grad_x: &[f64],
        t_len: usize,
        class_id: usize,
        grads: &mut [f64],
    ) {
        let e = self.config.embed_dim;
        let d = self.d_effective();
        let w = d + e;
        let off = self.store.spec(self.embedding).offset + class_id * e;
        for t in 0..t_len {
            for j in 0..e {
                grads[off + j] += grad_x[t * w + d + j];
            }
        }
    }
}

enum ParamKind {
    Embedding,
    InnerWeight,
    Zero,
}

fn classify(name: &str) -> ParamKind {
    if name == "embedding.table" {
        ParamKind::Embedding
    } else if name.contains("actnorm") || name.ends_with(".bias") {
        ParamKind::Zero
    } else if name.contains(".cond.") {
        ParamKind::InnerWeight
    } else if name.ends_with(".2.weight") {
        // final convolution of each subnet: identity start
        ParamKind::Zero
    } else {
        ParamKind::InnerWeight
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let v = r * (2.0 * std::f64::consts::PI * u2).cos();
        if v.is_finite() {
            return v;
        }
    }
}
