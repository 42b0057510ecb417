//! Gradient-descent fine-tuning of low-rank adapters on a frozen model.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{encode_masked_prompt, AttentionWeights, CompiledModel, LoraAdapters, PromptBatch};
use crate::error::{Error, Result};
use crate::geometry::{haar_orthogonal_with, subspace_error_frames, CovarianceModel, OrthonormalBasis};
use crate::montecarlo::{derive_seed, FeatureSampler, MomentSampler, PromptDraw, Sampler, TaskSampler};

/// Update rule. Only plain gradient descent is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adapter_rank: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub prompt_length: usize,
    pub init_scale: f64,
    /// Task distribution of the fine-tuning prompts.
    pub finetune_cov: CovarianceModel,
    pub noise_sd: f64,
    pub base_seed: u64,
    /// Subspace the learned factors are compared against (U_⊥).
    pub target: OrthonormalBasis,
    /// Optional wider subspace (U_2r); compared with the top-rank(target) frames.
    pub secondary_target: Option<OrthonormalBasis>,
    pub snapshot_stride: usize,
    /// Stop once the error to `target` falls below this value.
    pub early_stop: Option<f64>,
    pub optimizer: Optimizer,
    pub sampler: Sampler,
}

impl TrainConfig {
    /// Defaults: lr 2e-3, batch 32, 20 000 iterations, init scale 0.01,
    /// snapshots every 100 steps, early stop at error 0.05.
    pub fn new(finetune_cov: CovarianceModel, target: OrthonormalBasis, prompt_length: usize, base_seed: u64) -> Self {
        Self {
            adapter_rank: target.rank(),
            learning_rate: 2e-3,
            batch_size: 32,
            iterations: 20_000,
            prompt_length,
            init_scale: 0.01,
            finetune_cov,
            noise_sd: 0.0,
            base_seed,
            target,
            secondary_target: None,
            snapshot_stride: 100,
            early_stop: Some(0.05),
            optimizer: Optimizer::GradientDescent,
            sampler: Sampler::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Configuration(what.to_string()));
        if self.adapter_rank == 0 {
            return bad("adapter_rank must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.iterations == 0 || self.prompt_length == 0 {
            return bad("batch_size, iterations and prompt_length must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be positive");
        }
        if self.adapter_rank < self.target.rank() {
            return bad("adapter_rank must be at least the target rank");
        }
        if let Some(sec) = &self.secondary_target {
            if sec.rank() > self.adapter_rank {
                return bad("secondary target rank exceeds adapter rank");
            }
        }
        self.finetune_cov.validate()
    }
}

/// Everything recorded during one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrajectory {
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
    /// Error to the target before each update, plus one final entry.
    pub target_errors: Vec<f64>,
    /// Error of the top-rank(secondary) frames to the secondary target.
    pub secondary_errors: Vec<f64>,
    /// (iteration, adapters) every `snapshot_stride` steps, starting at 0.
    pub snapshots: Vec<(usize, LoraAdapters)>,
    pub final_adapters: LoraAdapters,
    pub iterations_run: usize,
}

impl TrainTrajectory {
    pub fn final_target_error(&self) -> f64 {
        *self.target_errors.last().expect("at least one record")
    }

    pub fn final_secondary_error(&self) -> Option<f64> {
        self.secondary_errors.last().copied()
    }
}

/// Balanced start: B_1 = B_2 = [init_scale · V_k; 0] with V_k a Haar frame.
pub fn init_adapters(d: usize, k: usize, init_scale: f64, seed: u64) -> Result<LoraAdapters> {
    if k == 0 {
        return Err(Error::InvalidDimension("adapter rank must be at least 1".into()));
    }
    if k > d {
        return Err(Error::RankTooLarge { rank: k, dim: d, why: "k ≤ d" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = haar_orthogonal_with(d, &mut rng)?;
    let mut b = DMatrix::zeros(d + 1, k);
    b.view_mut((0, 0), (d, k)).copy_from(&(q.columns(0, k) * init_scale));
    LoraAdapters::new(b.clone(), b)
}

fn top_block(b: &DMatrix<f64>) -> DMatrix<f64> {
    b.rows(0, b.nrows() - 1).into_owned()
}

/// Singular values and left singular vectors, descending.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let vals = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut frame = DMatrix::zeros(u.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        frame.set_column(k, &u.column(i));
    }
    (vals, frame)
}

/// Descending singular values of the top d×k blocks of B_1 and B_2.
pub fn adapter_spectrum(adapters: &LoraAdapters) -> (Vec<f64>, Vec<f64>) {
    (sorted_svd(&top_block(&adapters.b1)).0, sorted_svd(&top_block(&adapters.b2)).0)
}

/// Top-r left singular frame of a factor's top block.
pub fn leading_frame(b: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let (vals, frame) = sorted_svd(&top_block(b));
    if r == 0 {
        return Err(Error::ZeroRank);
    }
    if r > vals.len() {
        return Err(Error::RankTooLarge { rank: r, dim: vals.len(), why: "r ≤ adapter rank" });
    }
    let scale = vals[0].max(f64::MIN_POSITIVE);
    let found = vals.iter().take_while(|v| **v > 1e-12 * scale && **v > 0.0).count();
    if found < r {
        return Err(Error::RankDeficient { found, wanted: r });
    }
    Ok(frame.columns(0, r).into_owned())
}

/// Max over both factors of the subspace error between their top-r frames
/// and `target`.
pub fn subspace_error_to(adapters: &LoraAdapters, target: &OrthonormalBasis, r: usize) -> Result<f64> {
    let e1 = subspace_error_frames(target.columns(), &leading_frame(&adapters.b1, r)?)?;
    let e2 = subspace_error_frames(target.columns(), &leading_frame(&adapters.b2, r)?)?;
    Ok(e1.max(e2))
}

pub fn verify_learned_vs_analytic(trained: &LoraAdapters, u_sperp: &OrthonormalBasis, r: usize) -> Result<f64> {
    subspace_error_to(trained, u_sperp, r)
}

/// Per-prompt inputs to the adapted predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSample {
    /// z_q = [x_q; 0].
    pub query: DVector<f64>,
    /// Z_Mᵀ Z_M W_V p.
    pub moment: DVector<f64>,
    pub target: f64,
    pub norm_len: usize,
}

impl AdapterSample {
    pub fn from_batch(weights: &AttentionWeights, batch: &PromptBatch) -> Self {
        let (z, q) = encode_masked_prompt(batch);
        let moment = z.transpose() * (&z * (&weights.wv * &weights.p));
        Self { query: q, moment, target: batch.y_query, norm_len: batch.norm_len }
    }

    fn from_draw(draw: PromptDraw, m: usize) -> Self {
        let d = draw.x_query.len();
        let mut query = DVector::zeros(d + 1);
        query.rows_mut(0, d).copy_from(&draw.x_query);
        Self { query, moment: draw.moment, target: draw.y_query, norm_len: m }
    }
}

/// Mean squared error over `samples` and its gradients with respect to B_1, B_2.
///
/// With ŷ = (qᵀK₀u + (B_2ᵀq)ᵀ(B_1ᵀu)) / m and r = ŷ − y:
/// ∂/∂B_2 = (2r/m) q (B_1ᵀu)ᵀ and ∂/∂B_1 = (2r/m) u (B_2ᵀq)ᵀ, averaged.
pub fn loss_and_gradient(
    base_kernel: &DMatrix<f64>,
    adapters: &LoraAdapters,
    samples: &[AdapterSample],
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let mut g1 = DMatrix::zeros(adapters.b1.nrows(), adapters.b1.ncols());
    let mut g2 = g1.clone();
    let mut loss = 0.0;
    for s in samples {
        let m = s.norm_len as f64;
        let left = adapters.b2.tr_mul(&s.query);
        let right = adapters.b1.tr_mul(&s.moment);
        let pred = (s.query.dot(&(base_kernel * &s.moment)) + left.dot(&right)) / m;
        let resid = pred - s.target;
        loss += resid * resid;
        let coef = 2.0 * resid / m;
        g2.ger(coef, &s.query, &right, 1.0);
        g1.ger(coef, &s.moment, &left, 1.0);
    }
    let inv = 1.0 / samples.len().max(1) as f64;
    (loss * inv, g1 * inv, g2 * inv)
}

/// Mean squared error of the adapted model on explicit prompts.
pub fn batch_loss(weights: &AttentionWeights, adapters: &LoraAdapters, batches: &[PromptBatch]) -> Result<f64> {
    let mut acc = 0.0;
    for b in batches {
        let pred = crate::attention::predict_lora(weights, adapters, b)?;
        acc += (pred - b.y_query).powi(2);
    }
    Ok(acc / batches.len().max(1) as f64)
}

/// Analytic gradients of [`batch_loss`].
pub fn batch_gradient(
    weights: &AttentionWeights,
    adapters: &LoraAdapters,
    batches: &[PromptBatch],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let model = CompiledModel::new(weights, None)?;
    let samples: Vec<_> = batches.iter().map(|b| AdapterSample::from_batch(weights, b)).collect();
    let (_, g1, g2) = loss_and_gradient(&model.kernel, adapters, &samples);
    Ok((g1, g2))
}

/// Fine-tunes B_1, B_2 on freshly sampled prompts with the pretrained
/// weights frozen.
pub fn train_lora(pretrained: &AttentionWeights, cfg: &TrainConfig) -> Result<TrainTrajectory> {
    cfg.validate()?;
    let d = pretrained.dim();
    if cfg.finetune_cov.ambient_dim() != d || cfg.target.ambient_dim() != d {
        return Err(Error::ShapeMismatch("fine-tuning covariance or target does not match the model".into()));
    }
    let model = CompiledModel::new(pretrained, None)?;
    let sampler = MomentSampler::new(
        TaskSampler::from_model(&cfg.finetune_cov)?,
        FeatureSampler::isotropic(),
        cfg.noise_sd,
        cfg.prompt_length,
        cfg.sampler,
    )?;
    let r = cfg.target.rank();
    let mut adapters = init_adapters(d, cfg.adapter_rank, cfg.init_scale, cfg.base_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.base_seed, 1));

    let mut traj = TrainTrajectory {
        losses: Vec::with_capacity(cfg.iterations),
        target_errors: Vec::with_capacity(cfg.iterations + 1),
        secondary_errors: Vec::new(),
        snapshots: Vec::new(),
        final_adapters: adapters.clone(),
        iterations_run: 0,
    };
    let record = |traj: &mut TrainTrajectory, ad: &LoraAdapters| -> Result<f64> {
        let e = subspace_error_to(ad, &cfg.target, r)?;
        traj.target_errors.push(e);
        if let Some(sec) = &cfg.secondary_target {
            traj.secondary_errors.push(subspace_error_to(ad, sec, sec.rank())?);
        }
        Ok(e)
    };

    let mut samples = Vec::with_capacity(cfg.batch_size);
    for it in 0..cfg.iterations {
        if it % cfg.snapshot_stride == 0 {
            traj.snapshots.push((it, adapters.clone()));
        }
        let err = record(&mut traj, &adapters)?;
        if cfg.early_stop.is_some_and(|tol| err < tol) {
            traj.target_errors.pop();
            if cfg.secondary_target.is_some() {
                traj.secondary_errors.pop();
            }
            break;
        }
        samples.clear();
        for _ in 0..cfg.batch_size {
            samples.push(AdapterSample::from_draw(sampler.draw(&model.value, &mut rng), cfg.prompt_length));
        }
        let (loss, g1, g2) = loss_and_gradient(&model.kernel, &adapters, &samples);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        traj.losses.push(loss);
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                adapters.b1 -= g1 * cfg.learning_rate;
                adapters.b2 -= g2 * cfg.learning_rate;
            }
        }
        if !(adapters.b1.iter().all(|v| v.is_finite()) && adapters.b2.iter().all(|v| v.is_finite())) {
            return Err(Error::Divergence { iteration: it });
        }
        traj.iterations_run = it + 1;
    }
    record(&mut traj, &adapters)?;
    traj.final_adapters = adapters;
    Ok(traj)
}
