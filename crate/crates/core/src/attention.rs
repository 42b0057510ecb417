//! Single-layer linear attention on masked regression prompts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::OrthonormalBasis;
use crate::linalg::{spectral_map, sym_eigen_sorted, symmetrize};

/// W_Q, W_K, W_V ∈ R^{(d+1)×(d+1)} and the readout p ∈ R^{d+1}.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub p: DVector<f64>,
}

impl AttentionWeights {
    /// Feature dimension d (the matrices are (d+1)×(d+1)).
    pub fn dim(&self) -> usize {
        self.p.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.p.len();
        if s < 2 {
            return Err(Error::InvalidDimension("readout must have length d+1 ≥ 2".into()));
        }
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if m.shape() != (s, s) {
                return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected ({s}, {s})", m.shape())));
            }
        }
        Ok(())
    }

    /// Block layout W_Q = [[A, 0], [0, 0]], W_K = W_V = I, p = e_{d+1}.
    pub fn from_kernel(a: &DMatrix<f64>) -> Self {
        let d = a.nrows();
        let mut wq = DMatrix::zeros(d + 1, d + 1);
        wq.view_mut((0, 0), (d, d)).copy_from(a);
        let mut p = DVector::zeros(d + 1);
        p[d] = 1.0;
        Self { wq, wk: DMatrix::identity(d + 1, d + 1), wv: DMatrix::identity(d + 1, d + 1), p }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            wq: DMatrix::zeros(d + 1, d + 1),
            wk: DMatrix::zeros(d + 1, d + 1),
            wv: DMatrix::zeros(d + 1, d + 1),
            p: DVector::zeros(d + 1),
        }
    }
}

/// Closed-form optimal weights together with the d×d matrix A and M_s.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalWeights {
    pub weights: AttentionWeights,
    pub a: DMatrix<f64>,
    pub m_s: f64,
}

/// Low-rank adapters B_1, B_2 ∈ R^{(d+1)×k}; the kernel gains B_2 B_1ᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapters {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

impl LoraAdapters {
    pub fn new(b1: DMatrix<f64>, b2: DMatrix<f64>) -> Result<Self> {
        if b1.shape() != b2.shape() {
            return Err(Error::ShapeMismatch(format!("b1 {:?} vs b2 {:?}", b1.shape(), b2.shape())));
        }
        if b1.ncols() == 0 {
            return Err(Error::InvalidDimension("adapter rank must be at least 1".into()));
        }
        Ok(Self { b1, b2 })
    }

    pub fn zeros(d: usize, k: usize) -> Self {
        Self { b1: DMatrix::zeros(d + 1, k), b2: DMatrix::zeros(d + 1, k) }
    }

    pub fn rank(&self) -> usize {
        self.b1.ncols()
    }

    /// B_2 B_1ᵀ.
    pub fn update(&self) -> DMatrix<f64> {
        &self.b2 * self.b1.transpose()
    }
}

/// In-context examples and a query with its hidden label.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBatch {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_query: DVector<f64>,
    pub y_query: f64,
    pub norm_len: usize,
}

impl PromptBatch {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, x_query: DVector<f64>, y_query: f64) -> Result<Self> {
        if x.nrows() != y.len() || x.ncols() != x_query.len() {
            return Err(Error::ShapeMismatch(format!(
                "x {:?}, y {}, x_query {}",
                x.shape(),
                y.len(),
                x_query.len()
            )));
        }
        let norm_len = x.nrows();
        Ok(Self { x, y, x_query, y_query, norm_len })
    }

    pub fn dim(&self) -> usize {
        self.x_query.len()
    }
}

/// Z_M with rows [x_i; y_i] followed by a zero row, and z_q = [x_q; 0].
pub fn encode_masked_prompt(batch: &PromptBatch) -> (DMatrix<f64>, DVector<f64>) {
    let (m, d) = batch.x.shape();
    let mut z = DMatrix::zeros(m + 1, d + 1);
    z.view_mut((0, 0), (m, d)).copy_from(&batch.x);
    z.view_mut((0, d), (m, 1)).copy_from(&batch.y);
    let mut q = DVector::zeros(d + 1);
    q.rows_mut(0, d).copy_from(&batch.x_query);
    (z, q)
}

fn check_batch(weights_dim: usize, batch: &PromptBatch) -> Result<()> {
    if batch.norm_len == 0 {
        return Err(Error::EmptyPrompt);
    }
    if batch.dim() != weights_dim {
        return Err(Error::ShapeMismatch(format!("weights for d={weights_dim}, batch has d={}", batch.dim())));
    }
    Ok(())
}

fn evaluate_kernel(kernel: &DMatrix<f64>, wv: &DMatrix<f64>, p: &DVector<f64>, batch: &PromptBatch) -> f64 {
    let (z, q) = encode_masked_prompt(batch);
    let values = &z * (wv * p);
    let moment = z.transpose() * values;
    q.dot(&(kernel * moment)) / batch.norm_len as f64
}

/// (1/m) z_qᵀ W_Q W_Kᵀ Z_Mᵀ Z_M W_V p.
pub fn predict_full(weights: &AttentionWeights, batch: &PromptBatch) -> Result<f64> {
    weights.validate()?;
    check_batch(weights.dim(), batch)?;
    let kernel = &weights.wq * weights.wk.transpose();
    Ok(evaluate_kernel(&kernel, &weights.wv, &weights.p, batch))
}

/// (1/m) x_qᵀ A Xᵀ y.
pub fn predict_reduced(a: &DMatrix<f64>, batch: &PromptBatch) -> Result<f64> {
    if a.shape() != (batch.dim(), batch.dim()) {
        return Err(Error::ShapeMismatch(format!("A is {:?}, batch has d={}", a.shape(), batch.dim())));
    }
    check_batch(batch.dim(), batch)?;
    let xty = batch.x.transpose() * &batch.y;
    Ok(batch.x_query.dot(&(a * xty)) / batch.norm_len as f64)
}

/// Adapted model: kernel W_Q W_Kᵀ + B_2 B_1ᵀ.
pub fn predict_lora(weights: &AttentionWeights, adapters: &LoraAdapters, batch: &PromptBatch) -> Result<f64> {
    weights.validate()?;
    check_batch(weights.dim(), batch)?;
    if adapters.b1.nrows() != weights.p.len() || adapters.b2.shape() != adapters.b1.shape() {
        return Err(Error::ShapeMismatch(format!(
            "adapters {:?} for weights of size {}",
            adapters.b1.shape(),
            weights.p.len()
        )));
    }
    let kernel = &weights.wq * weights.wk.transpose() + adapters.update();
    Ok(evaluate_kernel(&kernel, &weights.wv, &weights.p, batch))
}

fn noise_level(sigma: &DMatrix<f64>, noise_sd: f64, n: usize) -> Result<f64> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!("covariance is {:?}", sigma.shape())));
    }
    if n == 0 {
        return Err(Error::Domain("training prompt length must be at least 1".into()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Domain(format!("noise_sd = {noise_sd}")));
    }
    let (vals, _) = sym_eigen_sorted(sigma);
    let top = vals[vals.len() - 1];
    if !(vals[0] > 1e-14 * top.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularCovariance);
    }
    Ok(sigma.trace() + noise_sd * noise_sd)
}

/// Left-hand matrix (n+1)/n Σ + M_s/n I, shared by task and feature cases.
fn regularized(sigma: &DMatrix<f64>, m_s: f64, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let d = sigma.nrows();
    sigma * ((nf + 1.0) / nf) + DMatrix::<f64>::identity(d, d) * (m_s / nf)
}

fn spd_solve(lhs: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = lhs.cholesky().ok_or(Error::SingularCovariance)?;
    Ok(symmetrize(&chol.solve(rhs)))
}

/// A = ((n+1)/n I + M_s/n Σ⁻¹)⁻¹, solved as ((n+1)/n Σ + M_s/n I)⁻¹ Σ.
pub fn optimal_weights_task(sigma_train: &DMatrix<f64>, noise_sd: f64, n: usize) -> Result<OptimalWeights> {
    let m_s = noise_level(sigma_train, noise_sd, n)?;
    let a = spd_solve(regularized(sigma_train, m_s, n), sigma_train)?;
    Ok(OptimalWeights { weights: AttentionWeights::from_kernel(&a), a, m_s })
}

/// Task-case A through the eigenvalues of Σ: λ ↦ nλ / ((n+1)λ + M_s).
pub fn optimal_kernel_eigen(sigma_train: &DMatrix<f64>, m_s: f64, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    spectral_map(sigma_train, |l| nf * l / ((nf + 1.0) * l + m_s))
}

/// Optimal weights for a mixture; A depends only on the mixture second moment.
pub fn optimal_weights_mixture(
    model: &crate::geometry::CovarianceModel,
    noise_sd: f64,
    n: usize,
) -> Result<OptimalWeights> {
    if !matches!(model, crate::geometry::CovarianceModel::MixtureK { .. }) {
        return Err(Error::Configuration("optimal_weights_mixture needs a MixtureK model".into()));
    }
    let sigma = crate::geometry::build_covariance(model)?;
    optimal_weights_task(&sigma, noise_sd, n)
}

/// Non-isotropic features with w ~ N(0, I): A = ((n+1)/n Σ + M_s/n I)⁻¹.
pub fn optimal_weights_feature(sigma_feat: &DMatrix<f64>, noise_sd: f64, n: usize) -> Result<OptimalWeights> {
    let m_s = noise_level(sigma_feat, noise_sd, n)?;
    let d = sigma_feat.nrows();
    let a = spd_solve(regularized(sigma_feat, m_s, n), &DMatrix::identity(d, d))?;
    Ok(OptimalWeights { weights: AttentionWeights::from_kernel(&a), a, m_s })
}

/// Which Λ_r to use for the analytic adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaChoice {
    /// Λ_r = ν₁ − ν₂, equalizing both r-blocks of the adapted kernel.
    #[default]
    Corrected,
    /// n(1+ε) / ((n+1)ε + M_s), kept for comparison.
    AsPrinted,
}

/// ν₁ = n(1+ε)/((n+1)(1+ε)+M_s) and ν₂ = nε/((n+1)ε+M_s).
pub fn block_eigenvalues(n: usize, eps: f64, m_s: f64) -> (f64, f64) {
    let nf = n as f64;
    let nu1 = nf * (1.0 + eps) / ((nf + 1.0) * (1.0 + eps) + m_s);
    let nu2 = nf * eps / ((nf + 1.0) * eps + m_s);
    (nu1, nu2)
}

pub fn lora_lambda(n: usize, eps: f64, m_s: f64, choice: LambdaChoice) -> f64 {
    match choice {
        LambdaChoice::Corrected => {
            let (nu1, nu2) = block_eigenvalues(n, eps, m_s);
            nu1 - nu2
        }
        LambdaChoice::AsPrinted => {
            let nf = n as f64;
            nf * (1.0 + eps) / ((nf + 1.0) * eps + m_s)
        }
    }
}

/// B_1 = B_2 = [U_⊥ Λ_r^{1/2}; 0] with the corrected Λ_r.
pub fn lora_analytic_adapters(u_sperp: &OrthonormalBasis, n: usize, eps: f64, m_s: f64) -> Result<LoraAdapters> {
    lora_analytic_adapters_with(u_sperp, n, eps, m_s, LambdaChoice::Corrected)
}

pub fn lora_analytic_adapters_with(
    u_sperp: &OrthonormalBasis,
    n: usize,
    eps: f64,
    m_s: f64,
    choice: LambdaChoice,
) -> Result<LoraAdapters> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    let lambda = lora_lambda(n, eps, m_s, choice);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidScale(format!("Λ_r = {lambda}")));
    }
    let (d, r) = u_sperp.columns().shape();
    let mut b = DMatrix::zeros(d + 1, r);
    b.view_mut((0, 0), (d, r)).copy_from(&(u_sperp.columns() * lambda.sqrt()));
    LoraAdapters::new(b.clone(), b)
}

/// Â = A + top d×d block of B_2 B_1ᵀ.
pub fn adapted_kernel(a: &DMatrix<f64>, adapters: &LoraAdapters) -> DMatrix<f64> {
    let d = a.nrows();
    a + adapters.update().view((0, 0), (d, d))
}

/// A model reduced to the pieces a streaming evaluator needs:
/// the kernel K = W_Q W_Kᵀ (+ B_2 B_1ᵀ) and the value direction c = W_V p.
/// Prediction is z_qᵀ K Z_Mᵀ Z_M c / m.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub kernel: DMatrix<f64>,
    pub value: DVector<f64>,
}

impl CompiledModel {
    pub fn new(weights: &AttentionWeights, adapters: Option<&LoraAdapters>) -> Result<Self> {
        weights.validate()?;
        let mut kernel = &weights.wq * weights.wk.transpose();
        if let Some(ad) = adapters {
            if ad.b1.nrows() != weights.p.len() {
                return Err(Error::ShapeMismatch("adapter rows must equal d+1".into()));
            }
            kernel += ad.update();
        }
        Ok(Self { kernel, value: &weights.wv * &weights.p })
    }

    pub fn dim(&self) -> usize {
        self.value.len() - 1
    }

    /// Prediction from x_q and the moment u = Z_Mᵀ Z_M c.
    pub fn predict_from_moment(&self, x_query: &[f64], moment: &DVector<f64>, m: usize) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for (i, xq) in x_query.iter().enumerate().take(d) {
            acc += xq * self.kernel.row(i).transpose().dot(moment);
        }
        acc / m as f64
    }
}
