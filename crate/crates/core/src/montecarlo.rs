//! Monte Carlo simulation of the data-generating processes and the
//! attention predictor, with per-trial deterministic seeding.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::attention::{
    lora_analytic_adapters_with, optimal_weights_feature, optimal_weights_mixture, optimal_weights_task,
    AttentionWeights, CompiledModel, LambdaChoice, LoraAdapters, PromptBatch,
};
use crate::error::{Error, Result};
use crate::geometry::{build_covariance, CovarianceModel, OrthonormalBasis, PrincipalAngles};
use crate::linalg::psd_sqrt;
use crate::par::{compensated_sum, fill_indexed, Execution};
use crate::risk::{
    feature_risk_asymptotic, feature_risk_exact, lora_risk_eps0, mixture_k_risk_eps0, task_risk_asymptotic,
    task_risk_exact, ShiftKind, ShiftScenario,
};

/// Generator for trial `trial` under `base_seed`: ChaCha8 keyed by the base
/// seed, one stream per trial.
pub fn trial_rng(base_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial);
    rng
}

/// SplitMix64 finalizer, used to derive independent base seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Prepared sampler for task vectors.
#[derive(Debug, Clone)]
pub enum TaskSampler {
    /// w ~ N(0, I).
    Isotropic { d: usize },
    /// w = U g + √ε z.
    LowRank { basis: DMatrix<f64>, sqrt_eps: f64 },
    /// Component k with probability γ_k, then that component's low-rank draw.
    Mixture { bases: Vec<DMatrix<f64>>, cumulative: Vec<f64>, sqrt_eps: f64 },
    /// w = L z with L Lᵀ = Σ.
    Dense { root: DMatrix<f64> },
}

impl TaskSampler {
    pub fn from_model(model: &CovarianceModel) -> Result<Self> {
        model.validate()?;
        Ok(match model {
            CovarianceModel::MixtureK { bases, weights, eps } => {
                let mut acc = 0.0;
                let cumulative = weights
                    .iter()
                    .map(|g| {
                        acc += g;
                        acc
                    })
                    .collect();
                Self::Mixture {
                    bases: bases.iter().map(|b| b.columns().clone()).collect(),
                    cumulative,
                    sqrt_eps: eps.sqrt(),
                }
            }
            CovarianceModel::Explicit { matrix } => Self::Dense { root: psd_sqrt(matrix)? },
            other => {
                let basis = other.effective_basis()?.expect("single-Gaussian variant");
                Self::LowRank { basis: basis.into_columns(), sqrt_eps: other.eps().unwrap_or(0.0).sqrt() }
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Isotropic { d } => *d,
            Self::LowRank { basis, .. } => basis.nrows(),
            Self::Mixture { bases, .. } => bases[0].nrows(),
            Self::Dense { root } => root.nrows(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let low_rank = |basis: &DMatrix<f64>, sqrt_eps: f64, rng: &mut R| {
            let g = DVector::from_fn(basis.ncols(), |_, _| normal(rng));
            let z = DVector::from_fn(basis.nrows(), |_, _| normal(rng));
            basis * g + z * sqrt_eps
        };
        match self {
            Self::Isotropic { d } => DVector::from_fn(*d, |_, _| normal(rng)),
            Self::LowRank { basis, sqrt_eps } => low_rank(basis, *sqrt_eps, rng),
            Self::Mixture { bases, cumulative, sqrt_eps } => {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|c| u < *c).unwrap_or(bases.len() - 1);
                low_rank(&bases[k], *sqrt_eps, rng)
            }
            Self::Dense { root } => root * DVector::from_fn(root.ncols(), |_, _| normal(rng)),
        }
    }
}

/// One draw of w from `model`. Mixtures pick a component first.
pub fn sample_task_vector<R: Rng + ?Sized>(model: &CovarianceModel, rng: &mut R) -> Result<DVector<f64>> {
    Ok(TaskSampler::from_model(model)?.sample(rng))
}

/// Feature law: isotropic, or x = L g with L Lᵀ = Σ.
#[derive(Debug, Clone)]
pub struct FeatureSampler {
    root: Option<DMatrix<f64>>,
}

impl FeatureSampler {
    pub fn isotropic() -> Self {
        Self { root: None }
    }

    pub fn from_model(model: &CovarianceModel) -> Result<Self> {
        if matches!(model, CovarianceModel::MixtureK { .. }) {
            return Err(Error::Configuration("feature covariance must describe a single Gaussian".into()));
        }
        Ok(Self { root: Some(psd_sqrt(&build_covariance(model)?)?) })
    }

    fn draw<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> DVector<f64> {
        let g = DVector::from_fn(d, |_, _| normal(rng));
        match &self.root {
            None => g,
            Some(l) => l * g,
        }
    }
}

/// Draws m examples and a query with labels y = wᵀx + σ η. Draw order per
/// row is x then η; the query comes last.
pub fn sample_prompt<R: Rng + ?Sized>(
    w: &DVector<f64>,
    m: usize,
    noise_sd: f64,
    feature_cov: Option<&CovarianceModel>,
    rng: &mut R,
) -> Result<PromptBatch> {
    let features = match feature_cov {
        None => FeatureSampler::isotropic(),
        Some(model) => FeatureSampler::from_model(model)?,
    };
    Ok(draw_prompt(w, m, noise_sd, &features, rng))
}

fn draw_prompt<R: Rng + ?Sized>(
    w: &DVector<f64>,
    m: usize,
    noise_sd: f64,
    features: &FeatureSampler,
    rng: &mut R,
) -> PromptBatch {
    let d = w.len();
    let mut x = DMatrix::zeros(m, d);
    let mut y = DVector::zeros(m);
    for i in 0..m {
        let xi = features.draw(d, rng);
        y[i] = w.dot(&xi) + noise_sd * normal(rng);
        x.row_mut(i).copy_from(&xi.transpose());
    }
    let xq = features.draw(d, rng);
    let yq = w.dot(&xq) + noise_sd * normal(rng);
    PromptBatch { x, y, x_query: xq, y_query: yq, norm_len: m }
}

/// How a prompt is turned into the moment Z_Mᵀ Z_M c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampler {
    /// Row by row, same draws as [`sample_prompt`]. O(m d).
    Stream,
    /// Exact joint law of (XᵀX, Xᵀy, yᵀy) through a Bartlett factor of the
    /// Gaussian design. O(d²) per trial, independent of m; needs m ≥ d.
    Sufficient,
    /// `Sufficient` when m ≥ d, otherwise `Stream`.
    #[default]
    Auto,
}

/// Where the evaluated model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    OptimalTask,
    OptimalMixture,
    OptimalFeature,
    LoraAnalytic { u_sperp: OrthonormalBasis, lambda: LambdaChoice },
    Explicit { weights: AttentionWeights, adapters: Option<LoraAdapters> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub scenario: ShiftScenario,
    pub model_source: ModelSource,
    pub trials: usize,
    pub base_seed: u64,
    pub sampler: Sampler,
}

/// Monte Carlo mean of (y_q − ŷ)² with its standard error and the matching
/// closed-form values where they exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Exact finite-(n, m) trace formula.
    pub analytic_exact: Option<f64>,
    /// Large-(n, m) limit.
    pub analytic_asymptotic: Option<f64>,
    /// ε → 0 closed form at the plan's (n, m), for mixture and adapter models.
    pub analytic_eps0: Option<f64>,
}

impl RiskEstimate {
    pub fn z_score(&self, reference: f64) -> f64 {
        if self.std_error > 0.0 {
            (self.mean - reference) / self.std_error
        } else if self.mean == reference {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// One simulated prompt reduced to what the predictor consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDraw {
    pub x_query: DVector<f64>,
    pub y_query: f64,
    /// Z_Mᵀ Z_M c for the value direction c the sampler was asked for.
    pub moment: DVector<f64>,
}

/// Draws (x_q, y_q, Z_Mᵀ Z_M c) for prompts of length m.
#[derive(Debug, Clone)]
pub struct MomentSampler {
    task: TaskSampler,
    features: FeatureSampler,
    chi: Vec<ChiSquared<f64>>,
    residual_chi: Option<ChiSquared<f64>>,
    use_sufficient: bool,
    noise_sd: f64,
    m: usize,
}

impl MomentSampler {
    pub fn new(task: TaskSampler, features: FeatureSampler, noise_sd: f64, m: usize, sampler: Sampler) -> Result<Self> {
        let d = task.dim();
        if m == 0 {
            return Err(Error::EmptyPrompt);
        }
        let use_sufficient = match sampler {
            Sampler::Stream => false,
            Sampler::Sufficient => {
                if m < d {
                    return Err(Error::Configuration(format!("sufficient sampler needs m ≥ d (m={m}, d={d})")));
                }
                true
            }
            Sampler::Auto => m >= d,
        };
        let chi = if use_sufficient {
            (0..d).map(|i| ChiSquared::new((m - i) as f64).expect("positive dof")).collect()
        } else {
            Vec::new()
        };
        let residual_chi = (use_sufficient && m > d).then(|| ChiSquared::new((m - d) as f64).expect("positive dof"));
        Ok(Self { task, features, chi, residual_chi, use_sufficient, noise_sd, m })
    }

    pub fn prompt_len(&self) -> usize {
        self.m
    }

    /// Samples w, then the prompt, and returns the moment for direction `c`.
    pub fn draw<R: Rng + ?Sized>(&self, c: &DVector<f64>, rng: &mut R) -> PromptDraw {
        let w = self.task.sample(rng);
        if self.use_sufficient {
            self.sufficient_moment(&w, c, rng)
        } else {
            self.stream_moment(&w, c, rng)
        }
    }
    fn stream_moment<R: Rng + ?Sized>(&self, w: &DVector<f64>, c: &DVector<f64>, rng: &mut R) -> PromptDraw {
        let d = w.len();
        let cx = c.rows(0, d);
        let cy = c[d];
        let mut moment = DVector::zeros(d + 1);
        for _ in 0..self.m {
            let xi = self.features.draw(d, rng);
            let yi = w.dot(&xi) + self.noise_sd * normal(rng);
            let s = xi.dot(&cx) + yi * cy;
            moment.rows_mut(0, d).axpy(s, &xi, 1.0);
            moment[d] += s * yi;
        }
        let xq = self.features.draw(d, rng);
        let yq = w.dot(&xq) + self.noise_sd * normal(rng);
        PromptDraw { x_query: xq, y_query: yq, moment }
    }

    /// With G = QR (Bartlett), X = G Lᵀ and y = Xw + η:
    /// XᵀX = L RᵀR Lᵀ, Xᵀy = L Rᵀ b, yᵀy = bᵀb + ρ, where b = R Lᵀw + Qᵀη,
    /// Qᵀη ~ N(0, σ² I) and ρ ~ σ² χ²_{m−d}.
    fn sufficient_moment<R: Rng + ?Sized>(&self, w: &DVector<f64>, c: &DVector<f64>, rng: &mut R) -> PromptDraw {
        let d = w.len();
        let mut r = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            r[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in (i + 1)..d {
                r[(i, j)] = normal(rng);
            }
        }
        let a = DVector::from_fn(d, |_, _| self.noise_sd * normal(rng));
        let rho = self.residual_chi.as_ref().map_or(0.0, |chi| self.noise_sd * self.noise_sd * chi.sample(rng));
        let xq = self.features.draw(d, rng);
        let yq = w.dot(&xq) + self.noise_sd * normal(rng);

        let cx = c.rows(0, d).into_owned();
        let cy = c[d];
        let (v, p) = match &self.features.root {
            None => (w.clone(), cx),
            Some(l) => (l.tr_mul(w), l.tr_mul(&cx)),
        };
        let b = &r * v + a;
        let rp = &r * p;
        let inner = r.tr_mul(&(&rp + &b * cy));
        let top = match &self.features.root {
            None => inner,
            Some(l) => l * inner,
        };
        let mut moment = DVector::zeros(d + 1);
        moment.rows_mut(0, d).copy_from(&top);
        moment[d] = b.dot(&rp) + cy * (b.dot(&b) + rho);
        PromptDraw { x_query: xq, y_query: yq, moment }
    }

}

/// A plan with its model, samplers and analytic references resolved.
#[derive(Debug, Clone)]
pub struct PreparedPlan {
    model: CompiledModel,
    sampler: MomentSampler,
    trials: usize,
    base_seed: u64,
    analytic_exact: Option<f64>,
    analytic_asymptotic: Option<f64>,
    analytic_eps0: Option<f64>,
}

fn uniform_angle(model: &CovarianceModel) -> Option<(f64, usize)> {
    if let CovarianceModel::RotatedSubspace { angles, .. } = model {
        let t = angles.as_slice();
        if t.iter().all(|v| *v == t[0]) {
            return Some((t[0], t.len()));
        }
    }
    None
}

fn same_base(train: &CovarianceModel, test: &CovarianceModel) -> bool {
    match (train, test) {
        (CovarianceModel::SingleSubspace { basis, eps: e1 }, CovarianceModel::RotatedSubspace { base, eps: e2, .. }) => {
            basis == base && e1 == e2
        }
        (CovarianceModel::SingleSubspace { basis, eps: e1 }, CovarianceModel::SingleSubspace { basis: b2, eps: e2 }) => {
            basis == b2 && e1 == e2
        }
        _ => false,
    }
}

impl PreparedPlan {
    pub fn new(plan: &SimulationPlan) -> Result<Self> {
        if plan.trials == 0 {
            return Err(Error::Configuration("trials must be at least 1".into()));
        }
        let sc = &plan.scenario;
        sc.validate()?;
        let d = sc.dim();
        let (n, m, sigma) = (sc.n_train, sc.m_test, sc.noise_sd);
        let mixture_train = matches!(sc.train_cov, CovarianceModel::MixtureK { .. });
        let config = |msg: &str| Err(Error::Configuration(msg.to_string()));

        let (weights, adapters, kernel_a) = match (&plan.model_source, sc.kind) {
            (ModelSource::OptimalTask, ShiftKind::Task) => {
                if mixture_train {
                    return config("optimal-task needs a single-Gaussian training covariance; use optimal-mixture");
                }
                let ow = optimal_weights_task(&build_covariance(&sc.train_cov)?, sigma, n)?;
                (ow.weights, None, Some(ow.a))
            }
            (ModelSource::OptimalMixture, ShiftKind::Task) => {
                if !mixture_train {
                    return config("optimal-mixture needs a MixtureK training covariance");
                }
                let ow = optimal_weights_mixture(&sc.train_cov, sigma, n)?;
                (ow.weights, None, Some(ow.a))
            }
            (ModelSource::OptimalFeature, ShiftKind::Feature) => {
                let ow = optimal_weights_feature(&build_covariance(&sc.train_cov)?, sigma, n)?;
                (ow.weights, None, Some(ow.a))
            }
            (ModelSource::LoraAnalytic { u_sperp, lambda }, ShiftKind::Task) => {
                let CovarianceModel::SingleSubspace { eps, .. } = &sc.train_cov else {
                    return config("lora-analytic needs a single-subspace training covariance");
                };
                let ow = optimal_weights_task(&build_covariance(&sc.train_cov)?, sigma, n)?;
                let ad = lora_analytic_adapters_with(u_sperp, n, *eps, ow.m_s, *lambda)?;
                (ow.weights, Some(ad), None)
            }
            (ModelSource::Explicit { weights, adapters }, _) => (weights.clone(), adapters.clone(), None),
            (source, kind) => {
                return Err(Error::Configuration(format!("model source {source:?} does not fit a {kind:?} shift")));
            }
        };
        if weights.dim() != d {
            return Err(Error::ShapeMismatch(format!("weights for d={}, scenario d={d}", weights.dim())));
        }
        let model = CompiledModel::new(&weights, adapters.as_ref())?;
        let reduced = kernel_a.or_else(|| reduced_kernel(&model));

        let sigma_t = build_covariance(&sc.test_cov)?;
        let analytic_exact = match (sc.kind, &reduced) {
            (ShiftKind::Task, Some(a)) => Some(task_risk_exact(a, &sigma_t, sigma, m)?.raw),
            (ShiftKind::Feature, Some(a)) => Some(feature_risk_exact(a, &sigma_t, sigma, m)?.raw),
            _ => None,
        };

        let (mut analytic_asymptotic, mut analytic_eps0) = (None, None);
        match (&plan.model_source, sc.kind) {
            (ModelSource::OptimalTask, ShiftKind::Task) if same_base(&sc.train_cov, &sc.test_cov) => {
                analytic_asymptotic = Some(match &sc.test_cov {
                    CovarianceModel::RotatedSubspace { angles, .. } => task_risk_asymptotic(angles, sigma),
                    _ => sigma * sigma,
                });
            }
            (ModelSource::OptimalMixture, ShiftKind::Task) => {
                if let CovarianceModel::MixtureK { bases, .. } = &sc.train_cov {
                    analytic_eps0 = Some(mixture_k_risk_eps0(bases.len(), bases[0].rank(), sigma, n, m));
                    analytic_asymptotic = Some(sigma * sigma);
                }
            }
            (ModelSource::LoraAnalytic { u_sperp, lambda: LambdaChoice::Corrected }, ShiftKind::Task) => {
                analytic_eps0 = Some(lora_risk_eps0(u_sperp.rank(), sigma, n, m));
                analytic_asymptotic = Some(sigma * sigma);
            }
            (ModelSource::OptimalFeature, ShiftKind::Feature) if same_base(&sc.train_cov, &sc.test_cov) => {
                let eps = sc.train_cov.eps().unwrap_or(0.0);
                let (theta, r) = uniform_angle(&sc.test_cov).unwrap_or((0.0, sc.train_cov_rank()));
                analytic_asymptotic = feature_risk_asymptotic(r, theta, eps, sigma).ok();
            }
            _ => {}
        }

        let (task, features) = match sc.kind {
            ShiftKind::Task => (TaskSampler::from_model(&sc.test_cov)?, FeatureSampler::isotropic()),
            ShiftKind::Feature => (TaskSampler::Isotropic { d }, FeatureSampler::from_model(&sc.test_cov)?),
        };
        let sampler = MomentSampler::new(task, features, sigma, m, plan.sampler)?;

        Ok(Self {
            model,
            sampler,
            trials: plan.trials,
            base_seed: plan.base_seed,
            analytic_exact,
            analytic_asymptotic,
            analytic_eps0,
        })
    }

    pub fn analytic_exact(&self) -> Option<f64> {
        self.analytic_exact
    }

    pub fn compiled_model(&self) -> &CompiledModel {
        &self.model
    }

    /// Squared error of trial `t`.
    pub fn trial_loss(&self, t: u64) -> f64 {
        let mut rng = trial_rng(self.base_seed, t);
        let draw = self.sampler.draw(&self.model.value, &mut rng);
        let pred = self.model.predict_from_moment(draw.x_query.as_slice(), &draw.moment, self.sampler.m);
        (draw.y_query - pred).powi(2)
    }

    pub fn estimate(&self, exec: Execution) -> RiskEstimate {
        let mut losses = vec![0.0; self.trials];
        fill_indexed(&mut losses, exec, |t| self.trial_loss(t as u64));
        let (mean, std_error) = mean_and_stderr(&losses);
        RiskEstimate {
            mean,
            std_error,
            trials: self.trials,
            analytic_exact: self.analytic_exact,
            analytic_asymptotic: self.analytic_asymptotic,
            analytic_eps0: self.analytic_eps0,
        }
    }
}

impl ShiftScenario {
    fn train_cov_rank(&self) -> usize {
        match &self.train_cov {
            CovarianceModel::SingleSubspace { basis, .. } => basis.rank(),
            CovarianceModel::RotatedSubspace { base, .. } => base.rank(),
            CovarianceModel::MixtureK { bases, .. } | CovarianceModel::SpanInterpolated { bases, .. } => {
                bases[0].rank()
            }
            CovarianceModel::Explicit { matrix } => matrix.nrows(),
        }
    }
}

/// When c = e_{d+1} and the kernel's last column vanishes above the corner,
/// the prediction is x_qᵀ A Xᵀy / m with A the top-left block.
fn reduced_kernel(model: &CompiledModel) -> Option<DMatrix<f64>> {
    let d = model.dim();
    let c = &model.value;
    let unit = c.rows(0, d).iter().all(|v| *v == 0.0) && c[d] == 1.0;
    let clean = model.kernel.view((0, d), (d, 1)).iter().all(|v| *v == 0.0);
    (unit && clean).then(|| model.kernel.view((0, 0), (d, d)).into_owned())
}

/// Mean and standard error (sample std with T−1, over √T), both accumulated
/// with compensated sums in index order.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let t = values.len();
    if t == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / t as f64;
    if t == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (t - 1) as f64;
    (mean, (var / t as f64).sqrt())
}

/// Runs the plan with the default schedule.
pub fn estimate_risk(plan: &SimulationPlan) -> Result<RiskEstimate> {
    estimate_risk_with(plan, Execution::default())
}

pub fn estimate_risk_with(plan: &SimulationPlan, exec: Execution) -> Result<RiskEstimate> {
    Ok(PreparedPlan::new(plan)?.estimate(exec))
}

/// Grid of estimates: rows follow `theta_grid`, columns `length_grid`
/// (n = m = length). The template's test covariance must be a rotated subspace;
/// its angles are replaced by each θ. Cell (i, j) uses a base seed derived
/// from the template seed and i·len + j.
pub fn phase_sweep(
    theta_grid: &[f64],
    length_grid: &[usize],
    template: &SimulationPlan,
    exec: Execution,
) -> Result<Vec<Vec<RiskEstimate>>> {
    if theta_grid.is_empty() || length_grid.is_empty() {
        return Err(Error::Configuration("phase sweep grids must be non-empty".into()));
    }
    let CovarianceModel::RotatedSubspace { base, orth, eps, .. } = &template.scenario.test_cov else {
        return Err(Error::Configuration("phase sweep needs a rotated-subspace test covariance".into()));
    };
    let mut plans = Vec::with_capacity(theta_grid.len() * length_grid.len());
    for (i, &theta) in theta_grid.iter().enumerate() {
        for (j, &len) in length_grid.iter().enumerate() {
            let mut plan = template.clone();
            plan.scenario.test_cov = CovarianceModel::RotatedSubspace {
                base: base.clone(),
                orth: orth.clone(),
                angles: PrincipalAngles::uniform(theta, base.rank())?,
                eps: *eps,
            };
            plan.scenario.n_train = len;
            plan.scenario.m_test = len;
            plan.base_seed = derive_seed(template.base_seed, (i * length_grid.len() + j) as u64);
            plans.push(PreparedPlan::new(&plan)?);
        }
    }
    // Cells run one after another; each cell parallelizes over its trials.
    let flat: Vec<RiskEstimate> = plans.iter().map(|p| p.estimate(exec)).collect();
    Ok(flat.chunks(length_grid.len()).map(<[RiskEstimate]>::to_vec).collect())
}

/// Estimates several independent plans, keeping input order.
pub fn estimate_many(plans: &[SimulationPlan], exec: Execution) -> Result<Vec<RiskEstimate>> {
    let prepared = plans.iter().map(PreparedPlan::new).collect::<Result<Vec<_>>>()?;
    Ok(prepared.iter().map(|p| p.estimate(exec)).collect())
}
