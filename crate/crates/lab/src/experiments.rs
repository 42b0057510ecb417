//! Turns an [`ExperimentSpec`] into result rows.

use nalgebra::DMatrix;
use subspace_icl::attention::{optimal_weights_task, LambdaChoice};
use subspace_icl::geometry::{build_covariance, haar_orthogonal, CovarianceModel, OrthonormalBasis, PrincipalAngles};
use subspace_icl::lora::{adapter_spectrum, train_lora, TrainConfig, TrainTrajectory};
use subspace_icl::montecarlo::{derive_seed, phase_sweep, ModelSource, PreparedPlan, RiskEstimate, Sampler, SimulationPlan};
use subspace_icl::risk::{
    covariance_overlap, gatmiry_example_covariances, lora_risk_eps0, mixture_k_risk_eps0, threshold_prompt_length,
    ShiftKind, ShiftScenario, ThresholdKind,
};
use subspace_icl::{Error, Execution};

use crate::config::{ExperimentSpec, Kind, LambdaName, SamplerName, ThresholdName};
use crate::table::{Row, Series, SeriesCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Replaces every experiment's `seed` when set.
    pub seed_override: Option<u64>,
}

/// Rows plus any auxiliary tables, keyed by a file-name suffix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<Row>,
    pub series: Vec<(String, Series)>,
    /// Non-fatal events such as a diverged training seed.
    pub notes: Vec<String>,
}

impl From<SamplerName> for Sampler {
    fn from(s: SamplerName) -> Self {
        match s {
            SamplerName::Stream => Sampler::Stream,
            SamplerName::Sufficient => Sampler::Sufficient,
            SamplerName::Auto => Sampler::Auto,
        }
    }
}

impl From<LambdaName> for LambdaChoice {
    fn from(l: LambdaName) -> Self {
        match l {
            LambdaName::Corrected => LambdaChoice::Corrected,
            LambdaName::AsPrinted => LambdaChoice::AsPrinted,
        }
    }
}

/// Column blocks of one Haar-random d×d frame: block k spans columns
/// [k·r, (k+1)·r).
pub struct Frames {
    q: DMatrix<f64>,
    r: usize,
}

impl Frames {
    pub fn new(d: usize, r: usize, seed: u64) -> Result<Self, Error> {
        Ok(Self { q: haar_orthogonal(d, seed)?, r })
    }

    pub fn block(&self, k: usize) -> Result<OrthonormalBasis, Error> {
        self.span(k, 1)
    }

    /// Columns of `count` consecutive blocks starting at block `k`.
    pub fn span(&self, k: usize, count: usize) -> Result<OrthonormalBasis, Error> {
        OrthonormalBasis::new(self.q.columns(k * self.r, count * self.r).into_owned())
    }

    pub fn rotated(&self, theta: f64, eps: f64) -> Result<CovarianceModel, Error> {
        Ok(CovarianceModel::RotatedSubspace {
            base: self.block(0)?,
            orth: self.block(1)?,
            angles: PrincipalAngles::uniform(theta, self.r)?,
            eps,
        })
    }
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    seed: u64,
    exec: Execution,
}

impl Ctx<'_> {
    fn row(&self, label: impl Into<String>, metric: &str) -> Row {
        Row {
            experiment_id: self.spec.id.clone(),
            kind: self.spec.kind.to_string(),
            label: label.into(),
            metric: metric.into(),
            ..Row::default()
        }
    }

    fn plan(&self, kind: ShiftKind, train: CovarianceModel, test: CovarianceModel, source: ModelSource, len: usize, seed: u64) -> SimulationPlan {
        SimulationPlan {
            scenario: ShiftScenario {
                kind,
                train_cov: train,
                test_cov: test,
                noise_sd: self.spec.noise_sd,
                n_train: len,
                m_test: len,
            },
            model_source: source,
            trials: self.spec.trials,
            base_seed: seed,
            sampler: self.spec.sampler.into(),
        }
    }

    fn risk_row(&self, label: impl Into<String>, x: Option<f64>, overlap: Option<f64>, len: usize, seed: u64, est: &RiskEstimate) -> Row {
        let d = self.spec.dim as f64;
        Row {
            theta_or_alpha: x,
            overlap,
            n: Some(len),
            m: Some(len),
            trials: Some(est.trials),
            mc_mean: Some(est.mean),
            mc_stderr: Some(est.std_error),
            analytic_exact: est.analytic_exact,
            analytic_asymptotic: est.analytic_asymptotic,
            analytic_eps0: est.analytic_eps0,
            normalized_mc: Some(est.mean / d),
            normalized_exact: est.analytic_exact.map(|v| v / d),
            seed: Some(seed),
            ..self.row(label, "test_risk")
        }
    }

    /// Runs one plan per (length, θ) pair, lengths outermost.
    fn sweep<F>(&self, kind: ShiftKind, train: &CovarianceModel, source: &ModelSource, test_for: F) -> Result<Vec<Row>, Error>
    where
        F: Fn(f64) -> Result<CovarianceModel, Error>,
    {
        let sigma_s = build_covariance(train)?;
        let mut rows = Vec::new();
        let mut idx = 0u64;
        for &len in &self.spec.lengths {
            for &theta in &self.spec.theta_grid {
                let test = test_for(theta)?;
                let overlap = covariance_overlap(&sigma_s, &build_covariance(&test)?);
                let seed = derive_seed(self.seed, idx);
                idx += 1;
                let est = PreparedPlan::new(&self.plan(kind, train.clone(), test, source.clone(), len, seed))?.estimate(self.exec);
                rows.push(self.risk_row(format!("theta={theta:.6}"), Some(theta), Some(overlap), len, seed, &est));
            }
        }
        Ok(rows)
    }
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutput, Error> {
    let ctx = Ctx { spec, seed: opts.seed_override.unwrap_or(spec.seed), exec: opts.exec };
    let (d, r, eps) = (spec.dim, spec.rank, spec.eps);
    let frames = || Frames::new(d, r, spec.basis_seed);
    let mut out = ExperimentOutput::default();
    match spec.kind {
        Kind::SingleShiftSweep => {
            let f = frames()?;
            let train = CovarianceModel::SingleSubspace { basis: f.block(0)?, eps };
            out.rows = ctx.sweep(ShiftKind::Task, &train, &ModelSource::OptimalTask, |t| f.rotated(t, eps))?;
        }
        Kind::MixtureSweep => {
            let f = frames()?;
            let train = CovarianceModel::MixtureK {
                bases: vec![f.block(0)?, f.block(1)?],
                weights: vec![spec.gamma, 1.0 - spec.gamma],
                eps,
            };
            out.rows = ctx.sweep(ShiftKind::Task, &train, &ModelSource::OptimalMixture, |t| f.rotated(t, eps))?;
        }
        Kind::FeatureShiftSweep => {
            let f = frames()?;
            let train = CovarianceModel::SingleSubspace { basis: f.block(0)?, eps };
            out.rows = ctx.sweep(ShiftKind::Feature, &train, &ModelSource::OptimalFeature, |t| f.rotated(t, eps))?;
        }
        Kind::LoraAnalytic => {
            let f = frames()?;
            let train = CovarianceModel::SingleSubspace { basis: f.block(0)?, eps };
            let source = ModelSource::LoraAnalytic { u_sperp: f.block(1)?, lambda: spec.lambda.into() };
            out.rows = ctx.sweep(ShiftKind::Task, &train, &source, |t| f.rotated(t, eps))?;
        }
        Kind::KMixtureSpan => out.rows = k_mixture_span(&ctx)?,
        Kind::PhasePlot => out.rows = phase_plot(&ctx)?,
        Kind::Gatmiry => out.rows = gatmiry(&ctx)?,
        Kind::ThresholdTable => out.rows = threshold_table(&ctx)?,
        Kind::LoraTrain | Kind::LoraRank2r => lora_training(&ctx, &mut out)?,
    }
    Ok(out)
}

fn k_mixture_span(ctx: &Ctx) -> Result<Vec<Row>, Error> {
    let spec = ctx.spec;
    let k = spec.components.unwrap_or(2);
    let f = Frames::new(spec.dim, spec.rank, spec.basis_seed)?;
    let bases = (0..k).map(|i| f.block(i)).collect::<Result<Vec<_>, _>>()?;
    let train = CovarianceModel::MixtureK { bases: bases.clone(), weights: vec![1.0 / k as f64; k], eps: spec.eps };
    let sigma_s = build_covariance(&train)?;
    let mut rows = Vec::new();
    let mut idx = 0u64;
    for &len in &spec.lengths {
        for alpha in spec.alphas.as_deref().unwrap_or_default() {
            let test = CovarianceModel::SpanInterpolated { bases: bases.clone(), coefficients: alpha.clone(), eps: spec.eps };
            let overlap = covariance_overlap(&sigma_s, &build_covariance(&test)?);
            let seed = derive_seed(ctx.seed, idx);
            idx += 1;
            let plan = ctx.plan(ShiftKind::Task, train.clone(), test, ModelSource::OptimalMixture, len, seed);
            let est = PreparedPlan::new(&plan)?.estimate(ctx.exec);
            let label = alpha.iter().map(|a| format!("{a:.6}")).collect::<Vec<_>>().join(";");
            rows.push(ctx.risk_row(format!("alpha={label}"), alpha.first().copied(), Some(overlap), len, seed, &est));
        }
    }
    Ok(rows)
}

fn phase_plot(ctx: &Ctx) -> Result<Vec<Row>, Error> {
    let spec = ctx.spec;
    let f = Frames::new(spec.dim, spec.rank, spec.basis_seed)?;
    let train = CovarianceModel::SingleSubspace { basis: f.block(0)?, eps: spec.eps };
    let sigma_s = build_covariance(&train)?;
    let template = ctx.plan(ShiftKind::Task, train, f.rotated(0.0, spec.eps)?, ModelSource::OptimalTask, spec.lengths[0], ctx.seed);
    let grid = phase_sweep(&spec.theta_grid, &spec.lengths, &template, ctx.exec)?;
    let mut rows = Vec::new();
    for (i, (&theta, line)) in spec.theta_grid.iter().zip(&grid).enumerate() {
        let overlap = covariance_overlap(&sigma_s, &build_covariance(&f.rotated(theta, spec.eps)?)?);
        for (j, (&len, est)) in spec.lengths.iter().zip(line).enumerate() {
            let seed = derive_seed(ctx.seed, (i * spec.lengths.len() + j) as u64);
            rows.push(ctx.risk_row(format!("theta={theta:.6}"), Some(theta), Some(overlap), len, seed, est));
        }
    }
    Ok(rows)
}

fn gatmiry(ctx: &Ctx) -> Result<Vec<Row>, Error> {
    let (sigma_s, sigma_t) = gatmiry_example_covariances(ctx.spec.basis_seed);
    let overlap = covariance_overlap(&sigma_s, &sigma_t);
    let train = CovarianceModel::Explicit { matrix: sigma_s };
    let test = CovarianceModel::Explicit { matrix: sigma_t };
    let mut rows = Vec::new();
    for (idx, &len) in ctx.spec.lengths.iter().enumerate() {
        let seed = derive_seed(ctx.seed, idx as u64);
        let plan = ctx.plan(ShiftKind::Task, train.clone(), test.clone(), ModelSource::OptimalTask, len, seed);
        let est = PreparedPlan::new(&plan)?.estimate(ctx.exec);
        rows.push(ctx.risk_row("explicit", None, Some(overlap), len, seed, &est));
    }
    Ok(rows)
}

fn threshold_table(ctx: &Ctx) -> Result<Vec<Row>, Error> {
    let spec = ctx.spec;
    let ranks = spec.ranks.clone().unwrap_or_else(|| vec![spec.rank]);
    let noises = spec.noise_levels.clone().unwrap_or_else(|| vec![spec.noise_sd]);
    let kinds = spec
        .thresholds
        .clone()
        .unwrap_or_else(|| vec![ThresholdName::Mixture2, ThresholdName::MixtureK, ThresholdName::Lora]);
    let k = spec.components.unwrap_or(3);
    let mut rows = Vec::new();
    for &r in &ranks {
        for &sigma in &noises {
            for &delta in spec.deltas.as_deref().unwrap_or_default() {
                for &name in &kinds {
                    let (kind, tag) = match name {
                        ThresholdName::Mixture2 => (ThresholdKind::Mixture2, "mixture2".to_string()),
                        ThresholdName::MixtureK => (ThresholdKind::MixtureK(k), format!("mixture-k{k}")),
                        ThresholdName::Lora => (ThresholdKind::Lora, "lora".to_string()),
                    };
                    let n = threshold_prompt_length(kind, r, sigma, delta)?;
                    let risk = match kind {
                        ThresholdKind::Mixture2 => mixture_k_risk_eps0(2, r, sigma, n, n),
                        ThresholdKind::MixtureK(k) => mixture_k_risk_eps0(k, r, sigma, n, n),
                        ThresholdKind::Lora => lora_risk_eps0(r, sigma, n, n),
                    };
                    rows.push(Row {
                        theta_or_alpha: Some(delta),
                        n: Some(n),
                        m: Some(n),
                        analytic_exact: Some(risk),
                        analytic_asymptotic: Some(sigma * sigma),
                        ..ctx.row(format!("{tag} r={r} sigma={sigma} delta={delta}"), "threshold")
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn lora_training(ctx: &Ctx, out: &mut ExperimentOutput) -> Result<(), Error> {
    let spec = ctx.spec;
    let (d, r, eps, len) = (spec.dim, spec.rank, spec.eps, spec.lengths[0]);
    let wide = spec.kind == Kind::LoraRank2r;
    let t = spec.training();
    let f = Frames::new(d, r, spec.basis_seed)?;
    let (u_s, u_perp, u_2r) = (f.block(0)?, f.block(1)?, f.span(0, 2)?);
    let pretrained = optimal_weights_task(&build_covariance(&CovarianceModel::SingleSubspace { basis: u_s, eps })?, spec.noise_sd, len)?;

    let mut trajectory = Series {
        columns: ["seed", "iteration", "loss", "target_error", "secondary_error"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    let mut spectrum = Series {
        columns: ["seed", "factor", "index", "singular_value"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for &s in &t.seeds {
        let base_seed = derive_seed(ctx.seed, s);
        let mut cfg = TrainConfig::new(CovarianceModel::SingleSubspace { basis: u_2r.clone(), eps }, u_perp.clone(), len, base_seed);
        cfg.learning_rate = t.learning_rate;
        cfg.batch_size = t.batch_size;
        cfg.iterations = t.iterations;
        cfg.init_scale = t.init_scale;
        cfg.snapshot_stride = t.snapshot_stride;
        cfg.early_stop = t.early_stop;
        cfg.noise_sd = spec.noise_sd;
        cfg.sampler = spec.sampler.into();
        if wide {
            cfg.adapter_rank = 2 * r;
            cfg.secondary_target = Some(u_2r.clone());
            cfg.early_stop = None;
        }
        let label = format!("seed={s}");
        let base = |metric: &str| Row { n: Some(len), m: Some(len), seed: Some(base_seed), ..ctx.row(label.clone(), metric) };
        let tr = match train_lora(&pretrained.weights, &cfg) {
            Ok(tr) => tr,
            Err(Error::Divergence { iteration }) => {
                out.notes.push(format!("{}: seed {s} diverged at iteration {iteration}", spec.id));
                out.rows.push(Row { mc_mean: Some(iteration as f64), trials: Some(iteration), ..base("diverged_at_iteration") });
                continue;
            }
            Err(e) => return Err(e),
        };
        push_trajectory(&mut trajectory, s, &tr, t.snapshot_stride);
        let iters = Some(tr.iterations_run);
        out.rows.push(Row { mc_mean: Some(tr.final_target_error()), trials: iters, ..base("final_error_to_u_perp") });
        out.rows.push(Row { mc_mean: tr.losses.last().copied(), trials: iters, ..base("final_batch_loss") });
        if wide {
            out.rows.push(Row { mc_mean: tr.final_secondary_error(), trials: iters, ..base("final_error_to_u_2r") });
            let (s1, s2) = adapter_spectrum(&tr.final_adapters);
            out.rows.push(Row { mc_mean: Some(s1[r] / s1[r - 1]), trials: iters, ..base("b1_sv_ratio") });
            out.rows.push(Row { mc_mean: Some(s2[r] / s2[r - 1]), trials: iters, ..base("b2_sv_ratio") });
            for (name, vals) in [("b1", &s1), ("b2", &s2)] {
                for (i, v) in vals.iter().enumerate() {
                    spectrum.rows.push(vec![
                        SeriesCell::Int(s),
                        SeriesCell::Text(name.into()),
                        SeriesCell::Int(i as u64 + 1),
                        SeriesCell::Float(*v),
                    ]);
                }
            }
        }
    }
    out.series.push(("trajectory".into(), trajectory));
    if wide {
        out.series.push(("spectrum".into(), spectrum));
    }
    Ok(())
}

fn push_trajectory(series: &mut Series, seed: u64, tr: &TrainTrajectory, stride: usize) {
    let last = tr.iterations_run;
    for it in (0..=last).filter(|i| i % stride == 0 || *i == last) {
        series.rows.push(vec![
            SeriesCell::Int(seed),
            SeriesCell::Int(it as u64),
            tr.losses.get(it).map_or(SeriesCell::Empty, |v| SeriesCell::Float(*v)),
            SeriesCell::Float(tr.target_errors[it]),
            tr.secondary_errors.get(it).map_or(SeriesCell::Empty, |v| SeriesCell::Float(*v)),
        ]);
    }
}
