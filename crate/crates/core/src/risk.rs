//! Closed-form test risks, asymptotic laws and prompt-length thresholds.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{optimal_weights_feature, optimal_weights_task};
use crate::error::{Error, Result};
use crate::geometry::{haar_orthogonal_with, CovarianceModel, PrincipalAngles};
use crate::linalg::{symmetrize, trace_product};

/// A risk and the same risk divided by the ambient dimension d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskValue {
    pub raw: f64,
    pub normalized: f64,
}

impl RiskValue {
    pub fn new(raw: f64, d: usize) -> Self {
        Self { raw, normalized: raw / d as f64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    /// The task vector distribution moves; features stay isotropic.
    Task,
    /// The feature distribution moves; w ~ N(0, I).
    Feature,
}

/// Training and test distributions plus prompt lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScenario {
    pub kind: ShiftKind,
    pub train_cov: CovarianceModel,
    pub test_cov: CovarianceModel,
    pub noise_sd: f64,
    pub n_train: usize,
    pub m_test: usize,
}

impl ShiftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.m_test == 0 {
            return Err(Error::Domain("prompt lengths must be at least 1".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Domain(format!("noise_sd = {}", self.noise_sd)));
        }
        self.train_cov.validate()?;
        self.test_cov.validate()?;
        if self.train_cov.ambient_dim() != self.test_cov.ambient_dim() {
            return Err(Error::ShapeMismatch("train and test dimensions differ".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.train_cov.ambient_dim()
    }
}

fn check_square_pair(a: &DMatrix<f64>, s: &DMatrix<f64>, m: usize) -> Result<()> {
    if !a.is_square() || a.shape() != s.shape() {
        return Err(Error::ShapeMismatch(format!("A {:?}, Σ_t {:?}", a.shape(), s.shape())));
    }
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    Ok(())
}

/// Exact test risk of ŷ = x_qᵀ A Xᵀy / m when w ~ N(0, Σ_t), x ~ N(0, I):
/// M_t − 2Tr(Σ_t A) + (M_t/m)Tr(AᵀA) + ((m+1)/m)Tr(A Σ_t Aᵀ).
/// A need not be symmetric (adapted kernels with B_1 ≠ B_2 are not).
pub fn task_risk_exact(a: &DMatrix<f64>, sigma_t: &DMatrix<f64>, noise_sd: f64, m: usize) -> Result<RiskValue> {
    check_square_pair(a, sigma_t, m)?;
    let mf = m as f64;
    let m_t = sigma_t.trace() + noise_sd * noise_sd;
    let t_sa = trace_product(sigma_t, a);
    let t_ata = a.norm_squared();
    let t_asa = trace_product(&(a * sigma_t), &a.transpose());
    let raw = m_t - t_sa + (m_t / mf) * t_ata - t_sa + ((mf + 1.0) / mf) * t_asa;
    Ok(RiskValue::new(raw, a.nrows()))
}

/// Σ sin²θ_i + σ².
pub fn task_risk_asymptotic(angles: &PrincipalAngles, noise_sd: f64) -> f64 {
    angles.as_slice().iter().map(|t| t.sin().powi(2)).sum::<f64>() + noise_sd * noise_sd
}

/// ε → 0 risk of the mixture-of-K optimal model on any subspace in the span.
pub fn mixture_k_risk_eps0(k: usize, r: usize, noise_sd: f64, n: usize, m: usize) -> f64 {
    let (rf, nf, mf) = (r as f64, n as f64, m as f64);
    let c = k as f64 * (rf + noise_sd * noise_sd);
    rf + noise_sd * noise_sd + (mf + 1.0 + c) / mf * (rf * nf * nf / (nf + 1.0 + c).powi(2))
        - 2.0 * rf * nf / (nf + 1.0 + c)
}

/// The K = 2 case of [`mixture_k_risk_eps0`].
pub fn mixture2_risk_eps0(r: usize, noise_sd: f64, n: usize, m: usize) -> f64 {
    mixture_k_risk_eps0(2, r, noise_sd, n, m)
}

/// ε → 0 risk of the analytically adapted model.
pub fn lora_risk_eps0(r: usize, noise_sd: f64, n: usize, m: usize) -> f64 {
    let (rf, nf, mf) = (r as f64, n as f64, m as f64);
    let s = rf + noise_sd * noise_sd;
    s + (mf + 1.0 + 2.0 * s) / mf * (rf * nf * nf / (nf + 1.0 + s).powi(2)) - 2.0 * rf * nf / (nf + 1.0 + s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    Mixture2,
    MixtureK(usize),
    Lora,
}

/// Real-valued lower bound on n that guarantees risk < σ² + δ.
pub fn threshold_bound(kind: ThresholdKind, r: usize, noise_sd: f64, delta: f64) -> Result<f64> {
    let rf = r as f64;
    if !(delta > 0.0 && delta < rf) {
        return Err(Error::Domain(format!("delta = {delta} outside (0, {rf})")));
    }
    let s = rf + noise_sd * noise_sd;
    Ok(match kind {
        ThresholdKind::Mixture2 => (2.0 * s + 1.0) * rf / delta - (2.0 * s + 1.0),
        ThresholdKind::MixtureK(k) => {
            if k == 0 {
                return Err(Error::Domain("K must be at least 1".into()));
            }
            let c = k as f64 * s;
            (c + 1.0) * rf / delta - (c + 1.0)
        }
        ThresholdKind::Lora => {
            (2.0 * (s + 1.0) * (rf - delta) - rf) / delta + (s + 1.0) * ((rf - delta) / delta).sqrt()
        }
    })
}

/// Smallest integer n ≥ 1 strictly above [`threshold_bound`].
pub fn threshold_prompt_length(kind: ThresholdKind, r: usize, noise_sd: f64, delta: f64) -> Result<usize> {
    let bound = threshold_bound(kind, r, noise_sd, delta)?;
    Ok(if bound < 0.0 { 1 } else { bound.floor() as usize + 1 })
}

/// Exact risk under feature shift (w ~ N(0, I), x ~ N(0, Σ_t)):
/// M_t − 2Tr(Σ_t²A) + ((m+1)/m)Tr(AΣ_t²AᵀΣ_t) + (Tr Σ_t + σ²)/m · Tr(AΣ_tAᵀΣ_t).
pub fn feature_risk_exact(a: &DMatrix<f64>, sigma_t: &DMatrix<f64>, noise_sd: f64, m: usize) -> Result<RiskValue> {
    check_square_pair(a, sigma_t, m)?;
    let mf = m as f64;
    let s2 = noise_sd * noise_sd;
    let m_t = sigma_t.trace() + s2;
    let st2 = sigma_t * sigma_t;
    let a_st = a * sigma_t;
    let t1 = trace_product(&st2, a);
    let at_st = a.transpose() * sigma_t;
    let t2 = trace_product(&(a * &st2), &at_st);
    let t3 = trace_product(&a_st, &at_st);
    let raw = m_t - 2.0 * t1 + ((mf + 1.0) / mf) * t2 + (sigma_t.trace() / mf) * t3 + (s2 / mf) * t3;
    Ok(RiskValue::new(raw, a.nrows()))
}

/// The alternative five-term expression with Tr(AΣ_t³A), Tr(Σ_t²)Tr(AΣ_tA)
/// and Tr(AΣ_t²A). Disagrees with simulation whenever Σ_t ≠ I; kept for
/// comparison only.
pub fn feature_risk_as_printed(a: &DMatrix<f64>, sigma_t: &DMatrix<f64>, noise_sd: f64, m: usize) -> Result<RiskValue> {
    check_square_pair(a, sigma_t, m)?;
    let mf = m as f64;
    let s2 = noise_sd * noise_sd;
    let m_t = sigma_t.trace() + s2;
    let st2 = sigma_t * sigma_t;
    let st3 = &st2 * sigma_t;
    let raw = m_t - 2.0 * trace_product(&st2, a)
        + ((mf + 1.0) / mf) * trace_product(&(a * st3), a)
        + (1.0 / mf) * st2.trace() * trace_product(&(a * sigma_t), a)
        + (s2 / mf) * trace_product(&(a * st2), a);
    Ok(RiskValue::new(raw, a.nrows()))
}

/// Large-n,m feature-shift law without its O(ε) remainder.
///
/// The remainder is not small in absolute terms at θ > 0: the leading
/// sin² coefficient is O(1/ε²), and the dropped part scales with it. Against
/// [`feature_risk_exact`] at n = m = 10⁵ and ε = 0.1 the relative gap is a few
/// percent at θ = π/2 and about 5ε in absolute terms at θ = 0. At intermediate
/// angles the law can be off by a factor close to 2, since A and Σ_t do not
/// commute there.
pub fn feature_risk_asymptotic(r: usize, theta: f64, eps: f64, noise_sd: f64) -> Result<f64> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidEps(eps));
    }
    let rf = r as f64;
    let (s, c) = theta.sin_cos();
    let (sin2, cos2) = (s * s, c * c);
    let c1 = (1.0 + 2.0 * eps) * (1.0 + eps) + eps * eps;
    let c2 = 2.0 * (1.0 + eps);
    let mut value = (c1 - (1.0 + eps) * c2) / (1.0 + eps).powi(2) * rf * cos2 + rf + noise_sd * noise_sd;
    if sin2 > 0.0 {
        if eps == 0.0 {
            return Err(Error::Diverges(format!("1/ε² term at ε = 0, θ = {theta}")));
        }
        value += (c1 - eps * c2) / (eps * eps) * rf * sin2;
    }
    Ok(value)
}

/// Training risk of the optimal task-shift model: M_s − Tr(ΣA).
pub fn optimal_training_risk(sigma: &DMatrix<f64>, noise_sd: f64, n: usize) -> Result<f64> {
    let ow = optimal_weights_task(sigma, noise_sd, n)?;
    Ok(ow.m_s - trace_product(sigma, &ow.a))
}

/// Training risk of the optimal feature-shift model: M_s − Tr(Σ²A).
pub fn optimal_training_risk_feature(sigma: &DMatrix<f64>, noise_sd: f64, n: usize) -> Result<f64> {
    let ow = optimal_weights_feature(sigma, noise_sd, n)?;
    Ok(ow.m_s - trace_product(&(sigma * sigma), &ow.a))
}

/// Σ_s = I₅ and Σ_t = V diag(1, 1, 1/2, 1/4, 1) Vᵀ with V Haar-random.
pub fn gatmiry_example_covariances(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = haar_orthogonal_with(5, &mut rng).expect("d = 5 is valid");
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[1.0, 1.0, 0.5, 0.25, 1.0]));
    (DMatrix::identity(5, 5), symmetrize(&(&v * lambda * v.transpose())))
}

/// Tr(Σ_sᵀΣ_t) / Tr(Σ_s), a scalar overlap between two covariances.
pub fn covariance_overlap(sigma_s: &DMatrix<f64>, sigma_t: &DMatrix<f64>) -> f64 {
    trace_product(&sigma_s.transpose(), sigma_t) / sigma_s.trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::optimal_weights_mixture;
    use crate::geometry::{build_covariance, haar_orthogonal, rotate_basis, split_basis, OrthonormalBasis};
    use crate::linalg::sym_eigen_sorted;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_6};

    fn bases(seed: u64) -> (OrthonormalBasis, OrthonormalBasis) {
        split_basis(&haar_orthogonal(20, seed).unwrap(), 5).unwrap()
    }

    fn single(b: &OrthonormalBasis, eps: f64) -> DMatrix<f64> {
        build_covariance(&CovarianceModel::SingleSubspace { basis: b.clone(), eps }).unwrap()
    }

    fn rotated(us: &OrthonormalBasis, up: &OrthonormalBasis, theta: f64, eps: f64) -> DMatrix<f64> {
        single(&rotate_basis(us, up, &PrincipalAngles::uniform(theta, us.rank()).unwrap()).unwrap(), eps)
    }

    #[test]
    fn zero_kernel_gives_label_variance() {
        let s = DMatrix::from_diagonal_element(4, 4, 0.7);
        let z = DMatrix::zeros(4, 4);
        assert!((task_risk_exact(&z, &s, 0.5, 10).unwrap().raw - (2.8 + 0.25)).abs() < 1e-14);
        assert!((feature_risk_exact(&z, &s, 0.5, 10).unwrap().raw - (2.8 + 0.25)).abs() < 1e-14);
        let rv = task_risk_exact(&z, &s, 0.0, 3).unwrap();
        assert!((rv.normalized * 4.0 - rv.raw).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_law_values() {
        let a = |v: Vec<f64>| PrincipalAngles::new(v).unwrap();
        assert_eq!(task_risk_asymptotic(&a(vec![0.0; 5]), 0.0), 0.0);
        assert!((task_risk_asymptotic(&a(vec![FRAC_PI_2; 5]), 0.0) - 5.0).abs() < 1e-14);
        assert!((task_risk_asymptotic(&a(vec![0.0, FRAC_PI_2, FRAC_PI_6]), 1.0) - 2.25).abs() < 1e-14);
    }

    #[test]
    fn exact_task_risk_near_asymptote() {
        let (us, up) = bases(1);
        let eps = 1e-6;
        let ow = optimal_weights_task(&single(&us, eps), 0.0, 250).unwrap();
        let v = task_risk_exact(&ow.a, &rotated(&us, &up, FRAC_PI_2, eps), 0.0, 250).unwrap().raw;
        assert!((v - 5.0).abs() < 0.15, "{v}");
    }

    fn worst_gap_to_law(eps: f64, n: usize) -> f64 {
        let (us, up) = bases(2);
        let ow = optimal_weights_task(&single(&us, eps), 0.0, n).unwrap();
        (0..9)
            .map(|k| {
                let theta = k as f64 * FRAC_PI_2 / 8.0;
                let exact = task_risk_exact(&ow.a, &rotated(&us, &up, theta, eps), 0.0, n).unwrap().raw;
                (exact - task_risk_asymptotic(&PrincipalAngles::uniform(theta, 5).unwrap(), 0.0)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_matches_asymptotic_at_large_n() {
        // The law needs both 1/n and nε small: the ε-block of A has eigenvalue
        // nε/((n+1)ε + M_s), which at ε = 1e-6, n = 1e5 is already 0.02.
        assert!(worst_gap_to_law(1e-6, 5_000) < 1e-2);
        assert!(worst_gap_to_law(1e-9, 100_000) < 1e-2);
        assert!(worst_gap_to_law(1e-6, 100_000) > 0.1);
    }

    #[test]
    fn mixture_closed_form_limits() {
        assert!(mixture2_risk_eps0(5, 0.0, 1_000_000, 1_000_000) < 1e-4 * 5.0);
        assert!(mixture2_risk_eps0(5, 1.0, 1_000_000, 1_000_000) - 1.0 < 1e-4 * 5.0);
        // n = 99 sits exactly on the boundary: the risk equals σ² + δ = 0.5 there.
        assert!(mixture2_risk_eps0(5, 0.0, 99, 99) >= 0.5 - 1e-12);
        assert!(mixture2_risk_eps0(5, 0.0, 100, 100) < 0.5);
        assert!(mixture_k_risk_eps0(3, 5, 0.0, 10_000, 10_000) < 0.01);
        for r in 1..6 {
            for &s in &[0.0, 0.5, 1.0] {
                for &(n, m) in &[(1, 1), (10, 20), (250, 250)] {
                    assert_eq!(
                        mixture_k_risk_eps0(2, r, s, n, m).to_bits(),
                        mixture2_risk_eps0(r, s, n, m).to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn mixture_closed_form_matches_exact_trace() {
        let (u1, u2) = bases(3);
        let eps = 1e-6;
        let mix = CovarianceModel::MixtureK { bases: vec![u1.clone(), u2.clone()], weights: vec![0.5, 0.5], eps };
        let ow = optimal_weights_mixture(&mix, 0.0, 250).unwrap();
        let exact = task_risk_exact(&ow.a, &rotated(&u1, &u2, 0.7, eps), 0.0, 250).unwrap().raw;
        assert!((exact - mixture2_risk_eps0(5, 0.0, 250, 250)).abs() < 1e-3);
    }

    #[test]
    fn k1_closed_form_matches_single_subspace() {
        let (us, _) = bases(4);
        let eps = 1e-9;
        let sigma = single(&us, eps);
        let ow = optimal_weights_task(&sigma, 0.5, 120).unwrap();
        let exact = task_risk_exact(&ow.a, &sigma, 0.5, 80).unwrap().raw;
        assert!((exact - mixture_k_risk_eps0(1, 5, 0.5, 120, 80)).abs() < 1e-5);
    }

    #[test]
    fn thresholds() {
        assert_eq!(threshold_bound(ThresholdKind::Mixture2, 5, 0.0, 0.5).unwrap(), 99.0);
        assert_eq!(threshold_prompt_length(ThresholdKind::Mixture2, 5, 0.0, 0.5).unwrap(), 100);
        for r in [2, 5, 8] {
            for s in [0.0, 1.0] {
                let mut last = usize::MAX;
                for i in 1..40 {
                    let delta = r as f64 * i as f64 / 40.0;
                    let a = threshold_prompt_length(ThresholdKind::Mixture2, r, s, delta).unwrap();
                    assert_eq!(a, threshold_prompt_length(ThresholdKind::MixtureK(2), r, s, delta).unwrap());
                    assert!(a <= last);
                    last = a;
                }
            }
        }
        assert!(matches!(threshold_prompt_length(ThresholdKind::Lora, 5, 0.0, 5.0), Err(Error::Domain(_))));
        assert!(matches!(threshold_prompt_length(ThresholdKind::Lora, 5, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lora_closed_form_limits() {
        assert!(lora_risk_eps0(5, 0.0, 1_000_000, 1_000_000) < 1e-4);
        let big = 1_000_000_000;
        assert!((lora_risk_eps0(5, 1.0, big, big) - lora_risk_eps0(5, 0.0, big, big) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lora_closed_form_matches_exact_trace() {
        use crate::attention::{adapted_kernel, lora_analytic_adapters};
        let (us, up) = bases(5);
        let eps = 1e-9;
        let ow = optimal_weights_task(&single(&us, eps), 0.0, 250).unwrap();
        let ahat = adapted_kernel(&ow.a, &lora_analytic_adapters(&up, 250, eps, ow.m_s).unwrap());
        for theta in [0.0, FRAC_PI_4, FRAC_PI_2] {
            let exact = task_risk_exact(&ahat, &rotated(&us, &up, theta, eps), 0.0, 250).unwrap().raw;
            assert!((exact - lora_risk_eps0(5, 0.0, 250, 250)).abs() < 1e-5, "{theta}: {exact}");
        }
    }

    #[test]
    fn feature_formulas_agree_for_isotropic_test() {
        // With Σ_t = I every ordering of the traces coincides.
        let (us, _) = bases(6);
        let ow = optimal_weights_feature(&single(&us, 0.1), 0.3, 50).unwrap();
        let id = DMatrix::identity(20, 20);
        let a = feature_risk_exact(&ow.a, &id, 0.3, 40).unwrap().raw;
        let b = feature_risk_as_printed(&ow.a, &id, 0.3, 40).unwrap().raw;
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn feature_asymptotic_behaviour() {
        assert!((feature_risk_asymptotic(5, 0.0, 0.0, 0.0).unwrap()).abs() < 1e-15);
        assert!((feature_risk_asymptotic(5, 0.0, 1e-8, 0.4).unwrap() - 0.16).abs() < 1e-6);
        assert!(feature_risk_asymptotic(5, FRAC_PI_2, 1e-6, 0.0).unwrap() > 1e6 * 5.0);
        assert!(matches!(feature_risk_asymptotic(5, 0.3, 0.0, 0.0), Err(Error::Diverges(_))));
        // Hand evaluation at θ = π/4, ε = 0.1, r = 5:
        // c₁ = 1.2·1.1 + 0.01 = 1.33, c₂ = 2.2,
        // cos² coefficient (1.33 − 2.42)/1.21, sin² coefficient (1.33 − 0.22)/0.01.
        let hand = (1.33 - 2.42) / 1.21 * 2.5 + 111.0 * 2.5 + 5.0;
        assert!((feature_risk_asymptotic(5, FRAC_PI_4, 0.1, 0.0).unwrap() - hand).abs() < 1e-9);
    }

    #[test]
    fn feature_asymptotic_against_exact() {
        let (us, up) = bases(7);
        let eps = 0.1;
        let n = 100_000;
        let ow = optimal_weights_feature(&single(&us, eps), 0.0, n).unwrap();
        let at = |theta: f64| {
            let exact = feature_risk_exact(&ow.a, &rotated(&us, &up, theta, eps), 0.0, n).unwrap().raw;
            (exact, feature_risk_asymptotic(5, theta, eps, 0.0).unwrap())
        };
        let (e0, l0) = at(0.0);
        assert!((e0 - l0).abs() < 5.0 * eps, "{e0} {l0}");
        let (e, l) = at(FRAC_PI_2);
        assert!(((e - l) / e).abs() < 0.05, "{e} vs {l}");
        // At intermediate angles A and Σ_t do not commute and the law is off
        // by far more than O(ε); the exact trace formula is the reference.
        let (e, l) = at(FRAC_PI_4);
        assert!(e.is_finite() && l > 1.5 * e, "{e} vs {l}");
    }

    #[test]
    fn training_risk_properties() {
        let id = DMatrix::<f64>::identity(20, 20);
        assert!(optimal_training_risk(&id, 0.0, 10_000_000).unwrap() < 1e-4);
        let (us, up) = bases(8);
        let mix = build_covariance(&CovarianceModel::MixtureK { bases: vec![us, up], weights: vec![0.5, 0.5], eps: 1e-6 }).unwrap();
        let mut last = f64::INFINITY;
        for n in [1, 2, 5, 10, 50, 100, 500, 1000] {
            let v = optimal_training_risk(&mix, 0.5, n).unwrap();
            assert!(v <= last + 1e-12);
            last = v;
        }
        // Both training-risk forms equal the general exact forms at Σ_t = Σ_s, m = n.
        let ow = optimal_weights_task(&mix, 0.5, 30).unwrap();
        let general = task_risk_exact(&ow.a, &mix, 0.5, 30).unwrap().raw;
        assert!((general - optimal_training_risk(&mix, 0.5, 30).unwrap()).abs() < 1e-10);
        let owf = optimal_weights_feature(&mix, 0.5, 30).unwrap();
        let general_f = feature_risk_exact(&owf.a, &mix, 0.5, 30).unwrap().raw;
        assert!((general_f - optimal_training_risk_feature(&mix, 0.5, 30).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn gatmiry_pair() {
        let (s, t) = gatmiry_example_covariances(3);
        assert_eq!(s, DMatrix::identity(5, 5));
        let (vals, _) = sym_eigen_sorted(&t);
        for (v, e) in vals.iter().zip([0.25, 0.5, 1.0, 1.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert!((t.trace() - 3.75).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for n in [10, 100, 1000, 10_000, 100_000] {
            let ow = optimal_weights_task(&s, 0.0, n).unwrap();
            let v = task_risk_exact(&ow.a, &t, 0.0, n).unwrap().raw;
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-3);
    }
}
