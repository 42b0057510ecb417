//! Subspaces, principal angles and the covariance models built from them.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, sym_eigen_sorted};

const ORTHO_TOL: f64 = 1e-10;

/// A d×r matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Validates `1 ≤ r ≤ d` and `‖UᵀU − I‖_F ≤ 1e-10`.
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        let (d, r) = columns.shape();
        if r == 0 || d == 0 {
            return Err(Error::InvalidDimension(format!("basis shape {d}x{r}")));
        }
        if r > d {
            return Err(Error::RankTooLarge { rank: r, dim: d, why: "r ≤ d" });
        }
        let deviation = (columns.transpose() * &columns - DMatrix::<f64>::identity(r, r)).norm();
        if !(deviation <= ORTHO_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_columns(self) -> DMatrix<f64> {
        self.columns
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    /// Orthogonal projector U Uᵀ.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.columns * self.columns.transpose()
    }

    /// Standard-basis frame e_{offset+1}, …, e_{offset+r} in R^d.
    pub fn coordinate(d: usize, offset: usize, r: usize) -> Result<Self> {
        if offset + r > d {
            return Err(Error::RankTooLarge { rank: offset + r, dim: d, why: "offset + r ≤ d" });
        }
        Self::new(DMatrix::from_fn(d, r, |i, j| if i == offset + j { 1.0 } else { 0.0 }))
    }
}

/// Principal angles θ_1..θ_r, each in [0, π/2].
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles {
    angles: Vec<f64>,
}

impl PrincipalAngles {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidDimension("no angles".into()));
        }
        if let Some(bad) = angles.iter().find(|t| !(**t >= 0.0 && **t <= FRAC_PI_2 + 1e-12)) {
            return Err(Error::Domain(format!("principal angle {bad} outside [0, π/2]")));
        }
        Ok(Self { angles: angles.into_iter().map(|t| t.min(FRAC_PI_2)).collect() })
    }

    /// The same angle repeated for all r directions.
    pub fn uniform(theta: f64, r: usize) -> Result<Self> {
        Self::new(vec![theta; r])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.angles.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// How a task or feature covariance is assembled.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    /// U Uᵀ + ε I.
    SingleSubspace { basis: OrthonormalBasis, eps: f64 },
    /// U_t U_tᵀ + ε I with U_t = U_s cos Θ + U_⊥ sin Θ.
    RotatedSubspace { base: OrthonormalBasis, orth: OrthonormalBasis, angles: PrincipalAngles, eps: f64 },
    /// Draws component k with probability γ_k; second moment Σ γ_k U_k U_kᵀ + ε I.
    MixtureK { bases: Vec<OrthonormalBasis>, weights: Vec<f64>, eps: f64 },
    /// Ū Ūᵀ + ε I with Ū = Σ α_k U_k.
    SpanInterpolated { bases: Vec<OrthonormalBasis>, coefficients: Vec<f64>, eps: f64 },
    /// A given symmetric PSD matrix.
    Explicit { matrix: DMatrix<f64> },
}

impl CovarianceModel {
    pub fn ambient_dim(&self) -> usize {
        match self {
            Self::SingleSubspace { basis, .. } => basis.ambient_dim(),
            Self::RotatedSubspace { base, .. } => base.ambient_dim(),
            Self::MixtureK { bases, .. } | Self::SpanInterpolated { bases, .. } => {
                bases.first().map_or(0, OrthonormalBasis::ambient_dim)
            }
            Self::Explicit { matrix } => matrix.nrows(),
        }
    }

    pub fn eps(&self) -> Option<f64> {
        match self {
            Self::SingleSubspace { eps, .. }
            | Self::RotatedSubspace { eps, .. }
            | Self::MixtureK { eps, .. }
            | Self::SpanInterpolated { eps, .. } => Some(*eps),
            Self::Explicit { .. } => None,
        }
    }

    /// Checks the variant invariants. `eps = 0` is accepted here (it is
    /// useful for sampling exactly inside a subspace); building optimal
    /// weights from such a model fails with a singular-covariance error.
    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.eps() {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::InvalidEps(eps));
            }
        }
        match self {
            Self::SingleSubspace { .. } => Ok(()),
            Self::RotatedSubspace { base, orth, angles, .. } => {
                check_same_shape(base, orth)?;
                if angles.len() != base.rank() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} angles for rank {}",
                        angles.len(),
                        base.rank()
                    )));
                }
                check_orthogonal_pair(base, orth)
            }
            Self::MixtureK { bases, weights, .. } => {
                if bases.is_empty() || bases.len() != weights.len() {
                    return Err(Error::MixtureWeights(format!(
                        "{} bases but {} weights",
                        bases.len(),
                        weights.len()
                    )));
                }
                if weights.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                    return Err(Error::MixtureWeights("weights must be non-negative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::MixtureWeights(format!("weights sum to {total}")));
                }
                check_family(bases)
            }
            Self::SpanInterpolated { bases, coefficients, .. } => {
                if bases.is_empty() || bases.len() != coefficients.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} bases but {} coefficients",
                        bases.len(),
                        coefficients.len()
                    )));
                }
                let sum_sq: f64 = coefficients.iter().map(|a| a * a).sum();
                if (sum_sq - 1.0).abs() >= 1e-12 {
                    return Err(Error::CoefficientNorm { sum_sq });
                }
                check_family(bases)
            }
            Self::Explicit { matrix } => {
                if !is_symmetric(matrix, 1e-12) || matrix.nrows() == 0 {
                    return Err(Error::ShapeMismatch("explicit covariance must be square and symmetric".into()));
                }
                let (vals, _) = sym_eigen_sorted(matrix);
                if vals[0] < -1e-10 * vals[vals.len() - 1].abs().max(1.0) {
                    return Err(Error::SingularCovariance);
                }
                Ok(())
            }
        }
    }

    /// The low-rank part of a single-Gaussian variant: the basis U with
    /// w = U g + √ε z. `None` for mixtures and explicit matrices.
    pub fn effective_basis(&self) -> Result<Option<OrthonormalBasis>> {
        match self {
            Self::SingleSubspace { basis, .. } => Ok(Some(basis.clone())),
            Self::RotatedSubspace { base, orth, angles, .. } => rotate_basis(base, orth, angles).map(Some),
            Self::SpanInterpolated { bases, coefficients, .. } => {
                span_interpolated_basis(bases, coefficients).map(Some)
            }
            Self::MixtureK { .. } | Self::Explicit { .. } => Ok(None),
        }
    }
}

fn check_same_shape(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<()> {
    if a.columns.shape() != b.columns.shape() {
        return Err(Error::ShapeMismatch(format!(
            "bases {:?} and {:?}",
            a.columns.shape(),
            b.columns.shape()
        )));
    }
    Ok(())
}

fn check_orthogonal_pair(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<()> {
    let deviation = (a.columns.transpose() * &b.columns).norm();
    if deviation > ORTHO_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(())
}

fn check_family(bases: &[OrthonormalBasis]) -> Result<()> {
    for (k, a) in bases.iter().enumerate() {
        for b in &bases[k + 1..] {
            check_same_shape(a, b)?;
            check_orthogonal_pair(a, b)?;
        }
    }
    Ok(())
}

/// Haar-distributed d×d orthogonal matrix, deterministic in `seed`.
pub fn haar_orthogonal(d: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    haar_orthogonal_with(d, &mut rng)
}

/// QR of a Gaussian matrix with the signs of diag(R) folded into Q.
pub fn haar_orthogonal_with<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension("d must be at least 1".into()));
    }
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Splits Q into its first r columns and the next r columns.
pub fn split_basis(q: &DMatrix<f64>, r: usize) -> Result<(OrthonormalBasis, OrthonormalBasis)> {
    let d = q.nrows();
    if !q.is_square() {
        return Err(Error::ShapeMismatch(format!("expected square matrix, got {:?}", q.shape())));
    }
    if r == 0 {
        return Err(Error::InvalidDimension("r must be at least 1".into()));
    }
    if 2 * r > d {
        return Err(Error::RankTooLarge { rank: r, dim: d, why: "2r ≤ d" });
    }
    Ok((
        OrthonormalBasis::new(q.columns(0, r).into_owned())?,
        OrthonormalBasis::new(q.columns(r, r).into_owned())?,
    ))
}

/// U_t = U_s cos Θ + U_⊥ sin Θ.
pub fn rotate_basis(
    u_s: &OrthonormalBasis,
    u_perp: &OrthonormalBasis,
    angles: &PrincipalAngles,
) -> Result<OrthonormalBasis> {
    check_same_shape(u_s, u_perp)?;
    if angles.len() != u_s.rank() {
        return Err(Error::ShapeMismatch(format!("{} angles for rank {}", angles.len(), u_s.rank())));
    }
    let mut out = u_s.columns.clone();
    for (j, theta) in angles.as_slice().iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let col = u_s.columns.column(j) * c + u_perp.columns.column(j) * s;
        out.set_column(j, &col);
    }
    OrthonormalBasis::new(out)
}

/// Ū = Σ α_k U_k for pairwise orthogonal bases and Σ α_k² = 1.
pub fn span_interpolated_basis(bases: &[OrthonormalBasis], alpha: &[f64]) -> Result<OrthonormalBasis> {
    if bases.is_empty() || bases.len() != alpha.len() {
        return Err(Error::ShapeMismatch(format!("{} bases, {} coefficients", bases.len(), alpha.len())));
    }
    let sum_sq: f64 = alpha.iter().map(|a| a * a).sum();
    if (sum_sq - 1.0).abs() >= 1e-12 {
        return Err(Error::CoefficientNorm { sum_sq });
    }
    check_family(bases)?;
    let mut out = DMatrix::zeros(bases[0].ambient_dim(), bases[0].rank());
    for (b, a) in bases.iter().zip(alpha) {
        out += &b.columns * *a;
    }
    OrthonormalBasis::new(out)
}

/// Assembles the covariance described by `model`. For mixtures this is the
/// second moment Σ γ_k Σ_k.
pub fn build_covariance(model: &CovarianceModel) -> Result<DMatrix<f64>> {
    model.validate()?;
    let d = model.ambient_dim();
    let low_rank_plus_eps = |p: DMatrix<f64>, eps: f64| p + DMatrix::<f64>::identity(d, d) * eps;
    match model {
        CovarianceModel::SingleSubspace { basis, eps } => Ok(low_rank_plus_eps(basis.projector(), *eps)),
        CovarianceModel::RotatedSubspace { base, orth, angles, eps } => {
            Ok(low_rank_plus_eps(rotate_basis(base, orth, angles)?.projector(), *eps))
        }
        CovarianceModel::MixtureK { bases, weights, eps } => {
            let mut acc = DMatrix::zeros(d, d);
            for (b, g) in bases.iter().zip(weights) {
                acc += b.projector() * *g;
            }
            Ok(low_rank_plus_eps(acc, *eps))
        }
        CovarianceModel::SpanInterpolated { bases, coefficients, eps } => {
            Ok(low_rank_plus_eps(span_interpolated_basis(bases, coefficients)?.projector(), *eps))
        }
        CovarianceModel::Explicit { matrix } => Ok(matrix.clone()),
    }
}

/// Principal angles between two equal-rank subspaces, ascending.
pub fn principal_angles(u1: &OrthonormalBasis, u2: &OrthonormalBasis) -> Result<PrincipalAngles> {
    check_same_shape(u1, u2)?;
    let cross = u1.columns.transpose() * &u2.columns;
    let mut cosines: Vec<f64> = cross.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cosines.sort_by(|a, b| b.total_cmp(a));
    // arccos loses accuracy near 0; there the sines of the residual are used.
    let residual = &u2.columns - &u1.columns * &cross;
    let mut sines: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sines.sort_by(f64::total_cmp);
    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(c, s)| if *c > FRAC_1_SQRT_2 { s.asin() } else { c.acos() })
        .collect();
    angles.sort_by(f64::total_cmp);
    PrincipalAngles::new(angles)
}

/// ‖P − P̂‖²_F / ‖P‖²_F for orthonormal frames of possibly different rank.
pub fn subspace_error(u: &OrthonormalBasis, u_hat: &OrthonormalBasis) -> Result<f64> {
    subspace_error_frames(&u.columns, &u_hat.columns)
}

/// Same as [`subspace_error`] on raw frames (columns assumed orthonormal).
pub fn subspace_error_frames(u: &DMatrix<f64>, u_hat: &DMatrix<f64>) -> Result<f64> {
    if u.ncols() == 0 {
        return Err(Error::ZeroRank);
    }
    if u.nrows() != u_hat.nrows() {
        return Err(Error::ShapeMismatch(format!("ambient {} vs {}", u.nrows(), u_hat.nrows())));
    }
    let r = u.ncols() as f64;
    let overlap = (u.transpose() * u_hat).norm_squared();
    Ok(((r + u_hat.ncols() as f64 - 2.0 * overlap) / r).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_6, PI};

    fn pair(d: usize, r: usize, seed: u64) -> (OrthonormalBasis, OrthonormalBasis) {
        split_basis(&haar_orthogonal(d, seed).unwrap(), r).unwrap()
    }

    #[test]
    fn haar_one_by_one_is_sign() {
        for seed in 0..20 {
            let q = haar_orthogonal(1, seed).unwrap();
            assert_eq!(q[(0, 0)].abs(), 1.0);
        }
    }

    #[test]
    fn haar_is_orthogonal_and_deterministic() {
        let q = haar_orthogonal(20, 7).unwrap();
        let dev = (q.transpose() * &q - DMatrix::<f64>::identity(20, 20)).norm();
        assert!(dev < 1e-10, "{dev}");
        assert_eq!(q, haar_orthogonal(20, 7).unwrap());
        assert_ne!(q, haar_orthogonal(20, 8).unwrap());
    }

    #[test]
    fn haar_rejects_zero_dim() {
        assert!(matches!(haar_orthogonal(0, 1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn haar_first_entry_has_zero_mean() {
        // Q[0,0] has mean 0 and variance 1/d under Haar measure.
        let d = 4;
        let n = 10_000;
        let mean: f64 = (0..n).map(|s| haar_orthogonal(d, s).unwrap()[(0, 0)]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn split_identity() {
        let (a, b) = split_basis(&DMatrix::identity(4, 4), 2).unwrap();
        assert_eq!(a.columns(), &DMatrix::<f64>::identity(4, 4).columns(0, 2).into_owned());
        assert_eq!(b.columns()[(2, 0)], 1.0);
        assert_eq!(b.columns()[(3, 1)], 1.0);
    }

    #[test]
    fn split_rank_boundary() {
        let q = haar_orthogonal(20, 3).unwrap();
        let (a, b) = split_basis(&q, 5).unwrap();
        assert!((a.columns().transpose() * b.columns()).norm() < 1e-10);
        assert!(split_basis(&q, 10).is_ok());
        assert!(matches!(split_basis(&q, 11), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn rotation_endpoints() {
        let (us, up) = pair(20, 5, 11);
        let zero = rotate_basis(&us, &up, &PrincipalAngles::uniform(0.0, 5).unwrap()).unwrap();
        assert!((zero.columns() - us.columns()).amax() < 1e-15);
        let right = rotate_basis(&us, &up, &PrincipalAngles::uniform(FRAC_PI_2, 5).unwrap()).unwrap();
        assert!((right.columns() - up.columns()).amax() < 1e-15);
    }

    #[test]
    fn rotation_quarter_turn_angles() {
        let (us, up) = pair(20, 5, 12);
        let ut = rotate_basis(&us, &up, &PrincipalAngles::uniform(FRAC_PI_4, 5).unwrap()).unwrap();
        // Oracle: cosines are the singular values of U_sᵀU_t.
        let svd = (us.columns().transpose() * ut.columns()).svd(false, false);
        for s in svd.singular_values.iter() {
            assert!((s - FRAC_PI_4.cos()).abs() < 1e-10);
        }
        for t in principal_angles(&us, &ut).unwrap().as_slice() {
            assert!((t - FRAC_PI_4).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_shape_mismatch() {
        let (us, up) = pair(20, 5, 1);
        assert!(matches!(
            rotate_basis(&us, &up, &PrincipalAngles::uniform(0.1, 4).unwrap()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn span_interpolation_cases() {
        let (a, b) = pair(20, 5, 5);
        let one = span_interpolated_basis(std::slice::from_ref(&a), &[1.0]).unwrap();
        assert_eq!(one.columns(), a.columns());
        let (s, c) = FRAC_PI_6.sin_cos();
        let two = span_interpolated_basis(&[a.clone(), b.clone()], &[c, s]).unwrap();
        let rot = rotate_basis(&a, &b, &PrincipalAngles::uniform(FRAC_PI_6, 5).unwrap()).unwrap();
        assert!((two.columns() - rot.columns()).amax() < 1e-12);

        let q = haar_orthogonal(20, 9).unwrap();
        let bases: Vec<_> = (0..3).map(|k| OrthonormalBasis::new(q.columns(5 * k, 5).into_owned()).unwrap()).collect();
        let w = 1.0 / 3f64.sqrt();
        let bar = span_interpolated_basis(&bases, &[w, w, w]).unwrap();
        assert!((bar.columns().transpose() * bar.columns() - DMatrix::<f64>::identity(5, 5)).norm() < 1e-10);
        assert!(matches!(
            span_interpolated_basis(&bases, &[0.5, 0.5, 0.5]),
            Err(Error::CoefficientNorm { .. })
        ));
    }

    #[test]
    fn covariance_trace_and_mixture_spectrum() {
        let (us, up) = pair(20, 5, 21);
        let eps = 1e-3;
        let s = build_covariance(&CovarianceModel::SingleSubspace { basis: us.clone(), eps }).unwrap();
        assert!((s.trace() - (5.0 * (1.0 + eps) + 15.0 * eps)).abs() < 1e-12);

        let mix = CovarianceModel::MixtureK { bases: vec![us, up], weights: vec![0.5, 0.5], eps };
        let (vals, _) = sym_eigen_sorted(&build_covariance(&mix).unwrap());
        let mut expected = vec![eps; 10];
        expected.extend(vec![0.5 + eps; 10]);
        for (v, e) in vals.iter().zip(&expected) {
            assert!((v - e).abs() < 1e-10);
        }
        let id = DMatrix::<f64>::identity(5, 5);
        assert_eq!(build_covariance(&CovarianceModel::Explicit { matrix: id.clone() }).unwrap(), id);
    }

    #[test]
    fn mixture_rejects_overlapping_bases() {
        let (us, _) = pair(10, 2, 2);
        let bad = CovarianceModel::MixtureK { bases: vec![us.clone(), us], weights: vec![0.5, 0.5], eps: 0.1 };
        assert!(matches!(bad.validate(), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn subspace_error_cases() {
        let (us, up) = pair(20, 5, 31);
        assert!(subspace_error(&us, &us).unwrap().abs() < 1e-12);
        assert!((subspace_error(&us, &up).unwrap() - 2.0).abs() < 1e-12);
        let ut = rotate_basis(&us, &up, &PrincipalAngles::uniform(FRAC_PI_4, 5).unwrap()).unwrap();
        // Brute force on projectors.
        let p = us.projector();
        let q = ut.projector();
        let brute = (&p - &q).norm_squared() / p.norm_squared();
        let fast = subspace_error(&us, &ut).unwrap();
        assert!((fast - 1.0).abs() < 1e-10 && (brute - fast).abs() < 1e-10);
        assert!(matches!(subspace_error_frames(&DMatrix::zeros(5, 0), &DMatrix::zeros(5, 1)), Err(Error::ZeroRank)));
    }

    #[test]
    fn principal_angle_validation() {
        assert!(PrincipalAngles::new(vec![PI]).is_err());
        assert!(PrincipalAngles::new(vec![-0.1]).is_err());
        let (us, up) = pair(8, 3, 4);
        assert!(principal_angles(&us, &us).unwrap().as_slice().iter().all(|t| t.abs() < 1e-12));
        assert!(principal_angles(&us, &up).unwrap().as_slice().iter().all(|t| (t - FRAC_PI_2).abs() < 1e-12));
    }
}
