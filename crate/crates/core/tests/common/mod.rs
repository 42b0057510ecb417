#![allow(dead_code)]

use nalgebra::DMatrix;
use subspace_icl::geometry::{haar_orthogonal, split_basis, CovarianceModel, OrthonormalBasis, PrincipalAngles};
use subspace_icl::montecarlo::{ModelSource, Sampler, SimulationPlan};
use subspace_icl::risk::{ShiftKind, ShiftScenario};

pub const D: usize = 20;
pub const R: usize = 5;

pub struct Frames {
    pub q: DMatrix<f64>,
    pub us: OrthonormalBasis,
    pub up: OrthonormalBasis,
}

pub fn frames(seed: u64) -> Frames {
    let q = haar_orthogonal(D, seed).unwrap();
    let (us, up) = split_basis(&q, R).unwrap();
    Frames { q, us, up }
}

impl Frames {
    pub fn single(&self, eps: f64) -> CovarianceModel {
        CovarianceModel::SingleSubspace { basis: self.us.clone(), eps }
    }

    pub fn rotated(&self, theta: f64, eps: f64) -> CovarianceModel {
        CovarianceModel::RotatedSubspace {
            base: self.us.clone(),
            orth: self.up.clone(),
            angles: PrincipalAngles::uniform(theta, R).unwrap(),
            eps,
        }
    }

    pub fn mixture(&self, gamma: f64, eps: f64) -> CovarianceModel {
        CovarianceModel::MixtureK {
            bases: vec![self.us.clone(), self.up.clone()],
            weights: vec![gamma, 1.0 - gamma],
            eps,
        }
    }

    pub fn u2r(&self) -> OrthonormalBasis {
        OrthonormalBasis::new(self.q.columns(0, 2 * R).into_owned()).unwrap()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn plan(
    kind: ShiftKind,
    train: CovarianceModel,
    test: CovarianceModel,
    source: ModelSource,
    n: usize,
    trials: usize,
    seed: u64,
    sampler: Sampler,
) -> SimulationPlan {
    SimulationPlan {
        scenario: ShiftScenario { kind, train_cov: train, test_cov: test, noise_sd: 0.0, n_train: n, m_test: n },
        model_source: source,
        trials,
        base_seed: seed,
        sampler,
    }
}

pub fn theta_grid() -> Vec<f64> {
    (0..9).map(|k| k as f64 * std::f64::consts::FRAC_PI_2 / 8.0).collect()
}
