use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use subspace_icl::geometry::{haar_orthogonal, split_basis, CovarianceModel, PrincipalAngles};
use subspace_icl::montecarlo::{ModelSource, PreparedPlan, Sampler, SimulationPlan};
use subspace_icl::risk::{ShiftKind, ShiftScenario};
use subspace_icl::Execution;

fn plan(sampler: Sampler, m: usize, trials: usize) -> SimulationPlan {
    let q = haar_orthogonal(20, 1).unwrap();
    let (us, up) = split_basis(&q, 5).unwrap();
    let eps = 1e-6;
    SimulationPlan {
        scenario: ShiftScenario {
            kind: ShiftKind::Task,
            train_cov: CovarianceModel::SingleSubspace { basis: us.clone(), eps },
            test_cov: CovarianceModel::RotatedSubspace {
                base: us,
                orth: up,
                angles: PrincipalAngles::uniform(0.6, 5).unwrap(),
                eps,
            },
            noise_sd: 0.0,
            n_train: m,
            m_test: m,
        },
        model_source: ModelSource::OptimalTask,
        trials,
        base_seed: 7,
        sampler,
    }
}

fn bench_estimate(c: &mut Criterion) {
    let cases = [("stream_m250", Sampler::Stream, 250, 2_000), ("sufficient_m2000", Sampler::Sufficient, 2_000, 20_000)];
    let mut group = c.benchmark_group("risk_estimate");
    group.sample_size(10);
    for (name, sampler, m, trials) in cases {
        let prepared = PreparedPlan::new(&plan(sampler, m, trials)).unwrap();
        group.throughput(Throughput::Elements(trials as u64));
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(label, name), &exec, |b, exec| {
                b.iter(|| black_box(prepared.estimate(*exec)))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_estimate);
criterion_main!(benches);
