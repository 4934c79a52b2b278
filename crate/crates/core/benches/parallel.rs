use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use koopman_mpc::dataset::prepare;
use koopman_mpc::koopman::{loss_and_grads, Architecture, KoopmanModel, LossWeights};
use koopman_mpc::nnet::Tensor;
use koopman_mpc::plant::{generate_flights, ExcitationConfig, PlantParams};
use koopman_mpc::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn head(t: &Tensor, rows: usize) -> Tensor {
    Tensor::from_vec(rows, t.cols(), t.values()[..rows * t.cols()].to_vec()).unwrap()
}

fn loss_gradients(c: &mut Criterion) {
    let cfg = ExcitationConfig { records: 8, ..ExcitationConfig::default() };
    let records = generate_flights(&PlantParams::default(), &cfg, 1, Execution::Parallel).unwrap();
    let (norm, train, ..) = prepare(&records, [0.8, 0.1, 0.1]).unwrap();
    let model = KoopmanModel::init(&Architecture::default(), norm, 1).unwrap();

    let mut group = c.benchmark_group("loss_and_grads");
    for rows in [32, 256, 1024] {
        let (x, u, xn) = (head(&train.x, rows), head(&train.u, rows), head(&train.x_next, rows));
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, rows), &rows, |b, _| {
                b.iter(|| loss_and_grads(&model, &x, &u, &xn, LossWeights::default(), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn flight_generation(c: &mut Criterion) {
    let cfg = ExcitationConfig { records: 8, ..ExcitationConfig::default() };
    let plant = PlantParams::default();
    let mut group = c.benchmark_group("generate_flights");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| generate_flights(&plant, &cfg, 3, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, loss_gradients, flight_generation);
criterion_main!(benches);
