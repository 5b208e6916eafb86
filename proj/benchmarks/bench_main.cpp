// Microbenchmarks for the tensor engine and the episodic training step.

#include <benchmark/benchmark.h>

#include <vector>

#include "dgsml/diffengine.hpp"
#include "dgsml/domains.hpp"
#include "dgsml/model.hpp"
#include "dgsml/rng.hpp"
#include "dgsml/trainer.hpp"

namespace {

using namespace dgsml;

Tensor random_matrix(Rng& rng, std::size_t m, std::size_t n) {
  std::vector<double> v(m * n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return matrix(m, n, std::move(v));
}

DomainBatch sample_domain_batch(const DomainDataset& d, std::size_t batch, Rng& rng) {
  DomainBatch b;
  b.domain_id = d.domain_id;
  std::vector<double> xl;
  std::vector<int> yl;
  for (std::size_t i = 0; i < batch; ++i) {
    const Sample& s = d.labeled[rng.uniform_index(d.labeled.size())];
    xl.insert(xl.end(), s.features.begin(), s.features.end());
    yl.push_back(s.label);
  }
  b.labeled_x = matrix(batch, 2, std::move(xl));
  b.labels = std::move(yl);
  if (!d.unlabeled.empty()) {
    std::vector<double> xu;
    for (std::size_t i = 0; i < batch; ++i) {
      const Sample& s = d.unlabeled[rng.uniform_index(d.unlabeled.size())];
      xu.insert(xu.end(), s.features.begin(), s.features.end());
    }
    b.unlabeled_x = matrix(batch, 2, std::move(xu));
  }
  return b;
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(rng, n, n);
  const Tensor b = random_matrix(rng, n, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
}
BENCHMARK(BM_MatmulForward)->Arg(16)->Arg(32)->Arg(64);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  ModelConfig config;
  const ModelParams params = init_params(config, 3);
  Rng rng(2);
  const Tensor x = random_matrix(rng, batch, config.input_dim);
  std::vector<int> y(batch);
  for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<int>(i % 2);
  for (auto _ : state) {
    Graph graph;
    const ModelParams lifted = lift(graph, params);
    const Tensor loss = task_loss(lifted, x, y);
    benchmark::DoNotOptimize(grad(loss, lifted.all()));
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(16)->Arg(48);

void BM_SecondOrderBackward(benchmark::State& state) {
  ModelConfig config;
  const ModelParams params = init_params(config, 4);
  Rng rng(5);
  const Tensor x = random_matrix(rng, 16, config.input_dim);
  std::vector<int> y(16);
  for (std::size_t i = 0; i < 16; ++i) y[i] = static_cast<int>(i % 2);
  for (auto _ : state) {
    Graph graph;
    const ModelParams lifted = lift(graph, params);
    const Tensor inner_loss = task_loss(lifted, x, y);
    const auto inner_grads = grad(inner_loss, lifted.all(), /*create_graph=*/true);
    const ModelParams inner = sgd_step(lifted, inner_grads, 0.1, /*track=*/true);
    const Tensor outer_loss = task_loss(inner, x, y);
    benchmark::DoNotOptimize(grad(outer_loss, lifted.all()));
  }
}
BENCHMARK(BM_SecondOrderBackward);

void BM_FullEpisode(benchmark::State& state) {
  const DomainCollection data = generate_rotated_moons(200, {0, 30, 60, 90}, 0.1, 7);
  const MaskResult masked = mask_labels(data, 0.95, 3);
  ModelConfig config;
  HyperParams hp;
  const ModelParams params = init_params(config, 6);
  Rng rng(7);
  const std::vector<int> ids = masked.collection.domain_ids();
  for (auto _ : state) {
    Graph graph;
    const ModelParams lifted = lift(graph, params);
    const EpisodeSplit split = split_domains(ids, rng);
    std::vector<DomainBatch> train_batches, test_batches;
    for (int id : split.train_ids)
      train_batches.push_back(sample_domain_batch(masked.collection.domain_by_id(id),
                                                  hp.batch_per_domain, rng));
    test_batches.push_back(sample_domain_batch(masked.collection.domain_by_id(split.test_id),
                                               hp.batch_per_domain, rng));
    const MetaTrainResult mt = meta_train_step(lifted, train_batches, hp);
    const MetaTestResult ts = meta_test_step(mt.inner, train_batches, test_batches, hp);
    benchmark::DoNotOptimize(outer_update(lifted, mt.loss, ts.loss, hp));
  }
}
BENCHMARK(BM_FullEpisode);

}  // namespace

BENCHMARK_MAIN();
