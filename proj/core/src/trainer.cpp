#include "dgsml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dgsml/errors.hpp"

namespace dgsml {

void HyperParams::validate() const {
  if (!(alpha0 > 0.0) || !(alpha1 > 0.0))
    throw ConfigError("learning rates must be > 0");
  if (beta0 < 0.0 || beta1 < 0.0) throw ConfigError("beta coefficients must be >= 0");
  if (batch_per_domain < 1) throw ConfigError("batch_per_domain must be >= 1");
}

EpisodeSplit split_domains(const std::vector<int>& domain_ids, Rng& rng) {
  if (domain_ids.size() < 2)
    throw ConfigError("episodic split needs >= 2 source domains");
  EpisodeSplit split;
  const std::size_t pick = rng.uniform_index(domain_ids.size());
  split.test_id = domain_ids[pick];
  for (std::size_t i = 0; i < domain_ids.size(); ++i)
    if (i != pick) split.train_ids.push_back(domain_ids[i]);
  return split;
}

namespace {

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

DomainBatch sample_batch(const DomainDataset& domain, std::size_t batch_size, Rng& rng) {
  if (domain.labeled.empty())
    throw ContractError("domain " + std::to_string(domain.domain_id) +
                        " has no labeled samples");
  DomainBatch batch;
  batch.domain_id = domain.domain_id;

  std::vector<double> x;
  std::vector<int> y;
  const std::size_t dim = domain.labeled.front().features.size();
  x.reserve(batch_size * dim);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const Sample& s = domain.labeled[rng.uniform_index(domain.labeled.size())];
    x.insert(x.end(), s.features.begin(), s.features.end());
    y.push_back(s.label);
  }
  batch.labeled_x = matrix(batch_size, dim, std::move(x));
  batch.labels = std::move(y);

  const std::size_t m_u = domain.unlabeled.size();
  if (m_u > 0) {
    std::vector<double> xu;
    if (m_u <= batch_size) {
      // smaller unlabeled pools contribute everything they have
      xu.reserve(m_u * dim);
      for (const Sample& s : domain.unlabeled)
        xu.insert(xu.end(), s.features.begin(), s.features.end());
      batch.unlabeled_x = matrix(m_u, dim, std::move(xu));
    } else {
      xu.reserve(batch_size * dim);
      for (std::size_t i = 0; i < batch_size; ++i) {
        const Sample& s = domain.unlabeled[rng.uniform_index(m_u)];
        xu.insert(xu.end(), s.features.begin(), s.features.end());
      }
      batch.unlabeled_x = matrix(batch_size, dim, std::move(xu));
    }
  }
  return batch;
}

struct PooledBatch {
  Tensor x;
  std::vector<int> y;
};

PooledBatch pool_labeled(const std::vector<DomainBatch>& batches) {
  std::vector<Tensor> xs;
  PooledBatch pooled;
  for (const DomainBatch& b : batches) {
    if (b.labels.empty())
      throw ContractError("episode batch for domain " + std::to_string(b.domain_id) +
                          " has no labeled samples");
    xs.push_back(b.labeled_x);
    pooled.y.insert(pooled.y.end(), b.labels.begin(), b.labels.end());
  }
  pooled.x = xs.size() == 1 ? xs.front() : concat_rows(xs);
  return pooled;
}

// Combined (labeled + weighted pseudo-labeled) centroids of one batch under
// the given parameters.
CentroidSet batch_combined_centroids(const ModelParams& params, const DomainBatch& batch,
                                     std::size_t num_classes) {
  const Tensor features = extract_features(params, batch.labeled_x);
  PseudoLabeledBatch pseudo;
  if (batch.unlabeled_x) pseudo = pseudo_label(params, *batch.unlabeled_x);
  return combined_centroids(features, batch.labels, pseudo, num_classes, batch.domain_id);
}

}  // namespace

MetaTrainResult meta_train_step(const ModelParams& params,
                                const std::vector<DomainBatch>& train_batches,
                                const HyperParams& hp) {
  if (train_batches.empty()) throw ContractError("meta_train_step: no meta-train batches");
  const std::size_t num_classes = params.phi[0].value.cols();

  const PooledBatch pooled = pool_labeled(train_batches);
  const Tensor l_task = task_loss(params, pooled.x, pooled.y);

  MetaTrainResult result;
  result.task_value = l_task.item();
  Tensor loss = l_task;
  if (hp.beta0 > 0.0) {
    Tensor l_sl = scalar(0.0);
    bool any = false;
    for (const DomainBatch& b : train_batches) {
      if (!b.unlabeled_x) continue;  // no unlabeled samples: the term is 0
      const Tensor features = extract_features(params, b.labeled_x);
      const PseudoLabeledBatch pseudo = pseudo_label(params, *b.unlabeled_x);
      const CentroidSet labeled_only =
          labeled_centroids(features, b.labels, num_classes, b.domain_id);
      const CentroidSet combined =
          combined_centroids(features, b.labels, pseudo, num_classes, b.domain_id);
      l_sl = add(l_sl, semi_supervised_loss(labeled_only, combined));
      any = true;
    }
    if (any) {
      result.semi_supervised_value = l_sl.item();
      loss = add(loss, scalar_mul(l_sl, hp.beta0));
    }
  }
  result.loss = loss;

  // the inner gradients keep their own graph history only when the outer
  // update is second order
  const std::vector<Tensor> grads = grad(loss, params.all(), hp.second_order);
  result.inner = sgd_step(params, grads, hp.alpha0, /*track=*/true);
  return result;
}

MetaTestResult meta_test_step(const ModelParams& inner,
                              const std::vector<DomainBatch>& train_batches,
                              const std::vector<DomainBatch>& test_batches,
                              const HyperParams& hp) {
  if (test_batches.empty()) throw ContractError("meta_test_step: no meta-test batches");
  const std::size_t num_classes = inner.phi[0].value.cols();

  const PooledBatch pooled = pool_labeled(test_batches);
  const Tensor l_task = task_loss(inner, pooled.x, pooled.y);

  MetaTestResult result;
  result.task_value = l_task.item();
  Tensor loss = l_task;
  if (hp.beta1 > 0.0) {
    std::vector<CentroidSet> train_sets, test_sets;
    for (const DomainBatch& b : train_batches)
      train_sets.push_back(batch_combined_centroids(inner, b, num_classes));
    for (const DomainBatch& b : test_batches)
      test_sets.push_back(batch_combined_centroids(inner, b, num_classes));
    const Tensor l_align = alignment_loss(train_sets, test_sets);
    result.alignment_value = l_align.item();
    loss = add(loss, scalar_mul(l_align, hp.beta1));
  }
  result.loss = loss;
  return result;
}

ModelParams outer_update(const ModelParams& lifted_params, const Tensor& meta_train_loss,
                         const Tensor& meta_test_loss, const HyperParams& hp,
                         std::size_t iteration) {
  const Tensor total = add(meta_train_loss, meta_test_loss);
  const std::vector<Tensor> grads = grad(total, lifted_params.all(), /*create_graph=*/false);
  for (const Tensor& g : grads)
    if (!all_finite(g)) throw DivergenceError("non-finite outer gradient", iteration);
  ModelParams next = sgd_step(lifted_params, grads, hp.alpha1, /*track=*/false);
  for (const Tensor& t : next.all())
    if (!all_finite(t)) throw DivergenceError("non-finite parameter value", iteration);
  return next;
}

namespace {

void validate_sources(const DomainCollection& sources, std::size_t min_domains) {
  if (sources.domains.size() < min_domains)
    throw ConfigError("training needs >= " + std::to_string(min_domains) +
                      " source domains");
  for (const DomainDataset& d : sources.domains)
    if (d.labeled.empty())
      throw ConfigError("domain " + std::to_string(d.domain_id) +
                        " has no labeled samples");
}

void maybe_eval(const EvalHook& hook, std::size_t iteration, std::size_t total,
                const ModelParams& params, TrainLog& log) {
  if (!hook) return;
  if (iteration % kEvalInterval == 0 || iteration == total)
    log.evals.push_back({iteration, hook(iteration, params)});
}

}  // namespace

TrainResult train(const DomainCollection& sources, const ModelConfig& config,
                  const HyperParams& hp, const EvalHook& eval_hook) {
  hp.validate();
  config.validate();
  validate_sources(sources, 2);

  ModelParams params = init_params(config, hp.seed);
  TrainLog log;
  Rng rng(mix_seed(hp.seed, 0x657069736f6465ULL));  // episode stream
  const std::vector<int> ids = sources.domain_ids();

  for (std::size_t iter = 0; iter < hp.iterations; ++iter) {
    Graph graph;
    const ModelParams lifted = lift(graph, params);

    const EpisodeSplit split = split_domains(ids, rng);
    std::vector<DomainBatch> train_batches;
    for (int id : split.train_ids)
      train_batches.push_back(sample_batch(sources.domain_by_id(id), hp.batch_per_domain, rng));
    std::vector<DomainBatch> test_batches;
    test_batches.push_back(
        sample_batch(sources.domain_by_id(split.test_id), hp.batch_per_domain, rng));

    const MetaTrainResult mt = meta_train_step(lifted, train_batches, hp);
    const MetaTestResult ts = meta_test_step(mt.inner, train_batches, test_batches, hp);
    params = outer_update(lifted, mt.loss, ts.loss, hp, iter);

    log.iterations.push_back({iter, mt.task_value, mt.semi_supervised_value, ts.task_value,
                              ts.alignment_value,
                              mt.loss.item() + ts.loss.item()});
    maybe_eval(eval_hook, iter + 1, hp.iterations, params, log);
  }
  return {params, log};
}

TrainResult deepall_train(const DomainCollection& sources, const ModelConfig& config,
                          const HyperParams& hp, const EvalHook& eval_hook) {
  hp.validate();
  config.validate();
  validate_sources(sources, 1);

  std::vector<Sample> pool;
  for (const DomainDataset& d : sources.domains)
    pool.insert(pool.end(), d.labeled.begin(), d.labeled.end());

  ModelParams params = init_params(config, hp.seed);
  TrainLog log;
  Rng rng(mix_seed(hp.seed, 0x657069736f6465ULL));
  const std::size_t batch = hp.batch_per_domain * sources.domains.size();
  const std::size_t dim = pool.front().features.size();

  for (std::size_t iter = 0; iter < hp.iterations; ++iter) {
    Graph graph;
    const ModelParams lifted = lift(graph, params);

    std::vector<double> x;
    x.reserve(batch * dim);
    std::vector<int> y;
    y.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      const Sample& s = pool[rng.uniform_index(pool.size())];
      x.insert(x.end(), s.features.begin(), s.features.end());
      y.push_back(s.label);
    }

    const Tensor loss = task_loss(lifted, matrix(batch, dim, std::move(x)), y);
    const double loss_value = loss.item();
    const std::vector<Tensor> grads = grad(loss, lifted.all(), /*create_graph=*/false);
    for (const Tensor& g : grads)
      if (!all_finite(g)) throw DivergenceError("non-finite gradient", iter);
    params = sgd_step(lifted, grads, hp.alpha0, /*track=*/false);
    for (const Tensor& t : params.all())
      if (!all_finite(t)) throw DivergenceError("non-finite parameter value", iter);

    log.iterations.push_back({iter, loss_value, 0.0, 0.0, 0.0, loss_value});
    maybe_eval(eval_hook, iter + 1, hp.iterations, params, log);
  }
  return {params, log};
}

double evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& samples) {
  std::vector<Sample> labeled;
  for (const Sample& s : samples)
    if (s.label != kUnlabeled) labeled.push_back(s);
  if (labeled.empty()) throw ContractError("evaluate_accuracy: no labeled samples");

  NoGradGuard guard;
  const Tensor probs = predict(params, features_tensor(labeled));
  const std::vector<int> pred = argmax_rows(probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (pred[i] == labeled[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

}  // namespace dgsml
