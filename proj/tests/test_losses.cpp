#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "dgsml/diffengine.hpp"
#include "dgsml/errors.hpp"
#include "dgsml/gradcheck.hpp"
#include "dgsml/losses.hpp"
#include "dgsml/model.hpp"
#include "dgsml/rng.hpp"
#include "support/naive_oracles.hpp"

using namespace dgsml;
namespace oracle = dgsml::testing;

namespace {

// identity model: features == inputs, logits == features (C = input_dim)
ModelParams identity_model(std::size_t dim) {
  ModelConfig config;
  config.input_dim = dim;
  config.hidden_dims = {};
  config.feature_dim = dim;
  config.num_classes = dim;
  ModelParams p = init_params(config, 0);
  std::vector<Tensor> t = p.all();
  std::vector<double> eye(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  t[0] = matrix(dim, dim, eye);
  t[1] = zeros({dim});
  t[2] = matrix(dim, dim, eye);
  t[3] = zeros({dim});
  return with_tensors(p, t);
}

CentroidSet make_set(const std::vector<std::optional<std::vector<double>>>& centroids,
                     int domain_id,
                     CentroidSet::Variant variant = CentroidSet::Variant::kLabeledUnlabeled) {
  CentroidSet set;
  set.domain_id = domain_id;
  set.variant = variant;
  for (const auto& c : centroids) {
    if (c)
      set.centroids.push_back(row_vector(*c));
    else
      set.centroids.push_back(std::nullopt);
  }
  return set;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("task loss: near one-hot prediction costs nothing") {
  const ModelParams p = identity_model(2);
  // logits with a 60-unit margin: -log softmax rounds to exactly 0
  const Tensor x = matrix(2, 2, {60, 0, 0, 60});
  const Tensor loss = task_loss(p, x, {0, 1});
  CHECK(loss.item() < 1e-12);
}

TEST_CASE("task loss: uniform prediction costs ln C") {
  const ModelParams p = identity_model(2);
  const Tensor x = matrix(3, 2, {0, 0, 0, 0, 0, 0});
  const Tensor loss = task_loss(p, x, {0, 1, 0});
  CHECK(loss.item() == doctest::Approx(std::numbers::ln2).epsilon(1e-14));
}

TEST_CASE("task loss is invariant under batch permutation") {
  const ModelParams p = init_params({2, {8}, 4, 3}, 5);
  Rng rng(1);
  std::vector<double> x(6 * 2);
  for (double& v : x) v = rng.uniform(-1, 1);
  const std::vector<int> y = {0, 1, 2, 0, 1, 2};
  const double base = task_loss(p, matrix(6, 2, x), y).item();

  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<double> xp(12);
  std::vector<int> yp(6);
  for (std::size_t i = 0; i < 6; ++i) {
    xp[2 * i] = x[2 * perm[i]];
    xp[2 * i + 1] = x[2 * perm[i] + 1];
    yp[i] = y[perm[i]];
  }
  const double permuted = task_loss(p, matrix(6, 2, xp), yp).item();
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("task loss rejects out-of-range labels") {
  const ModelParams p = identity_model(2);
  const Tensor x = matrix(1, 2, {0, 0});
  CHECK_THROWS_AS(task_loss(p, x, {2}), ContractError);
  CHECK_THROWS_AS(task_loss(p, x, {-1}), ContractError);
  CHECK_THROWS_AS(task_loss(p, x, {0, 1}), ContractError);  // count mismatch
}

TEST_CASE("pseudo-label weights: uniform, one-hot, and hand-computed") {
  const ModelParams p4 = identity_model(4);
  const PseudoLabeledBatch uniform = pseudo_label(p4, matrix(1, 4, {0, 0, 0, 0}));
  CHECK(std::abs(uniform.weights.item()) < 1e-12);
  CHECK(uniform.labels[0] == 0);  // tie -> lowest class index

  const ModelParams p2 = identity_model(2);
  const PseudoLabeledBatch onehot = pseudo_label(p2, matrix(1, 2, {80, -80}));
  CHECK(onehot.weights.item() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(onehot.labels[0] == 0);

  // p = [0.8, 0.2]: w = 1 - H(p)/ln 2 = 0.2780719051126377
  const Tensor logits = matrix(1, 2, {std::log(0.8), std::log(0.2)});
  const PseudoLabeledBatch hand = pseudo_label(p2, logits);
  CHECK(hand.weights.item() == doctest::Approx(0.2780719051126377).epsilon(1e-12));
  CHECK(hand.labels[0] == 0);
}

TEST_CASE("pseudo-label weights stay in [0,1] and sit on the graph") {
  Rng rng(77);
  const ModelParams detached = identity_model(3);
  for (int trial = 0; trial < 100; ++trial) {
    Graph graph;
    const ModelParams p = lift(graph, detached);
    const double scale = trial % 2 == 0 ? 1e4 : 2.0;
    std::vector<double> z(2 * 3);
    for (double& v : z) v = rng.uniform(-scale, scale);
    const PseudoLabeledBatch batch = pseudo_label(p, matrix(2, 3, std::move(z)));
    CHECK(batch.weights.attached());
    CHECK(batch.features.attached());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(batch.weights[i] >= 0.0);
      CHECK(batch.weights[i] <= 1.0);
    }
  }
}

TEST_CASE("labeled centroids: means, singletons, absences") {
  const Tensor feats = matrix(3, 2, {1, 0, 3, 0, 7, 5});
  const CentroidSet set = labeled_centroids(feats, {0, 0, 1}, 3);
  REQUIRE(set.present(0));
  CHECK((*set.centroids[0])[0] == 2.0);
  CHECK((*set.centroids[0])[1] == 0.0);
  REQUIRE(set.present(1));  // single sample: centroid equals the sample
  CHECK((*set.centroids[1])[0] == 7.0);
  CHECK((*set.centroids[1])[1] == 5.0);
  CHECK(!set.present(2));
  CHECK(set.variant == CentroidSet::Variant::kLabeledOnly);
}

TEST_CASE("combined centroids: hand example and weight-zero shrinkage") {
  const Tensor labeled = matrix(1, 2, {2, 0});
  PseudoLabeledBatch pseudo;
  pseudo.features = matrix(1, 2, {4, 0});
  pseudo.labels = {0};
  pseudo.weights = matrix(1, 1, {0.5});
  const CentroidSet set = combined_centroids(labeled, {0}, pseudo, 2);
  REQUIRE(set.present(0));
  CHECK((*set.centroids[0])[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK((*set.centroids[0])[1] == 0.0);
  CHECK(set.variant == CentroidSet::Variant::kLabeledUnlabeled);

  // zero-weight pseudo sample still counts in the denominator
  pseudo.weights = matrix(1, 1, {0.0});
  const CentroidSet shrunk = combined_centroids(labeled, {0}, pseudo, 2);
  CHECK((*shrunk.centroids[0])[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("combined centroids with no pseudo batch match labeled bitwise") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(8), d = 1 + rng.uniform_index(5);
    std::vector<double> f(m * d);
    for (double& v : f) v = rng.uniform(-3, 3);
    std::vector<int> y(m);
    for (auto& label : y) label = static_cast<int>(rng.uniform_index(3));
    const Tensor feats = matrix(m, d, std::move(f));
    const CentroidSet a = labeled_centroids(feats, y, 3);
    const CentroidSet b = combined_centroids(feats, y, PseudoLabeledBatch{}, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(a.present(c) == b.present(c));
      if (a.present(c)) CHECK(bitwise_equal(*a.centroids[c], *b.centroids[c]));
    }
    CHECK(semi_supervised_loss(a, b).item() == 0.0);  // exactly
  }
}

TEST_CASE("semi-supervised loss: 3-4-5 and relabeling invariance") {
  const CentroidSet a = make_set({{{0, 0}}}, 0, CentroidSet::Variant::kLabeledOnly);
  const CentroidSet b = make_set({{{3, 4}}}, 0);
  CHECK(semi_supervised_loss(a, b).item() == 5.0);

  const CentroidSet a2 =
      make_set({{{0, 0}}, {{1, 1}}}, 0, CentroidSet::Variant::kLabeledOnly);
  const CentroidSet b2 = make_set({{{3, 4}}, {{1, 2}}}, 0);
  const CentroidSet a2r =
      make_set({{{1, 1}}, {{0, 0}}}, 0, CentroidSet::Variant::kLabeledOnly);
  const CentroidSet b2r = make_set({{{1, 2}}, {{3, 4}}}, 0);
  CHECK(semi_supervised_loss(a2, b2).item() ==
        doctest::Approx(semi_supervised_loss(a2r, b2r).item()).epsilon(1e-15));
}

TEST_CASE("semi-supervised loss skips absent classes") {
  const CentroidSet a =
      make_set({{{0, 0}}, std::nullopt}, 0, CentroidSet::Variant::kLabeledOnly);
  const CentroidSet b = make_set({{{3, 4}}, {{9, 9}}}, 0);
  CHECK(semi_supervised_loss(a, b).item() == 5.0);
}

TEST_CASE("centroid distance vector") {
  const CentroidSet set = make_set({{{0, 0}}, {{3, 4}}}, 0);
  const DistanceVector v0 = centroid_distance_vector(set, 0);
  REQUIRE(v0.entries.size() == 1);
  CHECK(v0.entries[0]->item() == 5.0);
  const DistanceVector v1 = centroid_distance_vector(set, 1);
  CHECK(v1.entries[0]->item() == v0.entries[0]->item());  // metric symmetry

  const CentroidSet degenerate = make_set({{{1, 1}}, {{1, 1}}, {{1, 1}}}, 0);
  const DistanceVector dv = centroid_distance_vector(degenerate, 1);
  for (const auto& e : dv.entries) CHECK(e->item() == 0.0);

  const CentroidSet with_gap = make_set({{{0, 0}}, std::nullopt, {{1, 0}}}, 0);
  const DistanceVector gap = centroid_distance_vector(with_gap, 0);
  REQUIRE(gap.entries.size() == 2);
  CHECK(!gap.entries[0].has_value());
  CHECK(gap.entries[1].has_value());
  CHECK_THROWS_AS(centroid_distance_vector(with_gap, 1), AbsentClassError);
}

TEST_CASE("alignment loss: identical and rotated geometries align") {
  const CentroidSet a = make_set({{{0, 0}}, {{3, 4}}}, 0);
  const CentroidSet b = make_set({{{0, 0}}, {{3, 4}}}, 1);
  CHECK(alignment_loss({a}, {b}).item() == 0.0);

  // rigid rotation by 90 degrees: pairwise distances unchanged
  const CentroidSet rotated = make_set({{{0, 0}}, {{-4, 3}}}, 1);
  CHECK(alignment_loss({a}, {rotated}).item() < 1e-12);
}

TEST_CASE("alignment loss: hand example |5-1| per class") {
  const CentroidSet a = make_set({{{0, 0}}, {{5, 0}}}, 0);
  const CentroidSet b = make_set({{{0, 0}}, {{1, 0}}}, 1);
  CHECK(alignment_loss({a}, {b}).item() == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("alignment loss is isometry-invariant and pair-symmetric") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t C = 2 + rng.uniform_index(4);
    std::vector<std::optional<std::vector<double>>> ca, cb;
    for (std::size_t c = 0; c < C; ++c) {
      ca.push_back(std::vector<double>{rng.uniform(-2, 2), rng.uniform(-2, 2)});
      cb.push_back(std::vector<double>{rng.uniform(-2, 2), rng.uniform(-2, 2)});
    }
    const CentroidSet a = make_set(ca, 0), b = make_set(cb, 1);
    const double base = alignment_loss({a}, {b}).item();

    // rotate + translate every centroid of domain b
    const double angle = rng.uniform(0, 2 * std::numbers::pi);
    const double tx = rng.uniform(-5, 5), ty = rng.uniform(-5, 5);
    std::vector<std::optional<std::vector<double>>> cbt;
    for (const auto& c : cb) {
      const double x = (*c)[0], y = (*c)[1];
      cbt.push_back(std::vector<double>{std::cos(angle) * x - std::sin(angle) * y + tx,
                                        std::sin(angle) * x + std::cos(angle) * y + ty});
    }
    const CentroidSet bt = make_set(cbt, 1);
    CHECK(alignment_loss({a}, {bt}).item() == doctest::Approx(base).epsilon(1e-9));

    // swapping the roles of the two domains leaves the pair term unchanged
    CHECK(alignment_loss({b}, {a}).item() == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("alignment loss requires the labeled+unlabeled variant") {
  const CentroidSet bad = make_set({{{0, 0}}, {{1, 0}}}, 0, CentroidSet::Variant::kLabeledOnly);
  const CentroidSet good = make_set({{{0, 0}}, {{1, 0}}}, 1);
  CHECK_THROWS_AS(alignment_loss({bad}, {good}), ContractError);
}

TEST_CASE("alignment loss: no common positions contributes zero") {
  // class 1 missing in one domain, class 0 present in both: distance vectors
  // share no positions
  const CentroidSet a = make_set({{{0, 0}}, {{5, 0}}}, 0);
  const CentroidSet b = make_set({{{0, 0}}, std::nullopt}, 1);
  CHECK(alignment_loss({a}, {b}).item() == 0.0);
}

TEST_CASE("oracle equivalence on randomized instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng.uniform_index(4);       // <= 5
    const std::size_t D = 1 + rng.uniform_index(8);       // <= 8
    const std::size_t m = 1 + rng.uniform_index(30);      // <= 30 labeled
    const std::size_t u = rng.uniform_index(16);          // unlabeled

    std::vector<std::vector<double>> feat_rows(m, std::vector<double>(D));
    std::vector<double> flat;
    std::vector<int> y(m);
    for (std::size_t i = 0; i < m; ++i) {
      y[i] = static_cast<int>(rng.uniform_index(C));
      for (double& v : feat_rows[i]) v = rng.uniform(-3, 3);
      flat.insert(flat.end(), feat_rows[i].begin(), feat_rows[i].end());
    }
    const Tensor feats = matrix(m, D, flat);

    std::vector<std::vector<double>> pseudo_rows(u, std::vector<double>(D));
    std::vector<double> pflat;
    std::vector<int> py(u);
    std::vector<double> weights(u);
    for (std::size_t i = 0; i < u; ++i) {
      py[i] = static_cast<int>(rng.uniform_index(C));
      weights[i] = rng.uniform(0, 1);
      for (double& v : pseudo_rows[i]) v = rng.uniform(-3, 3);
      pflat.insert(pflat.end(), pseudo_rows[i].begin(), pseudo_rows[i].end());
    }

    const auto naive_l = oracle::naive_labeled_centroids(feat_rows, y, C);
    const CentroidSet engine_l = labeled_centroids(feats, y, C);
    for (std::size_t c = 0; c < C; ++c) {
      REQUIRE(naive_l[c].has_value() == engine_l.present(c));
      if (!naive_l[c]) continue;
      for (std::size_t k = 0; k < D; ++k)
        CHECK(std::abs((*naive_l[c])[k] - (*engine_l.centroids[c])[k]) < 1e-12);
    }

    PseudoLabeledBatch pseudo;
    if (u > 0) {
      pseudo.features = matrix(u, D, pflat);
      pseudo.labels = py;
      std::vector<double> wcol = weights;
      pseudo.weights = matrix(u, 1, wcol);
    }
    const auto naive_c =
        oracle::naive_combined_centroids(feat_rows, y, pseudo_rows, py, weights, C);
    const CentroidSet engine_c = combined_centroids(feats, y, pseudo, C);
    for (std::size_t c = 0; c < C; ++c) {
      REQUIRE(naive_c[c].has_value() == engine_c.present(c));
      if (!naive_c[c]) continue;
      for (std::size_t k = 0; k < D; ++k)
        CHECK(std::abs((*naive_c[c])[k] - (*engine_c.centroids[c])[k]) < 1e-12);
    }

    CHECK(std::abs(oracle::naive_semi_supervised(naive_l, naive_c) -
                   semi_supervised_loss(engine_l, engine_c).item()) < 1e-12);

    for (std::size_t c = 0; c < C; ++c) {
      if (!naive_c[c]) continue;
      const auto naive_v = oracle::naive_distance_vector(naive_c, c);
      const DistanceVector engine_v = centroid_distance_vector(engine_c, c);
      REQUIRE(naive_v.size() == engine_v.entries.size());
      for (std::size_t k = 0; k < naive_v.size(); ++k) {
        REQUIRE(naive_v[k].has_value() == engine_v.entries[k].has_value());
        if (naive_v[k]) CHECK(std::abs(*naive_v[k] - engine_v.entries[k]->item()) < 1e-12);
      }
    }
  }
}

TEST_CASE("losses differentiate: finite differences through the model") {
  const ModelConfig config{2, {6}, 3, 2};
  const ModelParams init = init_params(config, 99);
  const std::vector<Tensor> flat = init.all();
  Rng rng(55);
  std::vector<double> xl(5 * 2), xu(4 * 2);
  for (double& v : xl) v = rng.uniform(-2, 2);
  for (double& v : xu) v = rng.uniform(-2, 2);
  const Tensor labeled_x = matrix(5, 2, xl);
  const Tensor unlabeled_x = matrix(4, 2, xu);
  const std::vector<int> y = {0, 1, 0, 1, 1};

  SUBCASE("task loss") {
    const auto builder = [&](const std::vector<Tensor>& lifted) {
      return task_loss(with_tensors(init, lifted), labeled_x, y);
    };
    CHECK(max_fd_error(builder, flat, 1e-5) < 1e-4);
  }

  SUBCASE("semi-supervised loss through pseudo-labels") {
    const auto builder = [&](const std::vector<Tensor>& lifted) {
      const ModelParams p = with_tensors(init, lifted);
      const Tensor feats = extract_features(p, labeled_x);
      const PseudoLabeledBatch pseudo = pseudo_label(p, unlabeled_x);
      return semi_supervised_loss(labeled_centroids(feats, y, 2),
                                  combined_centroids(feats, y, pseudo, 2));
    };
    CHECK(max_fd_error(builder, flat, 1e-5) < 1e-4);
  }

  SUBCASE("alignment loss across two domains") {
    const auto builder = [&](const std::vector<Tensor>& lifted) {
      const ModelParams p = with_tensors(init, lifted);
      const Tensor fa = extract_features(p, labeled_x);
      const Tensor fb = extract_features(p, unlabeled_x);
      const CentroidSet a = combined_centroids(fa, y, PseudoLabeledBatch{}, 2, 0);
      const CentroidSet b =
          combined_centroids(fb, {0, 1, 0, 1}, PseudoLabeledBatch{}, 2, 1);
      return alignment_loss({a}, {b});
    };
    CHECK(max_fd_error(builder, flat, 1e-5) < 1e-4);
  }
}
