#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <moe_affect/synth.hpp>

using namespace moe_affect;

namespace {

SynthConfig vec_config(std::size_t n, std::uint64_t seed, double sep, double noise,
                       bool informative = true) {
  SynthConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  cfg.branches = {{"feat", BranchKind::vector, 8, sep, noise, informative, 3, 8}};
  return cfg;
}

// nearest-class-centroid classifier with centroids estimated from the data
// itself: an oracle that is independent of the generator internals
double centroid_accuracy(const EmbeddingBundle& b, const std::string& branch) {
  const Mat<float>& x = b.vectors.at(branch);
  std::array<std::vector<double>, kNumClasses> centroid;
  std::array<std::size_t, kNumClasses> count{};
  for (auto& c : centroid) c.assign(x.cols, 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    std::size_t k = class_index(b.labels.at(b.ids[i]));
    count[k]++;
    for (std::size_t j = 0; j < x.cols; ++j) centroid[k][j] += x(i, j);
  }
  for (std::size_t k = 0; k < kNumClasses; ++k)
    if (count[k])
      for (double& v : centroid[k]) v /= double(count[k]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (!count[k]) continue;
      double d2 = 0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        double d = double(x(i, j)) - centroid[k][j];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        arg = k;
      }
    }
    correct += (arg == class_index(b.labels.at(b.ids[i])));
  }
  return double(correct) / double(b.size());
}

}  // namespace

TEST_CASE("bundle: vanishing noise makes classes trivially recoverable") {
  auto b = gen_bundle(vec_config(200, 1, 2.0, 1e-3));
  CHECK(centroid_accuracy(b, "feat") == 1.0);
}

TEST_CASE("bundle: same seed is bit-identical, different seed is not") {
  auto a = gen_bundle(vec_config(60, 2, 2.0, 0.5));
  auto b = gen_bundle(vec_config(60, 2, 2.0, 0.5));
  auto c = gen_bundle(vec_config(60, 3, 2.0, 0.5));
  CHECK(a.ids == b.ids);
  CHECK(a.vectors.at("feat") == b.vectors.at("feat"));
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.vectors.at("feat") == c.vectors.at("feat"));
}

TEST_CASE("bundle: per-sample substreams make generation prefix-stable in n") {
  auto small = gen_bundle(vec_config(50, 4, 2.0, 0.5));
  auto large = gen_bundle(vec_config(120, 4, 2.0, 0.5));
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(small.ids[i] == large.ids[i]);
    CHECK(small.labels.at(small.ids[i]) == large.labels.at(large.ids[i]));
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(small.vectors.at("feat")(i, j) == large.vectors.at("feat")(i, j));
  }
}

TEST_CASE("bundle: well-separated mixture is nearly centroid-separable") {
  auto b = gen_bundle(vec_config(500, 5, 2.0, 0.5));
  CHECK(centroid_accuracy(b, "feat") > 0.95);
}

TEST_CASE("bundle: an uninformative branch is near chance level") {
  auto b = gen_bundle(vec_config(500, 6, 2.0, 0.5, /*informative=*/false));
  double acc = centroid_accuracy(b, "feat");
  CHECK(acc < 0.40);  // chance on the skewed prior is ~0.25-0.3
}

TEST_CASE("bundle: empirical label distribution converges to the prior") {
  SynthConfig cfg = vec_config(10000, 7, 2.0, 0.5);
  auto b = gen_bundle(cfg);
  std::array<double, kNumClasses> freq{};
  for (const auto& id : b.ids) freq[class_index(b.labels.at(id))] += 1.0 / double(cfg.n);
  for (std::size_t k = 0; k < kNumClasses; ++k)
    CHECK(std::abs(freq[k] - cfg.prior[k]) < 0.03);
}

TEST_CASE("bundle: sequence branches respect the length range and validate") {
  SynthConfig cfg;
  cfg.n = 80;
  cfg.seed = 8;
  cfg.branches = {{"feat", BranchKind::vector, 5, 2.0, 0.5, true, 3, 8},
                  {"au", BranchKind::sequence, 35, 2.0, 0.5, true, 2, 9}};
  auto b = gen_bundle(cfg);
  b.validate();
  bool hit_min = false, hit_max = false;
  for (const auto& frames : b.sequences.at("au")) {
    CHECK(frames.rows >= 2);
    CHECK(frames.rows <= 9);
    CHECK(frames.cols == 35);
    CHECK(frames.all_finite());
    hit_min |= (frames.rows == 2);
    hit_max |= (frames.rows == 9);
  }
  // the length distribution actually covers its range
  CHECK(hit_min);
  CHECK(hit_max);
  // ids follow the zero-padded scheme and are unique by construction
  CHECK(b.ids[0] == "s000000");
  CHECK(b.ids[79] == "s000079");
}

TEST_CASE("bundle: config validation rejects bad inputs") {
  auto cfg = vec_config(10, 9, 2.0, 0.5);
  cfg.prior[0] += 0.5;
  CHECK_THROWS_AS(gen_bundle(cfg), std::invalid_argument);
  cfg = vec_config(10, 9, 2.0, 0.0);
  CHECK_THROWS_AS(gen_bundle(cfg), std::invalid_argument);
  cfg = vec_config(10, 9, 2.0, 0.5);
  cfg.branches.clear();
  CHECK_THROWS_AS(gen_bundle(cfg), std::invalid_argument);
  SynthConfig seq = vec_config(10, 9, 2.0, 0.5);
  seq.branches[0].kind = BranchKind::sequence;
  seq.branches[0].t_min = 5;
  seq.branches[0].t_max = 4;
  CHECK_THROWS_AS(gen_bundle(seq), std::invalid_argument);
}

TEST_CASE("noisy labeler: identity confusion reproduces the truth exactly") {
  auto b = gen_bundle(vec_config(300, 10, 2.0, 0.5));
  auto ps = gen_noisy_predictions(b.ids, b.labels, identity_confusion(), 11);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps.labels[i] == b.labels.at(ps.ids[i]));
  ps.validate();
}

TEST_CASE("noisy labeler: uniform confusion hits roughly its nominal accuracy") {
  auto b = gen_bundle(vec_config(10000, 12, 2.0, 0.5));
  for (double acc : {0.4, 0.8}) {
    auto ps = gen_noisy_predictions(b.ids, b.labels, uniform_confusion(acc), 13);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) correct += (ps.labels[i] == b.labels.at(ps.ids[i]));
    CHECK(std::abs(double(correct) / double(ps.size()) - acc) < 0.03);
  }
}

TEST_CASE("noisy labeler: empirical confusion matrix converges cell-wise") {
  // uniform truth gives every row enough support for a tight cell estimate
  std::map<SampleId, Emotion> truth;
  std::vector<SampleId> ids;
  for (std::size_t i = 0; i < 12000; ++i) {
    SampleId id = "c" + std::to_string(i);
    ids.push_back(id);
    truth[id] = emotion_from_index(i % kNumClasses);
  }
  ConfusionMatrix target{};
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    target[i][i] = 0.6;
    target[i][(i + 1) % kNumClasses] = 0.3;
    target[i][(i + 2) % kNumClasses] = 0.1;
  }
  auto ps = gen_noisy_predictions(ids, truth, target, 14);
  std::array<std::array<double, kNumClasses>, kNumClasses> counts{};
  std::array<double, kNumClasses> row_n{};
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::size_t t = class_index(truth.at(ps.ids[i]));
    counts[t][class_index(ps.labels[i])] += 1.0;
    row_n[t] += 1.0;
  }
  for (std::size_t i = 0; i < kNumClasses; ++i)
    for (std::size_t j = 0; j < kNumClasses; ++j)
      CHECK(std::abs(counts[i][j] / row_n[i] - target[i][j]) < 0.03);
}

TEST_CASE("noisy labeler: probabilities are smoothed one-hots") {
  auto b = gen_bundle(vec_config(20, 15, 2.0, 0.5));
  auto ps = gen_noisy_predictions(b.ids, b.labels, uniform_confusion(0.7), 16);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    double sum = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      double p = ps.probs(i, k);
      CHECK((std::abs(p - (0.95 + 0.05 / 6.0)) < 1e-12 || std::abs(p - 0.05 / 6.0) < 1e-12));
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("noisy labeler: invalid confusion matrices are rejected") {
  ConfusionMatrix bad{};
  CHECK_THROWS_AS(validate_confusion(bad), std::invalid_argument);
  bad = uniform_confusion(0.5);
  bad[2][3] = -0.1;
  CHECK_THROWS_AS(validate_confusion(bad), std::invalid_argument);
  CHECK_NOTHROW(validate_confusion(identity_confusion()));
  CHECK_NOTHROW(validate_confusion(uniform_confusion(0.25)));
}

TEST_CASE("vlm records: schema-complete and consistent with their source") {
  auto b = gen_bundle(vec_config(40, 17, 2.0, 0.5));
  auto ps = gen_noisy_predictions(b.ids, b.labels, uniform_confusion(0.8), 18);
  auto records = gen_vlm_records(ps, 19);
  REQUIRE(records.size() == ps.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    CHECK(r.id == ps.ids[i]);
    CHECK(r.label == ps.labels[i]);
    CHECK(!r.reasoning.empty());
    double conf_sum = 0, contrib_sum = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      CHECK(r.confidence[k] == ps.probs(i, k));
      conf_sum += r.confidence[k];
    }
    CHECK(conf_sum == doctest::Approx(1.0).epsilon(1e-9));
    for (const auto& [mod, w] : r.modality_contribution) contrib_sum += w;
    CHECK(contrib_sum == doctest::Approx(1.0).epsilon(1e-9));
    // the stated label is the argmax of the stated confidence
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumClasses; ++k)
      if (r.confidence[k] > r.confidence[best]) best = k;
    CHECK(class_index(r.label) == best);
  }
}
