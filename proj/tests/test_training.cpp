#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include <moe_affect/grad_check.hpp>
#include <moe_affect/losses.hpp>
#include <moe_affect/synth.hpp>
#include <moe_affect/train.hpp>

using namespace moe_affect;

namespace {

// tiny single-branch setup reused across the supervised-training cases
MoeConfig tiny_model(std::size_t dim) {
  MoeConfig cfg;
  cfg.branches = {{"feat", BranchKind::vector, dim}};
  cfg.d = 8;
  cfg.heads = 2;
  return cfg;
}

EmbeddingBundle separable_bundle(std::size_t n, std::uint64_t seed, double sep = 4.0,
                                 double noise = 0.25) {
  SynthConfig sc;
  sc.n = n;
  sc.seed = seed;
  sc.branches = {{"feat", BranchKind::vector, 6, sep, noise, true, 3, 8}};
  return gen_bundle(sc);
}

std::map<SampleId, Emotion> truth_of(const EmbeddingBundle& b) {
  std::map<SampleId, Emotion> t;
  for (const auto& id : b.ids) t[id] = b.labels.at(id);
  return t;
}

double train_accuracy(const MoeModel<float>& model, const EmbeddingBundle& b) {
  return compute_metrics(model.predict(b), truth_of(b)).accuracy;
}

// loss of a batch of fixed probability rows, for the value-level loss checks
template <class T>
double eval_loss(const Mat<T>& probs, const std::vector<std::size_t>& targets, T gamma,
                 const std::vector<T>& weights = {}) {
  Tape<T> tape;
  auto p = tape.input(probs);
  auto l = gamma < T(0) ? cross_entropy_loss(tape, p, targets)
                        : focal_loss(tape, p, targets, gamma, weights);
  return double(tape.val(l)(0, 0));
}

}  // namespace

TEST_CASE("cross entropy: uniform predictions cost ln 6") {
  Mat<double> probs(4, 6, 1.0 / 6.0);
  std::vector<std::size_t> t{0, 2, 4, 5};
  CHECK(eval_loss(probs, t, -1.0) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy: confident correct prediction costs almost nothing") {
  Mat<double> probs(1, 6, 0.0002);
  probs(0, 3) = 0.999;
  std::vector<std::size_t> t{3};
  CHECK(eval_loss(probs, t, -1.0) == doctest::Approx(-std::log(0.999)).epsilon(1e-12));
}

TEST_CASE("cross entropy: zero probability is clamped, not infinite") {
  Mat<double> probs(1, 6);
  probs(0, 0) = 1.0;
  std::vector<std::size_t> t{1};  // target got exactly zero mass
  double l = eval_loss(probs, t, -1.0);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));
}

TEST_CASE("focal loss: gamma 0 reduces exactly to cross entropy") {
  Rng rng(3);
  Mat<double> probs(8, 6);
  for (std::size_t i = 0; i < 8; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 6; ++j) sum += probs(i, j) = rng.uniform(0.01, 1.0);
    for (std::size_t j = 0; j < 6; ++j) probs(i, j) /= sum;
  }
  std::vector<std::size_t> t{0, 1, 2, 3, 4, 5, 0, 1};
  CHECK(eval_loss(probs, t, 0.0) == doctest::Approx(eval_loss(probs, t, -1.0)).epsilon(1e-7));
}

TEST_CASE("focal loss: hand value at p_t = 0.9, gamma = 2") {
  Mat<double> probs(1, 6, 0.02);
  probs(0, 2) = 0.9;
  std::vector<std::size_t> t{2};
  // (1 - 0.9)^2 * (-ln 0.9)
  CHECK(eval_loss(probs, t, 2.0) == doctest::Approx(0.01 * -std::log(0.9)).epsilon(1e-10));
}

TEST_CASE("focal loss: class weights scale each sample's term") {
  Mat<double> probs(2, 6, 0.1);
  probs(0, 0) = 0.5;
  probs(1, 1) = 0.5;
  std::vector<std::size_t> t{0, 1};
  std::vector<double> w{3.0, 1.0, 1, 1, 1, 1};
  double base = 0.25 * -std::log(0.5);  // per-sample focal term at gamma 2
  CHECK(eval_loss(probs, t, 2.0, w) == doctest::Approx(0.5 * (3.0 + 1.0) * base).epsilon(1e-10));
}

TEST_CASE("focal loss: gradients through softmax match finite differences") {
  for (double gamma : {0.5, 2.0}) {
    ParamStore<double> store;
    Rng rng(7);
    store.add("logits", gaussian_init<double>(3, 6, 1.0, rng));
    std::vector<std::size_t> targets{1, 4, 1};
    auto loss_fn = [&](const ParamStore<double>& s) {
      Tape<double> tape;
      auto z = tape.input(s.value("logits"));
      auto l = focal_loss(tape, tape.softmax_rows(z), targets, gamma);
      return tape.val(l)(0, 0);
    };
    auto grad_fn = [&](ParamStore<double>& s) {
      Tape<double> tape;
      auto z = tape.input(s.value("logits"));
      auto l = focal_loss(tape, tape.softmax_rows(z), targets, gamma);
      tape.backward(l);
      const auto& g = tape.grad(z);
      for (std::size_t i = 0; i < g.size(); ++i) s.grad("logits").a[i] += g.a[i];
    };
    auto report = grad_check<double>(store, loss_fn, grad_fn, {1e-5, 50, 1});
    CHECK(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("focal loss: negative gamma rejected") {
  Tape<double> tape;
  auto p = tape.input(Mat<double>(1, 6, 1.0 / 6.0));
  CHECK_THROWS_AS(focal_loss(tape, p, {0}, -1.0), std::invalid_argument);
}

TEST_CASE("cosine schedule: exact endpoints, midpoint, and monotone decay") {
  CHECK(cosine_lr(0, 100, 1e-3, 1e-4) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 1e-3, 1e-4) == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(cosine_lr(50, 100, 1e-3, 1e-4) == doctest::Approx(5.5e-4).epsilon(1e-12));
  for (std::size_t s = 1; s <= 100; ++s)
    CHECK(cosine_lr(s, 100, 1e-3, 1e-4) <= cosine_lr(s - 1, 100, 1e-3, 1e-4));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-3, 1e-4), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1e-3, 1e-4), std::invalid_argument);
}

TEST_CASE("adamw: zero gradient with zero weight decay changes nothing") {
  ParamStore<float> s;
  s.add("w", Mat<float>(2, 2, 1.5f));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(s, 0.1, cfg);
  for (float v : s.value("w").a) CHECK(v == 1.5f);
}

TEST_CASE("adamw: first step moves by about -lr * sign(grad)") {
  ParamStore<double> s;
  s.add("w", Mat<double>(1, 1, 2.0));
  s.grad("w")(0, 0) = 0.7;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(s, 0.1, cfg);
  // bias correction makes mhat = g and vhat = g^2 at t=1, so the step is
  // -lr * g / (|g| + eps) ~= -lr
  CHECK(s.value("w")(0, 0) == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
  CHECK(s.grad("w")(0, 0) == 0.0);  // grads cleared after the step
}

TEST_CASE("adamw: decoupled weight decay shrinks parameters even without gradient") {
  ParamStore<double> s;
  s.add("w", Mat<double>(1, 1, 10.0));
  AdamWConfig cfg;  // weight_decay 0.01
  adamw_step(s, 0.1, cfg);
  CHECK(s.value("w")(0, 0) == doctest::Approx(10.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
}

TEST_CASE("adamw: converges on a quadratic bowl") {
  ParamStore<double> s;
  Rng rng(11);
  s.add("x", gaussian_init<double>(1, 5, 2.0, rng));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  for (int step = 0; step < 500; ++step) {
    for (std::size_t i = 0; i < 5; ++i) s.grad("x").a[i] = s.value("x").a[i];
    adamw_step(s, 0.05, cfg);
  }
  for (double v : s.value("x").a) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("train: a single sample is memorized") {
  auto bundle = separable_bundle(1, 100);
  TrainConfig tc;
  tc.lr0 = 5e-3;
  tc.lr_end = 1e-3;
  tc.epochs = 150;
  tc.batch_size = 1;
  auto result = train_supervised(bundle, tc, tiny_model(6));
  auto preds = result.model.predict(bundle);
  CHECK(preds.labels[0] == bundle.labels.at(bundle.ids[0]));
  CHECK(preds.probs(0, class_index(preds.labels[0])) > 0.9);
}

TEST_CASE("train: well-separated classes reach near-perfect training accuracy") {
  auto bundle = separable_bundle(120, 101);
  TrainConfig tc;
  tc.lr0 = 3e-3;
  tc.lr_end = 3e-4;
  tc.epochs = 40;
  tc.batch_size = 32;
  auto result = train_supervised(bundle, tc, tiny_model(6));
  CHECK(train_accuracy(result.model, bundle) >= 0.99);
  // loss went down substantially
  CHECK(result.log.back().loss < 0.5 * result.log.front().loss);
}

TEST_CASE("train: same seed reproduces parameters bit for bit, new seed differs") {
  auto bundle = separable_bundle(40, 102);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  auto r1 = train_supervised(bundle, tc, tiny_model(6));
  auto r2 = train_supervised(bundle, tc, tiny_model(6));
  for (const auto& name : r1.model.params().names())
    CHECK(r1.model.params().value(name) == r2.model.params().value(name));

  tc.seed = 43;
  auto r3 = train_supervised(bundle, tc, tiny_model(6));
  bool any_diff = false;
  for (const auto& name : r1.model.params().names())
    if (!(r1.model.params().value(name) == r3.model.params().value(name))) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("train: result is invariant to the on-disk sample order of the bundle") {
  auto bundle = separable_bundle(30, 103);
  // reversed storage order, identical content
  std::vector<SampleId> rev(bundle.ids.rbegin(), bundle.ids.rend());
  auto reversed = bundle.subset(rev);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 8;
  auto r1 = train_supervised(bundle, tc, tiny_model(6));
  auto r2 = train_supervised(reversed, tc, tiny_model(6));
  for (const auto& name : r1.model.params().names())
    CHECK(r1.model.params().value(name) == r2.model.params().value(name));
}

TEST_CASE("train: unlabeled or empty bundles are rejected") {
  auto bundle = separable_bundle(10, 104);
  bundle.labels.erase(bundle.ids[3]);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train_supervised(bundle, tc, tiny_model(6)), std::invalid_argument);
  EmbeddingBundle empty;
  empty.branches = bundle.branches;
  empty.vectors["feat"] = Mat<float>(0, 6);
  CHECK_THROWS_AS(train_supervised(empty, tc, tiny_model(6)), std::invalid_argument);
}

TEST_CASE("train: validation tracking keeps the best epoch by weighted F1") {
  auto all = separable_bundle(80, 105);
  std::vector<SampleId> tr(all.ids.begin(), all.ids.begin() + 60);
  std::vector<SampleId> va(all.ids.begin() + 60, all.ids.end());
  auto train_b = all.subset(tr), val_b = all.subset(va);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 16;
  auto result = train_supervised(train_b, tc, tiny_model(6), &val_b);
  REQUIRE(result.best_params.has_value());
  CHECK(result.best_epoch < tc.epochs);
  // the recorded best matches a fresh evaluation of the snapshot
  MoeModel<float> best(tiny_model(6), *result.best_params);
  auto m = compute_metrics(best.predict(val_b), truth_of(val_b));
  CHECK(m.weighted_f1 == doctest::Approx(result.best_val_weighted_f1).epsilon(1e-12));
  // every epoch logged exactly one validation report
  std::size_t with_val = 0;
  for (const auto& e : result.log)
    if (e.val_metrics) ++with_val;
  CHECK(with_val == tc.epochs);
}

TEST_CASE("two-stage: fine-tune runs at one tenth the learning rate") {
  auto all = separable_bundle(60, 106);
  std::vector<SampleId> ps(all.ids.begin(), all.ids.begin() + 40);
  std::vector<SampleId> la(all.ids.begin() + 40, all.ids.end());
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  auto result = two_stage_train(all.subset(ps), all.subset(la), tc, tiny_model(6));
  bool saw1 = false, saw2 = false;
  for (const auto& e : result.log) {
    if (e.stage == 1) {
      saw1 = true;
      CHECK(e.lr <= tc.lr0 + 1e-15);
      CHECK(e.lr >= tc.lr_end - 1e-15);
    } else {
      saw2 = true;
      CHECK(e.lr <= tc.lr0 / 10.0 + 1e-15);
      CHECK(e.lr >= tc.lr_end / 10.0 - 1e-15);
    }
  }
  CHECK(saw1);
  CHECK(saw2);
  // optimizer state was reset between stages: the step counter only covers
  // stage-2 updates
  std::size_t stage2_steps = 0;
  for (const auto& e : result.log)
    if (e.stage == 2) ++stage2_steps;
  CHECK(result.model.params().step_count() == stage2_steps);
}

TEST_CASE("two-stage: empty pseudo bundle degenerates to plain fine-tuning") {
  auto labeled = separable_bundle(20, 107);
  EmbeddingBundle empty;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  auto result = two_stage_train(empty, labeled, tc, tiny_model(6));
  for (const auto& e : result.log) CHECK(e.stage == 2);
}

TEST_CASE("two-stage: branch mismatch between bundles is rejected") {
  auto labeled = separable_bundle(10, 108);
  auto pseudo = labeled;
  pseudo.branches[0].name = "other";
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(two_stage_train(pseudo, labeled, tc, tiny_model(6)), std::invalid_argument);
}

TEST_CASE("two-stage: pretraining on plentiful pseudo labels beats scarce labels alone") {
  auto all = separable_bundle(300, 109, 3.0, 0.6);
  std::vector<SampleId> ps(all.ids.begin(), all.ids.begin() + 200);
  std::vector<SampleId> la(all.ids.begin() + 200, all.ids.begin() + 212);
  std::vector<SampleId> ev(all.ids.begin() + 212, all.ids.end());
  auto pseudo = all.subset(ps), labeled = all.subset(la), eval = all.subset(ev);
  TrainConfig tc;
  tc.lr0 = 3e-3;
  tc.lr_end = 3e-4;
  tc.epochs = 20;
  tc.batch_size = 32;
  auto plain = train_supervised(labeled, tc, tiny_model(6));
  auto staged = two_stage_train(pseudo, labeled, tc, tiny_model(6));
  double acc_plain = train_accuracy(plain.model, eval);
  double acc_staged = train_accuracy(staged.model, eval);
  CHECK(acc_staged > acc_plain);
  CHECK(acc_staged >= 0.9);
}

TEST_CASE("kfold: partition properties at n = 10 and n = 11") {
  std::vector<SampleId> ids;
  for (int i = 0; i < 11; ++i) ids.push_back("id" + std::to_string(i));

  for (std::size_t n : {std::size_t(10), std::size_t(11)}) {
    std::vector<SampleId> sub(ids.begin(), ids.begin() + n);
    auto plan = kfold_split(sub, 5, 9);
    REQUIRE(plan.folds.size() == 5);
    std::multiset<SampleId> all_val;
    for (const auto& f : plan.folds) {
      CHECK(f.train_ids.size() + f.val_ids.size() == n);
      std::set<SampleId> tr(f.train_ids.begin(), f.train_ids.end());
      for (const auto& id : f.val_ids) CHECK(tr.count(id) == 0);
      all_val.insert(f.val_ids.begin(), f.val_ids.end());
    }
    // validation folds tile the dataset exactly once
    CHECK(all_val.size() == n);
    CHECK(std::set<SampleId>(all_val.begin(), all_val.end()).size() == n);
    // fold sizes differ by at most one
    std::size_t mn = n, mx = 0;
    for (const auto& f : plan.folds) {
      mn = std::min(mn, f.val_ids.size());
      mx = std::max(mx, f.val_ids.size());
    }
    CHECK(mx - mn <= 1);
  }
  // n = 11, k = 5 gives sizes 3,2,2,2,2 with the larger folds first
  auto plan = kfold_split(ids, 5, 9);
  CHECK(plan.folds[0].val_ids.size() == 3);
  for (int f = 1; f < 5; ++f) CHECK(plan.folds[f].val_ids.size() == 2);
}

TEST_CASE("kfold: deterministic per seed, reshuffled across seeds") {
  std::vector<SampleId> ids;
  for (int i = 0; i < 25; ++i) ids.push_back("id" + std::to_string(i));
  auto a = kfold_split(ids, 5, 1), b = kfold_split(ids, 5, 1), c = kfold_split(ids, 5, 2);
  CHECK(a.folds[0].val_ids == b.folds[0].val_ids);
  CHECK(a.folds[0].val_ids != c.folds[0].val_ids);
  CHECK_THROWS_AS(kfold_split(ids, 1, 0), std::invalid_argument);
  std::vector<SampleId> tiny(ids.begin(), ids.begin() + 3);
  CHECK_THROWS_AS(kfold_split(tiny, 5, 0), std::invalid_argument);
}

TEST_CASE("fold ensemble: identical models are a fixed point of averaging") {
  auto bundle = separable_bundle(15, 110);
  MoeModel<float> m(tiny_model(6), std::uint64_t(5));
  auto single = m.predict(bundle);
  auto avg = fold_ensemble_predict({m, m, m}, bundle);
  for (std::size_t i = 0; i < single.probs.size(); ++i)
    CHECK(avg.probs.a[i] == doctest::Approx(single.probs.a[i]).epsilon(1e-12));
}

TEST_CASE("fold ensemble: two models average elementwise and stay a distribution") {
  auto bundle = separable_bundle(15, 111);
  MoeModel<float> m1(tiny_model(6), std::uint64_t(5));
  MoeModel<float> m2(tiny_model(6), std::uint64_t(6));
  auto p1 = m1.predict(bundle), p2 = m2.predict(bundle);
  auto avg = fold_ensemble_predict({m1, m2}, bundle);
  for (std::size_t i = 0; i < avg.probs.size(); ++i)
    CHECK(avg.probs.a[i] == doctest::Approx(0.5 * (p1.probs.a[i] + p2.probs.a[i])).epsilon(1e-12));
  for (std::size_t i = 0; i < avg.size(); ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) sum += avg.probs(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  avg.validate();
}

TEST_CASE("metrics: perfect predictions score 1.0 everywhere") {
  auto bundle = separable_bundle(30, 112);
  PredictionSet ps;
  ps.ids = bundle.ids;
  ps.probs = Mat<double>(30, 6, 0.0);
  for (std::size_t i = 0; i < 30; ++i) ps.probs(i, class_index(bundle.labels.at(ps.ids[i]))) = 1.0;
  ps.recompute_labels();
  auto m = compute_metrics(ps, truth_of(bundle));
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == doctest::Approx(1.0));
  CHECK(m.weighted_f1 == doctest::Approx(1.0));
  CHECK(m.micro_f1 == doctest::Approx(1.0));
}

TEST_CASE("metrics: the all-neutral predictor on balanced truth") {
  // 10 samples per class, everything predicted neutral
  PredictionSet ps;
  std::map<SampleId, Emotion> truth;
  ps.probs = Mat<double>(60, 6);
  for (int i = 0; i < 60; ++i) {
    SampleId id = "x" + std::to_string(i);
    ps.ids.push_back(id);
    truth[id] = emotion_from_index(std::size_t(i) / 10);
    ps.probs(std::size_t(i), 0) = 1.0;
  }
  ps.recompute_labels();
  auto m = compute_metrics(ps, truth);
  CHECK(m.accuracy == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(m.precision[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(m.recall[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.f1[0] == doctest::Approx(2.0 / 7.0).epsilon(1e-12));
  for (int k = 1; k < 6; ++k) CHECK(m.f1[k] == 0.0);
  CHECK(m.macro_f1 == doctest::Approx(2.0 / 42.0).epsilon(1e-12));
  CHECK(m.weighted_f1 == doctest::Approx(2.0 / 42.0).epsilon(1e-12));
}

TEST_CASE("metrics: agree with an independent recount on random data") {
  Rng rng(13);
  PredictionSet ps;
  std::map<SampleId, Emotion> truth;
  const std::size_t n = 1000;
  ps.probs = Mat<double>(n, 6);
  std::vector<std::size_t> t(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    SampleId id = "r" + std::to_string(i);
    ps.ids.push_back(id);
    t[i] = rng.below(6);
    p[i] = rng.below(6);
    truth[id] = emotion_from_index(t[i]);
    ps.probs(i, p[i]) = 1.0;
  }
  ps.recompute_labels();
  auto m = compute_metrics(ps, truth);

  // naive recount, written independently of the implementation
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += (t[i] == p[i]);
  CHECK(m.accuracy == doctest::Approx(double(correct) / double(n)).epsilon(1e-12));
  double wsum = 0;
  for (std::size_t k = 0; k < 6; ++k) {
    std::size_t tp = 0, pred_k = 0, true_k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += (t[i] == k && p[i] == k);
      pred_k += (p[i] == k);
      true_k += (t[i] == k);
    }
    double prec = pred_k ? double(tp) / double(pred_k) : 0.0;
    double rec = true_k ? double(tp) / double(true_k) : 0.0;
    double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    CHECK(m.f1[k] == doctest::Approx(f1).epsilon(1e-12));
    CHECK(m.support[k] == true_k);
    wsum += f1 * double(true_k);
  }
  CHECK(m.weighted_f1 == doctest::Approx(wsum / double(n)).epsilon(1e-12));
}

TEST_CASE("metrics: mismatched id sets are rejected") {
  PredictionSet ps;
  ps.ids = {"a"};
  ps.probs = Mat<double>(1, 6);
  ps.probs(0, 0) = 1.0;
  ps.recompute_labels();
  std::map<SampleId, Emotion> truth;
  CHECK_THROWS_AS(compute_metrics(ps, truth), std::invalid_argument);
  truth["a"] = Emotion::happy;
  truth["b"] = Emotion::sad;
  CHECK_THROWS_AS(compute_metrics(ps, truth), std::invalid_argument);
}
