// moe_affect: one binary, one subcommand per pipeline stage, files as the
// only interface between stages.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <atomic>
#include <thread>

#include <CLI11.hpp>

#include <moe_affect/ensemble.hpp>
#include <moe_affect/grad_check.hpp>
#include <moe_affect/io.hpp>
#include <moe_affect/pseudo.hpp>
#include <moe_affect/synth.hpp>
#include <moe_affect/train.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moe_affect;

namespace {

std::size_t thread_budget() {
  if (const char* env = std::getenv("MOE_AFFECT_THREADS")) {
    long v = std::atol(env);
    if (v >= 1) return std::size_t(v);
  }
  return 1;
}

/// Per-invocation bookkeeping: path resolution against --workdir, input
/// checksums for manifest.txt, and the effective config for run.json.
struct RunContext {
  fs::path workdir = ".";
  fs::path out;
  std::uint64_t seed = 42;
  json effective = json::object();
  std::vector<std::pair<std::string, std::string>> inputs;  // relative path, checksum

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : workdir / p; }

  void add_input(const fs::path& rel) {
    fs::path p = resolve(rel);
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files)
        inputs.emplace_back((rel / fs::relative(f, p)).generic_string(), file_checksum(f));
    } else {
      inputs.emplace_back(rel.generic_string(), file_checksum(p));
    }
  }

  /// Creates the output directory and writes run.json + manifest.txt; call
  /// only after all inputs validated, right before writing artifacts.
  fs::path open_out(const std::string& subcommand) {
    fs::path dir = resolve(out);
    fs::create_directories(dir);
    effective["subcommand"] = subcommand;
    effective["seed"] = seed;
    std::ofstream rj(dir / "run.json");
    rj << effective.dump(2) << '\n';
    std::ofstream mf(dir / "manifest.txt");
    for (const auto& [path, sum] : inputs) mf << sum << "  " << path << '\n';
    return dir;
  }
};

json load_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  json j;
  is >> j;
  return j;
}

std::map<SampleId, Emotion> read_labels_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "id,label")
    throw std::invalid_argument(path.string() + ": expected header 'id,label'");
  std::map<SampleId, Emotion> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    SampleId id = line.substr(0, comma);
    if (!out.emplace(id, parse_emotion_or_throw(line.substr(comma + 1))).second)
      throw std::invalid_argument(path.string() + ": duplicate id " + id);
  }
  return out;
}

void write_labels_csv(const std::vector<SampleId>& ids, const std::map<SampleId, Emotion>& labels,
                      const fs::path& path) {
  std::ofstream os(path);
  os << "id,label\n";
  for (const auto& id : ids) os << id << ',' << to_string(labels.at(id)) << '\n';
}

ConfusionMatrix confusion_from_json(const json& cfg, const std::string& key, double default_acc) {
  if (cfg.contains(key + "_confusion")) {
    ConfusionMatrix m{};
    const auto& rows = cfg.at(key + "_confusion");
    if (rows.size() != kNumClasses)
      throw std::invalid_argument(key + "_confusion: need 6 rows");
    for (std::size_t i = 0; i < kNumClasses; ++i)
      for (std::size_t j = 0; j < kNumClasses; ++j) m[i][j] = rows.at(i).at(j).get<double>();
    validate_confusion(m);
    return m;
  }
  return uniform_confusion(cfg.value(key + "_accuracy", default_acc));
}

SynthConfig synth_config_from_json(const json& j, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n = j.value("n", std::size_t(100));
  cfg.seed = seed;
  if (j.contains("prior"))
    for (std::size_t k = 0; k < kNumClasses; ++k) cfg.prior[k] = j.at("prior").at(k).get<double>();
  if (!j.contains("branches")) throw std::invalid_argument("synth config: missing 'branches'");
  for (const auto& bj : j.at("branches")) {
    SynthConfig::Branch b;
    b.name = bj.at("name").get<std::string>();
    b.kind = bj.value("kind", std::string("vector")) == "sequence" ? BranchKind::sequence
                                                                   : BranchKind::vector;
    b.dim = bj.at("dim").get<std::size_t>();
    b.separation = bj.value("separation", 2.0);
    b.noise = bj.value("noise", 0.5);
    b.informative = bj.value("informative", true);
    b.t_min = bj.value("t_min", std::size_t(3));
    b.t_max = bj.value("t_max", std::size_t(8));
    cfg.branches.push_back(std::move(b));
  }
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json(const json& j, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.lr0 = j.value("lr0", 1e-3);
  cfg.lr_end = j.value("lr_end", 1e-4);
  cfg.batch_size = j.value("batch_size", std::size_t(256));
  cfg.epochs = j.value("epochs", std::size_t(10));
  std::string loss = j.value("loss", std::string("ce"));
  if (loss == "ce") {
    cfg.loss = LossKind::ce;
  } else if (loss == "focal") {
    cfg.loss = LossKind::focal;
  } else {
    throw std::invalid_argument("train config: unknown loss '" + loss + "'");
  }
  cfg.focal_gamma = j.value("focal_gamma", 2.0);
  if (j.contains("class_weights"))
    for (const auto& w : j.at("class_weights")) cfg.class_weights.push_back(w.get<float>());
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

json log_entry_to_json(const TrainLogEntry& e, int fold) {
  json j{{"stage", e.stage}, {"epoch", e.epoch}, {"step", e.step}, {"lr", e.lr}, {"loss", e.loss}};
  if (fold >= 0) j["fold"] = fold;
  if (e.val_metrics) {
    j["val_weighted_f1"] = e.val_metrics->weighted_f1;
    j["val_accuracy"] = e.val_metrics->accuracy;
  }
  return j;
}

void print_metrics(const MetricsReport& m, std::ostream& os) {
  char buf[160];
  os << "class       precision  recall     f1         support\n";
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::snprintf(buf, sizeof buf, "%-11s %-10.4f %-10.4f %-10.4f %zu\n",
                  std::string(kClassNames[k]).c_str(), m.precision[k], m.recall[k], m.f1[k],
                  m.support[k]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "accuracy %.4f  macro-f1 %.4f  weighted-f1 %.4f  micro-f1 %.4f  n %zu\n",
                m.accuracy, m.macro_f1, m.weighted_f1, m.micro_f1, m.n);
  os << buf;
}

// ---- subcommand bodies ----------------------------------------------------

void cmd_synth(RunContext& ctx, const std::string& config_path) {
  json cfg_json = load_json(ctx.resolve(config_path));
  ctx.add_input(config_path);
  ctx.effective["config"] = cfg_json;
  SynthConfig cfg = synth_config_from_json(cfg_json, ctx.seed);
  ConfusionMatrix model_conf = confusion_from_json(cfg_json, "model", 0.70);
  ConfusionMatrix vlm_conf = confusion_from_json(cfg_json, "vlm", 0.65);

  EmbeddingBundle bundle = gen_bundle(cfg);
  auto model_preds = gen_noisy_predictions(bundle.ids, bundle.labels, model_conf, ctx.seed + 1);
  auto vlm_records =
      gen_vlm_records(gen_noisy_predictions(bundle.ids, bundle.labels, vlm_conf, ctx.seed + 2), ctx.seed + 3);

  fs::path dir = ctx.open_out("synth");
  write_bundle(bundle, dir / "bundle");
  write_labels_csv(bundle.ids, bundle.labels, dir / "truth.csv");
  write_predictions(model_preds, dir / "model_preds.jsonl");
  write_vlm_records(vlm_records, dir / "vlm.jsonl");
}

void cmd_train(RunContext& ctx, const std::string& bundle_path, const std::string& config_path,
               std::size_t folds, const std::string& pretrain_path) {
  json cfg_json = load_json(ctx.resolve(config_path));
  ctx.add_input(config_path);
  ctx.add_input(bundle_path);
  if (!pretrain_path.empty()) ctx.add_input(pretrain_path);
  ctx.effective["config"] = cfg_json;
  ctx.effective["folds"] = folds;

  MoeConfig moe_cfg = cfg_json.at("model").get<MoeConfig>();
  moe_cfg.validate();
  TrainConfig train_cfg = train_config_from_json(cfg_json.value("train", json::object()), ctx.seed);
  EmbeddingBundle bundle = read_bundle(ctx.resolve(bundle_path));
  EmbeddingBundle pretrain;
  if (!pretrain_path.empty()) pretrain = read_bundle(ctx.resolve(pretrain_path));

  auto run_one = [&](const EmbeddingBundle& train_b, const EmbeddingBundle* val) {
    return pretrain_path.empty() ? train_supervised(train_b, train_cfg, moe_cfg, val)
                                 : two_stage_train(pretrain, train_b, train_cfg, moe_cfg, val);
  };

  if (folds == 0) {
    auto result = run_one(bundle, nullptr);
    fs::path dir = ctx.open_out("train");
    std::ofstream mj(dir / "model.json");
    mj << json(moe_cfg).dump(2) << '\n';
    write_checkpoint(result.model.params(), dir / "model.ckpt");
    std::ofstream log(dir / "train_log.jsonl");
    for (const auto& e : result.log) log << log_entry_to_json(e, -1).dump() << '\n';
    return;
  }

  auto plan = kfold_split(bundle.ids, folds, ctx.seed);
  std::vector<TrainResult> results(folds);
  std::vector<EmbeddingBundle> vals(folds);
  std::size_t workers = std::min(thread_budget(), folds);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t f = next.fetch_add(1); f < folds; f = next.fetch_add(1)) {
      auto train_b = bundle.subset(plan.folds[f].train_ids);
      vals[f] = bundle.subset(plan.folds[f].val_ids);
      results[f] = run_one(train_b, &vals[f]);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  fs::path dir = ctx.open_out("train");
  std::ofstream mj(dir / "model.json");
  mj << json(moe_cfg).dump(2) << '\n';
  json folds_json = json::array();
  std::ofstream log(dir / "train_log.jsonl");
  for (std::size_t f = 0; f < folds; ++f) {
    // keep the epoch with the best validation weighted-F1 (per-fold model
    // selection); fall back to the final weights if somehow absent
    const auto& params =
        results[f].best_params ? *results[f].best_params : results[f].model.params();
    write_checkpoint(params, dir / ("fold" + std::to_string(f) + ".ckpt"));
    folds_json.push_back({{"fold", f},
                          {"val_ids", plan.folds[f].val_ids},
                          {"best_epoch", results[f].best_epoch},
                          {"best_val_weighted_f1", results[f].best_val_weighted_f1}});
    for (const auto& e : results[f].log) log << log_entry_to_json(e, int(f)).dump() << '\n';
  }
  std::ofstream fj(dir / "folds.json");
  fj << folds_json.dump(2) << '\n';
}

void cmd_predict(RunContext& ctx, const std::string& model_path, const std::string& bundle_path,
                 const std::vector<std::string>& ckpts) {
  json model_json = load_json(ctx.resolve(model_path));
  ctx.add_input(model_path);
  ctx.add_input(bundle_path);
  for (const auto& c : ckpts) ctx.add_input(c);
  ctx.effective["checkpoints"] = ckpts;

  MoeConfig cfg = model_json.get<MoeConfig>();
  cfg.validate();
  EmbeddingBundle bundle = read_bundle(ctx.resolve(bundle_path));
  std::vector<MoeModel<float>> models;
  for (const auto& c : ckpts) models.emplace_back(cfg, read_checkpoint(ctx.resolve(c)));
  auto preds = fold_ensemble_predict(models, bundle);

  fs::path dir = ctx.open_out("predict");
  write_predictions(preds, dir / "predictions.jsonl");
}

void cmd_pseudo_label(RunContext& ctx, const std::string& preds_path, const std::string& vlm_path,
                      const std::string& bundle_path, std::size_t limit) {
  auto preds = read_predictions(ctx.resolve(preds_path));
  auto vlm = read_vlm_records(ctx.resolve(vlm_path));
  auto bundle = read_bundle(ctx.resolve(bundle_path));
  ctx.add_input(preds_path);
  ctx.add_input(vlm_path);
  ctx.add_input(bundle_path);
  ctx.effective["limit"] = limit;

  auto pseudo = consensus_filter(preds, vlm);
  auto report = agreement_report(preds, vlm);
  if (limit > 0 && pseudo.ids.size() > limit) pseudo.ids.resize(limit);
  auto out_bundle = export_pseudo_bundle(pseudo, bundle);

  fs::path dir = ctx.open_out("pseudo-label");
  write_bundle(out_bundle, dir / "pseudo_bundle");
  json aj{{"n_common", report.n_common},
          {"n_agree", report.n_agree},
          {"model_only", report.model_only},
          {"vlm_only", report.vlm_only},
          {"agreement_rate", report.agreement_rate},
          {"retained", pseudo.ids.size()},
          {"per_class_agreement", report.per_class_agreement},
          {"retained_distribution", report.retained_distribution}};
  std::ofstream os(dir / "agreement.json");
  os << aj.dump(2) << '\n';
}

void cmd_vote(RunContext& ctx, const std::vector<std::string>& pred_paths,
              const std::string& truth_path, const std::string& reliabilities_path,
              bool count_mode) {
  if (truth_path.empty() == reliabilities_path.empty())
    throw std::invalid_argument("vote: need exactly one of --truth and --reliabilities");
  std::vector<std::pair<PredictionSet, double>> experts;
  json rj = json::object();
  std::map<SampleId, Emotion> truth;
  json rel_file;
  if (!truth_path.empty()) {
    truth = read_labels_csv(ctx.resolve(truth_path));
    ctx.add_input(truth_path);
  } else {
    rel_file = load_json(ctx.resolve(reliabilities_path));
    ctx.add_input(reliabilities_path);
  }
  for (const auto& p : pred_paths) {
    auto ps = read_predictions(ctx.resolve(p));
    ctx.add_input(p);
    std::string name = fs::path(p).stem().string();
    double r = truth_path.empty() ? rel_file.at(name).get<double>()
                                  : compute_reliability(ps, truth);
    rj[name] = r;
    experts.emplace_back(std::move(ps), r);
  }
  ctx.effective["count_mode"] = count_mode;
  auto vote = weighted_vote(experts, count_mode);

  fs::path dir = ctx.open_out("vote");
  write_predictions(vote.predictions, dir / "voted.jsonl");
  std::ofstream ms(dir / "vote_mass.jsonl");
  for (std::size_t i = 0; i < vote.predictions.size(); ++i) {
    const auto& vm = vote.mass[i];
    json j{{"id", vote.predictions.ids[i]},
           {"raw", vm.raw},
           {"share", vm.share},
           {"rank", vm.rank}};
    ms << j.dump() << '\n';
  }
  std::ofstream rs(dir / "reliabilities.json");
  rs << rj.dump(2) << '\n';
}

void cmd_rerank(RunContext& ctx, const std::string& voted_path, const std::string& mass_path,
                const std::string& vlm_path, double tau) {
  VoteResult vote;
  vote.predictions = read_predictions(ctx.resolve(voted_path));
  std::ifstream ms(ctx.resolve(mass_path));
  if (!ms) throw std::runtime_error("missing file: " + ctx.resolve(mass_path).string());
  std::string line;
  std::size_t i = 0;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (i >= vote.predictions.size() || j.at("id").get<SampleId>() != vote.predictions.ids[i])
      throw std::invalid_argument("rerank: vote-mass ids do not align with the predictions file");
    VoteMass vm;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      vm.raw[k] = j.at("raw").at(k).get<double>();
      vm.share[k] = j.at("share").at(k).get<double>();
      vm.rank[k] = j.at("rank").at(k).get<std::size_t>();
    }
    vote.mass.push_back(vm);
    ++i;
  }
  if (i != vote.predictions.size())
    throw std::invalid_argument("rerank: vote-mass file is shorter than the predictions file");
  auto vlm = read_vlm_records(ctx.resolve(vlm_path));
  std::map<SampleId, Emotion> vlm_labels;
  for (const auto& r : vlm) vlm_labels[r.id] = r.label;
  ctx.add_input(voted_path);
  ctx.add_input(mass_path);
  ctx.add_input(vlm_path);
  ctx.effective["tau"] = tau;

  RerankRuleSet rules;
  rules.tau = tau;
  auto result = rerank(vote, vlm_labels, rules);

  fs::path dir = ctx.open_out("rerank");
  write_predictions(result.predictions, dir / "final.jsonl");
  std::ofstream cs(dir / "changes.jsonl");
  for (const auto& c : result.changes) {
    json j{{"id", c.id},
           {"from", std::string(to_string(c.from))},
           {"to", std::string(to_string(c.to))},
           {"rule", c.rule}};
    cs << j.dump() << '\n';
  }
}

void cmd_eval(RunContext& ctx, const std::string& preds_path, const std::string& truth_path) {
  auto preds = read_predictions(ctx.resolve(preds_path));
  auto truth = read_labels_csv(ctx.resolve(truth_path));
  ctx.add_input(preds_path);
  ctx.add_input(truth_path);
  auto m = compute_metrics(preds, truth);

  fs::path dir = ctx.open_out("eval");
  std::ofstream os(dir / "metrics.json");
  os << metrics_to_json(m).dump(2) << '\n';
  print_metrics(m, std::cout);
}

void cmd_report_dist(RunContext& ctx, const std::vector<std::string>& pred_paths,
                     const std::string& truth_path) {
  struct Row {
    std::string name;
    std::array<double, kNumClasses> dist;
  };
  std::vector<Row> rows;
  if (!truth_path.empty()) {
    auto truth = read_labels_csv(ctx.resolve(truth_path));
    ctx.add_input(truth_path);
    std::vector<Emotion> labels;
    for (const auto& [id, e] : truth) labels.push_back(e);
    rows.push_back({"truth", distribution_report(labels)});
  }
  for (const auto& p : pred_paths) {
    auto ps = read_predictions(ctx.resolve(p));
    ctx.add_input(p);
    rows.push_back({fs::path(p).stem().string(), distribution_report(ps.labels)});
  }

  fs::path dir = ctx.open_out("report-dist");
  std::ostringstream table;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-16s", "set");
  table << buf;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::snprintf(buf, sizeof buf, "%10s", std::string(kClassNames[k]).c_str());
    table << buf;
  }
  table << '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-16s", row.name.c_str());
    table << buf;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      std::snprintf(buf, sizeof buf, "%10.1f", 100.0 * row.dist[k]);
      table << buf;
    }
    table << '\n';
  }
  std::ofstream os(dir / "distribution.txt");
  os << table.str();
  std::cout << table.str();
}

int cmd_gradcheck(RunContext& ctx, const std::string& config_path) {
  json model_json = load_json(ctx.resolve(config_path));
  ctx.add_input(config_path);
  MoeConfig cfg = model_json.get<MoeConfig>();
  cfg.validate();

  // a small random batch over the configured branches
  Rng rng(ctx.seed);
  const std::size_t n = 3;
  BatchInputs<double> batch;
  batch.n = n;
  for (const auto& spec : cfg.branches) {
    BatchInputs<double>::BranchData bd;
    if (spec.kind == BranchKind::vector) {
      bd.vec = Mat<double>(n, spec.dim);
      for (auto& v : bd.vec.a) v = rng.normal();
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        Mat<double> frames(3 + i, spec.dim);
        for (auto& v : frames.a) v = rng.normal();
        bd.seq.push_back(frames);
      }
    }
    batch.branches.push_back(std::move(bd));
  }
  for (std::size_t i = 0; i < n; ++i) batch.targets.push_back(i % kNumClasses);

  auto check = [&](auto precision_tag, double tolerance) {
    using T = decltype(precision_tag);
    auto batch_t = batch.cast<T>();
    auto loss_fn = [&](const ParamStore<double>& s) {
      MoeModel<double> m(cfg, s);
      Tape<double> tape;
      auto g = m.forward(tape, batch);
      auto l = cross_entropy_loss(tape, g.aggregated, batch.targets);
      return tape.val(l)(0, 0);
    };
    MoeModel<T> model(cfg, ctx.seed);
    auto grad_fn = [&](ParamStore<T>& s) {
      MoeModel<T> m(cfg, s);
      Tape<T> tape;
      auto g = m.forward(tape, batch_t);
      auto l = cross_entropy_loss(tape, g.aggregated, batch_t.targets);
      tape.backward(l);
      m.accumulate_grads(tape, g);
      s = m.params();
    };
    auto report = grad_check<T>(model.params(), loss_fn, grad_fn, {1e-4, 200, ctx.seed});
    bool ok = report.deterministic && report.max_rel_err < tolerance;
    std::cout << (ok ? "pass" : "FAIL") << "  " << (sizeof(T) == 8 ? "64-bit" : "32-bit")
              << "  max_rel_err=" << report.max_rel_err << "  coords=" << report.coords_checked
              << "  worst=" << report.worst_param << '\n';
    return std::pair(ok, report);
  };

  auto [ok64, rep64] = check(double{}, 1e-6);
  auto [ok32, rep32] = check(float{}, 1e-3);

  fs::path dir = ctx.open_out("gradcheck");
  json j{{"pass", ok64 && ok32},
         {"fp64", {{"max_rel_err", rep64.max_rel_err}, {"worst_param", rep64.worst_param}}},
         {"fp32", {{"max_rel_err", rep32.max_rel_err}, {"worst_param", rep32.worst_param}}}};
  std::ofstream os(dir / "gradcheck.json");
  os << j.dump(2) << '\n';
  return (ok64 && ok32) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-encoder multimodal emotion pipeline: routed mixture of experts, "
               "consensus pseudo-labels, weighted voting and rule-based re-ranking"};
  app.require_subcommand(1);

  RunContext ctx;
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "base directory for all relative paths");
  app.add_option("--seed", ctx.seed, "master random seed")->capture_default_str();

  std::string config_path, bundle_path, pretrain_path, preds_path, vlm_path, truth_path;
  std::string model_path, reliabilities_path, voted_path, mass_path;
  std::vector<std::string> many_paths;
  std::string out_path;
  std::size_t folds = 0, limit = 0;
  double tau = 0.25;
  bool count_mode = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic bundle + simulated predictors");
  synth->add_option("--config", config_path, "synth config json")->required();
  synth->add_option("--out", out_path, "output directory")->required();

  auto* train = app.add_subcommand("train", "train the model, optionally with k-fold CV");
  train->add_option("--bundle", bundle_path, "labeled bundle directory")->required();
  train->add_option("--config", config_path, "model + train config json")->required();
  train->add_option("--folds", folds, "number of CV folds (0 = single model)");
  train->add_option("--pretrain", pretrain_path, "pseudo-labeled bundle for stage-1 pretraining");
  train->add_option("--out", out_path, "output directory")->required();

  auto* predict = app.add_subcommand("predict", "average fold checkpoints into predictions");
  predict->add_option("--model", model_path, "model config json (from train)")->required();
  predict->add_option("--bundle", bundle_path, "bundle directory")->required();
  predict->add_option("checkpoints", many_paths, "checkpoint files")->required();
  predict->add_option("--out", out_path, "output directory")->required();

  auto* pseudo = app.add_subcommand("pseudo-label", "consensus-filter predictions against VLM labels");
  pseudo->add_option("--preds", preds_path, "model predictions jsonl")->required();
  pseudo->add_option("--vlm", vlm_path, "vlm records jsonl")->required();
  pseudo->add_option("--bundle", bundle_path, "unlabeled bundle directory")->required();
  pseudo->add_option("--limit", limit, "keep at most N pseudo-labeled samples (0 = all)");
  pseudo->add_option("--out", out_path, "output directory")->required();

  auto* vote = app.add_subcommand("vote", "reliability-weighted vote over prediction files");
  vote->add_option("predictions", many_paths, "prediction files")->required();
  vote->add_option("--truth", truth_path, "labels csv to compute reliabilities from");
  vote->add_option("--reliabilities", reliabilities_path, "json file {expert: r}");
  vote->add_flag("--count-mode", count_mode, "vote with argmax indicators instead of soft rows");
  vote->add_option("--out", out_path, "output directory")->required();

  auto* rerank_cmd = app.add_subcommand("rerank", "apply the neutral-bias correction rules");
  rerank_cmd->add_option("--voted", voted_path, "voted predictions jsonl")->required();
  rerank_cmd->add_option("--mass", mass_path, "vote-mass jsonl")->required();
  rerank_cmd->add_option("--vlm", vlm_path, "vlm records jsonl")->required();
  rerank_cmd->add_option("--tau", tau, "strict share threshold for rule 2")->capture_default_str();
  rerank_cmd->add_option("--out", out_path, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
  eval->add_option("--preds", preds_path, "predictions jsonl")->required();
  eval->add_option("--truth", truth_path, "labels csv")->required();
  eval->add_option("--out", out_path, "output directory")->required();

  auto* dist = app.add_subcommand("report-dist", "emotion-distribution comparison table");
  dist->add_option("predictions", many_paths, "prediction files")->required();
  dist->add_option("--truth", truth_path, "optional labels csv reference row");
  dist->add_option("--out", out_path, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gradcheck->add_option("--config", config_path, "model config json")->required();
  gradcheck->add_option("--out", out_path, "output directory")->required();

  // --seed/--workdir may appear after the subcommand name
  for (auto* sc : app.get_subcommands([](const CLI::App*) { return true; })) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  ctx.workdir = workdir;
  ctx.out = out_path;
  try {
    if (*synth) cmd_synth(ctx, config_path);
    if (*train) cmd_train(ctx, bundle_path, config_path, folds, pretrain_path);
    if (*predict) cmd_predict(ctx, model_path, bundle_path, many_paths);
    if (*pseudo) cmd_pseudo_label(ctx, preds_path, vlm_path, bundle_path, limit);
    if (*vote) cmd_vote(ctx, many_paths, truth_path, reliabilities_path, count_mode);
    if (*rerank_cmd) cmd_rerank(ctx, voted_path, mass_path, vlm_path, tau);
    if (*eval) cmd_eval(ctx, preds_path, truth_path);
    if (*dist) cmd_report_dist(ctx, many_paths, truth_path);
    if (*gradcheck) return cmd_gradcheck(ctx, config_path);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const std::runtime_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
