#include "bimamba/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "bimamba/epochs.hpp"
#include "bimamba/errors.hpp"
#include "bimamba/gradcheck.hpp"
#include "bimamba/manifest.hpp"
#include "bimamba/render.hpp"
#include "bimamba/serialize.hpp"
#include "bimamba/synth.hpp"

namespace bimamba::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::vector<std::string> stage_names() {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < kNumStages; ++k) names.emplace_back(stage_name(static_cast<StageLabel>(k)));
  return names;
}

const std::vector<std::string> kHealthNames = {"healthy", "unhealthy"};

std::string fold_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fold_%02zu", i + 1);
  return buf;
}

std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", r);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json parse_json(const std::string& text, const std::string& what) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, what + " is not valid JSON");
  }
}

// Seeds for fold i, independent of scheduling.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t i, std::uint64_t salt) {
  return seed * 1000003ULL + 7919ULL * (i + 1) + salt;
}

void write_predictions(const fs::path& dir, const EpochBatch& data, const std::vector<int>& predictions) {
  fs::create_directories(dir);
  std::map<std::string, std::string> per_subject;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.subjects[i];
    if (!per_subject.count(s)) order.push_back(s);
    auto& text = per_subject[s];
    text += stage_to_char(static_cast<StageLabel>(data.labels[i]));
    text += ' ';
    text += stage_to_char(static_cast<StageLabel>(predictions[i]));
    text += '\n';
  }
  for (const auto& s : order) write_text(dir / (s + ".txt"), per_subject[s]);
}

// Pairs of (truth, prediction) written by write_predictions.
std::pair<Hypnogram, Hypnogram> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  Hypnogram truth, pred;
  truth.subject = pred.subject = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t = line.size() == 3 ? stage_from_char(line[0]) : std::nullopt;
    const auto p = line.size() == 3 ? stage_from_char(line[2]) : std::nullopt;
    if (!t || !p) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected '<truth> <pred>'");
    truth.stages.push_back(*t);
    pred.stages.push_back(*p);
  }
  truth.mask.assign(truth.size(), true);
  pred.mask.assign(pred.size(), true);
  return {truth, pred};
}

}  // namespace

std::string to_json(const training::TrainingConfig& cfg) {
  ordered_json j;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["seed"] = cfg.seed;
  return j.dump();
}

training::TrainingConfig training_config_from_json(const std::string& text) {
  const auto j = parse_json(text, "training config");
  if (!j.is_object()) throw SchemaError("training config: expected a JSON object");
  training::TrainingConfig cfg;
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError(std::string("training config: field '") + key + "' has the wrong type");
    }
  };
  field("epochs", cfg.epochs);
  field("batch_size", cfg.batch_size);
  field("lr", cfg.lr);
  field("weight_decay", cfg.weight_decay);
  field("beta1", cfg.beta1);
  field("beta2", cfg.beta2);
  field("eps", cfg.eps);
  field("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

std::size_t thread_limit() {
  const char* env = std::getenv("BIMAMBA_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("BIMAMBA_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

std::vector<double> parse_ratios(const std::string& text) {
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("--ratios: '" + s + "' is not a number");
    }
  };
  std::vector<double> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const double lo = number(text.substr(0, dots));
    const double hi = number(text.substr(dots + 2));
    for (int i = 0; lo + 0.1 * i <= hi + 1e-9; ++i) out.push_back(std::round((lo + 0.1 * i) * 1e6) / 1e6);
  } else {
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(number(part));
  }
  if (out.empty()) throw ConfigError("--ratios: no ratios given");
  for (double r : out) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("--ratios: each ratio must lie in (0, 1)");
  }
  return out;
}

CvResult cross_validate(const EpochBatch& data, const model::StageModelConfig& mcfg,
                        const training::TrainingConfig& tcfg, std::size_t k, std::uint64_t seed, const fs::path& out,
                        std::size_t threads) {
  mcfg.validate();
  std::vector<std::string> subjects;
  for (const auto& s : data.subjects) {
    if (std::find(subjects.begin(), subjects.end(), s) == subjects.end()) subjects.push_back(s);
  }
  const auto plan = training::subject_kfold(subjects, k, seed);
  CvResult result;
  result.folds.resize(plan.size());
  if (!out.empty()) {
    fs::create_directories(out);
    ordered_json pj;
    pj["schema"] = "bimamba-cv-plan/1";
    pj["k"] = k;
    pj["seed"] = seed;
    pj["folds"] = ordered_json::array();
    for (std::size_t i = 0; i < plan.size(); ++i) {
      pj["folds"].push_back({{"id", fold_id(i)}, {"train", plan[i].train}, {"validation", plan[i].validation}});
    }
    write_text(out / "plan.json", pj.dump(2) + "\n");
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < plan.size(); i = next++) {
      try {
        FoldResult& fr = result.folds[i];
        fr.id = fold_id(i);
        fr.fold = plan[i];
        model::StageModel m(mcfg, fold_seed(seed, i, 1));
        training::TrainingConfig cfg = tcfg;
        cfg.seed = fold_seed(seed, i, 2);
        fs::path stem;
        if (!out.empty()) {
          fs::create_directories(out / fr.id);
          stem = out / fr.id / "model";
        }
        fr.report = training::train(m, data, plan[i], cfg, stem);
        if (!out.empty()) {
          write_text(out / fr.id / "metrics.json", training::to_json(fr.report, stage_names()) + "\n");
          const EpochBatch val = data.gather(training::rows_for_subjects(data, plan[i].validation));
          write_predictions(out / fr.id / "predictions", val, fr.report.best.predictions);
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, plan.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  std::vector<metrics::MetricBundle> bundles;
  for (const auto& f : result.folds) bundles.push_back(f.report.best.metrics);
  result.mean = metrics::mean_bundle(bundles);
  return result;
}

std::vector<RatioResult> health_sweep(const std::vector<Hypnogram>& hypnograms, const std::vector<double>& ratios,
                                      const model::HealthModelConfig& hcfg, const training::TrainingConfig& tcfg,
                                      std::uint64_t seed, const fs::path& out) {
  hcfg.validate();
  const EpochBatch data = data::encode_health_batch(hypnograms, hcfg.max_cycles);
  std::set<std::string> ids(data.subjects.begin(), data.subjects.end());
  if (ids.size() != data.size()) throw SchemaError("health: subject ids must be unique");
  if (!out.empty()) fs::create_directories(out);
  std::vector<RatioResult> results;
  for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
    const double ratio = ratios[ri];
    const auto [train_rows, test_rows] = training::stratified_split(data.labels, ratio, seed);
    training::Fold fold;
    for (auto r : train_rows) fold.train.push_back(data.subjects[r]);
    for (auto r : test_rows) fold.validation.push_back(data.subjects[r]);
    model::HealthModel m(hcfg, fold_seed(seed, ri, 3));
    training::TrainingConfig cfg = tcfg;
    cfg.seed = fold_seed(seed, ri, 4);
    const auto rep = training::train(m, data, fold, cfg);
    RatioResult rr;
    rr.ratio = ratio;
    rr.train_size = train_rows.size();
    rr.test_size = test_rows.size();
    rr.accuracy = rep.best.metrics.accuracy;
    const EpochBatch test = data.gather(training::rows_for_subjects(data, fold.validation));
    std::vector<double> scores;
    for (std::size_t i = 0; i < test.size(); ++i) scores.push_back(rep.best.probabilities[i * 2 + 1]);
    rr.roc = metrics::roc_auc(scores, test.labels);
    rr.auc = rr.roc.auc;
    if (!out.empty()) {
      write_text(out / ("roc_" + ratio_tag(ratio) + ".json"), metrics::to_json(rr.roc) + "\n");
      write_text(out / ("report_" + ratio_tag(ratio) + ".json"), training::to_json(rep, kHealthNames) + "\n");
    }
    results.push_back(std::move(rr));
  }
  if (!out.empty()) {
    ordered_json j;
    j["schema"] = "bimamba-health-sweep/1";
    j["seed"] = seed;
    j["ratios"] = ordered_json::array();
    std::string table = "ratio  train  test  accuracy  auc\n";
    for (const auto& r : results) {
      j["ratios"].push_back({{"ratio", r.ratio},
                             {"train", r.train_size},
                             {"test", r.test_size},
                             {"accuracy", r.accuracy},
                             {"auc", r.auc},
                             {"roc", "roc_" + ratio_tag(r.ratio) + ".json"}});
      char buf[128];
      std::snprintf(buf, sizeof buf, "%5.2f  %5zu  %4zu  %8.3f  %5.3f\n", r.ratio, r.train_size, r.test_size,
                    r.accuracy, r.auc);
      table += buf;
    }
    write_text(out / "health_ratios.json", j.dump(2) + "\n");
    write_text(out / "health_ratios.txt", table);
  }
  return results;
}

metrics::MetricBundle report(const fs::path& run_dir) {
  const auto plan = parse_json(read_text(run_dir / "plan.json"), (run_dir / "plan.json").string());
  if (!plan.contains("folds") || !plan["folds"].is_array()) throw SchemaError("plan.json: missing field 'folds'");
  std::vector<std::string> ids;
  std::vector<std::string> missing;
  for (const auto& f : plan["folds"]) {
    if (!f.contains("id") || !f["id"].is_string()) throw SchemaError("plan.json: fold entry without 'id'");
    const auto id = f["id"].get<std::string>();
    ids.push_back(id);
    if (!fs::exists(run_dir / id / "metrics.json")) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "missing fold reports:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  const auto names = stage_names();
  std::vector<metrics::TableRow> rows;
  std::vector<metrics::MetricBundle> bundles;
  metrics::ConfusionMatrix pooled(kNumStages);
  ordered_json folds = ordered_json::array();
  for (const auto& id : ids) {
    const auto path = run_dir / id / "metrics.json";
    const auto j = parse_json(read_text(path), path.string());
    if (!j.contains("best_confusion")) throw SchemaError(path.string() + ": missing field 'best_confusion'");
    metrics::ConfusionMatrix cm(kNumStages);
    const auto& rows_j = j["best_confusion"];
    if (!rows_j.is_array() || rows_j.size() != kNumStages) {
      throw SchemaError(path.string() + ": best_confusion must be 5 x 5");
    }
    for (std::size_t t = 0; t < kNumStages; ++t) {
      if (!rows_j[t].is_array() || rows_j[t].size() != kNumStages) {
        throw SchemaError(path.string() + ": best_confusion must be 5 x 5");
      }
      for (std::size_t p = 0; p < kNumStages; ++p) cm.at(t, p) = rows_j[t][p].get<std::uint64_t>();
    }
    pooled += cm;
    const auto b = metrics::bundle(cm);
    bundles.push_back(b);
    rows.push_back({id, b});
    folds.push_back({{"id", id}, {"metrics", parse_json(metrics::to_json(b, names), "bundle")}});
  }
  const auto mean = metrics::mean_bundle(bundles);
  rows.push_back({"mean", mean});
  ordered_json out;
  out["schema"] = "bimamba-cv-report/1";
  out["folds"] = folds;
  out["mean"] = parse_json(metrics::to_json(mean, names), "bundle");
  out["pooled_confusion"] = parse_json(metrics::to_json(pooled), "confusion");
  write_text(run_dir / "report.json", out.dump(2) + "\n");
  write_text(run_dir / "report.txt", metrics::render_table(rows, names));
  const fs::path plots = run_dir / "plots";
  fs::create_directories(plots);
  for (const auto& id : ids) {
    const fs::path pred_dir = run_dir / id / "predictions";
    if (!fs::exists(pred_dir)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(pred_dir)) {
      if (e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto [truth, pred] = read_predictions(f);
      metrics::render_hypnogram(truth, pred, plots / f.stem());
    }
  }
  return mean;
}

namespace {

struct Options {
  std::string manifest;
  std::string target;
  std::string config;
  std::string out;
  std::string model;
  std::string run_dir;
  std::string ratios = "0.5..0.9";
  std::uint64_t seed = 0;
  std::size_t k = 10;
  std::size_t fold = 0;
  std::size_t epoch_samples = 0;
  std::size_t n_bimamba = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  bool no_eca = false;
  bool balance = false;
  // synth
  bool health = false;
  std::size_t subjects = 8;
  std::size_t epochs_per_subject = 200;
  std::size_t informative = 0;
  double skew = 1.0;
  double noise = 0.5;
  std::size_t healthy = 110;
  std::size_t unhealthy = 100;
};

struct Configs {
  model::StageModelConfig stage;
  model::HealthModelConfig health;
  training::TrainingConfig training;
};

Configs resolve_configs(const Options& o) {
  Configs c;
  if (!o.config.empty()) {
    const auto j = parse_json(read_text(o.config), o.config);
    if (!j.is_object()) throw SchemaError(o.config + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "model") {
        c.stage = model::stage_config_from_json(value.dump());
      } else if (key == "health_model") {
        c.health = model::health_config_from_json(value.dump());
      } else if (key == "training") {
        c.training = training_config_from_json(value.dump());
      } else {
        throw SchemaError(o.config + ": unknown field '" + key + "'");
      }
    }
  }
  if (o.epoch_samples) c.stage.epoch_samples = o.epoch_samples;
  if (o.n_bimamba) c.stage.n_bimamba = c.health.n_bimamba = o.n_bimamba;
  if (o.no_eca) c.stage.use_eca = false;
  if (o.epochs) c.training.epochs = o.epochs;
  if (o.batch_size) c.training.batch_size = o.batch_size;
  if (o.lr > 0.0) c.training.lr = o.lr;
  c.training.seed = o.seed;
  c.training.validate();
  return c;
}

void echo_config(const fs::path& out, const std::string& subcommand, const Options& o, const Configs& c,
                 bool stage, bool health) {
  fs::create_directories(out);
  ordered_json j;
  j["schema"] = "bimamba-run-config/1";
  j["subcommand"] = subcommand;
  j["seed"] = o.seed;
  if (!o.manifest.empty()) j["manifest"] = o.manifest;
  if (!o.target.empty()) j["target"] = o.target;
  if (subcommand == "cv" || subcommand == "xeval" || subcommand == "train") j["k"] = o.k;
  if (subcommand == "train") j["fold"] = o.fold;
  if (subcommand == "health") {
    j["ratios"] = parse_ratios(o.ratios);
    j["balance"] = o.balance;
  }
  if (stage) j["model"] = parse_json(model::to_json(c.stage), "config");
  if (health) j["health_model"] = parse_json(model::to_json(c.health), "config");
  j["training"] = parse_json(to_json(c.training), "config");
  write_text(out / "run_config.json", j.dump(2) + "\n");
}

EpochBatch load_stage(const std::string& manifest, const model::StageModelConfig& cfg) {
  const auto m = data::load_manifest(manifest);
  m.channels.validate(cfg.channels);
  data::LoadStats stats;
  EpochBatch b = data::load_stage_epochs(m, cfg.epoch_samples, &stats);
  if (b.size() == 0) throw ConfigError("manifest " + manifest + " yields no labelled epochs");
  return b;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void cmd_synth(const Options& o) {
  if (o.out.empty()) throw ConfigError("synth: --out is required");
  const fs::path out = o.out;
  fs::create_directories(out / "labels");
  data::Manifest m;
  if (o.health) {
    data::SynthHealthSpec spec;
    spec.healthy = o.healthy;
    spec.unhealthy = o.unhealthy;
    if (o.balance) {
      // Keep the 110 : 100 proportion for the requested total.
      const std::size_t total = o.healthy + o.unhealthy;
      spec.healthy = static_cast<std::size_t>(std::llround(static_cast<double>(total) * 110.0 / 210.0));
      spec.unhealthy = total - spec.healthy;
    }
    spec.seed = o.seed;
    m.name = "synthetic-health";
    for (const auto& h : data::synth_health(spec)) {
      std::vector<int> labels;
      for (auto s : h.stages) labels.push_back(static_cast<int>(s));
      const fs::path rel = fs::path("labels") / (h.subject + ".txt");
      data::write_labels(out / rel, labels);
      data::SubjectEntry e;
      e.id = h.subject;
      e.labels = rel;
      e.health = h.health;
      m.subjects.push_back(e);
    }
  } else {
    data::SynthStageSpec spec;
    spec.n_subjects = o.subjects;
    spec.epochs_per_subject = o.epochs_per_subject;
    spec.epoch_samples = o.epoch_samples ? o.epoch_samples : 500;
    spec.informative_channels = o.informative;
    spec.skew = o.skew;
    spec.noise = o.noise;
    spec.seed = o.seed;
    fs::create_directories(out / "signals");
    m.name = "synthetic-psg";
    for (const auto& s : data::synth_stage(spec)) {
      const fs::path sig = fs::path("signals") / (s.id + ".bmt");
      const fs::path lab = fs::path("labels") / (s.id + ".txt");
      save_tensor(out / sig, s.signals);
      data::write_labels(out / lab, s.labels);
      data::SubjectEntry e;
      e.id = s.id;
      e.signals = sig;
      e.sample_rate = static_cast<double>(spec.epoch_samples) / 30.0;
      e.labels = lab;
      m.subjects.push_back(e);
    }
  }
  data::save_manifest(out / "manifest.json", m);
  std::cout << "wrote " << m.subjects.size() << " subjects to " << (out / "manifest.json").string() << "\n";
}

void cmd_train(const Options& o) {
  if (o.manifest.empty() || o.out.empty()) throw ConfigError("train: --manifest and --out are required");
  const Configs c = resolve_configs(o);
  const fs::path out = o.out;
  echo_config(out, "train", o, c, true, false);
  const EpochBatch data = load_stage(o.manifest, c.stage);
  std::vector<std::string> subjects;
  for (const auto& s : data.subjects) {
    if (std::find(subjects.begin(), subjects.end(), s) == subjects.end()) subjects.push_back(s);
  }
  const auto plan = training::subject_kfold(subjects, o.k, o.seed);
  if (o.fold >= plan.size()) throw ConfigError("train: --fold must be below --k");
  model::StageModel m(c.stage, fold_seed(o.seed, o.fold, 1));
  training::TrainingConfig tc = c.training;
  tc.seed = fold_seed(o.seed, o.fold, 2);
  const auto rep = training::train(m, data, plan[o.fold], tc, out / "model", [](const training::EpochStats& e) {
    std::cout << "epoch " << e.epoch << " train_loss " << fmt3(e.train_loss) << " val_acc " << fmt3(e.val_accuracy)
              << " val_kappa " << fmt3(e.val_kappa) << std::endl;
  });
  write_text(out / "train_report.json", training::to_json(rep, stage_names()) + "\n");
  std::cout << "best epoch " << rep.best_epoch << " accuracy " << fmt3(rep.best.metrics.accuracy) << "\n";
}

void cmd_cv(const Options& o) {
  if (o.manifest.empty() || o.out.empty()) throw ConfigError("cv: --manifest and --out are required");
  const Configs c = resolve_configs(o);
  const fs::path out = o.out;
  echo_config(out, "cv", o, c, true, false);
  const EpochBatch data = load_stage(o.manifest, c.stage);
  cross_validate(data, c.stage, c.training, o.k, o.seed, out, thread_limit());
  report(out);
  std::cout << read_text(out / "report.txt");
}

void cmd_xeval(const Options& o) {
  if (o.manifest.empty() || o.target.empty() || o.out.empty()) {
    throw ConfigError("xeval: --manifest, --target and --out are required");
  }
  const Configs c = resolve_configs(o);
  const fs::path out = o.out;
  echo_config(out, "xeval", o, c, true, false);
  const EpochBatch source = load_stage(o.manifest, c.stage);
  const EpochBatch target = load_stage(o.target, c.stage);
  const auto cv = cross_validate(source, c.stage, c.training, o.k, o.seed, out / "source", thread_limit());
  report(out / "source");
  const auto names = stage_names();
  std::vector<metrics::TableRow> rows;
  std::vector<metrics::MetricBundle> bundles;
  ordered_json j;
  j["schema"] = "bimamba-xeval/1";
  j["folds"] = ordered_json::array();
  for (const auto& f : cv.folds) {
    const auto m = model::load_model(out / "source" / f.id / "model");
    const auto ev = training::evaluate(*m, target);
    bundles.push_back(ev.metrics);
    rows.push_back({f.id, ev.metrics});
    j["folds"].push_back({{"id", f.id},
                          {"metrics", parse_json(metrics::to_json(ev.metrics, names), "bundle")},
                          {"confusion", parse_json(metrics::to_json(ev.confusion), "confusion")}});
  }
  const auto mean = metrics::mean_bundle(bundles);
  rows.push_back({"mean", mean});
  j["mean"] = parse_json(metrics::to_json(mean, names), "bundle");
  write_text(out / "xeval.json", j.dump(2) + "\n");
  write_text(out / "xeval.txt", metrics::render_table(rows, names));
  std::cout << read_text(out / "xeval.txt");
}

void cmd_predict(const Options& o) {
  if (o.model.empty() || o.manifest.empty() || o.out.empty()) {
    throw ConfigError("predict: --model, --manifest and --out are required");
  }
  const fs::path out = o.out;
  const auto m = model::load_model(o.model);
  const auto* stage = dynamic_cast<const model::StageModel*>(m.get());
  if (!stage) throw ConfigError("predict: " + o.model + " is not a stage model");
  const EpochBatch data = load_stage(o.manifest, stage->config());
  fs::create_directories(out / "plots");
  const auto ev = training::evaluate(*m, data);
  write_predictions(out / "predictions", data, ev.predictions);
  std::vector<std::string> subjects;
  for (const auto& s : data.subjects) {
    if (std::find(subjects.begin(), subjects.end(), s) == subjects.end()) subjects.push_back(s);
  }
  for (const auto& s : subjects) {
    const auto [truth, pred] = read_predictions(out / "predictions" / (s + ".txt"));
    metrics::render_hypnogram(truth, pred, out / "plots" / s);
  }
  ordered_json j;
  j["schema"] = "bimamba-predict/1";
  j["metrics"] = parse_json(metrics::to_json(ev.metrics, stage_names()), "bundle");
  j["confusion"] = parse_json(metrics::to_json(ev.confusion), "confusion");
  write_text(out / "metrics.json", j.dump(2) + "\n");
  std::cout << metrics::render_table({{"predict", ev.metrics}}, stage_names());
}

void cmd_health(const Options& o) {
  if (o.manifest.empty() || o.out.empty()) throw ConfigError("health: --manifest and --out are required");
  const Configs c = resolve_configs(o);
  const fs::path out = o.out;
  echo_config(out, "health", o, c, false, true);
  const auto ratios = parse_ratios(o.ratios);
  auto hyp = data::load_hypnograms(data::load_manifest(o.manifest));
  if (o.balance) {
    // Subsample the larger class to the 110 : 100 healthy : unhealthy proportion.
    std::vector<Hypnogram> healthy, sick;
    for (auto& h : hyp) (*h.health == HealthLabel::Healthy ? healthy : sick).push_back(std::move(h));
    Rng rng(o.seed);
    std::shuffle(healthy.begin(), healthy.end(), rng.engine());
    std::shuffle(sick.begin(), sick.end(), rng.engine());
    const double target = 110.0 / 100.0;
    if (static_cast<double>(healthy.size()) > target * static_cast<double>(sick.size())) {
      healthy.resize(static_cast<std::size_t>(std::llround(target * static_cast<double>(sick.size()))));
    } else {
      sick.resize(static_cast<std::size_t>(std::llround(static_cast<double>(healthy.size()) / target)));
    }
    hyp.clear();
    hyp.insert(hyp.end(), healthy.begin(), healthy.end());
    hyp.insert(hyp.end(), sick.begin(), sick.end());
    std::sort(hyp.begin(), hyp.end(), [](const Hypnogram& a, const Hypnogram& b) { return a.subject < b.subject; });
  }
  health_sweep(hyp, ratios, c.health, c.training, o.seed, out);
  std::cout << read_text(out / "health_ratios.txt");
}

void cmd_report(const Options& o) {
  if (o.run_dir.empty()) throw ConfigError("report: --run is required");
  report(o.run_dir);
  std::cout << read_text(fs::path(o.run_dir) / "report.txt");
}

bool cmd_gradcheck(const Options& o) {
  bool ok = true;
  ordered_json j;
  j["schema"] = "bimamba-gradcheck/1";
  j["seed"] = o.seed;
  j["checks"] = ordered_json::array();
  for (const auto& r : run_gradcheck_suite(o.seed)) {
    ok = ok && r.passed();
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %.3e  (tol %.0e)  %s\n", r.name.c_str(), r.error, r.tolerance,
                  r.passed() ? "ok" : "FAIL");
    std::cout << buf;
    j["checks"].push_back({{"name", r.name}, {"error", r.error}, {"tolerance", r.tolerance}, {"passed", r.passed()}});
  }
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "gradcheck.json", j.dump(2) + "\n");
  }
  return ok;
}

std::string json_escape_line(const std::string& kind, const std::string& message) {
  ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  return j.dump();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Sleep staging and sleep-health classification with CNN, channel attention and bidirectional SSMs",
               "bimamba"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Seed for every stochastic step");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--config", o.config, "JSON file with model / health_model / training sections");
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--epoch-samples", o.epoch_samples, "Samples per 30 s epoch after resampling");
    sub->add_option("--n-bimamba", o.n_bimamba, "Number of BiMamba blocks");
    sub->add_flag("--no-eca", o.no_eca, "Disable channel attention");
    sub->add_option("--epochs", o.epochs, "Training epochs");
    sub->add_option("--batch-size", o.batch_size, "Mini-batch size");
    sub->add_option("--lr", o.lr, "Adam learning rate");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and manifest");
  common(synth);
  synth->add_flag("--health", o.health, "Generate labelled hypnograms instead of PSG signals");
  synth->add_option("--subjects", o.subjects, "Number of subjects (PSG)");
  synth->add_option("--epochs-per-subject", o.epochs_per_subject, "30 s epochs per subject (PSG)");
  synth->add_option("--epoch-samples", o.epoch_samples, "Samples per 30 s epoch (PSG)");
  synth->add_option("--informative", o.informative, "Channels carrying stage information; 0 = all");
  synth->add_option("--skew", o.skew, "1 = reference stage shares, 0 = uniform");
  synth->add_option("--noise", o.noise, "White-noise standard deviation");
  synth->add_option("--healthy", o.healthy, "Healthy nights (health)");
  synth->add_option("--unhealthy", o.unhealthy, "Unhealthy nights (health)");
  synth->add_flag("--balance", o.balance, "Keep the 110:100 healthy:unhealthy proportion");

  auto* train = app.add_subcommand("train", "Train one fold of the stage model");
  common(train);
  model_flags(train);
  train->add_option("--manifest", o.manifest, "Dataset manifest");
  train->add_option("--k", o.k, "Folds in the subject plan");
  train->add_option("--fold", o.fold, "Fold index to train (0-based)");

  auto* cv = app.add_subcommand("cv", "Subject-wise k-fold cross-validation");
  common(cv);
  model_flags(cv);
  cv->add_option("--manifest", o.manifest, "Dataset manifest");
  cv->add_option("--k", o.k, "Number of folds");

  auto* xeval = app.add_subcommand("xeval", "Train on one dataset, evaluate on another");
  common(xeval);
  model_flags(xeval);
  xeval->add_option("--manifest", o.manifest, "Training dataset manifest");
  xeval->add_option("--target", o.target, "Evaluation dataset manifest");
  xeval->add_option("--k", o.k, "Folds on the training dataset");

  auto* predict = app.add_subcommand("predict", "Predict hypnograms with a saved model");
  common(predict);
  predict->add_option("--model", o.model, "Checkpoint stem (without .bin/.json)");
  predict->add_option("--manifest", o.manifest, "Dataset manifest");

  auto* health = app.add_subcommand("health", "Health classification over a train-ratio sweep");
  common(health);
  model_flags(health);
  health->add_option("--manifest", o.manifest, "Manifest with hypnograms and health labels");
  health->add_option("--ratios", o.ratios, "Train ratios, e.g. 0.5,0.9 or 0.5..0.9");
  health->add_flag("--balance", o.balance, "Subsample to the 110:100 healthy:unhealthy proportion");

  auto* rep = app.add_subcommand("report", "Aggregate a cv run directory");
  rep->add_option("--run", o.run_dir, "cv output directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  common(gc);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << json_escape_line("usage", e.what()) << std::endl;
    return 2;
  }
  try {
    if (synth->parsed()) cmd_synth(o);
    if (train->parsed()) cmd_train(o);
    if (cv->parsed()) cmd_cv(o);
    if (xeval->parsed()) cmd_xeval(o);
    if (predict->parsed()) cmd_predict(o);
    if (health->parsed()) cmd_health(o);
    if (rep->parsed()) cmd_report(o);
    if (gc->parsed() && !cmd_gradcheck(o)) {
      std::cerr << json_escape_line("numeric", "gradient check above tolerance") << std::endl;
      return 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << json_escape_line("usage", e.what()) << std::endl;
    return 2;
  } catch (const Error& e) {
    std::cerr << json_escape_line(e.kind(), e.what()) << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json_escape_line("internal", e.what()) << std::endl;
    return 1;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace bimamba::cli
