// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bimamba/cli.hpp"
#include "bimamba/eca.hpp"
#include "bimamba/edf.hpp"
#include "bimamba/epochs.hpp"
#include "bimamba/errors.hpp"
#include "bimamba/gradcheck.hpp"
#include "bimamba/metrics.hpp"
#include "bimamba/model.hpp"
#include "bimamba/ssm.hpp"
#include "bimamba/synth.hpp"
#include "bimamba/training.hpp"

using namespace bimamba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double phi_series(double z) {
  double sum = 0.0, term = 1.0;
  for (int m = 0; m < 50; ++m) {
    sum += term;
    term *= z / static_cast<double>(m + 2);
  }
  return sum;
}

// Stage model used by the learnability runs.
model::StageModelConfig stage_config(bool eca) {
  model::StageModelConfig c;
  c.epoch_samples = 500;
  c.state_dim = 8;
  c.n_bimamba = 1;
  c.use_eca = eca;
  c.cnn = {{16, 7, 2, 1}, {32, 5, 2, 1}, {32, 3, 2, 1}};
  return c;
}

EpochBatch synth_epochs(std::uint64_t seed, std::size_t informative) {
  data::SynthStageSpec spec;
  spec.seed = seed;
  spec.informative_channels = informative;
  const auto subjects = data::synth_stage(spec);
  std::vector<EpochBatch> parts;
  const double fs = static_cast<double>(spec.epoch_samples) / 30.0;
  for (const auto& s : subjects) {
    std::vector<data::ChannelSeries> channels;
    const std::size_t T = s.signals.dim(1);
    for (std::size_t c = 0; c < spec.channels; ++c) {
      const auto row = s.signals.data().subspan(c * T, T);
      channels.push_back({{row.begin(), row.end()}, fs});
    }
    data::SliceOptions o;
    o.epoch_samples = spec.epoch_samples;
    parts.push_back(data::slice_epochs(channels, s.labels, s.id, o).batch);
  }
  return EpochBatch::concat(parts);
}

Outcome c1_scan_conv() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int draw = 0; draw < 200; ++draw) {
    const std::size_t n = 1 + rng.index(8), L = 1 + rng.index(128);
    ssm::SsmParams p;
    for (std::size_t i = 0; i < n; ++i) {
      p.A.push_back(-rng.uniform(1e-3, 5.0));
      p.B.push_back(rng.normal());
      p.C.push_back(rng.normal());
    }
    p.D = rng.normal();
    p.delta = rng.uniform(1e-3, 1.0);
    const auto d = ssm::zoh_discretize(p);
    const Tensor x = Tensor::randn({L}, rng);
    const Tensor ya = ssm::ssm_scan(d, x);
    const Tensor yb = ssm::ssm_conv_apply(ssm::ssm_conv_kernel(d, L), d, x);
    const auto a = ya.data(), b = yb.data();
    for (std::size_t t = 0; t < L; ++t) worst = std::max(worst, std::abs(a[t] - b[t]));
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-10 && dt < 10.0, fmt("200 draws, max |scan - conv| = %.2e, %.2f s", worst, dt)};
}

Outcome c2_zoh() {
  double worst = 0.0;
  for (int i = 0; i <= 60; ++i) {
    const double A = -std::pow(10.0, -12.0 + 13.0 * i / 60.0);  // -1e-12 .. -10
    for (int j = 0; j <= 20; ++j) {
      const double delta = std::pow(10.0, -4.0 + 4.0 * j / 20.0);
      const double B = 1.3;
      const auto d = ssm::zoh_discretize({{A}, {B}, {1.0}, 0.0, delta, false});
      worst = std::max(worst, std::abs(d.B_bar[0] - delta * B * phi_series(delta * A)));
      worst = std::max(worst, std::abs(d.A_bar[0] - std::exp(delta * A)));
    }
  }
  double limit = 0.0;
  for (double A : {-1e-13, -1e-15, 0.0}) {
    for (double delta : {1e-4, 0.01, 0.5, 1.0}) {
      const auto d = ssm::zoh_discretize({{A}, {-2.5}, {1.0}, 0.0, delta, false});
      limit = std::max(limit, std::abs(d.B_bar[0] - delta * -2.5));
    }
  }
  return {worst <= 1e-12 && limit <= 1e-12,
          fmt("max series error %.2e, A->0 limit error %.2e", worst, limit)};
}

Outcome c3_gradients(std::vector<GradCheckResult>& results) {
  const auto t0 = std::chrono::steady_clock::now();
  results = run_gradcheck_suite(7);
  const double dt = seconds_since(t0);
  double prim = 0.0, model = 0.0;
  bool ok = true;
  std::string failed;
  for (const auto& r : results) {
    const bool is_model = r.name.find("model") != std::string::npos;
    (is_model ? model : prim) = std::max(is_model ? model : prim, r.error);
    const double bound = is_model ? 1e-4 : 1e-5;
    if (!(r.error < bound)) {
      ok = false;
      failed += " " + r.name;
    }
  }
  return {ok && dt < 60.0, fmt("%zu checks, max primitive %.2e, max model %.2e, %.2f s%s", results.size(), prim,
                               model, dt, failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome c4_eca(const std::vector<GradCheckResult>& results) {
  bool ok = true;
  // Mean oracle.
  Rng rng(4);
  const Tensor x = Tensor::randn({3, 4, 9}, rng);
  const auto s = eca::channel_descriptor(x);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < 9; ++t) acc += x.at({b, c, t});
      ok &= std::abs(s.s.at({b, c}) - acc / 9.0) < 1e-14;
    }
  // Zero kernel gives sigma(0) = 0.5.
  const auto w0 = eca::channel_weights(s, Tensor::zeros({3}));
  for (double v : w0.w.data()) ok &= v == 0.5;
  // Per-channel scaling.
  const Tensor ones = Tensor::ones({3, 5});
  const auto y = eca::apply_attention(ones, {Tensor({3}, {0.2, 0.5, 0.7})});
  for (std::size_t t = 0; t < 5; ++t) {
    ok &= y.at({0, t}) == 0.2 && y.at({1, t}) == 0.5 && y.at({2, t}) == 0.7;
  }
  double composite = 1.0;
  for (const auto& r : results) {
    if (r.name == "eca") composite = r.error;
  }
  ok &= composite < 1e-5;
  return {ok, fmt("mean, sigmoid(0) and scaling oracles %s, composite grad error %.2e", ok ? "hold" : "differ",
                  composite)};
}

Outcome c5_metrics() {
  metrics::ConfusionMatrix cm(2);
  cm.at(0, 0) = 45;
  cm.at(0, 1) = 5;
  cm.at(1, 0) = 10;
  cm.at(1, 1) = 40;
  const auto b = metrics::bundle(cm);
  bool ok = std::abs(b.accuracy - 0.85) < 1e-15 && std::abs(b.p_e - 0.5) < 1e-15 && std::abs(b.kappa - 0.70) < 1e-15;

  Rng rng(5);
  const std::size_t n = 10000, K = 5;
  std::vector<int> t(n), p(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(rng.index(K));
    p[i] = rng.uniform() < 0.5 ? t[i] : static_cast<int>(rng.index(K));
  }
  const auto m = metrics::bundle(metrics::confusion(t, p, K));
  // Naive loop oracle over the label pairs.
  double agree = 0.0, chance = 0.0;
  std::vector<double> f1(K);
  for (std::size_t i = 0; i < n; ++i) agree += t[i] == p[i] ? 1.0 : 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    double tp = 0, nt = 0, np = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool ti = t[i] == static_cast<int>(c), pi = p[i] == static_cast<int>(c);
      tp += ti && pi ? 1.0 : 0.0;
      nt += ti ? 1.0 : 0.0;
      np += pi ? 1.0 : 0.0;
    }
    chance += nt * np;
    const double prec = np > 0 ? tp / np : 0.0, rec = nt > 0 ? tp / nt : 0.0;
    f1[c] = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  const double acc = agree / static_cast<double>(n);
  const double pe = chance / (static_cast<double>(n) * static_cast<double>(n));
  const double kappa = (acc - pe) / (1.0 - pe);
  bool exact = m.accuracy == acc && m.kappa == kappa;
  for (std::size_t c = 0; c < K; ++c) exact &= m.f1[c] == f1[c];
  ok &= exact;
  return {ok, fmt("2x2 case acc %.4f p_e %.4f kappa %.4f; 1e4 pairs %s naive loop", b.accuracy, b.p_e, b.kappa,
                  exact ? "match" : "differ from")};
}

training::TrainingConfig stage_training(std::size_t epochs) {
  training::TrainingConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 32;
  tc.lr = 1e-3;
  return tc;
}

Outcome c6_learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  const EpochBatch data = synth_epochs(1, 0);
  const auto cv = cli::cross_validate(data, stage_config(true), stage_training(15), 4, 1, {}, cli::thread_limit());
  const double dt = seconds_since(t0);
  double kappa = 0.0;
  for (const auto& f : cv.folds) kappa += f.report.best.metrics.kappa;
  kappa /= static_cast<double>(cv.folds.size());
  const double acc = cv.mean.accuracy;
  return {acc >= 0.90 && kappa >= 0.85 && dt < 900.0,
          fmt("4-fold mean accuracy %.3f, kappa %.3f, %.0f s", acc, kappa, dt)};
}

Outcome c7_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  double with = 0.0, without = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const EpochBatch data = synth_epochs(100 + seed, 2);
    const auto a = cli::cross_validate(data, stage_config(true), stage_training(15), 4, seed, {}, cli::thread_limit());
    const auto b = cli::cross_validate(data, stage_config(false), stage_training(15), 4, seed, {}, cli::thread_limit());
    with += a.mean.accuracy / 3.0;
    without += b.mean.accuracy / 3.0;
    per_seed += fmt(" %.3f/%.3f", a.mean.accuracy, b.mean.accuracy);
  }
  const double dt = seconds_since(t0);
  return {with - without >= 0.0,
          fmt("mean accuracy ECA %.3f vs no-ECA %.3f (per seed%s), %.0f s", with, without, per_seed.c_str(), dt)};
}

Outcome c8_health() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> ratios = {0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> acc(ratios.size(), 0.0), auc(ratios.size(), 0.0);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    data::SynthHealthSpec spec;
    spec.seed = seed;
    const auto nights = data::synth_health(spec);
    model::HealthModelConfig hc;
    training::TrainingConfig tc;
    tc.epochs = 12;
    tc.batch_size = 16;
    tc.lr = 0.01;
    const auto res = cli::health_sweep(nights, ratios, hc, tc, seed);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      acc[i] += res[i].accuracy / 3.0;
      auc[i] += res[i].auc / 3.0;
    }
  }
  bool monotone = true;
  std::string curve;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    curve += fmt(" %.3f", acc[i]);
    if (i > 0 && acc[i] < acc[i - 1]) monotone = false;
  }
  const double dt = seconds_since(t0);
  return {acc.back() >= 0.90 && auc.back() >= 0.95 && monotone,
          fmt("at 9:1 mean accuracy %.3f, AUC %.3f; mean accuracy by ratio%s (%s), %.0f s", acc.back(), auc.back(),
              curve.c_str(), monotone ? "non-decreasing" : "not monotone", dt)};
}

data::EdfRecording random_recording(Rng& rng) {
  data::EdfRecording r;
  r.patient = "P" + std::to_string(rng.index(100000));
  r.recording = "Startdate 02-MAR-2001 R" + std::to_string(rng.index(1000));
  r.start_time = "2" + std::to_string(rng.index(4)) + ".15.00";
  r.n_records = static_cast<std::int64_t>(1 + rng.index(6));
  r.record_duration_s = std::vector<double>{1.0, 0.25, 10.0, 30.0}[rng.index(4)];
  const std::size_t ns = 1 + rng.index(5);
  for (std::size_t i = 0; i < ns; ++i) {
    data::EdfSignal s;
    s.label = "S" + std::to_string(i);
    s.transducer = "electrode";
    s.physical_dimension = rng.index(2) ? "uV" : "mV";
    s.physical_min = -static_cast<double>(1 + rng.index(5000)) / 4.0;
    s.physical_max = static_cast<double>(1 + rng.index(5000)) / 8.0;
    s.digital_min = -32768 + static_cast<int>(rng.index(30000));
    s.digital_max = s.digital_min + 1 + static_cast<int>(rng.index(static_cast<std::size_t>(32767 - s.digital_min)));
    s.samples_per_record = 1 + rng.index(64);
    const std::size_t span = static_cast<std::size_t>(s.digital_max - s.digital_min + 1);
    for (std::size_t k = 0; k < s.samples_per_record * static_cast<std::size_t>(r.n_records); ++k) {
      s.digital.push_back(static_cast<std::int16_t>(s.digital_min + static_cast<int>(rng.index(span))));
    }
    r.signals.push_back(std::move(s));
  }
  return r;
}

Outcome c9_edf() {
  Rng rng(9);
  std::size_t identical = 0;
  for (int i = 0; i < 50; ++i) {
    const auto bytes = data::write_edf(random_recording(rng));
    if (data::write_edf(data::parse_edf(bytes)) == bytes) ++identical;
  }
  // Corrupt-header corpus: each case names the byte offset the parser must report.
  Rng one(1);
  const auto good = data::write_edf(random_recording(one));
  const std::size_t ns = data::parse_edf(good).signals.size();
  auto put = [](std::vector<std::uint8_t> b, std::size_t off, std::size_t width, const std::string& text) {
    std::string f = text;
    f.resize(width, ' ');
    std::memcpy(b.data() + off, f.data(), width);
    return b;
  };
  const std::size_t dmin_off = 256 + ns * (16 + 80 + 8 + 8 + 8);
  struct Case {
    std::vector<std::uint8_t> bytes;
    std::size_t offset;
  };
  std::vector<Case> cases;
  {
    auto b = good;
    b[3] = 0xFF;
    cases.push_back({b, 3});
  }
  cases.push_back({put(good, 236, 8, "x1"), 236});
  cases.push_back({put(good, 244, 8, "0"), 244});
  cases.push_back({put(good, 252, 4, "0"), 252});
  cases.push_back({put(good, 184, 8, "1"), 184});
  cases.push_back({put(good, dmin_off, 8, "32767"), dmin_off});
  cases.push_back({std::vector<std::uint8_t>(good.begin(), good.begin() + 200), 200});
  cases.push_back({std::vector<std::uint8_t>(good.begin(), good.begin() + 300), 300});
  std::size_t precise = 0;
  for (const auto& c : cases) {
    try {
      data::parse_edf(c.bytes);
    } catch (const ParseError& e) {
      if (e.offset() == c.offset) ++precise;
    }
  }
  // Random corruption must end in a value or a ParseError, nothing else.
  std::size_t clean = 0;
  const std::size_t fuzz = 500;
  for (std::size_t i = 0; i < fuzz; ++i) {
    auto b = good;
    for (std::size_t f = 0, n = 1 + rng.index(6); f < n; ++f) b[rng.index(b.size())] = static_cast<std::uint8_t>(rng.index(256));
    if (rng.index(4) == 0) b.resize(rng.index(b.size() + 1));
    try {
      data::parse_edf(b);
      ++clean;
    } catch (const ParseError&) {
      ++clean;
    } catch (...) {
    }
  }
  return {identical == 50 && precise == cases.size() && clean == fuzz,
          fmt("%zu/50 byte-identical round trips, %zu/%zu corrupt headers at the exact offset, %zu/%zu fuzzed files "
              "handled",
              identical, precise, cases.size(), clean, fuzz)};
}

Outcome c10_folds() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t plans = 0, bad = 0;
  std::vector<std::string> all;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < 200; ++i) {
    all.push_back("subject" + std::to_string(i + 1));
    index[all.back()] = i;
  }
  for (std::size_t n = 2; n <= 200; ++n) {
    const std::vector<std::string> ids(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    for (std::size_t k = 2; k <= n; ++k) {
      const auto plan = training::subject_kfold(ids, k, n * 1000 + k);
      ++plans;
      std::vector<std::size_t> seen(n, 0);
      std::size_t lo = n, hi = 0;
      bool ok = plan.size() == k;
      for (const auto& f : plan) {
        lo = std::min(lo, f.validation.size());
        hi = std::max(hi, f.validation.size());
        ok &= f.train.size() + f.validation.size() == n;
        std::set<std::string> tr(f.train.begin(), f.train.end());
        for (const auto& v : f.validation) {
          ok &= tr.count(v) == 0;
          ++seen[index.at(v)];
        }
      }
      ok &= hi - lo <= 1;
      for (auto s : seen) ok &= s == 1;
      if (!ok) ++bad;
    }
  }
  const auto a = training::subject_kfold(std::vector<std::string>(all.begin(), all.begin() + 10), 10, 1);
  const auto b = training::subject_kfold(std::vector<std::string>(all.begin(), all.begin() + 50), 25, 1);
  bool paper = a.size() == 10 && b.size() == 25;
  for (const auto& f : a) paper &= f.validation.size() == 1;
  for (const auto& f : b) paper &= f.validation.size() == 2;
  return {bad == 0 && paper, fmt("%zu plans checked, %zu violations; (10,10) and (50,25) %s, %.1f s", plans, bad,
                                 paper ? "as expected" : "wrong", seconds_since(t0))};
}

std::map<std::string, std::string> metric_jsons(const fs::path& run) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    const auto name = e.path().filename().string();
    if (name != "metrics.json" && name != "report.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), run).generic_string()] = ss.str();
  }
  return out;
}

Outcome c11_determinism() {
  const fs::path dir = fs::temp_directory_path() / "bimamba_acceptance_c11";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"model": {"state_dim": 8, "cnn": [
      {"out_channels": 16, "kernel": 7, "stride": 2, "pool": 1},
      {"out_channels": 32, "kernel": 5, "stride": 2, "pool": 1},
      {"out_channels": 32, "kernel": 3, "stride": 2, "pool": 1}]},
    "training": {"epochs": 2, "batch_size": 32}})";
  int rc = cli::run({"synth", "--subjects", "4", "--epochs-per-subject", "40", "--epoch-samples", "500", "--seed",
                     "11", "--out", (dir / "data").string()});
  for (const char* run : {"a", "b"}) {
    rc |= cli::run({"cv", "--manifest", (dir / "data" / "manifest.json").string(), "--k", "4", "--epoch-samples",
                    "500", "--config", (dir / "config.json").string(), "--seed", "11", "--out",
                    (dir / run).string()});
  }
  const auto a = metric_jsons(dir / "a"), b = metric_jsons(dir / "b");
  const bool same = !a.empty() && a == b;
  return {rc == 0 && same && a.size() == 5,
          fmt("exit code %d, %zu metric JSONs, %s", rc, a.size(), same ? "byte-identical" : "different")};
}

}  // namespace

// Optional arguments pick criteria by number; no arguments runs all of them.
int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::vector<GradCheckResult> grads;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 scan/convolution equivalence", c1_scan_conv},
      {"2 ZOH discretization", c2_zoh},
      {"3 gradient fidelity", [&] { return c3_gradients(grads); }},
      {"4 ECA contracts", [&] {
         if (grads.empty()) grads = run_gradcheck_suite(7);
         return c4_eca(grads);
       }},
      {"5 metric oracles", c5_metrics},
      {"6 stage learnability", c6_learnability},
      {"7 ECA ablation direction", c7_ablation},
      {"8 health task", c8_health},
      {"9 EDF round trip", c9_edf},
      {"10 fold-plan invariants", c10_folds},
      {"11 determinism", c11_determinism},
  };
  int failures = 0;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    if (!only.empty() && !only.count(static_cast<int>(i) + 1)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
