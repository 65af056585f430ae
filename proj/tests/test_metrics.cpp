#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bimamba/errors.hpp"
#include "bimamba/metrics.hpp"
#include "bimamba/render.hpp"
#include "bimamba/tensor.hpp"

using namespace bimamba;
using namespace bimamba::metrics;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Compares against tests/golden/<name>; BIMAMBA_UPDATE_GOLDEN=1 rewrites it.
void expect_golden(const std::string& name, const std::string& actual) {
  const std::filesystem::path path = std::filesystem::path(BIMAMBA_GOLDEN_DIR) / name;
  if (std::getenv("BIMAMBA_UPDATE_GOLDEN")) {
    std::ofstream(path, std::ios::binary) << actual;
    return;
  }
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  EXPECT_EQ(actual, read_file(path));
}

struct NaiveMetrics {
  double accuracy, kappa, macro_f1;
  std::vector<double> f1;
};

// Straight from label pairs, without a confusion matrix.
NaiveMetrics naive(const std::vector<int>& t, const std::vector<int>& p, int k) {
  NaiveMetrics m{};
  const double n = static_cast<double>(t.size());
  double agree = 0;
  for (std::size_t i = 0; i < t.size(); ++i) agree += t[i] == p[i];
  m.accuracy = agree / n;
  double pe = 0;
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0, nt = 0, np = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
      nt += t[i] == c;
      np += p[i] == c;
    }
    pe += (nt / n) * (np / n);
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1.push_back(prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  m.kappa = (m.accuracy - pe) / (1 - pe);
  double s = 0;
  for (double f : m.f1) s += f;
  m.macro_f1 = s / k;
  return m;
}

ConfusionMatrix from_rows(std::vector<std::vector<std::uint64_t>> rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) cm.at(i, j) = rows[i][j];
  return cm;
}

double mann_whitney_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    pos += y[i] == 1;
    neg += y[i] == 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] == 1 && y[j] == 0) wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / (pos * neg);
}

Hypnogram hyp(const std::string& chars) {
  std::vector<StageLabel> s;
  for (char c : chars) s.push_back(*stage_from_char(c));
  return Hypnogram::from_stages(s);
}

}  // namespace

TEST(Confusion, DiagonalWhenEqual) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 4, 2};
  const auto cm = confusion(y, y, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (i != j) EXPECT_EQ(cm.at(i, j), 0u);
  EXPECT_EQ(cm.at(4, 4), 2u);
  EXPECT_EQ(cm.total(), 7u);
}

TEST(Confusion, SingleOffDiagonalPair) {
  const std::vector<int> t = {1}, p = {3};
  const auto cm = confusion(t, p, 5);
  EXPECT_EQ(cm.at(1, 3), 1u);
  EXPECT_EQ(cm.total(), 1u);
}

TEST(Confusion, MatchesLoopOn10kPairs) {
  Rng rng(1);
  std::vector<int> t(10000), p(10000);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<int>(rng.index(5));
    p[i] = rng.uniform() < 0.6 ? t[i] : static_cast<int>(rng.index(5));
  }
  const auto cm = confusion(t, p, 5);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      std::uint64_t n = 0;
      for (std::size_t i = 0; i < t.size(); ++i) n += t[i] == a && p[i] == b;
      EXPECT_EQ(cm.at(a, b), n);
    }
  const auto m = bundle(cm);
  const auto o = naive(t, p, 5);
  EXPECT_EQ(m.accuracy, o.accuracy);
  EXPECT_NEAR(m.kappa, o.kappa, 1e-15);
  EXPECT_NEAR(m.macro_f1, o.macro_f1, 1e-15);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(m.f1[c], o.f1[c], 1e-15);
}

TEST(Confusion, Errors) {
  const std::vector<int> t = {0, 5}, p = {0, 1};
  try {
    confusion(t, p, 5);
    FAIL();
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
  const std::vector<int> shorter = {0};
  EXPECT_THROW(confusion(t, shorter, 5), DimensionError);
}

TEST(Bundle, HandComputedTwoByTwo) {
  const auto m = bundle(from_rows({{45, 5}, {10, 40}}));
  EXPECT_NEAR(m.accuracy, 0.85, 1e-15);
  EXPECT_NEAR(m.p_o, 0.85, 1e-15);
  EXPECT_NEAR(m.p_e, 0.5, 1e-15);  // (50*55 + 50*45) / 100^2
  EXPECT_NEAR(m.kappa, 0.70, 1e-15);
  EXPECT_NEAR(m.precision[0], 45.0 / 55.0, 1e-15);
  EXPECT_NEAR(m.recall[1], 40.0 / 50.0, 1e-15);
}

TEST(Bundle, HarmonicMean) {
  EXPECT_NEAR(f1_score(0.8, 0.5), 0.6154, 5e-5);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Bundle, PerfectPredictions) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 0, 2};
  const auto m = bundle(confusion(y, y, 5));
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.kappa, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  for (double v : m.precision) EXPECT_EQ(v, 1.0);
}

TEST(Bundle, ZeroDenominatorsAreFlagged) {
  const std::vector<int> t = {0, 0, 1, 1}, p = {0, 0, 0, 0};
  const auto m = bundle(confusion(t, p, 3));
  EXPECT_EQ(m.f1[1], 0.0);
  EXPECT_TRUE(m.undefined[1]);  // never predicted
  EXPECT_TRUE(m.undefined[2]);  // no support
  EXPECT_FALSE(m.undefined[0]);
  for (double v : m.f1) EXPECT_FALSE(std::isnan(v));
  EXPECT_THROW(bundle(ConfusionMatrix(3)), DomainError);
}

TEST(Bundle, PropertiesOnRandomLabels) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(60);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.index(5));
      p[i] = static_cast<int>(rng.index(5));
    }
    const auto m = bundle(confusion(t, p, 5));
    EXPECT_GE(m.accuracy, 0.0);
    EXPECT_LE(m.accuracy, 1.0);
    EXPECT_GE(m.kappa, -1.0);
    EXPECT_LE(m.kappa, 1.0);
    for (double f : m.f1) EXPECT_TRUE(f >= 0.0 && f <= 1.0);

    // Relabel classes with a random permutation on both sides.
    std::vector<int> perm = {0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<int> tp(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
      tp[i] = perm[t[i]];
      pp[i] = perm[p[i]];
    }
    const auto mp = bundle(confusion(tp, pp, 5));
    EXPECT_NEAR(mp.accuracy, m.accuracy, 1e-15);
    EXPECT_NEAR(mp.macro_f1, m.macro_f1, 1e-12);
    EXPECT_NEAR(mp.kappa, m.kappa, 1e-12);

    // With at least two true classes present, a constant predictor never
    // beats chance and self-agreement is perfect.
    if (std::count(t.begin(), t.end(), t[0]) != static_cast<long>(n)) {
      const std::vector<int> constant(n, static_cast<int>(rng.index(5)));
      EXPECT_LE(bundle(confusion(t, constant, 5)).kappa, 1e-12);
      const auto self = bundle(confusion(t, t, 5));
      EXPECT_EQ(self.accuracy, 1.0);
      EXPECT_NEAR(self.kappa, 1.0, 1e-15);
    }
  }
}

TEST(Bundle, MeanOfTwo) {
  auto a = bundle(from_rows({{8, 2}, {0, 0}}));
  auto b = bundle(from_rows({{9, 1}, {0, 0}}));
  EXPECT_NEAR(mean_bundle({a, b}).accuracy, 0.85, 1e-15);
  EXPECT_THROW(mean_bundle({}), DomainError);
}

TEST(Roc, PerfectSeparation) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  const auto r = roc_auc(s, y);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_EQ(r.points.front().fpr, 0.0);
  EXPECT_EQ(r.points.front().tpr, 0.0);
  EXPECT_EQ(r.points.back().fpr, 1.0);
  EXPECT_EQ(r.points.back().tpr, 1.0);
}

TEST(Roc, AllTiedIsHalf) {
  const std::vector<double> s(7, 0.3);
  const std::vector<int> y = {0, 1, 1, 0, 1, 0, 0};
  EXPECT_DOUBLE_EQ(roc_auc(s, y).auc, 0.5);
}

TEST(Roc, SixPointHandRanked) {
  // Positives 0.35, 0.8, 0.4 against negatives 0.1, 0.4, 0.7:
  // wins 1 + 3 + 1.5 (one tie) out of 9 pairs.
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8, 0.4, 0.7};
  const std::vector<int> y = {0, 0, 1, 1, 1, 0};
  EXPECT_NEAR(roc_auc(s, y).auc, 5.5 / 9.0, 1e-15);
  EXPECT_NEAR(mann_whitney_auc(s, y), 5.5 / 9.0, 1e-15);
}

TEST(Roc, MatchesMannWhitneyAndMonotoneInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(80);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.index(2));
      s[i] = std::round(rng.normal(y[i] * 0.7) * 4) / 4;  // coarse grid gives ties
    }
    y[0] = 0;
    y[1] = 1;
    const double auc = roc_auc(s, y).auc;
    EXPECT_NEAR(auc, mann_whitney_auc(s, y), 1e-12);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7.0;
    EXPECT_NEAR(roc_auc(t, y).auc, auc, 1e-12);
  }
}

TEST(Roc, Errors) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<int> one = {1, 1};
  EXPECT_THROW(roc_auc(s, one), DomainError);
  const std::vector<int> bad = {0, 2};
  EXPECT_THROW(roc_auc(s, bad), IndexError);
}

TEST(Render, IdenticalTracksHaveNoTint) {
  const auto h = hyp("WW1223332RRW");
  const auto plot = render_hypnogram(h, h);
  EXPECT_EQ(plot.disagreements, 0u);
  EXPECT_EQ(plot.tinted_spans, 0u);
  EXPECT_EQ(plot.svg.find("class=\"mismatch\""), std::string::npos);
}

TEST(Render, OneDifferingEpochOneSpan) {
  const auto plot = render_hypnogram(hyp("WW12233"), hyp("WW13233"));
  EXPECT_EQ(plot.disagreements, 1u);
  EXPECT_EQ(plot.tinted_spans, 1u);
  const auto two = render_hypnogram(hyp("WW12233"), hyp("1W13333"));
  EXPECT_EQ(two.disagreements, 3u);
  EXPECT_EQ(two.tinted_spans, 2u);
}

TEST(Render, LengthMismatch) { EXPECT_THROW(render_hypnogram(hyp("W1"), hyp("W")), DimensionError); }

TEST(Render, GoldenTwentyEpochs) {
  const auto plot = render_hypnogram(hyp("WWW1122223332RRR22WW"), hyp("WW11122223322RRR2RWW"));
  EXPECT_EQ(plot.disagreements, 3u);
  expect_golden("hypnogram20.svg", plot.svg);
  expect_golden("hypnogram20.txt", plot.text);
}

TEST(Render, WritesFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "bimamba_test_render";
  std::filesystem::create_directories(dir);
  render_hypnogram(hyp("W12"), hyp("W13"), dir / "p");
  EXPECT_TRUE(std::filesystem::exists(dir / "p.svg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "p.txt"));
}

TEST(Table, GoldenLayout) {
  std::vector<TableRow> rows = {{"fold_01", bundle(from_rows({{5, 0, 0, 0, 0},
                                                               {1, 3, 1, 0, 0},
                                                               {0, 1, 8, 1, 0},
                                                               {0, 0, 1, 6, 0},
                                                               {0, 1, 0, 0, 4}}))}};
  rows.push_back({"mean", rows[0].metrics});
  const auto text = render_table(rows, {"W", "N1", "N2", "N3", "REM"});
  EXPECT_NE(text.find("ACC"), std::string::npos);
  expect_golden("table.txt", text);
}

TEST(Json, BundleHasClassNames) {
  const auto m = bundle(from_rows({{45, 5}, {10, 40}}));
  const auto j = to_json(m, {"healthy", "unhealthy"});
  EXPECT_NE(j.find("\"healthy\""), std::string::npos);
  EXPECT_NE(j.find("\"kappa\""), std::string::npos);
}
