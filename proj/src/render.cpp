#include "bimamba/render.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bimamba/errors.hpp"

namespace bimamba::metrics {

namespace {

// Display row of each stage, top to bottom: W, REM, N1, N2, N3.
int display_row(StageLabel s) {
  switch (s) {
    case StageLabel::W: return 0;
    case StageLabel::REM: return 1;
    case StageLabel::N1: return 2;
    case StageLabel::N2: return 3;
    case StageLabel::N3: return 4;
  }
  return 0;
}

constexpr std::array<const char*, 5> kRowNames = {"W", "REM", "N1", "N2", "N3"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

struct Layout {
  double left = 50.0;
  double step = 8.0;
  double row_h = 14.0;
  double track_gap = 30.0;
  double top = 24.0;
  double track_h() const { return row_h * 5.0; }
};

void track(std::ostringstream& svg, const Hypnogram& h, const Layout& l, double y0, const char* title,
           const char* color) {
  svg << "  <text x=\"4\" y=\"" << fmt(y0 - 6.0) << "\" font-size=\"11\">" << title << "</text>\n";
  for (std::size_t r = 0; r < kRowNames.size(); ++r) {
    svg << "  <text x=\"" << fmt(l.left - 6.0) << "\" y=\"" << fmt(y0 + (static_cast<double>(r) + 0.5) * l.row_h + 4.0)
        << "\" font-size=\"10\" text-anchor=\"end\">" << kRowNames[r] << "</text>\n";
  }
  svg << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double y = y0 + (display_row(h.stages[i]) + 0.5) * l.row_h;
    const double x0 = l.left + static_cast<double>(i) * l.step;
    if (i) svg << ' ';
    svg << fmt(x0) << ',' << fmt(y) << ' ' << fmt(x0 + l.step) << ',' << fmt(y);
  }
  svg << "\"/>\n";
}

}  // namespace

HypnogramPlot render_hypnogram(const Hypnogram& truth, const Hypnogram& pred) {
  if (truth.size() != pred.size()) {
    throw DimensionError("render_hypnogram: expert track has " + std::to_string(truth.size()) +
                         " epochs, prediction has " + std::to_string(pred.size()));
  }
  const std::size_t n = truth.size();
  Layout l;
  const double width = l.left + static_cast<double>(n) * l.step + 10.0;
  const double height = l.top + 2.0 * l.track_h() + l.track_gap + 10.0;
  const double y_truth = l.top;
  const double y_pred = l.top + l.track_h() + l.track_gap;

  HypnogramPlot plot;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height) << "\">\n";
  svg << "  <rect x=\"0\" y=\"0\" width=\"" << fmt(width) << "\" height=\"" << fmt(height) << "\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n;) {
    if (truth.stages[i] == pred.stages[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && truth.stages[j] != pred.stages[j]) ++j;
    plot.disagreements += j - i;
    ++plot.tinted_spans;
    svg << "  <rect class=\"mismatch\" x=\"" << fmt(l.left + static_cast<double>(i) * l.step) << "\" y=\""
        << fmt(y_truth) << "\" width=\"" << fmt(static_cast<double>(j - i) * l.step) << "\" height=\""
        << fmt(y_pred + l.track_h() - y_truth) << "\" fill=\"#f4a6a6\" fill-opacity=\"0.5\"/>\n";
    i = j;
  }
  track(svg, truth, l, y_truth, "Expert", "#1f3b73");
  track(svg, pred, l, y_pred, "Predicted", "#b04a1a");
  svg << "</svg>\n";
  plot.svg = svg.str();

  std::ostringstream txt;
  auto text_track = [&](const Hypnogram& h, const char* title) {
    txt << title << '\n';
    for (std::size_t r = 0; r < kRowNames.size(); ++r) {
      char label[8];
      std::snprintf(label, sizeof label, "%4s |", kRowNames[r]);
      txt << label;
      for (std::size_t i = 0; i < n; ++i) txt << (display_row(h.stages[i]) == static_cast<int>(r) ? '#' : ' ');
      txt << '\n';
    }
  };
  text_track(truth, "Expert");
  text_track(pred, "Predicted");
  txt << "diff |";
  for (std::size_t i = 0; i < n; ++i) txt << (truth.stages[i] != pred.stages[i] ? '^' : ' ');
  txt << '\n';
  plot.text = txt.str();
  return plot;
}

HypnogramPlot render_hypnogram(const Hypnogram& truth, const Hypnogram& pred, const std::filesystem::path& out) {
  HypnogramPlot plot = render_hypnogram(truth, pred);
  auto svg_path = out;
  svg_path += ".svg";
  auto txt_path = out;
  txt_path += ".txt";
  std::ofstream svg(svg_path);
  std::ofstream txt(txt_path);
  if (!svg || !txt) throw IoError("cannot write hypnogram plot to " + out.string());
  svg << plot.svg;
  txt << plot.text;
  return plot;
}

}  // namespace bimamba::metrics
