#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "bimamba/types.hpp"

namespace bimamba::metrics {

struct HypnogramPlot {
  std::string svg;
  std::string text;
  std::size_t disagreements = 0;  // epochs where the tracks differ
  std::size_t tinted_spans = 0;   // maximal runs of disagreeing epochs
};

// Two stacked step plots (expert on top, prediction below) with the y axis
// ordered W, REM, N1, N2, N3 from top to bottom and disagreeing epochs tinted.
// `text` is a terminal rendering of the same tracks.
HypnogramPlot render_hypnogram(const Hypnogram& truth, const Hypnogram& pred);

// Writes `<out>.svg` and `<out>.txt`.
HypnogramPlot render_hypnogram(const Hypnogram& truth, const Hypnogram& pred, const std::filesystem::path& out);

}  // namespace bimamba::metrics
