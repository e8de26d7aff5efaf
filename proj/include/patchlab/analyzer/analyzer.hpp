#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchlab/patcher/patcher.hpp"
#include "patchlab/trainer/trainer.hpp"

namespace plab {

using HeadRef = std::pair<std::size_t, std::size_t>;  // (layer, head)

struct HeadSet {
  std::string label;
  std::size_t k = 0;
  std::vector<HeadRef> heads;  // ranked, best first
  std::string grid_hash;
};

/// SHA-256 of the grid's CSV text.
std::string grid_hash(const PatchGrid& grid);

/// The k cells with the largest mean Delta; ties go to the lower
/// (layer, head). Throws KExceedsGridSize when k exceeds the cell count.
HeadSet top_k_heads(const PatchGrid& grid, std::size_t k = 10, std::string label = {});

/// |a & b| / |a | b|; throws BothEmpty when both sets are empty.
double jaccard(const HeadSet& a, const HeadSet& b);

struct BaselineStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across trials
  std::size_t trials = 0;
};

/// Monte-Carlo Jaccard between two independent uniform k-subsets of the
/// n_layers x n_heads cells. Throws InvalidConfig for trials < 1000.
BaselineStats shuffled_baseline(std::size_t n_layers, std::size_t n_heads, std::size_t k,
                                std::size_t trials, std::uint64_t seed);

struct JaccardMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> values;  // row-major
  double baseline_mean = 0.0;
  double baseline_std = 0.0;

  std::size_t rows() const { return row_labels.size(); }
  std::size_t cols() const { return col_labels.size(); }
  double at(std::size_t r, std::size_t c) const { return values.at(r * cols() + c); }
};

/// All pairwise Jaccard values of `sets` against themselves.
JaccardMatrix overlap_matrix(const std::vector<HeadSet>& sets, const BaselineStats& baseline);
/// Rows against columns (e.g. trigger sets against language sets).
JaccardMatrix overlap_matrix(const std::vector<HeadSet>& rows, const std::vector<HeadSet>& cols,
                             const BaselineStats& baseline);

struct HeatmapStyle {
  std::string title;
  std::string row_axis = "layer";
  std::string col_axis = "head";
};

/// Per-cell SVG rectangles, diverging scale centred at 0 (positive green).
std::string heatmap_svg(const PatchGrid& grid, const HeatmapStyle& style);
/// Sequential [0, 1] scale with each value printed in its cell.
std::string heatmap_svg(const JaccardMatrix& matrix, const std::string& title);
void emit_heatmap(const PatchGrid& grid, const HeatmapStyle& style,
                  const std::filesystem::path& path);
void emit_heatmap(const JaccardMatrix& matrix, const std::string& title,
                  const std::filesystem::path& path);

std::string headset_json(const HeadSet& set);
HeadSet headset_from_json(const std::string& text);
std::string matrix_json(const JaccardMatrix& matrix);
JaccardMatrix matrix_from_json(const std::string& text);

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct KSensitivity {
  std::size_t k = 0;
  BaselineStats baseline;
  /// J(H_trig(l), H_lang(l)) per trigger language.
  std::map<std::string, double> trigger_language;
  double min_language_offdiag = 0.0;
};

/// Everything the report draws on. Grids are keyed by language name.
struct RunArtifacts {
  std::string checkpoint_hash;
  std::optional<EfficacyReport> efficacy;
  std::map<std::string, PatchGrid> trigger_grids;
  std::map<std::string, PatchGrid> language_grids;
  std::map<std::string, PatchGrid> layerwise_grids;
  std::optional<JaccardMatrix> trigger_language;
  std::optional<JaccardMatrix> language_language;
  std::vector<KSensitivity> k_sensitivity;
  /// Relative paths of heatmaps to link, keyed by caption.
  std::map<std::string, std::string> figures;
};

/// Throws MissingArtifact naming every absent piece.
void require_complete(const RunArtifacts& run);

/// Trained-model properties: efficacy gate, trigger-language and
/// language-language overlap above baseline mean + 3 std, layer-wise
/// consolidation by half depth.
std::vector<PropertyResult> evaluate_properties(const RunArtifacts& run);

std::string render_report(const RunArtifacts& run);

}  // namespace plab
