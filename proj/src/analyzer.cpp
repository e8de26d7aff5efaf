#include "patchlab/analyzer/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "patchlab/errors.hpp"
#include "patchlab/hashing.hpp"

namespace plab {

std::string grid_hash(const PatchGrid& grid) { return sha256_hex(grid_csv(grid)); }

HeadSet top_k_heads(const PatchGrid& grid, std::size_t k, std::string label) {
  const std::size_t cells = grid.rows * grid.cols;
  if (k > cells) {
    throw KExceedsGridSize("k = " + std::to_string(k) + " but the grid has " +
                           std::to_string(cells) + " cells");
  }
  std::vector<std::size_t> idx(cells);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Row-major index order is (layer, head) order, so a stable sort on value
  // alone implements the tie-break.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return grid.values[a] > grid.values[b]; });
  HeadSet set{std::move(label), k, {}, grid_hash(grid)};
  for (std::size_t i = 0; i < k; ++i) set.heads.emplace_back(idx[i] / grid.cols, idx[i] % grid.cols);
  return set;
}

double jaccard(const HeadSet& a, const HeadSet& b) {
  const std::set<HeadRef> sa(a.heads.begin(), a.heads.end());
  const std::set<HeadRef> sb(b.heads.begin(), b.heads.end());
  if (sa.empty() && sb.empty()) throw BothEmpty("jaccard of two empty head sets");
  std::size_t inter = 0;
  for (const auto& h : sa) inter += sb.count(h);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

BaselineStats shuffled_baseline(std::size_t n_layers, std::size_t n_heads, std::size_t k,
                                std::size_t trials, std::uint64_t seed) {
  const std::size_t cells = n_layers * n_heads;
  if (k > cells) {
    throw KExceedsGridSize("k = " + std::to_string(k) + " exceeds " + std::to_string(cells) +
                           " cells");
  }
  if (trials < 1000) throw InvalidConfig("shuffled_baseline needs at least 1000 trials");
  if (k == 0) throw BothEmpty("k = 0 gives two empty sets");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(cells);
  std::vector<char> in_a(cells);
  auto draw = [&] {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, cells - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
  };
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    draw();
    std::fill(in_a.begin(), in_a.end(), 0);
    for (std::size_t i = 0; i < k; ++i) in_a[pool[i]] = 1;
    draw();
    std::size_t inter = 0;
    for (std::size_t i = 0; i < k; ++i) inter += in_a[pool[i]];
    const double j = static_cast<double>(inter) / static_cast<double>(2 * k - inter);
    sum += j;
    sum_sq += j * j;
  }
  const double n = static_cast<double>(trials);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var), trials};
}

JaccardMatrix overlap_matrix(const std::vector<HeadSet>& rows, const std::vector<HeadSet>& cols,
                             const BaselineStats& baseline) {
  if (rows.empty() || cols.empty()) throw InvalidConfig("overlap_matrix needs head sets");
  JaccardMatrix m;
  for (const auto& s : rows) m.row_labels.push_back(s.label);
  for (const auto& s : cols) m.col_labels.push_back(s.label);
  for (const auto& r : rows)
    for (const auto& c : cols) m.values.push_back(jaccard(r, c));
  m.baseline_mean = baseline.mean;
  m.baseline_std = baseline.std;
  return m;
}

JaccardMatrix overlap_matrix(const std::vector<HeadSet>& sets, const BaselineStats& baseline) {
  if (sets.size() < 2) throw InvalidConfig("overlap_matrix needs at least two head sets");
  return overlap_matrix(sets, sets, baseline);
}

// --- heatmaps -----------------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kNeutral{247, 247, 247};
constexpr Rgb kPositive{26, 152, 80};
constexpr Rgb kNegative{118, 42, 131};
constexpr Rgb kSequentialHigh{0, 68, 27};

std::string hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(c.r)),
                static_cast<int>(std::lround(c.g)), static_cast<int>(std::lround(c.b)));
  return buf;
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

std::string fmt(double v, const char* spec = "%.3f") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

constexpr int kCellW = 56, kCellH = 32, kLeft = 110, kTop = 56;

struct Canvas {
  std::size_t rows, cols;
  std::ostringstream body;

  int width() const { return kLeft + static_cast<int>(cols) * kCellW + 20; }
  int height() const { return kTop + static_cast<int>(rows) * kCellH + 44; }

  void cell(std::size_t r, std::size_t c, const Rgb& fill, const std::optional<std::string>& text) {
    const int x = kLeft + static_cast<int>(c) * kCellW;
    const int y = kTop + static_cast<int>(r) * kCellH;
    body << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellW << "\" height=\""
         << kCellH << "\" fill=\"" << hex(fill) << "\" stroke=\"#ffffff\"/>\n";
    if (text) {
      const bool dark = fill.r + fill.g + fill.b < 360.0;
      body << "<text x=\"" << x + kCellW / 2 << "\" y=\"" << y + kCellH / 2 + 4
           << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"" << (dark ? "#ffffff" : "#000000")
           << "\">" << *text << "</text>\n";
    }
  }

  std::string finish(const std::string& title, const std::vector<std::string>& row_labels,
                     const std::vector<std::string>& col_labels, const std::string& row_axis,
                     const std::string& col_axis, const std::string& note) const {
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width() << "\" height=\""
        << height() << "\" font-family=\"sans-serif\">\n";
    svg << "<text x=\"" << kLeft << "\" y=\"20\" font-size=\"14\">" << escape(title)
        << "</text>\n";
    svg << "<text x=\"" << kLeft << "\" y=\"" << kTop - 22 << "\" font-size=\"11\">"
        << escape(col_axis) << "</text>\n";
    svg << "<text x=\"8\" y=\"" << kTop - 6 << "\" font-size=\"11\">" << escape(row_axis)
        << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      svg << "<text x=\"" << kLeft + static_cast<int>(c) * kCellW + kCellW / 2 << "\" y=\""
          << kTop - 6 << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(col_labels[c])
          << "</text>\n";
    }
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
      svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << kTop + static_cast<int>(r) * kCellH + kCellH / 2 + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << escape(row_labels[r]) << "</text>\n";
    }
    svg << body.str();
    svg << "<text x=\"" << kLeft << "\" y=\"" << height() - 16 << "\" font-size=\"11\">"
        << escape(note) << "</text>\n";
    svg << "</svg>\n";
    return svg.str();
  }
};

std::vector<std::string> index_labels(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
  return out;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IoFailure("write failed for " + path.string());
}

}  // namespace

std::string heatmap_svg(const PatchGrid& grid, const HeatmapStyle& style) {
  double scale = 0.0;
  for (double v : grid.values) {
    if (!std::isfinite(v)) throw InvalidConfig("heatmap of a grid with non-finite values");
    scale = std::max(scale, std::abs(v));
  }
  Canvas canvas{grid.rows, grid.cols, {}};
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const double v = grid.at(r, c);
      const double t = scale > 0.0 ? std::abs(v) / scale : 0.0;
      canvas.cell(r, c, lerp(kNeutral, v >= 0.0 ? kPositive : kNegative, t), std::nullopt);
    }
  }
  return canvas.finish(style.title, index_labels(grid.rows), index_labels(grid.cols),
                       style.row_axis, style.col_axis,
                       "colour scale: 0 white, +/-" + fmt(scale, "%.4g") + " green/purple");
}

std::string heatmap_svg(const JaccardMatrix& m, const std::string& title) {
  Canvas canvas{m.rows(), m.cols(), {}};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m.at(r, c);
      if (!std::isfinite(v)) throw InvalidConfig("heatmap of a matrix with non-finite values");
      canvas.cell(r, c, lerp(kNeutral, kSequentialHigh, v), fmt(v, "%.2f"));
    }
  }
  return canvas.finish(title, m.row_labels, m.col_labels, "", "",
                       "shuffled baseline " + fmt(m.baseline_mean) + " +/- " +
                           fmt(m.baseline_std));
}

void emit_heatmap(const PatchGrid& grid, const HeatmapStyle& style,
                  const std::filesystem::path& path) {
  write_text(heatmap_svg(grid, style), path);
}

void emit_heatmap(const JaccardMatrix& matrix, const std::string& title,
                  const std::filesystem::path& path) {
  write_text(heatmap_svg(matrix, title), path);
}

// --- JSON ---------------------------------------------------------------------

std::string headset_json(const HeadSet& set) {
  nlohmann::ordered_json j{{"label", set.label}, {"k", set.k}};
  j["heads"] = nlohmann::ordered_json::array();
  for (const auto& [l, h] : set.heads) j["heads"].push_back({l, h});
  j["grid_hash"] = set.grid_hash;
  return j.dump(2) + "\n";
}

HeadSet headset_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    HeadSet s{j.at("label").get<std::string>(), j.at("k").get<std::size_t>(), {},
              j.at("grid_hash").get<std::string>()};
    for (const auto& h : j.at("heads")) {
      s.heads.emplace_back(h.at(0).get<std::size_t>(), h.at(1).get<std::size_t>());
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(std::string("head set JSON: ") + e.what());
  }
}

std::string matrix_json(const JaccardMatrix& m) {
  nlohmann::ordered_json j{{"row_labels", m.row_labels}, {"col_labels", m.col_labels}};
  j["values"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols()),
                            m.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols()));
    j["values"].push_back(row);
  }
  j["baseline_mean"] = m.baseline_mean;
  j["baseline_std"] = m.baseline_std;
  return j.dump(2) + "\n";
}

JaccardMatrix matrix_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    JaccardMatrix m;
    m.row_labels = j.at("row_labels").get<std::vector<std::string>>();
    m.col_labels = j.at("col_labels").get<std::vector<std::string>>();
    for (const auto& row : j.at("values")) {
      for (const auto& v : row) m.values.push_back(v.get<double>());
    }
    if (m.values.size() != m.rows() * m.cols()) throw IoFailure("matrix JSON: ragged values");
    m.baseline_mean = j.at("baseline_mean").get<double>();
    m.baseline_std = j.at("baseline_std").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoFailure(std::string("matrix JSON: ") + e.what());
  }
}

// --- report -------------------------------------------------------------------

namespace {

std::optional<double> lookup(const JaccardMatrix& m, const std::string& row,
                             const std::string& col) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (m.row_labels[r] != row) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (m.col_labels[c] == col) return m.at(r, c);
    }
  }
  return std::nullopt;
}

std::string trigger_label(const std::string& lang) { return "trigger_" + lang; }
std::string language_label(const std::string& lang) { return "language_" + lang; }

const std::vector<std::string> kTriggerNames{"fr", "de"};
const std::vector<std::string> kLanguageNames{"fr", "de", "it", "es"};

std::size_t half_depth_row(std::size_t n_layers) { return (n_layers + 1) / 2 - 1; }

}  // namespace

void require_complete(const RunArtifacts& run) {
  std::vector<std::string> missing;
  if (run.checkpoint_hash.empty()) missing.push_back("checkpoint hash");
  if (!run.efficacy) missing.push_back("efficacy report");
  for (const auto& l : kTriggerNames) {
    if (!run.trigger_grids.count(l)) missing.push_back("trigger head sweep '" + l + "'");
    if (!run.layerwise_grids.count(l)) missing.push_back("layer-wise sweep '" + l + "'");
  }
  for (const auto& l : kLanguageNames) {
    if (!run.language_grids.count(l)) missing.push_back("language head sweep '" + l + "'");
  }
  if (!run.trigger_language) missing.push_back("trigger x language overlap matrix");
  if (!run.language_language) missing.push_back("language x language overlap matrix");
  if (missing.empty()) return;
  std::string msg;
  for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
  throw MissingArtifact(msg);
}

std::vector<PropertyResult> evaluate_properties(const RunArtifacts& run) {
  require_complete(run);
  std::vector<PropertyResult> out;
  const auto gate = check_gate(*run.efficacy);
  out.push_back({"efficacy gate (switch >= 0.9, false switch <= 0.05)", gate.passed, gate.reason});

  const auto& tl = *run.trigger_language;
  const double tl_bar = tl.baseline_mean + 3.0 * tl.baseline_std;
  for (const auto& l : kTriggerNames) {
    const auto v = lookup(tl, trigger_label(l), language_label(l));
    const bool ok = v && *v > tl_bar;
    out.push_back({"J(H_trig, H_lang) above baseline for " + l, ok,
                   v ? fmt(*v) + " vs " + fmt(tl_bar) : std::string("entry missing")});
  }

  const auto& ll = *run.language_language;
  const double ll_bar = ll.baseline_mean + 3.0 * ll.baseline_std;
  double lowest = 1.0;
  for (std::size_t r = 0; r < ll.rows(); ++r)
    for (std::size_t c = 0; c < ll.cols(); ++c)
      if (r != c) lowest = std::min(lowest, ll.at(r, c));
  out.push_back({"language-language overlaps above baseline", lowest > ll_bar,
                 "lowest off-diagonal " + fmt(lowest) + " vs " + fmt(ll_bar)});

  for (const auto& l : kTriggerNames) {
    const auto& g = run.layerwise_grids.at(l);
    const std::size_t row = half_depth_row(g.rows);
    const double reached = g.at(row, g.cols - 1);
    const double frac = g.mean_gap != 0.0 ? reached / g.mean_gap : 0.0;
    out.push_back({"layer-wise consolidation by half depth for " + l, frac >= 0.8,
                   "final trigger token at layer " + std::to_string(row) + ": " + fmt(reached) +
                       " of gap " + fmt(g.mean_gap) + " (" + fmt(100.0 * frac, "%.1f") + "%)"});
  }
  return out;
}

std::string render_report(const RunArtifacts& run) {
  require_complete(run);
  std::ostringstream md;
  md << "# Patching run report\n\n";
  md << "Model checkpoint SHA-256: `" << run.checkpoint_hash << "`\n\n";

  md << "## Trigger efficacy\n\n";
  md << "| language | contexts | switch (real) | switch (fake) | switch (none) |\n";
  md << "|---|---|---|---|---|\n";
  for (const auto& l : run.efficacy->langs) {
    md << "| " << lang_name(l.lang) << " | " << l.n_contexts << " | " << fmt(l.switch_rate)
       << " | " << fmt(l.false_switch_rate) << " | " << fmt(l.clean_rate) << " |\n";
  }
  const auto gate = check_gate(*run.efficacy);
  md << "\nGate: " << (gate.passed ? "passed" : "FAILED") << " (" << gate.reason << ")\n\n";

  auto grid_section = [&](const std::string& heading, const std::map<std::string, PatchGrid>& grids,
                          const std::string& prefix) {
    md << "## " << heading << "\n\n";
    for (const auto& [lang, g] : grids) {
      const auto top = top_k_heads(g, std::min<std::size_t>(10, g.rows * g.cols));
      md << "- " << lang << " (" << g.n_examples << " examples, mean gap " << fmt(g.mean_gap)
         << "): top heads";
      for (const auto& [l, h] : top.heads) md << " L" << l << "H" << h;
      md << "\n";
      const auto fig = run.figures.find(prefix + lang);
      if (fig != run.figures.end()) md << "  ![" << prefix << lang << "](" << fig->second << ")\n";
    }
    md << "\n";
  };
  grid_section("Head-wise patching, trigger condition", run.trigger_grids, "trigger_");
  grid_section("Head-wise patching, language condition", run.language_grids, "language_");

  auto matrix_table = [&](const std::string& heading, const JaccardMatrix& m,
                          const std::string& key) {
    md << "## " << heading << "\n\n|";
    for (const auto& c : m.col_labels) md << " | " << c;
    md << " |\n|---";
    for (std::size_t c = 0; c < m.cols(); ++c) md << "|---";
    md << "|\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
      md << "| " << m.row_labels[r];
      for (std::size_t c = 0; c < m.cols(); ++c) md << " | " << fmt(m.at(r, c));
      md << " |\n";
    }
    md << "\nShuffled baseline: mean " << fmt(m.baseline_mean) << ", std " << fmt(m.baseline_std)
       << " (threshold mean + 3 std = " << fmt(m.baseline_mean + 3.0 * m.baseline_std) << ")\n";
    const auto fig = run.figures.find(key);
    if (fig != run.figures.end()) md << "\n![" << key << "](" << fig->second << ")\n";
    md << "\n";
  };
  matrix_table("Trigger x language head overlap", *run.trigger_language, "trigger_language");
  matrix_table("Language x language head overlap", *run.language_language, "language_language");

  if (!run.k_sensitivity.empty()) {
    md << "## Sensitivity to k\n\n| k | baseline mean | baseline std |";
    for (const auto& l : kTriggerNames) md << " J trig/lang " << l << " |";
    md << " min lang/lang |\n|---|---|---|";
    for (std::size_t i = 0; i < kTriggerNames.size(); ++i) md << "---|";
    md << "---|\n";
    for (const auto& s : run.k_sensitivity) {
      md << "| " << s.k << " | " << fmt(s.baseline.mean) << " | " << fmt(s.baseline.std) << " |";
      for (const auto& l : kTriggerNames) {
        const auto it = s.trigger_language.find(l);
        md << " " << (it == s.trigger_language.end() ? std::string("-") : fmt(it->second)) << " |";
      }
      md << " " << fmt(s.min_language_offdiag) << " |\n";
    }
    md << "\n";
  }

  md << "## Layer-wise patching at the final trigger token\n\n| layer |";
  for (const auto& [lang, g] : run.layerwise_grids) md << " " << lang << " Delta | " << lang << " % gap |";
  md << "\n|---|";
  for (std::size_t i = 0; i < run.layerwise_grids.size(); ++i) md << "---|---|";
  md << "\n";
  const std::size_t n_rows = run.layerwise_grids.begin()->second.rows;
  for (std::size_t r = 0; r < n_rows; ++r) {
    md << "| " << r << " |";
    for (const auto& [lang, g] : run.layerwise_grids) {
      const double v = g.at(r, g.cols - 1);
      md << " " << fmt(v) << " | " << fmt(g.mean_gap != 0.0 ? 100.0 * v / g.mean_gap : 0.0, "%.1f")
         << " |";
    }
    md << "\n";
  }
  for (const auto& [lang, g] : run.layerwise_grids) {
    const auto fig = run.figures.find("layerwise_" + lang);
    if (fig != run.figures.end()) md << "\n![layerwise_" << lang << "](" << fig->second << ")\n";
  }
  md << "\n## Properties\n\n";
  for (const auto& p : evaluate_properties(run)) {
    md << "- " << (p.passed ? "PASS" : "FAIL") << " " << p.name << ": " << p.detail << "\n";
  }
  return md.str();
}

}  // namespace plab
