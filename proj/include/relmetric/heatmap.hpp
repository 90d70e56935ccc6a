#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/model.hpp"

namespace relmetric {

// Pooling-stack introspection for one sentence: each layer L^i summed over
// channels, and Q maxed over tags. All grids are n x n.
struct Heatmaps {
  std::vector<std::string> tokens;
  std::vector<Tensor> hidden;  // lambda grids; the last one is the output layer before softmax
  Tensor prediction;
};

inline Tensor channel_sum(const Tensor& t) {
  const std::size_t n = t.dim(0), k = t.dim(2);
  Tensor out({n, n});
  for (std::size_t c = 0; c < n * n; ++c) {
    Real s = 0;
    for (std::size_t j = 0; j < k; ++j) s += t[c * k + j];
    out[c] = s;
  }
  return out;
}

inline Tensor channel_max(const Tensor& t) {
  const std::size_t n = t.dim(0), k = t.dim(2);
  Tensor out({n, n});
  for (std::size_t c = 0; c < n * n; ++c) out[c] = *std::max_element(t.data() + c * k, t.data() + (c + 1) * k);
  return out;
}

inline Heatmaps compute_heatmaps(const RelationMetricModel& model, const SentenceExample& ex) {
  if (ex.size() == 0) throw ContractError("inspect: empty sentence");
  Tape tape;
  const auto out = model.forward(tape, model.encode(ex));
  Heatmaps h;
  h.tokens = ex.words();
  for (Var layer : out.pool.layers) h.hidden.push_back(channel_sum(tape.value(layer)));
  h.prediction = channel_max(tape.value(out.pool.probs));
  return h;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

}  // namespace detail

// Token-headed grid: first row and first column hold the tokens.
inline std::string grid_to_csv(const Tensor& grid, const std::vector<std::string>& tokens) {
  const std::size_t n = grid.dim(0);
  if (tokens.size() != n) throw ContractError("heatmap: token count does not match grid size");
  std::ostringstream os;
  os.precision(10);
  for (const auto& t : tokens) os << ',' << detail::csv_field(t);
  os << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    os << detail::csv_field(tokens[i]);
    for (std::size_t j = 0; j < n; ++j) os << ',' << grid.at(i, j);
    os << '\n';
  }
  return os.str();
}

// Binary greyscale PGM, min-max normalized, each cell drawn as a cell x cell block.
inline void write_pgm(const Tensor& grid, const std::string& path, std::size_t cell = 16) {
  const std::size_t n = grid.dim(0);
  const auto [lo, hi] = std::minmax_element(grid.values().begin(), grid.values().end());
  const Real range = *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write image '" + path + "'");
  out << "P5\n" << n * cell << ' ' << n * cell << "\n255\n";
  std::string row(n * cell, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Real v = range > 0 ? (grid.at(i, j) - *lo) / range : Real{0};
      std::fill_n(row.begin() + j * cell, cell, static_cast<char>(static_cast<std::uint8_t>(v * 255 + Real{0.5})));
    }
    for (std::size_t r = 0; r < cell; ++r) out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

// Writes layer_<i>.csv for every hidden grid and prediction.csv (plus .pgm
// images when asked). Returns the paths written.
inline std::vector<std::string> write_heatmaps(const Heatmaps& h, const std::string& dir, bool images = false) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  auto emit = [&](const Tensor& grid, const std::string& stem) {
    const std::string csv = (std::filesystem::path(dir) / (stem + ".csv")).string();
    std::ofstream out(csv);
    if (!out) throw IngestionError("cannot write heatmap '" + csv + "'");
    out << grid_to_csv(grid, h.tokens);
    written.push_back(csv);
    if (images) {
      const std::string pgm = (std::filesystem::path(dir) / (stem + ".pgm")).string();
      write_pgm(grid, pgm);
      written.push_back(pgm);
    }
  };
  for (std::size_t i = 0; i < h.hidden.size(); ++i) emit(h.hidden[i], "layer_" + std::to_string(i + 1));
  emit(h.prediction, "prediction");
  return written;
}

}  // namespace relmetric
