#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "biembed/data.hpp"
#include "biembed/encoder.hpp"
#include "biembed/util.hpp"

namespace biembed {

// Similarity statistics for matched vs random sentence pairs. Histograms use
// 32 equal bins over [-1,1]; bins are left-closed and the last bin also
// includes 1.0.
struct SimilarityReport {
  std::size_t n_same = 0;
  std::size_t n_random = 0;
  double mean_same = 0.0;
  double mean_random = 0.0;
  double margin = 0.0;  // mean_same - mean_random
  std::array<std::size_t, 32> hist_same{};
  std::array<std::size_t, 32> hist_random{};

  std::string to_json_string() const;
};

std::size_t similarity_histogram_bin(double cosine);

SimilarityReport similarity_report(const SentenceEncoder& encoder, const PairDataset& same_pairs,
                                   const PairDataset& random_pairs);

// Sample Pearson correlation, two-pass, clamped into [-1,1]. Lengths must
// match and be >= 2; zero variance on either side is an error.
double pearson(std::span<const double> x, std::span<const double> y);

struct PcaResult {
  Matrix coordinates;                           // [n, k] projected points
  Matrix components;                            // [k, d] orthonormal rows
  std::vector<double> explained_variance_ratio; // per component, non-increasing
  double total_variance = 0.0;

  std::string to_json_string() const;
  std::string coordinates_csv() const;  // "index,x,y" rows for k == 2
};

// Top-k principal components by seeded power iteration with deflation on the
// column-centered covariance. Component signs are fixed so the first entry
// over 1e-12 in magnitude is positive.
PcaResult pca_project(const Matrix& x, std::size_t k = 2, std::uint64_t seed = 0,
                      double tolerance = 1e-10, std::size_t max_iterations = 10000);

struct EmbedFileResult {
  std::size_t written = 0;
  std::size_t skipped_empty = 0;
};

// Embeds one sentence per line into CSV rows `index,v0,...,v{d-1}` with a
// header. Empty lines are skipped and counted.
EmbedFileResult embed_file(const SentenceEncoder& encoder,
                           const std::filesystem::path& input_path,
                           const std::filesystem::path& output_path);

// Reads a matrix back from the embed_file CSV layout.
Matrix read_embedding_csv(const std::filesystem::path& path);

}  // namespace biembed
