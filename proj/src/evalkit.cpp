#include "biembed/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "biembed/optim.hpp"
#include "biembed/rng.hpp"

namespace biembed {

namespace {
std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

// --- similarity report ------------------------------------------------------

std::size_t similarity_histogram_bin(double cosine) {
  const double shifted = (cosine + 1.0) * 16.0;  // 32 bins over [-1,1]
  const auto bin = static_cast<long>(std::floor(shifted));
  return static_cast<std::size_t>(std::clamp(bin, 0L, 31L));
}

namespace {
struct GroupStats {
  double mean = 0.0;
  std::array<std::size_t, 32> hist{};
};

GroupStats group_stats(const SentenceEncoder& encoder, const PairDataset& pairs) {
  std::vector<std::string> a, b;
  a.reserve(pairs.size());
  b.reserve(pairs.size());
  for (const SentencePair& p : pairs.pairs) {
    a.push_back(p.a);
    b.push_back(p.b);
  }
  const Matrix ea = encoder.encode(a);
  const Matrix eb = encoder.encode(b);
  GroupStats stats;
  double sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double c = cosine_similarity(ea.row(i), eb.row(i));
    sum += c;
    ++stats.hist[similarity_histogram_bin(c)];
  }
  stats.mean = sum / static_cast<double>(pairs.size());
  return stats;
}
}  // namespace

SimilarityReport similarity_report(const SentenceEncoder& encoder, const PairDataset& same_pairs,
                                   const PairDataset& random_pairs) {
  if (same_pairs.empty() || random_pairs.empty()) {
    throw std::invalid_argument("similarity_report: both pair groups must be non-empty");
  }
  const GroupStats same = group_stats(encoder, same_pairs);
  const GroupStats random = group_stats(encoder, random_pairs);
  SimilarityReport report;
  report.n_same = same_pairs.size();
  report.n_random = random_pairs.size();
  report.mean_same = same.mean;
  report.mean_random = random.mean;
  report.margin = same.mean - random.mean;
  report.hist_same = same.hist;
  report.hist_random = random.hist;
  return report;
}

std::string SimilarityReport::to_json_string() const {
  nlohmann::json j{{"n_same", n_same},
                   {"n_random", n_random},
                   {"mean_same", mean_same},
                   {"mean_random", mean_random},
                   {"margin", margin},
                   {"hist_same", hist_same},
                   {"hist_random", hist_random},
                   {"hist_bins", 32},
                   {"hist_range", {-1.0, 1.0}}};
  return j.dump(2);
}

// --- pearson ------------------------------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("pearson: length mismatch: " + std::to_string(x.size()) +
                                " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw std::domain_error("pearson: undefined for zero-variance input");
  }
  // Single sqrt of the product so that x == y gives exactly 1.0.
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// --- PCA ------------------------------------------------------------------------

PcaResult pca_project(const Matrix& x, std::size_t k, std::uint64_t seed, double tolerance,
                      std::size_t max_iterations) {
  const std::size_t n = x.rows, d = x.cols;
  if (n < 2) throw std::invalid_argument("pca_project: need at least 2 rows");
  if (k == 0 || k > std::min(n, d)) {
    throw std::invalid_argument("pca_project: k = " + std::to_string(k) +
                                " out of range for a " + std::to_string(n) + "x" +
                                std::to_string(d) + " matrix");
  }

  Matrix centered(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered.at(i, j) = x.at(i, j) - mean;
  }

  // Sample covariance, deflated in place as components are extracted.
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.row(i).data();
    for (std::size_t a = 0; a < d; ++a) {
      const double va = row[a];
      double* cra = cov.row(a).data();
      for (std::size_t b = 0; b < d; ++b) cra[b] += va * row[b];
    }
  }
  const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
  for (double& v : cov.data) v *= inv_nm1;

  double total_variance = 0.0;
  for (std::size_t a = 0; a < d; ++a) total_variance += cov.at(a, a);
  if (total_variance <= 0.0) {
    throw std::domain_error("pca_project: zero total variance (all rows identical)");
  }

  PcaResult result;
  result.total_variance = total_variance;
  result.components = Matrix(k, d);
  result.explained_variance_ratio.resize(k);

  std::vector<double> v(d), w(d);
  for (std::size_t comp = 0; comp < k; ++comp) {
    SplitMix64 rng(derive_seed(seed, "pca-component-" + std::to_string(comp)));
    for (double& e : v) e = rng.next_uniform(-1.0, 1.0);
    // Orthogonalize the start vector against what we already have.
    for (std::size_t prev = 0; prev < comp; ++prev) {
      const double* u = result.components.row(prev).data();
      double dot = 0.0;
      for (std::size_t a = 0; a < d; ++a) dot += v[a] * u[a];
      for (std::size_t a = 0; a < d; ++a) v[a] -= dot * u[a];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::runtime_error("pca_project: degenerate start vector");
    for (double& e : v) e /= norm;

    double lambda = 0.0;
    double residual = 0.0;
    bool converged = false;
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
      for (std::size_t a = 0; a < d; ++a) {
        const double* row = cov.row(a).data();
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b) s += row[b] * v[b];
        w[a] = s;
      }
      // Project the image back into the subspace orthogonal to the extracted
      // components; deflation leaves a residue of the previous component's
      // own tolerance behind, which would otherwise floor the residual.
      for (std::size_t prev = 0; prev < comp; ++prev) {
        const double* u = result.components.row(prev).data();
        double dot = 0.0;
        for (std::size_t a = 0; a < d; ++a) dot += w[a] * u[a];
        for (std::size_t a = 0; a < d; ++a) w[a] -= dot * u[a];
      }
      lambda = 0.0;
      for (std::size_t a = 0; a < d; ++a) lambda += v[a] * w[a];
      residual = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        const double r = w[a] - lambda * v[a];
        residual += r * r;
      }
      residual = std::sqrt(residual);
      if (residual <= tolerance * std::max(1.0, std::fabs(lambda))) {
        converged = true;
        break;
      }
      double wn = 0.0;
      for (double e : w) wn += e * e;
      wn = std::sqrt(wn);
      if (wn == 0.0) {
        // v is in the null space of the deflated covariance: a valid
        // zero-variance direction.
        converged = true;
        lambda = 0.0;
        break;
      }
      for (std::size_t a = 0; a < d; ++a) v[a] = w[a] / wn;
    }
    if (!converged) {
      throw std::runtime_error("pca_project: component " + std::to_string(comp) +
                               " did not converge in " + std::to_string(max_iterations) +
                               " iterations (residual " + std::to_string(residual) + ")");
    }

    // Sign convention: first entry above 1e-12 in magnitude is positive.
    for (std::size_t a = 0; a < d; ++a) {
      if (std::fabs(v[a]) > 1e-12) {
        if (v[a] < 0.0) {
          for (double& e : v) e = -e;
        }
        break;
      }
    }
    std::copy(v.begin(), v.end(), result.components.row(comp).begin());
    result.explained_variance_ratio[comp] = std::max(lambda, 0.0) / total_variance;

    // Deflate: cov -= lambda v v^T.
    for (std::size_t a = 0; a < d; ++a) {
      double* row = cov.row(a).data();
      const double va = lambda * v[a];
      for (std::size_t b = 0; b < d; ++b) row[b] -= va * v[b];
    }
  }

  result.coordinates = Matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t comp = 0; comp < k; ++comp) {
      double s = 0.0;
      const double* row = centered.row(i).data();
      const double* u = result.components.row(comp).data();
      for (std::size_t a = 0; a < d; ++a) s += row[a] * u[a];
      result.coordinates.at(i, comp) = s;
    }
  }
  return result;
}

std::string PcaResult::to_json_string() const {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t i = 0; i < components.rows; ++i) {
    comps.push_back(std::vector<double>(components.row(i).begin(), components.row(i).end()));
  }
  nlohmann::json coords = nlohmann::json::array();
  for (std::size_t i = 0; i < coordinates.rows; ++i) {
    coords.push_back(std::vector<double>(coordinates.row(i).begin(), coordinates.row(i).end()));
  }
  nlohmann::json j{{"coordinates", coords},
                   {"components", comps},
                   {"explained_variance_ratio", explained_variance_ratio},
                   {"total_variance", total_variance}};
  return j.dump(2);
}

std::string PcaResult::coordinates_csv() const {
  std::string out = "index";
  if (coordinates.cols == 2) {
    out += ",x,y";
  } else {
    for (std::size_t c = 0; c < coordinates.cols; ++c) out += ",c" + std::to_string(c);
  }
  out += '\n';
  for (std::size_t i = 0; i < coordinates.rows; ++i) {
    out += std::to_string(i);
    for (std::size_t c = 0; c < coordinates.cols; ++c) {
      out += ',';
      out += format_double(coordinates.at(i, c));
    }
    out += '\n';
  }
  return out;
}

// --- embedding files --------------------------------------------------------

EmbedFileResult embed_file(const SentenceEncoder& encoder,
                           const std::filesystem::path& input_path,
                           const std::filesystem::path& output_path) {
  EmbedFileResult result;
  std::vector<std::string> sentences;
  for (const std::string& line : split_lines(read_text_file(input_path))) {
    if (tokenize_text(line).empty()) {
      ++result.skipped_empty;
      continue;
    }
    sentences.push_back(line);
  }
  const std::size_t dim = encoder.params().config.d_model;
  std::string out = "index";
  for (std::size_t c = 0; c < dim; ++c) out += ",v" + std::to_string(c);
  out += '\n';
  if (!sentences.empty()) {
    const Matrix emb = encoder.encode(sentences);
    for (std::size_t i = 0; i < emb.rows; ++i) {
      out += std::to_string(i);
      for (std::size_t c = 0; c < dim; ++c) {
        out += ',';
        out += format_double(emb.at(i, c));
      }
      out += '\n';
    }
    result.written = emb.rows;
  }
  atomic_write_file(output_path, out);
  return result;
}

Matrix read_embedding_csv(const std::filesystem::path& path) {
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  if (lines.empty()) throw std::runtime_error("read_embedding_csv: empty file " + path.string());
  std::vector<std::vector<double>> rows;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = line.find(',');  // skip the index column
    if (start == std::string::npos) {
      throw std::runtime_error("read_embedding_csv: malformed line " + std::to_string(ln + 1) +
                               " in " + path.string());
    }
    ++start;
    while (start <= line.size()) {
      const std::size_t comma = line.find(',', start);
      const std::string field =
          comma == std::string::npos ? line.substr(start) : line.substr(start, comma - start);
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw std::runtime_error("read_embedding_csv: bad number '" + field + "' at line " +
                                 std::to_string(ln + 1) + " in " + path.string());
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("read_embedding_csv: ragged rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("read_embedding_csv: no data rows in " + path.string());
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

}  // namespace biembed
