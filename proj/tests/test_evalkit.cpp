#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "biembed/encoder.hpp"
#include "biembed/evalkit.hpp"
#include "biembed/rng.hpp"
#include "biembed/textproc.hpp"
#include "biembed/util.hpp"
#include "oracles.hpp"

using namespace biembed;

namespace {
std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "biembed_evalkit_test";
  std::filesystem::create_directories(dir);
  return dir;
}

Matrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Matrix m(n, d);
  for (double& v : m.data) v = rng.next_uniform(-2.0, 2.0);
  return m;
}

// Independent one-pass formula (the implementation uses two passes).
double one_pass_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}
}  // namespace

TEST_CASE("pearson closed forms") {
  const std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> y(4);
  for (std::size_t i = 0; i < 4; ++i) y[i] = 2.0 * x[i] + 3.0;
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-15));
  for (std::size_t i = 0; i < 4; ++i) y[i] = -x[i];
  CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-15));
  // identical inputs give exactly 1.0 (single sqrt of the product)
  CHECK(pearson(x, x) == 1.0);
}

TEST_CASE("pearson matches an independent one-pass oracle") {
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> y = {1, 3, 2, 4};
  CHECK(pearson(x, y) == doctest::Approx(one_pass_pearson(x, y)).epsilon(1e-12));
  SplitMix64 rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> a(20), b(20);
    for (std::size_t i = 0; i < 20; ++i) {
      a[i] = rng.next_uniform(-5, 5);
      b[i] = rng.next_uniform(-5, 5);
    }
    CHECK(pearson(a, b) == doctest::Approx(one_pass_pearson(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("pearson symmetry and affine invariance") {
  SplitMix64 rng(41);
  std::vector<double> x(30), y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    x[i] = rng.next_uniform(-1, 1);
    y[i] = rng.next_uniform(-1, 1);
  }
  CHECK(std::fabs(pearson(x, y) - pearson(y, x)) < 1e-12);
  std::vector<double> scaled(30);
  for (std::size_t i = 0; i < 30; ++i) scaled[i] = 3.5 * x[i] + 11.0;
  CHECK(pearson(x, y) == doctest::Approx(pearson(scaled, y)).epsilon(1e-9));
}

TEST_CASE("pearson error paths") {
  const std::vector<double> constant = {2, 2, 2};
  const std::vector<double> varying = {1, 2, 3};
  CHECK_THROWS_AS(pearson(constant, varying), std::domain_error);
  CHECK_THROWS_AS(pearson(varying, constant), std::domain_error);
  const std::vector<double> single = {1};
  CHECK_THROWS_AS(pearson(single, single), std::invalid_argument);
  CHECK_THROWS_AS(pearson(varying, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST_CASE("pca matches a dense eigendecomposition oracle up to sign") {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(10, 8, 500 + trial);
    const PcaResult mine = pca_project(x, 3, trial);

    // Covariance for the oracle.
    std::vector<double> mean(8, 0.0);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 8; ++j) mean[j] += x.at(i, j) / 10.0;
    std::vector<double> cov(64, 0.0);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t a = 0; a < 8; ++a) {
        for (std::size_t b = 0; b < 8; ++b) {
          cov[a * 8 + b] += (x.at(i, a) - mean[a]) * (x.at(i, b) - mean[b]) / 9.0;
        }
      }
    }
    const oracle::EigenResult eig = oracle::jacobi_eigen(cov, 8);
    double trace = 0.0;
    for (std::size_t a = 0; a < 8; ++a) trace += cov[a * 8 + a];

    for (std::size_t comp = 0; comp < 3; ++comp) {
      CHECK(mine.explained_variance_ratio[comp] ==
            doctest::Approx(eig.values[comp] / trace).epsilon(1e-8));
      // match up to sign
      double dot = 0.0;
      for (std::size_t a = 0; a < 8; ++a) {
        dot += mine.components.at(comp, a) * eig.vectors[comp][a];
      }
      CHECK(std::fabs(std::fabs(dot) - 1.0) < 1e-8);
    }
  }
}

TEST_CASE("pca on exactly rank-2 data explains all variance, d=512") {
  SplitMix64 rng(77);
  std::vector<double> u(512), v(512);
  for (std::size_t i = 0; i < 512; ++i) {
    u[i] = rng.next_uniform(-1, 1);
    v[i] = rng.next_uniform(-1, 1);
  }
  Matrix x(40, 512);
  for (std::size_t i = 0; i < 40; ++i) {
    const double a = rng.next_uniform(-3, 3), b = rng.next_uniform(-3, 3);
    for (std::size_t j = 0; j < 512; ++j) x.at(i, j) = a * u[j] + b * v[j];
  }
  const PcaResult result = pca_project(x, 2, 1);
  CHECK(result.coordinates.cols == 2);
  CHECK(result.components.rows == 2);
  const double total_ratio =
      result.explained_variance_ratio[0] + result.explained_variance_ratio[1];
  CHECK(total_ratio == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("pca degenerate and convergence errors") {
  Matrix same(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    same.at(i, 0) = 1.0;
    same.at(i, 1) = -2.0;
    same.at(i, 2) = 0.5;
  }
  CHECK_THROWS_AS(pca_project(same, 2), std::domain_error);
  const Matrix x = random_matrix(6, 4, 9);
  CHECK_THROWS_AS(pca_project(x, 5), std::invalid_argument);
  CHECK_THROWS_AS(pca_project(x, 0), std::invalid_argument);
  // Two equal dominant eigenvalues still converge on the residual criterion.
  Matrix iso(8, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    iso.at(i, 0) = i % 2 == 0 ? 1.0 : -1.0;
    iso.at(4 + i, 1) = i % 2 == 0 ? 1.0 : -1.0;
  }
  const PcaResult r = pca_project(iso, 2, 3);
  CHECK(r.explained_variance_ratio[0] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("pca components are orthonormal, signed, and centering-invariant") {
  const Matrix x = random_matrix(12, 6, 21);
  const PcaResult result = pca_project(x, 3, 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        dot += result.components.at(i, c) * result.components.at(j, c);
      }
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
    }
    for (std::size_t c = 0; c < 6; ++c) {
      const double v = result.components.at(i, c);
      if (std::fabs(v) > 1e-12) {
        CHECK(v > 0.0);
        break;
      }
    }
  }
  CHECK(std::is_sorted(result.explained_variance_ratio.rbegin(),
                       result.explained_variance_ratio.rend()));
  for (double r : result.explained_variance_ratio) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }

  Matrix shifted = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) shifted.at(i, j) += 100.0 + 3.0 * static_cast<double>(j);
  }
  const PcaResult moved = pca_project(shifted, 3, 4);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(moved.coordinates.at(i, c) ==
            doctest::Approx(result.coordinates.at(i, c)).epsilon(1e-7));
    }
  }
}

TEST_CASE("histogram bins are left-closed over [-1,1]") {
  CHECK(similarity_histogram_bin(-1.0) == 0);
  CHECK(similarity_histogram_bin(-1.0 + 1.0 / 16.0) == 1);
  CHECK(similarity_histogram_bin(0.0) == 16);
  CHECK(similarity_histogram_bin(1.0) == 31);  // top edge folds into the last bin
  CHECK(similarity_histogram_bin(0.999) == 31);
  CHECK(similarity_histogram_bin(-0.999) == 0);
}

namespace {
// Tiny deterministic encoder fixture: two-token vocab with a hand-set
// orthonormal embedding table and no layers, so cosine values are exact.
struct ToyEncoder {
  Vocab vocab = Vocab::build({"xx yy"}, 1);
  EncoderParams params;
  ToyEncoder() {
    EncoderConfig cfg;
    cfg.vocab_size = vocab.size();
    cfg.d_model = 4;
    cfg.n_layers = 0;
    cfg.n_heads = 1;
    cfg.d_ff = 4;
    cfg.max_len = 8;
    params = init_params(cfg);
    auto& table = params.registry.at("embedding").values;
    std::fill(table.begin(), table.end(), 0.0);
    // id 2 ("xx") -> e0, id 3 ("yy") -> e1
    table[2 * 4 + 0] = 1.0;
    table[3 * 4 + 1] = 1.0;
  }
};
}  // namespace

TEST_CASE("similarity_report on identical and orthogonal toy pairs") {
  const ToyEncoder toy;
  const SentenceEncoder enc(toy.params, toy.vocab);

  PairDataset same, random;
  same.kind = random.kind = PairKind::kCaption;
  same.pairs = {{"xx", "xx"}};
  random.pairs = {{"xx", "yy"}};
  const SimilarityReport report = similarity_report(enc, same, random);
  CHECK(report.mean_same == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.mean_random == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.margin == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report.n_same == 1);
  CHECK(report.n_random == 1);
  CHECK(report.hist_same[31] == 1);
  CHECK(report.hist_random[16] == 1);
  CHECK(report.margin == report.mean_same - report.mean_random);
}

TEST_CASE("similarity_report mean pairs both sides of identical strings at 1.0") {
  const ToyEncoder toy;
  const SentenceEncoder enc(toy.params, toy.vocab);
  PairDataset same, random;
  same.kind = random.kind = PairKind::kCaption;
  for (int i = 0; i < 5; ++i) same.pairs.push_back({"xx yy", "xx yy"});
  random.pairs = {{"xx", "yy"}, {"yy", "xx"}};
  const SimilarityReport report = similarity_report(enc, same, random);
  CHECK(report.mean_same == doctest::Approx(1.0).epsilon(1e-12));

  // Margin is invariant under permuting pair order within each group.
  PairDataset random_perm = random;
  std::swap(random_perm.pairs[0], random_perm.pairs[1]);
  const SimilarityReport permuted = similarity_report(enc, same, random_perm);
  CHECK(permuted.margin == doctest::Approx(report.margin).epsilon(1e-12));
}

TEST_CASE("embed_file writes one CSV row per sentence and round-trips through pca") {
  const auto dir = temp_dir();
  const ToyEncoder toy;
  const SentenceEncoder enc(toy.params, toy.vocab);

  std::string input;
  for (int i = 0; i < 10; ++i) input += (i % 2 == 0 ? "xx yy\n" : "yy\n");
  input += "\n";  // skipped
  atomic_write_file(dir / "sentences.txt", input);

  const EmbedFileResult result = embed_file(enc, dir / "sentences.txt", dir / "emb.csv");
  CHECK(result.written == 10);
  CHECK(result.skipped_empty == 1);

  const auto lines = split_lines(read_text_file(dir / "emb.csv"));
  REQUIRE(lines.size() == 11);  // header + 10 rows
  CHECK(lines[0] == "index,v0,v1,v2,v3");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 4);  // d+1 fields
  }
  // duplicate sentences embed identically (compare past the index column)
  CHECK(lines[1].substr(lines[1].find(',')) == lines[3].substr(lines[3].find(',')));

  // PCA over the file equals PCA over the in-memory matrix.
  const Matrix from_file = read_embedding_csv(dir / "emb.csv");
  std::vector<std::string> sentences;
  for (int i = 0; i < 10; ++i) sentences.push_back(i % 2 == 0 ? "xx yy" : "yy");
  const Matrix in_memory = enc.encode(sentences);
  const PcaResult a = pca_project(from_file, 2, 5);
  const PcaResult b = pca_project(in_memory, 2, 5);
  for (std::size_t i = 0; i < a.coordinates.rows; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(a.coordinates.at(i, c) == doctest::Approx(b.coordinates.at(i, c)).epsilon(1e-9));
    }
  }
}

TEST_CASE("pca coordinate csv uses the documented x,y header") {
  const Matrix x = random_matrix(4, 3, 2);
  const PcaResult result = pca_project(x, 2, 0);
  const auto lines = split_lines(result.coordinates_csv());
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "index,x,y");
}
