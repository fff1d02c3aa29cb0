#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace biembed {

// Word-level vocabulary with two reserved ids. Immutable after build.
class Vocab {
 public:
  static constexpr std::size_t kPadId = 0;
  static constexpr std::size_t kUnkId = 1;

  // Tokens with corpus frequency >= min_freq get ids from 2 upward, ordered by
  // descending frequency with lexicographic tie-break. Deterministic.
  static Vocab build(const std::vector<std::string>& corpus, std::size_t min_freq);

  std::size_t id_of(const std::string& token) const;  // kUnkId when absent
  const std::string& token_of(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  std::size_t min_freq() const { return min_freq_; }

  // One token per line, line number = id - 2; PAD/UNK are implied.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  Vocab() = default;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t min_freq_ = 1;
};

struct TokenizedBatch {
  std::size_t batch = 0;
  std::size_t time = 0;
  std::vector<std::size_t> ids;  // row-major [batch, time], PAD-filled
  std::vector<double> mask;      // row-major [batch, time], 1.0 for real tokens

  std::size_t id_at(std::size_t b, std::size_t t) const { return ids[b * time + t]; }
  double mask_at(std::size_t b, std::size_t t) const { return mask[b * time + t]; }
};

// Lowercases, composes combining marks (NFC over the Latin repertoire; other
// scripts pass through unchanged), and splits on ASCII whitespace. Turkish
// dotted/dotless-i casing uses the simple one-to-one mapping.
std::vector<std::string> tokenize_text(const std::string& sentence);

// Maps sentences to padded id/mask matrices. Tokens beyond max_len are
// dropped; unknown tokens map to UNK. A sentence that is empty after trimming
// is an error.
TokenizedBatch tokenize_batch(const Vocab& vocab, const std::vector<std::string>& sentences,
                              std::size_t max_len);

// Batches externally tokenized id sequences (ingestion path for users who
// bring their own tokenizer). Every id must be < vocab_size.
TokenizedBatch batch_from_ids(const std::vector<std::vector<std::size_t>>& sequences,
                              std::size_t max_len, std::size_t vocab_size);

// File format: one sentence per line, space-separated decimal ids.
std::vector<std::vector<std::size_t>> read_pretokenized_file(const std::filesystem::path& path);

}  // namespace biembed
