#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace biembed {

// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> data);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

// Writes to a temporary sibling file and renames into place, so readers never
// observe a partially written file.
void atomic_write_file(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
void atomic_write_file(const std::filesystem::path& path, const std::string& text);

// Splits text into lines, treating both "\n" and "\r\n" as terminators.
// A trailing newline does not produce an empty final line.
std::vector<std::string> split_lines(const std::string& text);

// Row-major dense matrix used on the non-autodiff side (encodings, PCA).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data).subspan(r * cols, cols);
  }
};

}  // namespace biembed
