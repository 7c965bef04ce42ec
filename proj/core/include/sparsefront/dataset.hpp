#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sparsefront {

/// Images stored one per column, row-major 28x28 pixels scaled to [0, 1].
struct Dataset {
  std::size_t rows = 28;
  std::size_t cols = 28;
  Eigen::MatrixXf images;
  std::vector<int> labels;
  std::string split;
  /// Set by select_pair: original digits of the negative / positive class.
  std::optional<std::pair<int, int>> pair;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t pixels() const noexcept { return rows * cols; }
  Eigen::VectorXd image(std::size_t i) const {
    return images.col(static_cast<Eigen::Index>(i)).cast<double>();
  }
  /// FNV-1a over the raw float bytes and labels; stable across runs.
  std::uint64_t checksum() const;
};

/// Parses big-endian IDX files (images magic 0x00000803, labels 0x00000801).
Dataset load_mnist(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path, std::string split = {});

/// Loads the standard `train` or `t10k` files from a directory.
Dataset load_mnist_split(const std::filesystem::path& root, const std::string& split);

/// Keeps digits d1 and d2 and relabels d1 -> 0 (negative), d2 -> 1 (positive).
Dataset select_pair(const Dataset& ds, int d1, int d2);

/// First `count` items (all if count >= size).
Dataset head(const Dataset& ds, std::size_t count);

/// Directory from $SPARSEFRONT_DATA, falling back to `fallback`.
std::filesystem::path data_root(const std::filesystem::path& fallback = "data/mnist");

}  // namespace sparsefront
