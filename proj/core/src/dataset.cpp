#include "sparsefront/dataset.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sparsefront/error.hpp"

namespace sparsefront {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  require(bytes.size() >= offset + 4, ErrorKind::TruncatedFile,
          path.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

std::uint64_t Dataset::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv1a(h, images.data(), static_cast<std::size_t>(images.size()) * sizeof(float));
  for (int label : labels) {
    const auto v = static_cast<std::int32_t>(label);
    fnv1a(h, &v, sizeof(v));
  }
  return h;
}

Dataset load_mnist(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path, std::string split) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  require(read_be32(img, 0, images_path) == kImageMagic, ErrorKind::BadMagic,
          images_path.string() + ": bad image magic");
  require(read_be32(lab, 0, labels_path) == kLabelMagic, ErrorKind::BadMagic,
          labels_path.string() + ": bad label magic");
  const std::uint32_t count = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t label_count = read_be32(lab, 4, labels_path);
  require(rows == 28 && cols == 28, ErrorKind::UnsupportedShape,
          images_path.string() + ": expected 28x28 images");
  require(count == label_count, ErrorKind::CountMismatch,
          "image count " + std::to_string(count) + " != label count " +
              std::to_string(label_count));
  const std::size_t pixels = std::size_t{rows} * cols;
  require(img.size() >= 16 + std::size_t{count} * pixels, ErrorKind::TruncatedFile,
          images_path.string() + ": truncated pixel data");
  require(lab.size() >= 8 + std::size_t{count}, ErrorKind::TruncatedFile,
          labels_path.string() + ": truncated label data");

  Dataset ds;
  ds.rows = rows;
  ds.cols = cols;
  ds.split = std::move(split);
  ds.images.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(count));
  const unsigned char* src = img.data() + 16;
  for (std::size_t i = 0; i < count; ++i) {
    float* dst = ds.images.col(static_cast<Eigen::Index>(i)).data();
    for (std::size_t p = 0; p < pixels; ++p) dst[p] = static_cast<float>(src[i * pixels + p]) / 255.0f;
  }
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = lab[8 + i];
    require(label <= 9, ErrorKind::InvalidLabel, labels_path.string() + ": label out of range");
    ds.labels[i] = label;
  }
  return ds;
}

Dataset load_mnist_split(const std::filesystem::path& root, const std::string& split) {
  return load_mnist(root / (split + "-images-idx3-ubyte"), root / (split + "-labels-idx1-ubyte"),
                    split);
}

Dataset select_pair(const Dataset& ds, int d1, int d2) {
  require(d1 != d2, ErrorKind::InvalidArgument, "select_pair needs two distinct digits");
  std::vector<Eigen::Index> keep;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] == d1) ++n1;
    if (ds.labels[i] == d2) ++n2;
    if (ds.labels[i] == d1 || ds.labels[i] == d2) keep.push_back(static_cast<Eigen::Index>(i));
  }
  require(n1 > 0 && n2 > 0, ErrorKind::EmptyClass,
          "digit pair (" + std::to_string(d1) + ", " + std::to_string(d2) + ") has an empty class");
  Dataset out;
  out.rows = ds.rows;
  out.cols = ds.cols;
  out.split = ds.split;
  out.pair = std::make_pair(d1, d2);
  out.images.resize(ds.images.rows(), static_cast<Eigen::Index>(keep.size()));
  out.labels.reserve(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    out.images.col(static_cast<Eigen::Index>(j)) = ds.images.col(keep[j]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(keep[j])] == d1 ? 0 : 1);
  }
  return out;
}

Dataset head(const Dataset& ds, std::size_t count) {
  if (count >= ds.size()) return ds;
  Dataset out = ds;
  out.images = ds.images.leftCols(static_cast<Eigen::Index>(count));
  out.labels.resize(count);
  return out;
}

std::filesystem::path data_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("SPARSEFRONT_DATA"); env != nullptr && *env != '\0') {
    return env;
  }
  return fallback;
}

}  // namespace sparsefront
