#pragma once

#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "sparsefront/dataset.hpp"

namespace sparsefront::testing {

inline std::filesystem::path mnist_dir() {
  if (const char* env = std::getenv("SPARSEFRONT_DATA")) return env;
  return SPARSEFRONT_TEST_DATA;
}

inline bool have_mnist() { return std::filesystem::exists(mnist_dir() / "t10k-images-idx3-ubyte"); }

}  // namespace sparsefront::testing

#define REQUIRE_MNIST()                                                   \
  do {                                                                    \
    if (!::sparsefront::testing::have_mnist()) GTEST_SKIP() << "no MNIST"; \
  } while (0)
