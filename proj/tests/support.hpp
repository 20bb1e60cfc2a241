#pragma once

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adaspan/error.hpp"
#include "adaspan/rng.hpp"
#include "adaspan/tensor.hpp"

namespace testing {

template <typename F>
std::optional<adaspan::ErrorCode> error_of(F&& f) {
  try {
    f();
  } catch (const adaspan::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

#define CHECK_ERROR(expr, code_)                                                  \
  do {                                                                            \
    const auto got_ = ::testing::error_of([&]() { (void)(expr); });               \
    REQUIRE_MESSAGE(got_.has_value(), "expected " << adaspan::to_string(code_));  \
    CHECK(adaspan::to_string(*got_) == adaspan::to_string(code_));                \
  } while (0)

inline adaspan::Tensor64 random64(adaspan::Shape shape, adaspan::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  adaspan::Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline adaspan::Tensor64 t64(adaspan::Shape shape, std::vector<double> values) {
  return adaspan::Tensor64(std::move(shape), std::move(values));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("adaspan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
