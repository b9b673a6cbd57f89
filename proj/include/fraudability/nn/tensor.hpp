#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "fraudability/common.hpp"

namespace fraudability::nn {

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

inline constexpr std::align_val_t kBufferAlign{64};

/// Per-thread cache of freed buffers keyed by byte size. A tape allocates
/// and releases the same shapes on every pass; recycling keeps those blocks
/// out of mmap/munmap and page faults.
class BlockCache {
 public:
  static constexpr std::size_t kMinBytes = std::size_t{16} << 10;
  static constexpr std::size_t kMaxHeld = std::size_t{512} << 20;

  ~BlockCache() {
    dead() = true;
    for (auto& [bytes, blocks] : free_)
      for (void* p : blocks) ::operator delete(p, kBufferAlign);
  }

  void* take(std::size_t bytes) {
    auto it = free_.find(bytes);
    if (it == free_.end() || it->second.empty()) return nullptr;
    void* p = it->second.back();
    it->second.pop_back();
    held_ -= bytes;
    return p;
  }

  bool give(void* p, std::size_t bytes) {
    if (held_ + bytes > kMaxHeld) return false;
    free_[bytes].push_back(p);
    held_ += bytes;
    return true;
  }

  // Trivially destructible, so still readable while statics are torn down.
  static bool& dead() {
    thread_local bool d = false;
    return d;
  }

 private:
  std::unordered_map<std::size_t, std::vector<void*>> free_;
  std::size_t held_ = 0;
};

inline BlockCache* block_cache() {
  if (BlockCache::dead()) return nullptr;
  thread_local BlockCache cache;
  return &cache;
}

}  // namespace detail

/// Allocator with a fixed 64-byte alignment. Eigen's vectorized kernels peel
/// differently depending on buffer alignment, which changes rounding; fixed
/// alignment keeps results bit-identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign = detail::kBufferAlign;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    if (bytes >= detail::BlockCache::kMinBytes)
      if (auto* c = detail::block_cache())
        if (void* p = c->take(bytes)) return static_cast<T*>(p);
    return static_cast<T*>(::operator new(bytes, kAlign));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    const std::size_t bytes = n * sizeof(T);
    if (bytes >= detail::BlockCache::kMinBytes)
      if (auto* c = detail::block_cache()) {
        try {
          if (c->give(p, bytes)) return;
        } catch (...) {
        }
      }
    ::operator delete(p, kAlign);
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

inline std::vector<double> to_vector(const Buffer& b) { return {b.begin(), b.end()}; }

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  Buffer values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0) : shape(std::move(s)), values(count(shape), fill) {}
  Tensor(std::vector<std::size_t> s, const std::vector<double>& v) : shape(std::move(s)), values(v.begin(), v.end()) {
    require(values.size() == count(shape), ErrorCategory::shape, "tensor: value count does not match shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : values.size(); }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  MatrixMap mat() { return {values.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())}; }
  ConstMatrixMap mat() const {
    return {values.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  bool finite() const { return all_finite(values); }
  bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "x" : "") + std::to_string(t.shape[i]);
  return s + "]";
}

}  // namespace fraudability::nn
