#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "faultdet/common.hpp"

namespace faultdet {

// Running tally of live tensor bytes. The peak value is what the trainer and
// the inference path compare when reporting activation memory.
struct MemStats {
  static std::int64_t current();
  static std::int64_t peak();
  static void reset_peak();
  static void add(std::int64_t delta);
};

template <class T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) {}
  T* allocate(std::size_t n) {
    MemStats::add(static_cast<std::int64_t>(n * sizeof(T)));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) {
    MemStats::add(-static_cast<std::int64_t>(n * sizeof(T)));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const TrackingAllocator<U>&) const {
    return true;
  }
};

using DVec = std::vector<double, TrackingAllocator<double>>;

// Dense row-major shape, rank 0..4. Rank 0 is a scalar with one element.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);
  static Shape scalar() { return Shape(); }

  int rank() const { return rank_; }
  int operator[](int i) const { return dims_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const;
  bool operator==(const Shape& o) const;
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;

 private:
  std::array<int, 4> dims_{};
  int rank_ = 0;
};

// Plain value-semantics dense tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(const Shape& s) : shape_(s), data_(static_cast<std::size_t>(s.numel()), 0.0) {}

  static Tensor zeros(const Shape& s) { return Tensor(s); }
  static Tensor full(const Shape& s, double v);
  static Tensor scalar(double v);
  static Tensor from(const Shape& s, std::initializer_list<double> vals);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool defined() const { return !data_.empty() || shape_.rank() == 0; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Indexed access for ranks 1..4; no bounds checks in release builds.
  double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  double& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(double v);
  bool all_finite() const;
  double item() const;  // requires numel == 1

 private:
  Shape shape_;
  DVec data_;
};

}  // namespace faultdet
