#include "faultdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace faultdet {

namespace {
std::int64_t g_current = 0;
std::int64_t g_peak = 0;
}  // namespace

std::int64_t MemStats::current() { return g_current; }
std::int64_t MemStats::peak() { return g_peak; }
void MemStats::reset_peak() { g_peak = g_current; }
void MemStats::add(std::int64_t delta) {
  g_current += delta;
  if (g_current > g_peak) g_peak = g_current;
}

Shape::Shape(std::initializer_list<int> dims) {
  if (dims.size() > 4) throw ConfigError("Shape: rank > 4 not supported");
  for (int d : dims) {
    if (d <= 0) throw ConfigError("Shape: nonpositive dimension " + std::to_string(d));
    dims_[static_cast<std::size_t>(rank_++)] = d;
  }
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<std::size_t>(i)];
  return n;
}

bool Shape::operator==(const Shape& o) const {
  if (rank_ != o.rank_) return false;
  for (int i = 0; i < rank_; ++i)
    if (dims_[static_cast<std::size_t>(i)] != o.dims_[static_cast<std::size_t>(i)]) return false;
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << dims_[static_cast<std::size_t>(i)];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::full(const Shape& s, double v) {
  Tensor t(s);
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t{Shape::scalar()};
  t.data_.assign(1, v);
  return t;
}

Tensor Tensor::from(const Shape& s, std::initializer_list<double> vals) {
  Tensor t(s);
  if (static_cast<std::int64_t>(vals.size()) != t.numel())
    throw ConfigError("Tensor::from: element count mismatch for shape " + s.str());
  std::copy(vals.begin(), vals.end(), t.data_.begin());
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("Tensor::item on tensor of shape " + shape_.str());
  return data_[0];
}


}  // namespace faultdet
