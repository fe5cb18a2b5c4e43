#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "affordsplat/core/errors.hpp"

namespace affordsplat::core {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Always contiguous; rank is the shape length.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}

  Tensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
      throw ArgumentError("tensor data size does not match shape " +
                          shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::int64_t dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ArgumentError("tensor dim index out of range");
    return shape_[static_cast<std::size_t>(i)];
  }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& vec() { return data_; }
  const std::vector<S>& vec() const { return data_; }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  S& at(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * dim(1) + j)];
  }
  const S& at(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * dim(1) + j)];
  }
  S& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  const S& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  S& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[static_cast<std::size_t>(
        ((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }
  const S& at(std::int64_t i, std::int64_t j, std::int64_t k,
              std::int64_t l) const {
    return data_[static_cast<std::size_t>(
        ((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ArgumentError("reshape " + shape_str(shape_) + " -> " +
                          shape_str(s) + " changes element count");
    return Tensor(std::move(s), data_);
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i)
      out[i] = static_cast<T>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  Shape shape_;
  std::vector<S> data_;
};

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ArgumentError("shapes " + shape_str(a) + " and " + shape_str(b) +
                          " are not broadcastable");
    out[r - 1 - i] = std::max(da, db);
  }
  return out;
}

// Row-major strides with 0 on broadcast axes, padded to `out_rank`.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in,
                                                   const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t ax_in = in.size() - 1 - i;
    const std::size_t ax_out = out.size() - 1 - i;
    strides[ax_out] = (in[ax_in] == 1 && out[ax_out] != 1) ? 0 : stride;
    stride *= in[ax_in];
  }
  return strides;
}

// Calls fn(out_linear, a_linear, b_linear) for every element of the
// broadcast result shape.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b,
                        Fn&& fn) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::int64_t n = shape_numel(out);
  const int r = static_cast<int>(out.size());
  std::vector<std::int64_t> idx(out.size(), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t lin = 0; lin < n; ++lin) {
    fn(lin, ia, ib);
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[static_cast<std::size_t>(ax)]++;
      ia += sa[static_cast<std::size_t>(ax)];
      ib += sb[static_cast<std::size_t>(ax)];
      if (idx[static_cast<std::size_t>(ax)] < out[static_cast<std::size_t>(ax)])
        break;
      ia -= sa[static_cast<std::size_t>(ax)] * out[static_cast<std::size_t>(ax)];
      ib -= sb[static_cast<std::size_t>(ax)] * out[static_cast<std::size_t>(ax)];
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }
}

}  // namespace affordsplat::core
