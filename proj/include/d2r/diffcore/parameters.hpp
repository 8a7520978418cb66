#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstring>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2r::ad {

/// Dense 64-bit matrix. Batched values keep one sample per row.
using Matrix = Eigen::MatrixXd;

inline std::string shape_of(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

/// Named collection of trainable tensors owned by one network.
///
/// Reads may run concurrently; writers (optimizer steps, Polyak updates,
/// checkpoint loads) take the exclusive lock.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other) : names_(other.names_), values_(other.values_) {}
  ParameterStore& operator=(const ParameterStore& other) {
    if (this != &other) {
      names_ = other.names_;
      values_ = other.values_;
    }
    return *this;
  }
  ParameterStore(ParameterStore&& other) noexcept
      : names_(std::move(other.names_)), values_(std::move(other.values_)) {}
  ParameterStore& operator=(ParameterStore&& other) noexcept {
    names_ = std::move(other.names_);
    values_ = std::move(other.values_);
    return *this;
  }

  std::size_t add(std::string name, Matrix value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const Matrix& value(std::size_t i) const { return values_.at(i); }
  Matrix& value(std::size_t i) { return values_.at(i); }
  const std::vector<Matrix>& values() const { return values_; }

  std::size_t element_count() const {
    std::size_t total = 0;
    for (const auto& v : values_) total += static_cast<std::size_t>(v.size());
    return total;
  }

  std::shared_lock<std::shared_mutex> read_lock() const { return std::shared_lock(mutex_); }
  std::unique_lock<std::shared_mutex> write_lock() const { return std::unique_lock(mutex_); }

  /// Bitwise equality of names, shapes and values.
  bool identical(const ParameterStore& other) const {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const auto& a = values_[i];
      const auto& b = other.values_[i];
      if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
      for (Eigen::Index k = 0; k < a.size(); ++k) {
        if (std::memcmp(a.data() + k, b.data() + k, sizeof(double)) != 0) return false;
      }
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  mutable std::shared_mutex mutex_;
};

/// Glorot-uniform weight matrix stored as (fan_in x fan_out), scaled by `gain`.
template <class Rng>
Matrix glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng, double gain = 1.0) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  return w;
}

template <class Rng>
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(rows, cols);
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  return w;
}

}  // namespace d2r::ad
