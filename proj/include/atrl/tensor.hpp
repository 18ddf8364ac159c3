#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atrl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major f64 tensor. A Tensor is a shared handle: copies alias the
// same storage (which is what lets backward closures write gradients the
// caller can see); clone() makes a deep copy. The gradient buffer is
// allocated on first access and accumulates until zero_grad().
class Tensor {
 public:
  Tensor() : d_(std::make_shared<Data>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    std::size_t n = shape_numel(shape);
    t.d_->shape = std::move(shape);
    t.d_->values.assign(n, 0.0);
    return t;
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.d_->values.begin(), t.d_->values.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
      throw Error("tensor shape " + shape_str(shape) + " wants " +
                  std::to_string(shape_numel(shape)) + " values, got " +
                  std::to_string(values.size()));
    }
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t numel() const { return d_->values.size(); }

  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }

  double item() const {
    if (numel() != 1) {
      throw Error("item() needs a one-element tensor, shape is " +
                  shape_str(shape()));
    }
    return d_->values[0];
  }

  bool tracked() const { return d_->tracked; }
  Tensor& set_tracked(bool on = true) {
    d_->tracked = on;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }

  std::vector<double>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
  }

  const std::vector<double>& grad() const {
    return const_cast<Tensor*>(this)->grad();
  }

  void zero_grad() {
    std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->tracked = d_->tracked;
    return t;
  }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool tracked = false;
  };
  std::shared_ptr<Data> d_;
};

}  // namespace atrl
