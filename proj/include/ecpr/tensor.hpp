#pragma once

#include <initializer_list>
#include <map>
#include <string>
#include <vector>

namespace ecpr {

// Dense row-major matrix of 64-bit floats. All training math runs in double
// so gradient checks are meaningful and runs are reproducible from the seed.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  static Tensor2D zeros(int r, int c) { return Tensor2D(r, c); }
  static Tensor2D from(std::initializer_list<std::initializer_list<double>> rows_in);

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v);
  bool all_finite() const;
  std::string shape_str() const;  // "[r x c]"
};

struct Param {
  Tensor2D value;
  Tensor2D grad;  // same shape as value
};

// Named parameter collection. std::map keeps iteration lexicographic by name,
// which pins the update order and makes runs bit-reproducible.
class ParameterSet {
 public:
  Param& add(const std::string& name, Tensor2D init);
  bool contains(const std::string& name) const { return items_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Tensor2D& value(const std::string& name) { return at(name).value; }
  const Tensor2D& value(const std::string& name) const { return at(name).value; }
  Tensor2D& grad(const std::string& name) { return at(name).grad; }

  void zero_grads();
  size_t count() const { return items_.size(); }
  size_t scalar_count() const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::map<std::string, Param> items_;
};

}  // namespace ecpr
