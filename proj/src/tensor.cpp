#include "ecpr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ecpr {

Tensor2D Tensor2D::from(std::initializer_list<std::initializer_list<double>> rows_in) {
  Tensor2D t(static_cast<int>(rows_in.size()),
             rows_in.size() ? static_cast<int>(rows_in.begin()->size()) : 0);
  int r = 0;
  for (const auto& row : rows_in) {
    if (static_cast<int>(row.size()) != t.cols)
      throw std::invalid_argument("Tensor2D::from: ragged rows");
    int c = 0;
    for (double v : row) t(r, c++) = v;
    ++r;
  }
  return t;
}

void Tensor2D::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Tensor2D::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor2D::shape_str() const {
  return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]";
}

Param& ParameterSet::add(const std::string& name, Tensor2D init) {
  auto [it, inserted] = items_.try_emplace(name);
  if (!inserted) throw std::invalid_argument("ParameterSet: duplicate parameter '" + name + "'");
  it->second.grad = Tensor2D(init.rows, init.cols);
  it->second.value = std::move(init);
  return it->second;
}

Param& ParameterSet::at(const std::string& name) {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::invalid_argument("ParameterSet: unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParameterSet::at(const std::string& name) const {
  auto it = items_.find(name);
  if (it == items_.end()) throw std::invalid_argument("ParameterSet: unknown parameter '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grads() {
  for (auto& [name, p] : items_) p.grad.fill(0.0);
}

size_t ParameterSet::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, p] : items_) n += p.value.size();
  return n;
}

}  // namespace ecpr
