#include "ecpr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ecpr {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

double bce_loss(int y, double p) {
  if (!(p >= 0.0 && p <= 1.0))
    throw std::domain_error("bce_loss: probability " + std::to_string(p) + " outside [0,1]");
  const double pc = clamp_prob(p);
  return y ? -std::log(pc) : -std::log(1.0 - pc);
}

double bce_grad(int y, double p) {
  if (p <= kProbEps || p >= 1.0 - kProbEps) return 0.0;
  return y ? -1.0 / p : 1.0 / (1.0 - p);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double softmax_xent_loss(int label, std::span<const double> logits) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::out_of_range("softmax_xent_loss: label index " + std::to_string(label));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::log(sum) - (logits[label] - mx);
}

std::vector<double> softmax_xent_grad(int label, std::span<const double> logits) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::out_of_range("softmax_xent_grad: label index " + std::to_string(label));
  std::vector<double> g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

namespace {

void check_mul_shapes(int ak, int bk, const Tensor2D& a, const Tensor2D& b, const char* what) {
  if (ak != bk)
    throw std::invalid_argument(std::string(what) + ": inner dimensions differ, " +
                                a.shape_str() + " vs " + b.shape_str());
}

void check_out_shape(const Tensor2D& out, int r, int c, const char* what) {
  if (out.rows != r || out.cols != c)
    throw std::invalid_argument(std::string(what) + ": output shape " + out.shape_str() +
                                " does not match [" + std::to_string(r) + " x " +
                                std::to_string(c) + "]");
}

}  // namespace

void matmul(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate) {
  check_mul_shapes(a.cols, b.rows, a, b, "matmul");
  check_out_shape(out, a.rows, b.cols, "matmul");
  if (!accumulate) out.fill(0.0);
  const int m = a.rows, k = a.cols, n = b.cols;
  for (int i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<size_t>(p) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_transa(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate) {
  check_mul_shapes(a.rows, b.rows, a, b, "matmul_transa");
  check_out_shape(out, a.cols, b.cols, "matmul_transa");
  if (!accumulate) out.fill(0.0);
  const int k = a.rows, m = a.cols, n = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* arow = &a.data[static_cast<size_t>(p) * m];
    const double* brow = &b.data[static_cast<size_t>(p) * n];
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = &out.data[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_transb(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate) {
  check_mul_shapes(a.cols, b.cols, a, b, "matmul_transb");
  check_out_shape(out, a.rows, b.rows, "matmul_transb");
  if (!accumulate) out.fill(0.0);
  const int m = a.rows, k = a.cols, n = b.rows;
  for (int i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i) * k];
    double* orow = &out.data[static_cast<size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const double* brow = &b.data[static_cast<size_t>(j) * k];
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      orow[j] += acc;
    }
  }
}

void affine_forward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b, Tensor2D& out) {
  if (x.cols != w.rows)
    throw std::invalid_argument("affine_forward: x " + x.shape_str() + " incompatible with w " +
                                w.shape_str());
  if (b.rows != 1 || b.cols != w.cols)
    throw std::invalid_argument("affine_forward: bias " + b.shape_str() + " must be [1 x " +
                                std::to_string(w.cols) + "]");
  if (!out.same_shape(Tensor2D(x.rows, w.cols))) out = Tensor2D(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i)
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<size_t>(i) * w.cols);
  matmul(x, w, out, /*accumulate=*/true);
}

void affine_backward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& d_out,
                     Tensor2D* dx, Tensor2D* dw, Tensor2D* db) {
  if (d_out.rows != x.rows || d_out.cols != w.cols)
    throw std::invalid_argument("affine_backward: d_out " + d_out.shape_str() +
                                " incompatible with x " + x.shape_str() + " and w " +
                                w.shape_str());
  if (dx) matmul_transb(d_out, w, *dx, /*accumulate=*/true);
  if (dw) matmul_transa(x, d_out, *dw, /*accumulate=*/true);
  if (db) {
    for (int i = 0; i < d_out.rows; ++i)
      for (int j = 0; j < d_out.cols; ++j) (*db)(0, j) += d_out(i, j);
  }
}

void relu_inplace(Tensor2D& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Tensor2D& activated, Tensor2D& d) {
  for (size_t i = 0; i < d.data.size(); ++i)
    if (activated.data[i] <= 0.0) d.data[i] = 0.0;
}

void adam_step(ParameterSet& params, AdamState& state) {
  const AdamConfig& c = state.config;
  const int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto [it, inserted] = state.moments.try_emplace(name);
    if (inserted) {
      it->second.value = Tensor2D(p.value.rows, p.value.cols);
      it->second.grad = Tensor2D(p.value.rows, p.value.cols);
    }
    Tensor2D& m = it->second.value;
    Tensor2D& v = it->second.grad;
    if (!m.same_shape(p.value))
      throw std::runtime_error("adam_step: moment shape drift for '" + name + "'");
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
      m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * g;
      v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.value.data[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
  state.step = t;
}

std::map<std::string, Tensor2D> finite_diff_errors(
    ParameterSet& params, const std::function<double(bool want_grad)>& eval, double step) {
  params.zero_grads();
  const double base = eval(/*want_grad=*/true);
  if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");

  std::map<std::string, Tensor2D> analytic;
  for (auto& [name, p] : params) analytic.emplace(name, p.grad);

  std::map<std::string, Tensor2D> errors;
  for (auto& [name, p] : params) {
    const Tensor2D& ga = analytic.at(name);
    Tensor2D err(p.value.rows, p.value.cols);
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const double lp = eval(/*want_grad=*/false);
      p.value.data[i] = saved - step;
      const double lm = eval(/*want_grad=*/false);
      p.value.data[i] = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw std::runtime_error("finite_diff_check: non-finite loss at '" + name + "'");
      const double gfd = (lp - lm) / (2.0 * step);
      const double gan = ga.data[i];
      err.data[i] = std::abs(gan - gfd) / std::max(1e-8, std::abs(gan) + std::abs(gfd));
    }
    errors.emplace(name, std::move(err));
  }
  return errors;
}

GradCheckResult finite_diff_check(ParameterSet& params,
                                  const std::function<double(bool want_grad)>& eval,
                                  double step) {
  const std::map<std::string, Tensor2D> errors = finite_diff_errors(params, eval, step);
  GradCheckResult res;
  for (const auto& [name, err] : errors) {
    for (size_t i = 0; i < err.data.size(); ++i) {
      ++res.checked;
      if (err.data[i] > res.max_rel_error) {
        res.max_rel_error = err.data[i];
        res.worst_param = name;
        res.worst_index = static_cast<int>(i);
      }
    }
  }
  return res;
}

}  // namespace ecpr
