#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ecpr/tensor.hpp"

namespace ecpr {

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
constexpr double kProbEps = 1e-7;

double sigmoid(double x);
double clamp_prob(double p);

// -y log(p) - (1-y) log(1-p) with p clamped first. Throws std::domain_error
// if p lies outside [0, 1] before clamping.
double bce_loss(int y, double p);
// d bce / d p. Zero where the clamp is active, matching finite differences.
double bce_grad(int y, double p);

std::vector<double> softmax(std::span<const double> logits);
double softmax_xent_loss(int label, std::span<const double> logits);
// d loss / d logits = softmax(logits) - onehot(label).
std::vector<double> softmax_xent_grad(int label, std::span<const double> logits);

// out [+]= a * b, with a [m x k], b [k x n].
void matmul(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate);
// out [+]= a^T * b, with a [k x m], b [k x n].
void matmul_transa(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate);
// out [+]= a * b^T, with a [m x k], b [n x k].
void matmul_transb(const Tensor2D& a, const Tensor2D& b, Tensor2D& out, bool accumulate);

// out = x*w + b with b broadcast over rows of x.
void affine_forward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b, Tensor2D& out);
// Accumulates dx += d_out*w^T, dw += x^T*d_out, db += column sums of d_out.
// Any of the outputs may be null to skip it.
void affine_backward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& d_out,
                     Tensor2D* dx, Tensor2D* dw, Tensor2D* db);

void relu_inplace(Tensor2D& t);
// d_pre = d_post masked by activated > 0 (activated is the relu output).
void relu_backward(const Tensor2D& activated, Tensor2D& d);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  int64_t step = 0;  // number of completed updates
  std::map<std::string, Param> moments;  // value = first moment, grad = second
};

// One Adam update over every parameter, reading gradients from the set.
// Throws std::runtime_error naming the parameter on a non-finite gradient.
void adam_step(ParameterSet& params, AdamState& state);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  size_t checked = 0;
};

// Central-difference gradient check. eval(true) must return the loss and fill
// params gradients; eval(false) must return the loss without touching them.
// The callable has to be deterministic (stochastic gates freeze their draws).
GradCheckResult finite_diff_check(ParameterSet& params,
                                  const std::function<double(bool want_grad)>& eval,
                                  double step = 1e-5);

// Per-coordinate relative errors of the same check, keyed by parameter name.
std::map<std::string, Tensor2D> finite_diff_errors(
    ParameterSet& params, const std::function<double(bool want_grad)>& eval,
    double step = 1e-5);

}  // namespace ecpr
