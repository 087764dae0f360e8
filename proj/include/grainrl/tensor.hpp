#pragma once

// Minimal reverse-mode autodiff over dense 2-D double matrices, plus the
// parameter store, Adam optimizer, finite-difference gradient checker, and
// checkpoint container shared by the reward model and the policy.
//
// Graphs are define-by-run: each training step records ops on a fresh Tape
// and calls backward once on a scalar loss node. 64-bit floats throughout.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "grainrl/errors.hpp"
#include "grainrl/rng.hpp"

namespace grainrl {

// Numerically stable sigma(z) = 1/(1+exp(-z)); for z<0 via exp(z)/(1+exp(z)).
double logistic_scalar(double z);

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> data;  // row-major

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
  static Mat scalar(double v) {
    Mat m(1, 1);
    m.data[0] = v;
    return m;
  }
  static Mat from_rows(int r, int c, std::vector<double> values);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  double item() const;  // 1x1 only; throws ShapeMismatch otherwise
  bool all_finite() const;
};

Mat transpose(const Mat& m);

// Node handle on a Tape.
using NodeId = int;

// Records a forward computation and runs exact reverse-mode on it. Every
// node carries a gradient buffer; parameter leaves are remembered by name so
// backward() can return a per-parameter gradient map.
class Tape {
 public:
  // Leaves. constant() rejects nonfinite input; param() copies the current
  // value from the store and tags the node with the parameter's name.
  NodeId constant(Mat value);
  NodeId param(const class ParamStore& store, const std::string& name);

  // Elementwise (strict same-shape except where noted).
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_rowvec(NodeId x, NodeId b);  // b is 1 x cols, broadcast over rows
  NodeId affine(NodeId a, double scale, double shift = 0.0);
  NodeId tanh_(NodeId a);
  NodeId logistic(NodeId a);  // stable sigma; for z<0 via exp(z)/(1+exp(z))
  NodeId softplus(NodeId a);  // stable log(1+exp(x))
  NodeId exp_(NodeId a);
  NodeId minimum(NodeId a, NodeId b);  // ties take a's branch
  NodeId clip(NodeId a, double lo, double hi);

  // Linear algebra / shaping.
  NodeId matmul(NodeId a, NodeId b);
  NodeId concat_cols(const std::vector<NodeId>& parts);  // hstack, equal rows
  NodeId gather_rows(NodeId table, std::vector<int> rows);  // embedding lookup
  NodeId segment_mean_rows(NodeId x, std::vector<int> segment_of_row, int n_segments);
  NodeId take_per_row(NodeId x, std::vector<int> col_of_row);  // N x V -> N x 1
  NodeId log_softmax_rows(NodeId x);

  // Reductions.
  NodeId sum_all(NodeId a);   // -> 1x1
  NodeId mean_all(NodeId a);  // -> 1x1

  // Reverse-mode from a scalar loss. Returns the gradient per parameter name
  // (duplicate param() nodes of one name accumulate). Node gradients remain
  // readable via grad() until the next backward call.
  std::unordered_map<std::string, Mat> backward(NodeId loss);

  const Mat& value(NodeId id) const { return nodes_.at(static_cast<size_t>(id)).value; }
  const Mat& grad(NodeId id) const { return nodes_.at(static_cast<size_t>(id)).grad; }
  double scalar_value(NodeId id) const { return value(id).item(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<NodeId> inputs;
    std::function<void(Tape&, const Node&)> backprop;  // adds into input grads
  };
  NodeId push(Mat value, std::vector<NodeId> inputs,
              std::function<void(Tape&, const Node&)> backprop);
  Mat& grad_ref(NodeId id) { return nodes_[static_cast<size_t>(id)].grad; }

  std::vector<Node> nodes_;
  std::vector<std::pair<NodeId, std::string>> param_nodes_;
};

// Named dense arrays with a global step counter. Creation order is the
// canonical iteration order everywhere (gradient checking, checkpoints) so
// runs are reproducible.
class ParamStore {
 public:
  Mat& create(const std::string& name, int rows, int cols);  // zero-initialized
  // Xavier/Glorot uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)).
  Mat& create_xavier(const std::string& name, int rows, int cols, uint64_t seed);

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }
  Mat& get(const std::string& name);
  const Mat& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t total_size() const;

  int64_t step = 0;

 private:
  std::unordered_map<std::string, Mat> arrays_;
  std::vector<std::string> order_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, lazily created per parameter.
struct AdamState {
  std::unordered_map<std::string, Mat> m, v;
};

// Standard Adam with bias correction; increments params.step and uses it as
// the timestep. Parameters without a gradient entry are left untouched.
// Throws NonFiniteGradient on any nonfinite gradient value.
void adam_step(ParamStore& params, const std::unordered_map<std::string, Mat>& grads,
               AdamState& state, const AdamConfig& config);

// Scales all gradients in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_grad_norm(std::unordered_map<std::string, Mat>& grads, double max_norm);

// Gradient verification: central finite differences (h = 1e-5) against the
// analytic gradients on n_coords randomly chosen parameter coordinates.
// Relative error uses |fd - an| / max(|fd|, |an|, 1e-3); the floor absorbs
// finite-difference roundoff on near-zero coordinates while still exposing
// any real backprop defect, which perturbs gradients at their own scale.
struct GradCheckReport {
  bool passed = false;
  int n_checked = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double tol = 0.0;
};

// fn evaluates the scalar loss at the store's current values; when grads is
// non-null it must also write the analytic gradient map.
using LossFn =
    std::function<double(const ParamStore&, std::unordered_map<std::string, Mat>* grads)>;

GradCheckReport grad_check(const LossFn& fn, ParamStore& params, double tol, uint64_t seed,
                           int n_coords = 64);

// Checkpoint container, version "grainrl-ckpt-v1": text manifest (name,
// shape, offset per array) followed by raw little-endian float64 blocks.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

}  // namespace grainrl
