#include "grainrl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace grainrl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

// ---- Mat ----

Mat Mat::from_rows(int r, int c, std::vector<double> values) {
  if (static_cast<size_t>(r) * static_cast<size_t>(c) != values.size())
    throw ShapeMismatchError("from_rows: value count does not match shape");
  Mat m;
  m.rows = r;
  m.cols = c;
  m.data = std::move(values);
  return m;
}

double Mat::item() const {
  if (rows != 1 || cols != 1) throw ShapeMismatchError("item: matrix is not 1x1");
  return data[0];
}

bool Mat::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

Mat transpose(const Mat& m) {
  Mat out(m.cols, m.rows);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out.at(c, r) = m.at(r, c);
  return out;
}

double logistic_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

Mat matmul_values(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  return out;
}

void add_into(Mat& dst, const Mat& src) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

// ---- Tape ----

NodeId Tape::push(Mat value, std::vector<NodeId> inputs,
                  std::function<void(Tape&, const Node&)> backprop) {
  Node n;
  n.grad = Mat(value.rows, value.cols);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::constant(Mat value) {
  if (!value.all_finite()) throw NonFiniteInputError("constant: nonfinite value");
  return push(std::move(value), {}, nullptr);
}

NodeId Tape::param(const ParamStore& store, const std::string& name) {
  const Mat& v = store.get(name);
  if (!v.all_finite()) throw NonFiniteInputError("param " + name + ": nonfinite value");
  const NodeId id = push(v, {}, nullptr);
  param_nodes_.emplace_back(id, name);
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw ShapeMismatchError("add: shapes differ");
  Mat out = value(a);
  add_into(out, value(b));
  return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
    add_into(t.grad_ref(n.inputs[0]), n.grad);
    add_into(t.grad_ref(n.inputs[1]), n.grad);
  });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw ShapeMismatchError("sub: shapes differ");
  Mat out = value(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= value(b).data[i];
  return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
    add_into(t.grad_ref(n.inputs[0]), n.grad);
    Mat& gb = t.grad_ref(n.inputs[1]);
    for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= n.grad.data[i];
  });
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw ShapeMismatchError("mul: shapes differ");
  Mat out = value(a);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= value(b).data[i];
  return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
    const Mat& va = t.value(n.inputs[0]);
    const Mat& vb = t.value(n.inputs[1]);
    Mat& ga = t.grad_ref(n.inputs[0]);
    Mat& gb = t.grad_ref(n.inputs[1]);
    for (size_t i = 0; i < n.grad.data.size(); ++i) {
      ga.data[i] += n.grad.data[i] * vb.data[i];
      gb.data[i] += n.grad.data[i] * va.data[i];
    }
  });
}

NodeId Tape::add_rowvec(NodeId x, NodeId b) {
  const Mat& vx = value(x);
  const Mat& vb = value(b);
  if (vb.rows != 1 || vb.cols != vx.cols)
    throw ShapeMismatchError("add_rowvec: bias must be 1 x cols");
  Mat out = vx;
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += vb.at(0, c);
  return push(std::move(out), {x, b}, [](Tape& t, const Node& n) {
    add_into(t.grad_ref(n.inputs[0]), n.grad);
    Mat& gb = t.grad_ref(n.inputs[1]);
    for (int r = 0; r < n.grad.rows; ++r)
      for (int c = 0; c < n.grad.cols; ++c) gb.at(0, c) += n.grad.at(r, c);
  });
}

NodeId Tape::affine(NodeId a, double scale, double shift) {
  Mat out = value(a);
  for (double& v : out.data) v = scale * v + shift;
  return push(std::move(out), {a}, [scale](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += scale * n.grad.data[i];
  });
}

NodeId Tape::tanh_(NodeId a) {
  Mat out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  return push(std::move(out), {a}, [](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i) {
      const double y = n.value.data[i];
      ga.data[i] += (1.0 - y * y) * n.grad.data[i];
    }
  });
}

NodeId Tape::logistic(NodeId a) {
  Mat out = value(a);
  for (double& v : out.data) v = logistic_scalar(v);
  return push(std::move(out), {a}, [](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i) {
      const double y = n.value.data[i];
      ga.data[i] += y * (1.0 - y) * n.grad.data[i];
    }
  });
}

NodeId Tape::softplus(NodeId a) {
  Mat out = value(a);
  for (double& v : out.data) v = stable_softplus(v);
  return push(std::move(out), {a}, [](Tape& t, const Node& n) {
    const Mat& x = t.value(n.inputs[0]);
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += logistic_scalar(x.data[i]) * n.grad.data[i];
  });
}

NodeId Tape::exp_(NodeId a) {
  Mat out = value(a);
  for (double& v : out.data) v = std::exp(v);
  return push(std::move(out), {a}, [](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += n.value.data[i] * n.grad.data[i];
  });
}

NodeId Tape::minimum(NodeId a, NodeId b) {
  if (!value(a).same_shape(value(b))) throw ShapeMismatchError("minimum: shapes differ");
  const Mat& va = value(a);
  const Mat& vb = value(b);
  Mat out = va;
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = va.data[i] <= vb.data[i] ? va.data[i] : vb.data[i];
  return push(std::move(out), {a, b}, [](Tape& t, const Node& n) {
    const Mat& va = t.value(n.inputs[0]);
    const Mat& vb = t.value(n.inputs[1]);
    Mat& ga = t.grad_ref(n.inputs[0]);
    Mat& gb = t.grad_ref(n.inputs[1]);
    for (size_t i = 0; i < n.grad.data.size(); ++i) {
      if (va.data[i] <= vb.data[i])
        ga.data[i] += n.grad.data[i];
      else
        gb.data[i] += n.grad.data[i];
    }
  });
}

NodeId Tape::clip(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw ConfigError("clip: lo must not exceed hi");
  Mat out = value(a);
  for (double& v : out.data) v = std::min(std::max(v, lo), hi);
  return push(std::move(out), {a}, [lo, hi](Tape& t, const Node& n) {
    const Mat& x = t.value(n.inputs[0]);
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < ga.data.size(); ++i)
      if (x.data[i] >= lo && x.data[i] <= hi) ga.data[i] += n.grad.data[i];
  });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Mat& va = value(a);
  const Mat& vb = value(b);
  if (va.cols != vb.rows) throw ShapeMismatchError("matmul: inner dimensions differ");
  return push(matmul_values(va, vb), {a, b}, [](Tape& t, const Node& n) {
    const Mat& va = t.value(n.inputs[0]);
    const Mat& vb = t.value(n.inputs[1]);
    add_into(t.grad_ref(n.inputs[0]), matmul_values(n.grad, transpose(vb)));
    add_into(t.grad_ref(n.inputs[1]), matmul_values(transpose(va), n.grad));
  });
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_cols: no inputs");
  const int rows = value(parts[0]).rows;
  int cols = 0;
  for (NodeId p : parts) {
    if (value(p).rows != rows) throw ShapeMismatchError("concat_cols: row counts differ");
    cols += value(p).cols;
  }
  Mat out(rows, cols);
  int base = 0;
  for (NodeId p : parts) {
    const Mat& v = value(p);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < v.cols; ++c) out.at(r, base + c) = v.at(r, c);
    base += v.cols;
  }
  return push(std::move(out), parts, [](Tape& t, const Node& n) {
    int base = 0;
    for (NodeId p : n.inputs) {
      Mat& gp = t.grad_ref(p);
      for (int r = 0; r < gp.rows; ++r)
        for (int c = 0; c < gp.cols; ++c) gp.at(r, c) += n.grad.at(r, base + c);
      base += gp.cols;
    }
  });
}

NodeId Tape::gather_rows(NodeId table, std::vector<int> rows) {
  const Mat& tab = value(table);
  for (int r : rows)
    if (r < 0 || r >= tab.rows) throw ShapeMismatchError("gather_rows: row index out of range");
  Mat out(static_cast<int>(rows.size()), tab.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < tab.cols; ++c) out.at(static_cast<int>(i), c) = tab.at(rows[i], c);
  return push(std::move(out), {table}, [rows = std::move(rows)](Tape& t, const Node& n) {
    Mat& gt = t.grad_ref(n.inputs[0]);
    for (size_t i = 0; i < rows.size(); ++i)
      for (int c = 0; c < gt.cols; ++c) gt.at(rows[i], c) += n.grad.at(static_cast<int>(i), c);
  });
}

NodeId Tape::segment_mean_rows(NodeId x, std::vector<int> segment_of_row, int n_segments) {
  const Mat& vx = value(x);
  if (static_cast<int>(segment_of_row.size()) != vx.rows)
    throw ShapeMismatchError("segment_mean_rows: one segment id per row required");
  std::vector<int> count(static_cast<size_t>(n_segments), 0);
  for (int s : segment_of_row) {
    if (s < 0 || s >= n_segments)
      throw ShapeMismatchError("segment_mean_rows: segment id out of range");
    ++count[static_cast<size_t>(s)];
  }
  for (int c : count)
    if (c == 0) throw ShapeMismatchError("segment_mean_rows: empty segment");
  Mat out(n_segments, vx.cols);
  for (int r = 0; r < vx.rows; ++r) {
    const int s = segment_of_row[static_cast<size_t>(r)];
    for (int c = 0; c < vx.cols; ++c)
      out.at(s, c) += vx.at(r, c) / count[static_cast<size_t>(s)];
  }
  return push(std::move(out), {x},
              [seg = std::move(segment_of_row), count = std::move(count)](Tape& t, const Node& n) {
                Mat& gx = t.grad_ref(n.inputs[0]);
                for (int r = 0; r < gx.rows; ++r) {
                  const int s = seg[static_cast<size_t>(r)];
                  for (int c = 0; c < gx.cols; ++c)
                    gx.at(r, c) += n.grad.at(s, c) / count[static_cast<size_t>(s)];
                }
              });
}

NodeId Tape::take_per_row(NodeId x, std::vector<int> col_of_row) {
  const Mat& vx = value(x);
  if (static_cast<int>(col_of_row.size()) != vx.rows)
    throw ShapeMismatchError("take_per_row: one column index per row required");
  for (int c : col_of_row)
    if (c < 0 || c >= vx.cols) throw ShapeMismatchError("take_per_row: column out of range");
  Mat out(vx.rows, 1);
  for (int r = 0; r < vx.rows; ++r) out.at(r, 0) = vx.at(r, col_of_row[static_cast<size_t>(r)]);
  return push(std::move(out), {x}, [cols = std::move(col_of_row)](Tape& t, const Node& n) {
    Mat& gx = t.grad_ref(n.inputs[0]);
    for (int r = 0; r < n.grad.rows; ++r)
      gx.at(r, cols[static_cast<size_t>(r)]) += n.grad.at(r, 0);
  });
}

NodeId Tape::log_softmax_rows(NodeId x) {
  const Mat& vx = value(x);
  if (vx.cols < 1) throw ShapeMismatchError("log_softmax_rows: empty rows");
  Mat out = vx;
  for (int r = 0; r < out.rows; ++r) {
    double mx = out.at(r, 0);
    for (int c = 1; c < out.cols; ++c) mx = std::max(mx, out.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < out.cols; ++c) sum += std::exp(out.at(r, c) - mx);
    const double lse = mx + std::log(sum);
    for (int c = 0; c < out.cols; ++c) out.at(r, c) -= lse;
  }
  return push(std::move(out), {x}, [](Tape& t, const Node& n) {
    Mat& gx = t.grad_ref(n.inputs[0]);
    for (int r = 0; r < n.grad.rows; ++r) {
      double gsum = 0.0;
      for (int c = 0; c < n.grad.cols; ++c) gsum += n.grad.at(r, c);
      for (int c = 0; c < n.grad.cols; ++c)
        gx.at(r, c) += n.grad.at(r, c) - std::exp(n.value.at(r, c)) * gsum;
    }
  });
}

NodeId Tape::sum_all(NodeId a) {
  double sum = 0.0;
  for (double v : value(a).data) sum += v;
  return push(Mat::scalar(sum), {a}, [](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (double& g : ga.data) g += n.grad.data[0];
  });
}

NodeId Tape::mean_all(NodeId a) {
  const Mat& va = value(a);
  if (va.size() == 0) throw ShapeMismatchError("mean_all: empty input");
  double sum = 0.0;
  for (double v : va.data) sum += v;
  const double inv_n = 1.0 / static_cast<double>(va.size());
  return push(Mat::scalar(sum * inv_n), {a}, [inv_n](Tape& t, const Node& n) {
    Mat& ga = t.grad_ref(n.inputs[0]);
    for (double& g : ga.data) g += inv_n * n.grad.data[0];
  });
}

std::unordered_map<std::string, Mat> Tape::backward(NodeId loss) {
  const Mat& lval = value(loss);
  if (lval.rows != 1 || lval.cols != 1) throw NonScalarLossError("backward: loss is not 1x1");
  if (!std::isfinite(lval.data[0])) throw NonFiniteLossError("backward: loss is nonfinite");

  for (Node& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  nodes_[static_cast<size_t>(loss)].grad.data[0] = 1.0;

  // Creation order is topological for a define-by-run tape.
  for (NodeId id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.backprop) n.backprop(*this, n);
  }

  std::unordered_map<std::string, Mat> grads;
  for (const auto& [id, name] : param_nodes_) {
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, nodes_[static_cast<size_t>(id)].grad);
    else
      add_into(it->second, nodes_[static_cast<size_t>(id)].grad);
  }
  return grads;
}

// ---- ParamStore ----

Mat& ParamStore::create(const std::string& name, int rows, int cols) {
  if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos)
    throw ConfigError("parameter name must be non-empty without whitespace: '" + name + "'");
  if (arrays_.count(name)) throw ConfigError("parameter already exists: " + name);
  if (rows < 1 || cols < 1) throw ShapeMismatchError("create " + name + ": bad shape");
  order_.push_back(name);
  return arrays_.emplace(name, Mat(rows, cols)).first->second;
}

Mat& ParamStore::create_xavier(const std::string& name, int rows, int cols, uint64_t seed) {
  Mat& m = create(name, rows, cols);
  const double s = std::sqrt(6.0 / (rows + cols));
  Rng rng(seed);
  for (double& v : m.data) v = rng.uniform(-s, s);
  return m;
}

Mat& ParamStore::get(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("no such parameter: " + name);
  return it->second;
}

const Mat& ParamStore::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ConfigError("no such parameter: " + name);
  return it->second;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& name : order_) n += arrays_.at(name).size();
  return n;
}

// ---- Adam ----

void adam_step(ParamStore& params, const std::unordered_map<std::string, Mat>& grads,
               AdamState& state, const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    if (!params.has(name)) throw ConfigError("adam_step: gradient for unknown parameter " + name);
    if (!g.same_shape(params.get(name)))
      throw ShapeMismatchError("adam_step: gradient shape differs for " + name);
    if (!g.all_finite()) throw NonFiniteGradientError("adam_step: nonfinite gradient for " + name);
  }

  const int64_t t = ++params.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));

  for (const std::string& name : params.names()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat& g = git->second;
    Mat& p = params.get(name);
    Mat& m = state.m.try_emplace(name, Mat(p.rows, p.cols)).first->second;
    Mat& v = state.v.try_emplace(name, Mat(p.rows, p.cols)).first->second;
    for (size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = config.beta1 * m.data[i] + (1.0 - config.beta1) * g.data[i];
      v.data[i] = config.beta2 * v.data[i] + (1.0 - config.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

double clip_grad_norm(std::unordered_map<std::string, Mat>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data) v *= scale;
  }
  return norm;
}

// ---- Gradient check ----

GradCheckReport grad_check(const LossFn& fn, ParamStore& params, double tol, uint64_t seed,
                           int n_coords) {
  GradCheckReport report;
  report.tol = tol;

  std::unordered_map<std::string, Mat> analytic;
  (void)fn(params, &analytic);

  std::vector<std::pair<std::string, int>> coords;
  for (const std::string& name : params.names())
    for (int i = 0; i < static_cast<int>(params.get(name).size()); ++i)
      coords.emplace_back(name, i);
  Rng rng(seed);
  if (static_cast<int>(coords.size()) > n_coords) {
    rng.shuffle(coords);
    coords.resize(static_cast<size_t>(n_coords));
  }

  const double h = 1e-5;
  for (const auto& [name, idx] : coords) {
    double& slot = params.get(name).data[static_cast<size_t>(idx)];
    const double old = slot;
    slot = old + h;
    const double lp = fn(params, nullptr);
    slot = old - h;
    const double lm = fn(params, nullptr);
    slot = old;

    const double fd = (lp - lm) / (2.0 * h);
    double an = 0.0;
    auto it = analytic.find(name);
    if (it != analytic.end()) an = it->second.data[static_cast<size_t>(idx)];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = name;
      report.worst_index = idx;
    }
    ++report.n_checked;
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

// ---- Checkpoints ----

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out << "grainrl-ckpt-v1\n";
  out << "step " << params.step << "\n";
  out << "arrays " << params.names().size() << "\n";
  size_t offset = 0;
  for (const std::string& name : params.names()) {
    const Mat& m = params.get(name);
    out << name << " " << m.rows << " " << m.cols << " " << offset << "\n";
    offset += m.size() * sizeof(double);
  }
  out << "end\n";
  for (const std::string& name : params.names()) {
    const Mat& m = params.get(name);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("short write: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "grainrl-ckpt-v1")
    throw CheckpointError("bad magic in " + path);

  ParamStore store;
  size_t n_arrays = 0;
  {
    std::string key;
    if (!std::getline(in, line)) throw CheckpointError("truncated header: " + path);
    std::istringstream ss(line);
    if (!(ss >> key >> store.step) || key != "step")
      throw CheckpointError("bad step line: " + path);
  }
  {
    std::string key;
    if (!std::getline(in, line)) throw CheckpointError("truncated header: " + path);
    std::istringstream ss(line);
    if (!(ss >> key >> n_arrays) || key != "arrays")
      throw CheckpointError("bad arrays line: " + path);
  }

  struct Entry {
    std::string name;
    int rows = 0, cols = 0;
    size_t offset = 0;
  };
  std::vector<Entry> entries;
  size_t expect_offset = 0;
  for (size_t i = 0; i < n_arrays; ++i) {
    if (!std::getline(in, line)) throw CheckpointError("truncated manifest: " + path);
    Entry e;
    std::istringstream ss(line);
    if (!(ss >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 1 || e.cols < 1)
      throw CheckpointError("bad manifest entry '" + line + "' in " + path);
    if (e.offset != expect_offset)
      throw CheckpointError("inconsistent offset for " + e.name + " in " + path);
    expect_offset += static_cast<size_t>(e.rows) * static_cast<size_t>(e.cols) * sizeof(double);
    entries.push_back(std::move(e));
  }
  if (!std::getline(in, line) || line != "end")
    throw CheckpointError("missing manifest terminator: " + path);

  for (const Entry& e : entries) {
    Mat& m = store.create(e.name, e.rows, e.cols);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(m.size() * sizeof(double)))
      throw CheckpointError("truncated data for " + e.name + " in " + path);
    if (!m.all_finite()) throw CheckpointError("nonfinite values in " + e.name + " in " + path);
  }
  return store;
}

}  // namespace grainrl
