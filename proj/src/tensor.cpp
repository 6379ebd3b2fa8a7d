#include "samba/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

#include "samba/errors.hpp"
#include "samba/rng.hpp"

namespace samba {

namespace {
Precision g_precision = Precision::f32;
thread_local Tape* g_active_tape = nullptr;
int64_t g_tape_counter = 0;
}  // namespace

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

double Tensor::value() const {
  if (numel() != 1)
    throw ContractError("scalar read on tensor of shape " + shape_str(shape));
  return (*data)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  int64_t off = 0;
  size_t i = 0;
  for (int v : idx) {
    off = off * shape[i] + v;
    ++i;
  }
  return (*data)[static_cast<size_t>(off)];
}

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(s)), 0.0);
  t.shape = std::move(s);
  return t;
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t = zeros(std::move(s));
  for (double& x : *t.data) x = quantize_value(v, g_precision);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
  if (shape_numel(s) != static_cast<int64_t>(v.size()))
    throw ShapeError("tensor data length " + std::to_string(v.size()) +
                     " does not match shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  for (double& x : v) x = quantize_value(x, g_precision);
  t.data = std::make_shared<std::vector<double>>(std::move(v));
  return t;
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Parameter::Parameter(std::string n, Shape shape)
    : name(std::move(n)), value(Tensor::zeros(shape)), grad(Tensor::zeros(shape)) {
  value.requires_grad = true;
}

Parameter::Parameter(std::string n, Shape shape, std::vector<double> init)
    : name(std::move(n)),
      value(Tensor::from(shape, std::move(init))),
      grad(Tensor::zeros(shape)) {
  value.requires_grad = true;
}

void Parameter::zero_grad() {
  for (double& g : *grad.data) g = 0.0;
}

Tape::Tape() {
  if (g_active_tape)
    throw ContractError("nested tapes are not supported on one thread");
  serial_ = ++g_tape_counter;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::watch(Parameter& p) {
  const int id = alloc_node(nullptr);  // leaf: nothing to pull
  attach(p.value, id);
  watched_.emplace_back(id, &p);
}

int Tape::alloc_node(std::function<void(Tape&, const std::vector<double>&)> pull) {
  nodes_.push_back(Node{{}, std::move(pull)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::grad_of(int node, int64_t numel) {
  auto& g = nodes_[static_cast<size_t>(node)].grad;
  if (g.empty()) g.assign(static_cast<size_t>(numel), 0.0);
  return g;
}

void Tape::attach(Tensor& t, int node) {
  t.node = node;
  t.tape_serial = serial_;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape));
  const int root = node_of(loss);
  if (root >= 0) {
    grad_of(root, 1)[0] = 1.0;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.empty() || !n.pull) continue;
      n.pull(*this, n.grad);
    }
  }
  for (auto& [id, p] : watched_) {
    const auto& g = nodes_[static_cast<size_t>(id)].grad;
    if (g.empty()) continue;
    auto& acc = *p->grad.data;
    for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
  }
}

double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Parameter*>& params,
                               const GradCheckOptions& opt) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    for (Parameter* p : params) tape.watch(*p);
    Tensor loss = f();
    if (loss.numel() != 1)
      throw ContractError("finite_difference_check requires a scalar function");
    if (!std::isfinite(loss.value()))
      throw OracleError("finite_difference_check: non-finite loss");
    tape.backward(loss);
  }

  Rng rng(opt.seed);
  double worst = 0.0;
  for (Parameter* p : params) {
    const int64_t n = p->numel();
    std::vector<int64_t> coords;
    if (opt.max_coords_per_param <= 0 || n <= opt.max_coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < opt.max_coords_per_param; ++i)
        coords.push_back(static_cast<int64_t>(rng.next() % static_cast<uint64_t>(n)));
    }
    auto& v = *p->value.data;
    const auto& g = *p->grad.data;
    for (int64_t c : coords) {
      const size_t i = static_cast<size_t>(c);
      const double saved = v[i];
      v[i] = saved + opt.step;
      const double up = f().value();
      v[i] = saved - opt.step;
      const double dn = f().value();
      v[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw OracleError("finite_difference_check: non-finite probe at " + p->name);
      const double numeric = (up - dn) / (2.0 * opt.step);
      const double rel = std::fabs(g[i] - numeric) / std::max(1.0, std::fabs(numeric));
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace samba
