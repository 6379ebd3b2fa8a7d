#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace samba {

// Global arithmetic mode. Training runs in f32; gradient oracles switch to
// f64. In f32 mode every op output is rounded through 32-bit float, so all
// stored values are exactly float-representable while storage stays double.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

inline double quantize_value(double v, Precision p) {
  return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : saved(precision()) { set_precision(p); }
  ~PrecisionGuard() { set_precision(saved); }
  Precision saved;
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor. Data is shared and treated as immutable once an op
// has produced the tensor; `node` ties it to the tape that recorded it.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  int64_t tape_serial = -1;
  int node = -1;

  Tensor() = default;

  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool defined() const { return static_cast<bool>(data); }

  const double* ptr() const { return data->data(); }
  double* mut() { return data->data(); }

  double value() const;                            // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from(Shape s, std::vector<double> v);
  static Tensor scalar(double v);
};

// Trainable tensor plus its gradient accumulator and a stable name used by
// the checkpoint format. grad always matches value's shape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape);
  Parameter(std::string n, Shape shape, std::vector<double> init);

  void zero_grad();
  int64_t numel() const { return value.numel(); }
};

// Ordered record of differentiable ops. Constructing a Tape activates it for
// the current thread; ops record backward closures while one is active.
// backward() replays them in reverse and accumulates into watched Parameters.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void watch(Parameter& p);
  void backward(const Tensor& loss);

  // Kernel-side interface.
  int alloc_node(std::function<void(Tape&, const std::vector<double>&)> pull);
  std::vector<double>& grad_of(int node, int64_t numel);
  void attach(Tensor& t, int node);
  int64_t serial() const { return serial_; }
  // Node id of t on this tape, or -1 when t is untracked or from another tape.
  int node_of(const Tensor& t) const {
    return t.tape_serial == serial_ ? t.node : -1;
  }

 private:
  struct Node {
    std::vector<double> grad;  // lazily sized; empty means "no gradient yet"
    std::function<void(Tape&, const std::vector<double>&)> pull;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> watched_;
  int64_t serial_ = 0;
};

struct GradCheckOptions {
  double step = 1e-3;             // central-difference step
  int max_coords_per_param = 0;   // 0 = every coordinate
  uint64_t seed = 0x5381ull;      // coordinate subsampling key
};

// Central finite differences against the tape gradients. Returns the max over
// checked coordinates of |analytic - numeric| / max(1, |numeric|). `f` must
// rebuild the loss from the current parameter values on every call.
double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Parameter*>& params,
                               const GradCheckOptions& opt = {});

}  // namespace samba
