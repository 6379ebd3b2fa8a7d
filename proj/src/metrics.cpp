#include "samba/metrics.hpp"

#include "samba/errors.hpp"

namespace samba {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ContractError("confusion matrix needs >= 1 class");
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

void ConfusionMatrix::update(const std::vector<uint8_t>& pred,
                             const std::vector<uint8_t>& gt, int ignore_index) {
  if (pred.size() != gt.size())
    throw ShapeError("confusion update: " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(gt.size()) + " labels");
  for (size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    if (g == ignore_index) continue;
    const int p = pred[i];
    if (g >= k_ || p >= k_)
      throw ValidationError("confusion update: label " +
                            std::to_string(std::max(g, p)) + " out of range");
    ++at(g, p);
  }
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrices of different sizes");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

MiouResult miou(const ConfusionMatrix& cm, const std::vector<int>& included_classes) {
  if (included_classes.empty()) throw MetricError("miou: no classes included");
  const int k = cm.num_classes();
  MiouResult r;
  r.per_class.assign(static_cast<size_t>(k), 0.0);
  r.valid.assign(static_cast<size_t>(k), false);

  double acc = 0.0;
  int counted = 0;
  for (int c : included_classes) {
    if (c < 0 || c >= k) throw MetricError("miou: class " + std::to_string(c) + " out of range");
    const int64_t tp = cm.at(c, c);
    int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const int64_t denom = row + col - tp;  // tp + fp + fn
    if (denom == 0) continue;              // absent on both sides: undefined 0/0
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<size_t>(c)] = iou;
    r.valid[static_cast<size_t>(c)] = true;
    acc += iou;
    ++counted;
  }
  if (counted == 0) throw MetricError("miou: every included class is absent");
  r.mean = acc / counted;
  return r;
}

}  // namespace samba
