#pragma once

#include <cstdint>
#include <vector>

namespace samba {

// Rows are ground truth, columns are prediction; ignore pixels never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void update(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
              int ignore_index = 255);

  int64_t at(int gt, int pred) const {
    return counts_[static_cast<size_t>(gt) * k_ + pred];
  }
  int64_t& at(int gt, int pred) { return counts_[static_cast<size_t>(gt) * k_ + pred]; }
  int num_classes() const { return k_; }
  int64_t total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

 private:
  int k_;
  std::vector<int64_t> counts_;
};

struct MiouResult {
  std::vector<double> per_class;  // indexed by class id; meaningful when valid
  std::vector<bool> valid;        // false for excluded or absent (0/0) classes
  double mean = 0.0;
};

// IoU_c = TP_c / (TP_c + FP_c + FN_c); classes with a zero denominator are
// dropped from the mean.
MiouResult miou(const ConfusionMatrix& cm, const std::vector<int>& included_classes);

}  // namespace samba
