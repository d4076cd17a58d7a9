#pragma once

#include <string>
#include <vector>

namespace latcomp {

struct LossRow {
  int step = 0;
  int t = 0;
  double total = 0.0;
  double dds = 0.0;
  double per_bak = 0.0;
  double per_for = 0.0;
  double grad_norm = 0.0;

  bool operator==(const LossRow&) const = default;
};

// Per-step optimisation record. Steps start at 1 and increase by one.
class LossLog {
 public:
  static constexpr const char* kHeader = "step,t,total,dds,per_bak,per_for,grad_norm";

  // Throws StateError unless row.step == last step + 1.
  void append(const LossRow& row);
  const std::vector<LossRow>& rows() const noexcept { return rows_; }
  bool empty() const noexcept { return rows_.empty(); }
  std::size_t size() const noexcept { return rows_.size(); }

  std::string to_csv() const;
  // Writes the CSV atomically.
  void flush(const std::string& path) const;

 private:
  std::vector<LossRow> rows_;
};

}  // namespace latcomp
