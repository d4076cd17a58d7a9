#include "latcomp/loss_log.hpp"

#include <cstdio>

#include "latcomp/errors.hpp"
#include "latcomp/image_io.hpp"

namespace latcomp {

void LossLog::append(const LossRow& row) {
  const int expected = rows_.empty() ? 1 : rows_.back().step + 1;
  if (row.step != expected) {
    throw StateError("loss log expected step " + std::to_string(expected) + ", got " + std::to_string(row.step));
  }
  rows_.push_back(row);
}

std::string LossLog::to_csv() const {
  std::string out = kHeader;
  out += '\n';
  char buf[256];
  for (const LossRow& r : rows_) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g\n", r.step, r.t, r.total, r.dds, r.per_bak,
                  r.per_for, r.grad_norm);
    out += buf;
  }
  return out;
}

void LossLog::flush(const std::string& path) const { write_text_atomic(path, to_csv()); }

}  // namespace latcomp
