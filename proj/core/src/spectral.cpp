#include "latcomp/spectral.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace latcomp {
namespace {

struct ComplexBuffer {
  explicit ComplexBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {}
  ~ComplexBuffer() { fftw_free(data); }
  ComplexBuffer(const ComplexBuffer&) = delete;
  ComplexBuffer& operator=(const ComplexBuffer&) = delete;
  fftw_complex* data;
};

struct PlanPair {
  fftw_plan forward;
  fftw_plan backward;
};

// FFTW planning is not thread-safe; execution through the new-array API is.
// Plans are created once per grid size and live for the process.
const PlanPair& plans_for(int height, int width) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find({height, width});
  if (it != cache.end()) return it->second;
  const std::size_t n = static_cast<std::size_t>(height) * width;
  ComplexBuffer in(n), out(n);
  PlanPair plans{
      fftw_plan_dft_2d(height, width, in.data, out.data, FFTW_FORWARD, FFTW_ESTIMATE),
      fftw_plan_dft_2d(height, width, in.data, out.data, FFTW_BACKWARD, FFTW_ESTIMATE)};
  return cache.emplace(std::make_pair(height, width), plans).first->second;
}

int signed_frequency(int k, int n) noexcept { return k <= n / 2 ? k : k - n; }

}  // namespace

double frequency_norm2(int ky, int kx, int height, int width) noexcept {
  const double fy = signed_frequency(ky, height);
  const double fx = signed_frequency(kx, width);
  return fy * fy + fx * fx;
}

Tensor apply_spectral_gain(const Tensor& in, const std::function<double(double)>& gain) {
  const int h = in.height();
  const int w = in.width();
  const std::size_t n = in.shape().plane_size();
  if (n == 0) return in;
  const PlanPair& plans = plans_for(h, w);

  std::vector<double> gains(n);
  for (int ky = 0; ky < h; ++ky) {
    for (int kx = 0; kx < w; ++kx) gains[static_cast<std::size_t>(ky) * w + kx] = gain(frequency_norm2(ky, kx, h, w));
  }

  ComplexBuffer a(n), b(n);
  Tensor out(in.shape());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int c = 0; c < in.channels(); ++c) {
    auto src = in.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      a.data[i][0] = src[i];
      a.data[i][1] = 0.0;
    }
    fftw_execute_dft(plans.forward, a.data, b.data);
    for (std::size_t i = 0; i < n; ++i) {
      b.data[i][0] *= gains[i];
      b.data[i][1] *= gains[i];
    }
    fftw_execute_dft(plans.backward, b.data, a.data);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = a.data[i][0] * inv_n;
  }
  return out;
}

}  // namespace latcomp
