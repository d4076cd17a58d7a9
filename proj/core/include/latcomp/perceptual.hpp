#pragma once

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "latcomp/mask.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp {

// Deterministic image -> ordered list of feature tensors, resolution-reducing.
// Plug-in point for pretrained extractors.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Tensor> extract(const Tensor& image) const = 0;
  // Pullback of per-level cotangents to image space at `image`.
  virtual Tensor extract_vjp(const Tensor& image, const std::vector<Tensor>& cotangents) const = 0;
};

// Layers a pretrained VGG-16 adapter should expose by default.
inline constexpr std::array<std::string_view, 3> kVggDefaultLayers = {"relu1_2", "relu2_2", "relu3_3"};

// Identity features followed by `levels` applications of a 3x3 box blur with
// stride 2 and zero padding (output side ceil(n / 2)).
class BoxPyramidExtractor final : public FeatureExtractor {
 public:
  explicit BoxPyramidExtractor(int levels = 3);

  std::string name() const override { return "toy-pyramid"; }
  std::vector<Tensor> extract(const Tensor& image) const override;
  Tensor extract_vjp(const Tensor& image, const std::vector<Tensor>& cotangents) const override;

  int levels() const noexcept { return levels_; }

 private:
  int levels_;
};

Tensor box_blur_stride2(const Tensor& in);
// Adjoint of box_blur_stride2 onto an input of shape `input_shape`.
Tensor box_blur_stride2_adjoint(const Tensor& grad_out, const Shape& input_shape);

// Sum over feature levels of the mean squared feature difference of a (x) M
// and b (x) M. `mask` may be null.
double perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fx, const PixelMask* mask = nullptr);

struct PerceptualTerm {
  double value = 0.0;
  Tensor gradient;  // d value / d candidate
};

// Loss between fixed `reference` and `candidate`, with its gradient w.r.t. candidate.
PerceptualTerm perceptual_term(const Tensor& reference, const Tensor& candidate, const FeatureExtractor& fx,
                               const PixelMask* mask = nullptr);

std::shared_ptr<const FeatureExtractor> make_toy_pyramid_extractor(int levels = 3);

}  // namespace latcomp
