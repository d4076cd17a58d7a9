#include "latcomp/perceptual.hpp"

#include "latcomp/errors.hpp"

namespace latcomp {

BoxPyramidExtractor::BoxPyramidExtractor(int levels) : levels_(levels) {
  if (levels < 0) throw ConfigError("pyramid levels must be >= 0");
}

Tensor box_blur_stride2(const Tensor& in) {
  const int h = in.height();
  const int w = in.width();
  const int oh = (h + 1) / 2;
  const int ow = (w + 1) / 2;
  Tensor out(Shape{in.channels(), oh, ow});
  for (int c = 0; c < in.channels(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = 2 * y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = 2 * x + dx;
            if (sx < 0 || sx >= w) continue;
            acc += in(c, sy, sx);
          }
        }
        out(c, y, x) = acc / 9.0;
      }
    }
  }
  return out;
}

Tensor box_blur_stride2_adjoint(const Tensor& grad_out, const Shape& input_shape) {
  const int h = input_shape.height;
  const int w = input_shape.width;
  Tensor out(input_shape);
  for (int c = 0; c < grad_out.channels(); ++c) {
    for (int y = 0; y < grad_out.height(); ++y) {
      for (int x = 0; x < grad_out.width(); ++x) {
        const double g = grad_out(c, y, x) / 9.0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = 2 * y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = 2 * x + dx;
            if (sx < 0 || sx >= w) continue;
            out(c, sy, sx) += g;
          }
        }
      }
    }
  }
  return out;
}

std::vector<Tensor> BoxPyramidExtractor::extract(const Tensor& image) const {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(levels_) + 1);
  out.push_back(image);
  for (int l = 0; l < levels_; ++l) out.push_back(box_blur_stride2(out.back()));
  return out;
}

Tensor BoxPyramidExtractor::extract_vjp(const Tensor& image, const std::vector<Tensor>& cotangents) const {
  if (cotangents.size() != static_cast<std::size_t>(levels_) + 1) {
    throw ShapeError("pyramid vjp expects " + std::to_string(levels_ + 1) + " cotangents");
  }
  std::vector<Shape> shapes{image.shape()};
  for (int l = 0; l < levels_; ++l) {
    const Shape& s = shapes.back();
    shapes.push_back(Shape{s.channels, (s.height + 1) / 2, (s.width + 1) / 2});
  }
  // Accumulate from the coarsest level back to the input.
  Tensor acc = cotangents.back();
  for (int l = levels_; l >= 1; --l) {
    acc = box_blur_stride2_adjoint(acc, shapes[static_cast<std::size_t>(l) - 1]);
    acc += cotangents[static_cast<std::size_t>(l) - 1];
  }
  return acc;
}

namespace {

Tensor masked(const Tensor& image, const PixelMask* mask) {
  if (mask == nullptr) return image;
  return hadamard(image, mask->plane());
}

}  // namespace

PerceptualTerm perceptual_term(const Tensor& reference, const Tensor& candidate, const FeatureExtractor& fx,
                               const PixelMask* mask) {
  require_same_shape(reference, candidate, "perceptual_loss");
  if (mask != nullptr && (mask->height() != candidate.height() || mask->width() != candidate.width())) {
    throw ShapeError("perceptual_loss: mask resolution does not match images");
  }
  const Tensor cand = masked(candidate, mask);
  const auto fa = fx.extract(masked(reference, mask));
  const auto fb = fx.extract(cand);
  if (fa.size() != fb.size()) throw ShapeError("feature extractor returned inconsistent level counts");

  PerceptualTerm out;
  std::vector<Tensor> cotangents;
  cotangents.reserve(fb.size());
  for (std::size_t l = 0; l < fb.size(); ++l) {
    Tensor diff = fb[l] - fa[l];
    const double n = static_cast<double>(diff.size());
    if (n > 0) out.value += sum_squares(diff) / n;
    diff *= n > 0 ? 2.0 / n : 0.0;
    cotangents.push_back(std::move(diff));
  }
  Tensor grad = fx.extract_vjp(cand, cotangents);
  out.gradient = masked(grad, mask);
  return out;
}

double perceptual_loss(const Tensor& a, const Tensor& b, const FeatureExtractor& fx, const PixelMask* mask) {
  require_same_shape(a, b, "perceptual_loss");
  if (mask != nullptr && (mask->height() != a.height() || mask->width() != a.width())) {
    throw ShapeError("perceptual_loss: mask resolution does not match images");
  }
  const auto fa = fx.extract(masked(a, mask));
  const auto fb = fx.extract(masked(b, mask));
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    if (fa[l].size() > 0) total += sum_squares(fb[l] - fa[l]) / static_cast<double>(fa[l].size());
  }
  return total;
}

std::shared_ptr<const FeatureExtractor> make_toy_pyramid_extractor(int levels) {
  return std::make_shared<const BoxPyramidExtractor>(levels);
}

}  // namespace latcomp
