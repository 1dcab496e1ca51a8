#include "patchprobe/net.hpp"

#include <cmath>

#include "patchprobe/errors.hpp"

namespace patchprobe {

namespace {
constexpr double kLeak = 0.1;
}

void ToyNetConfig::validate() const {
  if (input_size <= 0 || input_size % 8 != 0)
    throw UserError("net: input_size must be a positive multiple of 8");
  if (class_count <= 0) throw UserError("net: class_count must be positive");
  if (widths.size() != 5) throw UserError("net: expected 5 conv widths");
  for (int w : widths)
    if (w <= 0) throw UserError("net: conv widths must be positive");
  if (anchor_w <= 0 || anchor_h <= 0) throw UserError("net: anchors must be positive");
}

ToyNet::ToyNet(ToyNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& w = cfg_.widths;
  auto add = [this](int in_c, int out_c, int k, int stride, bool act) {
    Layer l{in_c, out_c, k, stride, k / 2, act, params_.size(), 0};
    params_.resize(params_.size() + size_t(out_c) * in_c * k * k);
    l.b_off = params_.size();
    params_.resize(params_.size() + size_t(out_c));
    layers_.push_back(l);
  };
  add(3, w[0], 3, 2, true);
  add(w[0], w[1], 3, 2, true);
  add(w[1], w[2], 3, 2, true);
  add(w[2], w[3], 3, 1, true);
  add(w[3], w[4], 3, 1, true);
  add(w[4], cfg_.head_channels(), 1, 1, false);
}

void ToyNet::init_weights(Prng& rng) {
  for (const Layer& l : layers_) {
    double scale = std::sqrt(2.0 / (l.in_c * l.k * l.k));
    size_t nw = size_t(l.out_c) * l.in_c * l.k * l.k;
    for (size_t i = 0; i < nw; ++i) params_[l.w_off + i] = rng.normal(0.0, scale);
    for (int i = 0; i < l.out_c; ++i) params_[l.b_off + i] = 0.0;
  }
}

Image ToyNet::conv_forward(const Layer& l, const Image& in) const {
  const int oh = (in.h + 2 * l.pad - l.k) / l.stride + 1;
  const int ow = (in.w + 2 * l.pad - l.k) / l.stride + 1;
  Image out(oh, ow, l.out_c);
  const double* W = params_.data() + l.w_off;
  const double* B = params_.data() + l.b_off;
  const size_t wstride_oc = size_t(l.k) * l.k * l.in_c;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double* orow = &out.v[(size_t(y) * ow + x) * l.out_c];
      for (int oc = 0; oc < l.out_c; ++oc) {
        double acc = B[oc];
        const double* Woc = W + oc * wstride_oc;
        for (int ky = 0; ky < l.k; ++ky) {
          const int iy = y * l.stride - l.pad + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < l.k; ++kx) {
            const int ix = x * l.stride - l.pad + kx;
            if (ix < 0 || ix >= in.w) continue;
            const double* irow = &in.v[(size_t(iy) * in.w + ix) * l.in_c];
            const double* wrow = Woc + (size_t(ky) * l.k + kx) * l.in_c;
            for (int ic = 0; ic < l.in_c; ++ic) acc += irow[ic] * wrow[ic];
          }
        }
        orow[oc] = l.act ? (acc > 0 ? acc : kLeak * acc) : acc;
      }
    }
  }
  return out;
}

Image ToyNet::conv_backward(const Layer& l, const Image& in, const Image& dout_post,
                            std::vector<double>* param_grads) const {
  Image din(in.h, in.w, in.c);
  const double* W = params_.data() + l.w_off;
  double* dW = param_grads ? param_grads->data() + l.w_off : nullptr;
  double* dB = param_grads ? param_grads->data() + l.b_off : nullptr;
  const size_t wstride_oc = size_t(l.k) * l.k * l.in_c;
  for (int y = 0; y < dout_post.h; ++y) {
    for (int x = 0; x < dout_post.w; ++x) {
      const double* drow = &dout_post.v[(size_t(y) * dout_post.w + x) * l.out_c];
      for (int oc = 0; oc < l.out_c; ++oc) {
        double g = drow[oc];
        if (g == 0.0) continue;
        if (dB) dB[oc] += g;
        const double* Woc = W + oc * wstride_oc;
        double* dWoc = dW ? dW + oc * wstride_oc : nullptr;
        for (int ky = 0; ky < l.k; ++ky) {
          const int iy = y * l.stride - l.pad + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < l.k; ++kx) {
            const int ix = x * l.stride - l.pad + kx;
            if (ix < 0 || ix >= in.w) continue;
            const double* irow = &in.v[(size_t(iy) * in.w + ix) * l.in_c];
            double* dirow = &din.v[(size_t(iy) * in.w + ix) * l.in_c];
            const double* wrow = Woc + (size_t(ky) * l.k + kx) * l.in_c;
            double* dwrow = dWoc ? dWoc + (size_t(ky) * l.k + kx) * l.in_c : nullptr;
            for (int ic = 0; ic < l.in_c; ++ic) {
              dirow[ic] += g * wrow[ic];
              if (dwrow) dwrow[ic] += g * irow[ic];
            }
          }
        }
      }
    }
  }
  return din;
}

Image ToyNet::forward(const Image& input, Trace* trace) const {
  if (input.h != cfg_.input_size || input.w != cfg_.input_size || input.c != 3)
    throw UserError("net: wrong input shape");
  if (trace) {
    trace->acts.clear();
    trace->acts.push_back(input);
  }
  Image cur = input;
  for (const Layer& l : layers_) {
    cur = conv_forward(l, cur);
    if (trace) trace->acts.push_back(cur);
  }
  return cur;
}

Image ToyNet::backward(const Trace& trace, const Image& dhead,
                       std::vector<double>* param_grads) const {
  if (trace.acts.size() != layers_.size() + 1)
    throw InternalError("net: trace does not match architecture");
  if (param_grads && param_grads->size() != params_.size())
    throw InternalError("net: param_grads size mismatch");
  Image d = dhead;
  for (int i = int(layers_.size()) - 1; i >= 0; --i) {
    const Layer& l = layers_[i];
    const Image& post = trace.acts[i + 1];
    if (!d.same_shape(post)) throw InternalError("net: gradient shape mismatch");
    if (l.act) {
      Image dpre = d;
      for (size_t j = 0; j < dpre.v.size(); ++j)
        if (post.v[j] <= 0) dpre.v[j] *= kLeak;
      d = conv_backward(l, trace.acts[i], dpre, param_grads);
    } else {
      d = conv_backward(l, trace.acts[i], d, param_grads);
    }
  }
  return d;
}

}  // namespace patchprobe
