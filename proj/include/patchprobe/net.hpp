#pragma once

#include <cstdint>
#include <vector>

#include "patchprobe/image.hpp"
#include "patchprobe/rng.hpp"

namespace patchprobe {

// Architecture of the toy grid detector: three stride-2 convs, two stride-1
// convs (receptive field ~47 px at the head) and a 1x1 head that emits
// (tx, ty, tw, th, objectness logit, class logits) per cell. Total stride 8.
struct ToyNetConfig {
  int input_size = 96;   // must be divisible by 8
  int class_count = 7;
  double anchor_w = 24;
  double anchor_h = 32;
  std::vector<int> widths = {12, 16, 24, 24, 24};  // channels of the 5 conv layers

  int grid() const { return input_size / 8; }
  int stride() const { return 8; }
  int head_channels() const { return 5 + class_count; }
  void validate() const;
};

// Plain dense conv net over HWC double tensors. Weights live in one flat
// parameter vector so the optimizer stays trivial; layouts are
// [oc][ky][kx][ic] to keep the innermost input-channel loop contiguous.
class ToyNet {
 public:
  explicit ToyNet(ToyNetConfig cfg);

  void init_weights(Prng& rng);

  struct Trace {
    std::vector<Image> acts;  // acts[0] = input, acts[i] = post-activation output of layer i
  };

  // Returns the raw head grid (grid x grid x head_channels). A trace is
  // required for any later backward pass.
  Image forward(const Image& input, Trace* trace = nullptr) const;

  // Backpropagates d(loss)/d(head) to d(loss)/d(input). When param_grads is
  // non-null, accumulates parameter gradients into it (size param_count()).
  Image backward(const Trace& trace, const Image& dhead,
                 std::vector<double>* param_grads = nullptr) const;

  const ToyNetConfig& config() const { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  size_t param_count() const { return params_.size(); }

  int layer_count() const { return int(layers_.size()); }
  size_t layer_weight_offset(int i) const { return layers_.at(i).w_off; }
  size_t layer_bias_offset(int i) const { return layers_.at(i).b_off; }

 private:
  struct Layer {
    int in_c, out_c, k, stride, pad;
    bool act;  // leaky relu(0.1) after conv
    size_t w_off, b_off;
  };

  Image conv_forward(const Layer& l, const Image& in) const;
  Image conv_backward(const Layer& l, const Image& in, const Image& dout,
                      std::vector<double>* param_grads) const;

  ToyNetConfig cfg_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

}  // namespace patchprobe
