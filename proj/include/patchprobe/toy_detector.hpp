#pragma once

#include <filesystem>
#include <memory>

#include "patchprobe/corpus.hpp"
#include "patchprobe/detector.hpp"
#include "patchprobe/net.hpp"

namespace patchprobe {

struct DetectorTrainConfig {
  int epochs = 40;
  int batch = 8;
  double lr = 1e-3;
  double lambda_obj = 1.0;
  double lambda_cls = 1.0;
  double lambda_box = 5.0;
  double lambda_noobj = 0.5;
  double ignore_iou = 0.5;  // cells whose box already matches a truth this well are not pushed to 0
  uint64_t seed = 1;
  int jobs = 0;
};

struct DetectorTrainReport {
  std::vector<double> epoch_loss;
  double holdout_detection_rate = 0;
  int holdout_objects = 0;
};

// Single-scale grid detector backed by ToyNet. Each cell decodes to one
// RawBox: center = (cell + sigmoid(txy)) * stride, size = anchor * exp(twh),
// objectness = sigmoid, class scores = softmax.
class ToyDetector : public Detector {
 public:
  ToyDetector(DetectorContract contract, ToyNetConfig net_cfg, uint64_t init_seed);
  ToyDetector(DetectorContract contract, ToyNet net);

  bool differentiable() const override { return true; }

  std::vector<RawBox> raw_boxes(const Image& image) const override;

  LossGradient loss_and_gradient(const Image& image, const std::vector<LossTarget>& targets,
                                 const TermSet& terms, const PixelRect& roi) const override;

  ObjProbe max_objectness(const Image& image, const std::vector<Box>& regions, double iou_floor,
                          const PixelRect& roi) const override;

  uint64_t weights_fingerprint() const override;

  const ToyNet& net() const { return net_; }
  ToyNet& mutable_net() { return net_; }

 private:
  ToyNet net_;
};

// Trains a fresh detector on the corpus. Rejects empty corpora; aborts with
// diagnostics if the loss stops being finite. Bitwise deterministic in seed.
std::unique_ptr<ToyDetector> train_toy_detector(const std::vector<Scene>& corpus,
                                                const std::vector<Scene>& holdout,
                                                const DetectorContract& contract,
                                                const ToyNetConfig& net_cfg,
                                                const DetectorTrainConfig& cfg,
                                                DetectorTrainReport* report = nullptr);

// Fraction of ground-truth objects matched by a detection of the same class
// with IoU >= 0.5.
double detection_rate(const Detector& det, const std::vector<Scene>& scenes,
                      int* total_objects = nullptr);

struct DetectorSaveInfo {
  uint64_t training_seed = 0;
  std::string corpus_hash;
  std::string config_hash;
};

void save_toy_detector(const std::filesystem::path& dir, const ToyDetector& det,
                       const DetectorSaveInfo& info);
std::unique_ptr<ToyDetector> load_toy_detector(const std::filesystem::path& dir);

}  // namespace patchprobe
