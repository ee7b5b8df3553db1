#pragma once

#include <string>
#include <vector>

#include "fseg/checkpoint.hpp"
#include "fseg/fuzzy.hpp"
#include "fseg/image.hpp"
#include "fseg/tensor.hpp"

namespace fseg {

struct NetworkConfig {
  int in_channels = 3;
  int width = 64;       // feature maps after the first convolution
  int depth = 4;        // encoder levels; each halves the resolution once
  int image_size = 256;
  int batch_size = 4;
  int epochs = 60;
  double lr = 1e-3;
  double lr_decay = 0.95;  // multiplied into the rate after every epoch
  std::uint64_t seed = 1;
  bool fuzzy = true;                                // false: plain variant
  MembershipKind kind = MembershipKind::Sigmoid;
  bool per_pixel_membership = true;                 // [R,D,H,W] vs [R,D,1,1]

  void validate() const;
};

struct ConvLayer {
  std::string name;
  Tensor w, b;
};

// Encoder-decoder segmentation network. Convolutions are 3x3 "same" except
// the 1x1 head; downsampling is 2x2 max-pool, upsampling nearest-neighbor
// followed by a width-halving convolution, with skip concatenation. The
// fuzzy variant transforms the input channels and the post-activation
// features of the first convolution through trainable membership blocks.
class Network {
 public:
  Network() = default;

  const NetworkConfig& config() const { return cfg_; }
  bool fuzzy_ready() const { return fuzzy_ready_; }

  // Logits [N,classes,H,W] for input [N,in_channels,H,W].
  Tensor forward(const Tensor& x) const;

  // Input fuzzy block plus first convolution and activation; the tensor the
  // feature fuzzy block sees. Used to gather warm-up statistics.
  Tensor first_features(const Tensor& x) const;

  // When forced, both fuzzy blocks are bypassed while keeping the shared
  // convolution weights; forward then matches the plain variant exactly.
  Tensor forward_without_fuzzy(const Tensor& x) const;

  std::vector<Tensor> trainable_params() const;
  std::vector<NamedParam> named_params() const;  // includes a config record
  std::int64_t param_count() const;

  void init_fuzzy_input(const CategoryStats& stats, Rng& rng);
  void init_fuzzy_features(const Tensor& warmup_activations, Rng& rng);

  // Keeps Gaussian widths above kVarFloor; call after every optimizer step.
  void clamp_membership_widths();

  void save(const std::string& path) const;
  static Network load(const std::string& path);

  friend Network build_network(const NetworkConfig& cfg);

 private:
  Tensor run(const Tensor& x, bool with_fuzzy) const;

  NetworkConfig cfg_;
  std::vector<ConvLayer> encoder_;  // enc{L}a, enc{L}b interleaved
  ConvLayer bot_a_, bot_b_;
  std::vector<ConvLayer> up_;      // up{L}, outermost last
  std::vector<ConvLayer> decoder_; // dec{L}a, dec{L}b interleaved
  ConvLayer head_;
  MembershipParams fuzzy_in_, fuzzy_feat_;
  bool fuzzy_ready_ = false;
};

// Initializes convolution weights from the config seed (uniform in
// +-1/sqrt(fan_in), zero bias). Fuzzy parameters are data-dependent and
// stay empty until the trainer (or a checkpoint) provides them.
Network build_network(const NetworkConfig& cfg);

struct TrainSample {
  MultiChannelImage image;  // already at network resolution
  LabelMap label;
};

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> trace;
};

// Algorithm: initialize memberships from fold statistics (input block) and
// a warm-up forward over the first batch (feature block), then run
// epochs x floor(M/P) Adam steps over per-epoch reshuffles of the fold,
// decaying the rate each epoch. Deterministic for a fixed seed at one
// thread. Non-finite loss aborts with the failing epoch/batch in the
// message.
TrainResult train_network(Network& net, const std::vector<TrainSample>& fold);

// Per-pixel class distribution with its argmax labeling.
struct UnaryField {
  int width = 0;
  int height = 0;
  std::vector<double> probs;  // [class][y*width+x]
  LabelMap argmax;

  double prob_at(int cls, int x, int y) const {
    return probs[std::size_t(cls) * std::size_t(width) * std::size_t(height) +
                 std::size_t(y) * std::size_t(width) + std::size_t(x)];
  }
};

UnaryField infer(const Network& net, const MultiChannelImage& image);

Tensor image_to_tensor(const MultiChannelImage& image);
void write_loss_csv(const std::string& path, const std::vector<LossRecord>& trace);

}  // namespace fseg
