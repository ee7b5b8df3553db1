#include "fseg/fcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>

#include "fseg/adam.hpp"
#include "fseg/nn_ops.hpp"

namespace fseg {

namespace {

ConvLayer make_conv(const std::string& name, int in, int out, int k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(in) * k * k);
  ConvLayer layer;
  layer.name = name;
  layer.w = Tensor::uniform({out, in, k, k}, -bound, bound, rng, true);
  layer.b = Tensor::zeros({out}, true);
  return layer;
}

Tensor apply(const ConvLayer& layer, const Tensor& x) {
  const int k = layer.w.dim(2);
  return conv2d(x, layer.w, layer.b, k / 2);
}

void push_membership(std::vector<NamedParam>& out, const std::string& prefix,
                     const MembershipParams& p) {
  if (p.kind == MembershipKind::Sigmoid) {
    out.push_back({prefix + ".slope", p.slope});
  } else {
    out.push_back({prefix + ".width", p.width});
  }
  out.push_back({prefix + ".center", p.center});
}

}  // namespace

void NetworkConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) {
    throw std::invalid_argument("in_channels must be 1 or 3");
  }
  if (width < 1 || depth < 1) throw std::invalid_argument("width and depth must be positive");
  if (image_size < (2 << depth) || image_size % (1 << depth) != 0) {
    throw std::invalid_argument("image_size " + std::to_string(image_size) +
                                " is not divisible by 2^depth with room for the bottleneck");
  }
  if (batch_size < 1 || epochs < 0) throw std::invalid_argument("bad batch_size/epochs");
  if (lr <= 0.0 || lr_decay <= 0.0 || lr_decay > 1.0) throw std::invalid_argument("bad learning rate");
}

Network build_network(const NetworkConfig& cfg) {
  cfg.validate();
  Network net;
  net.cfg_ = cfg;

  Rng master(cfg.seed);
  Rng wrng = master.fork(1);

  int in = cfg.in_channels;
  for (int level = 1; level <= cfg.depth; ++level) {
    const int w = cfg.width << (level - 1);
    net.encoder_.push_back(make_conv("enc" + std::to_string(level) + "a", in, w, 3, wrng));
    net.encoder_.push_back(make_conv("enc" + std::to_string(level) + "b", w, w, 3, wrng));
    in = w;
  }
  const int bottom = cfg.width << cfg.depth;
  net.bot_a_ = make_conv("bot_a", in, bottom, 3, wrng);
  net.bot_b_ = make_conv("bot_b", bottom, bottom, 3, wrng);

  in = bottom;
  for (int level = cfg.depth; level >= 1; --level) {
    const int w = cfg.width << (level - 1);
    net.up_.push_back(make_conv("up" + std::to_string(level), in, w, 3, wrng));
    net.decoder_.push_back(make_conv("dec" + std::to_string(level) + "a", 2 * w, w, 3, wrng));
    net.decoder_.push_back(make_conv("dec" + std::to_string(level) + "b", w, w, 3, wrng));
    in = w;
  }
  net.head_ = make_conv("head", cfg.width, kNumClasses, 1, wrng);

  net.fuzzy_ready_ = !cfg.fuzzy;  // the plain variant has nothing to seed
  return net;
}

Tensor Network::run(const Tensor& x, bool with_fuzzy) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.image_size || s[3] != cfg_.image_size) {
    throw std::invalid_argument("network expects [N," + std::to_string(cfg_.in_channels) + "," +
                                std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                                "], got " + shape_str(s));
  }
  if (with_fuzzy && !fuzzy_ready_) {
    throw std::logic_error("fuzzy membership parameters are not initialized");
  }

  Tensor cur = with_fuzzy ? fuzzy_block(x, fuzzy_in_) : x;
  std::vector<Tensor> skips;
  for (int level = 1; level <= cfg_.depth; ++level) {
    Tensor t = relu(apply(encoder_[std::size_t(2 * level - 2)], cur));
    if (level == 1 && with_fuzzy) t = fuzzy_block(t, fuzzy_feat_);
    t = relu(apply(encoder_[std::size_t(2 * level - 1)], t));
    skips.push_back(t);
    cur = maxpool2(t);
  }

  cur = relu(apply(bot_a_, cur));
  cur = relu(apply(bot_b_, cur));

  for (int level = cfg_.depth; level >= 1; --level) {
    const std::size_t i = std::size_t(cfg_.depth - level);
    cur = relu(apply(up_[i], upsample_nearest2(cur)));
    cur = concat_channels(cur, skips[std::size_t(level - 1)]);
    cur = relu(apply(decoder_[2 * i], cur));
    cur = relu(apply(decoder_[2 * i + 1], cur));
  }
  return apply(head_, cur);
}

Tensor Network::forward(const Tensor& x) const { return run(x, cfg_.fuzzy); }

Tensor Network::forward_without_fuzzy(const Tensor& x) const { return run(x, false); }

Tensor Network::first_features(const Tensor& x) const {
  if (!cfg_.fuzzy) throw std::logic_error("first_features is only meaningful for the fuzzy variant");
  Tensor cur = fuzzy_block(x, fuzzy_in_);
  return relu(apply(encoder_[0], cur));
}

std::vector<Tensor> Network::trainable_params() const {
  std::vector<Tensor> out;
  auto add = [&out](const ConvLayer& l) {
    out.push_back(l.w);
    out.push_back(l.b);
  };
  for (const auto& l : encoder_) add(l);
  add(bot_a_);
  add(bot_b_);
  for (const auto& l : up_) add(l);
  for (const auto& l : decoder_) add(l);
  add(head_);
  if (cfg_.fuzzy) {
    if (!fuzzy_ready_) throw std::logic_error("fuzzy membership parameters are not initialized");
    for (const Tensor& t : fuzzy_in_.trainable()) out.push_back(t);
    for (const Tensor& t : fuzzy_feat_.trainable()) out.push_back(t);
  }
  return out;
}

std::int64_t Network::param_count() const {
  std::int64_t n = 0;
  for (const Tensor& t : trainable_params()) n += t.numel();
  return n;
}

std::vector<NamedParam> Network::named_params() const {
  // _meta carries what is needed to rebuild the architecture at load time.
  std::vector<double> meta = {double(cfg_.in_channels), double(cfg_.width),  double(cfg_.depth),
                              double(cfg_.image_size),  cfg_.fuzzy ? 1.0 : 0.0,
                              cfg_.kind == MembershipKind::Gaussian ? 1.0 : 0.0,
                              cfg_.per_pixel_membership ? 1.0 : 0.0,
                              fuzzy_ready_ ? 1.0 : 0.0};
  std::vector<NamedParam> out;
  out.push_back({"_meta", Tensor({int(meta.size())}, meta)});

  auto add = [&out](const ConvLayer& l) {
    out.push_back({l.name + ".w", l.w});
    out.push_back({l.name + ".b", l.b});
  };
  for (const auto& l : encoder_) add(l);
  add(bot_a_);
  add(bot_b_);
  for (const auto& l : up_) add(l);
  for (const auto& l : decoder_) add(l);
  add(head_);
  if (cfg_.fuzzy && fuzzy_ready_) {
    push_membership(out, "fuzzy_in", fuzzy_in_);
    push_membership(out, "fuzzy_feat", fuzzy_feat_);
  }
  return out;
}

void Network::init_fuzzy_input(const CategoryStats& stats, Rng& rng) {
  if (!cfg_.fuzzy) return;
  if (stats.channels != cfg_.in_channels) {
    throw std::invalid_argument("fuzzy input statistics cover " + std::to_string(stats.channels) +
                                " channels, network has " + std::to_string(cfg_.in_channels));
  }
  fuzzy_in_ = init_membership_params(stats, cfg_.kind, cfg_.image_size, cfg_.image_size,
                                     cfg_.per_pixel_membership, rng);
}

void Network::init_fuzzy_features(const Tensor& warmup_activations, Rng& rng) {
  if (!cfg_.fuzzy) return;
  const CategoryStats stats = compute_channel_stats(warmup_activations, kNumClasses);
  if (stats.channels != cfg_.width) {
    throw std::invalid_argument("warm-up activations have " + std::to_string(stats.channels) +
                                " channels, expected " + std::to_string(cfg_.width));
  }
  fuzzy_feat_ = init_membership_params(stats, cfg_.kind, cfg_.image_size, cfg_.image_size,
                                       cfg_.per_pixel_membership, rng);
  fuzzy_ready_ = true;
}

void Network::clamp_membership_widths() {
  if (!cfg_.fuzzy || cfg_.kind != MembershipKind::Gaussian || !fuzzy_ready_) return;
  for (Tensor* t : {&fuzzy_in_.width, &fuzzy_feat_.width}) {
    for (double& v : t->data()) {
      if (v < kVarFloor) v = kVarFloor;
    }
  }
}

void Network::save(const std::string& path) const { save_checkpoint(path, named_params()); }

Network Network::load(const std::string& path) {
  std::vector<NamedParam> records = load_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (auto& r : records) by_name.emplace(r.name, r.tensor);

  auto meta_it = by_name.find("_meta");
  if (meta_it == by_name.end() || meta_it->second.numel() != 8) {
    throw std::runtime_error("checkpoint " + path + " has no architecture record");
  }
  const auto& m = meta_it->second.data();
  NetworkConfig cfg;
  cfg.in_channels = int(m[0]);
  cfg.width = int(m[1]);
  cfg.depth = int(m[2]);
  cfg.image_size = int(m[3]);
  cfg.fuzzy = m[4] != 0.0;
  cfg.per_pixel_membership = m[6] != 0.0;
  cfg.kind = m[5] != 0.0 ? MembershipKind::Gaussian : MembershipKind::Sigmoid;

  Network net = build_network(cfg);
  if (cfg.fuzzy) {
    if (m[7] == 0.0) {
      throw std::runtime_error("checkpoint " + path + " holds an uninitialized fuzzy network");
    }
    // Materialize membership tensors with the stored shapes, then fill below.
    const int ph = cfg.per_pixel_membership ? cfg.image_size : 1;
    const Shape in_shape{kNumClasses, cfg.in_channels, ph, ph};
    const Shape feat_shape{kNumClasses, cfg.width, ph, ph};
    auto blank = [](const Shape& s) {
      return Tensor::zeros(s, true);
    };
    net.fuzzy_in_.kind = cfg.kind;
    net.fuzzy_feat_.kind = cfg.kind;
    net.fuzzy_in_.center = blank(in_shape);
    net.fuzzy_feat_.center = blank(feat_shape);
    if (cfg.kind == MembershipKind::Sigmoid) {
      net.fuzzy_in_.slope = blank(in_shape);
      net.fuzzy_feat_.slope = blank(feat_shape);
    } else {
      net.fuzzy_in_.width = blank(in_shape);
      net.fuzzy_feat_.width = blank(feat_shape);
    }
    net.fuzzy_ready_ = true;
  }

  for (NamedParam& p : net.named_params()) {
    if (p.name == "_meta") continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint " + path + " is missing parameter " + p.name);
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw std::runtime_error("checkpoint parameter " + p.name + " has shape " +
                               shape_str(it->second.shape()) + ", network expects " +
                               shape_str(p.tensor.shape()));
    }
    p.tensor.data() = it->second.data();
    by_name.erase(it);
  }
  by_name.erase("_meta");
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint " + path + " has unknown parameter " +
                             by_name.begin()->first);
  }
  return net;
}

Tensor image_to_tensor(const MultiChannelImage& image) {
  const int d = int(image.channels.size());
  if (d == 0) throw std::invalid_argument("image has no channels");
  std::vector<double> data;
  data.reserve(std::size_t(d) * std::size_t(image.width) * std::size_t(image.height));
  for (const Plane& ch : image.channels) {
    if (ch.width != image.width || ch.height != image.height) {
      throw std::invalid_argument("channel extents differ from the image extents");
    }
    data.insert(data.end(), ch.values.begin(), ch.values.end());
  }
  return Tensor({1, d, image.height, image.width}, std::move(data));
}

namespace {

// Packs fold samples into flat input/one-hot buffers once, so batch
// assembly inside the epoch loop is a copy.
struct EncodedFold {
  int channels = 0, size = 0;
  std::size_t x_stride = 0, t_stride = 0;
  std::vector<double> x;  // [M][D*H*W]
  std::vector<double> t;  // [M][R*H*W]
};

EncodedFold encode_fold(const std::vector<TrainSample>& fold, const NetworkConfig& cfg) {
  EncodedFold enc;
  enc.channels = cfg.in_channels;
  enc.size = cfg.image_size;
  const std::size_t plane = std::size_t(cfg.image_size) * std::size_t(cfg.image_size);
  enc.x_stride = std::size_t(cfg.in_channels) * plane;
  enc.t_stride = std::size_t(kNumClasses) * plane;
  enc.x.resize(fold.size() * enc.x_stride);
  enc.t.assign(fold.size() * enc.t_stride, 0.0);

  for (std::size_t k = 0; k < fold.size(); ++k) {
    const TrainSample& s = fold[k];
    if (int(s.image.channels.size()) != cfg.in_channels || s.image.width != cfg.image_size ||
        s.image.height != cfg.image_size || s.label.width != cfg.image_size ||
        s.label.height != cfg.image_size) {
      throw std::invalid_argument("fold sample " + std::to_string(k) +
                                  " does not match the network resolution/channels");
    }
    double* xdst = enc.x.data() + k * enc.x_stride;
    for (int d = 0; d < cfg.in_channels; ++d) {
      const auto& vals = s.image.channels[std::size_t(d)].values;
      std::copy(vals.begin(), vals.end(), xdst + std::size_t(d) * plane);
    }
    double* tdst = enc.t.data() + k * enc.t_stride;
    for (std::size_t i = 0; i < plane; ++i) {
      const int cls = s.label.labels[i];
      if (cls >= kNumClasses) throw std::invalid_argument("label out of range in fold");
      tdst[std::size_t(cls) * plane + i] = 1.0;
    }
  }
  return enc;
}

}  // namespace

TrainResult train_network(Network& net, const std::vector<TrainSample>& fold) {
  const NetworkConfig& cfg = net.config();
  if (fold.empty()) throw std::invalid_argument("training fold is empty");

  const EncodedFold enc = encode_fold(fold, cfg);
  const int m = int(fold.size());
  const int p = cfg.batch_size;
  const int steps = m / p;

  Rng master(cfg.seed);
  Rng fuzzy_rng = master.fork(2);
  Rng shuffle_rng = master.fork(3);

  if (cfg.fuzzy && !net.fuzzy_ready()) {
    std::vector<MultiChannelImage> images;
    std::vector<LabelMap> labels;
    images.reserve(fold.size());
    for (const TrainSample& s : fold) {
      images.push_back(s.image);
      labels.push_back(s.label);
    }
    net.init_fuzzy_input(compute_category_stats(images, labels), fuzzy_rng);

    // Warm-up statistics for the feature block come from the first batch in
    // fold order, before any shuffling.
    const int warm = std::min(p, m);
    std::vector<double> xw;
    xw.reserve(std::size_t(warm) * enc.x_stride);
    for (int k = 0; k < warm; ++k) {
      xw.insert(xw.end(), enc.x.begin() + std::size_t(k) * enc.x_stride,
                enc.x.begin() + std::size_t(k + 1) * enc.x_stride);
    }
    Tensor xwt({warm, cfg.in_channels, cfg.image_size, cfg.image_size}, std::move(xw));
    NoGradGuard guard;
    net.init_fuzzy_features(net.first_features(xwt), fuzzy_rng);
  }

  std::vector<Tensor> params = net.trainable_params();
  AdamState opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[std::size_t(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (int batch = 0; batch < steps; ++batch) {
      std::vector<double> xb, tb;
      xb.reserve(std::size_t(p) * enc.x_stride);
      tb.reserve(std::size_t(p) * enc.t_stride);
      for (int j = 0; j < p; ++j) {
        const std::size_t k = std::size_t(order[std::size_t(batch * p + j)]);
        xb.insert(xb.end(), enc.x.begin() + k * enc.x_stride, enc.x.begin() + (k + 1) * enc.x_stride);
        tb.insert(tb.end(), enc.t.begin() + k * enc.t_stride, enc.t.begin() + (k + 1) * enc.t_stride);
      }
      Tensor x({p, cfg.in_channels, cfg.image_size, cfg.image_size}, std::move(xb));
      Tensor target({p, kNumClasses, cfg.image_size, cfg.image_size}, std::move(tb));

      for (Tensor& t : params) t.zero_grad();
      Tensor loss = cross_entropy(softmax_channels(net.forward(x)), target);
      const double loss_v = loss.scalar();
      if (!std::isfinite(loss_v)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + " batch " + std::to_string(batch));
      }
      loss.backward();
      opt.step(params);
      net.clamp_membership_widths();
      result.trace.push_back({epoch, batch, loss_v});
    }
    opt.set_lr(opt.lr() * cfg.lr_decay);
  }
  return result;
}

UnaryField infer(const Network& net, const MultiChannelImage& image) {
  NoGradGuard guard;
  Tensor probs = softmax_channels(net.forward(image_to_tensor(image)));

  UnaryField out;
  out.width = image.width;
  out.height = image.height;
  out.probs = probs.data();  // [1,R,H,W] flattens to [R][H*W]
  out.argmax = LabelMap(image.width, image.height);
  const std::size_t plane = std::size_t(image.width) * std::size_t(image.height);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    double best_p = out.probs[i];
    for (int r = 1; r < kNumClasses; ++r) {
      const double v = out.probs[std::size_t(r) * plane + i];
      if (v > best_p) {
        best_p = v;
        best = r;
      }
    }
    out.argmax.labels[i] = std::uint8_t(best);
  }
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& trace) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot create " + path);
  os << "epoch,batch,loss\n";
  char buf[64];
  for (const LossRecord& r : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    os << r.epoch << ',' << r.batch << ',' << buf << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace fseg
