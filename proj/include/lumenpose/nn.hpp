#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lumenpose/errors.hpp"
#include "lumenpose/rng.hpp"
#include "lumenpose/tensor.hpp"

namespace lumenpose {

// Named parameter registry. Trainable entries are touched by the optimizer;
// non-trainable entries (batch norm running stats) only travel through
// checkpoints.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
  };

  void add(std::string name, Tensor<S> t, bool trainable = true) {
    for (const auto& e : entries_)
      if (e.name == name) throw Error("ParamStore: duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(t), trainable});
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Tensor<S>> trainable_tensors() const {
    std::vector<Tensor<S>> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.tensor);
    return out;
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Checkpoint format: <path>.bin holds the fp32 values of all entries
  // back to back; <path>.json is the header, an array of
  // {name, shape, offset} with offsets counted in elements.
  void save(const std::filesystem::path& path_prefix) const {
    nlohmann::json header = nlohmann::json::array();
    std::ofstream bin(path_prefix.string() + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint for writing: " + path_prefix.string() + ".bin");
    std::int64_t offset = 0;
    for (const auto& e : entries_) {
      nlohmann::json item;
      item["name"] = e.name;
      item["shape"] = e.tensor.shape();
      item["offset"] = offset;
      item["trainable"] = e.trainable;
      header.push_back(item);
      std::vector<float> buf(e.tensor.values().size());
      for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<float>(e.tensor.values()[i]);
      bin.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
      offset += e.tensor.numel();
    }
    std::ofstream js(path_prefix.string() + ".json");
    if (!js) throw IoError("cannot open checkpoint header: " + path_prefix.string() + ".json");
    js << header.dump(2) << "\n";
  }

  void load(const std::filesystem::path& path_prefix) {
    std::ifstream js(path_prefix.string() + ".json");
    if (!js) throw IoError("cannot open checkpoint header: " + path_prefix.string() + ".json");
    nlohmann::json header = nlohmann::json::parse(js);
    std::ifstream bin(path_prefix.string() + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot open checkpoint: " + path_prefix.string() + ".bin");
    if (header.size() != entries_.size())
      throw IoError("checkpoint has " + std::to_string(header.size()) + " entries, model has " +
                    std::to_string(entries_.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& item = header[i];
      auto& e = entries_[i];
      if (item.at("name").get<std::string>() != e.name)
        throw IoError("checkpoint entry '" + item.at("name").get<std::string>() +
                      "' does not match model parameter '" + e.name + "'");
      Shape shape = item.at("shape").get<Shape>();
      if (shape != e.tensor.shape())
        throw IoError("checkpoint shape mismatch for '" + e.name + "'");
      bin.seekg(item.at("offset").get<std::int64_t>() * static_cast<std::int64_t>(sizeof(float)));
      std::vector<float> buf(e.tensor.values().size());
      bin.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!bin) throw IoError("checkpoint truncated while reading '" + e.name + "'");
      for (std::size_t k = 0; k < buf.size(); ++k)
        e.tensor.values()[k] = static_cast<S>(buf[k]);
    }
  }

 private:
  std::vector<Entry> entries_;
};

// Adam with bias correction. adam_step consumes and zeroes the gradients.
template <class S>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<S>> m, v;

  explicit AdamState(double lr_ = 1e-4) : lr(lr_) {}

  void init_like(const std::vector<Tensor<S>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.values().size(), S(0));
      v.emplace_back(p.values().size(), S(0));
    }
  }
};

template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& st) {
  if (st.m.size() != params.size()) {
    st.init_like(params);
  }
  st.step_count += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.requires_grad()) continue;
    auto& pv = p.values();
    auto& pg = p.grad();
    auto& m = st.m[pi];
    auto& v = st.v[pi];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double g = static_cast<double>(pg[i]);
      m[i] = static_cast<S>(st.beta1 * static_cast<double>(m[i]) + (1.0 - st.beta1) * g);
      v[i] = static_cast<S>(st.beta2 * static_cast<double>(v[i]) + (1.0 - st.beta2) * g * g);
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      pv[i] = static_cast<S>(static_cast<double>(pv[i]) - st.lr * mhat / (std::sqrt(vhat) + st.eps));
      pg[i] = S(0);
    }
  }
}

namespace init {

// He-uniform for conv/relu stacks.
template <class S>
Tensor<S> he_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from(std::move(shape), std::move(v), true);
}

// Glorot-uniform for linear and recurrent maps.
template <class S>
Tensor<S> glorot_uniform(Rng& rng, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from(std::move(shape), std::move(v), true);
}

template <class S>
Tensor<S> zeros_param(Shape shape) {
  return Tensor<S>::zeros(std::move(shape), true);
}

template <class S>
Tensor<S> ones_param(Shape shape) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape), true);
  std::fill(t.values().begin(), t.values().end(), S(1));
  return t;
}

}  // namespace init

template <class S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng)
      : w(init::glorot_uniform<S>(rng, {in, out}, in, out)), b(init::zeros_param<S>({out})) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const {
    return ops::linear(tape, x, w, b);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

template <class S>
struct Conv2dLayer {
  Tensor<S> w, b;
  int stride = 1, pad = 0, groups = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t in_ch, std::int64_t out_ch, int k, int stride_, int pad_, int groups_,
              Rng& rng)
      : stride(stride_), pad(pad_), groups(groups_) {
    if (groups_ < 1 || in_ch % groups_ != 0 || out_ch % groups_ != 0)
      throw ConfigError("Conv2dLayer: channels not divisible by groups");
    const std::int64_t cg = in_ch / groups_;
    w = init::he_uniform<S>(rng, {out_ch, cg, k, k}, cg * k * k);
    b = init::zeros_param<S>({out_ch});
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const {
    return ops::conv2d(tape, x, w, b, stride, pad, groups);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

template <class S>
struct Conv3dLayer {
  Tensor<S> w, b;
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};

  Conv3dLayer() = default;
  Conv3dLayer(std::int64_t in_ch, std::int64_t out_ch, std::array<int, 3> k,
              std::array<int, 3> stride_, std::array<int, 3> pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = init::he_uniform<S>(rng, {out_ch, in_ch, k[0], k[1], k[2]},
                            in_ch * k[0] * k[1] * k[2]);
    b = init::zeros_param<S>({out_ch});
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const {
    return ops::conv3d(tape, x, w, b, stride, pad);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

template <class S>
struct BatchNormLayer {
  Tensor<S> gamma, beta;
  Tensor<S> run_mean, run_var;  // non-trainable state
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::int64_t channels)
      : gamma(init::ones_param<S>({channels})),
        beta(init::zeros_param<S>({channels})),
        run_mean(Tensor<S>::zeros({channels})),
        run_var(init::ones_param<S>({channels})) {
    run_var.set_requires_grad(false);
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, bool training) {
    return ops::batch_norm(tape, x, gamma, beta, run_mean.values(), run_var.values(), training,
                           momentum, eps);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add(prefix + ".run_mean", run_mean, /*trainable=*/false);
    ps.add(prefix + ".run_var", run_var, /*trainable=*/false);
  }
};

template <class S>
struct DropoutLayer {
  double rate = 0.0;
  std::uint64_t seed_base = 0;
  std::uint64_t counter = 0;

  DropoutLayer() = default;
  DropoutLayer(double rate_, std::uint64_t seed) : rate(rate_), seed_base(seed) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, bool training) {
    if (!training || rate == 0.0) return x;
    return ops::dropout(tape, x, rate, true, derive_seed(seed_base, counter++));
  }
};

template <class S>
struct LstmCellLayer {
  Tensor<S> wx, wh, b;
  std::int64_t hidden = 0;

  LstmCellLayer() = default;
  LstmCellLayer(std::int64_t input, std::int64_t hidden_, Rng& rng) : hidden(hidden_) {
    wx = init::glorot_uniform<S>(rng, {input, 4 * hidden_}, input, hidden_);
    wh = init::glorot_uniform<S>(rng, {hidden_, 4 * hidden_}, hidden_, hidden_);
    b = init::zeros_param<S>({4 * hidden_});
    // Forget gate bias starts at 1 so early training does not erase state.
    for (std::int64_t i = hidden_; i < 2 * hidden_; ++i)
      b.values()[static_cast<std::size_t>(i)] = S(1);
  }

  ops::LstmStep<S> forward(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& h,
                           const Tensor<S>& c) const {
    return ops::lstm_cell(tape, x, h, c, wx, wh, b);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".wx", wx);
    ps.add(prefix + ".wh", wh);
    ps.add(prefix + ".b", b);
  }
};

template <class S>
struct ConvLstmCellLayer {
  Tensor<S> wx, wh, b;
  std::int64_t hidden_channels = 0;
  int k = 3;

  ConvLstmCellLayer() = default;
  ConvLstmCellLayer(std::int64_t in_ch, std::int64_t hidden_ch, int k_, Rng& rng)
      : hidden_channels(hidden_ch), k(k_) {
    wx = init::he_uniform<S>(rng, {4 * hidden_ch, in_ch, k_, k_}, in_ch * k_ * k_);
    wh = init::he_uniform<S>(rng, {4 * hidden_ch, hidden_ch, k_, k_}, hidden_ch * k_ * k_);
    b = init::zeros_param<S>({4 * hidden_ch});
    for (std::int64_t i = hidden_ch; i < 2 * hidden_ch; ++i)
      b.values()[static_cast<std::size_t>(i)] = S(1);
  }

  ops::LstmStep<S> forward(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& h,
                           const Tensor<S>& c) const {
    return ops::conv_lstm_cell(tape, x, h, c, wx, wh, b);
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".wx", wx);
    ps.add(prefix + ".wh", wh);
    ps.add(prefix + ".b", b);
  }
};

}  // namespace lumenpose
