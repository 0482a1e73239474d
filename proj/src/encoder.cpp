#include "vision/encoder.hpp"

#include <cmath>
#include <random>

#include "vision/binio.hpp"

namespace vision {

namespace {

constexpr std::size_t kEvalChunk = 8;

const char* const kSlotNames[8] = {"conv1.weight", "conv1.bias",  "conv2.weight",
                                   "conv2.bias",   "bn.gamma",    "bn.beta",
                                   "bn.running_mean", "bn.running_var"};

std::string tensor_name(std::size_t block, std::size_t slot) {
  return "block" + std::to_string(block + 1) + "." + kSlotNames[slot];
}

// Canonical layout (names, shapes, ranks) for a config, zero-filled.
std::vector<Param<float>> layout(const EncoderConfig& cfg) {
  std::vector<Param<float>> out;
  std::size_t cin = static_cast<std::size_t>(cfg.input_channels);
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t cb = static_cast<std::size_t>(cfg.block_channels[b]);
    const Shape4 vec{cb, 1, 1, 1};
    out.emplace_back(tensor_name(b, 0), Tensor4<float>(Shape4{cb, cin, 3, 3}), 4);
    out.emplace_back(tensor_name(b, 1), Tensor4<float>(vec), 1);
    out.emplace_back(tensor_name(b, 2), Tensor4<float>(Shape4{cb, cb, 3, 3}), 4);
    out.emplace_back(tensor_name(b, 3), Tensor4<float>(vec), 1);
    out.emplace_back(tensor_name(b, 4), Tensor4<float>(vec, 1.0f), 1);
    out.emplace_back(tensor_name(b, 5), Tensor4<float>(vec), 1);
    out.emplace_back(tensor_name(b, 6), Tensor4<float>(vec), 1, false);
    out.emplace_back(tensor_name(b, 7), Tensor4<float>(vec, 1.0f), 1, false);
    cin = cb;
  }
  return out;
}

std::vector<std::uint32_t> logical_dims(const Param<float>& p) {
  const Shape4 s = p.value.shape();
  if (p.rank == 1) return {static_cast<std::uint32_t>(s.n)};
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

template <typename T>
void check_input(const EncoderConfig& cfg, const Shape4& s) {
  if (s.c != static_cast<std::size_t>(cfg.input_channels)) {
    throw ShapeError("encoder expects " + std::to_string(cfg.input_channels) +
                     " input channel(s), got " + std::to_string(s.c));
  }
  if (s.h < kMinEncoderInput || s.w < kMinEncoderInput) {
    throw ShapeError("encoder input must be at least 16x16, got " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
  }
}

template <typename T>
Var build_forward(Tape<T>& tape, BasicEncoderWeights<T>& w, Tensor4<T> input, Mode mode) {
  Var x = tape.input(std::move(input));
  for (std::size_t b = 0; b < 4; ++b) {
    x = tape.conv2d(x, tape.param(w.at(b, 0)), tape.param(w.at(b, 1)));
    x = tape.relu(x);
    x = tape.conv2d(x, tape.param(w.at(b, 2)), tape.param(w.at(b, 3)));
    x = tape.relu(x);
    x = tape.maxpool2(x);
    x = tape.batchnorm(x, tape.param(w.at(b, 4)), tape.param(w.at(b, 5)), w.at(b, 6), w.at(b, 7),
                       mode);
  }
  return tape.global_avg_pool(x);
}

}  // namespace

void EncoderConfig::validate() const {
  if (input_channels != 1 && input_channels != 2) {
    throw ConfigError("encoder input_channels must be 1 or 2, got " +
                      std::to_string(input_channels));
  }
  for (int c : block_channels) {
    if (c <= 0) throw ConfigError("encoder block widths must be positive");
  }
}

std::string EncoderConfig::describe() const {
  return "in=" + std::to_string(input_channels) + ";blocks=" + std::to_string(block_channels[0]) +
         "," + std::to_string(block_channels[1]) + "," + std::to_string(block_channels[2]) + "," +
         std::to_string(block_channels[3]) + ";k=3;order=conv-relu-conv-relu-pool-bn;gap";
}

std::uint64_t EncoderConfig::fingerprint() const { return binio::fnv1a(describe()); }

std::size_t EncoderConfig::parameter_count() const {
  std::size_t total = 0;
  std::size_t cin = static_cast<std::size_t>(input_channels);
  for (int c : block_channels) {
    const std::size_t cb = static_cast<std::size_t>(c);
    total += 9 * cin * cb + cb + 9 * cb * cb + cb + 2 * cb;
    cin = cb;
  }
  return total;
}

template <typename T>
std::vector<Param<T>*> BasicEncoderWeights<T>::trainable() {
  std::vector<Param<T>*> out;
  for (auto& p : tensors) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

template <typename T>
void BasicEncoderWeights<T>::zero_grad() {
  for (auto& p : tensors) p.zero_grad();
}

EncoderWeights init_weights(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderWeights w;
  w.config = config;
  w.tensors = layout(config);
  std::mt19937_64 rng(seed);
  for (auto& p : w.tensors) {
    if (p.rank != 4) continue;
    const double fan_in = static_cast<double>(p.value.shape().c * 9);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<float>(normal(rng));
  }
  return w;
}

template <typename T>
EncoderPass<T>::EncoderPass(BasicEncoderWeights<T>& weights, Tensor4<T> input, Mode mode) {
  check_input<T>(weights.config, input.shape());
  out_ = build_forward(tape_, weights, std::move(input), mode);
}

template <typename T>
void EncoderPass<T>::backward(const Tensor4<T>& grad_features) {
  tape_.backward(out_, grad_features);
}

template <typename T>
Tensor4<T> encode(BasicEncoderWeights<T>& weights, const Tensor4<T>& input, Mode mode) {
  check_input<T>(weights.config, input.shape());
  if (mode == Mode::eval) return encode(static_cast<const BasicEncoderWeights<T>&>(weights), input);
  Tape<T> tape;
  const Var out = build_forward(tape, weights, input, mode);
  return tape.value(out);
}

template <typename T>
Tensor4<T> encode(const BasicEncoderWeights<T>& weights, const Tensor4<T>& input) {
  const Shape4 s = input.shape();
  check_input<T>(weights.config, s);
  // Eval mode reads but never writes the parameters; a private copy lets the
  // tape bind them without exposing mutable access.
  BasicEncoderWeights<T> local = weights;
  const std::size_t dim = static_cast<std::size_t>(weights.config.feature_dim());
  Tensor4<T> out(Shape4{s.n, dim, 1, 1});
  const std::size_t item = s.c * s.plane();
  for (std::size_t start = 0; start < s.n; start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, s.n - start);
    std::vector<T> chunk(input.data() + start * item, input.data() + (start + count) * item);
    Tape<T> tape;
    const Var v =
        build_forward(tape, local, Tensor4<T>(Shape4{count, s.c, s.h, s.w}, std::move(chunk)),
                      Mode::eval);
    const Tensor4<T>& f = tape.value(v);
    std::copy(f.data(), f.data() + f.size(), out.data() + start * dim);
  }
  return out;
}

void save_weights(const EncoderWeights& weights, const std::string& path) {
  binio::Writer out(path);
  out.magic("VSNW");
  out.u32(kWeightsVersion);
  out.u64(weights.config.fingerprint());
  for (const auto& p : weights.tensors) {
    out.str(p.name);
    const auto dims = logical_dims(p);
    out.u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) out.u32(d);
    out.bytes(p.value.data(), p.value.size() * sizeof(float));
  }
  out.close();
}

EncoderWeights load_weights(const std::string& path) {
  binio::Reader in(path);
  in.expect_magic("VSNW");
  const std::uint32_t version = in.u32("version");
  if (version != kWeightsVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kWeightsVersion) + ")");
  }
  const std::uint64_t fingerprint = in.u64("fingerprint");

  struct Raw {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::vector<Raw> raw;
  while (!in.at_end()) {
    Raw r;
    r.name = in.str("tensor name", 256);
    const std::uint32_t rank = in.u32("tensor rank");
    if (rank != 1 && rank != 4) {
      throw FormatError(path + ": tensor " + r.name + " has unsupported rank " +
                        std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.dims.push_back(in.u32("tensor dims"));
      count *= r.dims.back();
    }
    if (count == 0 || count > (std::size_t{1} << 28)) {
      throw FormatError(path + ": tensor " + r.name + " has implausible size");
    }
    r.data.resize(count);
    in.bytes(r.data.data(), count * sizeof(float), "tensor payload");
    raw.push_back(std::move(r));
  }
  if (raw.size() != 32 || raw[0].dims.size() != 4) {
    throw FormatError(path + ": expected 32 tensors in canonical encoder order, found " +
                      std::to_string(raw.size()));
  }

  EncoderConfig cfg;
  cfg.input_channels = static_cast<int>(raw[0].dims[1]);
  for (std::size_t b = 0; b < 4; ++b) {
    if (raw[b * 8].dims.size() != 4) throw FormatError(path + ": malformed kernel tensor");
    cfg.block_channels[b] = static_cast<int>(raw[b * 8].dims[0]);
  }
  if (cfg.fingerprint() != fingerprint) {
    throw FormatError(path + ": architecture fingerprint mismatch (file header does not match " +
                      "tensor layout " + cfg.describe() + ")");
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path + ": " + e.what());
  }

  EncoderWeights w;
  w.config = cfg;
  w.tensors = layout(cfg);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Param<float>& p = w.tensors[i];
    if (raw[i].name != p.name || raw[i].dims != logical_dims(p)) {
      throw FormatError(path + ": tensor " + std::to_string(i) + " is \"" + raw[i].name +
                        "\" with unexpected name or shape (expected \"" + p.name + "\")");
    }
    std::copy(raw[i].data.begin(), raw[i].data.end(), p.value.data());
  }
  return w;
}

template struct BasicEncoderWeights<float>;
template struct BasicEncoderWeights<double>;
template class EncoderPass<float>;
template class EncoderPass<double>;
template Tensor4<float> encode(BasicEncoderWeights<float>&, const Tensor4<float>&, Mode);
template Tensor4<double> encode(BasicEncoderWeights<double>&, const Tensor4<double>&, Mode);
template Tensor4<float> encode(const BasicEncoderWeights<float>&, const Tensor4<float>&);
template Tensor4<double> encode(const BasicEncoderWeights<double>&, const Tensor4<double>&);

}  // namespace vision
