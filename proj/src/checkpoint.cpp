#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "gcl/training.hpp"

namespace gcl {

namespace {

constexpr char kMagic[4] = {'G', 'C', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(k)])) << (8 * k);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  double f64() {
    std::uint64_t bits = uint(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw IntegrityError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ShapeError("checkpoint has no tensor '" + std::string(name) + "'");
}

void Checkpoint::put(std::string name, Tensor tensor) {
  for (auto& t : tensors)
    if (t.name == name) {
      t.tensor = std::move(tensor);
      return;
    }
  tensors.push_back({std::move(name), std::move(tensor)});
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, 4);
  put_u32(out, ck.version);
  for (const auto& [name, t] : ck.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) put_f64(out, v);
  }
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12) throw IntegrityError("checkpoint truncated");
  if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) throw IntegrityError("not a checkpoint (bad magic)");
  Reader header(bytes.substr(4, 4));
  const auto version = static_cast<std::uint32_t>(header.uint(4));
  if (version != Checkpoint::kVersion) throw VersionError(version, Checkpoint::kVersion);

  const auto body = bytes.substr(0, bytes.size() - 4);
  Reader trailer(bytes.substr(bytes.size() - 4));
  if (static_cast<std::uint32_t>(trailer.uint(4)) != crc32_of(body)) throw IntegrityError("checkpoint checksum mismatch");

  Checkpoint ck;
  ck.version = version;
  Reader in(body.substr(8));
  while (in.remaining() > 0) {
    const auto name_len = in.uint(4);
    std::string name(in.take(name_len));
    const auto rank = in.uint(4);
    if (rank > 2) throw IntegrityError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      const auto d = in.uint(8);
      if (d == 0 || d > (1ull << 31)) throw IntegrityError("tensor '" + name + "' has invalid extent");
      shape.push_back(static_cast<Index>(d));
      count *= d;
    }
    if (count * 8 > in.remaining()) throw IntegrityError("checkpoint truncated");
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data()) v = in.f64();
    ck.tensors.push_back({std::move(name), std::move(t)});
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  const auto bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

namespace {

Tensor vec(const std::vector<double>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) m(0, static_cast<Index>(k)) = v[k];
  Shape shape{m.cols()};
  return Tensor(std::move(shape), std::move(m));
}

std::vector<double> unvec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// 64-bit seeds are split into 32-bit halves so they survive the f64 round trip.
void put_seed(std::vector<double>& out, std::uint64_t seed) {
  out.push_back(static_cast<double>(seed >> 32));
  out.push_back(static_cast<double>(seed & 0xFFFFFFFFull));
}

std::uint64_t get_seed(const std::vector<double>& v, std::size_t at) {
  return (static_cast<std::uint64_t>(v.at(at)) << 32) | static_cast<std::uint64_t>(v.at(at + 1));
}

void store_mlp(Checkpoint& ck, const std::string& prefix, const Mlp& net, std::vector<double> meta) {
  meta.push_back(net.activation == Activation::relu ? 0.0 : 1.0);
  for (Index w : net.widths) meta.push_back(static_cast<double>(w));
  ck.put(prefix + ".meta", vec(meta));
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    ck.put(prefix + ".layer" + std::to_string(k) + ".weight", net.layers[k].weight);
    ck.put(prefix + ".layer" + std::to_string(k) + ".bias", net.layers[k].bias);
  }
}

Mlp load_mlp(const Checkpoint& ck, const std::string& prefix, std::size_t skip) {
  const auto meta = unvec(ck.at(prefix + ".meta"));
  if (meta.size() < skip + 3) throw ShapeError("checkpoint '" + prefix + ".meta' is malformed");
  Mlp net;
  net.activation = meta[skip] == 0.0 ? Activation::relu : Activation::tanh;
  for (std::size_t k = skip + 1; k < meta.size(); ++k) net.widths.push_back(static_cast<Index>(meta[k]));
  for (std::size_t k = 0; k + 1 < net.widths.size(); ++k) {
    DenseLayer layer{ck.at(prefix + ".layer" + std::to_string(k) + ".weight"),
                     ck.at(prefix + ".layer" + std::to_string(k) + ".bias")};
    if (layer.weight.shape() != Shape{net.widths[k], net.widths[k + 1]} || layer.bias.shape() != Shape{net.widths[k + 1]})
      throw ShapeError("checkpoint layer '" + prefix + ".layer" + std::to_string(k) + "' does not match its widths");
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace

void store_encoder(Checkpoint& ck, const EncoderParams& encoder) {
  store_mlp(ck, "encoder", encoder.net, {encoder.pooling == Pooling::mean ? 0.0 : 1.0});
}

EncoderParams load_encoder(const Checkpoint& ck) {
  EncoderParams enc;
  enc.pooling = ck.at("encoder.meta").data()[0] == 0.0 ? Pooling::mean : Pooling::last;
  enc.net = load_mlp(ck, "encoder", 1);
  return enc;
}

void store_regression_head(Checkpoint& ck, const RegressionHead& head) {
  ck.put("regression.weight", head.layer.weight);
  ck.put("regression.bias", head.layer.bias);
}

RegressionHead load_regression_head(const Checkpoint& ck) {
  RegressionHead head{{ck.at("regression.weight"), ck.at("regression.bias")}};
  head.layer.weight.set_requires_grad(true);
  head.layer.bias.set_requires_grad(true);
  return head;
}

void store_classifier(Checkpoint& ck, const ClassifierHead& head) { store_mlp(ck, "classifier", head.net, {}); }

bool has_classifier(const Checkpoint& ck) { return ck.find("classifier.meta") != nullptr; }

ClassifierHead load_classifier(const Checkpoint& ck) { return ClassifierHead{load_mlp(ck, "classifier", 0)}; }

void store_adam(Checkpoint& ck, std::string_view prefix, const AdamState& state) {
  const std::string p(prefix);
  ck.put(p + ".step", Tensor::scalar(static_cast<double>(state.step)));
  for (std::size_t k = 0; k < state.m.size(); ++k) {
    ck.put(p + ".m" + std::to_string(k), Tensor::matrix(state.m[k]));
    ck.put(p + ".v" + std::to_string(k), Tensor::matrix(state.v[k]));
  }
}

void store_train_config(Checkpoint& ck, const TrainConfig& c) {
  std::vector<double> v{static_cast<double>(c.batch_size),
                        c.lr,
                        static_cast<double>(c.epochs),
                        c.eta_min,
                        c.adam.beta1,
                        c.adam.beta2,
                        c.adam.eps};
  put_seed(v, c.seed);
  v.insert(v.end(), {static_cast<double>(c.loss.mode), static_cast<double>(c.loss.similarity), c.loss.epsilon,
                     c.loss.sim_floor, c.loss.alpha, c.freeze_encoder ? 1.0 : 0.0});
  ck.put("meta.train_config", vec(v));
}

TrainConfig load_train_config(const Checkpoint& ck) {
  const auto v = unvec(ck.at("meta.train_config"));
  if (v.size() != 15) throw ShapeError("checkpoint 'meta.train_config' is malformed");
  TrainConfig c;
  c.batch_size = static_cast<int>(v[0]);
  c.lr = v[1];
  c.epochs = static_cast<int>(v[2]);
  c.eta_min = v[3];
  c.adam = {v[4], v[5], v[6]};
  c.seed = get_seed(v, 7);
  c.loss.mode = static_cast<LossMode>(static_cast<int>(v[9]));
  c.loss.similarity = static_cast<SimilarityKind>(static_cast<int>(v[10]));
  c.loss.epsilon = v[11];
  c.loss.sim_floor = v[12];
  c.loss.alpha = v[13];
  c.freeze_encoder = v[14] != 0.0;
  return c;
}

void store_data_config(Checkpoint& ck, const DataConfig& c) {
  std::vector<double> v{c.stats.hs_min, c.stats.hs_max, c.stats.higher_is_better ? 1.0 : 0.0};
  put_seed(v, c.split_seed);
  v.insert(v.end(), c.fractions.values.begin(), c.fractions.values.end());
  v.push_back(c.labels.mode == LabelMode::bin ? 0.0 : 1.0);
  v.push_back(c.labels.tau);
  ck.put("meta.data_config", vec(v));
}

DataConfig load_data_config(const Checkpoint& ck) {
  const auto v = unvec(ck.at("meta.data_config"));
  if (v.size() != 10) throw ShapeError("checkpoint 'meta.data_config' is malformed");
  DataConfig c;
  c.stats = {v[0], v[1], v[2] != 0.0};
  c.split_seed = get_seed(v, 3);
  c.fractions.values = {v[5], v[6], v[7]};
  c.labels = {v[8] == 0.0 ? LabelMode::bin : LabelMode::threshold, v[9]};
  return c;
}

}  // namespace gcl
