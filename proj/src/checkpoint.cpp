#include "dust/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dust {
namespace {

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_) + " of " + std::to_string(b_.size()));
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_params(const ParamSet& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const auto& t = params.tensors()[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (float v : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamSet deserialize_params(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>("record count");
  ParamSet params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(len, "name");
    if (r.get<std::uint8_t>("dtype") != kDtypeF32) throw CheckpointError(name + ": unsupported dtype");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("dims");
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) throw CheckpointError(name + ": payload exceeds file length");
    std::vector<float> v(n);
    for (auto& x : v) x = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    params.add(std::move(name), Tensor(std::move(shape), std::move(v)));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return params;
}

UNetConfig infer_config(const ParamSet& params) {
  UNetConfig cfg;
  cfg.depth = 0;
  while (params.has("enc" + std::to_string(cfg.depth) + ".conv0.weight")) ++cfg.depth;
  if (cfg.depth == 0 || !params.has("main.head.weight")) {
    throw CheckpointError("checkpoint does not hold a dual-decoder network");
  }
  cfg.base_channels = params.get("enc0.conv0.weight").dim(0);
  cfg.n_classes = params.get("main.head.weight").dim(0);
  cfg.instance_norm = params.has("enc0.norm0.gamma");
  auto kind = [&](const std::string& prefix) {
    return params.has(prefix + ".up0.weight") ? UpsampleKind::TransposedConv : UpsampleKind::Bilinear;
  };
  cfg.main_upsample = kind("main");
  cfg.aux_upsample = kind("aux");
  return cfg;
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(model.params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  ModelParams model;
  try {
    model.params = deserialize_params(bytes);
    model.config = infer_config(model.params);
    validate(model.config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  const ModelParams layout = init_params(model.config, 0);
  if (layout.params.names() != model.params.names()) {
    throw CheckpointError(path.string() + ": parameter names do not match the inferred architecture");
  }
  for (std::size_t i = 0; i < layout.params.size(); ++i) {
    if (layout.params.tensors()[i].shape() != model.params.tensors()[i].shape()) {
      throw CheckpointError(path.string() + ": " + layout.params.names()[i] + " has shape " +
                            shape_str(model.params.tensors()[i].shape()) + ", expected " +
                            shape_str(layout.params.tensors()[i].shape()));
    }
  }
  return model;
}

}  // namespace dust
