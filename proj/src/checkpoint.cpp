#include "mvt/checkpoint.hpp"

#include "mvt/binary_io.hpp"

namespace mvt {

namespace {

constexpr std::string_view kMagic = "MVTC";
constexpr std::uint8_t kTagF32 = 1;
constexpr std::uint8_t kTagF64 = 2;

template <typename Scalar>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<Scalar, float> ? kTagF32 : kTagF64;
}

MVTConfig read_header(io::ByteReader& r, const std::string& context) {
  if (r.bytes(4) != kMagic) throw FormatError(context + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(context + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::string json_text = r.str();
  try {
    return nlohmann::json::parse(json_text).get<MVTConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(context + ": malformed configuration block: " + e.what());
  }
}

}  // namespace

template <typename Scalar>
std::string encode_checkpoint(const MVTConfig& config, const ParamStore<Scalar>& params) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.str(nlohmann::json(config).dump());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u8(dtype_tag<Scalar>());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
    for (Index i = 0; i < t.size(); ++i) {
      if constexpr (std::is_same_v<Scalar, float>) w.f32(t[i]);
      else w.f64(t[i]);
    }
  }
  io::seal(w);
  return w.take();
}

template <typename Scalar>
MVTModel<Scalar> decode_checkpoint(std::string_view bytes, const std::string& context) {
  io::ByteReader r(io::unseal(bytes, context), context);
  MVTConfig config = read_header(r, context);
  const std::uint32_t count = r.u32();
  ParamStore<Scalar> params;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = r.str();
    const std::uint8_t tag = r.u8();
    if (tag != kTagF32 && tag != kTagF64) {
      throw FormatError(context + ": entry " + name + " has unknown dtype tag " + std::to_string(tag));
    }
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError(context + ": entry " + name + " has invalid rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t extent = r.u64();
      if (extent == 0 || extent > (1ull << 40)) throw FormatError(context + ": entry " + name + " has invalid extent");
      shape.push_back(static_cast<Index>(extent));
    }
    const Index n = shape_size(shape);
    const std::size_t elem = tag == kTagF32 ? 4 : 8;
    if (static_cast<std::size_t>(n) * elem > r.remaining()) {
      throw FormatError(context + ": entry " + name + " is truncated");
    }
    Tensor<Scalar> t(shape);
    for (Index i = 0; i < n; ++i) t[i] = static_cast<Scalar>(tag == kTagF32 ? r.f32() : r.f64());
    if (!params.emplace(std::move(name), std::move(t)).second) {
      throw FormatError(context + ": duplicate parameter entry");
    }
  }
  if (r.remaining() != 0) throw FormatError(context + ": trailing bytes after last entry");
  try {
    return MVTModel<Scalar>(std::move(config), std::move(params));
  } catch (const ConfigError& e) {
    throw FormatError(context + ": " + e.what());
  }
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const MVTModel<Scalar>& model) {
  io::write_file(path, encode_checkpoint(model.config(), model.params()));
}

template <typename Scalar>
MVTModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<Scalar>(io::read_file(path), path.string());
}

MVTConfig peek_checkpoint_config(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::ByteReader r(io::unseal(bytes, path.string()), path.string());
  return read_header(r, path.string());
}

template std::string encode_checkpoint(const MVTConfig&, const ParamStore<float>&);
template std::string encode_checkpoint(const MVTConfig&, const ParamStore<double>&);
template MVTModel<float> decode_checkpoint<float>(std::string_view, const std::string&);
template MVTModel<double> decode_checkpoint<double>(std::string_view, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const MVTModel<float>&);
template void save_checkpoint(const std::filesystem::path&, const MVTModel<double>&);
template MVTModel<float> load_checkpoint<float>(const std::filesystem::path&);
template MVTModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace mvt
