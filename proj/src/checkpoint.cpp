#include "ucm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace ucm {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

class Reader {
 public:
  Reader(std::istream& is, const std::filesystem::path& path) : is_(is), path_(path) {}

  void bytes(void* dst, size_t n) {
    if (!is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw std::runtime_error("truncated checkpoint: " + path_.string());
  }
  uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
  }
  std::string str(uint32_t limit) {
    const uint32_t n = u32();
    if (n > limit) throw std::runtime_error("corrupt checkpoint (string length): " + path_.string());
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::istream& is_;
  const std::filesystem::path& path_;
};

}  // namespace

void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = {{"spatial_stride", c.spatial_stride},
       {"temporal_stride", c.temporal_stride},
       {"channels", c.channels},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CodecConfig& c) {
  const CodecConfig d;
  c.spatial_stride = j.value("spatial_stride", d.spatial_stride);
  c.temporal_stride = j.value("temporal_stride", d.temporal_stride);
  c.channels = j.value("channels", d.channels);
  c.seed = j.value("seed", d.seed);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    nlohmann::json meta = ckpt.model;
    meta["codec"] = ckpt.codec;
    meta["step"] = ckpt.step;
    const std::string blob = meta.dump();
    os.write("UCMC", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(blob.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    put_u32(os, static_cast<uint32_t>(ckpt.params.all().size()));
    for (const auto& [name, p] : ckpt.params.all()) {
      put_u32(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(os, 2);
      put_u32(os, static_cast<uint32_t>(p.value.rows()));
      put_u32(os, static_cast<uint32_t>(p.value.cols()));
      for (Eigen::Index i = 0; i < p.value.size(); ++i) put_u32(os, std::bit_cast<uint32_t>(p.value.data()[i]));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader rd(is, path);
  char magic[4];
  rd.bytes(magic, 4);
  if (std::memcmp(magic, "UCMC", 4) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
  const uint32_t version = rd.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  Checkpoint ckpt;
  try {
    const nlohmann::json meta = nlohmann::json::parse(rd.str(1u << 20));
    ckpt.model = meta.get<ModelConfig>();
    ckpt.codec = meta.value("codec", nlohmann::json::object()).get<CodecConfig>();
    ckpt.step = meta.value("step", 0L);
    ckpt.model.validate();
    ckpt.codec.validate();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint config in " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("bad checkpoint config in " + path.string() + ": " + e.what());
  }
  std::mt19937_64 rng(0);
  const ParamStore<float> layout = init_model_params(ckpt.model, rng);
  const uint32_t sections = rd.u32();
  if (sections != layout.all().size())
    throw std::runtime_error("checkpoint " + path.string() + " has " + std::to_string(sections) +
                             " sections, config expects " + std::to_string(layout.all().size()));
  for (uint32_t s = 0; s < sections; ++s) {
    const std::string name = rd.str(4096);
    if (!layout.contains(name)) throw std::runtime_error("unknown section '" + name + "' in " + path.string());
    const auto& ref = layout.at(name).value;
    const uint32_t rank = rd.u32();
    if (rank != 2) throw std::runtime_error("section '" + name + "' has rank " + std::to_string(rank));
    const uint32_t rows = rd.u32(), cols = rd.u32();
    if (rows != ref.rows() || cols != ref.cols())
      throw std::runtime_error("section '" + name + "' shape mismatch in " + path.string());
    auto& p = ckpt.params.add(name, static_cast<int>(rows), static_cast<int>(cols), layout.at(name).decay);
    std::vector<unsigned char> raw(static_cast<size_t>(rows) * cols * 4);
    rd.bytes(raw.data(), raw.size());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const unsigned char* b = &raw[static_cast<size_t>(i) * 4];
      p.value.data()[i] =
          std::bit_cast<float>(uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24);
    }
  }
  return ckpt;
}

}  // namespace ucm
