#include "ucm/config.hpp"

#include "ucm/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace ucm {

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// FNV-1a, so stream seeds do not depend on enum values.
uint64_t hash_name(const char* s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
  return h;
}

nlohmann::json offsets_json(const OffsetDistribution& o) {
  return {{"rot_max_deg", o.rot_max_deg}, {"trans_max", o.trans_max}, {"shift_max", o.shift_max}};
}

OffsetDistribution offsets_from(const nlohmann::json& j) {
  OffsetDistribution o;
  o.rot_max_deg = j.at("rot_max_deg").get<double>();
  o.trans_max = j.at("trans_max").get<double>();
  o.shift_max = j.at("shift_max").get<int>();
  return o;
}

const char* kind(const nlohmann::json& j) {
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "bool";
  if (j.is_object()) return "object";
  if (j.is_array()) return "array";
  return "null";
}

// Every key of `doc` must exist in `ref` with a value of the same kind.
void check_shape(const nlohmann::json& doc, const nlohmann::json& ref, const std::string& prefix) {
  if (!doc.is_object()) throw std::invalid_argument("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (!ref.contains(key)) throw std::invalid_argument("config: unknown key '" + name + "'");
    const auto& expect = ref.at(key);
    if (std::string(kind(value)) != kind(expect))
      throw std::invalid_argument("config: '" + name + "' must be a " + kind(expect) + ", got " + kind(value));
    if (expect.is_number_integer() && !value.is_number_integer())
      throw std::invalid_argument("config: '" + name + "' must be an integer");
    if (expect.is_object()) check_shape(value, expect, name);
  }
}

}  // namespace

const char* stream_name(SeedStream stream) {
  switch (stream) {
    case SeedStream::curation: return "curation";
    case SeedStream::init: return "init";
    case SeedStream::training: return "training";
    case SeedStream::sampling: return "sampling";
  }
  throw std::invalid_argument("unknown seed stream");
}

uint64_t stream_seed(uint64_t root, SeedStream stream) {
  return splitmix(splitmix(root) ^ hash_name(stream_name(stream)));
}

void RunConfig::validate() const {
  curation.validate();
  model.validate();
  codec.validate();
  train.validate();
  if (sampler.steps < 1) throw std::invalid_argument("config: sampler.steps must be >= 1");
  if (sampler.cfg_scale < 0.0) throw std::invalid_argument("config: sampler.cfg_scale must be >= 0");
  if (retrieval.memories < 0) throw std::invalid_argument("config: retrieval.memories must be >= 0");
  if (retrieval.frustum.near <= 0.0 || retrieval.frustum.far <= retrieval.frustum.near ||
      retrieval.frustum.samples < 1)
    throw std::invalid_argument("config: retrieval.frustum needs 0 < near < far and samples >= 1");
  if (model.classes < curation.classes)
    throw std::invalid_argument("config: model.classes must cover curation.classes");
  if (model.latent_dim != codec.channels)
    throw std::invalid_argument("config: model.latent_dim must equal codec.channels");
  if (model.patch != codec.spatial_stride)
    throw std::invalid_argument("config: model.patch must equal codec.spatial_stride");
  if (curation.width != model.grid_w * model.patch || curation.height != model.grid_h * model.patch)
    throw std::invalid_argument("config: curation image size must equal the model token grid times the patch size");
  if ((train.frames - 1) % codec.temporal_stride != 0)
    throw std::invalid_argument("config: train.frames - 1 must be a multiple of codec.temporal_stride");
  if (train.frames > curation.frames)
    throw std::invalid_argument("config: train.frames exceeds the curated clip length");
  if (dataset.empty()) throw std::invalid_argument("config: dataset path is empty");
  if (output.empty()) throw std::invalid_argument("config: output path is empty");
  if (std::filesystem::exists(output) && !std::filesystem::is_directory(output))
    throw std::invalid_argument("config: output " + output.string() + " exists and is not a directory");
  if (std::filesystem::exists(dataset) && !std::filesystem::is_directory(dataset))
    throw std::invalid_argument("config: dataset " + dataset.string() + " exists and is not a directory");
}

DatasetConfig RunConfig::dataset_config() const {
  DatasetConfig d = curation;
  d.seed = stream_seed(seed, SeedStream::curation);
  return d;
}

Intrinsics RunConfig::intrinsics() const { return Intrinsics::from_fov(curation.width, curation.height, curation.fov_deg); }

nlohmann::json to_json_doc(const RunConfig& c) {
  const DatasetConfig& d = c.curation;
  const TrainConfig& t = c.train;
  return {
      {"seed", c.seed},
      {"dataset", c.dataset.string()},
      {"output", c.output.string()},
      {"curation",
       {{"scenes", d.scenes},
        {"clips_per_scene", d.clips_per_scene},
        {"frames", d.frames},
        {"width", d.width},
        {"height", d.height},
        {"fov_deg", d.fov_deg},
        {"frames_per_loop", d.frames_per_loop},
        {"samples_per_clip", d.samples_per_clip},
        {"classes", d.classes},
        {"offsets", offsets_json(d.offsets)}}},
      {"model", c.model},
      {"codec", c.codec},
      {"train",
       {{"steps", t.steps},
        {"batch", t.batch},
        {"frames", t.frames},
        {"max_memories", t.max_memories},
        {"lr", t.lr},
        {"warmup", t.warmup},
        {"final_lr_fraction", t.final_lr_fraction},
        {"weight_decay", t.weight_decay},
        {"grad_clip", t.grad_clip},
        {"class_drop", t.class_drop},
        {"checkpoint_every", t.checkpoint_every},
        {"offsets", offsets_json(t.offsets)}}},
      {"sampler", {{"steps", c.sampler.steps}, {"cfg_scale", c.sampler.cfg_scale}}},
      {"retrieval",
       {{"memories", c.retrieval.memories},
        {"frustum",
         {{"near", c.retrieval.frustum.near},
          {"far", c.retrieval.frustum.far},
          {"samples", c.retrieval.frustum.samples},
          {"seed", c.retrieval.frustum.seed}}}}},
  };
}

RunConfig from_json_doc(const nlohmann::json& in) {
  const nlohmann::json defaults = to_json_doc(RunConfig{});
  check_shape(in, defaults, "");
  nlohmann::json doc = defaults;
  doc.merge_patch(in);
  RunConfig c;
  try {
    c.seed = doc.at("seed").get<uint64_t>();
    c.dataset = doc.at("dataset").get<std::string>();
    c.output = doc.at("output").get<std::string>();
    const auto& d = doc.at("curation");
    c.curation.scenes = d.at("scenes").get<int>();
    c.curation.clips_per_scene = d.at("clips_per_scene").get<int>();
    c.curation.frames = d.at("frames").get<int>();
    c.curation.width = d.at("width").get<int>();
    c.curation.height = d.at("height").get<int>();
    c.curation.fov_deg = d.at("fov_deg").get<double>();
    c.curation.frames_per_loop = d.at("frames_per_loop").get<int>();
    c.curation.samples_per_clip = d.at("samples_per_clip").get<int>();
    c.curation.classes = d.at("classes").get<int>();
    c.curation.offsets = offsets_from(d.at("offsets"));
    c.model = doc.at("model").get<ModelConfig>();
    c.codec = doc.at("codec").get<CodecConfig>();
    const auto& t = doc.at("train");
    c.train.steps = t.at("steps").get<int>();
    c.train.batch = t.at("batch").get<int>();
    c.train.frames = t.at("frames").get<int>();
    c.train.max_memories = t.at("max_memories").get<int>();
    c.train.lr = t.at("lr").get<double>();
    c.train.warmup = t.at("warmup").get<int>();
    c.train.final_lr_fraction = t.at("final_lr_fraction").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.grad_clip = t.at("grad_clip").get<double>();
    c.train.class_drop = t.at("class_drop").get<double>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    c.train.offsets = offsets_from(t.at("offsets"));
    c.sampler.steps = doc.at("sampler").at("steps").get<int>();
    c.sampler.cfg_scale = doc.at("sampler").at("cfg_scale").get<double>();
    const auto& r = doc.at("retrieval");
    c.retrieval.memories = r.at("memories").get<int>();
    c.retrieval.frustum.near = r.at("frustum").at("near").get<double>();
    c.retrieval.frustum.far = r.at("frustum").at("far").get<double>();
    c.retrieval.frustum.samples = r.at("frustum").at("samples").get<int>();
    c.retrieval.frustum.seed = r.at("frustum").at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json* node = &doc;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw std::invalid_argument("config: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded() || (node->is_string() && !value.is_string())) value = text;
  if (std::string(kind(value)) != kind(*node))
    throw std::invalid_argument("config: '" + key + "' must be a " + kind(*node) + ", got '" + text + "'");
  if (node->is_number_integer() && !value.is_number_integer())
    throw std::invalid_argument("config: '" + key + "' must be an integer, got '" + text + "'");
  if (node->is_object()) check_shape(value, *node, key);
  *node = value;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                         const std::optional<uint64_t>& seed) {
  nlohmann::json doc = to_json_doc(RunConfig{});
  if (path) {
    std::ifstream is(*path);
    if (!is) throw std::invalid_argument("cannot read config " + path->string());
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config " + path->string() + ": " + e.what());
    }
    check_shape(file, doc, "");
    doc.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  RunConfig cfg = from_json_doc(doc);
  cfg.validate();
  return cfg;
}

}  // namespace ucm
