#include "mgdoc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace mgdoc {
namespace {

using json = nlohmann::ordered_json;

struct Key {
  const char* name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename T>
T as(const json& v, const char* key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw Error("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw Error("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw Error("");
    } else {
      if (!v.is_string()) throw Error("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw Error("config key '" + std::string(key) + "' has the wrong type: " + v.dump());
  }
}

#define MGDOC_KEY(name, type, field)                                                     \
  Key {                                                                                  \
    name, [](RunConfig& c, const json& v) { c.field = as<type>(v, name); },              \
        [](const RunConfig& c) { return json(c.field); }                                 \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      MGDOC_KEY("seed", std::uint64_t, seed),
      MGDOC_KEY("d_model", int, model.encoder.d_model),
      Key{"text_backbone",
          [](RunConfig& c, const json& v) {
            c.model.encoder.text_backbone = parse_text_backbone(as<std::string>(v, "text_backbone"));
          },
          [](const RunConfig& c) { return json(to_string(c.model.encoder.text_backbone)); }},
      Key{"vision_backbone",
          [](RunConfig& c, const json& v) {
            c.model.encoder.vision_backbone =
                parse_vision_backbone(as<std::string>(v, "vision_backbone"));
          },
          [](const RunConfig& c) { return json(to_string(c.model.encoder.vision_backbone)); }},
      MGDOC_KEY("text_embeddings", std::string, text_embeddings),
      MGDOC_KEY("vision_embeddings", std::string, vision_embeddings),
      MGDOC_KEY("roi_grid_h", int, model.encoder.roi_grid_h),
      MGDOC_KEY("roi_grid_w", int, model.encoder.roi_grid_w),
      MGDOC_KEY("vocab_size", int, model.encoder.vocab_size),
      MGDOC_KEY("image_size", int, model.encoder.image_size),
      MGDOC_KEY("conv_channels1", int, model.encoder.conv_channels1),
      MGDOC_KEY("conv_channels2", int, model.encoder.conv_channels2),
      MGDOC_KEY("freeze_backbones", bool, model.encoder.freeze_backbones),
      MGDOC_KEY("n_heads", int, model.attention.n_heads),
      MGDOC_KEY("n_mg_layers", int, model.attention.n_mg_layers),
      MGDOC_KEY("n_self_layers", int, model.attention.n_self_layers),
      MGDOC_KEY("n_cross_layers", int, model.attention.n_cross_layers),
      MGDOC_KEY("rel_buckets", int, model.attention.rel_buckets_side),
      MGDOC_KEY("rel_exact_range", double, model.attention.rel_exact_range),
      MGDOC_KEY("contain_eps", double, model.attention.contain_eps),
      MGDOC_KEY("ffn_mult", int, model.attention.ffn_mult),
      MGDOC_KEY("mask_ratio", double, pretrain.mask_ratio),
      MGDOC_KEY("mask_page", bool, pretrain.mask_page),
      MGDOC_KEY("lr", double, pretrain.lr),
      MGDOC_KEY("batch_size", int, pretrain.batch_size),
      MGDOC_KEY("epochs", int, pretrain.epochs),
      MGDOC_KEY("warmup_frac", double, pretrain.warmup_frac),
      MGDOC_KEY("weight_decay", double, pretrain.weight_decay),
      MGDOC_KEY("grad_clip", double, pretrain.grad_clip),
      Key{"tasks",
          [](RunConfig& c, const json& v) {
            c.pretrain.tasks = PretrainTasks::parse(as<std::string>(v, "tasks"));
          },
          [](const RunConfig& c) { return json(c.pretrain.tasks.to_string()); }},
      Key{"granularities",
          [](RunConfig& c, const json& v) {
            const auto g = GranularitySet::parse(as<std::string>(v, "granularities"));
            c.pretrain.granularities = g;
            c.finetune.granularities = g;
          },
          [](const RunConfig& c) { return json(c.pretrain.granularities.to_string()); }},
      MGDOC_KEY("ckpt_every", long, ckpt_every),
      MGDOC_KEY("ft_lr", double, finetune.lr),
      MGDOC_KEY("ft_epochs", int, finetune.epochs),
      MGDOC_KEY("ft_batch_size", int, finetune.batch_size),
      MGDOC_KEY("ft_weight_decay", double, finetune.weight_decay),
      MGDOC_KEY("ft_grad_clip", double, finetune.grad_clip),
      MGDOC_KEY("ft_warmup_frac", double, finetune.warmup_frac),
  };
  return table;
}

#undef MGDOC_KEY

}  // namespace

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.model.encoder.d_model = 768;
    c.model.attention.n_heads = 12;
    c.model.attention.n_cross_layers = 12;
    c.pretrain.lr = 1e-6;
    c.pretrain.batch_size = 64;
    c.pretrain.epochs = 5;
    c.pretrain.warmup_frac = 0.2;
    c.finetune.batch_size = 64;
    c.model.encoder.freeze_backbones = true;
    return c;
  }
  throw Error("unknown preset '" + name + "' (expected desk or paper)");
}

void propagate_seed(RunConfig& cfg) {
  cfg.pretrain.seed = cfg.seed;
  cfg.finetune.seed = cfg.seed;
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("config must be a flat JSON object");
  std::string preset = "desk";
  if (j.contains("preset")) preset = as<std::string>(j["preset"], "preset");
  RunConfig cfg = preset_config(preset);
  for (const auto& [k, v] : j.items()) {
    if (k == "preset") continue;
    bool known = false;
    for (const auto& key : keys())
      if (k == key.name) {
        key.set(cfg, v);
        known = true;
        break;
      }
    if (!known) throw Error("unknown config key '" + k + "'");
  }
  propagate_seed(cfg);
  try {
    cfg.model.validate();
    cfg.pretrain.validate();
  } catch (const Error& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg, int indent) {
  json j;
  j["preset"] = cfg.preset;
  for (const auto& key : keys()) j[key.name] = key.get(cfg);
  return j.dump(indent);
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : run_config_to_json(cfg, -1)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

void apply_env_overrides(RunConfig& cfg) {
  const char* env = std::getenv("MGDOC_SEED");
  if (!env || !*env) return;
  try {
    std::size_t used = 0;
    cfg.seed = std::stoull(env, &used);
    if (used != std::string(env).size()) throw Error("");
  } catch (const std::exception&) {
    throw Error(std::string("MGDOC_SEED is not an unsigned integer: ") + env);
  }
  propagate_seed(cfg);
}

}  // namespace mgdoc
