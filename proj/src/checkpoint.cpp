#include "mgdoc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mgdoc {
namespace {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian");

bool is_head(const std::string& name) { return name.rfind("head.", 0) == 0; }

struct IndexEntry {
  std::string kind;  // param, adam_m, adam_v
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

void write_mat(std::ofstream& out, const ag::Mat& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, const RunConfig& cfg, long step, const AdamW* opt,
                           const std::vector<std::string>& entity_labels) {
  Checkpoint c;
  c.config = cfg;
  c.vocab = model.vocab();
  c.step = step;
  c.seed = cfg.seed;
  c.entity_labels = entity_labels;
  for (const auto& [name, v] : model.params()) c.params[name] = v.value();
  if (opt) {
    c.adam_steps = opt->steps();
    c.moments = opt->moments();
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<std::pair<IndexEntry, const ag::Mat*>> tensors;
  for (const auto& [name, m] : ckpt.params) tensors.push_back({{"param", name, m.rows(), m.cols()}, &m});
  for (const auto& [name, mom] : ckpt.moments) {
    tensors.push_back({{"adam_m", name, mom.m.rows(), mom.m.cols()}, &mom.m});
    tensors.push_back({{"adam_v", name, mom.v.rows(), mom.v.cols()}, &mom.v});
  }
  json header;
  header["format"] = kCheckpointFormat;
  header["config"] = json::parse(run_config_to_json(ckpt.config, -1));
  header["vocab"] = json::parse(ckpt.vocab.to_json());
  header["step"] = ckpt.step;
  header["seed"] = ckpt.seed;
  header["entity_labels"] = ckpt.entity_labels;
  header["adam_steps"] = ckpt.adam_steps;
  json index = json::array();
  for (const auto& [e, _] : tensors)
    index.push_back({{"kind", e.kind}, {"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
  header["tensors"] = index;
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
    out << kCheckpointFormat << '\n';
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, m] : tensors) write_mat(out, *m);
    if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path.string() + "'");
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointFormat)
    throw Error("checkpoint format mismatch: expected " + std::string(kCheckpointFormat) +
                ", found '" + magic.substr(0, 32) + "'");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw Error("corrupt checkpoint header in '" + path.string() + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint header in '" + path.string() + "'");
  const json header = json::parse(text);

  Checkpoint c;
  c.config = run_config_from_json(header.at("config").dump());
  c.vocab = Vocab::from_json(header.at("vocab").dump());
  c.step = header.at("step").get<long>();
  c.seed = header.at("seed").get<std::uint64_t>();
  c.entity_labels = header.at("entity_labels").get<std::vector<std::string>>();
  c.adam_steps = header.at("adam_steps").get<long>();
  for (const auto& e : header.at("tensors")) {
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const auto name = e.at("name").get<std::string>();
    const auto kind = e.at("kind").get<std::string>();
    ag::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw Error("truncated checkpoint data at tensor '" + name + "'");
    if (kind == "param") c.params[name] = std::move(m);
    else if (kind == "adam_m") c.moments[name].m = std::move(m);
    else if (kind == "adam_v") c.moments[name].v = std::move(m);
    else throw Error("unknown tensor kind '" + kind + "' in checkpoint");
  }
  return c;
}

void load_params(Model& model, const Checkpoint& ckpt, bool allow_missing_heads) {
  auto& params = model.params();
  for (const auto& [name, m] : ckpt.params) {
    if (!params.has(name)) {
      if (allow_missing_heads && is_head(name)) continue;
      throw Error("checkpoint tensor '" + name + "' has no matching model parameter");
    }
    const ag::Mat& cur = params.get(name).value();
    if (cur.rows() != m.rows() || cur.cols() != m.cols())
      throw Error("shape mismatch for tensor '" + name + "': checkpoint " +
                  std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", model " +
                  std::to_string(cur.rows()) + "x" + std::to_string(cur.cols()));
  }
  for (const auto& [name, v] : params) {
    if (ckpt.params.count(name)) continue;
    if (allow_missing_heads && is_head(name)) continue;
    throw Error("model parameter '" + name + "' missing from checkpoint");
  }
  for (const auto& [name, m] : ckpt.params)
    if (params.has(name)) params.value(name) = m;
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model>(ckpt.config.model, ckpt.vocab, ckpt.seed);
  if (auto it = ckpt.params.find("head.entity.W"); it != ckpt.params.end())
    model->add_entity_head(static_cast<int>(it->second.cols()), ckpt.seed);
  if (auto it = ckpt.params.find("head.page.W"); it != ckpt.params.end())
    model->add_page_head(ckpt.seed, static_cast<int>(it->second.cols()));
  load_params(*model, ckpt);
  return model;
}

void restore_optimizer(AdamW& opt, const Checkpoint& ckpt) {
  opt.set_steps(ckpt.adam_steps);
  opt.moments() = ckpt.moments;
}

}  // namespace mgdoc
