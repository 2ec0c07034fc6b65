#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mgdoc/checkpoint.hpp"
#include "mgdoc/config.hpp"
#include "mgdoc/finetune.hpp"
#include "mgdoc/ingestion.hpp"
#include "mgdoc/raster.hpp"

namespace fs = std::filesystem;
using namespace mgdoc;
using ojson = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + p.string() + "'");
}

RunConfig resolve_config(const std::string& path) {
  RunConfig cfg = path.empty() ? preset_config("desk") : load_run_config(path);
  propagate_seed(cfg);
  apply_env_overrides(cfg);
  return cfg;
}

std::string ckpt_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%06ld.bin", step);
  return buf;
}

// External embedding tables must outlive the model that points at them.
struct Backbones {
  ExternalEmbeddingTable text;
  ExternalEmbeddingTable vision;

  void attach(const RunConfig& cfg, Model& model) {
    const auto& ec = cfg.model.encoder;
    const bool ext_text = ec.text_backbone == TextBackbone::kExternalTable;
    const bool ext_vis = ec.vision_backbone == VisionBackbone::kExternalTable;
    if (ext_text) {
      if (cfg.text_embeddings.empty()) throw Error("text_backbone external needs text_embeddings");
      text = ExternalEmbeddingTable::load(cfg.text_embeddings);
    }
    if (ext_vis) {
      if (cfg.vision_embeddings.empty()) throw Error("vision_backbone external needs vision_embeddings");
      vision = ExternalEmbeddingTable::load(cfg.vision_embeddings);
    }
    model.encoder().attach_external(ext_text ? &text : nullptr, ext_vis ? &vision : nullptr);
  }
};

// ---- ingest -------------------------------------------------------------

struct IngestArgs {
  std::string format, in, out, spec;
};

std::vector<fs::path> json_files(const fs::path& p) {
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw Error("input '" + p.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_ingest(const IngestArgs& a) {
  std::vector<Document> docs;
  LoadStats stats;
  if (a.format == "synthetic") {
    if (a.spec.empty()) throw Error("--format synthetic needs --spec");
    docs = generate_synthetic(synthetic_spec_from_json(slurp(a.spec)));
  } else if (a.in.empty()) {
    throw Error("--format " + a.format + " needs --in");
  } else if (a.format == "funsd") {
    docs = load_funsd_split(a.in, &stats);
  } else if (a.format == "cord") {
    for (const auto& f : json_files(a.in)) docs.push_back(load_cord(f, &stats));
  } else if (a.format == "ocr") {
    for (const auto& f : json_files(a.in)) {
      Document d = load_ocr(f);
      if (d.image_path) {
        fs::path img = *d.image_path;
        if (img.is_relative()) img = f.parent_path() / img;
        if (fs::exists(img)) d.image = std::make_shared<const Raster>(read_raster(img));
      }
      docs.push_back(std::move(d));
    }
  } else if (a.format == "rvlcdip") {
    // Each indexed image needs an OCR export with the same stem and a .json extension.
    for (const auto& e : load_rvlcdip_index(a.in)) {
      fs::path ocr = e.image;
      ocr.replace_extension(".json");
      if (!fs::exists(ocr)) throw Error("missing OCR export '" + ocr.string() + "'");
      Document d = load_ocr(ocr);
      d.page_label = std::to_string(e.label);
      d.image = std::make_shared<const Raster>(read_raster(e.image));
      docs.push_back(std::move(d));
    }
  } else {
    throw Error("unknown format '" + a.format + "'");
  }
  if (fs::exists(a.out))
    for (const auto& e : fs::directory_iterator(a.out))
      if (e.path().extension() == ".json" || e.path().extension() == ".png") fs::remove(e.path());
  save_corpus(docs, a.out);
  std::size_t regions = 0, words = 0;
  for (const auto& d : docs) {
    regions += d.regions.size();
    words += d.word_count();
  }
  std::cout << "ingested docs=" << docs.size() << " regions=" << regions << " words=" << words
            << " dropped_entities=" << stats.dropped_entities
            << " dropped_words=" << stats.dropped_words << "\n";
  return 0;
}

// ---- pretrain -----------------------------------------------------------

struct PretrainArgs {
  std::string config, corpus, out, resume, tasks;
};

int cmd_pretrain(const PretrainArgs& a) {
  RunConfig cfg = resolve_config(a.config);
  if (!a.tasks.empty()) cfg.pretrain.tasks = PretrainTasks::parse(a.tasks);
  cfg.pretrain.validate();
  const auto corpus = load_corpus(a.corpus);
  if (corpus.empty()) throw Error("corpus '" + a.corpus + "' is empty");
  fs::create_directories(a.out);
  const fs::path out = a.out;

  std::unique_ptr<Model> model;
  std::optional<Checkpoint> ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    if (config_hash(ck->config) != config_hash(cfg))
      std::cerr << "note: resuming with the checkpoint's config\n";
    cfg = ck->config;
    model = model_from_checkpoint(*ck);
  } else {
    model = std::make_unique<Model>(cfg.model, Vocab::build(corpus, cfg.model.encoder.vocab_size),
                                    cfg.seed);
  }
  Backbones backbones;
  backbones.attach(cfg, *model);
  write_text(out / "config.resolved.json", run_config_to_json(cfg) + "\n");

  const long total = Pretrainer::total_steps_for(corpus.size(), cfg.pretrain);
  Pretrainer trainer(*model, cfg.pretrain, total);
  std::vector<std::string> kept;
  if (ck) {
    restore_optimizer(trainer.optimizer(), *ck);
    trainer.set_step(ck->step);
    // Keep log lines from before the resume point.
    std::ifstream prev(out / "train.log.jsonl");
    std::string line;
    while (std::getline(prev, line))
      if (!line.empty() && ojson::parse(line).at("step").get<long>() < ck->step) kept.push_back(line);
  }
  std::ofstream log(out / "train.log.jsonl", std::ios::trunc);
  for (const auto& l : kept) log << l << "\n";

  const auto t0 = Clock::now();
  double first = -1.0, last = 0.0;
  for (long s = trainer.current_step(); s < total; ++s) {
    const LossReport r = trainer.step(trainer.batch_for_step(corpus, s));
    if (first < 0) first = r.l_total;
    last = r.l_total;
    log << loss_report_json(r, seconds_since(t0)) << "\n";
    log.flush();
    if (cfg.ckpt_every > 0 && (s + 1) % cfg.ckpt_every == 0 && s + 1 < total)
      save_checkpoint(make_checkpoint(*model, cfg, s + 1, &trainer.optimizer()), out / ckpt_name(s + 1));
  }
  if (!log) throw Error("failed writing train.log.jsonl");
  save_checkpoint(make_checkpoint(*model, cfg, total, &trainer.optimizer()), out / ckpt_name(total));
  std::cout << "pretrained steps=" << total << " first_loss=" << first << " final_loss=" << last
            << " checkpoint=" << (out / ckpt_name(total)).string() << "\n";
  return 0;
}

// ---- finetune / eval ----------------------------------------------------

struct TaskArgs {
  std::string task = "entity", config, corpus, test, ckpt, out;
};

void write_metrics(const fs::path& path, const std::string& task, const RunConfig& cfg,
                   const std::string& metric, double value, long steps, double wall) {
  ojson j;
  j["task"] = task;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["metric"] = metric;
  j["value"] = value;
  j["n_steps"] = steps;
  j["wall_clock"] = wall;
  write_text(path, j.dump(2) + "\n");
}

int run_task(const TaskArgs& a, bool train) {
  if (a.task != "entity" && a.task != "classify") throw Error("unknown task '" + a.task + "'");
  const auto t0 = Clock::now();
  RunConfig cfg;
  std::unique_ptr<Model> model;
  std::vector<std::string> labels;
  std::vector<Document> corpus = load_corpus(a.corpus);
  if (corpus.empty()) throw Error("corpus '" + a.corpus + "' is empty");
  if (!a.ckpt.empty()) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    // Architecture always comes from the checkpoint; --config supplies the rest.
    cfg = a.config.empty() ? ck.config : load_run_config(a.config);
    cfg.model = ck.config.model;
    propagate_seed(cfg);
    apply_env_overrides(cfg);
    model = model_from_checkpoint(ck);
    labels = ck.entity_labels;
  } else {
    if (!train) throw Error("eval needs --ckpt");
    cfg = resolve_config(a.config);
    model = std::make_unique<Model>(cfg.model, Vocab::build(corpus, cfg.model.encoder.vocab_size),
                                    cfg.seed);
  }
  Backbones backbones;
  backbones.attach(cfg, *model);
  fs::create_directories(a.out);
  const fs::path out = a.out;
  write_text(out / "config.resolved.json", run_config_to_json(cfg) + "\n");

  std::vector<Document> train_docs, test_docs;
  if (!train) {
    test_docs = std::move(corpus);
  } else if (!a.test.empty()) {
    train_docs = std::move(corpus);
    test_docs = load_corpus(a.test);
  } else {
    Split s = split_811(corpus, cfg.seed);
    train_docs = std::move(s.train);
    test_docs = std::move(s.test);
  }

  long steps = 0;
  const GranularitySet gran = cfg.finetune.granularities;
  if (a.task == "entity") {
    if (train) {
      if (labels.empty() || !model->has_entity_head()) labels = entity_label_set(train_docs);
      steps = finetune_entity(*model, train_docs, labels, cfg.finetune).steps;
    }
    if (labels.empty()) throw Error("checkpoint has no entity labels; fine-tune first");
    const EntityEval ev = evaluate_entity(*model, test_docs, labels, gran);
    write_predictions_csv(ev.predictions, out / "preds.csv");
    write_metrics(out / "metrics.json", a.task, cfg, "entity_f1", ev.metrics.f1, steps, seconds_since(t0));
    std::cout << a.task << " f1=" << ev.metrics.f1 << " precision=" << ev.metrics.precision
              << " recall=" << ev.metrics.recall << " n_test=" << test_docs.size() << "\n";
  } else {
    if (train) steps = finetune_classify(*model, train_docs, cfg.finetune).steps;
    if (!model->has_page_head()) throw Error("checkpoint has no page head; fine-tune first");
    const ClassifyEval ev = evaluate_classify(*model, test_docs, gran);
    write_predictions_csv(ev.predictions, out / "preds.csv");
    write_metrics(out / "metrics.json", a.task, cfg, "accuracy", ev.accuracy, steps, seconds_since(t0));
    std::cout << a.task << " accuracy=" << ev.accuracy << " n_test=" << test_docs.size() << "\n";
  }
  if (train)
    save_checkpoint(make_checkpoint(*model, cfg, steps, nullptr, labels), out / "ckpt-finetuned.bin");
  return 0;
}

// ---- ablate -------------------------------------------------------------

struct AblateArgs {
  std::string config, corpus, test, out, grid = "tasks";
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

int cmd_ablate(const AblateArgs& a) {
  const RunConfig cfg = resolve_config(a.config);
  std::vector<AblationConfig> grid;
  const GranularitySet all = cfg.pretrain.granularities;
  if (a.grid == "tasks") {
    grid = {{"none", PretrainTasks::parse("none"), all},
            {"mtm+mvm", PretrainTasks::parse("mtm,mvm"), all},
            {"full", PretrainTasks::parse("mtm,mvm,mgm"), all}};
  } else if (a.grid == "granularities") {
    const PretrainTasks tasks = cfg.pretrain.tasks;
    grid = {{"region", tasks, GranularitySet::parse("region")},
            {"region+word", tasks, GranularitySet::parse("region,word")},
            {"page+region+word", tasks, GranularitySet::parse("page,region,word")}};
  } else {
    throw Error("unknown grid '" + a.grid + "' (expected tasks or granularities)");
  }
  const auto corpus = load_corpus(a.corpus);
  std::vector<Document> train, test;
  if (!a.test.empty()) {
    train = corpus;
    test = load_corpus(a.test);
  } else {
    Split s = split_811(corpus, cfg.seed);
    train = std::move(s.train);
    test = std::move(s.test);
  }
  AblationSetup setup;
  setup.model = cfg.model;
  setup.pretrain = cfg.pretrain;
  setup.finetune = cfg.finetune;
  setup.seeds = a.seeds;
  const auto results = run_ablation(grid, corpus, train, test, setup);
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.resolved.json", run_config_to_json(cfg) + "\n");
  const std::string csv = ablation_csv(results);
  write_text(fs::path(a.out) / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

// ---- heatmap ------------------------------------------------------------

struct HeatmapArgs {
  std::string ckpt, doc, out;
  int cell = 8;
};

int cmd_heatmap(const HeatmapArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  auto model = model_from_checkpoint(ck);
  Backbones backbones;
  backbones.attach(ck.config, *model);
  const Document doc = load_canonical(a.doc);
  if (doc.regions.empty()) throw Error("document '" + doc.id + "' has no regions");
  const auto units = model->units(doc);
  ag::NoGradGuard no_grad;
  const ForwardPass fp = model->forward(doc, units);
  const ag::Mat h = region_word_heatmap(fp.fused.f.value(), units);

  fs::create_directories(a.out);
  const fs::path out = a.out;
  std::ostringstream csv;
  csv.precision(17);
  std::vector<const GranularUnit*> regions, words;
  for (const auto& u : units) {
    if (u.granularity == Granularity::kRegion) regions.push_back(&u);
    if (u.granularity == Granularity::kWord) words.push_back(&u);
  }
  csv << "region";
  for (const auto* w : words) csv << ",w" << w->unit_index;
  csv << "\n";
  for (Eigen::Index j = 0; j < h.rows(); ++j) {
    csv << "r" << regions[static_cast<std::size_t>(j)]->unit_index;
    for (Eigen::Index i = 0; i < h.cols(); ++i) csv << ',' << h(j, i);
    csv << "\n";
  }
  write_text(out / "heatmap.csv", csv.str());

  // Min-max grayscale, x = words, y = regions, `cell` pixels per entry.
  Raster png;
  png.width = std::max<int>(1, static_cast<int>(h.cols()) * a.cell);
  png.height = std::max<int>(1, static_cast<int>(h.rows()) * a.cell);
  png.pixels.assign(static_cast<std::size_t>(png.width) * png.height, 0);
  const double lo = h.size() ? h.minCoeff() : 0.0, hi = h.size() ? h.maxCoeff() : 0.0;
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x) {
      if (!h.size()) break;
      const double v = h(y / a.cell, x / a.cell);
      const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      png.pixels[static_cast<std::size_t>(y) * png.width + x] = static_cast<std::uint8_t>(std::lround(255 * t));
    }
  write_png(png, out / "heatmap.png");
  std::cout << "heatmap regions=" << h.rows() << " words=" << h.cols() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgdoc: multi-modal multi-granular document pre-training and fine-tuning"};
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Convert a dataset into a canonical corpus directory");
  ingest->add_option("--format", ia.format, "funsd, cord, rvlcdip, ocr or synthetic")
      ->required()
      ->check(CLI::IsMember({"funsd", "cord", "rvlcdip", "ocr", "synthetic"}));
  ingest->add_option("--in", ia.in, "Input file or directory");
  ingest->add_option("--out", ia.out, "Output corpus directory")->required();
  ingest->add_option("--spec", ia.spec, "Synthetic corpus spec JSON");

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "Pre-train with MTM, MVM and MGM");
  pretrain->add_option("--config", pa.config, "Flat JSON run config");
  pretrain->add_option("--corpus", pa.corpus, "Corpus directory")->required();
  pretrain->add_option("--out", pa.out, "Output directory")->required();
  pretrain->add_option("--resume", pa.resume, "Checkpoint to resume from");
  pretrain->add_option("--tasks", pa.tasks, "Comma list of mtm,mvm,mgm (overrides config)");

  TaskArgs fa;
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a task head and evaluate it");
  finetune->add_option("--task", fa.task, "entity or classify")->check(CLI::IsMember({"entity", "classify"}));
  finetune->add_option("--config", fa.config, "Flat JSON run config");
  finetune->add_option("--corpus", fa.corpus, "Training corpus (split 8:1:1 without --test)")->required();
  finetune->add_option("--test", fa.test, "Held-out corpus");
  finetune->add_option("--ckpt", fa.ckpt, "Pre-trained checkpoint; random init when absent");
  finetune->add_option("--out", fa.out, "Output directory")->required();

  TaskArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  eval->add_option("--task", ea.task, "entity or classify")->check(CLI::IsMember({"entity", "classify"}));
  eval->add_option("--config", ea.config, "Flat JSON run config");
  eval->add_option("--corpus", ea.corpus, "Evaluation corpus")->required();
  eval->add_option("--ckpt", ea.ckpt, "Fine-tuned checkpoint")->required();
  eval->add_option("--out", ea.out, "Output directory")->required();

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Pre-training task or granularity ablation grid");
  ablate->add_option("--config", aa.config, "Flat JSON run config");
  ablate->add_option("--corpus", aa.corpus, "Corpus directory")->required();
  ablate->add_option("--test", aa.test, "Held-out corpus");
  ablate->add_option("--out", aa.out, "Output directory")->required();
  ablate->add_option("--grid", aa.grid, "tasks or granularities")
      ->check(CLI::IsMember({"tasks", "granularities"}));
  ablate->add_option("--seeds", aa.seeds, "Seeds to average over");

  HeatmapArgs ha;
  auto* heatmap = app.add_subcommand("heatmap", "Export the region-word heatmap of one document");
  heatmap->add_option("--ckpt", ha.ckpt, "Checkpoint")->required();
  heatmap->add_option("--doc", ha.doc, "Canonical document JSON")->required();
  heatmap->add_option("--out", ha.out, "Output directory")->required();
  heatmap->add_option("--cell", ha.cell, "Pixels per heatmap cell")->check(CLI::Range(1, 64));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*ingest) return cmd_ingest(ia);
    if (*pretrain) return cmd_pretrain(pa);
    if (*finetune) return run_task(fa, true);
    if (*eval) return run_task(ea, false);
    if (*ablate) return cmd_ablate(aa);
    if (*heatmap) return cmd_heatmap(ha);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
