#include "mgdoc/finetune.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mgdoc/ingestion.hpp"

namespace mgdoc {
namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int label_index(const std::vector<std::string>& labels, const std::string& label,
                const std::string& doc_id) {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end())
    throw Error("document '" + doc_id + "': label '" + label + "' not in the label set");
  return static_cast<int>(it - labels.begin());
}

using LossFn = std::function<ag::Var(const Document&)>;

FinetuneResult run_supervised(Model& model, const std::vector<Document>& train,
                              const FinetuneConfig& cfg, const LossFn& loss_fn) {
  if (train.empty()) throw Error("empty fine-tuning corpus");
  if (cfg.batch_size < 1) throw Error("finetune batch_size must be positive");
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long per_epoch = static_cast<long>((train.size() + bs - 1) / bs);
  const long total = per_epoch * cfg.epochs;
  AdamW opt(0.9, 0.999, 1e-8, cfg.weight_decay);
  auto& params = model.params();
  FinetuneResult result;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed ^ 0xF17EULL, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      params.zero_grad();
      const double w = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        ag::Var loss = loss_fn(train[order[k]]);
        if (!std::isfinite(loss.scalar()))
          throw Error("non-finite fine-tuning loss on '" + train[order[k]].id + "'");
        batch_loss += w * loss.scalar();
        ag::backward(ag::scale(loss, w));
      }
      opt.step(params, scheduled_lr(cfg.lr, result.steps, total, cfg.warmup_frac), cfg.grad_clip);
      result.final_loss = batch_loss;
      ++result.steps;
    }
  }
  return result;
}

}  // namespace

EntityMetrics entity_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                        const std::string& ignore) {
  if (gold.size() != pred.size()) throw Error("entity_f1: gold/pred length mismatch");
  const std::string skip = lower(ignore);
  EntityMetrics m;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = lower(gold[i]) != skip;
    const bool p = lower(pred[i]) != skip;
    m.gold += g;
    m.predicted += p;
    if (g && p && gold[i] == pred[i]) ++m.true_positives;
  }
  m.precision = m.predicted ? static_cast<double>(m.true_positives) / m.predicted : 0.0;
  m.recall = m.gold ? static_cast<double>(m.true_positives) / m.gold : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

double accuracy(const std::vector<int>& gold, const std::vector<int>& pred) {
  if (gold.size() != pred.size()) throw Error("accuracy: gold/pred length mismatch");
  if (gold.empty()) return 0.0;
  long hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::vector<std::string> entity_label_set(const std::vector<Document>& docs) {
  std::set<std::string> labels;
  for (const auto& d : docs)
    for (const auto& r : d.regions) {
      if (!r.label)
        throw Error("document '" + d.id + "': unlabeled region " + std::to_string(r.id));
      labels.insert(*r.label);
    }
  return {labels.begin(), labels.end()};
}

int page_class_of(const Document& doc) {
  if (!doc.page_label) throw Error("document '" + doc.id + "' has no page label");
  int cls = -1;
  try {
    std::size_t used = 0;
    cls = std::stoi(*doc.page_label, &used);
    if (used != doc.page_label->size()) cls = -1;
  } catch (const std::exception&) {
    cls = -1;
  }
  if (cls < 0 || cls >= kPageClasses)
    throw Error("document '" + doc.id + "': page label '" + *doc.page_label +
                "' outside the class set 0-15");
  return cls;
}

FinetuneResult finetune_entity(Model& model, const std::vector<Document>& train,
                               const std::vector<std::string>& labels, const FinetuneConfig& cfg) {
  if (!cfg.granularities.region) throw Error("entity fine-tuning needs region units");
  for (const auto& d : train)
    for (const auto& r : d.regions)
      if (!r.label) throw Error("document '" + d.id + "': unlabeled region " + std::to_string(r.id));
  if (!model.has_entity_head()) model.add_entity_head(static_cast<int>(labels.size()), cfg.seed);
  return run_supervised(model, train, cfg, [&](const Document& doc) {
    const auto units = model.units(doc, cfg.granularities);
    ForwardPass fp = model.forward(doc, units);
    std::vector<int> targets;
    for (const auto& r : doc.regions) targets.push_back(label_index(labels, *r.label, doc.id));
    return ag::cross_entropy_rows(model.entity_logits(fp), targets);
  });
}

EntityEval evaluate_entity(const Model& model, const std::vector<Document>& docs,
                           const std::vector<std::string>& labels, GranularitySet granularities) {
  ag::NoGradGuard no_grad;
  EntityEval out;
  std::vector<std::string> gold, pred;
  for (const auto& doc : docs) {
    const auto units = model.units(doc, granularities);
    ForwardPass fp = model.forward(doc, units);
    const ag::Mat logits = model.entity_logits(fp).value();
    for (Eigen::Index j = 0; j < logits.rows(); ++j) {
      Eigen::Index best = 0;
      logits.row(j).maxCoeff(&best);
      const auto& region = doc.regions[static_cast<std::size_t>(j)];
      RegionPrediction p{doc.id, static_cast<int>(j), region.label.value_or(""),
                         labels[static_cast<std::size_t>(best)]};
      gold.push_back(p.gold);
      pred.push_back(p.pred);
      out.predictions.push_back(std::move(p));
    }
  }
  out.metrics = entity_f1(gold, pred);
  return out;
}

FinetuneResult finetune_classify(Model& model, const std::vector<Document>& train,
                                 const FinetuneConfig& cfg) {
  if (!cfg.granularities.page) throw Error("page classification needs the page unit");
  for (const auto& d : train) page_class_of(d);
  if (!model.has_page_head()) model.add_page_head(cfg.seed);
  return run_supervised(model, train, cfg, [&](const Document& doc) {
    const auto units = model.units(doc, cfg.granularities);
    ForwardPass fp = model.forward(doc, units);
    const int target = page_class_of(doc);
    return ag::cross_entropy_rows(model.page_logits(fp), std::span<const int>(&target, 1));
  });
}

ClassifyEval evaluate_classify(const Model& model, const std::vector<Document>& docs,
                               GranularitySet granularities) {
  ag::NoGradGuard no_grad;
  ClassifyEval out;
  std::vector<int> gold, pred;
  for (const auto& doc : docs) {
    const auto units = model.units(doc, granularities);
    ForwardPass fp = model.forward(doc, units);
    Eigen::Index best = 0;
    model.page_logits(fp).value().row(0).maxCoeff(&best);
    PagePrediction p{doc.id, page_class_of(doc), static_cast<int>(best)};
    gold.push_back(p.gold);
    pred.push_back(p.pred);
    out.predictions.push_back(p);
  }
  out.accuracy = accuracy(gold, pred);
  return out;
}

Split split_811(const std::vector<Document>& docs, std::uint64_t seed) {
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x811));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = docs.size() * 8 / 10;
  const std::size_t n_val = docs.size() / 10;
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_train ? s.train : (k < n_train + n_val ? s.validation : s.test);
    dst.push_back(docs[order[k]]);
  }
  return s;
}

void AblationConfig::validate() const {
  if (!granularities.region)
    throw Error("ablation '" + name + "': granularities must include region");
}

std::vector<AblationResult> run_ablation(const std::vector<AblationConfig>& grid,
                                         const std::vector<Document>& corpus_pretrain,
                                         const std::vector<Document>& task_train,
                                         const std::vector<Document>& task_test,
                                         const AblationSetup& setup) {
  for (const auto& c : grid) c.validate();
  std::vector<Document> vocab_docs = corpus_pretrain;
  vocab_docs.insert(vocab_docs.end(), task_train.begin(), task_train.end());
  const Vocab vocab = Vocab::build(vocab_docs, setup.model.encoder.vocab_size);
  const auto labels = entity_label_set(task_train);

  std::vector<AblationResult> results;
  for (const auto& c : grid) {
    for (std::uint64_t seed : setup.seeds) {
      Model model(setup.model, vocab, derive_seed(seed, 0x30DE1));
      AblationResult r;
      r.name = c.name;
      r.tasks = c.pretrain_tasks.to_string();
      r.granularities = c.granularities.to_string();
      r.seed = seed;
      if (c.pretrain_tasks.any() && !corpus_pretrain.empty()) {
        TrainConfig tc = setup.pretrain;
        tc.tasks = c.pretrain_tasks;
        tc.granularities = c.granularities;
        tc.seed = seed;
        const long total = Pretrainer::total_steps_for(corpus_pretrain.size(), tc);
        Pretrainer trainer(model, tc, total);
        for (long s = 0; s < total; ++s)
          r.pretrain_final_loss = trainer.step(trainer.batch_for_step(corpus_pretrain, s)).l_total;
      }
      FinetuneConfig fc = setup.finetune;
      fc.granularities = c.granularities;
      fc.seed = seed;
      finetune_entity(model, task_train, labels, fc);
      r.metric = evaluate_entity(model, task_test, labels, c.granularities).metrics.f1;
      results.push_back(r);
    }
  }
  return results;
}

double ablation_mean(const std::vector<AblationResult>& results, const std::string& name) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : results)
    if (r.name == name) {
      sum += r.metric;
      ++n;
    }
  if (n == 0) throw Error("no ablation results named '" + name + "'");
  return sum / n;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::vector<std::string> names;
  for (const auto& r : results)
    if (std::find(names.begin(), names.end(), r.name) == names.end()) names.push_back(r.name);
  std::ostringstream out;
  out << std::setprecision(6) << std::fixed;
  out << "model,pretrain_tasks,granularities,seeds,values,mean\n";
  for (const auto& name : names) {
    std::string tasks, gran, seeds, values;
    for (const auto& r : results) {
      if (r.name != name) continue;
      tasks = r.tasks;
      gran = r.granularities;
      if (!seeds.empty()) {
        seeds += ';';
        values += ';';
      }
      seeds += std::to_string(r.seed);
      std::ostringstream v;
      v << std::setprecision(6) << std::fixed << r.metric;
      values += v.str();
    }
    out << name << ',' << tasks << ",\"" << gran << "\"," << seeds << ',' << values << ','
        << ablation_mean(results, name) << '\n';
  }
  return out.str();
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_predictions_csv(const std::vector<RegionPrediction>& preds,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "doc_id,region,gold,pred\n";
  for (const auto& p : preds)
    out << csv_field(p.doc_id) << ',' << p.region << ',' << csv_field(p.gold) << ','
        << csv_field(p.pred) << '\n';
}

void write_predictions_csv(const std::vector<PagePrediction>& preds,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "doc_id,gold,pred\n";
  for (const auto& p : preds) out << csv_field(p.doc_id) << ',' << p.gold << ',' << p.pred << '\n';
}

}  // namespace mgdoc
