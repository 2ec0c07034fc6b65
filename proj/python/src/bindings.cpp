// Python bindings: documents, synthetic corpora, configs, metrics, and a
// model handle for pre-training, checkpoints, and heatmaps.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mgdoc/checkpoint.hpp"
#include "mgdoc/config.hpp"
#include "mgdoc/finetune.hpp"
#include "mgdoc/ingestion.hpp"

namespace py = pybind11;
using namespace mgdoc;

namespace {

class PyModel {
 public:
  PyModel(const std::string& config_json, const std::vector<Document>& corpus) {
    cfg_ = run_config_from_json(config_json);
    propagate_seed(cfg_);
    model_ = std::make_unique<Model>(cfg_.model, Vocab::build(corpus, cfg_.model.encoder.vocab_size), cfg_.seed);
  }
  explicit PyModel(const std::filesystem::path& ckpt_path) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    cfg_ = ckpt.config;
    model_ = model_from_checkpoint(ckpt);
    step_ = ckpt.step;
  }

  // Runs cfg.pretrain over `corpus`; returns one dict per step.
  py::list pretrain(const std::vector<Document>& corpus) {
    const long total = Pretrainer::total_steps_for(corpus.size(), cfg_.pretrain);
    Pretrainer trainer(*model_, cfg_.pretrain, total);
    py::list out;
    for (long s = 0; s < total; ++s) {
      const LossReport r = trainer.step(trainer.batch_for_step(corpus, s));
      py::dict d;
      d["step"] = r.step;
      d["lr"] = r.lr;
      d["l_mtm"] = r.l_mtm;
      d["l_mvm"] = r.l_mvm;
      d["l_mgm"] = r.l_mgm;
      d["l_total"] = r.l_total;
      out.append(d);
    }
    step_ += total;
    return out;
  }

  ag::Mat heatmap(const Document& doc) const {
    ag::NoGradGuard no_grad;
    const auto units = model_->units(doc);
    return region_word_heatmap(model_->forward(doc, units).fused.f.value(), units);
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(make_checkpoint(*model_, cfg_, step_), path); }

  std::string config_json() const { return run_config_to_json(cfg_); }
  std::vector<std::string> param_names() const {
    std::vector<std::string> out;
    for (const auto& [name, v] : model_->params()) out.push_back(name);
    return out;
  }
  ag::Mat param(const std::string& name) const { return model_->params().get(name).value(); }

 private:
  RunConfig cfg_;
  std::unique_ptr<Model> model_;
  long step_ = 0;
};

}  // namespace

PYBIND11_MODULE(_mgdoc, m) {
  m.doc() = "Multi-modal, multi-granular document transformer";
  py::register_exception<Error>(m, "MgdocError", PyExc_ValueError);

  py::class_<Document>(m, "Document")
      .def_readonly("id", &Document::id)
      .def_readonly("width", &Document::width)
      .def_readonly("height", &Document::height)
      .def_property_readonly("n_regions", [](const Document& d) { return d.regions.size(); })
      .def_property_readonly("n_words", &Document::word_count)
      .def_property_readonly("region_labels",
                             [](const Document& d) {
                               std::vector<std::optional<std::string>> out;
                               for (const auto& r : d.regions) out.push_back(r.label);
                               return out;
                             })
      .def("to_json", [](const Document& d) { return to_canonical_json(d); })
      .def_static("from_json", [](const std::string& s) { return from_canonical_json(s); })
      .def("__repr__", [](const Document& d) {
        return "<Document " + d.id + " regions=" + std::to_string(d.regions.size()) +
               " words=" + std::to_string(d.word_count()) + ">";
      });

  m.def(
      "synthetic_corpus",
      [](const std::string& spec_json) { return generate_synthetic(synthetic_spec_from_json(spec_json)); },
      py::arg("spec_json") = "{}", "Generates a synthetic key-value form corpus from a JSON spec.");
  m.def("load_corpus", [](const std::string& dir) { return load_corpus(dir); }, py::arg("dir"));
  m.def("save_corpus", [](const std::vector<Document>& docs, const std::string& dir) { save_corpus(docs, dir); },
        py::arg("docs"), py::arg("dir"));

  m.def(
      "resolve_config", [](const std::string& text) { return run_config_to_json(run_config_from_json(text)); },
      py::arg("config_json"), "Applies the preset and overrides, returns the resolved flat JSON.");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(run_config_from_json(text)); },
      py::arg("config_json"));

  m.def(
      "entity_f1",
      [](const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
        const EntityMetrics e = entity_f1(gold, pred);
        py::dict d;
        d["precision"] = e.precision;
        d["recall"] = e.recall;
        d["f1"] = e.f1;
        d["true_positives"] = e.true_positives;
        d["predicted"] = e.predicted;
        d["gold"] = e.gold;
        return d;
      },
      py::arg("gold"), py::arg("pred"));

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::vector<Document>&>(), py::arg("config_json"), py::arg("corpus"))
      .def_static("load", [](const std::string& path) { return PyModel(std::filesystem::path(path)); })
      .def("pretrain", &PyModel::pretrain, py::arg("corpus"))
      .def("heatmap", &PyModel::heatmap, py::arg("doc"), "Regions x words matrix of f_region . f_word.")
      .def("save", [](const PyModel& p, const std::string& path) { p.save(path); }, py::arg("path"))
      .def_property_readonly("config_json", &PyModel::config_json)
      .def("param_names", &PyModel::param_names)
      .def("param", &PyModel::param, py::arg("name"));
}
