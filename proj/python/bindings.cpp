#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tokenprobe/error.hpp"
#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/metrics.hpp"
#include "tokenprobe/pools.hpp"
#include "tokenprobe/runner.hpp"
#include "tokenprobe/segmentation.hpp"
#include "tokenprobe/synthetic.hpp"
#include "tokenprobe/template_io.hpp"
#include "tokenprobe/templates.hpp"

namespace py = pybind11;
using namespace tokenprobe;

namespace {

template <typename E>
E parse_or_throw(const std::string& s, std::optional<E> (*parse)(std::string_view), const char* what) {
  const auto v = parse(s);
  if (!v) fail(ErrorCode::config_error, std::string("unknown ") + what + ": " + s);
  return *v;
}

std::vector<Sample> samples(const std::vector<Vector>& vs) {
  std::vector<Sample> out;
  out.reserve(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) out.push_back({static_cast<ImageId>(i), vs[i]});
  return out;
}

std::vector<Vector> vectors(const std::vector<Sample>& ss) {
  std::vector<Vector> out;
  out.reserve(ss.size());
  for (const auto& s : ss) out.push_back(s.vector);
  return out;
}

py::dict metrics_dict(const BalancedMetrics& m) {
  py::dict d;
  for (Metric k : kAllMetrics) {
    const auto& v = metric_ref(m, k);
    d[to_string(k)] = v ? py::cast(*v) : py::none();
  }
  return d;
}

BinaryMask mask_from(const std::vector<std::vector<bool>>& rows) {
  BinaryMask m(static_cast<std::uint32_t>(rows.size()), rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size()));
  for (std::uint32_t r = 0; r < m.rows; ++r) {
    if (rows[r].size() != m.cols) fail(ErrorCode::shape_mismatch, "ragged mask rows");
    for (std::uint32_t c = 0; c < m.cols; ++c) m.set(r, c, rows[r][c]);
  }
  return m;
}

std::vector<std::vector<bool>> mask_to(const BinaryMask& m) {
  std::vector<std::vector<bool>> out(m.rows, std::vector<bool>(m.cols));
  for (std::uint32_t r = 0; r < m.rows; ++r) {
    for (std::uint32_t c = 0; c < m.cols; ++c) out[r][c] = m.at(r, c);
  }
  return out;
}

py::tuple record_tuple(const TokenRecord& r) {
  return py::make_tuple(r.image_id, r.row, r.col, r.labels, r.vector);
}

}  // namespace

PYBIND11_MODULE(_tokenprobe, m) {
  m.doc() = "Concept-template probing of frozen ViT token features";
  m.attr("ENGINE_VERSION") = kEngineVersion;
  m.attr("CLS") = kClsSentinel;

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> probe_error;
  probe_error.call_once_and_store_result(
      [&]() { return py::exception<ProbeError>(m, "ProbeError", PyExc_RuntimeError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ProbeError& e) {
      const py::object& type = probe_error.get_stored();
      py::object err = type(e.what());
      err.attr("code") = to_string(e.code());
      PyErr_SetObject(type.ptr(), err.ptr());
    }
  });

  py::class_<ConceptTemplate>(m, "ConceptTemplate")
      .def(py::init([](LabelId concept_id, const std::string& rule, Vector direction, double threshold) {
             return ConceptTemplate{concept_id, parse_or_throw(rule, parse_rule, "rule"), std::move(direction),
                                    threshold, {}};
           }),
           py::arg("concept_id"), py::arg("rule"), py::arg("direction"), py::arg("threshold"))
      .def_readonly("concept_id", &ConceptTemplate::concept_id)
      .def_property_readonly("rule", [](const ConceptTemplate& t) { return std::string(to_string(t.rule)); })
      .def_readonly("direction", &ConceptTemplate::direction)
      .def_readonly("threshold", &ConceptTemplate::threshold)
      .def("to_json", [](const ConceptTemplate& t) { return template_to_json(t).dump(); })
      .def("__repr__", [](const ConceptTemplate& t) {
        return "<ConceptTemplate concept=" + std::to_string(t.concept_id) + " rule=" + std::string(to_string(t.rule)) +
               " t=" + std::to_string(t.threshold) + ">";
      });

  m.def("project", [](const ConceptTemplate& t, const Vector& z) { return project(t, z); }, py::arg("template"),
        py::arg("z"));
  m.def("classify", [](const ConceptTemplate& t, const Vector& z) { return classify(t, z); }, py::arg("template"),
        py::arg("z"));

  m.def(
      "search_threshold",
      [](const std::vector<double>& scores, const std::vector<bool>& labels) {
        if (scores.size() != labels.size()) fail(ErrorCode::length_mismatch, "scores and labels differ in length");
        std::vector<ScoredLabel> s;
        for (std::size_t i = 0; i < scores.size(); ++i) s.push_back({scores[i], labels[i]});
        const auto r = search_threshold(s);
        return py::make_tuple(r.threshold, r.f1);
      },
      py::arg("scores"), py::arg("labels"), "F1-maximizing threshold; returns (t, f1)");

  m.def(
      "confusion",
      [](const std::vector<bool>& predictions, const std::vector<bool>& labels) {
        const auto c = confusion(predictions, labels);
        return py::make_tuple(c.tp, c.fp, c.tn, c.fn);
      },
      py::arg("predictions"), py::arg("labels"), "Returns (tp, fp, tn, fn)");
  m.def(
      "balanced_metrics",
      [](std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
        return metrics_dict(balanced_metrics({tp, fp, tn, fn}));
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "fit_cosine",
      [](const std::vector<Vector>& positives, const std::vector<Vector>& negatives, LabelId concept_id) {
        SamplePools p;
        p.concept_id = concept_id;
        p.positives = samples(positives);
        p.negatives = samples(negatives);
        return fit_cosine(p);
      },
      py::arg("positives"), py::arg("negatives") = std::vector<Vector>{}, py::arg("concept_id") = 0);

  m.def(
      "fit_hyperplane",
      [](const std::vector<Vector>& positives, const std::vector<Vector>& negatives, std::uint64_t seed,
         LabelId concept_id, int mining_rounds, int epochs_per_round, double learning_rate, int batch_size,
         bool standardize) {
        SamplePools p;
        p.concept_id = concept_id;
        p.positives = samples(positives);
        p.negatives = samples(negatives);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.mining_rounds = mining_rounds;
        cfg.epochs_per_round = epochs_per_round;
        cfg.learning_rate = learning_rate;
        cfg.batch_size = batch_size;
        cfg.standardize = standardize;
        py::gil_scoped_release release;
        return fit_hyperplane(p, cfg);
      },
      py::arg("positives"), py::arg("negatives"), py::arg("seed") = 0, py::arg("concept_id") = 0,
      py::arg("mining_rounds") = 5, py::arg("epochs_per_round") = 3, py::arg("learning_rate") = 0.01,
      py::arg("batch_size") = 64, py::arg("standardize") = false);

  m.def(
      "mine_hard_negatives",
      [](const ConceptTemplate& t, const std::vector<Vector>& negatives, std::size_t count) {
        return mine_hard_negatives(t, negatives, count);
      },
      py::arg("template"), py::arg("negatives"), py::arg("count"));

  py::class_<DatasetHandle>(m, "Dataset")
      .def_property_readonly("dim", [](const DatasetHandle& h) { return h.header().dim; })
      .def_property_readonly("record_count", [](const DatasetHandle& h) { return h.header().record_count; })
      .def_property_readonly("token_type",
                             [](const DatasetHandle& h) { return std::string(to_string(h.header().token_type)); })
      .def_property_readonly("split", [](const DatasetHandle& h) { return std::string(to_string(h.header().split)); })
      .def_property_readonly("model_tag", [](const DatasetHandle& h) { return h.header().model_tag; })
      .def_property_readonly("labels",
                             [](const DatasetHandle& h) {
                               py::list out;
                               for (const auto& l : h.labels()) {
                                 out.append(py::make_tuple(l.label_id, std::string(to_string(l.category)), l.name));
                               }
                               return out;
                             })
      .def(
          "records",
          [](const DatasetHandle& h) {
            py::list out;
            for (const auto& r : h.read_all()) out.append(record_tuple(r));
            return out;
          },
          "Every record as (image_id, row, col, labels, vector)");

  m.def("open_dataset", &open_dataset, py::arg("path"));
  m.def(
      "write_dataset",
      [](const std::filesystem::path& path, std::uint32_t dim, const std::string& token_type, const std::string& split,
         const std::string& model_tag, const std::vector<std::tuple<LabelId, std::string, std::string>>& labels,
         const std::vector<std::tuple<ImageId, std::uint16_t, std::uint16_t, std::vector<LabelId>, Vector>>& records) {
        DatasetHeader h;
        h.dim = dim;
        h.token_type = parse_or_throw(token_type, parse_token_type, "token type");
        h.split = parse_or_throw(split, parse_split, "split");
        h.model_tag = model_tag;
        std::vector<LabelEntry> table;
        for (const auto& [id, category, name] : labels) {
          table.push_back({id, parse_or_throw(category, parse_category, "category"), name});
        }
        std::vector<TokenRecord> recs;
        for (const auto& [image, row, col, ls, v] : records) recs.push_back({image, row, col, ls, v});
        write_dataset(path, h, table, recs);
      },
      py::arg("path"), py::arg("dim"), py::arg("token_type"), py::arg("split"), py::arg("model_tag"),
      py::arg("labels"), py::arg("records"));

  m.def(
      "build_pools",
      [](const DatasetHandle& h, LabelId concept_id, const std::string& task, std::uint64_t seed, double cap_ratio) {
        PoolOptions o = PoolOptions::for_task(parse_or_throw(task, parse_task, "task"), seed);
        o.cap_ratio = cap_ratio;
        const auto p = build_pools(h, concept_id, o);
        return py::make_tuple(vectors(p.positives), vectors(p.negatives));
      },
      py::arg("dataset"), py::arg("concept_id"), py::arg("task") = "classification", py::arg("seed") = 0,
      py::arg("cap_ratio") = 20.0, "Returns (positives, negatives) as lists of vectors");

  m.def(
      "patch_labels",
      [](const std::vector<std::vector<LabelId>>& pixels, std::uint32_t patch_size, double threshold) {
        PixelMap map;
        map.height = static_cast<std::uint32_t>(pixels.size());
        map.width = pixels.empty() ? 0 : static_cast<std::uint32_t>(pixels[0].size());
        for (const auto& row : pixels) map.ids.insert(map.ids.end(), row.begin(), row.end());
        const auto grid = PatchGrid::covering(map.height / patch_size, map.width / patch_size, patch_size);
        return patch_labels(map, grid, threshold);
      },
      py::arg("pixels"), py::arg("patch_size"), py::arg("threshold") = 0.5,
      "Row-major patch labels (None where no concept covers the patch)");
  m.attr("UNLABELED") = kUnlabeled;

  m.def(
      "render_mask",
      [](const ConceptTemplate& t, const std::vector<Vector>& patches, std::uint32_t rows, std::uint32_t cols) {
        return mask_to(render_mask(t, patches, PatchGrid::covering(rows, cols, 1)));
      },
      py::arg("template"), py::arg("patch_vectors"), py::arg("rows"), py::arg("cols"));
  m.def(
      "iou",
      [](const std::vector<std::vector<bool>>& pred, const std::vector<std::vector<bool>>& truth) {
        return iou(mask_from(pred), mask_from(truth));
      },
      py::arg("predicted"), py::arg("truth"));

  m.def(
      "_run_experiment",
      [](const std::string& config_json, const std::filesystem::path& base_dir) {
        const auto config = config_from_json(nlohmann::json::parse(config_json), base_dir);
        ExperimentReport report;
        {
          py::gil_scoped_release release;
          report = run_experiment(config);
        }
        return report_to_json(report).dump();
      },
      py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{});

  m.def(
      "load_templates",
      [](const std::filesystem::path& path) {
        const auto set = load_template_set(path);
        return py::make_tuple(set.model_tag, std::string(to_string(set.token_type)), set.templates);
      },
      py::arg("path"), "Returns (model_tag, token_type, templates)");

  m.def(
      "write_cluster_classification",
      [](const std::filesystem::path& dir, std::uint64_t seed, std::uint32_t dim, double separation,
         std::size_t train_per_class, std::size_t test_per_class, const std::vector<std::string>& tokens) {
        synthetic::ClusterOptions o;
        o.seed = seed;
        o.dim = dim;
        o.separation = separation;
        o.train_per_class = train_per_class;
        o.test_per_class = test_per_class;
        o.token_types.clear();
        for (const auto& t : tokens) o.token_types.push_back(parse_or_throw(t, parse_token_type, "token type"));
        return synthetic::write_cluster_classification(dir, o);
      },
      py::arg("dir"), py::arg("seed") = 0, py::arg("dim") = 64, py::arg("separation") = 6.0,
      py::arg("train_per_class") = 100, py::arg("test_per_class") = 100,
      py::arg("token_types") = std::vector<std::string>{"x2"}, "Returns the manifest path");
  m.def(
      "write_patch_segmentation",
      [](const std::filesystem::path& dir, std::uint64_t seed, const std::vector<std::string>& tokens) {
        synthetic::SegmentationOptions o;
        o.seed = seed;
        o.token_types.clear();
        for (const auto& t : tokens) o.token_types.push_back(parse_or_throw(t, parse_token_type, "token type"));
        return synthetic::write_patch_segmentation(dir, o);
      },
      py::arg("dir"), py::arg("seed") = 0, py::arg("token_types") = std::vector<std::string>{"x2"},
      "Returns the manifest path");
}
