#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rkt/checkpoint.hpp"
#include "rkt/pipeline.hpp"

namespace py = pybind11;
using namespace rkt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array stack_images(const Dataset& ds) {
  std::vector<Tensor> items(ds.images.begin(), ds.images.end());
  return items.empty() ? Array(std::vector<py::ssize_t>{0}) : to_array(stack(items));
}

SamplePair pair_from(const Array& x, const Array& x_tilde, std::size_t y) {
  SamplePair p;
  p.x = to_tensor(x);
  p.x_tilde = to_tensor(x_tilde);
  p.y = y;
  p.mask = Tensor(p.x.shape(), 1.0);
  if (p.x.rank() == 3) p.region = {0, 0, p.x.dim(1), p.x.dim(2)};
  return p;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  auto put = [&](const char* k, const std::optional<double>& v) {
    if (v) d[k] = *v;
  };
  put("overall_accuracy", r.overall_accuracy);
  put("attack_success_rate", r.attack_success_rate);
  put("false_confidence", r.false_confidence);
  put("clean_set_accuracy", r.clean_set_accuracy);
  put("spurious_set_accuracy", r.spurious_set_accuracy);
  put("spurious_gap", r.spurious_gap());
  put("leakage_ratio", r.leakage_ratio);
  put("pcc", r.pcc);
  return d;
}

/// Config plus its derived datasets, built once.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), data_(prepare_experiment(cfg_)) {}

  Model train() const { return train_experiment_model(cfg_, data_).model; }

  py::tuple rectify(const Model& model, const std::string& mode) const {
    if (mode != "dynamic" && mode != "static") throw std::invalid_argument("mode must be 'dynamic' or 'static'");
    const RectifyBudget budget = rectify_budget(cfg_);
    const RectifyOptions opts = rectify_options(cfg_);
    const RectifyResult r = mode == "dynamic" ? rkt::rectify(model, data_.pairs, data_.test, data_.reference, budget, opts)
                                              : static_rectify(model, data_.pairs, data_.test, data_.reference, budget, opts);
    return py::make_tuple(r.model, r.report.to_json());
  }

  py::dict evaluate(const Model& model, std::size_t ig_steps) const {
    return metrics_dict(evaluate_experiment(model, data_, cfg_, ig_steps));
  }

  py::tuple locate_layer(const Model& model) const {
    const LayerStats stats = editable_layer_stats(model, data_.reference, cfg_.edit);
    const LayerScores s = score_layers(model, data_.pairs, stats, cfg_.score);
    return py::make_tuple(rkt::locate(s), s.layers, s.scores);
  }

  py::tuple test_set() const { return py::make_tuple(stack_images(data_.test), data_.test.labels); }
  const ExperimentConfig& config() const { return cfg_; }
  std::size_t pair_count() const { return data_.pairs.size(); }

 private:
  ExperimentConfig cfg_;
  ExperimentData data_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Rank-one model editing: attribution-guided layer localization and budgeted rectification.";

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("out", &ExperimentConfig::out)
      .def_readwrite("pairs", &ExperimentConfig::pairs)
      .def("serialize", &serialize_config)
      .def("validate", &ExperimentConfig::validate)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; })
      .def("__repr__", &serialize_config);
  m.def("parse_config", &parse_config, py::arg("text"));
  m.def("load_config", &load_config, py::arg("path"));
  m.def("sub_seed", &sub_seed, py::arg("seed"), py::arg("name"));

  py::class_<Model>(m, "Model")
      .def_static("small_cnn",
                  [](std::vector<std::size_t> shape, std::size_t classes, std::uint64_t seed) {
                    return Model::small_cnn(shape, classes, seed);
                  },
                  py::arg("input_shape"), py::arg("classes"), py::arg("seed"))
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("classes", &Model::classes)
      .def_property_readonly("depth", &Model::depth)
      .def_property("editable_layers", &Model::editable_layers, &Model::set_editable_layers)
      .def("forward", [](const Model& self, const Array& batch) { return to_array(self.forward(to_tensor(batch))); },
           py::arg("batch"))
      .def("predict",
           [](const Model& self, const Array& x) {
             const Prediction p = self.predict(to_tensor(x));
             return py::make_tuple(to_array(p.logits), p.label);
           },
           py::arg("x"))
      .def("digest", &Model::parameter_digest)
      .def("__eq__", [](const Model& a, const Model& b) { return a == b; });

  m.def("save_checkpoint",
        [](const std::filesystem::path& path, const Model& model, const std::string& note) {
          CheckpointMetadata meta;
          meta.note = note;
          save_checkpoint(path, model, meta);
        },
        py::arg("path"), py::arg("model"), py::arg("note") = "");
  m.def("load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).model; }, py::arg("path"));

  m.def("generate",
        [](std::size_t classes, std::size_t per_class, std::uint64_t seed, const std::string& split, double distractor) {
          DataSpec spec;
          spec.classes = classes;
          spec.per_class = per_class;
          spec.distractor = distractor;
          const Dataset ds = generate(spec, seed, split == "test" ? Split::test : Split::train);
          return py::make_tuple(stack_images(ds), ds.labels);
        },
        py::arg("classes") = 4, py::arg("per_class") = 250, py::arg("seed") = 0, py::arg("split") = "train",
        py::arg("distractor") = 0.0);

  m.def("apply_trigger",
        [](const Array& x, double visibility, const std::string& location, const std::string& pattern) {
          CorruptionSpec spec;
          spec.location = location_from_string(location);
          spec.pattern = builtin_pattern(pattern_kind_from_string(pattern));
          return to_array(apply_trigger(to_tensor(x), spec, visibility));
        },
        py::arg("x"), py::arg("visibility") = 0.5, py::arg("location") = "BR", py::arg("pattern") = "glyph");

  py::class_<KeyStatistics>(m, "KeyStatistics")
      .def_readonly("C", &KeyStatistics::C)
      .def_readonly("Z", &KeyStatistics::Z)
      .def_readonly("sigma", &KeyStatistics::sigma)
      .def_readonly("lam", &KeyStatistics::lambda)
      .def_property_readonly("condition_number", &KeyStatistics::condition_number)
      .def("solve", &KeyStatistics::solve)
      .def("whiten", [](const KeyStatistics& s, const Vector& k) { return whiten(k, s); });
  m.def("key_stats",
        [](const Matrix& K, double lam) {
          KeySet ks;
          ks.K = K;
          return key_stats(ks, lam);
        },
        py::arg("K"), py::arg("lam"));
  m.def("span_residual",
        [](const Matrix& K, const Vector& k, double lam) {
          KeySet ks;
          ks.K = K;
          const SpanResidual r = span_residual(ks, k, lam);
          return py::make_tuple(r.r, r.relative, r.in_span);
        },
        py::arg("K"), py::arg("k"), py::arg("lam") = 0.0);

  m.def("layer_ig",
        [](const Model& model, std::size_t l, const Array& x, const Array& x_tilde, std::size_t y, std::size_t n_steps,
           const std::string& path) {
          const SamplePair p = pair_from(x, x_tilde, y);
          return to_array(layer_ig(model, l, p, default_head(model, p), n_steps, ig_path_from_string(path)).M);
        },
        py::arg("model"), py::arg("layer"), py::arg("x"), py::arg("x_tilde"), py::arg("y"), py::arg("n_steps") = 64,
        py::arg("path") = "feature");

  m.def("locate",
        [](std::vector<std::size_t> layers, std::vector<double> scores) {
          LayerScores s;
          s.layers = std::move(layers);
          s.scores = std::move(scores);
          if (s.layers.size() != s.scores.size()) throw std::invalid_argument("locate: layers and scores differ in length");
          return locate(s);
        },
        py::arg("layers"), py::arg("scores"));
  m.def("pcc", [](const Array& a, const Array& b) { return pcc(to_tensor(a), to_tensor(b)); }, py::arg("a"), py::arg("b"));

  py::class_<Experiment>(m, "Experiment")
      .def(py::init<ExperimentConfig>(), py::arg("config"))
      .def_property_readonly("config", &Experiment::config)
      .def_property_readonly("pair_count", &Experiment::pair_count)
      .def("train", &Experiment::train, py::call_guard<py::gil_scoped_release>())
      .def("rectify", &Experiment::rectify, py::arg("model"), py::arg("mode") = "dynamic")
      .def("evaluate", &Experiment::evaluate, py::arg("model"), py::arg("ig_steps") = 64)
      .def("locate", &Experiment::locate_layer, py::arg("model"))
      .def("test_set", &Experiment::test_set);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
}
