#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "seqbench/bench.hpp"
#include "seqbench/common.hpp"
#include "seqbench/model.hpp"
#include "seqbench/text.hpp"
#include "seqbench/training.hpp"

namespace py = pybind11;

namespace {

using namespace seqbench;

ModelConfigs configs_from(double scale, const std::vector<std::string>& overrides) {
  ModelConfigs configs = scale == 1.0 ? ModelConfigs{} : scaled_configs(scale);
  configs.apply_overrides(overrides);
  return configs;
}

py::dict count_dict(const ParamCount& count) {
  py::dict d;
  d["total"] = count.total;
  d["trainable"] = count.trainable;
  d["frozen"] = count.frozen;
  return d;
}

template <typename T>
py::dict train_synthetic_impl(BenchmarkOptions options) {
  const BenchmarkResult result = run_benchmark<T>(options);
  py::list epochs;
  for (const EpochMetrics& m : result.history.at(0)) {
    py::dict row;
    row["epoch"] = m.epoch;
    row["train_loss"] = m.train_loss;
    row["train_accuracy"] = m.train_acc;
    if (m.has_validation) {
      row["validation_loss"] = m.val_loss;
      row["validation_accuracy"] = m.val_acc;
    }
    row["wall_ms"] = m.wall_ms;
    epochs.append(row);
  }
  py::dict out;
  out["model"] = std::string(model_name(result.models.at(0)));
  out["epochs"] = epochs;
  out["mean_epoch_ms"] = result.mean_epoch_ms.at(0);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Four text classifiers on one reverse-mode autodiff engine";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.attr("CURVE_HEADER") = CurveTable::kFullHeader;

  m.def("model_names", [] {
    std::vector<std::string> names;
    for (ModelKind kind : all_models()) names.emplace_back(model_name(kind));
    return names;
  });

  m.def(
      "display_name",
      [](const std::string& model) {
        return std::string(model_display_name(model_from_name(model)));
      },
      py::arg("model"));

  m.def(
      "describe",
      [](const std::string& model, bool as_json, double scale,
         const std::vector<std::string>& overrides) {
        const LayerReport report =
            describe_model(build_model(model_from_name(model),
                                       configs_from(scale, overrides)));
        return as_json ? report.to_json() : report.to_text();
      },
      py::arg("model"), py::arg("as_json") = false, py::arg("scale") = 1.0,
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "verify",
      [](const std::vector<std::string>& overrides) {
        const VerifyResult result = verify_all(configs_from(1.0, overrides));
        return py::make_tuple(result.passed, result.report);
      },
      py::arg("overrides") = std::vector<std::string>{},
      "Check every architecture against its reference parameter counts; "
      "returns (passed, report).");

  m.def(
      "parameter_counts",
      [](const std::string& model, double scale,
         const std::vector<std::string>& overrides) {
        const ModelPlan plan =
            build_model(model_from_name(model), configs_from(scale, overrides));
        py::dict d = count_dict(plan.totals());
        if (plan.branch_a_begin >= 0) {
          d["branch_a"] =
              count_dict(plan.branch_total(plan.branch_a_begin, plan.branch_a_end));
          d["branch_b"] =
              count_dict(plan.branch_total(plan.branch_b_begin, plan.branch_b_end));
        }
        return d;
      },
      py::arg("model"), py::arg("scale") = 1.0,
      py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "encode_chars",
      [](const std::string& text, int64_t length) {
        const CharAlphabet alphabet;
        return encode_chars(text, alphabet, length);
      },
      py::arg("text"), py::arg("length") = 1014,
      "Map text onto the 69-symbol alphabet: one id per character, zero for "
      "anything unknown, truncated or zero-padded to `length`.");

  m.def("tokenize", &tokenize, py::arg("text"),
        "Lowercased alphanumeric runs, in order.");

  m.def(
      "synthetic_corpus",
      [](int64_t n, uint64_t seed) {
        const Dataset data = make_synthetic_corpus(n, seed);
        py::list out;
        for (int64_t i = 0; i < data.size(); ++i) {
          out.append(py::make_tuple(
              data.texts[static_cast<size_t>(i)],
              data.class_names[static_cast<size_t>(
                  data.labels[static_cast<size_t>(i)])]));
        }
        return out;
      },
      py::arg("n"), py::arg("seed") = 1,
      "Deterministic 5-class corpus as (text, label) pairs.");

  m.def(
      "train_synthetic",
      [](const std::string& model, int64_t n, int64_t epochs, double scale,
         uint64_t seed, int64_t batch, double lr, double val_split,
         const std::string& precision) {
        BenchmarkOptions options;
        options.models = {model_from_name(model)};
        options.synthetic_n = n;
        options.epochs = epochs;
        options.scale = scale;
        options.seed = seed;
        options.batch = batch;
        options.lr = lr;
        options.val_split = val_split;
        if (precision == "f64") return train_synthetic_impl<double>(options);
        if (precision == "f32") return train_synthetic_impl<float>(options);
        throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
      },
      py::arg("model"), py::arg("n") = 200, py::arg("epochs") = 2,
      py::arg("scale") = 0.05, py::arg("seed") = 1, py::arg("batch") = 16,
      py::arg("lr") = 3e-3, py::arg("val_split") = 0.0,
      py::arg("precision") = "f32",
      "Train one model on the synthetic corpus; returns per-epoch metrics "
      "and the mean wall time per epoch.");
}
