#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cdgpa/errors.hpp"
#include "cdgpa/io.hpp"
#include "cdgpa/training.hpp"

namespace py = pybind11;
using namespace cdgpa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) return Tensor(1, static_cast<std::size_t>(a.shape(0)), {a.data(), a.data() + a.size()});
  if (a.ndim() != 2) throw DimensionError("expected a 1-D or 2-D array, got " + std::to_string(a.ndim()) + "-D");
  return Tensor(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                {a.data(), a.data() + a.size()});
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict domains_dict(const SyntheticDomains& d) {
  py::dict out;
  out["source_x"] = to_array(d.source.x);
  out["source_y"] = *d.source.labels;
  out["target_x"] = to_array(d.target.x);
  out["target_y"] = d.hidden_target_labels.labels;
  return out;
}

DomainBatch batch(const Array& x, std::optional<std::vector<std::size_t>> y, Domain domain) {
  return {to_tensor(x), std::move(y), domain};
}

py::dict run_report(const RunReport& r) {
  py::dict out;
  py::list epochs;
  for (const EpochRecord& e : r.epochs) epochs.append(from_json(to_json(e)));
  out["epochs"] = epochs;
  out["summary"] = from_json(report_summary(r));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-alignment prompt adaptation on synthetic domains";

  static py::exception<DivergenceError> divergence(m, "DivergenceError", PyExc_ArithmeticError);
  static py::exception<PreconditionError> precondition(m, "PreconditionError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const DivergenceError& e) {
      divergence(e.what());
    } catch (const PreconditionError& e) {
      precondition(e.what());
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const FormatError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const DiagnosticError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("num_classes", &SyntheticSpec::num_classes)
      .def_readwrite("input_dim", &SyntheticSpec::input_dim)
      .def_readwrite("n_source", &SyntheticSpec::n_source)
      .def_readwrite("n_target", &SyntheticSpec::n_target)
      .def_readwrite("translation", &SyntheticSpec::translation)
      .def_readwrite("rotation", &SyntheticSpec::rotation)
      .def_readwrite("scale", &SyntheticSpec::scale)
      .def_readwrite("conditional_shift", &SyntheticSpec::conditional_shift)
      .def_readwrite("separation", &SyntheticSpec::separation)
      .def_readwrite("noise", &SyntheticSpec::noise)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &ModelConfig::input_dim)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("context_length", &ModelConfig::context_length)
      .def_readwrite("hidden_dim", &ModelConfig::hidden_dim)
      .def_readwrite("temperature", &ModelConfig::temperature)
      .def_readwrite("seed", &ModelConfig::seed);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("gamma_mal", &TrainConfig::gamma_mal)
      .def_readwrite("gamma_cal", &TrainConfig::gamma_cal)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("disc_lr", &TrainConfig::disc_lr)
      .def_readwrite("head_lr", &TrainConfig::head_lr)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("top_c", &TrainConfig::top_c)
      .def_readwrite("confidence_threshold", &TrainConfig::confidence_threshold)
      .def_readwrite("grl_coefficient", &TrainConfig::grl_coefficient)
      .def_readwrite("mal_on", &TrainConfig::mal_on)
      .def_readwrite("cal_on", &TrainConfig::cal_on)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_property(
          "mode", [](const TrainConfig& c) { return to_string(c.mode); },
          [](TrainConfig& c, const std::string& s) { c.mode = parse_prompt_mode(s); });

  py::class_<AdaptationModel>(m, "Model")
      .def_static("create", &AdaptationModel::create, py::arg("config"), py::arg("disc_hidden") = 16,
                  py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_checkpoint(p).model; }, py::arg("path"))
      .def(
          "save", [](const AdaptationModel& mdl, const std::filesystem::path& p, std::uint64_t seed) {
            save_checkpoint(p, mdl, seed);
          },
          py::arg("path"), py::arg("seed") = 0)
      .def_readonly("config", &AdaptationModel::config)
      .def("text_features", [](const AdaptationModel& mdl) { return to_array(mdl.text_features()); })
      .def("image_features", [](const AdaptationModel& mdl, const Array& x) { return to_array(mdl.image_features(to_tensor(x))); })
      .def("class_probs",
           [](const AdaptationModel& mdl, const Array& x) {
             return to_array(class_probs(mdl.image_features(to_tensor(x)), mdl.text_features(), mdl.frozen.temperature));
           })
      .def("predict",
           [](const AdaptationModel& mdl, const Array& x) {
             return argmax_rows(clip_logits(mdl.image_features(to_tensor(x)), mdl.text_features(), mdl.frozen.temperature));
           })
      .def_property_readonly("context", [](const AdaptationModel& mdl) { return to_array(mdl.prompt.context); })
      .def_property_readonly("visual_prompt", [](const AdaptationModel& mdl) { return to_array(mdl.prompt.visual_prompt); })
      .def_property_readonly("has_bank", [](const AdaptationModel& mdl) { return mdl.bank.has_value(); });

  m.def("gen_gaussian_domains", [](const SyntheticSpec& s) { return domains_dict(gen_gaussian_domains(s)); },
        py::arg("spec"), "Labeled source, unlabeled target and the hidden target labels as arrays.");
  m.def("gen_two_moons_shift", [](const SyntheticSpec& s) { return domains_dict(gen_two_moons_shift(s)); },
        py::arg("spec"));

  m.def(
      "fit",
      [](const TrainConfig& config, const AdaptationModel& model, const Array& source_x,
         std::vector<std::size_t> source_y, const Array& target_x, std::optional<std::vector<std::size_t>> target_y) {
        const TrainingData data(batch(source_x, std::move(source_y), Domain::kSource),
                                batch(target_x, std::nullopt, Domain::kTarget));
        std::optional<Evaluator> ev;
        if (target_y) ev.emplace(data.source(), data.target(), TargetLabels{*target_y}, config.seed);
        FitResult r = [&] {
          py::gil_scoped_release release;
          return fit(config, data, model, ev ? &*ev : nullptr);
        }();
        return py::make_tuple(std::move(r.model), run_report(r.report));
      },
      py::arg("config"), py::arg("model"), py::arg("source_x"), py::arg("source_y"), py::arg("target_x"),
      py::arg("target_y") = py::none(),
      "Trains on labeled source and unlabeled target data. target_y only feeds the per-epoch evaluation.");

  m.def("cosine_lr", &cosine_lr, py::arg("t"), py::arg("total_steps"), py::arg("lr0"));
  m.def(
      "cross_entropy",
      [](const Array& logits, const std::vector<std::size_t>& y) { return cross_entropy_rows(to_tensor(logits), y).item(); },
      py::arg("logits"), py::arg("labels"));
  m.def(
      "pseudo_label",
      [](const Array& probs, double threshold) {
        const PseudoLabelSet s = pseudo_label(to_tensor(probs), threshold);
        py::dict out;
        out["labels"] = s.labels;
        out["confidences"] = s.confidences;
        out["accepted"] = s.accepted;
        out["acceptance_rate"] = s.acceptance_rate();
        return out;
      },
      py::arg("probs"), py::arg("threshold"));
  m.def(
      "total_loss",
      [](double cls, double mal, double cal, double gamma_mal, double gamma_cal) {
        return total_loss(LossParts{cls, mal, cal}, gamma_mal, gamma_cal);
      },
      py::arg("cls"), py::arg("mal"), py::arg("cal"), py::arg("gamma_mal"), py::arg("gamma_cal"));
  m.def(
      "cmm_enhance",
      [](const Array& feats, const Array& source_centers, const Array& target_centers) {
        FeatureBank bank;
        bank.source_centers = to_tensor(source_centers);
        bank.target_centers = to_tensor(target_centers);
        return to_array(cmm_enhance(to_tensor(feats), bank));
      },
      py::arg("feats"), py::arg("source_centers"), py::arg("target_centers"));
  m.def(
      "grl_gradient",
      [](const Array& upstream, double coefficient) {
        const Tensor g = to_tensor(upstream);
        Tape tape;
        const Tensor x = tape.watch(Tensor(g.rows(), g.cols()));
        // sum(x ⊙ g) through the reversal layer: its gradient is -coefficient · g.
        const Tensor y = grl(x, coefficient);
        Tensor loss = Tensor::scalar(0.0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const std::vector<std::size_t> row{i};
          loss = add(loss, sum(matmul(gather_rows(y, row), transpose(gather_rows(g, row)))));
        }
        return to_array(tape.backward(loss).of(x));
      },
      py::arg("upstream"), py::arg("coefficient") = 1.0,
      "Gradient that reaches the input of the reversal layer for a given upstream gradient.");
  m.def(
      "proxy_a_distance",
      [](const Array& fs, const Array& ft, std::uint64_t seed) { return proxy_a_distance(to_tensor(fs), to_tensor(ft), seed); },
      py::arg("source_feats"), py::arg("target_feats"), py::arg("seed") = 0);
  m.def(
      "conditional_discrepancy",
      [](const Array& fs, const std::vector<std::size_t>& ys, const Array& ft, const std::vector<std::size_t>& yt) {
        const ConditionalDiscrepancy c = conditional_discrepancy(to_tensor(fs), ys, to_tensor(ft), yt);
        py::dict out;
        out["value"] = c.value;
        out["matched_classes"] = c.matched_classes;
        out["skipped_classes"] = c.skipped_classes;
        return out;
      },
      py::arg("source_feats"), py::arg("source_labels"), py::arg("target_feats"), py::arg("target_labels"));
  m.def(
      "discrepancy_report",
      [](double d_h, double d_c, double source_error) {
        return from_json(to_json(DiscrepancyReport::from_parts(d_h, d_c, source_error)));
      },
      py::arg("d_h_proxy"), py::arg("d_c_empirical"), py::arg("source_error"));
  m.def(
      "pca_project", [](const Array& x, std::size_t dims) { return to_array(pca_project(to_tensor(x), dims)); },
      py::arg("feats"), py::arg("dims") = 2);
}
