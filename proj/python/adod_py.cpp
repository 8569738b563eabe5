#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "adod/cli.hpp"
#include "adod/error.hpp"
#include "adod/evaluation.hpp"
#include "adod/network.hpp"
#include "adod/postprocess.hpp"
#include "adod/training.hpp"
#include "adod/verify.hpp"

namespace py = pybind11;
using namespace adod;

namespace {

py::tuple run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

NetworkSpec make_spec(std::size_t input_width, std::vector<std::size_t> stage_widths,
                      std::size_t num_classes, bool residual, bool attention, bool domain,
                      std::size_t num_domains) {
  NetworkSpec s;
  s.input_width = input_width;
  if (!stage_widths.empty()) s.stage_widths = std::move(stage_widths);
  s.num_classes = num_classes;
  s.use_residual = residual;
  s.use_channel_attention = attention;
  s.use_domain = domain;
  s.num_domains = num_domains;
  s.validate();
  return s;
}

}  // namespace

PYBIND11_MODULE(adod, m) {
  m.doc() = "Underwater detector core: postprocessing, metrics, topology and the adod tool";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<BBox>(m, "BBox")
      .def(py::init<double, double, double, double>(), py::arg("x_min"), py::arg("y_min"),
           py::arg("x_max"), py::arg("y_max"))
      .def_readwrite("x_min", &BBox::x_min)
      .def_readwrite("y_min", &BBox::y_min)
      .def_readwrite("x_max", &BBox::x_max)
      .def_readwrite("y_max", &BBox::y_max)
      .def("area", &BBox::area)
      .def("__repr__", [](const BBox& b) {
        std::ostringstream os;
        os << "BBox(" << b.x_min << ", " << b.y_min << ", " << b.x_max << ", " << b.y_max << ")";
        return os.str();
      });

  py::class_<Detection>(m, "Detection")
      .def(py::init([](BBox b, std::size_t cls, double score) { return Detection{b, cls, score, 0}; }),
           py::arg("bbox"), py::arg("class_id"), py::arg("score"))
      .def_readwrite("bbox", &Detection::bbox)
      .def_readwrite("class_id", &Detection::class_id)
      .def_readwrite("score", &Detection::score)
      .def("__eq__", [](const Detection& a, const Detection& b) { return a == b; });

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("nms", &nms, py::arg("detections"), py::arg("iou_threshold"));
  m.def(
      "average_precision",
      [](const std::vector<double>& scores, const std::vector<bool>& true_positive,
         std::size_t num_gt, bool eleven_point) {
        if (scores.size() != true_positive.size())
          throw ValidationError("scores and true_positive differ in length");
        std::vector<LabeledDetection> l;
        for (std::size_t i = 0; i < scores.size(); ++i) l.push_back({scores[i], true_positive[i]});
        return average_precision(std::move(l), num_gt,
                                 eleven_point ? Interpolation::kElevenPoint : Interpolation::kAllPoint);
      },
      py::arg("scores"), py::arg("true_positive"), py::arg("num_gt"), py::arg("eleven_point") = false);
  m.def("mean_ap", &mean_ap, py::arg("per_class_ap"));
  m.def("default_class_names", &default_class_names);

  m.def(
      "parameter_count",
      [](std::size_t input_width, std::vector<std::size_t> stage_widths, std::size_t num_classes,
         bool residual, bool attention, bool domain, std::size_t num_domains) {
        return Network(make_spec(input_width, std::move(stage_widths), num_classes, residual,
                                 attention, domain, num_domains),
                       0)
            .parameter_count();
      },
      py::arg("input_width") = 416, py::arg("stage_widths") = std::vector<std::size_t>{},
      py::arg("num_classes") = 5, py::arg("residual") = false, py::arg("attention") = false,
      py::arg("domain") = false, py::arg("num_domains") = 2);
  m.def(
      "grid_sizes",
      [](std::size_t input_width) {
        NetworkSpec s;
        s.input_width = input_width;
        return std::vector<std::size_t>{s.grid_size(0), s.grid_size(1), s.grid_size(2)};
      },
      py::arg("input_width") = 416);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, bool include_chain) {
        GradCheckSuiteOptions o;
        o.seed = seed;
        o.include_chain = include_chain;
        std::vector<GradCheckCase> cases;
        {
          py::gil_scoped_release release;
          cases = run_gradcheck_suite(o);
        }
        py::list out;
        for (const auto& c : cases)
          out.append(py::dict(py::arg("category") = c.category, py::arg("op") = c.op,
                              py::arg("passed") = c.report.passed(),
                              py::arg("max_rel_error") = c.report.max_rel_error()));
        return out;
      },
      py::arg("seed") = 0, py::arg("include_chain") = false);

  m.def("run_cli", &run, py::arg("args"),
        "Run one adod subcommand; returns (exit_code, stdout, stderr).");
  m.def("ablation_rows", [] {
    py::list out;
    for (const auto& r : ablation_rows()) out.append(r.name);
    return out;
  });
}
