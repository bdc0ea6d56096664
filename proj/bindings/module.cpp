#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "inceptseg/data.hpp"
#include "inceptseg/errors.hpp"
#include "inceptseg/metrics.hpp"
#include "inceptseg/network.hpp"
#include "inceptseg/ops.hpp"
#include "inceptseg/training.hpp"

namespace py = pybind11;
using namespace iseg;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor4 to_tensor(const Arr& a) {
  if (a.ndim() != 4)
    throw std::invalid_argument("expected a (n,h,w,c) array, got ndim=" +
                                std::to_string(a.ndim()));
  Tensor4 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
            static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

py::array from_tensor(const Tensor4& t) {
  py::array_t<double> a({t.n, t.h, t.w, t.c});
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

Kernel4 to_kernel(const Arr& w, const Arr& bias) {
  if (w.ndim() != 4)
    throw std::invalid_argument("kernel must be (kh,kw,cin,cout)");
  Kernel4 k(static_cast<int>(w.shape(0)), static_cast<int>(w.shape(1)),
            static_cast<int>(w.shape(2)), static_cast<int>(w.shape(3)));
  std::copy(w.data(), w.data() + w.size(), k.data.begin());
  if (bias.ndim() != 1 || bias.shape(0) != w.shape(3))
    throw std::invalid_argument("bias must be (cout,)");
  std::copy(bias.data(), bias.data() + bias.size(), k.bias.begin());
  return k;
}

ops::Padding padding_from(const std::string& s) {
  if (s == "same") return ops::Padding::Same;
  if (s == "valid") return ops::Padding::Valid;
  throw std::invalid_argument("padding must be 'same' or 'valid', got '" + s + "'");
}

py::dict counts_dict(const ConfusionCounts& c) {
  py::dict d;
  d["tp"] = c.tp;
  d["fp"] = c.fp;
  d["tn"] = c.tn;
  d["fn"] = c.fn;
  return d;
}

py::dict scalars_dict(const ScalarMetrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["sensitivity"] = m.sensitivity;
  d["specificity"] = m.specificity;
  d["precision"] = m.precision;
  d["f1"] = m.f1;
  return d;
}

NetworkSpec spec_from(const std::string& variant, int d, const std::vector<int>& filters,
                      int in_h, int in_w, int in_c, double dropout, uint64_t seed) {
  NetworkSpec s;
  s.variant = variant_from_name(variant);
  s.d = d;
  s.base_filters = filters;
  s.in_h = in_h;
  s.in_w = in_w;
  s.in_c = in_c;
  s.dropout_rate = dropout;
  s.seed = seed;
  s.validate();
  return s;
}

struct Model {
  std::unique_ptr<ModelGraph> graph;

  py::array forward(const Arr& x, bool train) {
    return from_tensor(graph->forward(to_tensor(x), train));
  }
  size_t parameter_count() const { return count_parameters(*graph).total; }
  py::list audit() const {
    py::list out;
    for (const auto& l : count_parameters(*graph).per_layer)
      out.append(py::make_tuple(l.name, l.count));
    return out;
  }
  void save(const std::string& path) const { save_checkpoint(*graph, path); }
  std::string spec() const { return graph->spec().canonical(); }
};

}  // namespace

PYBIND11_MODULE(_inceptseg, m) {
  m.doc() = "segmentation engine core (U-net / Inception / BConvLSTM)";

  m.def(
      "conv2d",
      [](const Arr& x, const Arr& w, const Arr& bias, const std::string& padding) {
        return from_tensor(ops::conv2d(to_tensor(x), to_kernel(w, bias),
                                       padding_from(padding)));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias"), py::arg("padding") = "same");

  m.def("maxpool2x2",
        [](const Arr& x) { return from_tensor(ops::maxpool2x2(to_tensor(x)).output); });

  m.def(
      "bilinear_resize",
      [](const Arr& x, int h, int w) {
        return from_tensor(ops::bilinear_resize(to_tensor(x), h, w));
      },
      py::arg("x"), py::arg("out_h"), py::arg("out_w"));

  m.def(
      "confusion",
      [](const Arr& pred, const Arr& truth) {
        return counts_dict(confusion(to_tensor(pred), to_tensor(truth)));
      },
      py::arg("pred_binary"), py::arg("truth"));

  m.def(
      "scalar_metrics",
      [](long long tp, long long fp, long long tn, long long fn) {
        return scalars_dict(scalar_metrics({tp, fp, tn, fn}));
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "jaccard",
      [](long long tp, long long fp, long long tn, long long fn) {
        return jaccard(ConfusionCounts{tp, fp, tn, fn}).value;
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) {
        const RocCurve r = roc_auc(scores, labels);
        return py::make_tuple(r.auc, r.points);
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "generate_synthetic",
      [](int count, int size, const std::string& scale, uint64_t seed) {
        py::list out;
        for (const auto& s : generate_synthetic(count, size, scale, seed))
          out.append(py::make_tuple(from_tensor(s.image), from_tensor(s.mask),
                                    s.source_id));
        return out;
      },
      py::arg("count"), py::arg("size"), py::arg("structure_scale") = "small",
      py::arg("seed") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& variant, int d, const std::vector<int>& filters,
                       int in_h, int in_w, int in_c, double dropout, uint64_t seed) {
             Model mod;
             mod.graph = build_model(
                 spec_from(variant, d, filters, in_h, in_w, in_c, dropout, seed));
             return mod;
           }),
           py::arg("variant") = "inceptnet", py::arg("d") = 1,
           py::arg("filters") = std::vector<int>{64, 128, 256, 512},
           py::arg("in_h") = 64, py::arg("in_w") = 64, py::arg("in_c") = 1,
           py::arg("dropout") = 0.5, py::arg("seed") = 0)
      .def("forward", &Model::forward, py::arg("x"), py::arg("train") = false)
      .def("parameter_count", &Model::parameter_count)
      .def("audit", &Model::audit)
      .def("save", &Model::save, py::arg("path"))
      .def("spec", &Model::spec)
      .def_static("load", [](const std::string& path) {
        Model mod;
        mod.graph = load_checkpoint(path, checkpoint_spec(path));
        return mod;
      });

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
}
