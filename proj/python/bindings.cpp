#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nconv/classic_nc.hpp"
#include "nconv/data_io.hpp"
#include "nconv/error.hpp"
#include "nconv/gradcheck.hpp"
#include "nconv/loss_metrics.hpp"
#include "nconv/multiscale_net.hpp"
#include "nconv/nconv_layer.hpp"
#include "nconv/optim_train.hpp"

namespace py = pybind11;
using namespace nconv;

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

Tensor as_plane(const Array& a, const char* name) {
  if (a.ndim() != 2) throw ShapeError(std::string(name) + " must be a 2-D array");
  return to_tensor(a);
}

ConfSignal image_signal(const Array& z, const Array& c) {
  const Tensor tz = as_plane(z, "depth"), tc = as_plane(c, "confidence");
  return {tz.reshaped({1, tz.dim(0), tz.dim(1)}), tc.reshaped({1, tc.dim(0), tc.dim(1)})};
}

NonNegFn make_gamma(const std::string& kind, double beta) { return {parse_nonneg_kind(kind), beta}; }

Scene scene_from(const py::dict& d) {
  Scene s;
  s.gt = as_plane(d["gt"].cast<Array>(), "gt");
  s.sparse = as_plane(d["sparse"].cast<Array>(), "sparse");
  s.confidence = as_plane(d["confidence"].cast<Array>(), "confidence");
  s.gt_mask = d.contains("gt_mask") ? as_plane(d["gt_mask"].cast<Array>(), "gt_mask") : Tensor(s.gt.shape(), 1.0);
  return s;
}

py::dict scene_to(const Scene& s) {
  py::dict d;
  d["gt"] = to_array(s.gt);
  d["sparse"] = to_array(s.sparse);
  d["confidence"] = to_array(s.confidence);
  d["gt_mask"] = to_array(s.gt_mask);
  return d;
}

std::vector<Scene> scenes_from(const py::list& l) {
  std::vector<Scene> out;
  for (const auto& item : l) out.push_back(scene_from(item.cast<py::dict>()));
  return out;
}

py::dict metrics_to(const MetricsReport& m) {
  py::dict d;
  d["mae"] = m.mae;
  d["rmse"] = m.rmse;
  d["imae"] = m.imae;
  d["irmse"] = m.irmse;
  d["n"] = m.n;
  return d;
}

py::dict log_to(const EpochLog& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["data_term"] = e.data_term;
  d["conf_term"] = e.conf_term;
  d["total"] = e.total;
  d["mean_max_conf"] = e.mean_max_conf;
  d["std_max_conf"] = e.std_max_conf;
  d["val_mae"] = e.val_mae;
  d["val_rmse"] = e.val_rmse;
  return d;
}

// A spec plus its trained state, the unit the Python side works with.
struct Net {
  NetSpec spec;
  NetState state;

  py::tuple forward(const Array& sparse, const Array& confidence) const {
    const ConfSignal out = unguided_forward(spec, state, image_signal(sparse, confidence));
    const std::size_t H = out.height(), W = out.width();
    return py::make_tuple(to_array(out.z.reshaped({H, W})), to_array(out.c.reshaped({H, W})));
  }
};

}  // namespace

PYBIND11_MODULE(_nconv, m) {
  m.doc() = "Normalized convolution for sparse depth completion";

  // Translators run in reverse registration order, so the base goes first.
  auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", base.ptr());

  m.def(
      "normalized_average",
      [](const Array& F, const Array& C, const Array& applicability) {
        const auto na = classic::normalized_average_map(as_plane(F, "F"), as_plane(C, "C"), as_plane(applicability, "a"));
        return py::make_tuple(to_array(na.value), to_array(na.valid));
      },
      py::arg("data"), py::arg("confidence"), py::arg("applicability"),
      "Classic normalized averaging. Returns (value, valid).");

  m.def("gaussian_kernel", [](std::size_t size, double sigma) { return to_array(classic::gaussian_kernel(size, sigma)); },
        py::arg("size"), py::arg("sigma"));

  m.def(
      "nconv_forward",
      [](const Array& weight, const Array& bias, const Array& z, const Array& c, const std::string& gamma,
         double beta, double epsilon) {
        const NConvLayer layer{to_tensor(weight), to_tensor(bias), make_gamma(gamma, beta), epsilon,
                               ConfPropagation::Normalized};
        const LayerOutput out = nconv_forward(layer, {to_tensor(z), to_tensor(c)});
        return py::make_tuple(to_array(out.out.z), to_array(out.out.c));
      },
      py::arg("weight"), py::arg("bias"), py::arg("z"), py::arg("c"), py::arg("gamma") = "softplus",
      py::arg("beta") = 10.0, py::arg("epsilon") = 1e-8,
      "One normalized-convolution layer. weight [O,I,kh,kw], z and c [I,H,W]. Returns (z, c) of shape [O,H,W].");

  py::class_<Net>(m, "Net")
      .def(py::init([](std::size_t scales, std::size_t channels, bool share_weights, const std::string& gamma,
                       double beta, double epsilon, std::uint64_t seed) {
             NetSpec spec;
             spec.scales = scales;
             spec.channels = channels;
             spec.share_weights = share_weights;
             spec.gamma = make_gamma(gamma, beta);
             spec.epsilon = epsilon;
             spec.validate();
             return Net{spec, init_net_state(spec, seed)};
           }),
           py::arg("scales") = 3, py::arg("channels") = 2, py::arg("share_weights") = true,
           py::arg("gamma") = "softplus", py::arg("beta") = 10.0, py::arg("epsilon") = 1e-8, py::arg("seed") = 1)
      .def_static("load",
                  [](const std::filesystem::path& dir) {
                    Checkpoint ck = load_checkpoint(dir);
                    return Net{ck.spec, std::move(ck.state)};
                  })
      .def("save", [](const Net& n, const std::filesystem::path& dir) { save_checkpoint(dir, n.spec, n.state); })
      .def("forward", &Net::forward, py::arg("sparse"), py::arg("confidence"),
           "Returns (depth, confidence) maps of the input size.")
      .def_property_readonly("param_count", [](const Net& n) { return count_params(n.state); })
      .def_property_readonly("size_multiple", [](const Net& n) { return n.spec.size_multiple(); })
      .def_property_readonly("spec_text", [](const Net& n) { return format_net_spec(n.spec); })
      .def(
          "train",
          [](Net& n, const py::list& data, const py::list& val, int epochs, double lr, std::uint64_t seed,
             const std::string& loss, std::size_t batch_size) {
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.lr = lr;
            cfg.seed = seed;
            cfg.loss = parse_loss_mode(loss);
            cfg.batch_size = batch_size;
            const std::vector<Scene> train_set = scenes_from(data), val_set = scenes_from(val);
            TrainResult r;
            {
              py::gil_scoped_release release;
              r = train_from(n.spec, n.state, cfg, train_set, val_set);
            }
            n.state = std::move(r.state);
            py::list log;
            for (const auto& e : r.log) log.append(log_to(e));
            return log;
          },
          py::arg("data"), py::arg("val") = py::list(), py::arg("epochs") = 30, py::arg("lr") = 0.01,
          py::arg("seed") = 1, py::arg("loss") = "conf", py::arg("batch_size") = 4,
          "Trains in place and returns the per-epoch log as a list of dicts.")
      .def(
          "evaluate",
          [](const Net& n, const py::list& scenes) {
            const Evaluation ev = evaluate(n.spec, n.state, scenes_from(scenes));
            py::dict d = metrics_to(ev.metrics);
            d["mean_max_conf"] = ev.mean_max_conf;
            d["std_max_conf"] = ev.std_max_conf;
            d["conf_error_rho"] = conf_error_pearson(ev.errors, ev.confidences);
            return d;
          },
          py::arg("scenes"));

  m.def(
      "synthetic_set",
      [](std::size_t count, std::size_t height, std::size_t width, double density, std::uint64_t seed) {
        py::list out;
        for (const auto& s : make_synthetic_set(count, height, width, density, seed)) out.append(scene_to(s));
        return out;
      },
      py::arg("count"), py::arg("height") = 64, py::arg("width") = 64, py::arg("density") = 0.05,
      py::arg("seed") = 1, "List of dicts with gt, sparse, confidence and gt_mask arrays.");

  m.def(
      "depth_metrics",
      [](const Array& pred, const Array& gt, std::optional<Array> mask) {
        const Tensor t = to_tensor(gt);
        return metrics_to(depth_metrics(to_tensor(pred), t, mask ? to_tensor(*mask) : Tensor(t.shape(), 1.0)));
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none());

  m.def(
      "conf_error_pearson",
      [](const Array& errors, const Array& confidences) {
        return conf_error_pearson(to_tensor(errors).data(), to_tensor(confidences).data());
      },
      py::arg("errors"), py::arg("confidences"));

  m.def(
      "read_pgm16", [](const std::filesystem::path& p, double scale) { return to_array(read_pgm16(p, scale)); },
      py::arg("path"), py::arg("scale") = kDepthScale);
  m.def(
      "write_pgm16",
      [](const std::filesystem::path& p, const Array& a, double scale) { write_pgm16(p, as_plane(a, "image"), scale); },
      py::arg("path"), py::arg("image"), py::arg("scale") = kDepthScale);

  m.def(
      "gradcheck_network",
      [](std::size_t scales, std::uint64_t seed) {
        NetSpec spec;
        spec.scales = scales;
        const auto rep = gradcheck::network_check(spec, seed);
        return py::make_tuple(rep.pass, rep.max_rel());
      },
      py::arg("scales") = 2, py::arg("seed") = 1,
      "Finite-difference check of the end-to-end loss gradient. Returns (passed, max_rel_error).");

  m.attr("DEPTH_SCALE") = kDepthScale;
  m.attr("CONFIDENCE_SCALE") = kConfidenceScale;
}
