#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mh2f/checkpoint.hpp"
#include "mh2f/config.hpp"
#include "mh2f/losses.hpp"
#include "mh2f/metrics.hpp"
#include "mh2f/model.hpp"
#include "mh2f/rainsim.hpp"
#include "mh2f/trainer.hpp"

namespace py = pybind11;
using namespace mh2f;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ArrayD = py::array_t<double, py::array::c_style | py::array::forcecast>;

TensorF tensor_from_array(const Array& a, const char* what) {
  if (a.ndim() != 4)
    throw precondition_error(std::string(what) + ": expected a 4-D (n,c,h,w) array, got " +
                             std::to_string(a.ndim()) + " dims");
  TensorF t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
             static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))});
  std::copy_n(a.data(), t.numel(), t.data.data());
  return t;
}

TensorD tensor_from_array_d(const ArrayD& a, const char* what) {
  if (a.ndim() != 4)
    throw precondition_error(std::string(what) + ": expected a 4-D (n,c,h,w) array, got " +
                             std::to_string(a.ndim()) + " dims");
  TensorD t({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
             static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))});
  std::copy_n(a.data(), t.numel(), t.data.data());
  return t;
}

py::array_t<float> array_from_tensor(const TensorF& t) {
  py::array_t<float> a({t.shape.n, t.shape.c, t.shape.h, t.shape.w});
  std::copy_n(t.data.data(), t.numel(), a.mutable_data());
  return a;
}

py::array_t<double> array2d_from_tensor(const TensorD& t) {
  py::array_t<double> a({t.shape.h, t.shape.w});
  std::copy_n(t.data.data(), t.numel(), a.mutable_data());
  return a;
}

py::array_t<float> array2d_from_tensor(const TensorF& t) {
  py::array_t<float> a({t.shape.h, t.shape.w});
  std::copy_n(t.data.data(), t.numel(), a.mutable_data());
  return a;
}

// (h,w,3) float image <-> (1,3,h,w) tensor
TensorF tensor_from_hwc(const Array& a, const char* what) {
  if (a.ndim() != 3 || a.shape(2) != 3)
    throw precondition_error(std::string(what) + ": expected an (h,w,3) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  TensorF t({1, 3, h, w});
  auto r = a.unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(0, c, y, x) = r(y, x, c);
  return t;
}

py::array_t<float> hwc_from_tensor(const TensorF& t) {
  py::array_t<float> a({t.shape.h, t.shape.w, 3});
  auto r = a.mutable_unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.shape.h; ++y)
      for (int x = 0; x < t.shape.w; ++x) r(y, x, c) = t.at(0, c, y, x);
  return a;
}

struct PyNetwork {
  ModelParams<float> params;

  explicit PyNetwork(const ModelConfig& cfg) : params(init_model<float>(cfg)) {}
  explicit PyNetwork(ModelParams<float> p) : params(std::move(p)) {}

  py::array_t<float> forward(const Array& x, bool clamp) {
    TensorF in = tensor_from_array(x, "forward");
    return array_from_tensor(mh2f_forward(in, params, clamp));
  }

  py::array_t<float> derain(const Array& hwc) {
    const TensorF img = tensor_from_hwc(hwc, "derain");
    validate_image_range(img, "derain");
    return hwc_from_tensor(derain_image(params, img));
  }

  long long n_params() { return param_count(params); }

  void save(const std::string& path) {
    Checkpoint c;
    c.train_config.model = params.config;
    c.params = params;
    c.opt = make_adam_state(c.params);
    save_checkpoint(c, path);
  }

  static PyNetwork load(const std::string& path) {
    return PyNetwork(load_checkpoint(path).params);
  }
};

RainParams rain_from_kwargs(double angle_deg, int length_px, double density,
                            double intensity, double intensity_jitter,
                            std::uint64_t seed) {
  RainParams p;
  p.angle_deg = angle_deg;
  p.length_px = length_px;
  p.density = density;
  p.intensity = intensity;
  p.intensity_jitter = intensity_jitter;
  p.seed = seed;
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-scale hourglass deraining network: forward pass, losses, metrics and "
            "synthetic rain";
  m.attr("__version__") = "0.1.0";

  py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<precondition_error>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<io_error>(m, "IoError", PyExc_IOError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](int num_mheb, int base_channels, int dcr_units_per_stream,
                       int dcr_growth, int attention_reduction, const std::string& fusion,
                       bool use_hadb, std::uint64_t seed) {
             ModelConfig c;
             c.num_mheb = num_mheb;
             c.base_channels = base_channels;
             c.dcr_units_per_stream = dcr_units_per_stream;
             c.dcr_growth = dcr_growth;
             c.attention_reduction = attention_reduction;
             c.fusion_mode = fusion_mode_from_string(fusion);
             c.use_hadb = use_hadb;
             c.seed = seed;
             return c;
           }),
           py::arg("num_mheb") = 8, py::arg("base_channels") = 32,
           py::arg("dcr_units_per_stream") = 2, py::arg("dcr_growth") = 0,
           py::arg("attention_reduction") = 4, py::arg("fusion_mode") = "rpf",
           py::arg("use_hadb") = true, py::arg("seed") = 1)
      .def_readwrite("num_mheb", &ModelConfig::num_mheb)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("dcr_units_per_stream", &ModelConfig::dcr_units_per_stream)
      .def_readwrite("dcr_growth", &ModelConfig::dcr_growth)
      .def_readwrite("attention_reduction", &ModelConfig::attention_reduction)
      .def_readwrite("use_hadb", &ModelConfig::use_hadb)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_property(
          "fusion_mode", [](const ModelConfig& c) { return to_string(c.fusion_mode); },
          [](ModelConfig& c, const std::string& s) {
            c.fusion_mode = fusion_mode_from_string(s);
          })
      .def("__repr__", [](const ModelConfig& c) { return to_json_text(c, -1); });

  m.def("param_count", [](const ModelConfig& c) { return param_count(c); },
        py::arg("config"), "total scalar parameter count for a configuration");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init<const ModelConfig&>(), py::arg("config") = ModelConfig{})
      .def("forward", &PyNetwork::forward, py::arg("x"), py::arg("clamp") = true,
           "forward pass over a (n,3,h,w) batch in [0,1]; dims divisible by 4")
      .def("derain", &PyNetwork::derain, py::arg("image"),
           "derain an (h,w,3) image in [0,1]; arbitrary sizes are padded and cropped")
      .def("save", &PyNetwork::save, py::arg("path"))
      .def_static("load", &PyNetwork::load, py::arg("path"))
      .def_property_readonly("param_count", &PyNetwork::n_params)
      .def_property_readonly("config",
                             [](const PyNetwork& n) { return n.params.config; });

  // losses and metrics (double precision)
  m.def(
      "l1_loss",
      [](const ArrayD& r, const ArrayD& gt) {
        return l1_loss(tensor_from_array_d(r, "l1_loss"),
                       tensor_from_array_d(gt, "l1_loss"));
      },
      py::arg("r"), py::arg("gt"));
  m.def(
      "ssim_index",
      [](const ArrayD& r, const ArrayD& gt, int window_size, double sigma) {
        SsimParams p;
        p.window_size = window_size;
        p.sigma = sigma;
        return ssim_index(tensor_from_array_d(r, "ssim"), tensor_from_array_d(gt, "ssim"),
                          p);
      },
      py::arg("r"), py::arg("gt"), py::arg("window_size") = 11, py::arg("sigma") = 1.5);
  m.def(
      "ssim_loss",
      [](const ArrayD& r, const ArrayD& gt) {
        return ssim_loss(tensor_from_array_d(r, "ssim"), tensor_from_array_d(gt, "ssim"));
      },
      py::arg("r"), py::arg("gt"));
  m.def(
      "hybrid_loss",
      [](const ArrayD& r, const ArrayD& gt, double lambda) {
        const LossBreakdown b = hybrid_loss(tensor_from_array_d(r, "hybrid_loss"),
                                            tensor_from_array_d(gt, "hybrid_loss"), lambda);
        py::dict d;
        d["l1"] = b.l1;
        d["ssim_loss"] = b.ssim_loss;
        d["total"] = b.total;
        d["lambda"] = b.lambda;
        return d;
      },
      py::arg("r"), py::arg("gt"), py::arg("lambda") = 0.2);
  m.def(
      "psnr",
      [](const ArrayD& r, const ArrayD& gt) {
        return psnr(tensor_from_array_d(r, "psnr"), tensor_from_array_d(gt, "psnr"));
      },
      py::arg("r"), py::arg("gt"));

  // synthetic rain
  m.def(
      "make_streak_kernel",
      [](double angle_deg, int length_px) {
        return array2d_from_tensor(make_streak_kernel(angle_deg, length_px));
      },
      py::arg("angle_deg"), py::arg("length_px"));
  m.def(
      "synth_rain_layer",
      [](int height, int width, double angle_deg, int length_px, double density,
         double intensity, double intensity_jitter, std::uint64_t seed) {
        return array2d_from_tensor(synth_rain_layer(
            height, width,
            rain_from_kwargs(angle_deg, length_px, density, intensity, intensity_jitter,
                             seed)));
      },
      py::arg("height"), py::arg("width"), py::arg("angle_deg") = 10.0,
      py::arg("length_px") = 9, py::arg("density") = 0.03, py::arg("intensity") = 0.6,
      py::arg("intensity_jitter") = 0.3, py::arg("seed") = 0);
  m.def(
      "apply_rain",
      [](const Array& clean, double angle_deg, int length_px, double density,
         double intensity, double intensity_jitter, std::uint64_t seed) {
        auto [rainy, rain] = apply_rain(
            tensor_from_array(clean, "apply_rain"),
            rain_from_kwargs(angle_deg, length_px, density, intensity, intensity_jitter,
                             seed));
        return py::make_tuple(array_from_tensor(rainy), array2d_from_tensor(rain));
      },
      py::arg("clean"), py::arg("angle_deg") = 10.0, py::arg("length_px") = 9,
      py::arg("density") = 0.03, py::arg("intensity") = 0.6,
      py::arg("intensity_jitter") = 0.3, py::arg("seed") = 0);

  // gradient verification
  m.def("fd_block_names", &fd_block_names);
  m.def(
      "gradient_check",
      [](const std::string& block, double tolerance, int max_samples_per_tensor) {
        FdOptions opts;
        opts.tolerance = tolerance;
        opts.max_samples_per_tensor = max_samples_per_tensor;
        const FdReport rep = finite_difference_check(block, opts);
        py::dict d;
        d["block"] = rep.block;
        d["pass"] = rep.pass;
        d["max_rel_err"] = rep.max_rel_err;
        d["tolerance"] = rep.tolerance;
        py::list rows;
        for (const auto& row : rep.rows) {
          py::dict r;
          r["tensor"] = row.tensor;
          r["numel"] = row.numel;
          r["checked"] = row.checked;
          r["max_rel_err"] = row.max_rel_err;
          rows.append(r);
        }
        d["rows"] = rows;
        return d;
      },
      py::arg("block"), py::arg("tolerance") = 1e-3,
      py::arg("max_samples_per_tensor") = 0);
}
