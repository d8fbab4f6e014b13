// Python bindings over the core pipeline operations: scene synthesis and
// geometry, style transfer, attention, metrics, and the flop counter.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "xfuse/datagen.hpp"
#include "xfuse/distill.hpp"
#include "xfuse/evalmetrics.hpp"
#include "xfuse/fusion.hpp"
#include "xfuse/ops.hpp"
#include "xfuse/pseudolabel.hpp"
#include "xfuse/scene.hpp"
#include "xfuse/scene_io.hpp"
#include "xfuse/trainer.hpp"

namespace py = pybind11;
using namespace xfuse;

namespace {

std::vector<float> to_vec(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    return std::vector<float>(a.data(), a.data() + a.size());
}

py::array_t<float> to_array(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
    py::array_t<float> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Tensor matrix_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2D array");
    return Tensor::from_data({a.shape(0), a.shape(1)}, to_vec(a));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cross-modal fusion + distillation domain adaptation core";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);

    py::class_<PairedScene>(m, "PairedScene")
        .def_readonly("height", &PairedScene::height)
        .def_readonly("width", &PairedScene::width)
        .def_readonly("class_count", &PairedScene::class_count)
        .def_readonly("domain_tag", &PairedScene::domain_tag)
        .def_readonly("scene_id", &PairedScene::scene_id)
        .def_property_readonly("image",
                               [](const PairedScene& s) {
                                   return to_array(s.image, {s.height, s.width, 3});
                               })
        .def_property_readonly("points",
                               [](const PairedScene& s) {
                                   return to_array(s.points, {s.point_count(), 3});
                               })
        .def_property_readonly("labels",
                               [](const PairedScene& s) {
                                   py::array_t<int32_t> out(static_cast<py::ssize_t>(s.labels.size()));
                                   std::copy(s.labels.begin(), s.labels.end(), out.mutable_data());
                                   return out;
                               })
        .def_property_readonly("pixel_index", [](const PairedScene& s) {
            py::array_t<int32_t> out(static_cast<py::ssize_t>(s.pixel_index.size()));
            std::copy(s.pixel_index.begin(), s.pixel_index.end(), out.mutable_data());
            return out;
        });

    py::class_<DomainShiftSpec>(m, "DomainShiftSpec")
        .def(py::init<>())
        .def_readwrite("gamma", &DomainShiftSpec::gamma)
        .def_readwrite("hue_rotation", &DomainShiftSpec::hue_rotation)
        .def_readwrite("noise_sigma", &DomainShiftSpec::noise_sigma)
        .def_readwrite("density_factor", &DomainShiftSpec::density_factor)
        .def_readwrite("layout_seed_offset", &DomainShiftSpec::layout_seed_offset);

    m.def("generate_scene", &generate_scene, py::arg("seed"), py::arg("spec"),
          py::arg("domain_tag") = kDomainSource, py::arg("class_count") = 5,
          py::arg("height") = 64, py::arg("width") = 64, py::arg("point_budget") = 2048,
          py::arg("scene_id") = 0);
    m.def("write_scene",
          [](const PairedScene& s, const std::string& path) { write_scene(s, path); });
    m.def("read_scene", [](const std::string& path) { return read_scene(path); });

    m.def("project_points",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> pts,
             py::array_t<float, py::array::c_style | py::array::forcecast> proj, int64_t height,
             int64_t width) {
              if (proj.size() != 12) throw DimensionError("projection must have 12 entries");
              std::array<float, 12> p{};
              std::copy(proj.data(), proj.data() + 12, p.begin());
              return project_points(to_vec(pts), p, height, width);
          },
          py::arg("points"), py::arg("proj"), py::arg("height"), py::arg("width"));

    m.def("default_projection", [](int64_t height, int64_t width) {
        auto p = default_projection(height, width);
        return to_array(std::vector<float>(p.begin(), p.end()), {3, 4});
    });

    m.def("voxelize",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> pts, double size) {
              auto grid = voxelize(to_vec(pts), size);
              return py::make_tuple(grid.cell_of_point, grid.occupied_cells);
          },
          py::arg("points"), py::arg("voxel_size"));

    m.def("softmax_rows", [](py::array_t<float, py::array::c_style | py::array::forcecast> x) {
        NoGradGuard ng;
        auto t = softmax_rows(matrix_from(x));
        return to_array(t.data(), {t.rows(), t.cols()});
    });

    m.def("kl_divergence",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> p,
             py::array_t<float, py::array::c_style | py::array::forcecast> q) {
              NoGradGuard ng;
              return kl_divergence(matrix_from(p), matrix_from(q)).item();
          });

    m.def("style_transfer_2d",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> src,
             py::array_t<float, py::array::c_style | py::array::forcecast> tgt, double beta) {
              if (src.ndim() != 3 || src.shape(2) != 3)
                  throw DimensionError("expected an HxWx3 image array");
              int64_t h = src.shape(0), w = src.shape(1);
              auto out = style_transfer_2d(to_vec(src), to_vec(tgt), h, w, beta);
              return to_array(out, {h, w, 3});
          },
          py::arg("src_image"), py::arg("tgt_image"), py::arg("beta"));

    m.def("style_transfer_3d",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> src,
             py::array_t<float, py::array::c_style | py::array::forcecast> tgt) {
              auto out = style_transfer_3d(to_vec(src), to_vec(tgt));
              return to_array(out, {static_cast<py::ssize_t>(out.size() / 3), 3});
          },
          py::arg("src_points"), py::arg("tgt_points"));

    m.def("point_cloud_density",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> pts) {
              return point_cloud_density(to_vec(pts));
          });

    m.def("memorized_attention",
          [](py::array_t<float, py::array::c_style | py::array::forcecast> f,
             py::array_t<float, py::array::c_style | py::array::forcecast> key,
             py::array_t<float, py::array::c_style | py::array::forcecast> value,
             const std::string& norm) {
              NoGradGuard ng;
              MemoryUnitsT<float> mem{ParameterT<float>("k", matrix_from(key)),
                                      ParameterT<float>("v", matrix_from(value))};
              auto out = memorized_attention(matrix_from(f), mem, attn_norm_from_name(norm));
              return to_array(out.data(), {out.rows(), out.cols()});
          },
          py::arg("features"), py::arg("key"), py::arg("value"), py::arg("norm") = "double");

    m.def("count_flops",
          [](const std::string& variant, int64_t n, int64_t k, int64_t d) {
              auto r = count_flops(variant, n, k, d);
              return py::make_tuple(r.flops_matmul, r.flops_norm, r.flops);
          },
          py::arg("variant"), py::arg("n"), py::arg("k"), py::arg("d"));

    m.def("class_weights",
          [](const std::vector<int64_t>& histogram) { return class_weights(histogram); });

    m.def("ensemble_xm", [](py::array_t<float, py::array::c_style | py::array::forcecast> p2d,
                            py::array_t<float, py::array::c_style | py::array::forcecast> p3d) {
        return ensemble_xm(matrix_from(p2d), matrix_from(p3d));
    });

    m.def("miou",
          [](const std::vector<int32_t>& pred, const std::vector<int32_t>& gt, int64_t classes) {
              ConfusionMatrix cm(classes);
              confusion_update(cm, pred, gt);
              auto res = iou_per_class(cm);
              return py::make_tuple(res.miou, res.iou);
          },
          py::arg("pred"), py::arg("gt"), py::arg("class_count"));
}
