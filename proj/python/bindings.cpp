#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "roifuse/cli.hpp"
#include "roifuse/config.hpp"
#include "roifuse/decoder.hpp"
#include "roifuse/eval.hpp"
#include "roifuse/geometry.hpp"
#include "roifuse/scene.hpp"
#include "roifuse/training.hpp"
#include "roifuse/verify.hpp"

namespace py = pybind11;
using namespace roifuse;
using geometry::Box3D;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<geometry::Vec3> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw std::invalid_argument("expected an (n, 3) array");
  std::vector<geometry::Vec3> out;
  const auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < r.shape(0); ++i) out.emplace_back(r(i, 0), r(i, 1), r(i, 2));
  return out;
}

py::array_t<double> boxes_array(const std::vector<Box3D>& boxes) {
  py::array_t<double> out({static_cast<py::ssize_t>(boxes.size()), py::ssize_t{7}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto a = boxes[i].to_array();
    for (int j = 0; j < 7; ++j) w(i, j) = a[j];
  }
  return out;
}

py::dict scene_dict(const scene::Scene& s) {
  py::dict d;
  d["id"] = s.id;
  py::array_t<double> pts({static_cast<py::ssize_t>(s.points.size()), py::ssize_t{3}});
  auto w = pts.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    for (int j = 0; j < 3; ++j) w(i, j) = s.points.xyz[i][j];
  }
  d["points"] = pts;
  d["reflectivity"] = py::array_t<double>(s.points.extras.size(), s.points.extras.data());
  std::vector<Box3D> gt, props;
  std::vector<int> classes, sources;
  std::vector<std::size_t> counts;
  std::vector<double> scores;
  for (const auto& g : s.gt) {
    gt.push_back(g.box);
    classes.push_back(g.class_id);
    counts.push_back(g.num_points);
  }
  for (const auto& p : s.proposals) {
    props.push_back(p.box);
    scores.push_back(p.score);
    sources.push_back(p.source);
  }
  d["gt_boxes"] = boxes_array(gt);
  d["gt_classes"] = classes;
  d["gt_points"] = counts;
  d["proposals"] = boxes_array(props);
  d["proposal_scores"] = scores;
  d["proposal_sources"] = sources;
  py::list images;
  for (const auto& c : s.cameras) {
    const auto& shape = c.image.shape();
    images.append(py::array_t<double>({shape[0], shape[1], shape[2]}, c.image.data().data()));
  }
  d["images"] = images;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "LiDAR-camera RoI refinement: geometry, synthetic scenes, evaluation, and the command-line pipeline.";

  py::class_<Box3D>(m, "Box3D")
      .def(py::init([](double x, double y, double z, double l, double h, double w, double theta) {
             return Box3D{x, y, z, l, h, w, theta};
           }),
           py::arg("x"), py::arg("y"), py::arg("z"), py::arg("l"), py::arg("h"), py::arg("w"), py::arg("theta"))
      .def_readwrite("x", &Box3D::x)
      .def_readwrite("y", &Box3D::y)
      .def_readwrite("z", &Box3D::z)
      .def_readwrite("l", &Box3D::l)
      .def_readwrite("h", &Box3D::h)
      .def_readwrite("w", &Box3D::w)
      .def_readwrite("theta", &Box3D::theta)
      .def("to_list", [](const Box3D& b) { return b.to_array(); })
      .def("__eq__", [](const Box3D& a, const Box3D& b) { return a == b; })
      .def("__repr__", [](const Box3D& b) {
        std::ostringstream os;
        os << "Box3D(" << b.x << ", " << b.y << ", " << b.z << ", " << b.l << ", " << b.h << ", " << b.w << ", "
           << b.theta << ")";
        return os.str();
      });

  m.def("iou_bev", &geometry::iou_bev, py::arg("a"), py::arg("b"));
  m.def("iou_3d", &geometry::iou_3d, py::arg("a"), py::arg("b"));
  m.def("box_corners", [](const Box3D& b) {
    py::array_t<double> out({py::ssize_t{8}, py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    const auto c = geometry::box_corners(b);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 3; ++j) w(i, j) = c[i][j];
    }
    return out;
  });
  m.def(
      "points_in_box", [](const Points& pts, const Box3D& b) { return geometry::points_in_box(to_points(pts), b); },
      py::arg("points"), py::arg("box"), "Indices of the points inside the box (boundary inclusive).");
  m.def("wrap_angle", &geometry::wrap_angle);

  m.def(
      "encode_residuals",
      [](const Box3D& proposal, const Box3D& target) { return decoder::encode_residuals(proposal, target).to_array(); },
      py::arg("proposal"), py::arg("target"));
  m.def(
      "apply_residuals",
      [](const Box3D& proposal, const std::vector<double>& r) {
        return decoder::apply_residuals(proposal, decoder::BoxResidual::from_array(r));
      },
      py::arg("proposal"), py::arg("residuals"));

  m.def(
      "assign_targets",
      [](const std::vector<Box3D>& proposals, const std::vector<Box3D>& gt, double t) {
        py::list out;
        for (const auto& a : training::assign_targets(proposals, gt, t)) {
          out.append(py::make_tuple(a.positive(), a.gt_index, a.iou));
        }
        return out;
      },
      py::arg("proposals"), py::arg("gt"), py::arg("iou_threshold") = 0.55,
      "Per proposal: (positive, matched gt index or -1, IoU).");

  m.def(
      "average_precision",
      [](const std::vector<double>& scores, const std::vector<bool>& tp, std::size_t num_gt, bool r40) {
        if (scores.size() != tp.size()) throw std::invalid_argument("scores and tp differ in length");
        std::vector<eval::RankedDetection> dets;
        for (std::size_t i = 0; i < scores.size(); ++i) dets.push_back({scores[i], tp[i]});
        return eval::average_precision(dets, num_gt, r40 ? eval::RecallGrid::kR40 : eval::RecallGrid::kR11);
      },
      py::arg("scores"), py::arg("true_positive"), py::arg("num_gt"), py::arg("r40") = false);

  m.def(
      "generate_scene",
      [](std::uint64_t seed, const std::map<std::string, std::string>& overrides) {
        config::KeyValues kv;
        for (const auto& [k, v] : overrides) kv.set(k, v);
        const auto s = config::resolve(kv);
        return scene_dict(scene::generate_scene(s.gen, seed));
      },
      py::arg("seed"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Generates one scene; overrides use configuration keys such as 'gen.objects_max'.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& block) {
        py::list out;
        for (const auto& r : verify::run_gradcheck(seed, block)) out.append(py::make_tuple(r.block, r.max_rel_error));
        return out;
      },
      py::arg("seed") = 0, py::arg("block") = "");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line invocation in-process; returns (exit code, stdout, stderr).");

  m.attr("__version__") = cli::kToolVersion;
}
