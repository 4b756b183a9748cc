#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "alloc_layers/appropt_layer.hpp"
#include "alloc_layers/checks.hpp"
#include "alloc_layers/cs_layer.hpp"
#include "alloc_layers/ddpg.hpp"
#include "alloc_layers/envs.hpp"
#include "alloc_layers/errors.hpp"
#include "alloc_layers/qp_oracle.hpp"
#include "alloc_layers/region_tree.hpp"

namespace py = pybind11;
using namespace alloc;

namespace {

py::dict jacobian_dict(const Jacobian& j) {
  py::dict d;
  d["d_dy"] = j.d_dy;
  d["d_dc"] = j.d_dc ? py::cast(*j.d_dc) : py::none();
  return d;
}

Vector appropt_z(const Vector& y, const BoundSpec& b) { return appropt::appropt_forward(y, b).z; }

py::dict train(const std::string& env_name, const std::string& method, Index episodes, std::uint64_t seed,
               const std::map<std::string, std::string>& overrides, const std::vector<std::uint64_t>& eval_seeds) {
  KeyValueConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  ddpg::TrainerConfig base;
  base.method = ddpg::parse_method(method);
  const auto tc = ddpg::TrainerConfig::from_config(cfg, base);
  auto env = envs::make_env(env_name, cfg);
  ddpg::Trainer trainer(tc, *env, seed);
  const auto result = trainer.train(episodes);
  py::list rewards;
  for (const auto& e : result.episodes) rewards.append(e.reward);
  py::dict out;
  out["rewards"] = rewards;
  out["gradient_steps"] = result.gradient_steps;
  if (!eval_seeds.empty()) out["eval_mean"] = ddpg::evaluate(trainer.agent(), *env, eval_seeds).mean;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Differentiable allocation layers: constrained softmax, ApprOpt, exact projection, region trees.";

  auto error = py::register_exception<Error>(m, "AllocError", PyExc_ValueError);
  py::register_exception<CsConditionViolated>(m, "CsConditionViolated", error.ptr());
  py::register_exception<PreconditionViolated>(m, "PreconditionViolated", error.ptr());
  py::register_exception<InternalAssertion>(m, "InternalAssertion", error.ptr());

  py::class_<BoundSpec>(m, "BoundSpec")
      .def(py::init<Vector, Vector, double>(), py::arg("lower"), py::arg("upper"), py::arg("budget") = 1.0)
      .def_static("uniform", &BoundSpec::uniform, py::arg("n"), py::arg("lower"), py::arg("upper"),
                  py::arg("budget") = 1.0)
      .def_static("simplex", &BoundSpec::simplex, py::arg("n"), py::arg("budget") = 1.0)
      .def_property_readonly("lower", &BoundSpec::lower)
      .def_property_readonly("upper", &BoundSpec::upper)
      .def_property_readonly("budget", &BoundSpec::budget)
      .def("__len__", &BoundSpec::size);

  m.def("is_feasible", [](const Vector& z, const BoundSpec& b, double tol) {
    return check_feasibility(z, b, {}, tol).feasible;
  }, py::arg("z"), py::arg("bounds"), py::arg("tol") = kFeasibilityTol);

  m.def("appropt", &appropt_z, py::arg("y"), py::arg("bounds"), "ApprOpt projection of a box point.");
  m.def("appropt_jacobian", [](const Vector& y, const BoundSpec& b) {
    return jacobian_dict(appropt::appropt_forward(y, b).jacobian);
  }, py::arg("y"), py::arg("bounds"));
  m.def("prescale", [](const Vector& x, const BoundSpec& b) { return appropt::prescale(x, b).y; }, py::arg("x"),
        py::arg("bounds"));

  m.def("squash", &cs::squash_outputs, py::arg("x"));
  m.def("cs_epsilon", [](const BoundSpec& b) { return cs::build_context(b).epsilon; }, py::arg("bounds"));
  m.def("cs", [](const Vector& y, const BoundSpec& b) { return cs::cs_forward(y, cs::build_context(b)); },
        py::arg("y"), py::arg("bounds"), "Constrained softmax of squashed outputs in (0, 1].");
  m.def("cs_jacobian", [](const Vector& y, const BoundSpec& b) {
    return jacobian_dict(cs::cs_jacobian(y, cs::build_context(b)));
  }, py::arg("y"), py::arg("bounds"));

  m.def("exact_project", [](const Vector& y, const BoundSpec& b) {
    const auto p = qp::exact_project(y, b);
    py::dict cert;
    cert["lambda"] = p.certificate.lambda;
    cert["alpha"] = p.certificate.alpha;
    cert["beta"] = p.certificate.beta;
    cert["max_residual"] = p.certificate.max_residual();
    return py::make_tuple(p.z, cert);
  }, py::arg("y"), py::arg("bounds"));
  m.def("projection_gap", [](const Vector& y, const BoundSpec& b) { return qp::projection_gap(y, b).gap; },
        py::arg("y"), py::arg("bounds"));

  m.def("round_to_discrete", [](const Vector& z, std::int64_t total, const BoundSpec& b) {
    return round_to_discrete(z, total, b).counts();
  }, py::arg("z"), py::arg("total"), py::arg("bounds"));

  py::class_<RegionTree>(m, "RegionTree")
      .def_static("from_json", [](const std::string& text) {
        auto p = parse_problem(text);
        return p.tree ? *p.tree : RegionTree::flat(p.bounds);
      }, py::arg("text"))
      .def_static("two_region_example", [](const std::string& top, const std::string& leaves) {
        return checks::two_region_example(parse_method(top), parse_method(leaves));
      }, py::arg("top") = "appropt", py::arg("leaves") = "appropt")
      .def_property_readonly("pin_count", [](const RegionTree& t) { return t.layout().total(); })
      .def_property_readonly("entity_count", &RegionTree::entity_count)
      .def("forward", [](const RegionTree& t, const Vector& pins) {
        const auto r = nested_forward(pins, t);
        return py::make_tuple(r.z, r.jacobian.d_dy);
      }, py::arg("pins"))
      .def("is_feasible", [](const RegionTree& t, const Vector& z, double tol) {
        return check_feasibility(z, t, tol).feasible;
      }, py::arg("z"), py::arg("tol") = kFeasibilityTol)
      .def("violation", [](const RegionTree& t, const Vector& a) { return qp::violation_cost(a, t).cost; },
           py::arg("a"));

  m.def("gradcheck", [](const std::string& target, std::size_t trials, std::uint64_t seed) {
    const auto r = checks::gradcheck(checks::parse_grad_target(target), trials, seed);
    py::dict d;
    d["checked"] = r.checked;
    d["skipped"] = r.skipped;
    d["max_error"] = r.max_error;
    d["passed"] = r.passed();
    return d;
  }, py::arg("target"), py::arg("trials") = 100, py::arg("seed") = 0);

  m.def("train", &train, py::arg("env"), py::arg("method"), py::arg("episodes"), py::arg("seed") = 0,
        py::arg("config") = std::map<std::string, std::string>{},
        py::arg("eval_seeds") = std::vector<std::uint64_t>{},
        "Trains a DDPG agent; returns per-episode rewards and, with eval_seeds, the evaluation mean.");
}
