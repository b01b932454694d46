// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include <json.hpp>

#include "cooldrmc/conic.hpp"

namespace cooldrmc::conic {

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vec vec_from_json(const json& arr) {
  Vec v(static_cast<int>(arr.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = arr.at(i).get<double>();
  return v;
}

json mat_to_json(const Mat& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  json data = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  out["data"] = data;
  return out;
}

Mat mat_from_json(const json& obj) {
  const int rows = obj.at("rows").get<int>();
  const int cols = obj.at("cols").get<int>();
  const auto& data = obj.at("data");
  if (static_cast<int>(data.size()) != rows * cols) {
    throw MalformedProgram("matrix payload size mismatch");
  }
  Mat m(rows, cols);
  int k = 0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = data.at(k++).get<double>();
  }
  return m;
}

}  // namespace

std::string to_json(const ConicProgram& prog) {
  json out;
  out["format"] = "cooldrmc-conic-v1";
  out["num_vars"] = prog.num_vars;
  out["objective"] = vec_to_json(prog.objective);
  out["quadratic"] =
      prog.quadratic.size() > 0 ? mat_to_json(prog.quadratic) : json();
  out["eq_lhs"] = mat_to_json(prog.eq_lhs);
  out["eq_rhs"] = vec_to_json(prog.eq_rhs);
  out["ineq_lhs"] = mat_to_json(prog.ineq_lhs);
  out["ineq_rhs"] = vec_to_json(prog.ineq_rhs);
  out["nonneg"] = prog.nonneg;
  json blocks = json::array();
  for (const auto& block : prog.psd) {
    json b;
    b["dim"] = block.dim;
    b["constant"] = mat_to_json(block.constant);
    json terms = json::array();
    for (const auto& [var, coeff] : block.terms) {
      json t;
      t["var"] = var;
      t["coeff"] = mat_to_json(coeff);
      terms.push_back(t);
    }
    b["terms"] = terms;
    blocks.push_back(b);
  }
  out["psd"] = blocks;
  out["interior_hint"] = vec_to_json(prog.interior_hint);
  return out.dump(2);
}

ConicProgram program_from_json(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::exception& e) {
    throw MalformedProgram(std::string("bad program JSON: ") + e.what());
  }
  try {
    ConicProgram prog;
    if (in.at("format").get<std::string>() != "cooldrmc-conic-v1") {
      throw MalformedProgram("unknown program format tag");
    }
    prog.num_vars = in.at("num_vars").get<int>();
    prog.objective = vec_from_json(in.at("objective"));
    if (!in.at("quadratic").is_null()) {
      prog.quadratic = mat_from_json(in.at("quadratic"));
    }
    prog.eq_lhs = mat_from_json(in.at("eq_lhs"));
    prog.eq_rhs = vec_from_json(in.at("eq_rhs"));
    prog.ineq_lhs = mat_from_json(in.at("ineq_lhs"));
    prog.ineq_rhs = vec_from_json(in.at("ineq_rhs"));
    prog.nonneg = in.at("nonneg").get<std::vector<int>>();
    for (const auto& b : in.at("psd")) {
      PsdBlock block;
      block.dim = b.at("dim").get<int>();
      block.constant = mat_from_json(b.at("constant"));
      for (const auto& t : b.at("terms")) {
        block.terms.emplace_back(t.at("var").get<int>(),
                                 mat_from_json(t.at("coeff")));
      }
      prog.psd.push_back(std::move(block));
    }
    prog.interior_hint = vec_from_json(in.at("interior_hint"));
    prog.validate();
    return prog;
  } catch (const json::exception& e) {
    throw MalformedProgram(std::string("bad program JSON: ") + e.what());
  }
}

}  // namespace cooldrmc::conic
