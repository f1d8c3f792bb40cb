#include "dgp/serialization.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dgp {

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.close();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Json parse_json(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "se" || name == "squared_exponential" || name == "rbf") return KernelFamily::SquaredExponential;
  if (name == "periodic") return KernelFamily::Periodic;
  throw ConfigError("unknown kernel family '" + name + "' (expected se or periodic)");
}

MeanFunction parse_mean_function(const std::string& name) {
  if (name == "zero") return MeanFunction::Zero;
  if (name == "identity") return MeanFunction::Identity;
  throw ConfigError("unknown mean function '" + name + "' (expected zero or identity)");
}

namespace {

Json vec_to_json(const Vector<double>& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector<double> vec_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array of numbers");
  Vector<double> v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(std::string(what) + " must be an array of numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

Json mat_to_json(const Matrix<double>& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return rows;
}

Matrix<double> mat_from_json(const Json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array of rows");
  if (j.empty()) return Matrix<double>(0, 0);
  const Index cols = static_cast<Index>(j[0].size());
  Matrix<double> m(static_cast<Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector<double> row = vec_from_json(j[i], what);
    if (row.size() != cols) throw ConfigError(std::string(what) + " has ragged rows");
    m.row(static_cast<Index>(i)) = row.transpose();
  }
  return m;
}

template <typename T, typename F>
Json list_to_json(const std::vector<T>& items, F f) {
  Json out = Json::array();
  for (const auto& x : items) out.push_back(f(x));
  return out;
}

std::vector<Vector<double>> vecs_from_json(const Json& j, const char* what) {
  std::vector<Vector<double>> out;
  for (const auto& e : j) out.push_back(vec_from_json(e, what));
  return out;
}

std::vector<Matrix<double>> mats_from_json(const Json& j, const char* what) {
  std::vector<Matrix<double>> out;
  for (const auto& e : j) out.push_back(mat_from_json(e, what));
  return out;
}

const Json& need(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

Json kernel_to_json(const KernelSpec<double>& k) {
  Json j{{"family", to_string(k.family)}, {"variance", k.variance}, {"lengthscale", k.lengthscale}};
  if (k.family == KernelFamily::Periodic) j["period"] = k.period;
  return j;
}

KernelSpec<double> kernel_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("kernel must be an object");
  KernelSpec<double> k;
  k.family = parse_kernel_family(j.value("family", std::string("se")));
  k.variance = j.value("variance", 1.0);
  k.lengthscale = j.value("lengthscale", 1.0);
  k.period = j.value("period", 1.0);
  try {
    k.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return k;
}

Json model_to_json(const DgpModel<double>& model) {
  Json layers = Json::array();
  for (const auto& l : model.layers)
    layers.push_back({{"kernel", kernel_to_json(l.kernel)}, {"mean", to_string(l.mean)}, {"z", vec_to_json(l.z)}});
  return {{"noise_variance", model.noise_variance}, {"layers", layers}};
}

DgpModel<double> model_from_json(const Json& j) {
  DgpModel<double> model;
  model.noise_variance = need(j, "noise_variance").get<double>();
  for (const auto& lj : need(j, "layers")) {
    GpLayer<double> layer;
    layer.kernel = kernel_from_json(need(lj, "kernel"));
    layer.mean = parse_mean_function(need(lj, "mean").get<std::string>());
    layer.z = vec_from_json(need(lj, "z"), "layer z");
    model.layers.push_back(std::move(layer));
  }
  return model;
}

Json fitted_to_json(const FittedModel& fm) {
  Json state;
  if (const auto* s = std::get_if<MeanFieldState>(&fm.state)) {
    state["m"] = list_to_json(s->m, vec_to_json);
    state["chol"] = list_to_json(s->chol, mat_to_json);
  } else if (const auto* s = std::get_if<ChainGaussianState>(&fm.state)) {
    state["a"] = list_to_json(s->a, mat_to_json);
    state["b"] = list_to_json(s->b, vec_to_json);
    state["c"] = list_to_json(s->c, mat_to_json);
  } else {
    const auto& c = std::get<ChainedInducingState>(fm.state);
    state["z"] = vec_to_json(c.z);
    state["m"] = list_to_json(c.m, vec_to_json);
    state["chol"] = list_to_json(c.chol, mat_to_json);
  }
  return {{"scheme", to_string(fm.scheme)}, {"model", model_to_json(fm.model)}, {"state", state}};
}

FittedModel fitted_from_json(const Json& j) {
  try {
    FittedModel fm;
    fm.scheme = parse_scheme(need(j, "scheme").get<std::string>());
    fm.model = model_from_json(need(j, "model"));
    const Json& s = need(j, "state");
    switch (fm.scheme) {
      case SchemeKind::MeanField: {
        MeanFieldState st;
        st.m = vecs_from_json(need(s, "m"), "state m");
        st.chol = mats_from_json(need(s, "chol"), "state chol");
        fm.state = std::move(st);
        break;
      }
      case SchemeKind::JointSampled:
      case SchemeKind::JointAnalytic: {
        ChainGaussianState st;
        st.a = mats_from_json(need(s, "a"), "state a");
        st.b = vecs_from_json(need(s, "b"), "state b");
        st.c = mats_from_json(need(s, "c"), "state c");
        fm.state = std::move(st);
        break;
      }
      case SchemeKind::Chained: {
        ChainedInducingState st;
        st.z = vec_from_json(need(s, "z"), "state z");
        st.m = vecs_from_json(need(s, "m"), "state m");
        st.chol = mats_from_json(need(s, "chol"), "state chol");
        fm.state = std::move(st);
        break;
      }
    }
    fm.model.validate();
    std::visit([&](const auto& st) { st.validate(fm.model); }, fm.state);
    return fm;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed fitted model: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("invalid fitted model: ") + e.what());
  }
}

}  // namespace dgp
