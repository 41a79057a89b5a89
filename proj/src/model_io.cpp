#include "clinfair/model_io.hpp"

#include <fstream>

#include "clinfair/errors.hpp"

namespace clinfair::learners {
namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string_view kind_token(tabular::EncodedKind k) {
  switch (k) {
    case tabular::EncodedKind::numeric: return "numeric";
    case tabular::EncodedKind::boolean: return "boolean";
    case tabular::EncodedKind::one_hot: return "one_hot";
  }
  return "numeric";
}

tabular::EncodedKind parse_kind_token(const std::string& t) {
  if (t == "numeric") return tabular::EncodedKind::numeric;
  if (t == "boolean") return tabular::EncodedKind::boolean;
  if (t == "one_hot") return tabular::EncodedKind::one_hot;
  throw Error("ModelInvalid", "unknown column kind '" + t + "'");
}

nlohmann::json params_json(const NaiveBayesParams& p) {
  nlohmann::json gaussians = nlohmann::json::array();
  for (const auto& g : p.gaussians)
    gaussians.push_back({{"column", g.column}, {"mean", g.mean}, {"variance", g.variance}});
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : p.categoricals)
    cats.push_back({{"source", c.source}, {"columns", c.columns}, {"counts", c.counts}, {"log_prob", c.log_prob}});
  return {{"alpha", p.alpha}, {"prior", p.prior}, {"gaussians", gaussians}, {"categoricals", cats}};
}

nlohmann::json params_json(const LinearParams& p) {
  return {{"link", to_string(p.link)}, {"intercept", p.intercept}, {"weights", to_vector(p.weights)}};
}

nlohmann::json params_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const auto& w = p.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"weights", flat}, {"bias", to_vector(p.biases[l])}});
  }
  return {{"activation", to_string(p.activation)}, {"layers", layers}};
}

}  // namespace

nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& c : model.columns)
    columns.push_back({{"name", c.name}, {"source", c.source}, {"kind", kind_token(c.kind)}, {"level", c.level}});
  nlohmann::json doc = {
      {"format_version", kModelFormatVersion},
      {"family", to_string(model.spec.family)},
      {"hyperparameters", model.spec.hyperparameters},
      {"seed", model.seed},
      {"input_dim", model.input_dim},
      {"columns", columns},
      {"parameters", std::visit([](const auto& p) { return params_json(p); }, model.params)},
      {"diagnostics",
       {{"iterations", model.diagnostics.iterations},
        {"final_gradient_norm", model.diagnostics.final_gradient_norm},
        {"converged", model.diagnostics.converged},
        {"message", model.diagnostics.message}}},
  };
  doc["preprocess_stats"] = model.stats ? tabular::stats_to_json(*model.stats) : nlohmann::json(nullptr);
  return doc;
}

TrainedModel model_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw Error("ModelInvalid", "unsupported model format_version " + std::to_string(version));
    TrainedModel m;
    m.spec.family = parse_family(doc.at("family").get<std::string>());
    m.spec.hyperparameters = doc.at("hyperparameters");
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.input_dim = doc.at("input_dim").get<std::size_t>();
    for (const auto& c : doc.at("columns"))
      m.columns.push_back({c.at("name").get<std::string>(), c.at("source").get<std::string>(),
                           parse_kind_token(c.at("kind").get<std::string>()), c.at("level").get<std::string>()});
    if (!doc.at("preprocess_stats").is_null()) m.stats = tabular::stats_from_json(doc.at("preprocess_stats"));
    const auto& d = doc.at("diagnostics");
    m.diagnostics.iterations = d.at("iterations").get<std::size_t>();
    m.diagnostics.final_gradient_norm = d.at("final_gradient_norm").get<double>();
    m.diagnostics.converged = d.at("converged").get<bool>();
    m.diagnostics.message = d.at("message").get<std::string>();

    const auto& p = doc.at("parameters");
    switch (m.spec.family) {
      case Family::naive_bayes: {
        NaiveBayesParams nb;
        nb.alpha = p.at("alpha").get<double>();
        nb.prior = p.at("prior").get<std::array<double, 2>>();
        for (const auto& g : p.at("gaussians"))
          nb.gaussians.push_back({g.at("column").get<std::size_t>(), g.at("mean").get<std::array<double, 2>>(),
                                  g.at("variance").get<std::array<double, 2>>()});
        for (const auto& c : p.at("categoricals")) {
          NaiveBayesParams::Categorical cat;
          cat.source = c.at("source").get<std::string>();
          cat.columns = c.at("columns").get<std::vector<std::size_t>>();
          cat.counts = c.at("counts").get<std::array<std::vector<double>, 2>>();
          cat.log_prob = c.at("log_prob").get<std::array<std::vector<double>, 2>>();
          nb.categoricals.push_back(std::move(cat));
        }
        m.params = std::move(nb);
        break;
      }
      case Family::logistic:
      case Family::glm:
        m.params = LinearParams{parse_link(p.at("link").get<std::string>()), p.at("intercept").get<double>(),
                                to_eigen(p.at("weights"))};
        break;
      case Family::mlp: {
        MlpParams mlp;
        mlp.activation = parse_activation(p.at("activation").get<std::string>());
        for (const auto& layer : p.at("layers")) {
          const auto rows = layer.at("rows").get<Eigen::Index>();
          const auto cols = layer.at("cols").get<Eigen::Index>();
          const auto flat = layer.at("weights").get<std::vector<double>>();
          if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw Error("ModelInvalid", "layer weight count mismatch");
          Eigen::MatrixXd w(rows, cols);
          for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
          mlp.weights.push_back(std::move(w));
          mlp.biases.push_back(to_eigen(layer.at("bias")));
        }
        m.params = std::move(mlp);
        break;
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("ModelInvalid", e.what());
  }
}

void save_model(const std::string& path, const TrainedModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  out << model_to_json(model).dump(2) << '\n';
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("ModelInvalid", path + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace clinfair::learners
