#include "clinfair/cohortgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "clinfair/errors.hpp"
#include "clinfair/random.hpp"

namespace clinfair::cohortgen {
namespace {

struct GroupParams {
  double base = 0.5;
  double signal = 3.0;
  double flip_pos = 0.0;
  double flip_neg = 0.0;
};

bool unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Injection attribute (empty when none) and per-group parameters for it.
struct InjectionPlan {
  std::string attribute;
  std::vector<std::pair<std::string, double>> groups;  // token, share
  std::vector<GroupParams> params;
  std::size_t attribute_index = 0;
};

InjectionPlan plan_for(const CohortConfig& config) {
  const GroupParams defaults{config.base_positive_rate, config.signal_strength, config.flip_rate_positive,
                             config.flip_rate_negative};
  InjectionPlan plan;
  if (config.injections.empty()) {
    plan.groups = {{"", 1.0}};
    plan.params = {defaults};
    return plan;
  }
  plan.attribute = config.injections.front().attribute;
  for (std::size_t a = 0; a < config.distributions.size(); ++a) {
    if (config.distributions[a].attribute != plan.attribute) continue;
    plan.attribute_index = a;
    plan.groups = config.distributions[a].groups;
  }
  plan.params.assign(plan.groups.size(), defaults);
  for (const auto& inj : config.injections) {
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
      if (plan.groups[g].first != inj.group) continue;
      plan.params[g] = {inj.base_positive_rate, inj.feature_signal_strength, inj.noise_flip_rate_positive,
                        inj.noise_flip_rate_negative};
    }
  }
  return plan;
}

std::vector<std::pair<std::string, double>> groups_from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::string, double>> out;
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<double>());
  } else {
    for (const auto& g : j) out.emplace_back(g.at("group").get<std::string>(), g.at("share").get<double>());
  }
  return out;
}

}  // namespace

void validate(const CohortConfig& config) {
  auto fail = [](const std::string& why) { throw Error("ConfigInvalid", why); };
  if (config.n_rows < 1) fail("n_rows must be at least 1");
  if (config.numeric_features < 1) fail("numeric_features must be at least 1");
  if (!unit_interval(config.base_positive_rate)) fail("base_positive_rate must lie in [0, 1]");
  if (!unit_interval(config.flip_rate_positive) || !unit_interval(config.flip_rate_negative))
    fail("flip rates must lie in [0, 1]");
  if (!(config.signal_strength >= 0.0)) fail("signal_strength must be non-negative");
  if (config.label_name.empty()) fail("label_name is empty");

  std::set<std::string> attributes;
  for (const auto& d : config.distributions) {
    if (d.attribute.empty()) fail("distribution with empty attribute name");
    if (d.attribute == config.label_name || d.attribute == "row_id") fail("attribute name '" + d.attribute + "' is reserved");
    if (!attributes.insert(d.attribute).second) fail("attribute '" + d.attribute + "' listed twice");
    if (d.groups.empty()) fail("attribute '" + d.attribute + "' has no groups");
    std::set<std::string> tokens;
    double sum = 0.0;
    for (const auto& [token, share] : d.groups) {
      if (token.empty()) fail("attribute '" + d.attribute + "' has an empty group token");
      if (!tokens.insert(token).second) fail("group '" + token + "' repeated in '" + d.attribute + "'");
      if (!(share > 0.0)) fail("share of '" + d.attribute + "=" + token + "' must be positive");
      sum += share;
    }
    if (std::abs(sum - 1.0) > 1e-9) fail("shares of '" + d.attribute + "' sum to " + std::to_string(sum));
  }

  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& inj : config.injections) {
    if (inj.attribute != config.injections.front().attribute)
      fail("all injections must target one attribute");
    const auto d = std::find_if(config.distributions.begin(), config.distributions.end(),
                                [&](const GroupDistribution& g) { return g.attribute == inj.attribute; });
    if (d == config.distributions.end()) fail("injection references unknown attribute '" + inj.attribute + "'");
    const bool known = std::any_of(d->groups.begin(), d->groups.end(), [&](const auto& g) { return g.first == inj.group; });
    if (!known) fail("injection references unknown group '" + inj.attribute + "=" + inj.group + "'");
    if (!seen.emplace(inj.attribute, inj.group).second) fail("duplicate injection for '" + inj.attribute + "=" + inj.group + "'");
    if (!unit_interval(inj.base_positive_rate) || !unit_interval(inj.noise_flip_rate_positive) ||
        !unit_interval(inj.noise_flip_rate_negative))
      fail("injection rates for '" + inj.group + "' must lie in [0, 1]");
    if (!(inj.feature_signal_strength >= 0.0)) fail("feature_signal_strength must be non-negative");
  }

  if (config.balance_labels && config.n_rows >= 2) {
    // Both classes must be reachable or rejection sampling never terminates.
    const auto plan = plan_for(config);
    bool pos = false, neg = false;
    for (const auto& p : plan.params) {
      pos = pos || p.base > 0.0;
      neg = neg || p.base < 1.0;
    }
    if (!pos || !neg) fail("balance_labels needs both classes to have non-zero probability");
  }
}

CohortConfig config_from_json(const nlohmann::json& j) {
  CohortConfig c;
  try {
    c.n_rows = j.value("n_rows", c.n_rows);
    c.seed = j.value("seed", c.seed);
    c.balance_labels = j.value("balance_labels", c.balance_labels);
    c.numeric_features = j.value("numeric_features", c.numeric_features);
    c.base_positive_rate = j.value("base_positive_rate", c.base_positive_rate);
    c.signal_strength = j.value("signal_strength", c.signal_strength);
    c.flip_rate_positive = j.value("flip_rate_positive", c.flip_rate_positive);
    c.flip_rate_negative = j.value("flip_rate_negative", c.flip_rate_negative);
    c.label_name = j.value("label_name", c.label_name);
    for (const auto& d : j.value("distributions", nlohmann::json::array()))
      c.distributions.push_back({d.at("attribute").get<std::string>(), groups_from_json(d.at("groups"))});
    for (const auto& i : j.value("injections", nlohmann::json::array())) {
      BiasInjection inj;
      inj.attribute = i.at("attribute").get<std::string>();
      inj.group = i.at("group").get<std::string>();
      inj.base_positive_rate = i.value("base_positive_rate", c.base_positive_rate);
      inj.feature_signal_strength = i.value("feature_signal_strength", c.signal_strength);
      inj.noise_flip_rate_positive = i.value("noise_flip_rate_positive", c.flip_rate_positive);
      inj.noise_flip_rate_negative = i.value("noise_flip_rate_negative", c.flip_rate_negative);
      c.injections.push_back(std::move(inj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("ConfigInvalid", e.what());
  }
  validate(c);
  return c;
}

nlohmann::json config_to_json(const CohortConfig& c) {
  nlohmann::json dists = nlohmann::json::array();
  for (const auto& d : c.distributions) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [token, share] : d.groups) groups.push_back({{"group", token}, {"share", share}});
    dists.push_back({{"attribute", d.attribute}, {"groups", groups}});
  }
  nlohmann::json injections = nlohmann::json::array();
  for (const auto& i : c.injections) {
    injections.push_back({{"attribute", i.attribute},
                          {"group", i.group},
                          {"base_positive_rate", i.base_positive_rate},
                          {"feature_signal_strength", i.feature_signal_strength},
                          {"noise_flip_rate_positive", i.noise_flip_rate_positive},
                          {"noise_flip_rate_negative", i.noise_flip_rate_negative}});
  }
  return {{"n_rows", c.n_rows},
          {"seed", c.seed},
          {"balance_labels", c.balance_labels},
          {"numeric_features", c.numeric_features},
          {"base_positive_rate", c.base_positive_rate},
          {"signal_strength", c.signal_strength},
          {"flip_rate_positive", c.flip_rate_positive},
          {"flip_rate_negative", c.flip_rate_negative},
          {"label_name", c.label_name},
          {"distributions", dists},
          {"injections", injections}};
}

CohortConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("ConfigInvalid", path + ": " + e.what());
  }
  return config_from_json(j);
}

tabular::Schema cohort_schema(const CohortConfig& config) {
  using tabular::Kind;
  using tabular::Role;
  tabular::Schema schema;
  schema.push_back({"row_id", Kind::categorical, Role::identifier});
  for (const auto& d : config.distributions) schema.push_back({d.attribute, Kind::categorical, Role::sensitive});
  for (std::size_t f = 0; f < config.numeric_features; ++f)
    schema.push_back({"x" + std::to_string(f + 1), Kind::numeric, Role::feature});
  schema.push_back({config.label_name, Kind::boolean, Role::label});
  return schema;
}

GroundTruthManifest expected_manifest(const CohortConfig& config) {
  validate(config);
  const auto plan = plan_for(config);
  const std::size_t h_count = plan.groups.size();
  const double dims = static_cast<double>(config.numeric_features);

  // Joint weight of (injection group, true label) in the emitted cohort.
  std::vector<std::array<double, 2>> w(h_count);
  double p_pos = 0.0;
  for (std::size_t h = 0; h < h_count; ++h) {
    w[h][1] = plan.groups[h].second * plan.params[h].base;
    w[h][0] = plan.groups[h].second * (1.0 - plan.params[h].base);
    p_pos += w[h][1];
  }
  if (config.balance_labels) {
    for (auto& wh : w) {
      wh[1] = p_pos > 0.0 ? 0.5 * wh[1] / p_pos : 0.0;
      wh[0] = p_pos < 1.0 ? 0.5 * wh[0] / (1.0 - p_pos) : 0.0;
    }
  }

  std::vector<double> fpr(h_count), fnr(h_count);
  for (std::size_t h = 0; h < h_count; ++h) {
    const auto& p = plan.params[h];
    const double overlap = normal_cdf(-p.signal * std::sqrt(dims) / 2.0);
    fpr[h] = p.flip_neg * (1.0 - overlap) + (1.0 - p.flip_neg) * overlap;
    fnr[h] = p.flip_pos * (1.0 - overlap) + (1.0 - p.flip_pos) * overlap;
  }

  // Predicted-positive mass per injection group.
  std::vector<double> pp(h_count);
  double pp_total = 0.0;
  for (std::size_t h = 0; h < h_count; ++h) {
    pp[h] = w[h][1] * (1.0 - fnr[h]) + w[h][0] * fpr[h];
    pp_total += pp[h];
  }

  // Mixture over injection groups, used for attributes independent of it.
  ExpectedGroupRates mix;
  double neg_mass = 0.0, pos_mass = 0.0;
  for (std::size_t h = 0; h < h_count; ++h) {
    const auto& p = plan.params[h];
    neg_mass += w[h][0];
    pos_mass += w[h][1];
    mix.fpr += w[h][0] * fpr[h];
    mix.fnr += w[h][1] * fnr[h];
    mix.flip_rate_negative += w[h][0] * p.flip_neg;
    mix.flip_rate_positive += w[h][1] * p.flip_pos;
    mix.signal_strength += (w[h][0] + w[h][1]) * p.signal;
  }
  mix.positive_rate = pos_mass;
  if (neg_mass > 0.0) {
    mix.fpr /= neg_mass;
    mix.flip_rate_negative /= neg_mass;
  }
  if (pos_mass > 0.0) {
    mix.fnr /= pos_mass;
    mix.flip_rate_positive /= pos_mass;
  }
  mix.ppgr = pp_total;

  GroundTruthManifest m;
  m.seed = config.seed;
  m.n_rows = config.n_rows;
  m.balance_labels = config.balance_labels;
  m.numeric_features = config.numeric_features;
  m.label_name = config.label_name;
  for (const auto& d : config.distributions) {
    m.attribute_order.push_back(d.attribute);
    auto& groups = m.attributes[d.attribute];
    if (d.attribute == plan.attribute) {
      for (std::size_t h = 0; h < h_count; ++h) {
        const double share = w[h][0] + w[h][1];
        ExpectedGroupRates r;
        r.share = share;
        r.positive_rate = share > 0.0 ? w[h][1] / share : 0.0;
        r.flip_rate_positive = plan.params[h].flip_pos;
        r.flip_rate_negative = plan.params[h].flip_neg;
        r.signal_strength = plan.params[h].signal;
        r.fpr = fpr[h];
        r.fnr = fnr[h];
        r.ppgr = share > 0.0 ? pp[h] / share : 0.0;
        r.ppr = pp_total > 0.0 ? pp[h] / pp_total : 0.0;
        groups[plan.groups[h].first] = r;
      }
    } else {
      for (const auto& [token, share] : d.groups) {
        ExpectedGroupRates r = mix;
        r.share = share;
        r.ppr = share;  // independent of predictions
        groups[token] = r;
      }
    }
  }
  return m;
}

Cohort generate_cohort(const CohortConfig& config) {
  GroundTruthManifest manifest = expected_manifest(config);
  const auto plan = plan_for(config);
  const std::size_t n = config.n_rows;
  const std::size_t n_attr = config.distributions.size();

  Rng rng(config.seed);

  // Pass 1: group draws and true labels, row by row.
  std::vector<std::vector<std::size_t>> group_of(n_attr, std::vector<std::size_t>(n));
  std::vector<std::size_t> injection_group(n, 0);
  std::vector<int> label(n);
  const std::size_t pos_quota = n / 2;
  const std::size_t neg_quota = n - pos_quota;
  std::size_t pos_count = 0, neg_count = 0;
  std::vector<std::size_t> draw(n_attr);
  for (std::size_t r = 0; r < n;) {
    for (std::size_t a = 0; a < n_attr; ++a) {
      const auto& groups = config.distributions[a].groups;
      const double u = rng.uniform();
      double cumulative = 0.0;
      std::size_t g = groups.size() - 1;
      for (std::size_t k = 0; k < groups.size(); ++k) {
        cumulative += groups[k].second;
        if (u < cumulative) {
          g = k;
          break;
        }
      }
      draw[a] = g;
    }
    const std::size_t h = plan.attribute.empty() ? 0 : draw[plan.attribute_index];
    const int y = rng.bernoulli(plan.params[h].base) ? 1 : 0;
    if (config.balance_labels) {
      if (y == 1 && pos_count == pos_quota) continue;
      if (y == 0 && neg_count == neg_quota) continue;
    }
    (y ? pos_count : neg_count)++;
    for (std::size_t a = 0; a < n_attr; ++a) group_of[a][r] = draw[a];
    injection_group[r] = h;
    label[r] = y;
    ++r;
  }

  // Pass 2: exact-count flips per (injection group, true label) stratum.
  std::vector<int> presented = label;
  for (std::size_t h = 0; h < plan.groups.size(); ++h) {
    for (int y : {0, 1}) {
      std::vector<std::size_t> stratum;
      for (std::size_t r = 0; r < n; ++r)
        if (injection_group[r] == h && label[r] == y) stratum.push_back(r);
      const double rate = y == 1 ? plan.params[h].flip_pos : plan.params[h].flip_neg;
      const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(stratum.size())));
      rng.shuffle(std::span<std::size_t>(stratum));
      for (std::size_t k = 0; k < flips; ++k) presented[stratum[k]] = 1 - y;
    }
  }

  // Pass 3: class-conditional features.
  const auto schema = cohort_schema(config);
  std::vector<tabular::Column> columns(schema.size());
  auto& ids = columns[0].tokens;
  ids.reserve(n);
  for (std::size_t r = 0; r < n; ++r) ids.push_back(std::to_string(r));
  for (std::size_t a = 0; a < n_attr; ++a) {
    auto& tokens = columns[1 + a].tokens;
    tokens.reserve(n);
    for (std::size_t r = 0; r < n; ++r) tokens.push_back(config.distributions[a].groups[group_of[a][r]].first);
  }
  const std::size_t first_feature = 1 + n_attr;
  for (std::size_t f = 0; f < config.numeric_features; ++f) columns[first_feature + f].numbers.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double centre = (presented[r] ? 0.5 : -0.5) * plan.params[injection_group[r]].signal;
    for (std::size_t f = 0; f < config.numeric_features; ++f) columns[first_feature + f].numbers[r] = centre + rng.normal();
  }
  auto& labels = columns.back().numbers;
  labels.assign(label.begin(), label.end());

  return {tabular::Dataset(schema, std::move(columns)), std::move(manifest)};
}

const std::map<std::string, ExpectedGroupRates>& manifest_rates(const GroundTruthManifest& manifest,
                                                                const std::string& attribute) {
  const auto it = manifest.attributes.find(attribute);
  if (it == manifest.attributes.end()) throw Error("UnknownAttribute", "manifest has no attribute '" + attribute + "'");
  return it->second;
}

nlohmann::json manifest_to_json(const GroundTruthManifest& m) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& name : m.attribute_order) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [token, r] : m.attributes.at(name)) {
      groups.push_back({{"group", token},
                        {"share", r.share},
                        {"positive_rate", r.positive_rate},
                        {"flip_rate_positive", r.flip_rate_positive},
                        {"flip_rate_negative", r.flip_rate_negative},
                        {"signal_strength", r.signal_strength},
                        {"expected_ppr", r.ppr},
                        {"expected_ppgr", r.ppgr},
                        {"expected_fpr", r.fpr},
                        {"expected_fnr", r.fnr}});
    }
    attrs.push_back({{"attribute", name}, {"groups", groups}});
  }
  return {{"seed", m.seed},
          {"n_rows", m.n_rows},
          {"balance_labels", m.balance_labels},
          {"numeric_features", m.numeric_features},
          {"label_name", m.label_name},
          {"attributes", attrs}};
}

GroundTruthManifest manifest_from_json(const nlohmann::json& j) {
  GroundTruthManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_rows = j.at("n_rows").get<std::uint64_t>();
  m.balance_labels = j.at("balance_labels").get<bool>();
  m.numeric_features = j.at("numeric_features").get<std::size_t>();
  m.label_name = j.at("label_name").get<std::string>();
  for (const auto& a : j.at("attributes")) {
    const auto name = a.at("attribute").get<std::string>();
    m.attribute_order.push_back(name);
    auto& groups = m.attributes[name];
    for (const auto& g : a.at("groups")) {
      groups[g.at("group").get<std::string>()] = {
          g.at("share").get<double>(),         g.at("positive_rate").get<double>(),
          g.at("flip_rate_positive").get<double>(), g.at("flip_rate_negative").get<double>(),
          g.at("signal_strength").get<double>(), g.at("expected_ppr").get<double>(),
          g.at("expected_ppgr").get<double>(), g.at("expected_fpr").get<double>(),
          g.at("expected_fnr").get<double>()};
    }
  }
  return m;
}

}  // namespace clinfair::cohortgen
