#include "flowpose/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace flowpose {

namespace {

// Seeds share the size_t alternative.
static_assert(std::is_same_v<std::uint64_t, std::size_t>);
using Slot = std::variant<std::size_t*, double*, bool*, std::string*>;

struct Entry {
  const char* section;
  const char* key;
  Slot slot;
};

std::vector<Entry> entries(RunConfig& c) {
  auto& m = c.model;
  auto& t = c.train;
  auto& w = c.train.weights;
  auto& d = c.data;
  auto& f = c.fit;
  return {
      {"model", "body_model", &m.body_model},
      {"model", "observation_hidden", &m.observation_hidden},
      {"model", "head_hidden", &m.head_hidden},
      {"model", "disc_hidden", &m.disc_hidden},
      {"model", "disc_layers", &m.disc_layers},
      {"flow", "blocks", &m.flow_blocks},
      {"flow", "hidden", &m.flow_hidden},
      {"flow", "init_scale", &m.flow_init_scale},
      {"encoder", "feature_dim", &m.encoder.feature_dim},
      {"encoder", "context_dim", &m.encoder.context_dim},
      {"encoder", "window", &m.encoder.window},
      {"encoder", "hafi_hidden", &m.encoder.hafi_hidden},
      {"encoder", "hafi_levels", &m.encoder.hafi_levels},
      {"train", "epochs", &t.epochs},
      {"train", "batch", &t.batch_size},
      {"train", "frames", &t.frames},
      {"train", "lr", &t.lr},
      {"train", "seed", &t.seed},
      {"train", "sample_count", &t.samples},
      {"train", "freeze_encoder", &t.freeze_encoder},
      {"train", "w_nll", &w.nll},
      {"train", "w_exp_2d", &w.exp_2d},
      {"train", "w_exp_adv", &w.exp_adv},
      {"train", "w_mode_2d", &w.mode_2d},
      {"train", "w_mode_adv", &w.mode_adv},
      {"train", "w_mode_3d", &w.mode_3d},
      {"train", "w_mode_theta", &w.mode_theta},
      {"train", "w_mode_beta", &w.mode_beta},
      {"train", "w_orth", &w.orth},
      {"data", "frames", &d.frames},
      {"data", "fps", &d.fps},
      {"data", "noise_sigma", &d.noise_sigma},
      {"data", "occlusion", &d.occlusion},
      {"data", "beta_sigma", &d.beta_sigma},
      {"data", "max_amplitude", &d.max_amplitude},
      {"data", "min_period", &d.min_period},
      {"data", "max_period", &d.max_period},
      {"data", "max_sinusoids", &d.max_sinusoids},
      {"data", "partial_fraction", &d.partial_fraction},
      {"fit", "lambda_joints", &f.lambda_joints},
      {"fit", "lambda_prior", &f.lambda_prior},
      {"fit", "lambda_shape", &f.lambda_shape},
      {"fit", "lr", &f.lr},
      {"fit", "max_iters", &f.max_iters},
      {"fit", "tolerance", &f.tolerance},
      {"fit", "reference_crop_px", &f.reference_crop_px},
  };
}

template <class T>
T parse_value(const boost::property_tree::ptree& node, const std::string& where) {
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (node.data().find('-') != std::string::npos) {
      throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", where, node.data()));
    }
  }
  const auto v = node.get_value_optional<T>();
  if (!v) throw ConfigError(fmt::format("{}: cannot parse '{}'", where, node.data()));
  return *v;
}

std::string format_value(const Slot& slot) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>) return *p;
        else return fmt::format("{}", *p);
      },
      slot);
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", origin, e.message()));
  }
  RunConfig config;
  const auto table = entries(config);
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError(fmt::format("{}: key '{}' appears outside a section", origin, section));
    }
    for (const auto& [key, node] : body) {
      const std::string where = fmt::format("{}: [{}] {}", origin, section, key);
      const auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Entry& e) { return section == e.section && key == e.key; });
      if (it == table.end()) throw ConfigError(where + ": unknown key");
      std::visit([&](auto* p) { *p = parse_value<std::remove_pointer_t<decltype(p)>>(node, where); }, it->slot);
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

std::string config_to_ini(const RunConfig& config) {
  RunConfig copy = config;
  std::string out;
  std::string section;
  for (const auto& e : entries(copy)) {
    if (section != e.section) {
      section = e.section;
      out += fmt::format("{}[{}]\n", out.empty() ? "" : "\n", section);
    }
    out += fmt::format("{} = {}\n", e.key, format_value(e.slot));
  }
  return out;
}

}  // namespace flowpose
