#include "cdgpa/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cdgpa/errors.hpp"
#include "cdgpa/io.hpp"

namespace cdgpa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  T out{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ParameterError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ParameterError("config key '" + key + "': expected true or false, got '" + text + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto size = [](auto member) {
      return Setter([member](RunConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_number<std::size_t>(k, v);
      });
    };
    auto real = [](auto member) {
      return Setter([member](RunConfig& c, const std::string& k, const std::string& v) {
        member(c) = parse_number<double>(k, v);
      });
    };
    auto flag = [](auto member) {
      return Setter([member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); });
    };
    auto list = [](auto member) {
      return Setter([member](RunConfig& c, const std::string&, const std::string& v) {
        member(c) = parse_double_list(v);
      });
    };
    t["data.layout"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      const std::string s = trim(v);
      if (s != "gaussian" && s != "moons") throw ParameterError("config key '" + k + "': expected gaussian or moons");
      c.layout = s;
    };
    t["data.classes"] = size([](RunConfig& c) -> auto& { return c.data.num_classes; });
    t["data.dim"] = size([](RunConfig& c) -> auto& { return c.data.input_dim; });
    t["data.n_source"] = size([](RunConfig& c) -> auto& { return c.data.n_source; });
    t["data.n_target"] = size([](RunConfig& c) -> auto& { return c.data.n_target; });
    t["data.translation"] = list([](RunConfig& c) -> auto& { return c.data.translation; });
    t["data.rotation"] = real([](RunConfig& c) -> auto& { return c.data.rotation; });
    t["data.scale"] = real([](RunConfig& c) -> auto& { return c.data.scale; });
    t["data.conditional_shift"] = real([](RunConfig& c) -> auto& { return c.data.conditional_shift; });
    t["data.separation"] = real([](RunConfig& c) -> auto& { return c.data.separation; });
    t["data.noise"] = real([](RunConfig& c) -> auto& { return c.data.noise; });
    t["model.embed_dim"] = size([](RunConfig& c) -> auto& { return c.model.embed_dim; });
    t["model.feature_dim"] = size([](RunConfig& c) -> auto& { return c.model.feature_dim; });
    t["model.hidden_dim"] = size([](RunConfig& c) -> auto& { return c.model.hidden_dim; });
    t["model.context_length"] = size([](RunConfig& c) -> auto& { return c.model.context_length; });
    t["model.temperature"] = real([](RunConfig& c) -> auto& { return c.model.temperature; });
    t["model.disc_hidden"] = size([](RunConfig& c) -> auto& { return c.disc_hidden; });
    t["train.gamma_mal"] = real([](RunConfig& c) -> auto& { return c.train.gamma_mal; });
    t["train.gamma_cal"] = real([](RunConfig& c) -> auto& { return c.train.gamma_cal; });
    t["train.lr"] = real([](RunConfig& c) -> auto& { return c.train.lr; });
    t["train.disc_lr"] = real([](RunConfig& c) -> auto& { return c.train.disc_lr; });
    t["train.head_lr"] = real([](RunConfig& c) -> auto& { return c.train.head_lr; });
    t["train.epochs"] = size([](RunConfig& c) -> auto& { return c.train.epochs; });
    t["train.batch_size"] = size([](RunConfig& c) -> auto& { return c.train.batch_size; });
    t["train.top_c"] = size([](RunConfig& c) -> auto& { return c.train.top_c; });
    t["train.confidence_threshold"] = real([](RunConfig& c) -> auto& { return c.train.confidence_threshold; });
    t["train.grl_coefficient"] = real([](RunConfig& c) -> auto& { return c.train.grl_coefficient; });
    t["train.mal_on"] = flag([](RunConfig& c) -> auto& { return c.train.mal_on; });
    t["train.cal_on"] = flag([](RunConfig& c) -> auto& { return c.train.cal_on; });
    t["train.mode"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.train.mode = parse_prompt_mode(trim(v));
    };
    t["run.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    t["run.seeds"] = size([](RunConfig& c) -> auto& { return c.seeds; });
    t["run.gamma_mal_grid"] = list([](RunConfig& c) -> auto& { return c.gamma_mal_grid; });
    t["run.gamma_cal_grid"] = list([](RunConfig& c) -> auto& { return c.gamma_cal_grid; });
    t["run.pad_every"] = size([](RunConfig& c) -> auto& { return c.pad_every; });
    return t;
  }();
  return table;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>("list", item));
  if (out.empty()) throw ParameterError("empty list");
  return out;
}

void RunConfig::propagate_seed(std::uint64_t root) {
  seed = root;
  data.seed = root;
  model.seed = root;
  train.seed = root;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (disc_hidden == 0) throw ParameterError("disc_hidden must be at least 1");
  if (seeds == 0) throw ParameterError("seeds must be at least 1");
  if (gamma_mal_grid.empty() || gamma_cal_grid.empty()) throw ParameterError("sweep grids must be non-empty");
}

void apply_config_text(RunConfig& config, const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParameterError(std::string("config file: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ParameterError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      const auto it = setters().find(name);
      if (it == setters().end()) throw ParameterError("unknown config key '" + name + "'");
      it->second(config, name, value.data());
    }
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str());
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data{{"layout", c.layout},
                      {"classes", c.data.num_classes},
                      {"dim", c.data.input_dim},
                      {"n_source", c.data.n_source},
                      {"n_target", c.data.n_target},
                      {"translation", c.data.translation},
                      {"rotation", c.data.rotation},
                      {"scale", c.data.scale},
                      {"conditional_shift", c.data.conditional_shift},
                      {"separation", c.data.separation},
                      {"noise", c.data.noise}};
  nlohmann::json model = to_json(c.model);
  model["disc_hidden"] = c.disc_hidden;
  return nlohmann::json{{"data", data},
                        {"model", model},
                        {"train", to_json(c.train)},
                        {"run",
                         {{"seed", c.seed},
                          {"seeds", c.seeds},
                          {"gamma_mal_grid", c.gamma_mal_grid},
                          {"gamma_cal_grid", c.gamma_cal_grid},
                          {"pad_every", c.pad_every}}}};
}

}  // namespace cdgpa
