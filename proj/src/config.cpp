#include "lebm/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lebm/error.hpp"

extern char** environ;

namespace lebm {
namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw Error(ErrorCode::ConfigError, "key '" + key + "': cannot parse '" + value + "' as " + expected);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, raw, "a number");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, raw, "a boolean");
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Field {
  std::string key;  // section.key
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Member>
Field number(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) { member(c) = parse_number<T>(key, v); },
          [member](const RunConfig& c) { return format_number<T>(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Field text(std::string key, Member member) {
  return {key, [member](RunConfig& c, const std::string& v) { member(c) = trim(v); },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

template <typename Member>
Field boolean(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Member>
Field widths(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            std::vector<int> w;
            for (const std::string& item : split_list(v)) w.push_back(parse_number<int>(key, item));
            for (int x : w)
              if (x < 1) bad_value(key, v, "a list of positive widths");
            member(c) = w;
          },
          [member](const RunConfig& c) {
            std::string s;
            for (int x : member(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
          }};
}

template <typename Member>
Field activation(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            try {
              member(c) = parse_activation(trim(v));
            } catch (const Error&) {
              bad_value(key, v, "tanh or relu");
            }
          },
          [member](const RunConfig& c) { return to_string(member(const_cast<RunConfig&>(c))); }};
}

#define LEBM_MEMBER(path) [](RunConfig& c) -> auto& { return c.path; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      text("data.source", LEBM_MEMBER(data.source)),
      text("data.kind", LEBM_MEMBER(data.kind)),
      number<std::size_t>("data.n_unlabeled", LEBM_MEMBER(data.n_unlabeled)),
      number<std::size_t>("data.n_labeled", LEBM_MEMBER(data.n_labeled)),
      number<std::size_t>("data.n_test", LEBM_MEMBER(data.n_test)),
      number<double>("data.noise", LEBM_MEMBER(data.noise)),
      number<int>("data.components", LEBM_MEMBER(data.components)),
      text("data.train_path", LEBM_MEMBER(data.train_path)),
      text("data.test_path", LEBM_MEMBER(data.test_path)),
      text("data.vocab_path", LEBM_MEMBER(data.vocab_path)),
      text("data.train_labels_path", LEBM_MEMBER(data.train_labels_path)),
      text("data.test_labels_path", LEBM_MEMBER(data.test_labels_path)),
      text("data.label_column", LEBM_MEMBER(data.label_column)),
      number<int>("data.num_classes", LEBM_MEMBER(data.num_classes)),
      {"data.class_names", [](RunConfig& c, const std::string& v) { c.data.class_names = split_list(v); },
       [](const RunConfig& c) {
         std::string s;
         for (const auto& n : c.data.class_names) s += (s.empty() ? "" : ",") + n;
         return s;
       }},
      boolean("data.standardize", LEBM_MEMBER(data.standardize)),
      number<double>("data.validation_fraction", LEBM_MEMBER(data.validation_fraction)),

      number<int>("model.latent_dim", LEBM_MEMBER(model.latent_dim)),
      widths("model.prior_hidden", LEBM_MEMBER(model.prior_hidden)),
      widths("model.encoder_hidden", LEBM_MEMBER(model.encoder_hidden)),
      widths("model.decoder_hidden", LEBM_MEMBER(model.decoder_hidden)),
      activation("model.prior_activation", LEBM_MEMBER(model.prior_activation)),
      activation("model.activation", LEBM_MEMBER(model.net_activation)),
      {"model.decoder",
       [](RunConfig& c, const std::string& v) {
         try {
           c.model.decoder = parse_decoder_kind(trim(v));
         } catch (const Error&) {
           bad_value("model.decoder", v, "gaussian or multinomial");
         }
       },
       [](const RunConfig& c) { return to_string(c.model.decoder); }},
      number<double>("model.sigma2", LEBM_MEMBER(model.sigma2)),

      number<std::size_t>("sampler.chains", LEBM_MEMBER(trainer.chains)),
      number<int>("sampler.steps", LEBM_MEMBER(trainer.langevin_steps)),
      number<double>("sampler.step_size", LEBM_MEMBER(trainer.step_size)),

      number<std::int64_t>("trainer.iterations", LEBM_MEMBER(trainer.iterations)),
      number<double>("trainer.eta0", LEBM_MEMBER(trainer.eta0)),
      number<double>("trainer.eta1", LEBM_MEMBER(trainer.eta1)),
      number<double>("trainer.eta2", LEBM_MEMBER(trainer.eta2)),
      number<std::size_t>("trainer.batch_unlabeled", LEBM_MEMBER(trainer.batch_unlabeled)),
      number<std::size_t>("trainer.batch_labeled", LEBM_MEMBER(trainer.batch_labeled)),
      number<int>("trainer.n_mc", LEBM_MEMBER(trainer.n_mc_label)),
      number<double>("trainer.adam_beta1", LEBM_MEMBER(trainer.adam_beta1)),
      number<double>("trainer.adam_beta2", LEBM_MEMBER(trainer.adam_beta2)),
      number<double>("trainer.adam_eps", LEBM_MEMBER(trainer.adam_eps)),
      number<int>("trainer.max_nonfinite_retries", LEBM_MEMBER(trainer.max_nonfinite_retries)),
      number<std::uint64_t>("trainer.seed", LEBM_MEMBER(trainer.seed)),
      number<int>("trainer.threads", LEBM_MEMBER(trainer.threads)),

      number<int>("eval.n_mc", LEBM_MEMBER(eval.n_mc)),
      number<std::int64_t>("eval.interval", LEBM_MEMBER(eval.interval)),

      text("output.dir", LEBM_MEMBER(output.dir)),
      number<std::int64_t>("output.checkpoint_interval", LEBM_MEMBER(output.checkpoint_interval)),
      boolean("output.record_wallclock", LEBM_MEMBER(output.record_wallclock)),
  };
  return table;
}

#undef LEBM_MEMBER

const Field* find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace

void set_value(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  const Field* f = find_field(dotted_key);
  if (f == nullptr) throw Error(ErrorCode::ConfigError, "unknown config key '" + dotted_key + "'");
  f->set(config, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigError, origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw Error(ErrorCode::ConfigError, origin + ": key '" + section + "' must appear inside a [section]");
    for (const auto& [key, value] : body) set_value(config, section + "." + key, value.data());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_overrides(RunConfig& config, const std::map<std::string, std::string>& env) {
  static const std::string prefix = "LEBM_";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string rest = name.substr(prefix.size());
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto cut = rest.find('_');
    if (cut == std::string::npos)
      throw Error(ErrorCode::ConfigError, "environment override " + name + " names no config key");
    const std::string key = rest.substr(0, cut) + "." + rest.substr(cut + 1);
    if (find_field(key) == nullptr)
      throw Error(ErrorCode::ConfigError, "environment override " + name + " names unknown key '" + key + "'");
    set_value(config, key, value);
  }
}

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos || entry.rfind("LEBM_", 0) != 0) continue;
    out.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return out;
}

std::string to_ini(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      out += (current.empty() ? "" : "\n") + std::string("[") + section + "]\n";
      current = section;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace lebm
