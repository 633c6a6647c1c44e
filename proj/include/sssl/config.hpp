#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "sssl/augment.hpp"
#include "sssl/encoder.hpp"
#include "sssl/head.hpp"
#include "sssl/optim.hpp"

namespace sssl {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lr = 5e-4;
  double weight_decay = 0.04;
  double warmup = 0.1;  // fraction of total steps
  double m_start = 0.996;
  double m_end = 1.0;
  std::size_t teacher_views = 1;
  std::uint64_t seed = 0;
  std::string data;
  std::string out = "run";
  bool deterministic = false;
  std::size_t workers = 4;
  EncoderConfig encoder;
  HeadConfig head;
  ViewConfig views;

  void validate() const {
    encoder.validate();
    head.validate();
    if (batch_size < 1) fail(errc::invalid_argument, "batch_size must be >= 1");
    if (!(lr > 0.0)) fail(errc::invalid_argument, "lr must be > 0");
    if (!(weight_decay >= 0.0)) fail(errc::invalid_argument, "weight_decay must be >= 0");
    if (!(warmup >= 0.0 && warmup < 1.0)) fail(errc::invalid_argument, "warmup must lie in [0,1)");
    if (!(0.0 <= m_start && m_start <= m_end && m_end <= 1.0))
      fail(errc::invalid_argument, "need 0 <= m_start <= m_end <= 1");
    if (teacher_views != 1 && teacher_views != 2) fail(errc::invalid_argument, "teacher_views must be 1 or 2");
    if (views.global_count < teacher_views) fail(errc::invalid_argument, "not enough global views for the teacher");
    if (views.global_size % encoder.patch_size || views.local_size % encoder.patch_size)
      fail(errc::invalid_argument, "view sizes must be divisible by patch_size");
    if (workers < 1) fail(errc::invalid_argument, "workers must be >= 1");
  }

  // Identifies the parameter layout; checkpoints carry it.
  std::string model_signature() const { return encoder.canonical() + "|" + head.canonical(); }
  std::uint64_t model_hash() const { return fnv1a64(model_signature()); }
};

namespace detail {

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) fail(errc::format, "config: bad value for " + key + ": '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(errc::format, "config: bad boolean for " + key + ": '" + value + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename N, typename Member>
ConfigField number_field(const std::string& key, Member member) {
  return {[=](TrainConfig& c, const std::string& v) { member(c) = parse_number<N>(key, v); },
          [=](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<N>)
              return fmt_double(member(const_cast<TrainConfig&>(c)));
            else
              return std::to_string(member(const_cast<TrainConfig&>(c)));
          }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  using C = TrainConfig;
  static const std::map<std::string, ConfigField> fields = {
      {"epochs", number_field<std::size_t>("epochs", [](C& c) -> auto& { return c.epochs; })},
      {"batch_size", number_field<std::size_t>("batch_size", [](C& c) -> auto& { return c.batch_size; })},
      {"lr", number_field<double>("lr", [](C& c) -> auto& { return c.lr; })},
      {"weight_decay", number_field<double>("weight_decay", [](C& c) -> auto& { return c.weight_decay; })},
      {"warmup", number_field<double>("warmup", [](C& c) -> auto& { return c.warmup; })},
      {"m_start", number_field<double>("m_start", [](C& c) -> auto& { return c.m_start; })},
      {"m_end", number_field<double>("m_end", [](C& c) -> auto& { return c.m_end; })},
      {"teacher_views", number_field<std::size_t>("teacher_views", [](C& c) -> auto& { return c.teacher_views; })},
      {"seed", number_field<std::uint64_t>("seed", [](C& c) -> auto& { return c.seed; })},
      {"workers", number_field<std::size_t>("workers", [](C& c) -> auto& { return c.workers; })},
      {"patch_size", number_field<std::size_t>("patch_size", [](C& c) -> auto& { return c.encoder.patch_size; })},
      {"model_dim", number_field<std::size_t>("model_dim", [](C& c) -> auto& { return c.encoder.model_dim; })},
      {"state_dim", number_field<std::size_t>("state_dim", [](C& c) -> auto& { return c.encoder.state_dim; })},
      {"depth", number_field<std::size_t>("depth", [](C& c) -> auto& { return c.encoder.depth; })},
      {"head_hidden", number_field<std::size_t>("head_hidden", [](C& c) -> auto& { return c.head.hidden_dim; })},
      {"proj_dim", number_field<std::size_t>("proj_dim", [](C& c) -> auto& { return c.head.proj_dim; })},
      {"prototypes", number_field<std::size_t>("prototypes", [](C& c) -> auto& { return c.head.prototypes; })},
      {"t_student", number_field<double>("t_student", [](C& c) -> auto& { return c.head.student_temp; })},
      {"t_teacher", number_field<double>("t_teacher", [](C& c) -> auto& { return c.head.teacher_temp; })},
      {"center_momentum",
       number_field<double>("center_momentum", [](C& c) -> auto& { return c.head.center_momentum; })},
      {"global_size", number_field<std::size_t>("global_size", [](C& c) -> auto& { return c.views.global_size; })},
      {"local_size", number_field<std::size_t>("local_size", [](C& c) -> auto& { return c.views.local_size; })},
      {"jitter", number_field<double>("jitter", [](C& c) -> auto& { return c.views.jitter_strength; })},
      {"data", {[](C& c, const std::string& v) { c.data = v; }, [](const C& c) { return c.data; }}},
      {"out", {[](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }}},
      {"deterministic",
       {[](C& c, const std::string& v) { c.deterministic = parse_bool("deterministic", v); },
        [](const C& c) { return std::string(c.deterministic ? "true" : "false"); }}},
      {"centering",
       {[](C& c, const std::string& v) { c.head.centering = parse_bool("centering", v); },
        [](const C& c) { return std::string(c.head.centering ? "true" : "false"); }}},
      {"bidirectional",
       {[](C& c, const std::string& v) { c.encoder.bidirectional = parse_bool("bidirectional", v); },
        [](const C& c) { return std::string(c.encoder.bidirectional ? "true" : "false"); }}},
      {"pooling",
       {[](C& c, const std::string& v) {
          if (v == "mean")
            c.encoder.pool = pooling::mean;
          else if (v == "last")
            c.encoder.pool = pooling::last_token;
          else
            fail(errc::format, "config: pooling must be 'mean' or 'last', got '" + v + "'");
        },
        [](const C& c) { return std::string(c.encoder.pool == pooling::mean ? "mean" : "last"); }}},
  };
  return fields;
}

}  // namespace detail

// One `key = value` per line; `#` starts a comment; unknown keys are errors.
inline TrainConfig parse_config(const std::string& text, TrainConfig cfg = {}) {
  const auto& fields = detail::config_fields();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(errc::format, "config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = fields.find(key);
    if (it == fields.end()) fail(errc::format, "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second.set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

// Every key, sorted; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace sssl
