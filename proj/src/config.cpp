#include "emosynth/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

namespace emosynth {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw std::invalid_argument("'" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("'" + v + "' is not a boolean (true/false)");
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) out.push_back(parse_number<T>(trim(item)));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

Field int_field(std::string sec, std::string key, Index& x) {
  return {std::move(sec), std::move(key), [&x](const std::string& v) { x = parse_number<Index>(v); },
          [&x] { return std::to_string(x); }};
}

Field u64_field(std::string sec, std::string key, std::uint64_t& x) {
  return {std::move(sec), std::move(key), [&x](const std::string& v) { x = parse_number<std::uint64_t>(v); },
          [&x] { return std::to_string(x); }};
}

Field real_field(std::string sec, std::string key, double& x) {
  return {std::move(sec), std::move(key), [&x](const std::string& v) { x = parse_number<double>(v); },
          [&x] { return fmt(x); }};
}

Field bool_field(std::string sec, std::string key, bool& x) {
  return {std::move(sec), std::move(key), [&x](const std::string& v) { x = parse_bool(v); },
          [&x] { return std::string(x ? "true" : "false"); }};
}

Field mode_field(std::string sec, std::string key, GuidanceMode& x) {
  return {std::move(sec), std::move(key), [&x](const std::string& v) { x = parse_guidance_mode(v); },
          [&x] { return std::string(guidance_mode_name(x)); }};
}

std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> f;
  f.push_back(u64_field("", "seed", c.seed));

  f.push_back(int_field("world", "dim", c.world.dim));
  f.push_back(int_field("world", "vocab", c.world.vocab));
  f.push_back(int_field("world", "speakers", c.world.speakers));
  f.push_back(int_field("world", "emotions", c.world.emotions));
  f.push_back(real_field("world", "tau", c.world.tau));
  f.push_back(int_field("world", "max_len", c.world.max_len));
  f.push_back(real_field("world", "speaker_scale", c.world.speaker_scale));
  f.push_back(real_field("world", "emotion_scale", c.world.emotion_scale));
  f.push_back(real_field("world", "token_scale", c.world.token_scale));
  f.push_back(int_field("world", "n_seen", c.n_seen));

  f.push_back(int_field("model", "style", c.model.style));
  f.push_back(int_field("model", "emotion_embed", c.model.emotion_embed));
  f.push_back(int_field("model", "token_embed", c.model.token_embed));
  f.push_back(int_field("model", "hidden", c.model.hidden));
  f.push_back(int_field("model", "hidden_layers", c.model.hidden_layers));
  f.push_back(bool_field("model", "linear_skip", c.model.linear_skip));
  f.push_back(real_field("model", "beta0", c.schedule.beta0));
  f.push_back(real_field("model", "beta1", c.schedule.beta1));
  f.push_back(real_field("model", "terminal", c.schedule.terminal));

  auto& t = c.train;
  f.push_back(int_field("train", "steps", t.steps));
  f.push_back(int_field("train", "batch_size", t.batch_size));
  f.push_back(real_field("train", "lr", t.lr));
  f.push_back(real_field("train", "lr_final_scale", t.lr_final_scale));
  f.push_back(real_field("train", "clip_norm", t.clip_norm));
  f.push_back(real_field("train", "alpha", t.alpha));
  f.push_back(real_field("train", "p_null", t.p_null));
  f.push_back(real_field("train", "w_recon", t.w_recon));
  f.push_back(real_field("train", "w_dsm", t.w_dsm));
  f.push_back(real_field("train", "w_dat", t.w_dat));
  f.push_back(real_field("train", "probe_lr", t.probe_lr));
  f.push_back(int_field("train", "min_len", t.min_len));
  f.push_back(int_field("train", "max_len", t.max_len));
  f.push_back(bool_field("train", "dsm_through_condition", t.dsm_through_condition));
  f.push_back(int_field("train", "log_every", t.log_every));
  f.push_back(int_field("train", "clf_steps", t.clf_steps));
  f.push_back(int_field("train", "clf_batch", t.clf_batch));
  f.push_back(real_field("train", "clf_lr", t.clf_lr));
  f.push_back(int_field("train", "clf_examples", t.clf_examples));
  f.push_back(int_field("train", "clf_reference_len", t.clf_reference_len));

  auto& s = c.sample;
  f.push_back(int_field("sample", "steps", s.steps));
  f.push_back(bool_field("sample", "stochastic", s.stochastic));
  f.push_back(mode_field("sample", "mode", s.mode));
  f.push_back(real_field("sample", "gamma", s.gamma));
  f.push_back(int_field("sample", "speaker", s.speaker));
  f.push_back(int_field("sample", "emotion", s.emotion));
  f.push_back(int_field("sample", "count", s.count));
  f.push_back(int_field("sample", "length", s.length));
  f.push_back(int_field("sample", "reference_len", s.reference_len));
  f.push_back(bool_field("sample", "trace", s.trace));

  auto& e = c.eval;
  f.push_back({"eval", "gammas", [&e](const std::string& v) { e.gammas = parse_list<double>(v); },
               [&e] { return join(e.gammas); }});
  f.push_back(mode_field("eval", "mode", e.mode));
  f.push_back({"eval", "group", [&e](const std::string& v) { e.group = parse_speaker_group(v); },
               [&e] { return std::string(speaker_group_name(e.group)); }});
  f.push_back(int_field("eval", "samples_per_seed", e.samples_per_seed));
  f.push_back({"eval", "seeds", [&e](const std::string& v) { e.seeds = parse_list<std::uint64_t>(v); },
               [&e] { return join(e.seeds); }});
  f.push_back(int_field("eval", "scripts", e.scripts));
  f.push_back(int_field("eval", "script_len", e.script_len));
  f.push_back(int_field("eval", "reference_len", e.reference_len));
  f.push_back(int_field("eval", "sampler_steps", e.sampler_steps));
  f.push_back(bool_field("eval", "stochastic", e.stochastic));
  f.push_back(int_field("eval", "probe_per_emotion", e.probe_per_emotion));
  return f;
}

bool known_section(std::string_view s) {
  return s == "world" || s == "model" || s == "train" || s == "sample" || s == "eval";
}

void assign(ExperimentConfig& c, const std::string& section, const std::string& key, const std::string& value,
            const std::string& where) {
  if (!section.empty() && !known_section(section)) throw ConfigError(where + ": unknown section [" + section + "]");
  auto fs = fields(c);
  const auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return f.section == section && f.key == key; });
  if (it == fs.end()) {
    throw ConfigError(where + ": unknown key '" + key + "'" + (section.empty() ? std::string(" at top level") : " in [" + section + "]"));
  }
  try {
    it->set(value);
  } catch (const std::exception& err) {
    throw ConfigError(where + ": " + (section.empty() ? key : section + "." + key) + ": " + err.what());
  }
}

}  // namespace

ModelDims ExperimentConfig::dims() const {
  ModelDims d = model;
  d.dim = world.dim;
  d.vocab = world.vocab;
  d.emotions = world.emotions;
  return d;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

SweepOptions ExperimentConfig::sweep_options() const {
  SweepOptions o;
  o.gammas = eval.gammas;
  o.mode = eval.mode;
  o.group = eval.group;
  o.samples_per_seed = eval.samples_per_seed;
  o.seeds = eval.seeds;
  o.scripts = eval.scripts;
  o.script_len = eval.script_len;
  o.reference_len = eval.reference_len;
  o.sampler_steps = eval.sampler_steps;
  o.stochastic = eval.stochastic;
  return o;
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
  ExperimentConfig c = default_config();
  std::istringstream is{std::string(text)};
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!known_section(section)) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    if (value.empty()) throw ConfigError(where + ": missing value for '" + key + "'");
    assign(c, section, key, value, where);
  }
  return c;
}

void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const std::string where = "--set " + std::string(assignment);
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected section.key=value");
  const std::string path = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (value.empty()) throw ConfigError(where + ": missing value");
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    assign(config, "", path, value, where);
  } else {
    assign(config, path.substr(0, dot), path.substr(dot + 1), value, where);
  }
}

std::string resolved_config(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  std::string out;
  std::string section = "";
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      section = f.section;
      out += "\n[" + section + "]\n";
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

void validate(const ExperimentConfig& c) {
  try {
    c.world.validate();
    c.schedule.validate();
    c.train_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.n_seen < 1 || c.n_seen >= c.world.speakers) throw ConfigError("world.n_seen must lie in [1, speakers)");
  if (c.train.max_len > c.world.max_len) throw ConfigError("train.max_len exceeds world.max_len");
  if (c.sample.length < 1 || c.sample.length > c.world.max_len) throw ConfigError("sample.length out of range");
  if (c.sample.reference_len < 1 || c.sample.reference_len > c.world.max_len) {
    throw ConfigError("sample.reference_len out of range");
  }
  if (c.eval.script_len < 1 || c.eval.script_len > c.world.max_len) throw ConfigError("eval.script_len out of range");
  if (c.eval.reference_len < 1 || c.eval.reference_len > c.world.max_len) {
    throw ConfigError("eval.reference_len out of range");
  }
  if (c.sample.steps < 1 || c.eval.sampler_steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (c.sample.count < 1) throw ConfigError("sample.count must be >= 1");
  if (c.sample.gamma < 0.0) throw ConfigError("sample.gamma must be >= 0");
  if (c.eval.probe_per_emotion < 10) throw ConfigError("eval.probe_per_emotion must be >= 10");
  if (!std::is_sorted(c.eval.gammas.begin(), c.eval.gammas.end()) || c.eval.gammas.front() < 0.0) {
    throw ConfigError("eval.gammas must be non-negative and ascending");
  }
  const auto d = c.dims();
  if (d.style < 1 || d.emotion_embed < 1 || d.token_embed < 1 || d.hidden < 1 || d.hidden_layers < 0) {
    throw ConfigError("model sizes must be positive");
  }
}

}  // namespace emosynth
