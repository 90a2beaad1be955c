#include "awb/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "awb/checkpoint.hpp"
#include "awb/errors.hpp"

namespace awb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a nonnegative integer");
  return out;
}

double to_f64(const std::string& v) {
  try {
    return parse_exact_double(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number");
  }
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream s(v);
  for (std::string item; std::getline(s, item, ',');) out.push_back(trim(item));
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename M>
Entry size_entry(std::string key, M member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = static_cast<std::size_t>(to_u64(v)); }};
}

template <typename M>
Entry u64_entry(std::string key, M member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = to_u64(v); }};
}

template <typename M>
Entry real_entry(std::string key, M member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return exact_double(member(const_cast<ExperimentConfig&>(c))); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = to_f64(v); }};
}

template <typename M>
Entry bool_entry(std::string key, M member) {
  return {std::move(key),
          [member](const ExperimentConfig& c) { return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = to_bool(v); }};
}

template <typename M>
Entry text_entry(std::string key, M member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)); },
          [member](ExperimentConfig& c, const std::string& v) { member(c) = v; }};
}

template <typename M>
Entry shift_entry(std::string key, M member) {
  return {std::move(key),
          [member](const ExperimentConfig& c) {
            const auto& a = member(const_cast<ExperimentConfig&>(c));
            return exact_double(a[0]) + "," + exact_double(a[1]) + "," + exact_double(a[2]);
          },
          [member](ExperimentConfig& c, const std::string& v) {
            const auto parts = split_list(v);
            if (parts.size() != 3) throw std::invalid_argument("expected three comma-separated numbers");
            for (std::size_t i = 0; i < 3; ++i) member(c)[i] = to_f64(parts[i]);
          }};
}

void domain_entries(std::vector<Entry>& e, const std::string& prefix,
                    std::function<DomainSettings&(ExperimentConfig&)> dom) {
  e.push_back(shift_entry(prefix + ".color_shift", [dom](ExperimentConfig& c) -> auto& { return dom(c).color_shift; }));
  e.push_back(real_entry(prefix + ".contrast", [dom](ExperimentConfig& c) -> auto& { return dom(c).contrast; }));
  e.push_back(size_entry(prefix + ".blur", [dom](ExperimentConfig& c) -> auto& { return dom(c).blur; }));
  e.push_back(u64_entry(prefix + ".background_seed", [dom](ExperimentConfig& c) -> auto& { return dom(c).background_seed; }));
}

#define FIELD(expr) [](ExperimentConfig & c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> e;
    e.push_back(u64_entry("seed", FIELD(seed)));
    e.push_back(size_entry("workers", FIELD(workers)));
    e.push_back(text_entry("output_dir", FIELD(output_dir)));

    e.push_back(text_entry("data.dir", FIELD(data.dir)));
    e.push_back(u64_entry("data.seed", FIELD(data.seed)));
    e.push_back(size_entry("data.identities", FIELD(data.identities)));
    e.push_back(size_entry("data.views", FIELD(data.views)));
    e.push_back(size_entry("data.height", FIELD(data.height)));
    e.push_back(size_entry("data.width", FIELD(data.width)));
    domain_entries(e, "data.source", [](ExperimentConfig& c) -> DomainSettings& { return c.data.source; });
    domain_entries(e, "data.target", [](ExperimentConfig& c) -> DomainSettings& { return c.data.target; });
    e.push_back(real_entry("data.query_fraction", FIELD(data.query_fraction)));
    e.push_back(real_entry("data.gallery_fraction", FIELD(data.gallery_fraction)));

    e.push_back({"model.channels",
                 [](const ExperimentConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.model.channels.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.model.channels[i]);
                   }
                   return s;
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model.channels.clear();
                   for (const auto& p : split_list(v)) c.model.channels.push_back(static_cast<std::size_t>(to_u64(p)));
                 }});
    e.push_back(size_entry("model.embedding", FIELD(model.embedding)));
    e.push_back({"model.attention", [](const ExperimentConfig& c) { return to_string(c.model.attention); },
                 [](ExperimentConfig& c, const std::string& v) { c.model.attention = parse_attention_kind(v); }});
    e.push_back({"model.strategy", [](const ExperimentConfig& c) { return c.model.strategy; },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v != "auto") parse_strategy(v);
                   c.model.strategy = v;
                 }});
    e.push_back(size_entry("model.reduction", FIELD(model.reduction)));
    e.push_back(size_entry("model.kernel", FIELD(model.kernel)));
    e.push_back(real_entry("model.rw", FIELD(model.rw)));
    e.push_back(real_entry("model.rh", FIELD(model.rh)));
    e.push_back({"model.wave_kind", [](const ExperimentConfig& c) { return to_string(c.model.wave_kind); },
                 [](ExperimentConfig& c, const std::string& v) { c.model.wave_kind = parse_wave_kind(v); }});

    e.push_back(size_entry("pretrain.epochs", FIELD(pretrain.epochs)));
    e.push_back(size_entry("pretrain.iters_per_epoch", FIELD(pretrain.iters_per_epoch)));
    e.push_back(real_entry("pretrain.lr", FIELD(pretrain.lr)));
    e.push_back(real_entry("pretrain.weight_decay", FIELD(pretrain.weight_decay)));
    e.push_back(real_entry("pretrain.ce_weight", FIELD(pretrain.ce_weight)));
    e.push_back(real_entry("pretrain.tri_weight", FIELD(pretrain.tri_weight)));
    e.push_back(size_entry("pretrain.identities_per_batch", FIELD(pretrain.identities_per_batch)));
    e.push_back(size_entry("pretrain.views_per_identity", FIELD(pretrain.views_per_identity)));

    e.push_back(size_entry("adapt.k", FIELD(adapt.k)));
    e.push_back(size_entry("adapt.warmup_epochs", FIELD(adapt.warmup_epochs)));
    e.push_back(size_entry("adapt.epochs", FIELD(adapt.epochs)));
    e.push_back(size_entry("adapt.iters_per_epoch", FIELD(adapt.iters_per_epoch)));
    e.push_back(real_entry("adapt.ema_momentum", FIELD(adapt.ema_momentum)));
    e.push_back(real_entry("adapt.lr", FIELD(adapt.lr)));
    e.push_back(real_entry("adapt.beta1", FIELD(adapt.beta1)));
    e.push_back(real_entry("adapt.beta2", FIELD(adapt.beta2)));
    e.push_back(real_entry("adapt.weight_decay", FIELD(adapt.weight_decay)));
    e.push_back(real_entry("adapt.w_hard_ce", FIELD(adapt.weights.hard_ce)));
    e.push_back(real_entry("adapt.w_soft_ce", FIELD(adapt.weights.soft_ce)));
    e.push_back(real_entry("adapt.w_hard_tri", FIELD(adapt.weights.hard_tri)));
    e.push_back(real_entry("adapt.w_soft_tri", FIELD(adapt.weights.soft_tri)));
    e.push_back(real_entry("adapt.temperature", FIELD(adapt.weights.temperature)));
    e.push_back(size_entry("adapt.identities_per_batch", FIELD(adapt.identities_per_batch)));
    e.push_back(size_entry("adapt.views_per_identity", FIELD(adapt.views_per_identity)));
    e.push_back(size_entry("adapt.kmeans_iters", FIELD(adapt.kmeans_iters)));
    e.push_back(real_entry("adapt.kmeans_tol", FIELD(adapt.kmeans_tol)));

    e.push_back({"eval.tap", [](const ExperimentConfig& c) { return to_string(c.eval.tap); },
                 [](ExperimentConfig& c, const std::string& v) { c.eval.tap = parse_tap(v); }});
    e.push_back(size_entry("eval.batch", FIELD(eval.batch)));
    e.push_back(size_entry("eval.every", FIELD(eval.every)));

    e.push_back(bool_entry("metrics.wall_time", FIELD(metrics.wall_time)));
    return e;
  }();
  return table;
}

#undef FIELD

[[noreturn]] void config_fail(const std::string& what) { throw ConfigError(what); }

}  // namespace

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& table = entries();
  auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return e.key == key; });
  if (it == table.end()) config_fail("unknown configuration key '" + key + "'");
  try {
    it->set(config, value);
  } catch (const std::exception& e) {
    config_fail("bad value '" + value + "' for " + key + ": " + e.what());
  }
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) config_fail("override '" + assignment + "' is not key=value");
  set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_fail("line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      config_fail("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) config_fail("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

void write_resolved_config(const ExperimentConfig& config, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::ofstream out(std::filesystem::path(dir) / "resolved_config.txt");
  out << to_text(config);
  if (!out) throw IoError("cannot write resolved_config.txt in " + dir);
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) config_fail(what);
  };
  check(workers >= 1, "workers must be at least 1");
  check(data.identities >= 2, "data.identities must be at least 2");
  check(data.views >= 2, "data.views must be at least 2");
  check(adapt.k >= 1, "adapt.k must be positive");
  check(adapt.ema_momentum >= 0.0 && adapt.ema_momentum < 1.0, "adapt.ema_momentum must lie in [0, 1)");
  check(pretrain.identities_per_batch >= 2 && pretrain.views_per_identity >= 2,
        "pretrain batches need at least 2 identities and 2 views each");
  check(adapt.identities_per_batch >= 2 && adapt.views_per_identity >= 2,
        "adapt batches need at least 2 clusters and 2 views each");
  check(pretrain.ce_weight >= 0.0 && pretrain.tri_weight >= 0.0 && pretrain.ce_weight + pretrain.tri_weight > 0.0,
        "pretrain loss weights must be nonnegative with a positive sum");
  check(eval.batch >= 1 && eval.every >= 1, "eval.batch and eval.every must be positive");
  try {
    for (const auto& d : domain_specs()) d.validate();
    WaveConfig wave = awb_config().wave;
    backbone_spec().validate(wave);
    if (model.attention == AttentionKind::icbam) CbamParams<float>::zeros(model.channels.at(1), model.reduction, model.kernel);
    if (model.attention == AttentionKind::icbam) CbamParams<float>::zeros(model.channels.at(2), model.reduction, model.kernel);
    if (model.attention == AttentionKind::nonlocal) {
      NonLocalParams<float>::zeros(model.channels.at(1));
      NonLocalParams<float>::zeros(model.channels.at(2));
    }
    adapt.weights.validate();
    pretrain_optimizer().validate();
    adapt_optimizer().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    config_fail(e.what());
  }
  const auto target_train = data.views - static_cast<std::size_t>(std::lround(data.query_fraction * static_cast<double>(data.views))) -
                            static_cast<std::size_t>(std::lround(data.gallery_fraction * static_cast<double>(data.views)));
  check(adapt.k <= data.identities * target_train, "adapt.k exceeds the number of target training images");
}

std::vector<SyntheticDomainSpec> ExperimentConfig::domain_specs() const {
  auto make = [&](const std::string& name, const DomainSettings& s, std::uint64_t stream) {
    SyntheticDomainSpec d;
    d.name = name;
    d.n_identities = data.identities;
    d.views_per_identity = data.views;
    d.height = data.height;
    d.width = data.width;
    d.transform.color_shift = s.color_shift;
    d.transform.contrast = s.contrast;
    d.transform.blur_radius = s.blur;
    d.transform.background_seed = s.background_seed;
    d.identity_stream = stream;
    return d;
  };
  auto source = make("source", data.source, 1);
  auto target = make("target", data.target, 2);
  target.query_fraction = data.query_fraction;
  target.gallery_fraction = data.gallery_fraction;
  return {source, target};
}

BackboneSpec ExperimentConfig::backbone_spec() const {
  BackboneSpec s;
  s.height = data.height;
  s.width = data.width;
  s.channels = model.channels;
  s.embedding = model.embedding;
  return s;
}

AwbConfig ExperimentConfig::awb_config() const {
  AwbConfig c;
  c.attention = model.attention;
  c.strategy = model.strategy == "auto" ? AwbConfig::default_strategy(model.attention) : parse_strategy(model.strategy);
  c.wave.r_w = model.rw;
  c.wave.r_h = model.rh;
  c.wave.kind = model.wave_kind;
  return c;
}

AttentionOptions ExperimentConfig::attention_options() const { return {model.reduction, model.kernel}; }

AdamConfig ExperimentConfig::pretrain_optimizer() const {
  AdamConfig a;
  a.lr = pretrain.lr;
  a.beta1 = adapt.beta1;
  a.beta2 = adapt.beta2;
  a.weight_decay = pretrain.weight_decay;
  return a;
}

AdamConfig ExperimentConfig::adapt_optimizer() const {
  AdamConfig a;
  a.lr = adapt.lr;
  a.beta1 = adapt.beta1;
  a.beta2 = adapt.beta2;
  a.weight_decay = adapt.weight_decay;
  return a;
}

}  // namespace awb
