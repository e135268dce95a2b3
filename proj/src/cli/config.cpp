#include "radiff/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace radiff::cli {

namespace {

std::string format_value(std::size_t v) { return std::to_string(v); }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(double v) { return fmt::format("{}", v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(radar::Profile p) { return radar::profile_name(p); }
std::string format_value(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw ConfigError("not a valid number: '" + s + "'");
  return v;
}

void parse_value(const std::string& s, std::size_t& out) { out = parse_number<std::size_t>(s); }
void parse_value(const std::string& s, int& out) { out = parse_number<int>(s); }
void parse_value(const std::string& s, double& out) {
  out = parse_number<double>(s);
  if (!std::isfinite(out)) throw ConfigError("not a finite number: '" + s + "'");
}
void parse_value(const std::string& s, bool& out) {
  if (s == "true")
    out = true;
  else if (s == "false")
    out = false;
  else
    throw ConfigError("expected true or false, got '" + s + "'");
}
void parse_value(const std::string& s, std::string& out) { out = s; }
void parse_value(const std::string& s, radar::Profile& out) {
  try {
    out = radar::parse_profile(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}
void parse_value(const std::string& s, std::vector<std::size_t>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    const auto b = item.find_last_not_of(' ');
    out.push_back(parse_number<std::size_t>(a == std::string::npos ? "" : item.substr(a, b - a + 1)));
  }
  if (out.empty()) throw ConfigError("empty list");
}

struct Field {
  std::string section, key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Ref>
Field field(const char* section, const char* key, Ref ref) {
  return {section, key, [ref](const RunConfig& c) { return format_value(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& v) { parse_value(v, ref(c)); }};
}

#define RADIFF_FIELD(sec, member) field(#sec, #member, [](RunConfig& c) -> auto& { return c.sec.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      RADIFF_FIELD(data, profile),
      RADIFF_FIELD(data, num_points),
      RADIFF_FIELD(data, sweeps),
      RADIFF_FIELD(data, doppler_min),
      RADIFF_FIELD(data, doppler_max),
      RADIFF_FIELD(data, rcs_min),
      RADIFF_FIELD(data, rcs_max),

      RADIFF_FIELD(vae, epochs),
      RADIFF_FIELD(vae, batch_size_fg),
      RADIFF_FIELD(vae, batch_size_bg),
      RADIFF_FIELD(vae, lr),
      RADIFF_FIELD(vae, optimizer),
      RADIFF_FIELD(vae, scheduler),
      RADIFF_FIELD(vae, step_size),
      RADIFF_FIELD(vae, gamma),
      RADIFF_FIELD(vae, lambda_reg),
      RADIFF_FIELD(vae, lambda_den),
      RADIFF_FIELD(vae, lambda_card),
      RADIFF_FIELD(vae, lambda_d),
      RADIFF_FIELD(vae, lambda_c),
      RADIFF_FIELD(vae, lambda_f),
      RADIFF_FIELD(vae, latent_dim),
      RADIFF_FIELD(vae, factors),
      RADIFF_FIELD(vae, width),
      RADIFF_FIELD(vae, heads),

      RADIFF_FIELD(diffusion, epochs),
      RADIFF_FIELD(diffusion, batch_size_fg),
      RADIFF_FIELD(diffusion, batch_size_bg),
      RADIFF_FIELD(diffusion, lr),
      RADIFF_FIELD(diffusion, optimizer),
      RADIFF_FIELD(diffusion, weight_decay),
      RADIFF_FIELD(diffusion, scheduler),
      RADIFF_FIELD(diffusion, beta_start),
      RADIFF_FIELD(diffusion, beta_end),
      RADIFF_FIELD(diffusion, beta_schedule),
      RADIFF_FIELD(diffusion, steps),
      RADIFF_FIELD(diffusion, width),
      RADIFF_FIELD(diffusion, blocks),
      RADIFF_FIELD(diffusion, heads),
      RADIFF_FIELD(diffusion, cond_dropout),

      RADIFF_FIELD(layout, objects),
      RADIFF_FIELD(layout, num_classes),
      RADIFF_FIELD(layout, width),
      RADIFF_FIELD(layout, heads),
      RADIFF_FIELD(layout, layers),
      RADIFF_FIELD(layout, size_max),
      RADIFF_FIELD(layout, v_max),

      RADIFF_FIELD(pillars, cell),
      RADIFF_FIELD(pillars, max_points),
      RADIFF_FIELD(pillars, max_tokens),
      RADIFF_FIELD(pillars, width),

      RADIFF_FIELD(metrics, grid_cells),

      RADIFF_FIELD(augment, samples_car),
      RADIFF_FIELD(augment, samples_pedestrian),
      RADIFF_FIELD(augment, samples_cyclist),
      RADIFF_FIELD(augment, global),
      RADIFF_FIELD(augment, polar_target),
      RADIFF_FIELD(augment, polar_sectors),
  };
  return all;
}

#undef RADIFF_FIELD

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// Only the optimizers and schedules of the training recipes are built in.
void validate(const RunConfig& c) {
  require(c.data.num_points > 0, "data.num_points must be positive");
  require(c.data.sweeps > 0, "data.sweeps must be positive");
  require(c.data.doppler_min < c.data.doppler_max, "data.doppler_min must be below data.doppler_max");
  require(c.data.rcs_min < c.data.rcs_max, "data.rcs_min must be below data.rcs_max");
  require(c.vae.optimizer == "adam", "vae.optimizer: only 'adam' is supported");
  require(c.vae.scheduler == "steplr", "vae.scheduler: only 'steplr' is supported");
  require(c.vae.epochs > 0 && c.vae.batch_size_fg > 0 && c.vae.batch_size_bg > 0,
          "vae epochs and batch sizes must be positive");
  require(c.vae.lr > 0.0 && c.vae.gamma > 0.0 && c.vae.step_size > 0, "vae learning-rate settings must be positive");
  require(c.diffusion.optimizer == "adamw", "diffusion.optimizer: only 'adamw' is supported");
  require(c.diffusion.scheduler == "onecycle", "diffusion.scheduler: only 'onecycle' is supported");
  require(c.diffusion.beta_schedule == "linear", "diffusion.beta_schedule: only 'linear' is supported");
  require(c.diffusion.epochs > 0 && c.diffusion.batch_size_fg > 0 && c.diffusion.batch_size_bg > 0,
          "diffusion epochs and batch sizes must be positive");
  require(c.diffusion.lr > 0.0 && c.diffusion.weight_decay >= 0.0, "diffusion learning-rate settings are invalid");
  require(c.diffusion.cond_dropout >= 0.0 && c.diffusion.cond_dropout <= 1.0, "diffusion.cond_dropout must lie in [0, 1]");
  require(c.layout.objects >= 1, "layout.objects must be at least 1");
  require(c.layout.num_classes >= 1, "layout.num_classes must be at least 1");
  require(c.layout.size_max > 0.0 && c.layout.v_max > 0.0, "layout normalization constants must be positive");
  require(c.pillars.cell > 0.0 && c.pillars.max_points > 0 && c.pillars.max_tokens > 0, "pillar settings must be positive");
  require(c.metrics.grid_cells > 0, "metrics.grid_cells must be positive");
  require(c.augment.polar_sectors > 0, "augment.polar_sectors must be positive");
}

}  // namespace

radar::RangeSpec RunConfig::range() const {
  auto r = radar::RangeSpec::for_profile(data.profile);
  r.sweeps = data.sweeps;
  return r;
}

radar::FeatureRanges RunConfig::features() const {
  radar::FeatureRanges f;
  f.doppler = {data.doppler_min, data.doppler_max};
  f.rcs = {data.rcs_min, data.rcs_max};
  return f;
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::set<std::string> sections;
  for (const auto& f : fields()) sections.insert(f.section);

  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' outside a section");
    if (!sections.count(section)) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const Field* match = nullptr;
      for (const auto& f : fields())
        if (f.section == section && f.key == key) match = &f;
      if (!match) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
      try {
        match->set(cfg, value.data());
      } catch (const ConfigError& e) {
        throw ConfigError("config: " + section + "." + key + ": " + e.what());
      }
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string echo_config(const RunConfig& cfg) {
  std::string out, current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace radiff::cli
