#include "latcomp/config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include "latcomp/analytic_backend.hpp"
#include "latcomp/composite_backend.hpp"
#include "latcomp/errors.hpp"
#include "latcomp/toy_attention_backend.hpp"

namespace latcomp {
namespace {

using Value = std::variant<bool, std::int64_t, double, std::string>;

std::string type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "float";
    default: return "string";
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<Value(const RunConfig&)> get;
  std::function<void(RunConfig&, const Value&, const std::string& name)> set;
};

[[noreturn]] void type_error(const std::string& name, const char* expected, const Value& got) {
  throw ConfigError(std::string("expected ") + expected + ", got " + type_name(got), name);
}

double as_double(const Value& v, const std::string& name) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  type_error(name, "a number", v);
}

std::int64_t as_integer(const Value& v, const std::string& name) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  type_error(name, "an integer", v);
}

int as_int(const Value& v, const std::string& name) {
  const std::int64_t i = as_integer(v, name);
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
    throw ConfigError("integer out of range", name);
  }
  return static_cast<int>(i);
}

const std::string& as_string(const Value& v, const std::string& name) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  type_error(name, "a string", v);
}

// Field builders over a member accessor `ref(RunConfig&) -> T&`.
template <class Ref>
Field double_field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](const RunConfig& c) { return Value(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const Value& v, const std::string& n) { ref(c) = as_double(v, n); }};
}

template <class Ref>
Field int_field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](const RunConfig& c) { return Value(static_cast<std::int64_t>(ref(const_cast<RunConfig&>(c)))); },
          [ref](RunConfig& c, const Value& v, const std::string& n) { ref(c) = as_int(v, n); }};
}

template <class Ref>
Field seed_field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](const RunConfig& c) { return Value(static_cast<std::int64_t>(ref(const_cast<RunConfig&>(c)))); },
          [ref](RunConfig& c, const Value& v, const std::string& n) {
            const std::int64_t i = as_integer(v, n);
            if (i < 0) throw ConfigError("must be >= 0", n);
            ref(c) = static_cast<std::uint64_t>(i);
          }};
}

template <class Ref>
Field string_field(std::string section, std::string key, Ref ref) {
  return {std::move(section), std::move(key),
          [ref](const RunConfig& c) { return Value(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const Value& v, const std::string& n) { ref(c) = as_string(v, n); }};
}

void add_phase_fields(std::vector<Field>& out, const std::string& s, PhaseConfig RunConfig::*member,
                      bool with_steps) {
  auto phase = [member](RunConfig& c) -> PhaseConfig& { return c.*member; };
  if (with_steps) out.push_back(int_field(s, "steps", [phase](RunConfig& c) -> int& { return phase(c).steps; }));
  out.push_back(double_field(s, "learning_rate", [phase](RunConfig& c) -> double& { return phase(c).learning_rate; }));
  out.push_back(int_field(s, "t_min", [phase](RunConfig& c) -> int& { return phase(c).timesteps.t_min; }));
  out.push_back(int_field(s, "t_max", [phase](RunConfig& c) -> int& { return phase(c).timesteps.t_max; }));
  out.push_back(double_field(s, "cfg_weight", [phase](RunConfig& c) -> double& { return phase(c).cfg_weight; }));
  out.push_back(
      double_field(s, "lambda_per", [phase](RunConfig& c) -> double& { return phase(c).weights.lambda_per; }));
  out.push_back(
      double_field(s, "lambda_bak", [phase](RunConfig& c) -> double& { return phase(c).weights.lambda_bak; }));
  out.push_back(
      double_field(s, "lambda_for", [phase](RunConfig& c) -> double& { return phase(c).weights.lambda_for; }));
  out.push_back(double_field(s, "background_dds_scale",
                             [phase](RunConfig& c) -> double& { return phase(c).weights.background_dds_scale; }));
  out.push_back(
      double_field(s, "exclusion_threshold", [phase](RunConfig& c) -> double& { return phase(c).exclusion_threshold; }));
  out.push_back(int_field(s, "gate_step", [phase](RunConfig& c) -> int& { return phase(c).gate.step_threshold; }));
  out.push_back(int_field(s, "gate_layer", [phase](RunConfig& c) -> int& { return phase(c).gate.layer_threshold; }));
  out.push_back({s, "grad_mode", [phase](const RunConfig& c) { return Value(std::string(to_string(phase(const_cast<RunConfig&>(c)).grad_mode))); },
                 [phase](RunConfig& c, const Value& v, const std::string& n) {
                   const auto mode = parse_grad_mode(as_string(v, n));
                   if (!mode) throw ConfigError("expected \"difference\" or \"mse_backprop\"", n);
                   phase(c).grad_mode = *mode;
                 }});
  out.push_back(seed_field(s, "seed", [phase](RunConfig& c) -> std::uint64_t& { return phase(c).seed; }));
  out.push_back(string_field(s, "source_prompt", [phase](RunConfig& c) -> std::string& { return phase(c).source_prompt; }));
  out.push_back(string_field(s, "target_prompt", [phase](RunConfig& c) -> std::string& { return phase(c).target_prompt; }));

  // The late range is optional; late_steps = 0 disables it.
  out.push_back({s, "late_steps",
                 [phase](const RunConfig& c) {
                   const auto& late = phase(const_cast<RunConfig&>(c)).late;
                   return Value(static_cast<std::int64_t>(late ? late->final_steps : 0));
                 },
                 [phase](RunConfig& c, const Value& v, const std::string& n) {
                   const int steps = as_int(v, n);
                   auto& late = phase(c).late;
                   if (steps == 0) {
                     late.reset();
                     return;
                   }
                   if (steps < 0) throw ConfigError("must be >= 0", n);
                   if (!late) late = LateRange{};
                   late->final_steps = steps;
                 }});
  for (const bool upper : {false, true}) {
    out.push_back({s, upper ? "late_t_max" : "late_t_min",
                   [phase, upper](const RunConfig& c) {
                     const auto& late = phase(const_cast<RunConfig&>(c)).late;
                     const TimestepRange r = late ? late->range : LateRange{}.range;
                     return Value(static_cast<std::int64_t>(upper ? r.t_max : r.t_min));
                   },
                   [phase, upper](RunConfig& c, const Value& v, const std::string& n) {
                     const int t = as_int(v, n);
                     auto& late = phase(c).late;
                     if (!late) {
                       // Default bounds are accepted so that a dump of a config
                       // without a late range parses back unchanged.
                       const TimestepRange d = LateRange{}.range;
                       if (t != (upper ? d.t_max : d.t_min)) throw ConfigError("requires late_steps > 0", n);
                       return;
                     }
                     (upper ? late->range.t_max : late->range.t_min) = t;
                   }});
  }
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    const std::string b = "backend";
    f.push_back(string_field(b, "kind", [](RunConfig& c) -> std::string& { return c.backend.kind; }));
    f.push_back(double_field(b, "smoothness", [](RunConfig& c) -> double& { return c.backend.smoothness; }));
    f.push_back(seed_field(b, "seed", [](RunConfig& c) -> std::uint64_t& { return c.backend.seed; }));
    f.push_back(int_field(b, "layer_count", [](RunConfig& c) -> int& { return c.backend.layer_count; }));
    f.push_back(int_field(b, "dim", [](RunConfig& c) -> int& { return c.backend.dim; }));
    f.push_back(int_field(b, "max_tokens", [](RunConfig& c) -> int& { return c.backend.max_tokens; }));
    f.push_back(double_field(b, "gain", [](RunConfig& c) -> double& { return c.backend.gain; }));
    f.push_back(double_field(b, "attention_weight", [](RunConfig& c) -> double& { return c.backend.attention_weight; }));

    add_phase_fields(f, "removal", &RunConfig::removal, true);
    add_phase_fields(f, "harmonization", &RunConfig::harmonization, true);
    add_phase_fields(f, "composition", &RunConfig::composition, false);
    const std::string k = "composition";
    f.push_back(int_field(k, "steps_text", [](RunConfig& c) -> int& { return c.composition_extra.steps_text; }));
    f.push_back(int_field(k, "steps_sketch", [](RunConfig& c) -> int& { return c.composition_extra.steps_sketch; }));
    f.push_back({k, "condition",
                 [](const RunConfig& c) { return Value(std::string(to_string(c.composition_extra.condition))); },
                 [](RunConfig& c, const Value& v, const std::string& n) {
                   const auto kind = parse_condition_kind(as_string(v, n));
                   if (!kind) throw ConfigError("expected one of none, text, sketch, canny", n);
                   c.composition_extra.condition = *kind;
                 }});
    f.push_back(string_field(k, "source_condition",
                             [](RunConfig& c) -> std::string& { return c.composition_extra.source_condition; }));
    f.push_back(string_field(k, "target_condition",
                             [](RunConfig& c) -> std::string& { return c.composition_extra.target_condition; }));

    const std::string io = "io";
    f.push_back(int_field(io, "resolution", [](RunConfig& c) -> int& { return c.io.resolution; }));
    f.push_back(string_field(io, "output_dir", [](RunConfig& c) -> std::string& { return c.io.output_dir; }));
    f.push_back(string_field(io, "background", [](RunConfig& c) -> std::string& { return c.io.background; }));
    f.push_back(string_field(io, "background_mask", [](RunConfig& c) -> std::string& { return c.io.background_mask; }));
    f.push_back(string_field(io, "object", [](RunConfig& c) -> std::string& { return c.io.object; }));
    f.push_back(string_field(io, "object_mask", [](RunConfig& c) -> std::string& { return c.io.object_mask; }));
    f.push_back(string_field(io, "placement", [](RunConfig& c) -> std::string& { return c.io.placement; }));
    f.push_back(int_field(io, "offset_y", [](RunConfig& c) -> int& { return c.io.offset_y; }));
    f.push_back(int_field(io, "offset_x", [](RunConfig& c) -> int& { return c.io.offset_x; }));
    f.push_back(double_field(io, "scale", [](RunConfig& c) -> double& { return c.io.scale; }));
    return f;
  }();
  return table;
}

const Field* find_field(std::string_view section, std::string_view key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

bool is_section(std::string_view s) {
  return s == "backend" || s == "removal" || s == "harmonization" || s == "composition" || s == "io";
}

// --- lexical helpers ----------------------------------------------------------

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool bare_key(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
  }
  return true;
}

// Removes a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quote) {
      if (quote == '"' && ch == '\\') {
        ++i;
      } else if (ch == quote) {
        quote = 0;
      }
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
    } else if (ch == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::optional<std::string> parse_string(std::string_view s) {
  if (s.size() < 2) return std::nullopt;
  const char q = s.front();
  if ((q != '"' && q != '\'') || s.back() != q) return std::nullopt;
  const std::string_view body = s.substr(1, s.size() - 2);
  std::string out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char ch = body[i];
    if (ch == q) return std::nullopt;
    if (q == '"' && ch == '\\') {
      if (++i >= body.size()) return std::nullopt;
      switch (body[i]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        default: return std::nullopt;
      }
    } else {
      out += ch;
    }
  }
  return out;
}

std::optional<Value> parse_value(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s == "true") return Value(true);
  if (s == "false") return Value(false);
  if (s.front() == '"' || s.front() == '\'') {
    auto str = parse_string(s);
    if (!str) return std::nullopt;
    return Value(std::move(*str));
  }
  const std::string text(s);
  const bool looks_float = text.find_first_of(".eE") != std::string::npos;
  const char* begin = text.c_str();
  char* end = nullptr;
  errno = 0;
  if (!looks_float) {
    const long long i = std::strtoll(begin, &end, 10);
    if (end == begin || *end != '\0' || errno == ERANGE) return std::nullopt;
    return Value(static_cast<std::int64_t>(i));
  }
  const double d = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || errno == ERANGE || !std::isfinite(d)) return std::nullopt;
  // strtod accepts hex floats and "infinity"; only decimal notation is allowed.
  for (char ch : text) {
    if (!(std::isdigit(static_cast<unsigned char>(ch)) || ch == '.' || ch == 'e' || ch == 'E' || ch == '+' ||
          ch == '-')) {
      return std::nullopt;
    }
  }
  return Value(d);
}

std::string format_double(double v) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  std::string s(buf);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default: out += ch;
    }
  }
  return out + "\"";
}

std::string format_value(const Value& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) return format_double(*d);
  return quote(std::get<std::string>(v));
}

void assign(RunConfig& config, std::string_view section, std::string_view key, const Value& value) {
  const std::string name = std::string(section) + "." + std::string(key);
  const Field* f = find_field(section, key);
  if (f == nullptr) throw ConfigError("unknown key", name);
  f->set(config, value, name);
}

bool known_backend_kind(const std::string& kind) {
  return kind == "analytic" || kind == "toy-attention" || kind == "composite" ||
         (kind.rfind("adapter:", 0) == 0 && kind.size() > 8);
}

}  // namespace

PhaseConfig RunConfig::composition_phase() const {
  PhaseConfig p = composition;
  const bool image_condition = composition_extra.condition == ConditionKind::sketch ||
                               composition_extra.condition == ConditionKind::canny;
  p.steps = image_condition ? composition_extra.steps_sketch : composition_extra.steps_text;
  return p;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::set<std::string> seen_sections;
  std::set<std::string> seen_keys;
  std::map<std::string, Value> entries;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    const std::string_view line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header", where);
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (!is_section(name)) throw ConfigError("unknown section", name);
      if (!seen_sections.insert(name).second) throw ConfigError("section defined twice", name);
      section = name;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected key = value", where);
    const std::string key(trim(line.substr(0, eq)));
    if (!bare_key(key)) throw ConfigError("invalid key '" + key + "'", where);
    if (section.empty()) throw ConfigError("key outside of a section", key);
    const std::string name = section + "." + key;
    if (!seen_keys.insert(name).second) throw ConfigError("key defined twice", name);
    const auto value = parse_value(line.substr(eq + 1));
    if (!value) throw ConfigError("malformed value on " + where, name);
    if (find_field(section, key) == nullptr) throw ConfigError("unknown key", name);
    entries.emplace(name, *value);
  }
  // Table order, not file order, so dependent keys (late_steps before the
  // late bounds) work however the file is arranged.
  for (const auto& f : fields()) {
    const std::string name = f.section + "." + f.key;
    if (auto it = entries.find(name); it != entries.end()) f.set(config, it->second, name);
  }
  validate_config(config);
  return config;
}

RunConfig read_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  const std::string_view name = trim(assignment.substr(0, eq));
  const std::size_t dot = name.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos) {
    throw ConfigError("override must look like section.key=value", std::string(name));
  }
  const std::string_view raw = assignment.substr(eq + 1);
  auto value = parse_value(raw);
  if (!value) value = Value(std::string(raw));
  const std::string_view section = name.substr(0, dot);
  const std::string_view key = name.substr(dot + 1);
  // A bare word such as `difference` parses as nothing and becomes a string,
  // but a string-valued field given `7` should still accept the text.
  const Field* f = find_field(section, key);
  if (f != nullptr && std::holds_alternative<std::string>(f->get(config)) &&
      !std::holds_alternative<std::string>(*value)) {
    value = Value(std::string(trim(raw)));
  }
  assign(config, section, key, *value);
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + format_value(f.get(config)) + "\n";
  }
  return out;
}

void validate_config(const RunConfig& c) {
  const int t_max = 1000;
  if (!known_backend_kind(c.backend.kind)) {
    throw ConfigError("expected analytic, toy-attention, composite or adapter:<name>[:args]", "backend.kind");
  }
  if (!(c.backend.smoothness >= 0.0) || !std::isfinite(c.backend.smoothness)) {
    throw ConfigError("must be a finite value >= 0", "backend.smoothness");
  }
  if (c.backend.layer_count < 1) throw ConfigError("must be >= 1", "backend.layer_count");
  if (c.backend.dim < 1) throw ConfigError("must be >= 1", "backend.dim");
  if (c.backend.max_tokens < 1) throw ConfigError("must be >= 1", "backend.max_tokens");
  if (!std::isfinite(c.backend.gain)) throw ConfigError("must be finite", "backend.gain");
  if (!(c.backend.attention_weight >= 0.0) || !std::isfinite(c.backend.attention_weight)) {
    throw ConfigError("must be a finite value >= 0", "backend.attention_weight");
  }

  c.removal.validate(t_max, "removal");
  c.harmonization.validate(t_max, "harmonization");
  if (c.composition_extra.steps_text < 1) throw ConfigError("must be >= 1", "composition.steps_text");
  if (c.composition_extra.steps_sketch < 1) throw ConfigError("must be >= 1", "composition.steps_sketch");
  c.composition_phase().validate(t_max, "composition");
  const bool image_condition = c.composition_extra.condition == ConditionKind::sketch ||
                               c.composition_extra.condition == ConditionKind::canny;
  if (image_condition && c.composition_extra.source_condition.empty()) {
    throw ConfigError("required for sketch and canny conditions", "composition.source_condition");
  }
  if (image_condition && c.composition_extra.target_condition.empty()) {
    throw ConfigError("required for sketch and canny conditions", "composition.target_condition");
  }

  if (c.io.resolution < 1) throw ConfigError("must be >= 1", "io.resolution");
  if (c.io.placement != "bbox-fit" && c.io.placement != "explicit") {
    throw ConfigError("expected \"bbox-fit\" or \"explicit\"", "io.placement");
  }
  if (!(c.io.scale > 0.0) || !std::isfinite(c.io.scale)) throw ConfigError("must be > 0", "io.scale");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

std::string config_value(const RunConfig& config, std::string_view key) {
  const std::size_t dot = key.find('.');
  const Field* f = dot == std::string_view::npos ? nullptr : find_field(key.substr(0, dot), key.substr(dot + 1));
  if (f == nullptr) throw ConfigError("unknown key", std::string(key));
  return format_value(f->get(config));
}

BackendPtr make_backend(const BackendSettings& s) {
  if (s.kind.rfind("adapter:", 0) == 0) return load_adapter(std::string_view(s.kind).substr(8));

  auto analytic = [&] {
    AnalyticGaussianBackendConfig a;
    a.smoothness = s.smoothness;
    return make_analytic_backend(a);
  };
  auto toy = [&] {
    ToyAttentionBackendConfig t;
    t.seed = s.seed;
    t.layer_count = s.layer_count;
    t.dim = s.dim;
    t.max_tokens = s.max_tokens;
    t.gain = s.gain;
    return make_toy_attention_backend(t);
  };
  if (s.kind == "analytic") return analytic();
  if (s.kind == "toy-attention") return toy();
  if (s.kind == "composite") return make_composite_backend(analytic(), toy(), s.attention_weight);
  throw ConfigError("unknown backend '" + s.kind + "'", "backend.kind");
}

}  // namespace latcomp
