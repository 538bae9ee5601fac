#include <algorithm>
#include <charconv>
#include <map>

#include "elpose/cli.hpp"
#include "elpose/errors.hpp"
#include "elpose/skeleton.hpp"

namespace elpose::cli {

namespace {

using json = nlohmann::json;

enum class Kind { kPath, kString, kInt, kNumber, kBool, kPathList, kIntList, kStringList };

struct Field {
  std::string_view name;
  Kind kind;
  bool required = false;
};

const std::map<std::string_view, std::vector<Field>>& schemas() {
  static const std::map<std::string_view, std::vector<Field>> table = {
      {"simulate",
       {{"output_dir", Kind::kPath, true},
        {"count", Kind::kInt},
        {"frames", Kind::kInt},
        {"noise_sigma", Kind::kNumber},
        {"links", Kind::kInt},
        {"link_length", Kind::kNumber},
        {"link_mass", Kind::kNumber},
        {"gravity", Kind::kNumber},
        {"fps", Kind::kNumber},
        {"substeps", Kind::kInt},
        {"max_angle", Kind::kNumber},
        {"max_rate", Kind::kNumber}}},
      {"train",
       {{"stage", Kind::kString, true},
        {"data_dir", Kind::kPath, true},
        {"output", Kind::kPath, true},
        {"lifter", Kind::kPath},
        {"resume", Kind::kPath},
        {"limit", Kind::kInt},
        {"epochs", Kind::kInt},
        {"batch_size", Kind::kInt},
        {"learning_rate", Kind::kNumber},
        {"weight_decay", Kind::kNumber},
        {"validation_fraction", Kind::kNumber},
        {"prompt_pairs", Kind::kInt},
        {"depth", Kind::kInt},
        {"embed_dim", Kind::kInt},
        {"heads", Kind::kInt},
        {"head_hidden", Kind::kInt},
        {"decoder_hidden", Kind::kInt},
        {"dt", Kind::kNumber},
        {"share_local_weights", Kind::kBool}}},
      {"refine",
       {{"lifter", Kind::kPath, true},
        {"physnet", Kind::kPath, true},
        {"output_dir", Kind::kPath, true},
        {"inputs", Kind::kPathList},
        {"data_dir", Kind::kPath},
        {"limit", Kind::kInt},
        {"prompt_pairs", Kind::kInt},
        {"noise_mode", Kind::kString}}},
      {"metrics",
       {{"predictions", Kind::kPathList, true},
        {"references", Kind::kPathList, true},
        {"output_csv", Kind::kPath, true},
        {"output_json", Kind::kPath, true},
        {"kind", Kind::kString},
        {"metrics", Kind::kStringList}}},
      {"heatmap",
       {{"inputs", Kind::kPathList, true},
        {"output_dir", Kind::kPath, true},
        {"width", Kind::kInt},
        {"height", Kind::kInt},
        {"sigma", Kind::kNumber},
        {"factors", Kind::kIntList}}},
  };
  return table;
}

bool matches(const json& v, Kind kind) {
  auto all = [&](auto pred) { return v.is_array() && std::all_of(v.begin(), v.end(), pred); };
  switch (kind) {
    case Kind::kPath:
    case Kind::kString:
      return v.is_string();
    case Kind::kInt:
      return v.is_number_integer();
    case Kind::kNumber:
      return v.is_number();
    case Kind::kBool:
      return v.is_boolean();
    case Kind::kPathList:
    case Kind::kStringList:
      return all([](const json& e) { return e.is_string(); });
    case Kind::kIntList:
      return all([](const json& e) { return e.is_number_integer(); });
  }
  return false;
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

std::uint64_t parse_seed(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError("'seed' must be a non-negative integer");
}

}  // namespace

RunConfig make_run_config(std::string_view command, const json& document,
                          const std::filesystem::path& base_dir,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  const auto it = schemas().find(command);
  if (it == schemas().end()) throw ConfigError("unknown command '" + std::string(command) + "'");
  if (!document.is_object()) throw ConfigError("config must be a JSON object");
  json values = document;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json parsed = json::parse(raw, nullptr, false);
    values[key] = parsed.is_discarded() ? json(raw) : parsed;
  }

  RunConfig config{std::string(command), json::object(), 0};
  if (values.contains("seed")) config.seed = parse_seed(values["seed"]);
  if (seed) config.seed = *seed;
  const auto& fields = it->second;
  for (const auto& [key, v] : values.items()) {
    if (key == "seed") continue;
    const auto f = std::find_if(fields.begin(), fields.end(), [&](const Field& x) { return x.name == key; });
    if (f == fields.end()) {
      throw ConfigError("unknown key '" + key + "' for command " + std::string(command));
    }
    if (!matches(v, f->kind)) throw ConfigError("key '" + key + "' has the wrong type");
    if (f->kind == Kind::kPath) {
      config.values[key] = resolve(base_dir, v.get<std::string>());
    } else if (f->kind == Kind::kPathList) {
      json list = json::array();
      for (const auto& e : v) list.push_back(resolve(base_dir, e.get<std::string>()));
      config.values[key] = std::move(list);
    } else {
      config.values[key] = v;
    }
  }
  for (const auto& f : fields) {
    if (f.required && !config.values.contains(std::string(f.name))) {
      throw ConfigError("missing required key '" + std::string(f.name) + "'");
    }
  }
  return config;
}

RunConfig load_run_config(std::string_view command, const std::filesystem::path& config_path,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
  std::string text;
  try {
    text = read_text_file(config_path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  const json document = json::parse(text, nullptr, false);
  if (document.is_discarded()) throw ConfigError("config " + config_path.string() + " is not valid JSON");
  const auto base = std::filesystem::absolute(config_path).parent_path();
  return make_run_config(command, document, base, overrides, seed);
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const MissingCheckpoint*>(&e)) return kExitMissingCheckpoint;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const ValueError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const LengthError*>(&e) || dynamic_cast<const DimError*>(&e) ||
      dynamic_cast<const TooShort*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const Error*>(&e)) return kExitOther;
  return kExitUnexpected;
}

}  // namespace elpose::cli
