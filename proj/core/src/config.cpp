#include "stgen/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stgen {

namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& path, const std::string& key) {
  throw ConfigError("unknown key '" + (path.empty() ? key : path + "." + key) + "'");
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
  if (!j.is_object()) throw ConfigError("expected an object at '" + path + "'");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) bad_key(path, key);
}

json parse_text(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + what);
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_text(buffer.str(), path.string());
}

ToyGrammarSpec grammar_from_json(const json& j) {
  check_keys(j, {"seed", "intents", "templates"}, "grammar");
  ToyGrammarSpec spec;
  spec.seed = j.value("seed", 0ull);
  if (!j.contains("intents") || !j.at("intents").is_array())
    throw ConfigError("grammar.intents must be an array");
  for (const auto& ij : j.at("intents")) {
    check_keys(ij, {"name", "slots"}, "grammar.intents[]");
    ToyIntentSpec intent;
    intent.name = ij.at("name").get<std::string>();
    for (const auto& sj : ij.value("slots", json::array())) {
      check_keys(sj, {"name", "values"}, "grammar.intents[].slots[]");
      ToySlotSpec slot;
      slot.name = sj.at("name").get<std::string>();
      for (const auto& v : sj.at("values")) slot.values.push_back(v.get<std::string>());
      intent.slots.push_back(std::move(slot));
    }
    spec.intents.push_back(std::move(intent));
  }
  if (!j.contains("templates") || !j.at("templates").is_object())
    throw ConfigError("grammar.templates must map intent combinations to pattern lists");
  for (const auto& [combo, patterns] : j.at("templates").items()) {
    std::vector<std::string> intents;
    std::string token;
    std::istringstream combo_stream(combo);
    while (std::getline(combo_stream, token, '@'))
      if (!token.empty()) intents.push_back(token);
    if (intents.empty()) throw ConfigError("grammar.templates has an empty combination key");
    if (!patterns.is_array()) throw ConfigError("grammar.templates['" + combo + "'] must be an array");
    for (const auto& p : patterns) spec.templates.push_back({intents, p.get<std::string>()});
  }
  validate_grammar(spec);
  return spec;
}

}  // namespace

ToyGrammarSpec parse_grammar(const std::string& text) { return grammar_from_json(parse_text(text, "grammar")); }

ToyGrammarSpec load_grammar_file(const std::filesystem::path& path) {
  return grammar_from_json(read_json_file(path));
}

RunConfig parse_run_config(const std::string& text) {
  const json j = parse_text(text, "run config");
  check_keys(j, {"seed", "output_dir", "parse_mode", "data", "toy", "model", "train", "selftrain"}, "");

  RunConfig config;
  config.seed = j.value("seed", 0ull);
  config.selftrain.seed = config.seed;
  config.output_dir = j.value("output_dir", std::string());
  if (j.contains("parse_mode")) {
    const std::string mode = j.at("parse_mode").get<std::string>();
    if (mode == "strict")
      config.parse_mode = ParseMode::Strict;
    else if (mode == "lenient")
      config.parse_mode = ParseMode::Lenient;
    else
      throw ConfigError("parse_mode must be 'strict' or 'lenient'");
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"train", "dev", "test", "unlabeled"}, "data");
    config.has_data = true;
    config.train_path = d.at("train").get<std::string>();
    config.dev_path = d.at("dev").get<std::string>();
    config.test_path = d.at("test").get<std::string>();
    config.unlabeled_path = d.at("unlabeled").get<std::string>();
  }

  if (j.contains("toy")) {
    const json& t = j.at("toy");
    check_keys(t, {"grammar", "n_train", "n_dev", "n_test", "n_unlabeled"}, "toy");
    config.has_toy = true;
    if (!t.contains("grammar") || (t.at("grammar").is_string() && t.at("grammar") == "default")) {
      config.grammar = default_toy_grammar();
    } else if (t.at("grammar").is_string()) {
      config.grammar = load_grammar_file(t.at("grammar").get<std::string>());
    } else {
      config.grammar = grammar_from_json(t.at("grammar"));
    }
    config.n_train = t.value("n_train", config.n_train);
    config.n_dev = t.value("n_dev", config.n_dev);
    config.n_test = t.value("n_test", config.n_test);
    config.n_unlabeled = t.value("n_unlabeled", config.n_unlabeled);
  }
  if (config.has_data && config.has_toy)
    throw ConfigError("config declares both 'data' and 'toy'; pick one source");

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"arch", "embed_dim", "hidden_dim", "layers", "max_positions", "dropout"}, "model");
    if (m.contains("arch")) config.arch.kind = parse_arch_kind(m.at("arch").get<std::string>());
    config.arch.embed_dim = m.value("embed_dim", config.arch.embed_dim);
    config.arch.hidden_dim = m.value("hidden_dim", config.arch.hidden_dim);
    config.arch.layers = m.value("layers", config.arch.layers);
    config.arch.max_positions = m.value("max_positions", config.arch.max_positions);
    config.arch.dropout_rate = m.value("dropout", config.arch.dropout_rate);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"warmup_epochs", "epochs_per_iteration", "lr", "batch_size", "weight_decay",
                   "gold_fraction"},
               "train");
    config.selftrain.warmup_epochs = t.value("warmup_epochs", config.selftrain.warmup_epochs);
    config.selftrain.epochs_per_iteration =
        t.value("epochs_per_iteration", config.selftrain.epochs_per_iteration);
    config.selftrain.lr = t.value("lr", config.selftrain.lr);
    config.selftrain.batch_size = t.value("batch_size", config.selftrain.batch_size);
    config.selftrain.weight_decay = t.value("weight_decay", config.selftrain.weight_decay);
    config.selftrain.gold_fraction = t.value("gold_fraction", config.selftrain.gold_fraction);
  }

  if (j.contains("selftrain")) {
    const json& s = j.at("selftrain");
    check_keys(s,
               {"iterations", "mc_samples", "aggregation_count", "nucleus_p", "trim_fraction", "strategy",
                "prefilter", "filter_enabled", "normalized_likelihood", "dev_k", "eval_k", "max_len",
                "threads"},
               "selftrain");
    config.selftrain.iterations = s.value("iterations", config.selftrain.iterations);
    config.selftrain.mc_samples = s.value("mc_samples", config.selftrain.mc_samples);
    config.selftrain.aggregation_count = s.value("aggregation_count", config.selftrain.aggregation_count);
    config.selftrain.nucleus_p = s.value("nucleus_p", config.selftrain.nucleus_p);
    config.selftrain.trim_fraction = s.value("trim_fraction", config.selftrain.trim_fraction);
    if (s.contains("strategy")) config.selftrain.strategy = parse_strategy(s.at("strategy").get<std::string>());
    config.selftrain.prefilter = s.value("prefilter", config.selftrain.prefilter);
    config.selftrain.filter_enabled = s.value("filter_enabled", config.selftrain.filter_enabled);
    config.selftrain.normalized_likelihood =
        s.value("normalized_likelihood", config.selftrain.normalized_likelihood);
    config.selftrain.dev_k = s.value("dev_k", config.selftrain.dev_k);
    config.selftrain.eval_k = s.value("eval_k", config.selftrain.eval_k);
    config.selftrain.max_len = s.value("max_len", config.selftrain.max_len);
    config.selftrain.threads = s.value("threads", config.selftrain.threads);
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_run_config(buffer.str());
}

DataSplit materialize_split(const RunConfig& config, LoadReport* report) {
  if (config.has_data)
    return load_split(config.train_path, config.dev_path, config.test_path, config.unlabeled_path,
                      config.parse_mode, report);
  if (config.has_toy)
    return synth_toy_corpus(config.grammar, config.n_train, config.n_dev, config.n_test, config.n_unlabeled);
  throw ConfigError("config declares neither 'data' nor 'toy'");
}

}  // namespace stgen
