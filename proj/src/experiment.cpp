#include "paid/experiment.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <string>

#include "paid/errors.hpp"

namespace paid {

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads keys out of one JSON object and rejects whatever is left.
class Fields {
 public:
  Fields(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError("config: " + join(path_, key) + " must be a number");
      out = v->get<double>();
    }
  }

  void count(const std::string& key, std::size_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
        throw ConfigError("config: " + join(path_, key) + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void integer(const std::string& key, int& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError("config: " + join(path_, key) + " must be an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("config: " + join(path_, key) + " must be a boolean");
      out = v->get<bool>();
    }
  }

  std::optional<std::string> string(const std::string& key) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("config: " + join(path_, key) + " must be a string");
      return v->get<std::string>();
    }
    return std::nullopt;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + join(path_, it.key()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "document" : path_; }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

// Rethrows a library error with the config path attached.
template <typename F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

void parse_model(const Json& j, ModelConfig& m) {
  Fields f(j, "model");
  if (auto kind = f.string("kind")) m.kind = at_path("model.kind", [&] { return parse_model_kind(*kind); });
  f.count("dim", m.dim);
  f.count("depth", m.depth);
  f.count("heads", m.heads);
  f.number("mlp_ratio", m.mlp_ratio);
  f.count("tokens", m.tokens);
  f.count("feature_depth", m.feature_depth);
  f.number("init_std", m.init_std);
  f.finish();
}

void parse_bench(const Json& j, ExperimentConfig& cfg) {
  Fields f(j, "bench");
  SourceRecipe& r = cfg.recipe;
  f.count("n_classes", r.n_classes);
  f.count("image_side", r.image_side);
  f.count("n_train", r.n_train);
  f.count("n_test", r.n_test);
  f.count("bumps_per_class", r.bumps_per_class);
  f.number("noise_std", r.noise_std);
  f.number("amplitude_jitter", r.amplitude_jitter);
  f.integer("severity", cfg.severity);
  f.count("rounds", cfg.rounds);
  f.count("n_source", cfg.n_source);
  if (const Json* d = f.find("domains")) {
    if (!d->is_array()) throw ConfigError("config: bench.domains must be an array");
    cfg.domains.clear();
    for (std::size_t i = 0; i < d->size(); ++i) {
      const std::string p = "bench.domains[" + std::to_string(i) + "]";
      const Json& e = (*d)[i];
      Corruption c{CorruptionKind::GaussianNoise, -1};
      if (e.is_string()) {
        c.kind = at_path(p, [&] { return parse_corruption_kind(e.get<std::string>()); });
      } else if (e.is_object()) {
        Fields ef(e, p);
        auto kind = ef.string("kind");
        if (!kind) throw ConfigError("config: " + p + ".kind is required");
        c.kind = at_path(p + ".kind", [&] { return parse_corruption_kind(*kind); });
        ef.integer("severity", c.severity);
        ef.finish();
      } else {
        throw ConfigError("config: " + p + " must be a kind name or an object");
      }
      cfg.domains.push_back(c);
    }
  }
  f.finish();
  // Entries without an explicit severity use bench.severity.
  for (Corruption& c : cfg.domains)
    if (c.severity < 0) c.severity = cfg.severity;
}

void parse_pretrain(const Json& j, PretrainConfig& p) {
  Fields f(j, "pretrain");
  f.count("epochs", p.epochs);
  f.count("batch_size", p.batch_size);
  f.number("learning_rate", p.learning_rate);
  f.number("weight_decay", p.weight_decay);
  f.finish();
}

void parse_adapt(const Json& j, AdaptConfig& a) {
  Fields f(j, "adapt");
  f.number("learning_rate", a.learning_rate);
  f.number("beta1", a.beta1);
  f.number("beta2", a.beta2);
  f.number("weight_decay", a.weight_decay);
  f.number("lambda", a.lambda);
  f.count("batch_size", a.batch_size);
  f.count("r", a.r);
  f.count("warmup_steps", a.warmup_steps);
  f.number("warmup_lr_scale", a.warmup_lr_scale);
  f.count("steps_per_batch", a.steps_per_batch);
  f.boolean("allow_non_identity", a.allow_non_identity);
  f.finish();
}

std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc{} || p != end)
    throw ConfigError("PAID_SEED must be a non-negative integer, got '" + text + "'");
  return v;
}

}  // namespace

DomainSequence ExperimentConfig::domain_sequence() const {
  DomainSequence seq = domains.empty() ? default_domain_sequence(severity, rounds)
                                       : DomainSequence{domains, rounds};
  seq.rounds = rounds;
  return seq;
}

void ExperimentConfig::validate() const {
  recipe.validate();
  resolved_model(*this).validate();
  adapt.validate();
  if (severity < 0 || severity > 5) throw ConfigError("config: bench.severity outside 0..5");
  for (const Corruption& c : domains) corruption_parameter(c.kind, c.severity);
  if (rounds == 0) throw ConfigError("config: bench.rounds must be >= 1");
  if (n_source < 2) throw ConfigError("config: bench.n_source must be >= 2");
  if (n_source > recipe.n_train) throw ConfigError("config: bench.n_source exceeds bench.n_train");
  if (pretrain.batch_size == 0) throw ConfigError("config: pretrain.batch_size must be >= 1");
  if (!(pretrain.learning_rate > 0.0)) throw ConfigError("config: pretrain.learning_rate must be > 0");
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (output_dir.empty()) throw ConfigError("config: output.dir must not be empty");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.recipe.n_test = 3000;
  cfg.adapt.learning_rate = 2e-4;
  return cfg;
}

ExperimentConfig parse_experiment_config(const Json& doc) {
  ExperimentConfig cfg = default_experiment_config();
  Fields f(doc, "");
  if (const Json* m = f.find("model")) parse_model(*m, cfg.model);
  if (const Json* b = f.find("bench")) parse_bench(*b, cfg);
  if (const Json* p = f.find("pretrain")) parse_pretrain(*p, cfg.pretrain);
  if (const Json* a = f.find("adapt")) parse_adapt(*a, cfg.adapt);
  if (auto mode = f.string("mode")) cfg.adapt.mode = at_path("mode", [&] { return parse_update_mode(*mode); });
  if (auto sel = f.string("selector")) cfg.adapt.selector = at_path("selector", [&] { return LayerSelector::parse(*sel); });
  if (const Json* s = f.find("seeds")) {
    if (!s->is_array()) throw ConfigError("config: seeds must be an array");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < s->size(); ++i) {
      const Json& e = (*s)[i];
      if (!e.is_number_integer() || e.get<std::int64_t>() < 0)
        throw ConfigError("config: seeds[" + std::to_string(i) + "] must be a non-negative integer");
      cfg.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  if (const Json* o = f.find("output")) {
    Fields of(*o, "output");
    if (auto dir = of.string("dir")) cfg.output_dir = *dir;
    of.finish();
  }
  f.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(doc);
}

Json to_json(const ExperimentConfig& cfg) {
  Json domains = Json::array();
  for (const Corruption& c : cfg.domain_sequence().domains)
    domains.push_back({{"kind", c.name()}, {"severity", c.severity}});
  const ModelConfig& m = cfg.model;
  const SourceRecipe& r = cfg.recipe;
  const AdaptConfig& a = cfg.adapt;
  return Json{
      {"model",
       {{"kind", std::string(to_string(m.kind))},
        {"dim", m.dim},
        {"depth", m.depth},
        {"heads", m.heads},
        {"mlp_ratio", m.mlp_ratio},
        {"tokens", m.tokens},
        {"feature_depth", m.feature_depth},
        {"init_std", m.init_std}}},
      {"bench",
       {{"n_classes", r.n_classes},
        {"image_side", r.image_side},
        {"n_train", r.n_train},
        {"n_test", r.n_test},
        {"bumps_per_class", r.bumps_per_class},
        {"noise_std", r.noise_std},
        {"amplitude_jitter", r.amplitude_jitter},
        {"severity", cfg.severity},
        {"domains", domains},
        {"rounds", cfg.rounds},
        {"n_source", cfg.n_source}}},
      {"pretrain",
       {{"epochs", cfg.pretrain.epochs},
        {"batch_size", cfg.pretrain.batch_size},
        {"learning_rate", cfg.pretrain.learning_rate},
        {"weight_decay", cfg.pretrain.weight_decay}}},
      {"adapt",
       {{"learning_rate", a.learning_rate},
        {"beta1", a.beta1},
        {"beta2", a.beta2},
        {"weight_decay", a.weight_decay},
        {"lambda", a.lambda},
        {"batch_size", a.batch_size},
        {"r", a.r},
        {"warmup_steps", a.warmup_steps},
        {"warmup_lr_scale", a.warmup_lr_scale},
        {"steps_per_batch", a.steps_per_batch},
        {"allow_non_identity", a.allow_non_identity}}},
      {"mode", std::string(to_string(a.mode))},
      {"selector", a.selector.to_string()},
      {"seeds", cfg.seeds},
      {"output", {{"dir", cfg.output_dir}}},
  };
}

void apply_seed_override(ExperimentConfig& cfg, const char* value) {
  if (value == nullptr) return;
  cfg.seeds = {parse_seed(value)};
}

SeedPlan seed_plan(std::uint64_t seed) {
  const Rng root(seed);
  return {seed, root.fork(11).next_u64(), root.fork(12).next_u64(), root.fork(13).next_u64(),
          root.fork(14).next_u64()};
}

SourceSplit make_source(const ExperimentConfig& cfg, std::uint64_t seed) {
  return generate_source(seed_plan(seed).data, cfg.recipe);
}

ModelConfig resolved_model(const ExperimentConfig& cfg) {
  ModelConfig m = cfg.model;
  m.input_dim = cfg.recipe.input_dim();
  m.n_classes = cfg.recipe.n_classes;
  return m;
}

Network build_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng rng(seed_plan(seed).init);
  return Network::build(resolved_model(cfg), rng);
}

PretrainedModel pretrain_model(const ExperimentConfig& cfg, const SourceSplit& split,
                               std::uint64_t seed) {
  PretrainedModel out{build_model(cfg, seed), {}};
  PretrainConfig pc = cfg.pretrain;
  pc.seed = seed_plan(seed).pretrain;
  out.result = pretrain_source(out.net, split.train, split.test, pc);
  return out;
}

AdaptRun run_adaptation(const Network& pretrained, const SourceSplit& split,
                        const ExperimentConfig& cfg, std::uint64_t seed, const BatchHook& hook) {
  cfg.adapt.validate();
  if (cfg.n_source > split.train.size()) throw ConfigError("run_adaptation: n_source exceeds the training split");
  const SeedPlan plan = seed_plan(seed);
  AdaptRun run{{}, pretrained};
  const SourceStats stats = compute_source_stats(run.adapted, split.train.head(cfg.n_source).samples);
  Rng inject_rng(plan.inject);
  run.adapted.inject_paid(cfg.adapt.selector, cfg.adapt.mode, cfg.adapt.r, inject_rng,
                          cfg.adapt.allow_non_identity);
  const DomainStream stream(split.test, cfg.domain_sequence(), cfg.adapt.batch_size, plan.stream,
                            cfg.recipe.image_side);
  AdaptConfig ac = cfg.adapt;
  ac.seed = seed;
  run.report = run_ctta(run.adapted, stream, stats, ac, hook);
  return run;
}

}  // namespace paid
