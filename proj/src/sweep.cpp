#include "paid/sweep.hpp"

#include <fmt/format.h>

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "paid/errors.hpp"

namespace paid {

namespace {

const Json& axis(const Json& doc, const char* key) {
  const Json& a = doc.at(key);
  if (!a.is_array() || a.empty()) throw ConfigError(std::string("grid: ") + key + " must be a non-empty array");
  return a;
}

template <typename T>
std::vector<T> counts(const Json& doc, const char* key) {
  std::vector<T> out;
  const Json& a = axis(doc, key);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number_integer() || a[i].get<std::int64_t>() < 0)
      throw ConfigError(fmt::format("grid: {}[{}] must be a non-negative integer", key, i));
    out.push_back(a[i].get<T>());
  }
  return out;
}

std::vector<std::string> strings(const Json& doc, const char* key) {
  std::vector<std::string> out;
  const Json& a = axis(doc, key);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_string()) throw ConfigError(fmt::format("grid: {}[{}] must be a string", key, i));
    out.push_back(a[i].get<std::string>());
  }
  return out;
}

}  // namespace

SweepGrid parse_sweep_grid(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("grid: document must be an object");
  static const std::set<std::string> known{"r", "n_source", "batch_size", "mode", "selector", "seed"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("grid: unknown key " + it.key());
  SweepGrid g;
  if (doc.contains("r")) g.r = counts<std::size_t>(doc, "r");
  if (doc.contains("n_source")) g.n_source = counts<std::size_t>(doc, "n_source");
  if (doc.contains("batch_size")) g.batch_size = counts<std::size_t>(doc, "batch_size");
  if (doc.contains("seed")) g.seed = counts<std::uint64_t>(doc, "seed");
  if (doc.contains("mode"))
    for (const std::string& m : strings(doc, "mode")) g.mode.push_back(parse_update_mode(m));
  if (doc.contains("selector"))
    for (const std::string& s : strings(doc, "selector")) g.selector.push_back(LayerSelector::parse(s));
  return g;
}

SweepGrid load_sweep_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid " + path.string());
  try {
    return parse_sweep_grid(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("grid: " + path.string() + ": " + e.what());
  }
}

std::string SweepCell::name() const { return fmt::format("cell_{:04d}", index); }

ExperimentConfig SweepCell::apply(const ExperimentConfig& base) const {
  ExperimentConfig cfg = base;
  cfg.seeds = {seed};
  cfg.adapt.mode = mode;
  cfg.adapt.selector = selector;
  cfg.adapt.r = r;
  cfg.adapt.batch_size = batch_size;
  cfg.n_source = n_source;
  return cfg;
}

std::vector<SweepCell> expand_grid(const SweepGrid& grid, const ExperimentConfig& base) {
  auto or_base = [](const auto& v, auto fallback) {
    using T = typename std::decay_t<decltype(v)>::value_type;
    return v.empty() ? std::vector<T>{fallback} : v;
  };
  const auto seeds = or_base(grid.seed, base.seeds.front());
  const auto modes = or_base(grid.mode, base.adapt.mode);
  const auto selectors = or_base(grid.selector, base.adapt.selector);
  const auto sources = or_base(grid.n_source, base.n_source);
  const auto batches = or_base(grid.batch_size, base.adapt.batch_size);
  const auto rs = or_base(grid.r, base.adapt.r);
  std::vector<SweepCell> cells;
  for (std::uint64_t seed : seeds)
    for (UpdateMode mode : modes)
      for (const LayerSelector& sel : selectors)
        for (std::size_t ns : sources)
          for (std::size_t bs : batches)
            for (std::size_t r : rs) {
              SweepCell c{cells.size(), seed, mode, sel, r, ns, bs};
              c.apply(base).validate();
              cells.push_back(c);
            }
  return cells;
}

std::vector<SweepResult> run_sweep(const ExperimentConfig& base, const SweepGrid& grid,
                                   std::size_t workers) {
  const std::vector<SweepCell> cells = expand_grid(grid, base);
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());

  std::vector<std::uint64_t> seeds;
  for (const SweepCell& c : cells)
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);

  std::map<std::uint64_t, SourceSplit> splits;
  std::map<std::uint64_t, PretrainedModel> models;
  for (std::uint64_t s : seeds) splits.emplace(s, SourceSplit{});
  for (std::uint64_t s : seeds) models.emplace(s, PretrainedModel{});

  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto pool = [&](std::size_t n_jobs, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < n_jobs; i = next++) {
        {
          std::lock_guard lock(failure_mutex);
          if (failure) return;
        }
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < std::min(workers, n_jobs); ++t) threads.emplace_back(worker);
    worker();
    for (std::thread& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  };

  pool(seeds.size(), [&](std::size_t i) {
    const std::uint64_t s = seeds[i];
    ExperimentConfig cfg = base;
    cfg.seeds = {s};
    splits.at(s) = make_source(cfg, s);
    models.at(s) = pretrain_model(cfg, splits.at(s), s);
  });

  std::vector<SweepResult> results(cells.size());
  pool(cells.size(), [&](std::size_t i) {
    const SweepCell& c = cells[i];
    const ExperimentConfig cfg = c.apply(base);
    const PretrainedModel& pm = models.at(c.seed);
    AdaptRun run = run_adaptation(pm.net, splits.at(c.seed), cfg, c.seed);
    results[i] = {c, std::move(run.report), pm.result.clean_accuracy};
  });
  return results;
}

std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::string out =
      "cell,seed,mode,selector,r,n_source,batch_size,clean_accuracy,mean_error,final_delta_s\n";
  for (const SweepResult& r : results) {
    const SweepCell& c = r.cell;
    const double ds = r.report.segments.empty() ? 0.0 : r.report.segments.back().geometry.max_delta_s;
    const std::string err = r.report.mean_error ? fmt::format("{:.6f}", *r.report.mean_error) : "";
    out += fmt::format("{},{},{},{},{},{},{},{:.6f},{},{:.6e}\n", c.name(), c.seed, to_string(c.mode),
                       c.selector.to_string(), c.r, c.n_source, c.batch_size, r.clean_accuracy, err, ds);
  }
  return out;
}

}  // namespace paid
