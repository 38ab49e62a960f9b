#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "golden_run.hpp"
#include "paid/checkpoint.hpp"
#include "paid/diagnose.hpp"
#include "paid/errors.hpp"
#include "paid/experiment.hpp"
#include "paid/gradcheck.hpp"
#include "paid/report.hpp"
#include "paid/sweep.hpp"

namespace fs = std::filesystem;
using namespace paid;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("paid_tests_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(PAID_CLI_PATH) + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<Tensor> sample_tensors() {
  return {{"a", {2, 3}, {1, 2, 3, 4, 5, -6.5}}, {"b.bias", {3}, {0.1, 0.2, 0.3}}, {"empty", {0}, {}}};
}

std::string tiny_config() { return (golden::dir() / "tiny_config.json").string(); }

}  // namespace

TEST_CASE("checkpoint round trip") {
  const auto tensors = sample_tensors();
  const auto bytes = encode_checkpoint(tensors);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 8, kCheckpointMagic));
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].shape == tensors[i].shape);
    CHECK(back[i].values == tensors[i].values);
  }
  CHECK(encode_checkpoint(back) == bytes);

  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(dir / "x.ckpt", tensors);
  CHECK(read_file_bytes(dir / "x.ckpt") == bytes);
  CHECK(load_checkpoint(dir / "x.ckpt").size() == 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("checkpoint integrity checks") {
  const auto bytes = encode_checkpoint(sample_tensors());
  for (std::size_t i : {std::size_t{3}, std::size_t{20}, bytes.size() - 10, bytes.size() - 1}) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(bad), IoError);
  }
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 5)), IoError);
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(6)), IoError);

  // A different version with a valid CRC is still rejected.
  auto v2 = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 4);
  v2[8] = 2;
  const std::uint32_t crc = crc32_of(v2);
  for (int k = 0; k < 4; ++k) v2.push_back(static_cast<std::uint8_t>(crc >> (8 * k)));
  CHECK_THROWS_AS(decode_checkpoint(v2), IoError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), IoError);
}

TEST_CASE("crc32 matches the standard check value") {
  const std::string s = "123456789";
  CHECK(crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0xCBF43926u);
}

TEST_CASE("network checkpoints restore the model") {
  const ExperimentConfig cfg = golden::config();
  const Network a = build_model(cfg, 3);
  Network b = build_model(cfg, 4);
  b.import_tensors(decode_checkpoint(encode_checkpoint(a.export_tensors())));
  Network a2 = a;
  Rng rng(1);
  const Matrix x = rng_gaussian(rng, 5, cfg.recipe.input_dim());
  CHECK(b.forward_logits(x) == a2.forward_logits(x));
}

TEST_CASE("experiment config") {
  SUBCASE("unknown keys are named by path") {
    try {
      parse_experiment_config(Json::parse(R"({"adapt": {"lr": 0.1}})"));
      FAIL("accepted an unknown key");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("adapt.lr") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_experiment_config(Json::parse(R"({"colour": 1})")), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(Json::parse(R"({"mode": "lora"})")), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(Json::parse(R"({"adapt": {"r": -2}})")), ConfigError);
  }
  SUBCASE("round trip through JSON") {
    const ExperimentConfig cfg = golden::config();
    const Json doc = to_json(cfg);
    CHECK(to_json(parse_experiment_config(doc)) == doc);
    CHECK(cfg.model.dim == 16);
    CHECK(cfg.domain_sequence().domains.size() == 2);
    CHECK(cfg.domain_sequence().domains[0] == Corruption{CorruptionKind::Brightness, 3});
    CHECK(cfg.domain_sequence().domains[1] == Corruption{CorruptionKind::Blur, 2});
  }
  SUBCASE("seed override") {
    ExperimentConfig cfg = golden::config();
    apply_seed_override(cfg, nullptr);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3});
    apply_seed_override(cfg, "17");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{17});
    CHECK_THROWS_AS(apply_seed_override(cfg, "x1"), ConfigError);
  }
  SUBCASE("missing files are I/O errors") {
    CHECK_THROWS_AS(load_experiment_config("/nonexistent/cfg.json"), IoError);
  }
}

TEST_CASE("seed plan streams are distinct") {
  const SeedPlan p = seed_plan(1);
  const std::set<std::uint64_t> all{p.data, p.init, p.pretrain, p.stream, p.inject};
  CHECK(all.size() == 5);
  CHECK(seed_plan(1).stream == p.stream);
  CHECK(seed_plan(2).stream != p.stream);
}

TEST_CASE("golden reports") {
  const golden::Run run = golden::run(golden::config());
  const std::string csv = golden::csv(run);
  CHECK(csv.starts_with(std::string(kReportCsvHeader) + "\n"));
  CHECK(golden::matches("report.csv", csv));
  CHECK(golden::matches("report.json", golden::json(run)));
  // Rounds are reported 1-based.
  CHECK(csv.find(",1,") != std::string::npos);
}

TEST_CASE("diagnose") {
  const ExperimentConfig cfg = golden::config();
  const auto a = build_model(cfg, 3).export_tensors();
  const DiagnoseResult self = diagnose_tensors(a, a);
  CHECK(self.layers.size() == 6);
  CHECK(self.mean_delta_m == 0);
  CHECK(self.mean_delta_a <= 1e-15);
  CHECK(self.max_delta_s == 0);
  const auto b = build_model(cfg, 4).export_tensors();
  CHECK(diagnose_tensors(a, b).mean_delta_a > 0.1);
  CHECK(to_json(self).contains("layers"));
  std::vector<Tensor> missing(a.begin(), a.begin() + 2);
  CHECK_THROWS_AS(diagnose_tensors(a, missing), ConfigError);
}

TEST_CASE("sweep grid expansion") {
  const ExperimentConfig base = golden::config();
  const SweepGrid grid = parse_sweep_grid(Json::parse(R"({"r": [2, 4, 8, 12, 16, 24], "seed": [1, 2]})"));
  const auto cells = expand_grid(grid, base);
  REQUIRE(cells.size() == 12);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(cells[i].seed == 1);
    CHECK(cells[i + 6].seed == 2);
  }
  CHECK(cells[1].r == 4);
  CHECK(cells[11].name() == "cell_0011");
  CHECK(cells[2].apply(base).adapt.r == 8);
  CHECK(cells[2].apply(base).seeds == std::vector<std::uint64_t>{1});
  CHECK(cells[0].mode == base.adapt.mode);
  CHECK_THROWS_AS(parse_sweep_grid(Json::parse(R"({"rank": [2]})")), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid(Json::parse(R"({"r": []})")), ConfigError);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch_dir("cli");
  const std::string cfg = tiny_config();
  const std::string ckpt = (dir / "model.ckpt").string();

  CHECK(run_cli("pretrain --config " + cfg + " --out " + ckpt) == 0);
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".json"));

  const std::string report = (dir / "paid").string();
  CHECK(run_cli("adapt --ckpt " + ckpt + " --config " + cfg + " --report " + report + " --out-ckpt " +
                (dir / "adapted.ckpt").string()) == 0);
  CHECK(fs::exists(report + ".csv"));
  CHECK(fs::exists(report + ".json"));
  CHECK(run_cli("diagnose --ckpt-a " + ckpt + " --ckpt-b " + (dir / "adapted.ckpt").string() + " --out " +
                (dir / "geo.json").string()) == 0);
  const Json geo = Json::parse(read_text_file(dir / "geo.json"));
  CHECK(geo["max_delta_s"].get<double>() <= 1e-9);

  CHECK(run_cli("adapt --ckpt " + ckpt + " --config " + cfg + " --mode lora --report " + report) == 2);
  write_text_file(dir / "bad.json", R"({"adapt": {"lr": 1}})");
  CHECK(run_cli("pretrain --config " + (dir / "bad.json").string() + " --out " + ckpt) == 2);
  CHECK(run_cli("pretrain --config " + cfg + " --out " + (dir / "x.ckpt").string(), "PAID_SEED=abc") == 2);
  CHECK(run_cli("frobnicate") == 2);

  CHECK(run_cli("adapt --ckpt " + (dir / "none.ckpt").string() + " --config " + cfg + " --report " + report) == 4);
  auto bytes = read_file_bytes(ckpt);
  bytes[bytes.size() / 2] ^= 0x01;
  write_file_bytes(dir / "corrupt.ckpt", bytes);
  CHECK(run_cli("adapt --ckpt " + (dir / "corrupt.ckpt").string() + " --config " + cfg + " --report " + report) == 4);

  CHECK(run_cli("gradcheck --sizes 4") == 0);
  CHECK(run_cli("gradcheck --sizes 4 --inject-fault") == 3);

  fs::remove_all(dir.parent_path());
}

TEST_CASE("PAID_SEED reaches the run") {
  const fs::path dir = scratch_dir("seed");
  const std::string cfg = tiny_config();
  REQUIRE(run_cli("pretrain --config " + cfg + " --out " + (dir / "a.ckpt").string(), "PAID_SEED=8") == 0);
  const Json meta = Json::parse(read_text_file(dir / "a.ckpt.json"));
  CHECK(meta["seed"].get<std::uint64_t>() == 8);
  fs::remove_all(dir.parent_path());
}

TEST_CASE("gradcheck covers every reverse pass by name") {
  const auto entries = run_gradcheck({});
  CHECK(all_passed(entries));
  std::set<std::string> names;
  for (const GradcheckEntry& e : entries) names.insert(e.name);
  CHECK(names.count("householder.chain_grad.params") == 1);
  CHECK(names.count("adapt.alignment_loss") == 1);
  for (UpdateMode m : kAllModes) CHECK(names.count("paidlayer." + std::string(to_string(m)) + ".x") == 1);
  CHECK(names.count("paidlayer.paid.chain") == 1);
  bool nnmodel = false;
  for (const std::string& n : names) nnmodel = nnmodel || n.starts_with("nnmodel.");
  CHECK(nnmodel);

  GradcheckOptions broken;
  broken.inject_fault = true;
  CHECK(!all_passed(run_gradcheck(broken)));
}

TEST_CASE("diagnose separates structure-preserving and free updates") {
  ExperimentConfig cfg = golden::config();
  const SourceSplit split = make_source(cfg, 3);
  const PretrainedModel pm = pretrain_model(cfg, split, 3);
  const auto before = pm.net.export_tensors();
  cfg.adapt.mode = UpdateMode::Paid;
  const DiagnoseResult paid = diagnose_tensors(before, run_adaptation(pm.net, split, cfg, 3).adapted.export_tensors());
  cfg.adapt.mode = UpdateMode::MagDirFree;
  const DiagnoseResult free = diagnose_tensors(before, run_adaptation(pm.net, split, cfg, 3).adapted.export_tensors());
  CHECK(paid.max_delta_s <= 1e-9);
  CHECK(paid.mean_delta_a > 0);
  for (const TensorGeometry& g : free.layers) CHECK(g.delta_s > 0);
}

TEST_CASE("sweep runs one report per cell") {
  ExperimentConfig cfg = golden::config();
  cfg.rounds = 1;
  const SweepGrid grid = parse_sweep_grid(Json::parse(R"({"r": [2, 4], "mode": ["paid", "frozen"]})"));
  const auto results = run_sweep(cfg, grid, 1);
  REQUIRE(results.size() == 4);
  const auto again = run_sweep(cfg, grid, 2);
  for (std::size_t i = 0; i < results.size(); ++i) {
    CHECK(results[i].cell.index == i);
    CHECK(results[i].report.mean_error == again[i].report.mean_error);
    CHECK(report_csv(results[i].report) == report_csv(again[i].report));
  }
  // Frozen ignores r.
  std::vector<std::optional<double>> frozen;
  for (const SweepResult& r : results)
    if (r.cell.mode == UpdateMode::Frozen) frozen.push_back(r.report.mean_error);
  REQUIRE(frozen.size() == 2);
  CHECK(frozen[0] == frozen[1]);
  const std::string csv = sweep_csv(results);
  CHECK(csv.starts_with("cell,seed,mode,selector,r,n_source,batch_size,clean_accuracy,mean_error,final_delta_s\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
