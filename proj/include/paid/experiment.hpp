#pragma once

// Experiment configuration (JSON) and the drivers shared by the CLI, the
// sweep runner and the acceptance suite.
//
// Config document, every key optional:
//
//   {
//     "model":    {"kind", "dim", "depth", "heads", "mlp_ratio", "tokens",
//                  "feature_depth", "init_std"},
//     "bench":    {"n_classes", "image_side", "n_train", "n_test",
//                  "bumps_per_class", "noise_std", "amplitude_jitter",
//                  "severity", "domains", "rounds", "n_source"},
//     "pretrain": {"epochs", "batch_size", "learning_rate", "weight_decay"},
//     "adapt":    {"learning_rate", "beta1", "beta2", "weight_decay", "lambda",
//                  "batch_size", "r", "warmup_steps", "warmup_lr_scale",
//                  "steps_per_batch", "allow_non_identity"},
//     "mode":     "paid",
//     "selector": "qkvom",
//     "seeds":    [1],
//     "output":   {"dir"}
//   }
//
// "domains" entries are kind names (using "severity") or
// {"kind": ..., "severity": ...}. The model's input size and class count
// come from "bench". Unknown keys are rejected with their path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "paid/adapt.hpp"
#include "paid/bench.hpp"
#include "paid/nnmodel.hpp"

namespace paid {

using Json = nlohmann::ordered_json;

struct ExperimentConfig {
  ModelConfig model;
  SourceRecipe recipe;
  int severity = 5;
  std::vector<Corruption> domains;  // empty: default_domain_sequence(severity)
  std::size_t rounds = 1;
  std::size_t n_source = 500;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";

  DomainSequence domain_sequence() const;
  // Throws ConfigError.
  void validate() const;
};

// Defaults of the desk-scale suite.
ExperimentConfig default_experiment_config();

// Throws ConfigError naming the offending path.
ExperimentConfig parse_experiment_config(const Json& doc);
// Throws IoError if unreadable, ConfigError if malformed.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
Json to_json(const ExperimentConfig& cfg);

// PAID_SEED=<n> replaces the seed list with {n}. Throws ConfigError on a
// malformed value. No-op for nullptr.
void apply_seed_override(ExperimentConfig& cfg, const char* value);

// Per-seed random streams.
struct SeedPlan {
  std::uint64_t data;
  std::uint64_t init;
  std::uint64_t pretrain;
  std::uint64_t stream;
  std::uint64_t inject;
};
SeedPlan seed_plan(std::uint64_t seed);

SourceSplit make_source(const ExperimentConfig& cfg, std::uint64_t seed);
ModelConfig resolved_model(const ExperimentConfig& cfg);
Network build_model(const ExperimentConfig& cfg, std::uint64_t seed);

struct PretrainedModel {
  Network net;
  PretrainResult result;
};
PretrainedModel pretrain_model(const ExperimentConfig& cfg, const SourceSplit& split,
                               std::uint64_t seed);

struct AdaptRun {
  AdaptReport report;
  Network adapted;
};
// Copies `pretrained`, injects per cfg.adapt, streams the corrupted test
// split. Source statistics come from the first n_source training samples.
AdaptRun run_adaptation(const Network& pretrained, const SourceSplit& split,
                        const ExperimentConfig& cfg, std::uint64_t seed,
                        const BatchHook& hook = {});

}  // namespace paid
