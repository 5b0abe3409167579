#pragma once

// A whole experiment in one versioned JSON document: model, sharing plan,
// adaptation, training recipe, task, data sizes, and output paths.  The
// document validates as a unit before any command touches it, and unknown
// keys anywhere are rejected.

#include "edgeformer/plan.hpp"
#include "edgeformer/train.hpp"

namespace edgeformer {

inline constexpr int kRunConfigSchema = 1;

struct RunConfig {
  int schema_version = kRunConfigSchema;
  ModelConfig model;
  std::string plan_preset = "edgeformer";
  json plan_custom = json::object();  // read when plan_preset == "custom"
  AdaptationSpec adaptation;
  TrainConfig train;
  TaskSpec task;
  int train_samples = 1024;
  int eval_samples = 128;
  std::string checkpoint_path = "model.efck";
  std::string metrics_path;  // empty writes metrics to stdout

  // Builds the plan as a side effect: a plan that cannot be built is the
  // main way a config document turns out to be incoherent.
  SharingPlan validate() const {
    if (schema_version != kRunConfigSchema)
      throw ConfigError("config.schema_version " + std::to_string(schema_version) +
                        " is not supported (expected " + std::to_string(kRunConfigSchema) + ")");
    model.validate();
    auto plan = build_plan(model, plan_preset, &plan_custom);
    adaptation.validate(model);
    train.validate();
    task.validate();
    if (task.vocab_size != model.vocab_size)
      throw ConfigError("task.vocab_size " + std::to_string(task.vocab_size) +
                        " must equal model.vocab_size " + std::to_string(model.vocab_size));
    const int worst_tgt = task.kind == TaskKind::SpanInfill
                              ? task.max_len + task.sentinels
                              : task.max_len;
    if (task.max_len + 1 > model.max_len || worst_tgt + 2 > model.max_len)
      throw ConfigError("task sequences up to " + std::to_string(worst_tgt) +
                        " tokens do not fit model.max_len " + std::to_string(model.max_len));
    if (train_samples < 1 || eval_samples < 1)
      throw ConfigError("train_samples and eval_samples must be positive");
    if (checkpoint_path.empty()) throw ConfigError("paths.checkpoint must not be empty");
    return plan;
  }
};

inline RunConfig run_config_from_json(const json& j) {
  require_object(j, "config");
  reject_unknown_keys(j,
                      {"schema_version", "model", "plan", "adaptation", "train", "task",
                       "train_samples", "eval_samples", "paths"},
                      "config");
  RunConfig c;
  c.schema_version = get_or(j, "schema_version", c.schema_version, "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("plan")) {
    const auto& p = j.at("plan");
    require_object(p, "config.plan");
    reject_unknown_keys(p, {"preset", "custom"}, "config.plan");
    c.plan_preset = get_or<std::string>(p, "preset", c.plan_preset, "config.plan");
    if (p.contains("custom")) c.plan_custom = p.at("custom");
  }
  if (j.contains("adaptation")) c.adaptation = adaptation_from_json(j.at("adaptation"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("task")) c.task = task_spec_from_json(j.at("task"));
  c.train_samples = get_or(j, "train_samples", c.train_samples, "config");
  c.eval_samples = get_or(j, "eval_samples", c.eval_samples, "config");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    require_object(p, "config.paths");
    reject_unknown_keys(p, {"checkpoint", "metrics"}, "config.paths");
    c.checkpoint_path = get_or<std::string>(p, "checkpoint", c.checkpoint_path, "config.paths");
    c.metrics_path = get_or<std::string>(p, "metrics", c.metrics_path, "config.paths");
  }
  c.validate();
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  json plan{{"preset", c.plan_preset}};
  if (c.plan_preset == "custom") plan["custom"] = c.plan_custom;
  return json{{"schema_version", c.schema_version},
              {"model", model_config_to_json(c.model)},
              {"plan", plan},
              {"adaptation", adaptation_to_json(c.adaptation)},
              {"train", train_config_to_json(c.train)},
              {"task", task_spec_to_json(c.task)},
              {"train_samples", c.train_samples},
              {"eval_samples", c.eval_samples},
              {"paths", json{{"checkpoint", c.checkpoint_path}, {"metrics", c.metrics_path}}}};
}

}  // namespace edgeformer
