#include "maaf/config.hpp"

#include <fstream>

namespace maaf {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void reject_unknown(const json& j, const std::string& section,
                    std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) {
      throw Error("config: unknown key \"" + it.key() + "\" in " + section);
    }
  }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "(root)", {"model", "pooling", "train", "data"});
  RunConfig cfg;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model",
                   {"d", "heads", "blocks", "ffn_width", "variant", "f",
                    "scale_scores", "layer_norm", "positional_encoding",
                    "dropout", "use_fine_tokens", "text_variant",
                    "image_size"});
    auto& f = cfg.model.fusion;
    get_to(m, "d", f.d);
    get_to(m, "heads", f.heads);
    get_to(m, "blocks", f.num_blocks);
    get_to(m, "ffn_width", f.ffn_width);
    if (m.contains("variant"))
      f.variant = fusion_variant_from_string(m.at("variant"));
    if (m.contains("f")) f.f = fkind_from_string(m.at("f"));
    get_to(m, "scale_scores", f.scale_scores);
    get_to(m, "layer_norm", f.layer_norm);
    get_to(m, "positional_encoding", f.positional_encoding);
    get_to(m, "dropout", f.dropout);
    get_to(m, "use_fine_tokens", cfg.model.use_fine_tokens);
    if (m.contains("text_variant"))
      cfg.model.text_variant = text_variant_from_string(m.at("text_variant"));
    get_to(m, "image_size", cfg.model.image_size);
  }

  if (j.contains("pooling")) {
    const auto& p = j.at("pooling");
    reject_unknown(p, "pooling", {"rp", "ita", "it"});
    get_to(p, "rp", cfg.model.pooling.rp);
    get_to(p, "ita", cfg.model.pooling.ita);
    get_to(p, "it", cfg.model.pooling.it);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train",
                   {"batch_size", "lr_image", "lr_other", "decay_steps",
                    "max_steps", "schedule", "warmup_steps",
                    "per_category_batching", "momentum", "seed",
                    "log_interval", "eval_interval"});
    get_to(t, "batch_size", cfg.train.batch_size);
    get_to(t, "lr_image", cfg.train.lr_image);
    get_to(t, "lr_other", cfg.train.lr_other);
    get_to(t, "decay_steps", cfg.train.decay_steps);
    get_to(t, "max_steps", cfg.train.max_steps);
    get_to(t, "schedule", cfg.train.schedule);
    get_to(t, "warmup_steps", cfg.train.warmup_steps);
    get_to(t, "per_category_batching", cfg.train.per_category_batching);
    get_to(t, "momentum", cfg.train.momentum);
    get_to(t, "seed", cfg.train.seed);
    get_to(t, "log_interval", cfg.train.log_interval);
    get_to(t, "eval_interval", cfg.train.eval_interval);
  }

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"train_manifest", "eval_manifest", "out_dir"});
    get_to(d, "train_manifest", cfg.data.train_manifest);
    get_to(d, "eval_manifest", cfg.data.eval_manifest);
    get_to(d, "out_dir", cfg.data.out_dir);
  }

  if (cfg.train.batch_size < 2) {
    throw Error("config: batch_size must be >= 2 (batch softmax degenerates)");
  }
  if (cfg.train.schedule != "standard" && cfg.train.schedule != "half" &&
      cfg.train.schedule != "half+warmup5000") {
    throw Error("config: unknown schedule \"" + cfg.train.schedule + "\"");
  }
  return cfg;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  const auto& f = cfg.model.fusion;
  j["model"] = {{"d", f.d},
                {"heads", f.heads},
                {"blocks", f.num_blocks},
                {"ffn_width", f.ffn_width},
                {"variant", to_string(f.variant)},
                {"f", to_string(f.f)},
                {"scale_scores", f.scale_scores},
                {"layer_norm", f.layer_norm},
                {"positional_encoding", f.positional_encoding},
                {"dropout", f.dropout},
                {"use_fine_tokens", cfg.model.use_fine_tokens},
                {"text_variant", to_string(cfg.model.text_variant)},
                {"image_size", cfg.model.image_size}};
  j["pooling"] = {{"rp", cfg.model.pooling.rp},
                  {"ita", cfg.model.pooling.ita},
                  {"it", cfg.model.pooling.it}};
  j["train"] = {{"batch_size", cfg.train.batch_size},
                {"lr_image", cfg.train.lr_image},
                {"lr_other", cfg.train.lr_other},
                {"decay_steps", cfg.train.decay_steps},
                {"max_steps", cfg.train.max_steps},
                {"schedule", cfg.train.schedule},
                {"warmup_steps", cfg.train.warmup_steps},
                {"per_category_batching", cfg.train.per_category_batching},
                {"momentum", cfg.train.momentum},
                {"seed", cfg.train.seed},
                {"log_interval", cfg.train.log_interval},
                {"eval_interval", cfg.train.eval_interval}};
  j["data"] = {{"train_manifest", cfg.data.train_manifest},
               {"eval_manifest", cfg.data.eval_manifest},
               {"out_dir", cfg.data.out_dir}};
  return j;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("config: parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(nlohmann::json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw Error("override must be key=value, got \"" + spec + "\"");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  nlohmann::json* cur = &j;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (dot == std::string::npos) {
      // parse as JSON when possible, else treat as string
      nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
      (*cur)[key] = v.is_discarded() ? nlohmann::json(value) : v;
      return;
    }
    cur = &(*cur)[key];
    pos = dot + 1;
  }
}

}  // namespace maaf
