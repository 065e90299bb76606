#include "padrec/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace padrec {

namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected an unsigned 64-bit integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = v.find(',', start);
    out.push_back(trim(v.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename F>
auto wrap(std::string_view key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

struct Key {
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<json(const RunConfig&)> get;
};

#define PADREC_SIZE(field) \
  [](RunConfig& c, std::string_view v) { c.field = to_size(#field, v); }, [](const RunConfig& c) { return json(c.field); }
#define PADREC_DOUBLE(field) \
  [](RunConfig& c, std::string_view v) { c.field = to_double(#field, v); }, [](const RunConfig& c) { return json(c.field); }
#define PADREC_PATH(field) \
  [](RunConfig& c, std::string_view v) { c.field = std::string(v); }, [](const RunConfig& c) { return json(c.field.string()); }

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"seed", "master seed; init/dropout/negatives/shuffle/synth streams derive from it",
                 [](RunConfig& c, std::string_view v) { c.train.seed = to_u64("seed", v); },
                 [](const RunConfig& c) { return json(c.train.seed); }});
    k.push_back({"threads", "evaluation worker threads", PADREC_SIZE(train.threads)});
    k.push_back({"precision", "f64 or f32 parameter storage",
                 [](RunConfig& c, std::string_view v) { c.train.precision = wrap("precision", [&] { return parse_precision(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.precision))); }});
    k.push_back({"run.dir", "artifact directory", PADREC_PATH(run_dir)});

    k.push_back({"data.interactions", "interaction TSV (user, item, timestamp, label)", PADREC_PATH(interactions)});
    k.push_back({"data.text_embeddings", "PADV1 text embedding file", PADREC_PATH(text_embeddings)});
    k.push_back({"data.text_index", "item id per embedding row", PADREC_PATH(text_index)});
    k.push_back({"data.min_interactions", "users with fewer positives are dropped", PADREC_SIZE(preprocess.min_interactions)});
    k.push_back({"data.max_len", "latest items kept per user (also the encoder length)", PADREC_SIZE(preprocess.max_len)});
    k.push_back({"data.missing_text", "strict (error) or zero_fill",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "strict") c.missing_text = MissingText::strict;
                   else if (v == "zero_fill") c.missing_text = MissingText::zero_fill;
                   else throw ConfigError("data.missing_text: expected strict or zero_fill, got '" + std::string(v) + "'");
                 },
                 [](const RunConfig& c) { return json(c.missing_text == MissingText::strict ? "strict" : "zero_fill"); }});

    k.push_back({"model.collab_dim", "collaborative embedding width d_c", PADREC_SIZE(model.collab_dim)});
    k.push_back({"model.text_dim", "text embedding width d_t (0: take from the file)", PADREC_SIZE(model.text_dim)});
    k.push_back({"model.mlp_hidden", "hidden width of the text projections", PADREC_SIZE(model.mlp_hidden)});
    k.push_back({"model.encoder", "attention or gru",
                 [](RunConfig& c, std::string_view v) { c.model.encoder.kind = wrap("model.encoder", [&] { return parse_encoder_kind(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.model.encoder.kind))); }});
    k.push_back({"model.layers", "encoder layers", PADREC_SIZE(model.encoder.layers)});
    k.push_back({"model.heads", "attention heads", PADREC_SIZE(model.encoder.heads)});
    k.push_back({"model.dropout", "encoder dropout rate", PADREC_DOUBLE(model.encoder.dropout)});
    k.push_back({"model.buckets", "frequency buckets B", PADREC_SIZE(model.buckets)});
    k.push_back({"model.bucket_dim", "bucket embedding width", PADREC_SIZE(model.bucket_dim)});
    k.push_back({"model.gate_hidden", "gate scorer hidden width", PADREC_SIZE(model.gate_hidden)});
    k.push_back({"model.embedding_std", "item embedding init standard deviation", PADREC_DOUBLE(model.embedding_std)});

    k.push_back({"train.batch_size", "users per batch", PADREC_SIZE(train.batch_size)});
    k.push_back({"train.lr", "AdamW learning rate", PADREC_DOUBLE(train.optimizer.lr)});
    k.push_back({"train.weight_decay", "decoupled weight decay", PADREC_DOUBLE(train.optimizer.weight_decay)});
    k.push_back({"train.gamma", "alignment loss weight", PADREC_DOUBLE(train.gamma)});
    k.push_back({"train.patience", "early-stop patience in epochs (validation nDCG@k)", PADREC_SIZE(train.patience)});
    k.push_back({"train.pretrain_epochs", "max epochs, phase 1", PADREC_SIZE(train.pretrain_epochs)});
    k.push_back({"train.align_epochs", "max epochs, phase 2", PADREC_SIZE(train.align_epochs)});
    k.push_back({"train.finetune_epochs", "max epochs, phase 3", PADREC_SIZE(train.finetune_epochs)});

    k.push_back({"align.variant", "none, non_anchored, rec_anchored or rec_anchored_frozen",
                 [](RunConfig& c, std::string_view v) { c.train.variant = wrap("align.variant", [&] { return parse_align_variant(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.variant))); }});
    k.push_back({"align.loss", "mmd or infonce",
                 [](RunConfig& c, std::string_view v) { c.train.align_loss = wrap("align.loss", [&] { return parse_align_loss(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.align_loss))); }});
    k.push_back({"align.estimator", "biased or unbiased MMD^2",
                 [](RunConfig& c, std::string_view v) { c.train.estimator = wrap("align.estimator", [&] { return parse_estimator(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.estimator))); }});
    k.push_back({"kernel.kind", "gaussian, laplacian, linear or cosine",
                 [](RunConfig& c, std::string_view v) { c.train.kernel = wrap("kernel.kind", [&] { return parse_kernel_kind(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.kernel))); }});
    k.push_back({"kernel.bandwidths", "kernel bandwidths sigma (gaussian/laplacian)",
                 [](RunConfig& c, std::string_view v) {
                   c.train.bandwidths.clear();
                   for (const auto& s : split_list(v)) c.train.bandwidths.push_back(to_double("kernel.bandwidths", s));
                 },
                 [](const RunConfig& c) { return json(c.train.bandwidths); }});
    k.push_back({"kernel.betas", "kernel weights (empty: all 1)",
                 [](RunConfig& c, std::string_view v) {
                   c.train.betas.clear();
                   for (const auto& s : split_list(v)) c.train.betas.push_back(to_double("kernel.betas", s));
                 },
                 [](const RunConfig& c) { return json(c.train.betas); }});
    k.push_back({"infonce.temperature", "InfoNCE temperature", PADREC_DOUBLE(train.temperature)});

    k.push_back({"finetune.experts", "subset of id, align, llm",
                 [](RunConfig& c, std::string_view v) {
                   c.train.experts.clear();
                   for (const auto& s : split_list(v)) c.train.experts.push_back(wrap("finetune.experts", [&] { return parse_expert(s); }));
                 },
                 [](const RunConfig& c) {
                   json a = json::array();
                   for (Expert e : c.train.experts) a.push_back(std::string(to_string(e)));
                   return a;
                 }});
    k.push_back({"finetune.gating", "frequency_aware or global_learned",
                 [](RunConfig& c, std::string_view v) { c.train.gating = wrap("finetune.gating", [&] { return parse_gating(v); }); },
                 [](const RunConfig& c) { return json(std::string(to_string(c.train.gating))); }});
    k.push_back({"eval.k", "cutoff for HR@k / nDCG@k", PADREC_SIZE(train.eval_k)});
    return k;
  }();
  return keys;
}

#undef PADREC_SIZE
#undef PADREC_DOUBLE
#undef PADREC_PATH

const Key& find_key(std::string_view key) {
  for (const Key& k : schema()) {
    if (k.name == key) return k;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string json_scalar_text(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_unsigned() || v.is_number_integer() || v.is_number_float()) return v.dump();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  throw ConfigError(key + ": unsupported JSON value " + v.dump());
}

void apply_json(RunConfig& config, const json& obj, const std::string& prefix) {
  for (const auto& [name, v] : obj.items()) {
    const std::string key = prefix.empty() ? name : prefix + "." + name;
    if (v.is_object()) {
      apply_json(config, v, key);
    } else if (v.is_array()) {
      std::string joined;
      for (std::size_t i = 0; i < v.size(); ++i) joined += (i ? "," : "") + json_scalar_text(key, v[i]);
      set_config_value(config, key, joined);
    } else {
      set_config_value(config, key, json_scalar_text(key, v));
    }
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    if (preprocess.min_interactions < 5) {
      // fewer than 5 leaves no behaviour before the training target
      throw ConfigError("data.min_interactions must be >= 5");
    }
    if (preprocess.max_len < 5) throw ConfigError("data.max_len must be >= 5");
    ModelConfig m = model;
    m.vocab = std::max<std::size_t>(m.vocab, 2);
    if (m.text_dim == 0) m.text_dim = 1;
    m.encoder.dim = m.collab_dim;
    m.encoder.max_len = preprocess.max_len;
    m.validate();
    if (!(model.embedding_std > 0)) throw ConfigError("model.embedding_std must be > 0");
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::vector<ConfigKeyInfo> config_keys() {
  std::vector<ConfigKeyInfo> out;
  for (const Key& k : schema()) out.push_back({k.name, k.doc});
  return out;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_key(key).set(config, trim(value));
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& source) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(source + ": invalid JSON: " + e.what());
    }
    try {
      apply_json(config, doc, "");
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": " + e.what());
    }
    return;
  }
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(config, trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_config_text(config, ss.str(), path.string());
  return config;
}

std::string resolved_config_json(const RunConfig& config) {
  std::map<std::string, json> sorted;
  for (const Key& k : schema()) sorted.emplace(k.name, k.get(config));
  json out = json::object();
  for (auto& [k, v] : sorted) out[k] = std::move(v);
  return out.dump(2);
}

}  // namespace padrec
