#include "coreecg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "coreecg/rng.hpp"

namespace coreecg {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key at " + path + "/" + it.key());
}

double num_at(const json& obj, const std::string& path, const char* key, double dflt) {
  if (!obj.contains(key)) return dflt;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(path + "/" + key + ": expected a number");
  return v.get<double>();
}

std::size_t uint_at(const json& obj, const std::string& path, const char* key,
                    std::size_t dflt) {
  if (!obj.contains(key)) return dflt;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned())
    throw ConfigError(path + "/" + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

bool bool_at(const json& obj, const std::string& path, const char* key, bool dflt) {
  if (!obj.contains(key)) return dflt;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(path + "/" + key + ": expected a boolean");
  return v.get<bool>();
}

std::string str_at(const json& obj, const std::string& path, const char* key,
                   const std::string& dflt) {
  if (!obj.contains(key)) return dflt;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(path + "/" + key + ": expected a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str(), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + origin + ": " + e.what());
  }
  reject_unknown(j, "", {"data", "model", "train", "fda", "stdm", "output_dir"});

  RunConfig rc;
  rc.output_dir = str_at(j, "", "output_dir", rc.output_dir);

  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, "/data", {"cache", "manifest", "data_ratio", "lead_subset"});
    rc.data.cache = str_at(d, "/data", "cache", "");
    rc.data.manifest = str_at(d, "/data", "manifest", "");
    rc.data.data_ratio = num_at(d, "/data", "data_ratio", 1.0);
    if (d.contains("lead_subset")) {
      if (!d["lead_subset"].is_array())
        throw ConfigError("/data/lead_subset: expected an array of lead indices");
      for (const auto& v : d["lead_subset"]) {
        if (!v.is_number_integer())
          throw ConfigError("/data/lead_subset: expected integer lead indices");
        rc.data.lead_subset.push_back(v.get<std::int64_t>());
      }
    }
  }

  if (j.contains("model")) {
    const auto& m = j["model"];
    reject_unknown(m, "/model",
                   {"toy_preset", "dim", "heads", "enc_layers", "latent_dec_layers",
                    "time_dec_layers", "patch_len", "n_leads", "n_patches", "proj_hidden",
                    "proj_out"});
    rc.toy_preset = bool_at(m, "/model", "toy_preset", false);
    if (rc.toy_preset) rc.model = ModelConfig::toy();
    rc.model.dim = uint_at(m, "/model", "dim", rc.model.dim);
    rc.model.heads = uint_at(m, "/model", "heads", rc.model.heads);
    rc.model.enc_layers = uint_at(m, "/model", "enc_layers", rc.model.enc_layers);
    rc.model.latent_dec_layers =
        uint_at(m, "/model", "latent_dec_layers", rc.model.latent_dec_layers);
    rc.model.time_dec_layers = uint_at(m, "/model", "time_dec_layers", rc.model.time_dec_layers);
    rc.model.patch_len = uint_at(m, "/model", "patch_len", rc.model.patch_len);
    rc.model.n_leads = uint_at(m, "/model", "n_leads", rc.model.n_leads);
    rc.model.n_patches = uint_at(m, "/model", "n_patches", rc.model.n_patches);
    rc.model.proj_hidden = uint_at(m, "/model", "proj_hidden", rc.model.proj_hidden);
    rc.model.proj_out = uint_at(m, "/model", "proj_out", rc.model.proj_out);
    rc.model.validate();
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, "/train",
                   {"epochs", "batch_size", "lr", "weight_decay", "warmup_epochs",
                    "ema_momentum", "tau", "alpha", "beta", "seed", "ablation", "deterministic",
                    "threads", "finetune_lr", "finetune_epochs", "finetune_warmup_epochs"});
    auto& tc = rc.train;
    tc.epochs = uint_at(t, "/train", "epochs", tc.epochs);
    tc.batch_size = uint_at(t, "/train", "batch_size", tc.batch_size);
    tc.lr = num_at(t, "/train", "lr", tc.lr);
    tc.weight_decay = num_at(t, "/train", "weight_decay", tc.weight_decay);
    tc.warmup_epochs = uint_at(t, "/train", "warmup_epochs", tc.warmup_epochs);
    tc.ema_momentum = num_at(t, "/train", "ema_momentum", tc.ema_momentum);
    tc.tau = num_at(t, "/train", "tau", tc.tau);
    tc.alpha = num_at(t, "/train", "alpha", tc.alpha);
    tc.beta = num_at(t, "/train", "beta", tc.beta);
    tc.seed = uint_at(t, "/train", "seed", 0);
    tc.deterministic = bool_at(t, "/train", "deterministic", tc.deterministic);
    tc.threads = static_cast<unsigned>(uint_at(t, "/train", "threads", 0));
    tc.finetune_lr = num_at(t, "/train", "finetune_lr", tc.finetune_lr);
    tc.finetune_epochs = uint_at(t, "/train", "finetune_epochs", tc.finetune_epochs);
    tc.finetune_warmup_epochs =
        uint_at(t, "/train", "finetune_warmup_epochs", tc.finetune_warmup_epochs);
    const std::string ab = str_at(t, "/train", "ablation", "core");
    if (ab == "core") tc.ablation = TrainConfig::Ablation::core;
    else if (ab == "contrastive_only") tc.ablation = TrainConfig::Ablation::contrastive_only;
    else if (ab == "reconstructive_only")
      tc.ablation = TrainConfig::Ablation::reconstructive_only;
    else
      throw ConfigError("/train/ablation: expected core|contrastive_only|reconstructive_only");
  }

  if (j.contains("fda")) {
    const auto& f = j["fda"];
    reject_unknown(f, "/fda", {"enabled", "epsilon"});
    rc.train.fda_enabled = bool_at(f, "/fda", "enabled", rc.train.fda_enabled);
    rc.train.fda_epsilon = num_at(f, "/fda", "epsilon", rc.train.fda_epsilon);
    if (rc.train.fda_epsilon <= 0) throw ConfigError("/fda/epsilon: must be positive");
  }

  if (j.contains("stdm")) {
    const auto& s = j["stdm"];
    reject_unknown(s, "/stdm", {"enabled", "p_time", "p_lead", "k", "uniform_mask_ratio"});
    rc.train.stdm_enabled = bool_at(s, "/stdm", "enabled", rc.train.stdm_enabled);
    rc.train.p_time = num_at(s, "/stdm", "p_time", rc.train.p_time);
    rc.train.p_lead = num_at(s, "/stdm", "p_lead", rc.train.p_lead);
    rc.train.k_visible = uint_at(s, "/stdm", "k", rc.train.k_visible);
    rc.train.uniform_mask_ratio =
        num_at(s, "/stdm", "uniform_mask_ratio", rc.train.uniform_mask_ratio);
    if (rc.train.p_time < 0 || rc.train.p_time > 1)
      throw ConfigError("/stdm/p_time: must be in [0,1]");
    if (rc.train.p_lead < 0 || rc.train.p_lead > 1)
      throw ConfigError("/stdm/p_lead: must be in [0,1]");
  }

  rc.train.data_ratio = rc.data.data_ratio;
  rc.train.lead_subset = rc.data.lead_subset;
  rc.config_hash = [&rc] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(rc.canonical_json())));
    return std::string(buf);
  }();
  rc.train.config_hash = rc.config_hash;
  return rc;
}

std::string RunConfig::canonical_json() const {
  json j;
  j["data"] = {{"cache", data.cache},
               {"manifest", data.manifest},
               {"data_ratio", data.data_ratio},
               {"lead_subset", data.lead_subset}};
  j["model"] = {{"dim", model.dim},
                {"heads", model.heads},
                {"enc_layers", model.enc_layers},
                {"latent_dec_layers", model.latent_dec_layers},
                {"time_dec_layers", model.time_dec_layers},
                {"patch_len", model.patch_len},
                {"n_leads", model.n_leads},
                {"n_patches", model.n_patches},
                {"proj_hidden", model.proj_hidden},
                {"proj_out", model.proj_out}};
  const char* ab = train.ablation == TrainConfig::Ablation::core
                       ? "core"
                       : (train.ablation == TrainConfig::Ablation::contrastive_only
                              ? "contrastive_only"
                              : "reconstructive_only");
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"weight_decay", train.weight_decay},
                {"warmup_epochs", train.warmup_epochs},
                {"ema_momentum", train.ema_momentum},
                {"tau", train.tau},
                {"alpha", train.alpha},
                {"beta", train.beta},
                {"seed", train.seed},
                {"ablation", ab},
                {"deterministic", train.deterministic},
                {"finetune_lr", train.finetune_lr},
                {"finetune_epochs", train.finetune_epochs},
                {"finetune_warmup_epochs", train.finetune_warmup_epochs}};
  j["fda"] = {{"enabled", train.fda_enabled}, {"epsilon", train.fda_epsilon}};
  j["stdm"] = {{"enabled", train.stdm_enabled},
               {"p_time", train.p_time},
               {"p_lead", train.p_lead},
               {"k", train.k_visible},
               {"uniform_mask_ratio", train.uniform_mask_ratio}};
  j["output_dir"] = output_dir;
  return j.dump();
}

}  // namespace coreecg
