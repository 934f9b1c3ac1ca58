// coreecg: command-line driver for the self-supervised 12-lead ECG
// pretraining pipeline. Subcommands: gen, preprocess, pretrain, finetune,
// eval, sweep, augment, mask, gradcheck.
// Exit codes: 0 success, 1 usage/config, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "coreecg/config.hpp"
#include "coreecg/fda.hpp"
#include "coreecg/primitive.hpp"
#include "coreecg/signal.hpp"
#include "coreecg/trainer.hpp"

namespace fs = std::filesystem;
using namespace coreecg;

namespace {

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  return out;
}

void write_matrix_csv(const std::string& path, const double* data, std::size_t rows,
                      std::size_t cols) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  char buf[32];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", data[r * cols + c]);
      os << (c ? "," : "") << buf;
    }
    os << "\n";
  }
}

void write_mask_csv(const std::string& path, const std::vector<std::uint8_t>& m,
                    std::size_t rows, std::size_t cols) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << int(m[r * cols + c]);
    os << "\n";
  }
}

RecordFormat format_of(const std::string& path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? RecordFormat::csv
                                                                    : RecordFormat::cecg;
}

int cmd_gen(std::size_t n, std::uint64_t seed, const std::string& out_dir, double fs,
            double duration, const std::string& class_mix) {
  SynthParams sp;
  sp.n_records = n;
  sp.seed = seed;
  sp.fs = static_cast<float>(fs);
  sp.duration_s = duration;
  if (!class_mix.empty()) sp.class_mix = parse_list(class_mix);
  auto result = generate_synthetic(sp);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < result.records.size(); ++i) {
    const std::string path = out_dir + "/" + result.records[i].record_id + ".cecg";
    write_record(result.records[i], path, RecordFormat::cecg);
    result.manifest.entries[i].path = path;
  }
  result.manifest.save(out_dir + "/manifest.json");
  std::cout << "wrote " << result.records.size() << " records + manifest to " << out_dir
            << "\n";
  return 0;
}

int cmd_preprocess(const std::string& manifest_path, const std::string& out_cache,
                   std::uint64_t seed, const std::string& mode_flag) {
  auto manifest = DatasetManifest::load(manifest_path);
  DataCache cache;
  cache.class_names = manifest.class_names;
  cache.multilabel = manifest.multilabel;
  PipelineConfig pc;
  cache.C = 0;
  cache.T = pc.crop_len;
  std::size_t failures = 0, skipped = 0;
  for (const auto& entry : manifest.entries) {
    try {
      auto rec = read_record(entry.path, format_of(entry.path));
      if (rec.duration_s() < pc.window_s) {
        std::cerr << "skip " << entry.record_id << ": shorter than " << pc.window_s << " s\n";
        ++skipped;
        continue;
      }
      CropMode mode = entry.split == "train" ? CropMode::random : CropMode::center;
      if (mode_flag == "random") mode = CropMode::random;
      if (mode_flag == "center") mode = CropMode::center;
      auto crops = preprocess_record(rec, mode, derive_seed(seed, "pp", entry.record_id), pc);
      if (cache.C == 0) cache.C = rec.n_leads;
      for (const auto& crop : crops) {
        CachedSample s;
        s.record_id = crop.record_id;
        s.split = entry.split;
        s.label = entry.label;
        s.multi = entry.multi;
        s.crop_offset = crop.crop_offset;
        s.signal = crop.samples;
        cache.samples.push_back(std::move(s));
      }
    } catch (const std::exception& e) {
      std::cerr << "fail " << entry.record_id << ": " << e.what() << "\n";
      ++failures;
    }
  }
  if (cache.samples.empty()) throw DataError("preprocess: no usable records");
  cache.save(out_cache);
  std::cout << "cached " << cache.samples.size() << " crops (" << skipped << " skipped, "
            << failures << " failed) -> " << out_cache << "\n";
  return failures ? 2 : 0;
}

Model<float> model_from(const RunConfig& rc) { return Model<float>::build(rc.model, rc.train.seed); }

DataCache cache_from(const RunConfig& rc) {
  if (rc.data.cache.empty()) throw ConfigError("config: data.cache is required");
  return DataCache::load(rc.data.cache);
}

int cmd_pretrain(const std::string& config_path, const std::string& out_override) {
  auto rc = RunConfig::from_file(config_path);
  if (!out_override.empty()) rc.output_dir = out_override;
  auto cache = cache_from(rc);
  auto model = model_from(rc);
  fs::create_directories(rc.output_dir);
  std::ofstream log(rc.output_dir + "/pretrain_log.jsonl");
  auto out = pretrain(model, cache, rc.train, rc.output_dir + "/checkpoints", &log);
  nlohmann::json summary;
  summary["epochs"] = out.epoch_means.size();
  summary["final_l_rec"] = out.epoch_means.back().l_rec;
  summary["final_l_con"] = out.epoch_means.back().l_con;
  summary["last_checkpoint"] = out.last_checkpoint;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& checkpoint,
                 const std::string& out_override) {
  auto rc = RunConfig::from_file(config_path);
  if (!out_override.empty()) rc.output_dir = out_override;
  auto cache = cache_from(rc);
  auto model = model_from(rc);
  if (!checkpoint.empty())
    load_checkpoint_prefixes(model.params, checkpoint, {"student.enc.", "pos_embed"});
  model.add_classifier(cache.class_names.size(), derive_seed(rc.train.seed, "head"));
  fs::create_directories(rc.output_dir);
  std::ofstream log(rc.output_dir + "/finetune_log.jsonl");
  auto out = finetune(model, cache, rc.train, rc.output_dir, &log);
  nlohmann::json summary;
  summary["best_epoch"] = out.best_epoch;
  summary["best_val_acc"] = out.best_val_acc;
  summary["test"] = {{"acc", out.test.acc},
                     {"macro_f1", out.test.macro_f1},
                     {"macro_auroc", out.test.macro_auroc}};
  summary["checkpoint"] = out.best_checkpoint;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& split) {
  auto rc = RunConfig::from_file(config_path);
  auto cache = cache_from(rc);
  auto model = model_from(rc);
  model.add_classifier(cache.class_names.size(), derive_seed(rc.train.seed, "head"));
  load_checkpoint(model.params, checkpoint);
  auto rep = evaluate(model, cache, split, rc.train);
  nlohmann::json j;
  j["split"] = split;
  j["acc"] = rep.acc;
  j["macro_f1"] = rep.macro_f1;
  j["macro_auroc"] = rep.macro_auroc;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& p_times,
              const std::string& p_leads, const std::string& out_csv) {
  auto rc = RunConfig::from_file(config_path);
  auto cache = cache_from(rc);
  auto cells = sweep_masks<float>(rc.model, rc.train, cache, parse_list(p_times),
                                  parse_list(p_leads));
  std::ostringstream csv;
  csv << "p_time,p_lead,final_l_rec,acc,macro_f1,macro_auroc\n";
  char buf[160];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%g,%g,%.6g,%.6g,%.6g,%.6g\n", c.p_time, c.p_lead,
                  c.final_l_rec, c.test.acc, c.test.macro_f1, c.test.macro_auroc);
    csv << buf;
  }
  std::cout << csv.str();
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    os << csv.str();
  }
  return 0;
}

int cmd_augment(const std::string& input, const std::string& out_prefix, std::uint64_t seed,
                const std::string& checkpoint, const std::string& format) {
  auto rec = read_record(input, format_of(input));
  const std::size_t c = rec.n_leads, t = rec.n_samples;
  const std::size_t k = fftcore::rfft_bins(t);

  ParamStore<double> store;
  auto& w = store.add("fda.W", {c, k}, true);
  if (!checkpoint.empty()) load_checkpoint_prefixes(store, checkpoint, {"fda.W"});

  std::vector<double> sig(rec.samples.begin(), rec.samples.end());
  auto x = Tensor<double>::constant({c, t}, std::move(sig));
  FrequencyImportance<double> fi{Tensor<double>(w.shape, w.value)};
  auto noise = compute_fda_noise(fi.W, fi.epsilon, seed);
  auto aug = fda_augment(x, fi, noise, t);  // one patch spanning the crop

  EcgRecord out = rec;
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = static_cast<float>(aug.ptr()[i]);
  out.record_id = rec.record_id + "#aug";
  if (format == "csv")
    write_record(out, out_prefix + ".csv", RecordFormat::csv);
  else
    write_record(out, out_prefix + ".cecg", RecordFormat::cecg);

  std::vector<double> a(c * k);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = 1.0 / (1.0 + std::exp(-(*w.value)[i]));
  write_matrix_csv(out_prefix + "_importance.csv", a.data(), c, k);
  write_matrix_csv(out_prefix + "_noise_scale.csv", noise.lambda.data(), c, k);
  std::cout << "wrote " << out_prefix << (format == "csv" ? ".csv" : ".cecg")
            << " and importance/noise CSVs\n";
  return 0;
}

int cmd_mask(std::size_t c, std::size_t n, double p_time, double p_lead, std::size_t k,
             std::uint64_t seed, const std::string& out_prefix) {
  auto plan = sample_mask(c, n, p_time, p_lead, k, seed);
  write_mask_csv(out_prefix + "_V.csv", plan.V, c, n);
  write_mask_csv(out_prefix + "_M.csv", plan.M, c, n);
  write_mask_csv(out_prefix + "_D.csv", plan.D, c, n);
  std::cout << "visible=" << plan.count_visible() << " masked=" << plan.count_masked()
            << " dropped=" << plan.count_dropped() << "\n";
  return 0;
}

int cmd_gradcheck(double tol, std::size_t seeds) {
  bool ok = true;
  for (const auto& [kind, name] : prim_table()) {
    double worst = 0;
    for (std::uint64_t s = 0; s < seeds; ++s) {
      auto rep = grad_check(kind, default_gradcheck_shapes(kind), tol, s);
      worst = std::max(worst, rep.max_rel_err);
    }
    const bool pass = worst <= tol;
    ok = ok && pass;
    std::printf("%-18s max_rel_err=%.3e  %s\n", name, worst, pass ? "pass" : "FAIL");
  }
  if (!ok) throw NumericError("gradcheck: at least one primitive failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised 12-lead ECG pretraining (contrastive + reconstructive)"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic ECG dataset");
  std::size_t gen_n = 200;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  double gen_fs = 500.0, gen_dur = 10.0;
  std::string gen_mix;
  gen->add_option("--n", gen_n, "number of records");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--fs", gen_fs, "sampling rate in Hz");
  gen->add_option("--duration", gen_dur, "record duration in seconds");
  gen->add_option("--class-mix", gen_mix, "comma list of class probabilities (sums to 1)");

  // preprocess
  auto* pp = app.add_subcommand("preprocess", "filter/resample/crop/normalize into a cache");
  std::string pp_manifest, pp_out = "cache.bin", pp_mode = "auto";
  std::uint64_t pp_seed = 0;
  pp->add_option("--manifest", pp_manifest, "dataset manifest JSON")->required();
  pp->add_option("--out", pp_out, "output cache path");
  pp->add_option("--seed", pp_seed, "crop seed");
  pp->add_option("--mode", pp_mode, "crop mode: auto|random|center");

  // pretrain / finetune / eval / sweep
  auto* pt = app.add_subcommand("pretrain", "run self-supervised pretraining");
  std::string pt_config, pt_out;
  pt->add_option("--config", pt_config, "run config JSON")->required();
  pt->add_option("--out", pt_out, "override output_dir");

  auto* ft = app.add_subcommand("finetune", "fine-tune a classifier head");
  std::string ft_config, ft_ckpt, ft_out;
  ft->add_option("--config", ft_config, "run config JSON")->required();
  ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint (omit for random init)");
  ft->add_option("--out", ft_out, "override output_dir");

  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  std::string ev_config, ev_ckpt, ev_split = "test";
  ev->add_option("--config", ev_config, "run config JSON")->required();
  ev->add_option("--checkpoint", ev_ckpt, "fine-tuned checkpoint")->required();
  ev->add_option("--split", ev_split, "train|val|test");

  auto* sw = app.add_subcommand("sweep", "mask-rate sweep (pretrain+finetune per cell)");
  std::string sw_config, sw_pt = "0.5", sw_pl = "0.2", sw_out;
  sw->add_option("--config", sw_config, "run config JSON")->required();
  sw->add_option("--p-time", sw_pt, "comma list of time-mask rates");
  sw->add_option("--p-lead", sw_pl, "comma list of lead-drop rates");
  sw->add_option("--out", sw_out, "also write the CSV here");

  // augment / mask / gradcheck
  auto* ag = app.add_subcommand("augment", "frequency dynamic augmentation of one record");
  std::string ag_in, ag_out = "augmented", ag_ckpt, ag_fmt = "cecg";
  std::uint64_t ag_seed = 0;
  ag->add_option("--input", ag_in, "input record (.cecg or .csv)")->required();
  ag->add_option("--out", ag_out, "output prefix");
  ag->add_option("--seed", ag_seed, "noise seed");
  ag->add_option("--checkpoint", ag_ckpt, "checkpoint providing fda.W (default W=0)");
  ag->add_option("--format", ag_fmt, "output format: cecg|csv");

  auto* mk = app.add_subcommand("mask", "sample a spatio-temporal dual mask");
  std::size_t mk_c = 12, mk_n = 30, mk_k = 4;
  double mk_pt = 0.5, mk_pl = 0.2;
  std::uint64_t mk_seed = 0;
  std::string mk_out = "mask";
  mk->add_option("--c", mk_c, "leads");
  mk->add_option("--n", mk_n, "patches");
  mk->add_option("--p-time", mk_pt, "full temporal mask rate");
  mk->add_option("--p-lead", mk_pl, "lead drop rate");
  mk->add_option("--k", mk_k, "visible leads per partial column");
  mk->add_option("--seed", mk_seed, "plan seed");
  mk->add_option("--out", mk_out, "output prefix");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
  double gc_tol = 1e-4;
  std::size_t gc_seeds = 20;
  gc->add_option("--tol", gc_tol, "max relative error");
  gc->add_option("--seeds", gc_seeds, "random seeds per primitive");

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_gen(gen_n, gen_seed, gen_out, gen_fs, gen_dur, gen_mix);
    if (*pp) return cmd_preprocess(pp_manifest, pp_out, pp_seed, pp_mode);
    if (*pt) return cmd_pretrain(pt_config, pt_out);
    if (*ft) return cmd_finetune(ft_config, ft_ckpt, ft_out);
    if (*ev) return cmd_eval(ev_config, ev_ckpt, ev_split);
    if (*sw) return cmd_sweep(sw_config, sw_pt, sw_pl, sw_out);
    if (*ag) return cmd_augment(ag_in, ag_out, ag_seed, ag_ckpt, ag_fmt);
    if (*mk) return cmd_mask(mk_c, mk_n, mk_pt, mk_pl, mk_k, mk_seed, mk_out);
    if (*gc) return cmd_gradcheck(gc_tol, gc_seeds);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
