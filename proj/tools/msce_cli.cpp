// tools/msce_cli.cpp

// Copyright 2026  The msce-scr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// msce: command-line front end. Every subcommand takes --seed and --config;
// a --config file is a JSON object whose keys are long option names
// (without the dashes). Values given on the command line win.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msce/decoder.hpp"
#include "msce/eval.hpp"
#include "msce/graph.hpp"
#include "msce/train.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

int g_verbose = 1;

void log_line(const std::string &msg) {
  if (g_verbose > 0) std::cerr << "msce: " << msg << std::endl;
}

// JSON reader for CLI11. Top-level scalar keys are attached to the
// subcommand that was selected on the command line; nested objects name
// the subcommand explicitly.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App *root) : root_(root) {}

  std::string to_config(const CLI::App *app, bool default_also, bool,
                        std::string) const override {
    json j = json::object();
    for (const CLI::Option *opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto &res = opt->results();
        j[name] = res.size() == 1 ? json(res.front()) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream &input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception &e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    for (const CLI::App *sub : root_->get_subcommands()) parents.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    flatten(j, parents, items);
    return items;
  }

 private:
  static std::string scalar(const json &v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  void flatten(const json &obj, const std::vector<std::string> &parents,
               std::vector<CLI::ConfigItem> &items) const {
    for (const auto &[key, value] : obj.items()) {
      if (value.is_object()) {
        if (root_->get_subcommand_no_throw(key) == nullptr) continue;
        if (parents.empty() || parents.front() == key) flatten(value, {key}, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto &v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
  }

  const CLI::App *root_;
};

struct CommandSetArgs {
  std::string commands, lexicon;
  int states_per_phone = 5;

  void add(CLI::App *app) {
    app->add_option("--commands", commands, "command list, one command per line")->required();
    app->add_option("--lexicon", lexicon, "pronunciation lexicon")->required();
    app->add_option("--states-per-phone", states_per_phone, "emission states per phone")
        ->capture_default_str();
  }
  msce::CommandSet load() const {
    return msce::load_command_set(commands, lexicon, states_per_phone);
  }
};

struct DecoderArgs {
  msce::DecoderConfig cfg;
  bool no_blank_absorb = false;

  void add(CLI::App *app, bool with_threshold) {
    if (with_threshold)
      app->add_option("--threshold", cfg.trigger_threshold, "trigger threshold on the average score")
          ->capture_default_str();
    app->add_option("--beam", cfg.beam, "beam width in log-score units")->capture_default_str();
    app->add_option("--max-tokens", cfg.max_tokens, "token cap per frame")->capture_default_str();
    app->add_flag("--no-blank-absorb", no_blank_absorb, "score self-loops with the state only");
  }
  msce::DecoderConfig get() const {
    msce::DecoderConfig c = cfg;
    c.blank_absorb = !no_blank_absorb;
    return c;
  }
};

void write_text(const std::string &path, const std::string &text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw msce::IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw msce::IoError("write failed for '" + path + "'");
}

void check_manifest(const msce::Manifest &m, const msce::CommandSet &cs) {
  if (m.header.phone_inventory_hash != cs.inventory_hash() ||
      m.header.states_per_phone != cs.states_per_phone)
    throw msce::ConfigError("manifest was generated for a different phone inventory or state layout");
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string fmt(const std::optional<double> &v, int prec = 4) {
  return v ? fmt(*v, prec) : "undefined";
}

// ---------------------------------------------------------------------------

struct BuildGraphCmd {
  CommandSetArgs cs;
  std::string out;

  void add(CLI::App *app) {
    cs.add(app);
    app->add_option("--out", out, "graph dump path; stats go to <out>.stats.json")->required();
  }
  int run() const {
    const auto set = cs.load();
    const auto g = msce::build_graph(set);
    std::ostringstream dump;
    msce::dump_graph(g, dump);
    write_text(out, dump.str());
    const auto s = msce::graph_stats(g);
    const json stats{{"nodes", s.nodes},
                     {"finals", s.finals},
                     {"max_depth", s.max_depth},
                     {"sharing_ratio", s.sharing_ratio},
                     {"output_units", g.output_units}};
    write_text(out + ".stats.json", stats.dump(1) + "\n");
    std::cout << "nodes " << s.nodes << " finals " << s.finals << " max_depth " << s.max_depth
              << " sharing_ratio " << fmt(s.sharing_ratio) << "\n";
    return 0;
  }
};

struct SynthDataCmd {
  CommandSetArgs cs;
  std::string out, profile_path;
  std::uint64_t seed = 0;
  msce::CorpusCounts counts;
  msce::ProfileOptions popt;
  msce::CorpusOptions copt;
  std::vector<std::string> pairs;

  void add(CLI::App *app) {
    cs.add(app);
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--positives-per-command", counts.positives_per_command)->capture_default_str();
    app->add_option("--negatives", counts.negatives)->capture_default_str();
    app->add_option("--profile", profile_path,
                    "reuse this synthesis profile instead of drawing a new one");
    app->add_option("--feature-dim", popt.feature_dim)->capture_default_str();
    app->add_option("--mean-scale", popt.mean_scale)->capture_default_str();
    app->add_option("--state-std", popt.state_std)->capture_default_str();
    app->add_option("--noise-std", popt.noise_std)->capture_default_str();
    app->add_option("--duration-min", popt.duration_min)->capture_default_str();
    app->add_option("--duration-max", popt.duration_max)->capture_default_str();
    app->add_option("--pad-max", popt.pad_max)->capture_default_str();
    app->add_option("--confusable-pair", pairs, "phone pair 'a:b' placed close together");
    app->add_option("--confusable-distance", popt.confusable_distance)->capture_default_str();
    app->add_option("--snr-db", copt.snr_db_choices, "augment each utterance at one of these SNRs");
    app->add_option("--negative-min-phones", copt.negative_min_phones)->capture_default_str();
    app->add_option("--negative-max-phones", copt.negative_max_phones)->capture_default_str();
  }

  int run() {
    const auto set = cs.load();
    for (const auto &p : pairs) {
      const auto colon = p.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == p.size())
        throw msce::ConfigError("--confusable-pair expects 'a:b', got '" + p + "'");
      popt.confusable_pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
    }
    msce::SynthesisProfile profile;
    if (!profile_path.empty()) {
      profile = msce::load_profile(profile_path);
      log_line("using profile " + profile_path);
    } else {
      msce::Rng rng(seed, 0x70726f66696c65ULL);
      profile = msce::make_profile(set, popt, rng);
    }
    fs::create_directories(out);
    msce::save_profile(profile, (fs::path(out) / "profile.json").string());
    const auto m = msce::synth_corpus(set, profile, counts, seed, out, copt);
    std::cout << "wrote " << m.records.size() << " utterances to " << out << " (manifest "
              << m.content_hash << ")\n";
    return 0;
  }
};

struct TrainCmd {
  CommandSetArgs cs;
  std::string manifest, out, init, model_config, log_path, stage = "ce", strategy = "HS";
  msce::TrainConfig cfg;

  void add(CLI::App *app) {
    cs.add(app);
    app->add_option("--manifest", manifest, "training manifest")->required();
    app->add_option("--out", out, "output directory for checkpoints and the step log")->required();
    app->add_option("--stage", stage, "ce or msce")->capture_default_str();
    app->add_option("--init", init, "initial checkpoint (required for msce)");
    app->add_option("--model-config", model_config, "JSON file with model topology overrides");
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--learning-rate", cfg.learning_rate, "Adam step size")->capture_default_str();
    app->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    app->add_option("--strategy", strategy, "confusion strategy: PSS, RSS or HS")
        ->capture_default_str();
    app->add_option("--confusers", cfg.confusion.n, "confusers per example (N)")
        ->capture_default_str();
    app->add_option("--xi", cfg.loss.xi)->capture_default_str();
    app->add_option("--alpha-shift", cfg.loss.alpha_shift)->capture_default_str();
    app->add_option("--beta-mix", cfg.loss.beta_mix)->capture_default_str();
    app->add_option("--seed", cfg.seed)->capture_default_str();
    app->add_option("--checkpoint-every", cfg.checkpoint_every)->capture_default_str();
    app->add_option("--average-last-k", cfg.average_last_k)->capture_default_str();
    app->add_option("--threads", cfg.threads)->capture_default_str();
    app->add_option("--log", log_path, "step log path (default <out>/train_log.jsonl)");
  }

  int run() {
    cfg.stage = msce::parse_stage(stage);
    cfg.confusion.strategy = msce::parse_strategy(strategy);
    const auto set = cs.load();
    const auto m = msce::read_manifest(manifest);
    check_manifest(m, set);

    msce::ModelConfig model;
    msce::ModelParameters params;
    if (!init.empty()) {
      if (!model_config.empty())
        throw msce::ConfigError("--model-config cannot be combined with --init");
      auto ck = msce::load_checkpoint(init);
      model = ck.config;
      params = std::move(ck.params);
      if (model.output_units != set.output_units() || model.input_dim != m.header.feature_dim)
        throw msce::ConfigError("initial checkpoint does not fit this command set and corpus");
    } else {
      if (cfg.stage == msce::Stage::kMsce)
        throw msce::ConfigError("the msce stage needs an initial checkpoint (--init)");
      if (!model_config.empty()) model = msce::ModelConfig::from_json(msce::read_json_file(model_config));
      model.input_dim = m.header.feature_dim;
      model.output_units = set.output_units();
      model.validate();
      msce::Rng rng(cfg.seed, 0x696e6974ULL);
      params = msce::init_parameters(model, rng);
    }

    const auto data = msce::load_examples(m);
    fs::create_directories(out);
    const std::string lp = log_path.empty() ? (fs::path(out) / "train_log.jsonl").string() : log_path;
    std::ofstream log(lp, std::ios::trunc);
    if (!log) throw msce::IoError("cannot open '" + lp + "' for writing");
    log_line("training " + msce::stage_name(cfg.stage) + " on " + std::to_string(data.size()) +
             " utterances, " + std::to_string(msce::num_trainable(params)) + " parameters");
    const auto res = msce::train(params, model, set, data, cfg, out, &log);
    for (const auto &e : res.epochs)
      log_line("epoch " + std::to_string(e.epoch) + " loss " + fmt(e.mean_loss) + " ce " +
               fmt(e.mean_ce) + " d " + fmt(e.mean_d));
    if (res.skipped_unalignable > 0)
      log_line("warning: skipped " + std::to_string(res.skipped_unalignable) +
               " examples too short for their command");
    std::cout << (fs::path(out) / "final.msce").string() << "\n";
    return 0;
  }
};

struct EvalInputs {
  CommandSetArgs cs;
  std::string manifest, checkpoint;
  DecoderArgs dec;
  unsigned threads = 1;
  std::uint64_t seed = 0;  // accepted for uniformity; evaluation draws nothing

  void add(CLI::App *app, bool with_threshold) {
    cs.add(app);
    app->add_option("--manifest", manifest, "evaluation manifest")->required();
    app->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app->add_option("--threads", threads)->capture_default_str();
    app->add_option("--seed", seed, "unused by evaluation")->capture_default_str();
    dec.add(app, with_threshold);
  }

  struct Loaded {
    msce::CommandSet cs;
    msce::Manifest manifest;
    msce::Checkpoint ck;
    msce::DecodingGraph graph;
  };
  Loaded load() const {
    Loaded l{cs.load(), msce::read_manifest(manifest), msce::load_checkpoint(checkpoint), {}};
    check_manifest(l.manifest, l.cs);
    l.graph = msce::build_graph(l.cs);
    return l;
  }
};

struct EvaluateCmd {
  EvalInputs in;
  std::string out, event_log;

  void add(CLI::App *app) {
    in.add(app, true);
    app->add_option("--out", out, "output directory for report.json and confusion.csv")
        ->required();
    app->add_option("--event-log", event_log, "write streaming trigger events (JSON lines)");
  }
  int run() const {
    const auto l = in.load();
    const auto cfg = in.dec.get();
    const auto outcomes = msce::score_dataset(l.ck.params, l.ck.config, l.graph, l.manifest, cfg,
                                              in.threads);
    auto report = msce::make_report(outcomes, l.cs, l.manifest.content_hash, cfg.trigger_threshold);
    report["decoder"] = {{"beam", cfg.beam},
                         {"max_tokens", cfg.max_tokens},
                         {"blank_absorb", cfg.blank_absorb},
                         {"threshold", cfg.trigger_threshold}};
    fs::create_directories(out);
    msce::write_json_file(report, (fs::path(out) / "report.json").string());
    const auto metrics = msce::compute_metrics(outcomes, cfg.trigger_threshold,
                                               static_cast<int>(l.cs.size()));
    std::ostringstream conf;
    msce::write_confusion_csv(metrics, l.cs, conf);
    write_text((fs::path(out) / "confusion.csv").string(), conf.str());
    if (!event_log.empty()) {
      std::ostringstream ev;
      for (const auto &r : l.manifest.records) {
        const auto ff = msce::load_features(l.manifest.resolve(r));
        msce::write_event_log(r.utt_id,
                              msce::decode_utterance(l.ck.params, l.ck.config, ff.features,
                                                     l.graph, cfg),
                              ev);
      }
      write_text(event_log, ev.str());
    }
    std::cout << "threshold " << fmt(cfg.trigger_threshold) << " frr " << fmt(metrics.frr)
              << " far " << fmt(metrics.far) << " confusions " << metrics.confusions
              << " rejects " << metrics.rejects << " false_alarms " << metrics.false_alarms
              << "\n";
    return 0;
  }
};

struct RocCmd {
  EvalInputs in;
  std::string out;
  double theta_min = 0.0, theta_max = 0.0;
  int steps = 0;

  void add(CLI::App *app) {
    in.add(app, false);
    app->add_option("--theta-min", theta_min, "lowest threshold")->required();
    app->add_option("--theta-max", theta_max, "highest threshold")->required();
    app->add_option("--steps", steps, "number of thresholds (>= 2)")->required();
    app->add_option("--out", out, "ROC CSV path")->required();
  }
  int run() const {
    const auto thresholds = msce::threshold_grid(theta_min, theta_max, steps);
    const auto l = in.load();
    const auto outcomes = msce::score_dataset(l.ck.params, l.ck.config, l.graph, l.manifest,
                                              in.dec.get(), in.threads);
    const auto roc = msce::roc_sweep(outcomes, thresholds, static_cast<int>(l.cs.size()));
    std::ostringstream csv;
    msce::write_roc_csv(roc, csv);
    write_text(out, csv.str());
    log_line("wrote " + std::to_string(roc.size()) + " ROC rows to " + out);
    return 0;
  }
};

struct CompareCmd {
  std::string baseline, candidate, out;
  std::vector<double> fars = {0.01, 0.02, 0.05};
  std::uint64_t seed = 0;

  void add(CLI::App *app) {
    app->add_option("--baseline", baseline, "baseline report.json")->required();
    app->add_option("--candidate", candidate, "candidate report.json")->required();
    app->add_option("--far", fars, "FAR operating points")->capture_default_str();
    app->add_option("--out", out, "also write the table as JSON");
    app->add_option("--seed", seed, "unused by compare")->capture_default_str();
  }

  static std::optional<double> gain(const std::optional<double> &b, const std::optional<double> &c) {
    if (!b || !c || !(*b > 0.0)) return std::nullopt;
    return msce::relative_gain(*b, *c);
  }

  int run() const {
    const json a = msce::read_json_file(baseline), b = msce::read_json_file(candidate);
    if (a.at("manifest_hash") != b.at("manifest_hash"))
      throw msce::ConfigError("reports were computed on different evaluation manifests");
    const auto ra = msce::roc_from_json(a.at("roc")), rb = msce::roc_from_json(b.at("roc"));
    json rows = json::array();
    std::cout << "target_far  theta_a   theta_b   far_a    far_b    frr_a    frr_b    conf_a conf_b"
                 "  gain_frr  gain_far  gain_conf\n";
    for (double target : fars) {
      const auto pa = msce::nearest_far(ra, target), pb = msce::nearest_far(rb, target);
      if (!pa || !pb) throw msce::ContractError("a report has no defined FAR (no negatives)");
      const auto g_frr = gain(pa->frr, pb->frr);
      const auto g_far = gain(pa->far, pb->far);
      const auto g_conf = gain(static_cast<double>(pa->confusions), static_cast<double>(pb->confusions));
      rows.push_back({{"target_far", target},
                      {"baseline", msce::roc_to_json({*pa})[0]},
                      {"candidate", msce::roc_to_json({*pb})[0]},
                      {"gain_frr", msce::detail::opt_json(g_frr)},
                      {"gain_far", msce::detail::opt_json(g_far)},
                      {"gain_confusions", msce::detail::opt_json(g_conf)}});
      std::cout << std::left << std::setw(12) << fmt(target, 3) << std::setw(10)
                << fmt(pa->threshold, 3) << std::setw(10) << fmt(pb->threshold, 3) << std::setw(9)
                << fmt(pa->far, 3) << std::setw(9) << fmt(pb->far, 3) << std::setw(9)
                << fmt(pa->frr, 3) << std::setw(9) << fmt(pb->frr, 3) << std::setw(7)
                << pa->confusions << std::setw(7) << pb->confusions << std::setw(10)
                << fmt(g_frr, 2) << std::setw(10) << fmt(g_far, 2) << fmt(g_conf, 2) << "\n";
    }
    if (!out.empty())
      msce::write_json_file({{"manifest_hash", a.at("manifest_hash")}, {"rows", rows}}, out);
    return 0;
  }
};

struct ConfusionSetsCmd {
  CommandSetArgs cs;
  int n = 4;
  std::string out;
  std::uint64_t seed = 0;

  void add(CLI::App *app) {
    cs.add(app);
    app->add_option("--confusers", n, "confusers per command (N)")->capture_default_str();
    app->add_option("--out", out, "output path (default stdout)");
    app->add_option("--seed", seed, "unused: the PSS table is deterministic")->capture_default_str();
  }
  int run() const {
    const auto set = cs.load();
    std::ostringstream os;
    msce::dump_confusion_sets(msce::build_pss_sets(set, n), os);
    if (out.empty())
      std::cout << os.str();
    else
      write_text(out, os.str());
    return 0;
  }
};

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"msce: small-footprint command recognition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file with option values");
  app.add_flag("-q,--quiet", [](std::int64_t) { g_verbose = 0; }, "suppress log output");

  BuildGraphCmd graph_cmd;
  SynthDataCmd synth;
  TrainCmd train;
  EvaluateCmd evaluate;
  RocCmd roc;
  CompareCmd compare;
  ConfusionSetsCmd confusion;

  auto *c_graph = app.add_subcommand("build-graph", "build the decoding graph for a command set");
  auto *c_synth = app.add_subcommand("synth-data", "generate a synthetic corpus");
  auto *c_train = app.add_subcommand("train", "train one stage (ce or msce)");
  auto *c_eval = app.add_subcommand("evaluate", "decode a manifest and write metrics");
  auto *c_roc = app.add_subcommand("roc", "sweep the trigger threshold");
  auto *c_cmp = app.add_subcommand("compare", "relative gains between two reports");
  auto *c_conf = app.add_subcommand("confusion-sets", "dump the PSS confusion sets");
  graph_cmd.add(c_graph);
  synth.add(c_synth);
  train.add(c_train);
  evaluate.add(c_eval);
  roc.add(c_roc);
  compare.add(c_cmp);
  confusion.add(c_conf);
  // build-graph has no randomness but accepts --seed like every other subcommand
  std::uint64_t unused_seed = 0;
  c_graph->add_option("--seed", unused_seed, "unused by build-graph");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  }

  try {
    if (*c_graph) return graph_cmd.run();
    if (*c_synth) return synth.run();
    if (*c_train) return train.run();
    if (*c_eval) return evaluate.run();
    if (*c_roc) return roc.run();
    if (*c_cmp) return compare.run();
    if (*c_conf) return confusion.run();
  } catch (const msce::ConfigError &e) {
    std::cerr << "msce: error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "msce: error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}
