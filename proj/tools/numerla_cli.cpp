// Command-line front end: train the meta-policy, collect the sample bank,
// synthesize the safety knowledge, run the method comparison, and check the
// ordering claims of a finished run.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "numerla/config.hpp"
#include "numerla/errors.hpp"
#include "numerla/persist.hpp"

namespace {

using namespace numerla;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitOrdering = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

std::string default_out_dir() {
  const char* env = std::getenv("NUMERLA_OUT");
  return env != nullptr && *env != '\0' ? env : "out";
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path,
                  "JSON config file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides,
                  "dotted override, e.g. run.episodes=100 (repeatable)");
  cmd->add_option("-o,--out", args.out_dir, "artifact directory")
      ->default_val(default_out_dir());
}

config::FileConfig load(const CommonArgs& args) {
  if (args.config_path.empty()) {
    return config::parse_config("{}", args.overrides);
  }
  return config::load_config(args.config_path, args.overrides);
}

std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

int cmd_train(const CommonArgs& args) {
  config::FileConfig cfg = load(args);
  std::cout << "training meta-policy: episodes=" << cfg.train.episodes
            << " lr=" << cfg.train.lr << " seed=" << cfg.train.seed << "\n";
  policy::TrainResult result = policy::train_meta(cfg.train_setup(), cfg.train);
  std::ostringstream lineage;
  lineage << "init(seed=" << cfg.train.seed
          << ", scale=" << cfg.train.init_scale << ") -> reinforce(episodes="
          << result.episodes_run << ", lr=" << cfg.train.lr
          << ", gamma=" << cfg.train.gamma << ")";
  std::string path = join_path(args.out_dir, "checkpoint.json");
  persist::save_checkpoint(path, result.params, lineage.str());
  std::cout << "eval mean return " << result.eval_mean_return
            << " (uniform-random policy: " << result.random_mean_return
            << ")\nwrote " << path << "\n";
  return kExitOk;
}

int cmd_build_bank(const CommonArgs& args, const std::string& checkpoint) {
  config::FileConfig cfg = load(args);
  std::string ckpt =
      checkpoint.empty() ? join_path(args.out_dir, "checkpoint.json")
                         : checkpoint;
  policy::PolicyParams params = persist::load_checkpoint(ckpt);
  cola::SampleBank bank =
      cola::build_sample_bank(params, cfg.modes, cfg.sim, cfg.bank);
  std::string path = join_path(args.out_dir, "bank.json");
  persist::save_bank(path, bank);
  std::cout << "bank: " << bank.total() << " windows of K=" << bank.K
            << " across " << bank.buckets.size() << " modes\nwrote " << path
            << "\n";
  return kExitOk;
}

int cmd_synthesize_shield(const CommonArgs& args,
                          const std::string& checkpoint) {
  config::FileConfig cfg = load(args);
  ssc::SSCFunction knowledge = ssc::baseline_knowledge();
  if (!cfg.shield_new_modes.empty()) {
    std::string ckpt =
        checkpoint.empty() ? join_path(args.out_dir, "checkpoint.json")
                           : checkpoint;
    policy::PolicyParams params = persist::load_checkpoint(ckpt);
    ssc::SscapContext ctx;
    ctx.sim = &cfg.sim;
    ctx.theta = &params;
    ctx.K = cfg.bank.K;
    ctx.assessor = cfg.assessor;
    ctx.m_eval = cfg.shield_m_eval;
    RngStream rng(cfg.shield_seed);
    ssc::SscaInfo info;
    knowledge = ssc::ssca_update(knowledge, cfg.shield_new_modes, ctx,
                                 ssc::default_grammar(), rng, &info);
    std::cout << "knowledge expanded for " << info.uncovered
              << " uncovered mode(s); version " << knowledge.version << "\n";
  }
  std::string path = join_path(args.out_dir, "knowledge.json");
  persist::save_knowledge(path, knowledge);
  std::cout << "wrote " << path << "\n";
  return kExitOk;
}

int cmd_run(const CommonArgs& args, const std::string& checkpoint,
            const std::string& bank_path, const std::string& knowledge_path,
            int jobs) {
  config::FileConfig cfg = load(args);
  if (jobs > 0) cfg.run.jobs = jobs;

  harness::RunArtifacts art;
  art.sim = cfg.sim;
  art.belief_model = cfg.belief_model();
  std::string ckpt = checkpoint.empty()
                         ? join_path(args.out_dir, "checkpoint.json")
                         : checkpoint;
  art.meta = persist::load_checkpoint(ckpt);

  bool any_adapting = false;
  bool any_shielded = false;
  for (harness::Method m : cfg.run.methods) {
    any_adapting = any_adapting || m != harness::Method::RL;
    any_shielded = any_shielded || m == harness::Method::NUMERLA;
  }
  if (any_adapting) {
    std::string path =
        bank_path.empty() ? join_path(args.out_dir, "bank.json") : bank_path;
    if (!std::filesystem::exists(path)) {
      throw ConfigError("adaptation needs a sample bank; run build-bank first "
                        "or pass --bank (looked at " + path + ")");
    }
    art.bank = persist::load_bank(path);
  }
  art.knowledge = ssc::baseline_knowledge();
  if (any_shielded) {
    std::string path = knowledge_path.empty()
                           ? join_path(args.out_dir, "knowledge.json")
                           : knowledge_path;
    if (!std::filesystem::exists(path)) {
      throw ConfigError("shielding needs a knowledge file; run "
                        "synthesize-shield first or pass --knowledge (looked "
                        "at " + path + ")");
    }
    art.knowledge = persist::load_knowledge(path);
  }

  harness::ExperimentResult result = harness::run_experiment(art, cfg.run);

  std::string metrics_path = join_path(args.out_dir, "metrics.json");
  persist::save_metrics(metrics_path, result.summary);
  persist::atomic_write_file(join_path(args.out_dir, "metrics.csv"),
                             persist::metrics_csv(result.summary));
  persist::atomic_write_file(join_path(args.out_dir, "episodes.csv"),
                             persist::episodes_csv(result));
  persist::atomic_write_file(join_path(args.out_dir, "metrics_long.csv"),
                             persist::long_csv(result));

  harness::ReportResult report = harness::compare_report(result.summary);
  std::cout << report.text << "\nwrote " << metrics_path << "\n";
  return kExitOk;
}

int cmd_report(const std::string& metrics_path) {
  harness::MetricsSummary summary = persist::load_metrics(metrics_path);
  harness::ReportResult report = harness::compare_report(summary);
  std::cout << report.text;
  if (!report.all_pass) {
    std::cerr << "ordering checks failed\n";
    return kExitOrdering;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vehicle-pedestrian policy adaptation workbench"};
  app.require_subcommand(0, 1);
  bool print_default = false;
  app.add_flag("--print-default-config", print_default,
               "print the built-in config as JSON and exit");

  CommonArgs train_args, bank_args, shield_args, run_args;
  std::string bank_ckpt, shield_ckpt, run_ckpt, run_bank, run_knowledge;
  std::string report_metrics;
  int run_jobs = 0;

  CLI::App* train = app.add_subcommand("train", "train the meta-policy");
  add_common(train, train_args);

  CLI::App* bank =
      app.add_subcommand("build-bank", "collect per-mode lookahead samples");
  add_common(bank, bank_args);
  bank->add_option("--checkpoint", bank_ckpt, "policy checkpoint to roll out");

  CLI::App* shield = app.add_subcommand(
      "synthesize-shield", "write baseline knowledge, expanded for new modes");
  add_common(shield, shield_args);
  shield->add_option("--checkpoint", shield_ckpt,
                     "policy checkpoint for synthesis rollouts");

  CLI::App* run =
      app.add_subcommand("run", "run the method comparison experiment");
  add_common(run, run_args);
  run->add_option("--checkpoint", run_ckpt, "policy checkpoint");
  run->add_option("--bank", run_bank, "sample bank file");
  run->add_option("--knowledge", run_knowledge, "safety knowledge file");
  run->add_option("-j,--jobs", run_jobs, "worker threads (overrides config)");

  CLI::App* report =
      app.add_subcommand("report", "ordering checks over saved metrics");
  report
      ->add_option("--metrics", report_metrics, "metrics file from a run")
      ->default_val(
          (std::filesystem::path(default_out_dir()) / "metrics.json").string());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (print_default) {
      std::cout << config::default_config_json();
      return kExitOk;
    }
    if (train->parsed()) return cmd_train(train_args);
    if (bank->parsed()) return cmd_build_bank(bank_args, bank_ckpt);
    if (shield->parsed()) return cmd_synthesize_shield(shield_args, shield_ckpt);
    if (run->parsed()) {
      return cmd_run(run_args, run_ckpt, run_bank, run_knowledge, run_jobs);
    }
    if (report->parsed()) return cmd_report(report_metrics);
    std::cerr << app.help();
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StaleBankError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
