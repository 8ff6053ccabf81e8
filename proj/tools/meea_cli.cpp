#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "meea/analysis.hpp"
#include "meea/config.hpp"
#include "meea/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace meea;

namespace {

int verbosity = 0;

void note(const std::string& line) {
  if (verbosity > 0) std::cerr << line << "\n";
}

std::shared_ptr<ModelEndpoint> make_analysis_target(const CampaignConfig& config,
                                                    const Goal& goal,
                                                    std::shared_ptr<const ToxicityLexicon> lex) {
  if (config.target.kind == TargetSpec::Kind::Simulated) {
    VigilanceState v = config.target.vigilance;
    v.hidden_goal = goal.text;
    v.theta = v.theta0;
    return std::make_shared<SimulatedTarget>(v, std::move(lex));
  }
  return std::make_shared<HttpChatEndpoint>(config.target.endpoint);
}

int cmd_run(const CampaignConfig& config) {
  CampaignResult result = run_campaign(config);
  int succeeded = 0;
  for (const auto& g : result.per_goal) {
    note(g.goal.id + ": " + goal_status_name(g.status));
    if (g.status == GoalStatus::Succeeded) ++succeeded;
  }
  std::cout << "goals=" << result.per_goal.size() << " succeeded=" << succeeded
            << " asr=" << result.asr << "\n";
  std::cout << "outputs: " << config.output_dir << "\n";
  return 0;
}

int cmd_ablate(const CampaignConfig& config) {
  std::vector<AblationRow> rows = run_ablation_suite(config);

  fs::create_directories(config.output_dir);
  std::string csv_path = (fs::path(config.output_dir) / "ablation.csv").string();
  std::ofstream csv(csv_path, std::ios::binary);
  csv << "variant,asr,succeeded,goals\n";
  for (const auto& r : rows) {
    csv << r.variant << "," << r.asr << "," << r.succeeded << "," << r.goals << "\n";
  }

  std::cout << "variant                asr    succeeded/goals\n";
  for (const auto& r : rows) {
    std::printf("%-22s %.4f %d/%d\n", r.variant.c_str(), r.asr, r.succeeded, r.goals);
  }
  std::cout << "table: " << csv_path << "\n";
  return 0;
}

int cmd_analyze(const CampaignConfig& config, const std::string& run_dir_arg) {
  std::string run_dir = run_dir_arg.empty() ? config.output_dir : run_dir_arg;
  fs::path chains_dir = fs::path(run_dir) / "chains";
  if (!fs::is_directory(chains_dir)) {
    std::cerr << "no chains directory under " << run_dir << "\n";
    return 1;
  }

  auto lexicon = std::make_shared<const ToxicityLexicon>(
      ToxicityLexicon::from_csv_file(config.lexicon_path));
  RefusalCues cues = config.refusal_cues_path.empty()
                         ? RefusalCues()
                         : RefusalCues::from_file(config.refusal_cues_path);
  BuiltinToxicity toxicity(lexicon);
  BuiltinSimilarity similarity;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(chains_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cerr << "no chain files under " << chains_dir << "\n";
    return 1;
  }

  fs::path margins_dir = fs::path(run_dir) / "analysis" / "margins";
  fs::create_directories(margins_dir);

  std::vector<ChainSignals> signals;
  for (const auto& file : files) {
    StoredChain stored = read_chain_jsonl(file.string());
    if (stored.prompts.empty()) {
      note("skipping " + file.filename().string() + " (no turns)");
      continue;
    }
    auto target = make_analysis_target(config, stored.goal, lexicon);
    ReinsertionResult result =
        reinsertion_protocol(stored.goal, stored.prompts, *target, toxicity, similarity, cues);
    if (result.error_round) {
      std::cerr << stored.goal.id << ": protocol failed at round " << *result.error_round
                << ": " << result.error_message << "\n";
    }
    std::ofstream out(margins_dir / (stored.goal.id + ".jsonl"));
    margin_records_to_jsonl(result.records, out);
    signals.push_back({stored.goal.id, result.records});
    note(stored.goal.id + ": " + std::to_string(result.records.size()) + " margin records");
  }
  if (signals.empty()) {
    std::cerr << "no analyzable chains (all empty)\n";
    return 1;
  }

  std::string matrices_dir = (fs::path(run_dir) / "analysis" / "matrices").string();
  for (const auto& path : export_csv(signals, matrices_dir)) {
    std::cout << "wrote " << path << "\n";
  }
  std::cout << "margin records: " << margins_dir.string() << "\n";
  return 0;
}

int cmd_report(const CampaignConfig& config, const std::string& run_dir_arg) {
  std::string run_dir = run_dir_arg.empty() ? config.output_dir : run_dir_arg;
  fs::path matrices_dir = fs::path(run_dir) / "analysis" / "matrices";
  if (!fs::is_directory(matrices_dir)) {
    std::cerr << "no analysis matrices under " << run_dir << " (run `analyze` first)\n";
    return 1;
  }
  bool any = false;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(matrices_dir)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& csv : files) {
    fs::path svg = csv;
    svg.replace_extension(".svg");
    export_heatmap_svg(csv.string(), svg.string());
    std::cout << "wrote " << svg.string() << "\n";
    any = true;
  }
  if (!any) {
    std::cerr << "no matrix CSVs under " << matrices_dir << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MEEA: multi-turn safety-robustness evaluation harness"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "campaign config JSON")->required();
    cmd->add_option("--set", overrides, "dotted-path override, e.g. schedule.eta=0.8");
    cmd->add_flag("-v,--verbose", verbosity, "per-goal progress on stderr");
  };

  CLI::App* run = app.add_subcommand("run", "execute a campaign");
  add_common(run);
  CLI::App* ablate = app.add_subcommand("ablate", "run full + the three ablation variants");
  add_common(ablate);
  CLI::App* analyze =
      app.add_subcommand("analyze", "reinsertion protocol + margin matrices over stored chains");
  add_common(analyze);
  analyze->add_option("--run-dir", run_dir, "campaign output dir (default: config output_dir)");
  CLI::App* report = app.add_subcommand("report", "render SVG heatmaps from stored matrices");
  add_common(report);
  report->add_option("--run-dir", run_dir, "campaign output dir (default: config output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CampaignConfig config;
  try {
    config = load_config(config_path, overrides);
  } catch (const config_error& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(config);
    if (ablate->parsed()) return cmd_ablate(config);
    if (analyze->parsed()) return cmd_analyze(config, run_dir);
    if (report->parsed()) return cmd_report(config, run_dir);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
