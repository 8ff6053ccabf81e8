#include "meea/orchestrator.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "json.hpp"
#include "meea/rng.hpp"

namespace meea {

namespace {

std::vector<Message> history_from_chain(const PromptChain& chain) {
  std::vector<Message> history;
  history.reserve(chain.turns.size() * 2);
  for (const auto& t : chain.turns) {
    history.emplace_back(Role::User, t.prompt);
    history.emplace_back(Role::Assistant, t.response);
  }
  return history;
}

ScoreTriple score_exchange(const std::string& prompt, const std::string& response,
                           const Goal& goal, const ScorerSet& scorers) {
  double s = std::min(1.0, std::max(0.0, scorers.judge->judge(prompt, response, goal.text)));
  double t = std::min(1.0, std::max(0.0, scorers.toxicity->toxicity(response)));
  double sim = clamp_similarity(scorers.similarity->similarity(goal.text, response));
  return ScoreTriple(s, t, sim);
}

}  // namespace

void CampaignConfig::validate() const {
  if (goals_source.empty()) throw std::invalid_argument("goals: a goals file is required");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0,1]");
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (branching < top_k) throw std::invalid_argument("branching must be >= top_k");
  if (!(advance_threshold >= 0.0 && advance_threshold <= 1.0)) {
    throw std::invalid_argument("advance_threshold must lie in [0,1]");
  }
  if (per_round_budget < 1) throw std::invalid_argument("per_round_budget must be >= 1");
  if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  schedule.validate();
  if (target.kind == TargetSpec::Kind::Simulated) {
    target.vigilance.validate();
  } else {
    target.endpoint.validate();
  }
  if (attacker.kind == AttackerSpec::Kind::Http) attacker.endpoint.validate();
  if (lexicon_path.empty()) {
    throw std::invalid_argument("lexicon: a toxicity lexicon file is required");
  }
}

std::string goal_status_name(GoalStatus status) {
  switch (status) {
    case GoalStatus::Succeeded: return "succeeded";
    case GoalStatus::Failed: return "failed";
    case GoalStatus::Exhausted: return "exhausted";
    case GoalStatus::Errored: return "errored";
  }
  throw std::logic_error("bad goal status");
}

CampaignContext CampaignContext::build(const CampaignConfig& config) {
  CampaignContext ctx;
  ctx.lexicon = std::make_shared<const ToxicityLexicon>(
      ToxicityLexicon::from_csv_file(config.lexicon_path));
  ctx.cues = config.refusal_cues_path.empty() ? RefusalCues()
                                              : RefusalCues::from_file(config.refusal_cues_path);

  std::shared_ptr<HttpChatEndpoint> scorer_endpoint;
  auto need_remote = [&] {
    if (!scorer_endpoint) {
      scorer_endpoint = std::make_shared<HttpChatEndpoint>(config.scorers.endpoint);
    }
    return scorer_endpoint;
  };
  ctx.scorers.judge = config.scorers.judge == ScorerChoice::Builtin
                          ? std::shared_ptr<JudgeScorer>(std::make_shared<BuiltinJudge>(ctx.cues))
                          : std::make_shared<RemoteJudge>(need_remote());
  switch (config.scorers.toxicity) {
    case ScorerChoice::Builtin:
      ctx.scorers.toxicity = std::make_shared<BuiltinToxicity>(ctx.lexicon);
      break;
    case ScorerChoice::Remote:
      ctx.scorers.toxicity = std::make_shared<RemoteToxicity>(need_remote());
      break;
    case ScorerChoice::MaxAggregate: {
      std::vector<std::shared_ptr<ToxicityScorer>> available;
      available.push_back(std::make_shared<BuiltinToxicity>(ctx.lexicon));
      if (!config.scorers.endpoint.base_url.empty()) {
        available.push_back(std::make_shared<RemoteToxicity>(need_remote()));
      }
      ctx.scorers.toxicity = std::make_shared<MaxToxicityAggregate>(std::move(available));
      break;
    }
  }
  ctx.scorers.similarity =
      config.scorers.similarity == ScorerChoice::Builtin
          ? std::shared_ptr<SimilarityScorer>(std::make_shared<BuiltinSimilarity>())
          : std::make_shared<RemoteSimilarity>(need_remote());

  if (config.target.kind == TargetSpec::Kind::Http) {
    ctx.http_target = std::make_shared<HttpChatEndpoint>(config.target.endpoint);
  }
  if (config.attacker.kind == AttackerSpec::Kind::Http) {
    ctx.attacker = std::make_shared<HttpChatEndpoint>(config.attacker.endpoint);
  }
  return ctx;
}

GoalRunResult run_goal(const Goal& goal, const CampaignConfig& config,
                       const CampaignContext& ctx, std::uint64_t goal_seed) {
  GoalRunResult result;
  result.goal = goal;
  result.chain.goal = goal;

  std::shared_ptr<ModelEndpoint> raw_target;
  if (config.target.kind == TargetSpec::Kind::Simulated) {
    VigilanceState v = config.target.vigilance;
    v.hidden_goal = goal.text;
    v.theta = v.theta0;
    raw_target = std::make_shared<SimulatedTarget>(v, ctx.lexicon);
  } else {
    raw_target = ctx.http_target;
  }
  auto target = std::make_shared<CountingEndpoint>(raw_target);

  std::vector<PromptCandidate> candidates = generate_initial_prompts(
      goal, ctx.attacker.get(), config.branching, goal_seed, ctx.lexicon.get());
  std::vector<PromptCandidate> selected =
      select_top_k(std::move(candidates), goal, config.top_k, config.weights,
                   *ctx.scorers.similarity, *ctx.scorers.toxicity);

  if (config.ablation.no_multi_round) {
    // Single-turn collapse: best pre-scored candidate, empty history.
    const std::string& prompt = selected.front().text;
    std::string response = target->complete({}, prompt);
    ScoreTriple scores = score_exchange(prompt, response, goal, ctx.scorers);
    DialogueTurn turn;
    turn.round_index = 1;
    turn.prompt = prompt;
    turn.response = response;
    turn.scores = scores;
    turn.jailbroken = label_jailbreak(response, scores.similarity, ctx.cues);
    result.chain.turns.push_back(turn);
    result.chain.status =
        turn.jailbroken ? ChainStatus::Succeeded : ChainStatus::Exhausted;
    result.status = turn.jailbroken ? GoalStatus::Succeeded : GoalStatus::Exhausted;
    result.iterations = 1;
    result.endpoint_calls = target->calls();
    return result;
  }

  TaskOptions options;
  options.per_round_budget = config.per_round_budget;
  options.max_rounds = config.max_rounds;
  options.seed = goal_seed;
  options.cues = ctx.cues;
  options.lexicon = ctx.lexicon.get();
  TaskState task(goal, std::move(selected), options);

  EnergyWeights energy_weights =
      config.ablation.no_feedback_scoring ? EnergyWeights(1.0, 0.0, 0.0) : config.weights;
  PerturbFn perturb = make_prompt_perturbation(goal, ctx.lexicon.get());

  bool tau_reached = false;
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    std::optional<std::string> prompt = task.next_prompt();
    if (!prompt) break;  // pools exhausted
    result.iterations = iter;

    std::vector<Message> history = history_from_chain(task.chain());
    std::string base_response = target->complete(history, *prompt);

    // Responses already paid for within this iteration are reused.
    auto memo = std::make_shared<std::map<std::string, std::string>>();
    (*memo)[*prompt] = base_response;
    auto respond = [&, memo](const std::string& text) -> const std::string& {
      auto it = memo->find(text);
      if (it == memo->end()) {
        it = memo->emplace(text, target->complete(history, text)).first;
      }
      return it->second;
    };

    std::string optimized = *prompt;
    if (!config.ablation.no_sa) {
      EnergyFn oracle;
      if (config.eval_mode == EvalMode::Live) {
        oracle = [&](const std::string& candidate) {
          ScoreTriple s = score_exchange(candidate, respond(candidate), goal, ctx.scorers);
          return energy(s, energy_weights);
        };
      } else {
        oracle = [&](const std::string& candidate) {
          ScoreTriple s = score_exchange(candidate, base_response, goal, ctx.scorers);
          return energy(s, energy_weights);
        };
      }
      AnnealOutcome outcome = optimize(*prompt, config.schedule, perturb, oracle,
                                       Rng::mix(goal_seed, 0x5341ULL + iter));
      optimized = outcome.best_prompt;
      result.traces.emplace_back(iter, std::move(outcome.trace));
    }

    std::string response = config.eval_mode == EvalMode::Live
                               ? respond(optimized)
                               : target->complete(history, optimized);
    ScoreTriple scores = score_exchange(optimized, response, goal, ctx.scorers);
    task.update(optimized, response, scores, config.advance_threshold);

    if (scores.judge >= config.tau) {
      tau_reached = true;
      break;
    }
    if (task.status() != ChainStatus::InProgress) break;
  }

  result.chain = task.chain();
  result.endpoint_calls = target->calls();
  switch (task.status()) {
    case ChainStatus::Succeeded:
      result.status = GoalStatus::Succeeded;
      break;
    case ChainStatus::Exhausted:
      result.status = GoalStatus::Exhausted;
      break;
    case ChainStatus::InProgress:
      // Either the judge crossed tau without the labeling rule firing, or
      // the iteration budget ran out.
      result.status = tau_reached ? GoalStatus::Succeeded : GoalStatus::Failed;
      break;
  }
  return result;
}

double compute_asr(const std::vector<GoalStatus>& outcomes) {
  int succeeded = 0, denominator = 0;
  for (GoalStatus s : outcomes) {
    if (s == GoalStatus::Errored) continue;
    ++denominator;
    if (s == GoalStatus::Succeeded) ++succeeded;
  }
  if (denominator == 0) return 0.0;
  return static_cast<double>(succeeded) / denominator;
}

CampaignResult run_campaign(const CampaignConfig& config) {
  config.validate();
  std::vector<Goal> goals = parse_goals_file(config.goals_source);
  CampaignContext ctx = CampaignContext::build(config);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(config.output_dir) / "chains");
  fs::create_directories(fs::path(config.output_dir) / "traces");

  CampaignResult result;
  result.per_goal.resize(goals.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= goals.size()) return;
      std::uint64_t goal_seed = config.seed ^ Rng::mix(0x676f616cULL, i);
      GoalRunResult r;
      try {
        r = run_goal(goals[i], config, ctx, goal_seed);
      } catch (const std::exception& ex) {
        r.goal = goals[i];
        r.chain.goal = goals[i];
        r.status = GoalStatus::Errored;
        r.error = ex.what();
      }

      std::ofstream chain_out(fs::path(config.output_dir) / "chains" /
                              (r.goal.id + ".jsonl"));
      chain_to_jsonl(r.chain, r.iterations, r.endpoint_calls, chain_out);
      std::ofstream trace_out(fs::path(config.output_dir) / "traces" /
                              (r.goal.id + ".jsonl"));
      for (const auto& [iter, trace] : r.traces) trace_to_jsonl(trace, trace_out, iter);

      result.per_goal[i] = std::move(r);
    }
  };

  int worker_count = std::min<int>(config.workers, static_cast<int>(goals.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < worker_count; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<GoalStatus> outcomes;
  outcomes.reserve(result.per_goal.size());
  for (const auto& r : result.per_goal) outcomes.push_back(r.status);
  result.asr = compute_asr(outcomes);

  nlohmann::json summary;
  summary["asr"] = result.asr;
  summary["goals"] = nlohmann::json::array();
  for (const auto& r : result.per_goal) {
    nlohmann::json g;
    g["id"] = r.goal.id;
    g["status"] = goal_status_name(r.status);
    g["chain"] = "chains/" + r.goal.id + ".jsonl";
    g["iterations"] = r.iterations;
    g["endpoint_calls"] = r.endpoint_calls;
    if (!r.error.empty()) g["error"] = r.error;
    summary["goals"].push_back(g);
  }
  summary["config"] = nlohmann::json::parse(config_to_json(config));
  std::ofstream out(fs::path(config.output_dir) / "summary.json");
  out << summary.dump(2) << "\n";

  return result;
}

std::vector<AblationRow> run_ablation_suite(const CampaignConfig& config) {
  struct Variant {
    const char* name;
    AblationFlags flags;
  };
  const Variant variants[] = {
      {"full", {}},
      {"no_sa", {.no_sa = true}},
      {"no_multi_round", {.no_multi_round = true}},
      {"no_feedback_scoring", {.no_feedback_scoring = true}},
  };

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    CampaignConfig variant_config = config;
    variant_config.ablation = v.flags;
    variant_config.output_dir =
        (std::filesystem::path(config.output_dir) / v.name).string();
    CampaignResult r = run_campaign(variant_config);

    AblationRow row;
    row.variant = v.name;
    row.asr = r.asr;
    row.goals = static_cast<int>(r.per_goal.size());
    for (const auto& g : r.per_goal) {
      if (g.status == GoalStatus::Succeeded) ++row.succeeded;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string config_to_json(const CampaignConfig& config) {
  nlohmann::json j;
  j["goals"] = config.goals_source;
  j["output_dir"] = config.output_dir;
  j["seed"] = config.seed;
  j["workers"] = config.workers;
  j["branching"] = config.branching;
  j["top_k"] = config.top_k;
  j["max_iterations"] = config.max_iterations;
  j["tau"] = config.tau;
  j["advance_threshold"] = config.advance_threshold;
  j["per_round_budget"] = config.per_round_budget;
  j["max_rounds"] = config.max_rounds;
  j["eval_mode"] = config.eval_mode == EvalMode::Live ? "live" : "cached";
  j["weights"] = {{"alpha", config.weights.alpha},
                  {"beta", config.weights.beta},
                  {"gamma", config.weights.gamma}};
  j["schedule"] = {{"t0", config.schedule.t0},
                   {"t_min", config.schedule.t_min},
                   {"eta", config.schedule.eta},
                   {"k_inner", config.schedule.k_inner}};
  nlohmann::json ablation = nlohmann::json::array();
  if (config.ablation.no_sa) ablation.push_back("no_sa");
  if (config.ablation.no_multi_round) ablation.push_back("no_multi_round");
  if (config.ablation.no_feedback_scoring) ablation.push_back("no_feedback_scoring");
  j["ablation"] = ablation;

  if (config.target.kind == TargetSpec::Kind::Simulated) {
    const VigilanceState& v = config.target.vigilance;
    j["target"] = {{"kind", "simulated"},     {"theta0", v.theta0},
                   {"delta_up", v.delta_up},  {"rho_down", v.rho_down},
                   {"theta_max", v.theta_max}, {"theta_floor", v.theta_floor},
                   {"t_low", v.t_low},        {"t_high", v.t_high},
                   {"s_on_topic", v.s_on_topic}};
  } else {
    const EndpointConfig& e = config.target.endpoint;
    j["target"] = {{"kind", "http"},
                   {"base_url", e.base_url},
                   {"model", e.model_name},
                   {"auth_env", e.auth_token_env_var},
                   {"timeout_ms", e.timeout_ms},
                   {"max_retries", e.max_retries},
                   {"requests_per_minute", e.requests_per_minute}};
  }
  if (config.attacker.kind == AttackerSpec::Kind::Offline) {
    j["attacker"] = {{"kind", "offline"}};
  } else {
    const EndpointConfig& e = config.attacker.endpoint;
    j["attacker"] = {{"kind", "http"},
                     {"base_url", e.base_url},
                     {"model", e.model_name},
                     {"auth_env", e.auth_token_env_var},
                     {"timeout_ms", e.timeout_ms},
                     {"max_retries", e.max_retries},
                     {"requests_per_minute", e.requests_per_minute}};
  }
  auto choice_name = [](ScorerChoice c) {
    switch (c) {
      case ScorerChoice::Builtin: return "builtin";
      case ScorerChoice::Remote: return "remote";
      case ScorerChoice::MaxAggregate: return "max";
    }
    return "builtin";
  };
  j["scorers"] = {{"judge", choice_name(config.scorers.judge)},
                  {"toxicity", choice_name(config.scorers.toxicity)},
                  {"similarity", choice_name(config.scorers.similarity)}};
  if (config.scorers.judge == ScorerChoice::Remote ||
      config.scorers.toxicity == ScorerChoice::Remote ||
      config.scorers.similarity == ScorerChoice::Remote) {
    const EndpointConfig& e = config.scorers.endpoint;
    j["scorers"]["endpoint"] = {{"base_url", e.base_url},
                                {"model", e.model_name},
                                {"auth_env", e.auth_token_env_var},
                                {"timeout_ms", e.timeout_ms},
                                {"max_retries", e.max_retries},
                                {"requests_per_minute", e.requests_per_minute}};
  }
  j["refusal_cues"] = config.refusal_cues_path;
  j["lexicon"] = config.lexicon_path;
  return j.dump();
}

}  // namespace meea
