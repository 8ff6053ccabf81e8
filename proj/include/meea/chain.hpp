#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "meea/annealer.hpp"
#include "meea/clients.hpp"
#include "meea/scoring.hpp"

namespace meea {

struct Goal {
  std::string id;
  std::string text;
};

enum class PromptStyle { Interrogative, Declarative, Euphemistic };

std::string style_name(PromptStyle style);

struct PromptCandidate {
  std::string text;
  PromptStyle style = PromptStyle::Interrogative;
  double pre_score = 0.0;
  int gen_order = 0;  // tie-break: earlier generation ranks first
};

struct DialogueTurn {
  int round_index = 1;
  std::string prompt;
  std::string response;
  ScoreTriple scores{0, 0, 0};
  bool jailbroken = false;
};

enum class ChainStatus { InProgress, Succeeded, Exhausted };

std::string status_name(ChainStatus status);

struct PromptChain {
  Goal goal;
  std::vector<DialogueTurn> turns;
  ChainStatus status = ChainStatus::InProgress;
};

/// Deterministic offline candidate generation: style templates over goal
/// keywords, self-calibrated against the builtin similarity scorer so each
/// escalation level lands in its similarity band. A lexicon, when given,
/// keeps template keywords out of the toxic vocabulary.
std::vector<PromptCandidate> generate_initial_prompts(
    const Goal& goal, ModelEndpoint* attacker, int branching, std::uint64_t seed,
    const ToxicityLexicon* lexicon = nullptr);

/// Next-round candidate pool, escalated from the strongest turn so far.
std::vector<PromptCandidate> escalate_prompts(const Goal& goal,
                                              const std::string& base_prompt,
                                              int level, int count, std::uint64_t seed,
                                              const ToxicityLexicon* lexicon = nullptr);

/// Rank candidates by gamma*S(goal, p) + beta*(1 - D(p)) and keep the top k.
std::vector<PromptCandidate> select_top_k(std::vector<PromptCandidate> candidates,
                                          const Goal& goal, int k,
                                          const EnergyWeights& weights,
                                          SimilarityScorer& similarity,
                                          ToxicityScorer& toxicity);

/// Perturbation operator for the annealer: token-level edits that nudge a
/// prompt toward or away from the goal vocabulary.
PerturbFn make_prompt_perturbation(const Goal& goal,
                                   const ToxicityLexicon* lexicon = nullptr);

struct TaskOptions {
  int per_round_budget = 3;
  int max_rounds = 6;
  std::uint64_t seed = 0;
  RefusalCues cues = RefusalCues();
  const ToxicityLexicon* lexicon = nullptr;  // for escalation keyword filtering
};

/// Round manager for one goal: pending candidates for the current round, a
/// retained pool for rollback, and the growing dialogue chain. Owned by a
/// single campaign worker.
class TaskState {
 public:
  TaskState(Goal goal, std::vector<PromptCandidate> selected, TaskOptions options);

  /// Head of the pending pool, without consuming it. Falls back to the best
  /// retained candidate (rollback). Exhausts the task when both pools are
  /// empty.
  std::optional<std::string> next_prompt();

  /// Record one exchange. Consumes the pending head, applies the
  /// refusal/advancement rules, and regenerates the pool on advancement.
  void update(const std::string& prompt, const std::string& response,
              const ScoreTriple& scores, double advance_threshold);

  const PromptChain& chain() const { return chain_; }
  ChainStatus status() const { return chain_.status; }
  int current_round() const { return current_round_; }
  int consumed_this_round() const { return consumed_this_round_; }
  size_t pending_size() const { return pending_.size(); }
  size_t retained_size() const { return retained_.size(); }

 private:
  PromptChain chain_;
  std::deque<PromptCandidate> pending_;
  std::vector<PromptCandidate> retained_;
  TaskOptions options_;
  int current_round_ = 1;
  int consumed_this_round_ = 0;
  double prev_round_best_sim_ = 0.0;
  double this_round_best_sim_ = 0.0;

  void advance_round();
  const DialogueTurn* best_turn() const;
};

/// Goal ingestion: plain text (one goal per line, '#' comments) or CSV with
/// a `goal` header column (and optional `id` column), selected by file
/// extension.
std::vector<Goal> parse_goals_file(const std::string& path);

void chain_to_jsonl(const PromptChain& chain, int iterations, int endpoint_calls,
                    std::ostream& out);

struct StoredChain {
  Goal goal;
  std::vector<std::string> prompts;
  ChainStatus status = ChainStatus::InProgress;
};

StoredChain read_chain_jsonl(const std::string& path);

}  // namespace meea
