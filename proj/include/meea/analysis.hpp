#pragma once

#include <optional>
#include <string>
#include <vector>

#include "meea/chain.hpp"
#include "meea/clients.hpp"
#include "meea/scoring.hpp"

namespace meea {

/// Per-round dynamic-threshold diagnostic:
/// margin = 1 - response_tox - (prompt_sim + response_sim)/2.
/// Lower margin means a weaker effective safety boundary; the margin never
/// decides success, only the labeling rule does.
struct MarginRecord {
  int round = 1;
  double prompt_tox = 0.0;
  double response_tox = 0.0;
  double prompt_sim = 0.0;
  double response_sim = 0.0;
  double margin = 1.0;
  bool jailbroken = false;
};

double margin(double prompt_tox, double response_tox, double prompt_sim,
              double response_sim);

struct ReinsertionResult {
  std::vector<MarginRecord> records;
  std::optional<int> error_round;  // set when the endpoint failed mid-protocol
  std::string error_message;
};

/// n+1-round replay: rounds 1..n re-issue the chain prompts with the growing
/// history, round n+1 issues the raw goal with the full chain as context.
ReinsertionResult reinsertion_protocol(const Goal& goal,
                                       const std::vector<std::string>& chain_prompts,
                                       ModelEndpoint& target, ToxicityScorer& toxicity,
                                       SimilarityScorer& similarity,
                                       const RefusalCues& cues = RefusalCues());

void margin_records_to_jsonl(const std::vector<MarginRecord>& records, std::ostream& out);
std::vector<MarginRecord> margin_records_from_jsonl(const std::string& path);

/// One named signal matrix: rows are chains, columns are rounds, cells may
/// be empty for chains shorter than the widest one.
struct SignalMatrix {
  std::vector<std::string> chain_ids;
  std::vector<std::vector<std::optional<double>>> rows;
};

struct ChainSignals {
  std::string chain_id;
  std::vector<MarginRecord> records;
};

/// Writes prompt_sim / response_sim / prompt_tox / response_tox matrices plus
/// a margins matrix as CSV files under `dir`. Returns the written paths.
std::vector<std::string> export_csv(const std::vector<ChainSignals>& chains,
                                    const std::string& dir);

SignalMatrix read_matrix_csv(const std::string& path);

/// Standalone SVG heatmap over [0,1] with a linear color ramp; byte output
/// is deterministic for identical input.
void export_heatmap_svg(const std::string& matrix_csv_path, const std::string& svg_path);

}  // namespace meea
