#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meea/rng.hpp"

namespace meea {

/// Cooling schedule: start at t0, multiply by eta each epoch, run k_inner
/// candidate steps per epoch, stop once the temperature is <= t_min.
struct AnnealSchedule {
  AnnealSchedule() = default;
  AnnealSchedule(double t0, double t_min, double eta, int k_inner);

  double t0 = 1.0;
  double t_min = 0.05;
  double eta = 0.85;
  int k_inner = 6;

  void validate() const;

  /// Number of temperature epochs the loop will execute.
  int epoch_count() const;

  /// Energy-oracle calls optimize() will make: one per inner step plus one
  /// for the initial prompt.
  int expected_evaluations() const { return epoch_count() * k_inner + 1; }
};

/// One perturbation step. uniform_draw is present only when the
/// probabilistic branch was consulted (delta <= 0).
struct AnnealStep {
  double temperature = 0.0;
  int candidate_id = 0;
  double energy = 0.0;
  double delta = 0.0;
  bool accepted = false;
  bool new_best = false;
  std::optional<double> uniform_draw;
  bool degenerate = false;  // perturbation kept returning the input
};

struct AnnealTrace {
  double initial_energy = 0.0;
  std::vector<AnnealStep> steps;
  int evaluations = 0;
};

struct AnnealOutcome {
  std::string best_prompt;
  double best_energy = 0.0;
  AnnealTrace trace;
};

/// Thrown when the energy oracle fails mid-run; carries what was searched
/// up to the failure.
class anneal_abort : public std::runtime_error {
 public:
  anneal_abort(const std::string& what, AnnealTrace partial)
      : std::runtime_error(what), partial_trace(std::move(partial)) {}
  AnnealTrace partial_trace;
};

using PerturbFn = std::function<std::string(const std::string&, Rng&)>;
using EnergyFn = std::function<double(const std::string&)>;

/// Metropolis acceptance: accept on improvement, otherwise with probability
/// exp(delta/temperature) against the supplied uniform draw.
bool accept_candidate(double delta, double temperature, double uniform_draw);

double cool(double temperature, const AnnealSchedule& schedule);

/// Simulated-annealing search over prompt text. Maximizes energy. Fully
/// reproducible from rng_seed; the trace records every evaluated candidate.
AnnealOutcome optimize(const std::string& initial_prompt,
                       const AnnealSchedule& schedule, const PerturbFn& perturb,
                       const EnergyFn& energy_oracle, std::uint64_t rng_seed,
                       int perturb_retry_budget = 8);

/// One step record per line; schema documented in the README. A non-negative
/// iteration labels every line when one optimize call is part of a larger run.
void trace_to_jsonl(const AnnealTrace& trace, std::ostream& out, int iteration = -1);

}  // namespace meea
