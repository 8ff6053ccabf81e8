#include "meea/annealer.hpp"

#include <cmath>

#include "json.hpp"

namespace meea {

AnnealSchedule::AnnealSchedule(double t0_, double t_min_, double eta_, int k_inner_)
    : t0(t0_), t_min(t_min_), eta(eta_), k_inner(k_inner_) {
  validate();
}

void AnnealSchedule::validate() const {
  if (!(t0 > 0)) throw std::invalid_argument("schedule.t0 must be > 0");
  if (!(t_min > 0)) throw std::invalid_argument("schedule.t_min must be > 0");
  if (!(t_min < t0)) throw std::invalid_argument("schedule.t_min must be < t0");
  if (!(eta > 0 && eta < 1)) {
    throw std::invalid_argument("schedule.eta must lie strictly inside (0,1)");
  }
  if (k_inner < 1) throw std::invalid_argument("schedule.k_inner must be >= 1");
}

int AnnealSchedule::epoch_count() const {
  // Mirrors the loop arithmetic exactly (repeated multiplication), so the
  // count matches what optimize() executes even at FP boundaries.
  int epochs = 0;
  for (double t = t0; t > t_min; t = eta * t) ++epochs;
  return epochs;
}

bool accept_candidate(double delta, double temperature, double uniform_draw) {
  if (!(temperature > 0)) {
    throw std::invalid_argument("temperature must be > 0");
  }
  if (delta > 0) return true;
  return std::exp(delta / temperature) > uniform_draw;
}

double cool(double temperature, const AnnealSchedule& schedule) {
  return schedule.eta * temperature;
}

AnnealOutcome optimize(const std::string& initial_prompt,
                       const AnnealSchedule& schedule, const PerturbFn& perturb,
                       const EnergyFn& energy_oracle, std::uint64_t rng_seed,
                       int perturb_retry_budget) {
  schedule.validate();
  if (perturb_retry_budget < 1) {
    throw std::invalid_argument("perturb_retry_budget must be >= 1");
  }

  Rng rng(rng_seed);
  AnnealTrace trace;

  auto evaluate = [&](const std::string& candidate) {
    try {
      double e = energy_oracle(candidate);
      ++trace.evaluations;
      return e;
    } catch (const anneal_abort&) {
      throw;
    } catch (const std::exception& ex) {
      throw anneal_abort(std::string("energy oracle failed: ") + ex.what(),
                         std::move(trace));
    }
  };

  std::string current = initial_prompt;
  double current_energy = evaluate(current);
  trace.initial_energy = current_energy;

  std::string best = current;
  double best_energy = current_energy;

  int candidate_id = 0;
  for (double temperature = schedule.t0; temperature > schedule.t_min;
       temperature = cool(temperature, schedule)) {
    for (int k = 0; k < schedule.k_inner; ++k) {
      std::string candidate = perturb(current, rng);
      bool degenerate = false;
      for (int retry = 1; candidate == current && retry < perturb_retry_budget; ++retry) {
        candidate = perturb(current, rng);
      }
      if (candidate == current) degenerate = true;

      double candidate_energy = evaluate(candidate);
      double delta = candidate_energy - current_energy;

      AnnealStep step;
      step.temperature = temperature;
      step.candidate_id = ++candidate_id;
      step.energy = candidate_energy;
      step.delta = delta;
      step.degenerate = degenerate;

      bool accepted = false;
      if (degenerate) {
        // Budget exhausted on an unchanged input: record a no-op rejection
        // so the evaluation count stays exact.
        accepted = false;
      } else if (delta > 0) {
        accepted = true;
      } else {
        double draw = rng.next_double();
        step.uniform_draw = draw;
        accepted = accept_candidate(delta, temperature, draw);
      }
      step.accepted = accepted;

      if (accepted) {
        current = candidate;
        current_energy = candidate_energy;
        if (candidate_energy > best_energy) {
          best = candidate;
          best_energy = candidate_energy;
          step.new_best = true;
        }
      }
      trace.steps.push_back(std::move(step));
    }
  }

  return AnnealOutcome{std::move(best), best_energy, std::move(trace)};
}

void trace_to_jsonl(const AnnealTrace& trace, std::ostream& out, int iteration) {
  nlohmann::json header;
  header["type"] = "anneal_start";
  if (iteration >= 0) header["iter"] = iteration;
  header["initial_energy"] = trace.initial_energy;
  header["evaluations"] = trace.evaluations;
  out << header.dump() << "\n";
  for (const auto& s : trace.steps) {
    nlohmann::json j;
    j["type"] = "step";
    if (iteration >= 0) j["iter"] = iteration;
    j["temperature"] = s.temperature;
    j["candidate_id"] = s.candidate_id;
    j["energy"] = s.energy;
    j["delta"] = s.delta;
    j["accepted"] = s.accepted;
    j["new_best"] = s.new_best;
    if (s.uniform_draw) {
      j["uniform_draw"] = *s.uniform_draw;
    } else {
      j["uniform_draw"] = nullptr;
    }
    j["degenerate"] = s.degenerate;
    out << j.dump() << "\n";
  }
}

}  // namespace meea
