#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <atrl/eval.hpp>
#include <atrl/trainer.hpp>

namespace atrl {

struct SweepPoint {
  double value = 0.0;  // the swept λ
  double mean_top1 = 0.0;
  std::vector<double> per_seed;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["axis"] = axis;
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : points) {
      nlohmann::ordered_json pj;
      pj["value"] = p.value;
      pj["mean_top1"] = p.mean_top1;
      pj["per_seed"] = p.per_seed;
      j["points"].push_back(std::move(pj));
    }
    return j;
  }
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

inline double train_and_score(const TrainConfig& cfg, Loader& loader) {
  TrainResult r = train_model(cfg, loader);
  const EvalReport rep = evaluate(r.params, r.model, loader, Split::Test,
                                  EvalMode::TrainedHead);
  return rep.top_k.at(1);
}

}  // namespace detail

// One run per (λ, seed); identical seeds share identical inits across λ
// cells, so the λ axis is the only moving part.
inline SweepResult lambda_sweep(const TrainConfig& base, Loader& loader,
                                const std::vector<double>& lambdas,
                                const std::vector<std::uint64_t>& seeds) {
  if (lambdas.size() < 2) throw Error("lambda_sweep needs at least 2 values");
  if (seeds.empty()) throw Error("lambda_sweep needs at least 1 seed");
  SweepResult out;
  out.axis = "lambda";
  for (double lambda : lambdas) {
    SweepPoint p;
    p.value = lambda;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.lambda = lambda;
      cfg.seed = seed;
      p.per_seed.push_back(detail::train_and_score(cfg, loader));
    }
    p.mean_top1 = detail::mean_of(p.per_seed);
    out.points.push_back(std::move(p));
  }
  return out;
}

struct ResolutionPoint {
  std::size_t resolution = 0;
  std::vector<double> ce_per_seed;
  std::vector<double> proposed_per_seed;
  double mean_ce = 0.0;
  double mean_proposed = 0.0;
  double delta = 0.0;  // mean_proposed − mean_ce
};

struct ResolutionSweep {
  std::vector<ResolutionPoint> points;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["axis"] = "resolution";
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : points) {
      nlohmann::ordered_json pj;
      pj["resolution"] = p.resolution;
      pj["ce"] = {{"mean", p.mean_ce}, {"per_seed", p.ce_per_seed}};
      pj["proposed"] = {{"mean", p.mean_proposed},
                        {"per_seed", p.proposed_per_seed}};
      pj["delta"] = p.delta;
      j["points"].push_back(std::move(pj));
    }
    return j;
  }

  std::string table() const {
    std::ostringstream out;
    out << "resolution  ce-only  proposed  delta\n";
    for (const auto& p : points) {
      out << std::setw(10) << p.resolution << "  " << std::setw(7)
          << format_percent(p.mean_ce) << "  " << std::setw(8)
          << format_percent(p.mean_proposed) << "  " << std::showpos
          << std::fixed << std::setprecision(2) << p.delta << std::noshowpos
          << "\n";
      out.unsetf(std::ios::fixed);
    }
    return out.str();
  }
};

// CE-only (λ=0) against the proposed loss at `proposed_lambda`, per
// resolution, averaged over seeds.
inline ResolutionSweep resolution_sweep(const TrainConfig& base, Loader& loader,
                                        const std::vector<std::size_t>& resolutions,
                                        double proposed_lambda,
                                        const std::vector<std::uint64_t>& seeds) {
  if (resolutions.empty()) throw Error("resolution_sweep needs resolutions");
  if (seeds.empty()) throw Error("resolution_sweep needs at least 1 seed");
  ResolutionSweep out;
  for (std::size_t res : resolutions) {
    ResolutionPoint p;
    p.resolution = res;
    for (std::uint64_t seed : seeds) {
      TrainConfig ce = base;
      ce.resolution = res;
      ce.lambda = 0.0;
      ce.seed = seed;
      p.ce_per_seed.push_back(detail::train_and_score(ce, loader));
      TrainConfig prop = base;
      prop.resolution = res;
      prop.lambda = proposed_lambda;
      prop.seed = seed;
      p.proposed_per_seed.push_back(detail::train_and_score(prop, loader));
    }
    p.mean_ce = detail::mean_of(p.ce_per_seed);
    p.mean_proposed = detail::mean_of(p.proposed_per_seed);
    p.delta = p.mean_proposed - p.mean_ce;
    out.points.push_back(std::move(p));
  }
  return out;
}

}  // namespace atrl
