#include "tokenprobe/templates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tokenprobe/error.hpp"
#include "tokenprobe/log.hpp"
#include "tokenprobe/rng.hpp"

namespace tokenprobe {
namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LabeledRow {
  const std::vector<double>* x;
  bool positive;
};

class LogisticModel {
 public:
  explicit LogisticModel(std::size_t dim) : w_(dim, 0.0) {}

  double score(const std::vector<double>& x) const {
    double s = b_;
    for (std::size_t i = 0; i < w_.size(); ++i) s += w_[i] * x[i];
    return s;
  }

  double mean_loss(const std::vector<LabeledRow>& rows) const {
    double total = 0.0;
    for (const auto& r : rows) {
      const double s = score(*r.x);
      total += r.positive ? softplus(-s) : softplus(s);
    }
    return total / static_cast<double>(rows.size());
  }

  void step(const std::vector<LabeledRow>& rows, std::span<const std::size_t> batch, double lr) {
    std::vector<double> gw(w_.size(), 0.0);
    double gb = 0.0;
    for (std::size_t idx : batch) {
      const auto& r = rows[idx];
      const double g = sigmoid(score(*r.x)) - (r.positive ? 1.0 : 0.0);
      for (std::size_t i = 0; i < w_.size(); ++i) gw[i] += g * (*r.x)[i];
      gb += g;
    }
    const double scale = lr / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < w_.size(); ++i) w_[i] -= scale * gw[i];
    b_ -= scale * gb;
  }

  const std::vector<double>& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  std::vector<double> w_;
  double b_ = 0.0;
};

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> inv_std;

  std::vector<double> apply(const Vector& v) const {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (static_cast<double>(v[i]) - mean[i]) * inv_std[i];
    return out;
  }
};

Standardizer fit_standardizer(const SamplePools& pools, std::size_t dim, bool enabled) {
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  if (!enabled) return s;
  std::vector<double> sq(dim, 0.0);
  std::size_t n = 0;
  auto add = [&](const std::vector<Sample>& xs) {
    for (const auto& x : xs) {
      for (std::size_t i = 0; i < dim; ++i) {
        s.mean[i] += x.vector[i];
        sq[i] += static_cast<double>(x.vector[i]) * x.vector[i];
      }
      ++n;
    }
  };
  add(pools.positives);
  add(pools.negatives);
  for (std::size_t i = 0; i < dim; ++i) {
    s.mean[i] /= static_cast<double>(n);
    const double var = sq[i] / static_cast<double>(n) - s.mean[i] * s.mean[i];
    s.inv_std[i] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

// Maps the model trained on standardized inputs back to raw feature space.
ConceptTemplate to_template(const LogisticModel& model, const Standardizer& s, LabelId concept_id) {
  ConceptTemplate t;
  t.concept_id = concept_id;
  t.rule = DecisionRule::hyperplane;
  t.direction.resize(model.weights().size());
  double offset = model.bias();
  for (std::size_t i = 0; i < t.direction.size(); ++i) {
    const double w = model.weights()[i] * s.inv_std[i];
    t.direction[i] = static_cast<float>(w);
    offset -= w * s.mean[i];
  }
  // w.z + offset >= 0  <=>  w.z >= -offset
  t.threshold = -offset;
  return t;
}

template <typename Get>
std::vector<std::size_t> top_by_score(const ConceptTemplate& tmpl, std::size_t n, std::size_t count, Get get) {
  if (count > n) {
    log_warning("mine_hard_negatives: asked for " + std::to_string(count) + " of " + std::to_string(n) +
                " negatives; returning all");
    count = n;
  }
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = project(tmpl, get(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(count);
  return order;
}

}  // namespace

double project(const ConceptTemplate& tmpl, std::span<const float> z) {
  if (z.size() != tmpl.direction.size()) {
    fail(ErrorCode::dimension_mismatch, "vector has dimension " + std::to_string(z.size()) + ", template has " +
                                            std::to_string(tmpl.direction.size()));
  }
  const double d = dot(tmpl.direction, z);
  if (tmpl.rule == DecisionRule::hyperplane) return d;
  const double nz = norm(z);
  if (nz == 0.0) fail(ErrorCode::degenerate_input, "zero vector under the cosine rule");
  const double na = norm(tmpl.direction);
  if (na == 0.0) fail(ErrorCode::degenerate_direction, "cosine template has a zero direction");
  return std::clamp(d / (na * nz), -1.0, 1.0);
}

bool classify(const ConceptTemplate& tmpl, std::span<const float> z) { return project(tmpl, z) >= tmpl.threshold; }

std::vector<std::size_t> mine_hard_negatives(const ConceptTemplate& tmpl, std::span<const Sample> negatives,
                                             std::size_t count) {
  return top_by_score(tmpl, negatives.size(), count,
                      [&](std::size_t i) { return std::span<const float>(negatives[i].vector); });
}

std::vector<std::size_t> mine_hard_negatives(const ConceptTemplate& tmpl, std::span<const Vector> negatives,
                                             std::size_t count) {
  return top_by_score(tmpl, negatives.size(), count,
                      [&](std::size_t i) { return std::span<const float>(negatives[i]); });
}

ConceptTemplate fit_hyperplane(const SamplePools& pools, const TrainConfig& config, HyperplaneTrace* trace) {
  if (pools.positives.empty() || pools.negatives.empty()) {
    fail(ErrorCode::empty_concept, "concept " + std::to_string(pools.concept_id) + " needs at least one positive and one negative");
  }
  if (config.mining_rounds < 1 || config.epochs_per_round < 1 || config.batch_size < 1 ||
      !(config.learning_rate > 0) || !(config.neg_pos_ratio > 0)) {
    fail(ErrorCode::config_error, "training counts, learning rate and ratio must be positive");
  }
  const std::size_t dim = pools.positives.front().vector.size();
  auto check_dim = [&](const std::vector<Sample>& xs) {
    for (const auto& x : xs) {
      if (x.vector.size() != dim) fail(ErrorCode::dimension_mismatch, "pool vectors differ in dimension");
    }
  };
  check_dim(pools.positives);
  check_dim(pools.negatives);

  const Standardizer standardizer = fit_standardizer(pools, dim, config.standardize);
  std::vector<std::vector<double>> pos_x;
  std::vector<std::vector<double>> neg_x;
  pos_x.reserve(pools.positives.size());
  neg_x.reserve(pools.negatives.size());
  for (const auto& s : pools.positives) pos_x.push_back(standardizer.apply(s.vector));
  for (const auto& s : pools.negatives) neg_x.push_back(standardizer.apply(s.vector));

  const auto per_round = std::min(
      pools.negatives.size(),
      static_cast<std::size_t>(std::floor(config.neg_pos_ratio * static_cast<double>(pools.positives.size()))));
  const std::size_t n_neg = std::max<std::size_t>(per_round, 1);

  Rng rng(config.seed);
  LogisticModel model(dim);
  ConceptTemplate current = to_template(model, standardizer, pools.concept_id);

  for (int round = 0; round < config.mining_rounds; ++round) {
    const std::vector<std::size_t> chosen = round == 0 ? rng.choose(pools.negatives.size(), n_neg)
                                                       : mine_hard_negatives(current, pools.negatives, n_neg);
    std::vector<LabeledRow> rows;
    rows.reserve(pos_x.size() + chosen.size());
    for (const auto& x : pos_x) rows.push_back({&x, true});
    for (std::size_t i : chosen) rows.push_back({&neg_x[i], false});

    RoundTrace rt;
    rt.round = round;
    rt.positives = pos_x.size();
    rt.negatives = chosen.size();
    rt.losses.push_back(model.mean_loss(rows));

    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < config.epochs_per_round; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
        model.step(rows, std::span<const std::size_t>(order).subspan(start, len), config.learning_rate);
      }
      const double loss = model.mean_loss(rows);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::training_failure, "concept " + std::to_string(pools.concept_id) + ": loss diverged in round " +
                                              std::to_string(round) + ", epoch " + std::to_string(epoch));
      }
      if (loss > rt.losses.back() * (1.0 + 1e-12)) rt.loss_increased = true;
      rt.losses.push_back(loss);
    }

    current = to_template(model, standardizer, pools.concept_id);
    current.metadata.seed = config.seed;
    current.metadata.rounds = round + 1;
    current.metadata.epochs = config.epochs_per_round;
    if (trace) {
      rt.snapshot = current;
      trace->rounds.push_back(std::move(rt));
    }
  }
  return current;
}

ThresholdChoice search_threshold(std::span<const ScoredLabel> scores) {
  std::size_t total_pos = 0;
  for (const auto& s : scores) {
    if (std::isnan(s.score)) fail(ErrorCode::degenerate_input, "NaN score in threshold search");
    if (s.positive) ++total_pos;
  }
  if (total_pos == 0) fail(ErrorCode::undefined_f1, "threshold search needs at least one positive");

  std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });

  ThresholdChoice best{0.0, -1.0};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == t; ++i) {
      if (sorted[i].positive) {
        ++tp;
      } else {
        ++fp;
      }
    }
    const std::size_t fn = total_pos - tp;
    const double f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    // descending sweep: strict > keeps the largest threshold among ties
    if (f1 > best.f1) best = {t, f1};
  }
  return best;
}

ConceptTemplate fit_cosine(const SamplePools& support) {
  if (support.positives.empty()) {
    fail(ErrorCode::empty_concept, "concept " + std::to_string(support.concept_id) + " has no positive support");
  }
  const std::size_t dim = support.positives.front().vector.size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& s : support.positives) {
    if (s.vector.size() != dim) fail(ErrorCode::dimension_mismatch, "support vectors differ in dimension");
    for (std::size_t i = 0; i < dim; ++i) sum[i] += s.vector[i];
  }
  ConceptTemplate t;
  t.concept_id = support.concept_id;
  t.rule = DecisionRule::cosine;
  t.direction.resize(dim);
  const double n = static_cast<double>(support.positives.size());
  for (std::size_t i = 0; i < dim; ++i) t.direction[i] = static_cast<float>(sum[i] / n);
  if (norm(t.direction) == 0.0) {
    fail(ErrorCode::degenerate_direction, "positive support of concept " + std::to_string(support.concept_id) +
                                              " averages to the zero vector");
  }

  if (support.negatives.empty()) {
    double lowest = 1.0;
    for (const auto& s : support.positives) lowest = std::min(lowest, project(t, s.vector));
    t.threshold = lowest;
    return t;
  }
  std::vector<ScoredLabel> scored;
  scored.reserve(support.positives.size() + support.negatives.size());
  for (const auto& s : support.positives) scored.push_back({project(t, s.vector), true});
  for (const auto& s : support.negatives) scored.push_back({project(t, s.vector), false});
  t.threshold = search_threshold(scored).threshold;
  return t;
}

}  // namespace tokenprobe
