#include <cmath>
#include <vector>

#include "warpbench/model_state.hpp"
#include "warpbench/models.hpp"
#include "warpbench/rng.hpp"

namespace warpbench {

namespace bpr_detail {

namespace {
double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
double sq(const std::vector<double>& a) { return dot(a, a); }
}  // namespace

double triple_loss(const std::vector<double>& p, const std::vector<double>& qi,
                   const std::vector<double>& qj, double bi, double bj,
                   double reg) {
  double s = dot(p, qi) + bi - dot(p, qj) - bj;
  // -ln sigma(s), written via log1p for stability on both tails
  double nll = s > 0.0 ? std::log1p(std::exp(-s)) : -s + std::log1p(std::exp(s));
  return nll + 0.5 * reg * (sq(p) + sq(qi) + sq(qj) + bi * bi + bj * bj);
}

void triple_grad(const std::vector<double>& p, const std::vector<double>& qi,
                 const std::vector<double>& qj, double bi, double bj,
                 double reg, std::vector<double>& gp, std::vector<double>& gqi,
                 std::vector<double>& gqj, double& gbi, double& gbj) {
  std::size_t k = p.size();
  double s = dot(p, qi) + bi - dot(p, qj) - bj;
  double w = 1.0 / (1.0 + std::exp(s));  // sigma(-s)
  gp.resize(k);
  gqi.resize(k);
  gqj.resize(k);
  for (std::size_t f = 0; f < k; ++f) {
    gp[f] = -w * (qi[f] - qj[f]) + reg * p[f];
    gqi[f] = -w * p[f] + reg * qi[f];
    gqj[f] = w * p[f] + reg * qj[f];
  }
  gbi = -w + reg * bi;
  gbj = w + reg * bj;
}

}  // namespace bpr_detail

TrainedModel fit_bprmf(DatasetPtr train, const ModelConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  const nlohmann::json& hp = cfg.hyperparameters;
  const std::size_t factors = hp["factors"].get<std::size_t>();
  const double lr = hp["learning_rate"].get<double>();
  const double reg = hp["regularization"].get<double>();
  const std::size_t epochs = hp["epochs"].get<std::size_t>();
  if (hp.contains("seed")) seed = hp["seed"].get<std::uint64_t>();

  const Csr& m = train->matrix;
  const std::size_t n_users = m.n_rows;
  const std::size_t n_items = m.n_cols;
  if (n_items < 2) throw ModelError("bprmf: needs at least 2 items");

  std::vector<double> p(n_users * factors), q(n_items * factors);
  std::vector<double> bias(n_items, 0.0);
  {
    Rng init(derive_seed(seed, "bprmf-init", 0));
    for (double& v : p) v = init.normal() * 0.1;
    for (double& v : q) v = init.normal() * 0.1;
  }

  Rng sampler(derive_seed(seed, "bprmf-sgd", 0));
  constexpr int kRetryCap = 100;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t u = 0; u < n_users; ++u) {
      for (std::size_t pos = m.indptr[u]; pos < m.indptr[u + 1]; ++pos) {
        ItemIndex i = m.indices[pos];

        // negative sampling with a bounded retry budget; near-complete
        // rows skip the example instead of spinning
        ItemIndex j = 0;
        bool found = false;
        for (int attempt = 0; attempt < kRetryCap; ++attempt) {
          j = static_cast<ItemIndex>(sampler.bounded(n_items));
          if (!m.contains(u, j)) {
            found = true;
            break;
          }
        }
        if (!found) continue;

        double* pu = p.data() + u * factors;
        double* qi = q.data() + static_cast<std::size_t>(i) * factors;
        double* qj = q.data() + static_cast<std::size_t>(j) * factors;

        double s = bias[i] - bias[j];
        for (std::size_t f = 0; f < factors; ++f) s += pu[f] * (qi[f] - qj[f]);
        double w = 1.0 / (1.0 + std::exp(s));  // sigma(-s)

        for (std::size_t f = 0; f < factors; ++f) {
          double puf = pu[f], qif = qi[f], qjf = qj[f];
          pu[f] += lr * (w * (qif - qjf) - reg * puf);
          qi[f] += lr * (w * puf - reg * qif);
          qj[f] += lr * (-w * puf - reg * qjf);
        }
        bias[i] += lr * (w - reg * bias[i]);
        bias[j] += lr * (-w - reg * bias[j]);
      }
    }

    // divergence check once per epoch on a cheap summary
    double probe = bias[0];
    for (std::size_t f = 0; f < factors; ++f) probe += p[f] + q[f];
    if (!std::isfinite(probe)) {
      throw ModelError("bprmf: parameters diverged at epoch " +
                       std::to_string(epoch + 1) +
                       "; lower the learning rate");
    }
  }

  for (double v : p) {
    if (!std::isfinite(v)) throw ModelError("bprmf: non-finite user factors");
  }
  for (double v : q) {
    if (!std::isfinite(v)) throw ModelError("bprmf: non-finite item factors");
  }
  for (double v : bias) {
    if (!std::isfinite(v)) throw ModelError("bprmf: non-finite item biases");
  }

  nlohmann::json stored = hp;
  stored["seed"] = seed;
  auto model = std::make_shared<BprMfModel>(std::move(stored), factors,
                                            std::move(p), std::move(q),
                                            std::move(bias));
  return {std::move(model), std::move(train)};
}

}  // namespace warpbench
