#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "warpbench/model_state.hpp"
#include "warpbench/models.hpp"

namespace warpbench {

void EaseModel::score_user(UserIndex u, std::vector<double>& out) const {
  const Csr& m = train_->matrix;
  std::size_t n = m.n_cols;
  out.assign(n, 0.0);
  Eigen::Map<Eigen::VectorXd> acc(out.data(), static_cast<Eigen::Index>(n));
  auto cols = m.row_indices(u);
  auto vals = m.row_values(u);
  for (std::size_t p = 0; p < cols.size(); ++p) {
    acc += vals[p] * bt_.col(cols[p]);
  }
}

void EaseModel::score_items(const std::vector<ItemIndex>& items,
                            std::vector<double>& out) const {
  std::size_t n = static_cast<std::size_t>(bt_.rows());
  out.assign(n, 0.0);
  Eigen::Map<Eigen::VectorXd> acc(out.data(), static_cast<Eigen::Index>(n));
  for (ItemIndex j : items) acc += bt_.col(j);
}

TrainedModel fit_ease(DatasetPtr train, const ModelConfig& cfg) {
  cfg.validate();
  const double l2 = cfg.hyperparameters["l2"].get<double>();
  std::size_t cap = 30000;
  if (cfg.hyperparameters.contains("dense_cap")) {
    cap = cfg.hyperparameters["dense_cap"].get<std::size_t>();
  }

  const Csr& m = train->matrix;
  const std::size_t n = m.n_cols;
  if (n > cap) {
    throw ModelError("ease: catalog size " + std::to_string(n) +
                     " exceeds dense cap " + std::to_string(cap));
  }
  if (n == 0) throw ModelError("ease: empty catalog");

  // Gram matrix G = X^T X, accumulated per user over the upper triangle.
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(n));
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    auto cols = m.row_indices(u);
    auto vals = m.row_values(u);
    for (std::size_t a = 0; a < cols.size(); ++a) {
      for (std::size_t b = a; b < cols.size(); ++b) {
        g(cols[a], cols[b]) += vals[a] * vals[b];
      }
    }
  }
  g.triangularView<Eigen::StrictlyLower>() =
      g.triangularView<Eigen::StrictlyUpper>().transpose();

  if (!g.allFinite()) throw ModelError("ease: non-finite Gram matrix");
  g.diagonal().array() += l2;

  // P = (G + lambda I)^-1 via in-place Cholesky; lambda > 0 makes the
  // matrix positive definite for any X.
  Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(g);
  if (llt.info() != Eigen::Success) {
    throw ModelError("ease: Cholesky factorization failed");
  }
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                static_cast<Eigen::Index>(n));
  llt.solveInPlace(p);

  // B = I - P diag(1/diag(P)): rescale columns in place, then zero the
  // diagonal exactly. bt holds B transposed for row-contiguous scoring.
  Eigen::VectorXd pdiag = p.diagonal();
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    p.col(j) *= -1.0 / pdiag(j);
    p(j, j) = 0.0;
  }
  p.transposeInPlace();

  if (!p.allFinite()) throw ModelError("ease: non-finite weight matrix");

  auto model =
      std::make_shared<EaseModel>(cfg.hyperparameters, train, std::move(p));
  return {std::move(model), std::move(train)};
}

}  // namespace warpbench
