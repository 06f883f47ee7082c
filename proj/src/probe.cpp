#include "nettrim/datagen.hpp"

#include <Eigen/Dense>

#include <stdexcept>

namespace nettrim {

// Multinomial logistic regression on raw pixels with full-batch gradient
// descent + momentum.  Pure Eigen double, no tensor-engine involvement: this
// is the independent difficulty oracle.
double linear_probe_accuracy(const TaskData& task, int iterations) {
  const auto& tr = task.train;
  const auto& te = task.test;
  if (tr.size() == 0 || te.size() == 0) {
    throw std::invalid_argument("linear_probe: empty dataset");
  }
  const Eigen::Index n = tr.size();
  const Eigen::Index d = tr.images.numel() / n;
  const Eigen::Index c = tr.num_classes;

  Eigen::MatrixXd x(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      x(i, j) = static_cast<double>(tr.images.at(i * d + j));
    }
    x(i, d) = 1.0;  // bias column
  }
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) y(i, tr.labels[static_cast<std::size_t>(i)]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d + 1, c);
  Eigen::MatrixXd vel = Eigen::MatrixXd::Zero(d + 1, c);
  const double lr = 0.5, momentum = 0.9, l2 = 1e-4;
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd z = x * w;                                     // [n, c]
    Eigen::VectorXd zmax = z.rowwise().maxCoeff();                 // stability
    Eigen::MatrixXd e = (z.colwise() - zmax).array().exp();
    Eigen::VectorXd denom = e.rowwise().sum();
    Eigen::MatrixXd p = e.array().colwise() / denom.array();
    Eigen::MatrixXd grad = x.transpose() * (p - y) / static_cast<double>(n) + l2 * w;
    vel = momentum * vel - lr * grad;
    w += vel;
  }

  const Eigen::Index m = te.size();
  Eigen::Index hits = 0;
  Eigen::RowVectorXd row(d + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      row(j) = static_cast<double>(te.images.at(i * d + j));
    }
    row(d) = 1.0;
    Eigen::Index best;
    (row * w).maxCoeff(&best);
    if (best == te.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m);
}

}  // namespace nettrim
