#include "gestinv/frechet.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace gestinv {

namespace {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian fit(const MotionSequence& m) {
  const auto frames = static_cast<Eigen::Index>(m.frames());
  const auto dim = static_cast<Eigen::Index>(m.joints() * m.channels());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      m.values().data(), frames, dim);
  Gaussian g;
  g.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(frames - 1);
  return g;
}

// Symmetric PSD square root. Eigenvalues below the numerical-rank cutoff
// (dim * eps * largest) are rounding noise and are zeroed: short clips give
// rank-deficient covariances, and sqrt would turn 1e-17 noise into 1e-8.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double cutoff = static_cast<double>(m.rows()) * std::numeric_limits<double>::epsilon() *
                        lambda.cwiseAbs().maxCoeff();
  for (auto& v : lambda) v = v > cutoff ? std::sqrt(v) : 0.0;
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double stat_frechet(const MotionSequence& a, const MotionSequence& b) {
  if (a.frames() < 2 || b.frames() < 2) {
    throw std::invalid_argument("stat_frechet needs at least two frames per motion");
  }
  if (a.joints() != b.joints()) {
    throw std::invalid_argument("stat_frechet needs motions on the same skeleton");
  }
  const Gaussian ga = fit(a);
  const Gaussian gb = fit(b);

  // tr (S_a^{1/2} S_b S_a^{1/2})^{1/2} is the sum of singular values of
  // S_a^{1/2} S_b^{1/2}. Taking them from an SVD avoids squaring the small
  // eigenvalues, which otherwise costs ~1e-6 on ill-conditioned poses.
  const Eigen::MatrixXd m = sqrt_psd(ga.cov) * sqrt_psd(gb.cov);
  const double cross = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues().sum();

  const double mean_term = (ga.mean - gb.mean).squaredNorm();
  const double d = mean_term + ga.cov.trace() + gb.cov.trace() - 2.0 * cross;
  return d < 0.0 ? 0.0 : d;
}

}  // namespace gestinv
