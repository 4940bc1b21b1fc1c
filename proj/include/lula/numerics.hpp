#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace lula {

/// Dense row-major matrix of doubles. Batches are stored one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// xoshiro256** seeded through splitmix64.
///
/// The stream depends only on the seed, so results are reproducible across
/// platforms. Normal deviates use the Box-Muller transform and cache the
/// second deviate of each pair. Not thread-safe; derive() independent
/// generators for parallel work.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double low, double high);
  double normal();
  /// Uniform integer on [0, bound).
  std::uint64_t below(std::uint64_t bound);

  /// Independent generator for sub-stream `stream`; pure function of (seed, stream).
  Rng derive(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

/// Plain Cholesky factor L with L*L^T = a. Throws NotPositiveDefinite on a
/// non-positive pivot and InvalidArgument when `a` is not square and symmetric
/// within 1e-10 relative.
Matrix cholesky(const Matrix& a);

/// Cholesky under the curvature jitter policy: try `a` as is, then
/// a + 1e-8 * mean(diag(a)) * I, then a + 1e-6 * mean(diag(a)) * I.
/// `jitter_used`, when given, receives the diagonal shift that succeeded.
Matrix cholesky_jittered(const Matrix& a, double* jitter_used = nullptr);

/// Solves a*x = b for symmetric positive definite a (jitter policy applies).
Matrix solve_psd(const Matrix& a, const Matrix& b);

/// Solves L*L^T*x = b given the lower factor L.
Matrix cholesky_solve(const Matrix& lower, const Matrix& b);

/// Kronecker product; entry [(i*b.rows()+k), (j*b.cols()+l)] = a(i,j)*b(k,l).
Matrix kron(const Matrix& a, const Matrix& b);

/// Column-major vectorization (stacks columns). kron(A,B)*vec(X) = vec(B*X*A^T).
Vector vec(const Matrix& x);

/// Draws mean + chol_cov * z with z standard normal, `count` times.
std::vector<Vector> sample_gaussian(const Vector& mean, const Matrix& chol_cov, Rng& rng,
                                    std::size_t count);

/// Biased (1/n) sample covariance of row-stacked samples.
Matrix sample_covariance(const std::vector<Vector>& samples);

/// Number of worker threads: LULA_LAB_THREADS when set and positive, else
/// the hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, count) across worker_count() threads with a static
/// partition. Bodies must write to disjoint outputs; reductions happen afterwards
/// in index order so results do not depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

double logistic(double x);
/// Numerically stable log(1 + exp(x)).
double softplus(double x);
/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace lula
