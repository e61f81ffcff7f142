#ifndef SMOOTHLAB_MODEL_HPP
#define SMOOTHLAB_MODEL_HPP

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smoothlab/errors.hpp"
#include "smoothlab/linalg.hpp"

namespace smoothlab {

using VectorField = std::function<Vector(double, const Vector&)>;
using MatrixField = std::function<Matrix(double, const Vector&)>;
using TimeMatrix = std::function<Matrix(double)>;

inline constexpr double kDefaultBetaEpsilon = 1e-8;

/// Coefficients of dX = A X dt + Sigma dW, dY = B X dt + obs_noise dV.
struct LinearGaussianSpec {
  TimeMatrix A;
  TimeMatrix B;
  TimeMatrix Sigma;
  TimeMatrix obs_noise;
  Vector initial_mean;
  Matrix initial_cov;
};

/// Raw ingredients of a signal/observation model; validated by ModelSpec.
struct ModelDefinition {
  std::string name;
  int dim_state = 0;
  int dim_obs = 0;
  int dim_noise = 0;
  int dim_obs_noise = 0;
  VectorField drift;
  MatrixField diffusion;
  VectorField sensor;
  TimeMatrix obs_noise;
  Vector initial_mean;
  Matrix initial_cov;
  /// sigma does not depend on x (needed by the KDE score).
  bool constant_diffusion = false;
  /// b == 0 identically (prior-only problems, time reversal).
  bool null_sensor = false;
  std::optional<LinearGaussianSpec> linear;
  double beta_epsilon = kDefaultBetaEpsilon;
};

/// Immutable, validated model
///
///   dX_t = a_t(X_t) dt + sigma_t(X_t) dW_t,   dY_t = b_t(X_t) dt + varsigma_t dV_t,
///
/// with X_0 ~ N(initial_mean, initial_cov) and Y_0 = 0.
class ModelSpec {
 public:
  explicit ModelSpec(ModelDefinition def) : def_(std::move(def)) { validate(); }

  const std::string& name() const { return def_.name; }
  int dim_state() const { return def_.dim_state; }
  int dim_obs() const { return def_.dim_obs; }
  int dim_noise() const { return def_.dim_noise; }
  int dim_obs_noise() const { return def_.dim_obs_noise; }

  Vector drift(double t, const Vector& x) const { return def_.drift(t, x); }
  Matrix diffusion(double t, const Vector& x) const { return def_.diffusion(t, x); }
  Vector sensor(double t, const Vector& x) const { return def_.sensor(t, x); }
  Matrix obs_noise(double t) const { return def_.obs_noise(t); }

  /// alpha_t(x) = sigma_t(x) sigma_t(x)'.
  Matrix alpha(double t, const Vector& x) const {
    const Matrix s = def_.diffusion(t, x);
    return symmetrized(s * s.transpose());
  }

  /// beta_t = varsigma_t varsigma_t'.
  Matrix beta(double t) const {
    const Matrix s = def_.obs_noise(t);
    return symmetrized(s * s.transpose());
  }

  /// beta_t^{-1}; re-checks the beta >= eps I bound at t.
  Matrix beta_inverse(double t) const {
    const Matrix b = beta(t);
    if (!(min_eigenvalue(b) >= def_.beta_epsilon)) {
      throw Error(ErrorCode::DegenerateObservationNoise,
                  "beta(t) fails beta >= eps I at t=" + std::to_string(t));
    }
    return b.ldlt().solve(Matrix::Identity(b.rows(), b.cols()));
  }

  const Vector& initial_mean() const { return def_.initial_mean; }
  const Matrix& initial_cov() const { return def_.initial_cov; }
  bool constant_diffusion() const { return def_.constant_diffusion; }
  bool null_sensor() const { return def_.null_sensor; }
  double beta_epsilon() const { return def_.beta_epsilon; }

  bool is_linear_gaussian() const { return def_.linear.has_value(); }
  const LinearGaussianSpec& linear() const {
    require(def_.linear.has_value(), ErrorCode::PreconditionFailed,
            "model '" + def_.name + "' is not linear-Gaussian");
    return *def_.linear;
  }

  const ModelDefinition& definition() const { return def_; }

 private:
  void validate() const {
    const auto dims_ok = [](int d) { return d >= 1 && d <= kMaxDim; };
    require(dims_ok(def_.dim_state) && dims_ok(def_.dim_obs) && dims_ok(def_.dim_noise) &&
                dims_ok(def_.dim_obs_noise),
            ErrorCode::DimensionMismatch, "model dimensions must lie in [1, kMaxDim]");
    require(def_.drift && def_.diffusion && def_.sensor && def_.obs_noise,
            ErrorCode::PreconditionFailed, "model callables must all be set");
    require(def_.beta_epsilon > 0.0, ErrorCode::PreconditionFailed, "beta epsilon must be > 0");
    require(def_.initial_mean.size() == def_.dim_state, ErrorCode::DimensionMismatch,
            "initial_mean has wrong length");
    require(def_.initial_cov.rows() == def_.dim_state && def_.initial_cov.cols() == def_.dim_state,
            ErrorCode::DimensionMismatch, "initial_cov has wrong shape");
    require((def_.initial_cov - def_.initial_cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
            ErrorCode::PreconditionFailed, "initial_cov must be symmetric");
    require(min_eigenvalue(def_.initial_cov) >= -1e-12, ErrorCode::PreconditionFailed,
            "initial_cov must be positive semidefinite");

    const Matrix s = def_.obs_noise(0.0);
    require(s.rows() == def_.dim_obs && s.cols() == def_.dim_obs_noise,
            ErrorCode::DimensionMismatch, "obs_noise has wrong shape");
    const Matrix b = symmetrized(s * s.transpose());
    require(min_eigenvalue(b) >= def_.beta_epsilon, ErrorCode::DegenerateObservationNoise,
            "beta = varsigma varsigma' is not >= eps I");

    const Vector x0 = def_.initial_mean;
    require(def_.drift(0.0, x0).size() == def_.dim_state, ErrorCode::DimensionMismatch,
            "drift returns wrong length");
    const Matrix sig = def_.diffusion(0.0, x0);
    require(sig.rows() == def_.dim_state && sig.cols() == def_.dim_noise,
            ErrorCode::DimensionMismatch, "diffusion returns wrong shape");
    require(def_.sensor(0.0, x0).size() == def_.dim_obs, ErrorCode::DimensionMismatch,
            "sensor returns wrong length");
  }

  ModelDefinition def_;
};

inline Matrix alpha_at(const ModelSpec& model, double t, const Vector& x) {
  return model.alpha(t, x);
}

/// Builds a linear-Gaussian model from time-dependent coefficient matrices.
inline ModelSpec make_linear_gaussian(std::string name, LinearGaussianSpec lg,
                                      bool null_sensor,
                                      double beta_epsilon = kDefaultBetaEpsilon) {
  const Matrix A0 = lg.A(0.0);
  const Matrix B0 = lg.B(0.0);
  const Matrix S0 = lg.Sigma(0.0);
  const Matrix V0 = lg.obs_noise(0.0);
  const int m = static_cast<int>(A0.rows());
  require(m >= 1 && m <= kMaxDim && A0.cols() == m, ErrorCode::DimensionMismatch,
          "A must be square m x m");
  require(B0.cols() == m && B0.rows() >= 1 && B0.rows() <= kMaxDim, ErrorCode::DimensionMismatch,
          "B must be n x m");
  require(S0.rows() == m && S0.cols() >= 1 && S0.cols() <= kMaxDim, ErrorCode::DimensionMismatch,
          "Sigma must be m x p");
  require(V0.rows() == B0.rows() && V0.cols() >= 1 && V0.cols() <= kMaxDim,
          ErrorCode::DimensionMismatch, "obs_noise must be n x q");

  ModelDefinition def;
  def.name = std::move(name);
  def.dim_state = m;
  def.dim_obs = static_cast<int>(B0.rows());
  def.dim_noise = static_cast<int>(S0.cols());
  def.dim_obs_noise = static_cast<int>(V0.cols());
  auto A = lg.A;
  auto B = lg.B;
  auto Sigma = lg.Sigma;
  def.drift = [A](double t, const Vector& x) -> Vector { return A(t) * x; };
  def.diffusion = [Sigma](double t, const Vector&) -> Matrix { return Sigma(t); };
  def.sensor = [B](double t, const Vector& x) -> Vector { return B(t) * x; };
  def.obs_noise = lg.obs_noise;
  def.initial_mean = lg.initial_mean;
  def.initial_cov = lg.initial_cov;
  def.constant_diffusion = true;
  def.null_sensor = null_sensor;
  def.beta_epsilon = beta_epsilon;
  def.linear = std::move(lg);
  return ModelSpec(std::move(def));
}

/// Constant-coefficient convenience overload.
inline ModelSpec make_linear_gaussian(std::string name, const Matrix& A, const Matrix& B,
                                      const Matrix& Sigma, const Matrix& obs_noise,
                                      const Vector& initial_mean, const Matrix& initial_cov,
                                      double beta_epsilon = kDefaultBetaEpsilon) {
  LinearGaussianSpec lg;
  lg.A = [A](double) { return A; };
  lg.B = [B](double) { return B; };
  lg.Sigma = [Sigma](double) { return Sigma; };
  lg.obs_noise = [obs_noise](double) { return obs_noise; };
  lg.initial_mean = initial_mean;
  lg.initial_cov = initial_cov;
  return make_linear_gaussian(std::move(name), std::move(lg), B.isZero(0.0), beta_epsilon);
}

/// Same model with a different Gaussian law for X_0.
inline ModelSpec with_initial_law(const ModelSpec& model, const Vector& mean, const Matrix& cov) {
  ModelDefinition def = model.definition();
  def.initial_mean = mean;
  def.initial_cov = cov;
  if (def.linear) {
    def.linear->initial_mean = mean;
    def.linear->initial_cov = cov;
  }
  return ModelSpec(std::move(def));
}

namespace detail {

inline Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

inline ModelSpec make_sine1d() {
  ModelDefinition def;
  def.name = "sine1d";
  def.dim_state = def.dim_obs = def.dim_noise = def.dim_obs_noise = 1;
  def.drift = [](double, const Vector& x) -> Vector { return scalar_vector(std::sin(x[0])); };
  def.diffusion = [](double, const Vector&) -> Matrix { return scalar_matrix(1.0); };
  def.sensor = [](double, const Vector& x) -> Vector { return scalar_vector(x[0]); };
  def.obs_noise = [](double) { return scalar_matrix(1.0); };
  def.initial_mean = scalar_vector(0.0);
  def.initial_cov = scalar_matrix(1.0);
  def.constant_diffusion = true;
  return ModelSpec(std::move(def));
}

}  // namespace detail

/// Named benchmark problems.
///
///   bm     a = 0,  sigma = 1,        b = 0, X_0 = 0
///   ou     a = -x, sigma = sqrt(2),  b = 0, X_0 ~ N(0, 1) (stationary)
///   lg1d   A = 0,  B = 1, Sigma = 1, varsigma = 1, X_0 ~ N(0, 1)
///   lg2d   A = rotation generator [[0,-1],[1,0]], B = [1 0], Sigma = I, X_0 ~ N(0, I)
///   sine1d a = sin x, sigma = 1, b = x, varsigma = 1, X_0 ~ N(0, 1)
inline std::map<std::string, ModelSpec> builtin_benchmarks() {
  std::map<std::string, ModelSpec> out;
  const Matrix one = scalar_matrix(1.0);
  const Matrix zero = scalar_matrix(0.0);
  out.emplace("bm", make_linear_gaussian("bm", zero, zero, one, one, scalar_vector(0.0), zero));
  out.emplace("ou", make_linear_gaussian("ou", scalar_matrix(-1.0), zero,
                                         scalar_matrix(std::sqrt(2.0)), one, scalar_vector(0.0),
                                         one));
  out.emplace("lg1d", make_linear_gaussian("lg1d", zero, one, one, one, scalar_vector(0.0), one));
  Matrix B2(1, 2);
  B2 << 1.0, 0.0;
  out.emplace("lg2d", make_linear_gaussian("lg2d", detail::mat2(0.0, -1.0, 1.0, 0.0), B2,
                                           Matrix::Identity(2, 2), one, Vector::Zero(2),
                                           Matrix::Identity(2, 2)));
  out.emplace("sine1d", detail::make_sine1d());
  return out;
}

inline ModelSpec benchmark(const std::string& name) {
  auto all = builtin_benchmarks();
  auto it = all.find(name);
  if (it == all.end()) throw Error(ErrorCode::UnknownBenchmark, "no benchmark named '" + name + "'");
  return it->second;
}

inline std::vector<std::string> benchmark_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : builtin_benchmarks()) names.push_back(k);
  return names;
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_MODEL_HPP
