#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfeps {

using Index = std::int64_t;

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Vector3 = Vec3<double>;
using Matrix3 = Mat3<double>;
using Points = Eigen::Matrix3Xd;

enum class ErrorKind {
  InvalidInput,
  DegenerateInput,
  Infeasible,
  NumericalFailure,
  DuplicateSite,
  NonManifoldOutput,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Collected non-fatal messages of a stage.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  void merge(const Diagnostics& other) {
    warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
  }
};

/// Worker count used when a caller passes 0: RFEPS_THREADS if set, else hardware concurrency.
int default_thread_count();

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// visited exactly once; the body must only write to per-index state.
void parallel_for(Index count, int threads, const std::function<void(Index)>& body);

}  // namespace rfeps
