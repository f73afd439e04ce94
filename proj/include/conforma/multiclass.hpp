#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "conforma/matrix.hpp"

namespace conforma {

/// Multi-class probabilistic classifier used by the cross-validation+
/// prediction sets. Kinds: "naive_bayes" (Gaussian), "knn" (vote fraction,
/// param k, default 5). Fits are order-invariant.
struct MulticlassSpec {
  std::string kind = "naive_bayes";
  std::map<std::string, double> params;
};

class FittedMulticlass {
 public:
  virtual ~FittedMulticlass() = default;
  /// Estimated P(Y = label | x).
  virtual double prob(std::span<const double> x, int label) const = 0;
};

using FittedMcPtr = std::shared_ptr<const FittedMulticlass>;

FittedMcPtr fit_multiclass(const MulticlassSpec& spec, const Matrix& x,
                           std::span<const int> labels, int n_classes);

}  // namespace conforma
