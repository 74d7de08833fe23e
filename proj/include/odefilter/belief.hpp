#pragma once

#include <string>

#include "odefilter/errors.hpp"
#include "odefilter/linalg.hpp"

namespace odefilter {

/// Gaussian state belief N(mean, cov) at one grid point.
struct GaussBelief {
  Vector mean;
  Matrix cov;

  [[nodiscard]] Index dim() const { return mean.size(); }
};

/// Layout of the stacked state [X⁽¹⁾; X⁽²⁾; …; X⁽q+1⁾] with blocks of size d.
struct StateLayout {
  Index d = 0;
  Index q = 0;

  [[nodiscard]] Index state_dim() const { return (q + 1) * d; }

  /// Selector of derivative block `block` (0-based: 0 is the solution itself).
  [[nodiscard]] Matrix selector(Index block) const {
    if (block < 0 || block > q) {
      throw Error(ErrorKind::kInvalidArgument, "derivative block " + std::to_string(block) +
                                                   " does not exist for q = " + std::to_string(q));
    }
    Matrix sel = Matrix::Zero(d, state_dim());
    sel.block(0, block * d, d, d).setIdentity();
    return sel;
  }
  [[nodiscard]] Matrix C() const { return selector(0); }
  [[nodiscard]] Matrix Cdot() const { return selector(1); }
};

}  // namespace odefilter
