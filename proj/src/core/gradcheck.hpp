#pragma once

#include <functional>
#include <span>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace vsod {

struct GradCheckCoord {
    Tensor tensor;      // leaf with requires_grad
    std::size_t index;  // flat coordinate within it
};

// Compares the recorded gradient of fn() against central differences at the
// given coordinates and returns the worst relative error
//   |analytic - cd| / max(|analytic|, |cd|, 1e-8).
// fn must be deterministic for fixed leaf values; finite checks are enabled
// for every evaluation so a non-finite intermediate is reported with the
// name of the op that produced it.
double grad_check(const std::function<Tensor()>& fn,
                  std::span<const GradCheckCoord> coords, double step);

// Uniformly sampled coordinates, per_tensor from each leaf.
std::vector<GradCheckCoord> sample_coords(std::span<const Tensor> leaves,
                                          int per_tensor, Rng& rng);

// Like sample_coords, but keeps the coordinate with the largest recorded
// gradient out of `candidates` draws per tensor. Central differences on a
// float32 forward pass carry an absolute noise floor, so end-to-end checks
// have to probe coordinates whose gradient rises above it.
// min_grad_frac drops picked coordinates whose |gradient| falls below that
// fraction of the tensor's own peak (they would measure noise).
std::vector<GradCheckCoord> sample_salient_coords(const std::function<Tensor()>& fn,
                                                  std::span<const Tensor> leaves,
                                                  int per_tensor, int candidates,
                                                  Rng& rng, double min_grad_frac = 0.0);

} // namespace vsod
