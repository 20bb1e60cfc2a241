#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaspan/grad_check.hpp"
#include "adaspan/local_attention.hpp"

namespace adaspan {

// Self-contained numerical checks shared by the CLI `gradcheck` command and
// the test suites. All run in 64-bit.

struct NamedReport {
  std::string target;
  GradCheckReport report;
};

/// Finite-difference check of every parameter group (x, query, key, value,
/// both embedding tables, spans) of an adaptive layer on a 1x2x5x5 input.
/// Spans are drawn at least 0.05 away from the ramp kinks.
GradCheckReport check_attention_gradients(std::uint64_t seed, double tolerance = 1e-4);

/// Same check for the fixed-span variant.
GradCheckReport check_fixed_attention_gradients(std::uint64_t seed, double tolerance = 1e-4);

/// Mask values wrt z through create_adaptive_mask.
GradCheckReport check_mask_gradients(std::uint64_t seed, double tolerance = 1e-6);

/// One report per tensor_core op: add, sub, mul, div, exp, relu, clamp,
/// sum, matmul, linear, unfold, conv2d, batch_norm, softmax_masked,
/// avg_pool2d, global_avg_pool, cross_entropy.
std::vector<NamedReport> check_tensor_core_gradients(std::uint64_t seed, double tolerance = 1e-5);

/// Random layer configuration used by the oracle sweep.
struct OracleCase {
  AttentionLayerConfig config;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
};

/// `count` configurations cycling over S in {4, 8}, heads in {1, 2, 4},
/// extents {3, 5, 9} and both variants.
std::vector<OracleCase> oracle_cases(std::size_t count, std::uint64_t seed);

/// max |fast - naive| over one case.
double oracle_error(const OracleCase& c);

/// Adaptive layer whose masks are all ones vs the fixed layer of the same
/// extent and weights: max absolute output difference.
double saturation_error(std::uint64_t seed);

}  // namespace adaspan
