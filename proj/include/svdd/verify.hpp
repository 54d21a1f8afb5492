#pragma once

#include <string>
#include <vector>

namespace svdd::verify {

struct GroupResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;  // worst-case error for the group
  std::string detail;
};

struct FaultInjection {
  bool svd_backward_sign = false;  // negates the analytic SVD gradient before comparison
};

// Finite-difference check of every differentiable op, worst relative error.
GroupResult check_autograd_fd(int seeds_per_op);

// Custom SVD backward vs. central finite differences of a sign-canonicalized
// V-functional, on random well-conditioned matrices (sizes up to 16x16,
// singular-value gaps > 0.1), split across the two gradient branches.
GroupResult check_svd_backward(int cases_per_branch, const FaultInjection& fault = {});

// Rank-k reconstruction error against the tail singular energy of an
// independent full-SVD oracle (Eigen JacobiSVD).
GroupResult check_eckart_young(int cases);

// Alignment: brute-force argmax equivalence, permutation invariance, sign
// invariance, over random teacher/student vector sets.
GroupResult check_alignment(int cases);

// Clipping factor formula, range, and pass-through behavior.
GroupResult check_clipping();

// Self-distillation fixed point: a byte-copied student reports ~0 transfer
// loss and ~0 transfer gradient.
GroupResult check_fixed_point();

std::vector<GroupResult> run_all(const FaultInjection& fault = {});

// 0 when everything passes, 2 on any numerical-verification failure.
int exit_code(const std::vector<GroupResult>& results);

}  // namespace svdd::verify
