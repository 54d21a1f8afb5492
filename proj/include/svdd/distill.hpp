#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "svdd/linalg.hpp"

namespace svdd::distill {

enum class Role { kTeacher, kStudent };

// k singular vectors scaled to unit total energy: f_i = (sigma_i / |Sigma|_2) v_i,
// always using the TEACHER's singular values (the student is normalized by
// them too, so higher-importance directions are learned harder).
struct CompressedFeatureSet {
  Eigen::MatrixXd vectors;       // k x D, row i = f_i
  Eigen::VectorXd source_sigma;  // the teacher sigmas that produced the scales
  Role role = Role::kTeacher;
};

// Rank-k distillation feature volume: entry (l, m, n) is the Gaussian-RBF
// correlation exp(-(front_l[m] - back_l[n])^2 / beta), always in (0, 1].
struct Dfv {
  int k = 0;
  Eigen::Index d_front = 0;
  Eigen::Index d_back = 0;
  double beta = 0.0;
  std::vector<double> values;  // k * d_front * d_back, row-major (l, m, n)

  double& at(int l, Eigen::Index m, Eigen::Index n) {
    return values[static_cast<std::size_t>((l * d_front + m) * d_back + n)];
  }
  double at(int l, Eigen::Index m, Eigen::Index n) const {
    return values[static_cast<std::size_t>((l * d_front + m) * d_back + n)];
  }
};

struct AlignmentResult {
  std::vector<int> indices;   // k picks into the k+1 student candidates
  std::vector<double> signs;  // +1 / -1 direction corrections
  CompressedFeatureSet features;
};

// Teacher post-processing: scale each retained right-singular vector by its
// normalized singular value. Rejects an all-zero spectrum (degenerate map).
CompressedFeatureSet postprocess_teacher(const linalg::TruncatedSvd<double>& svd);

// Student post-processing: greedily match each teacher vector (in teacher
// importance order, without replacement) to the most similar of the k+1
// student candidates by absolute cosine similarity, flip a candidate whose
// direction opposes the teacher's, then scale by the teacher's normalized
// singular values. Zero-length candidates score 0.
AlignmentResult align_student(const Eigen::MatrixXd& teacher_v,
                              const linalg::TruncatedSvd<double>& student_svd,
                              const Eigen::VectorXd& teacher_sigma);

// Gaussian-RBF correlation volume between the front and back feature sets.
Dfv compute_dfv(const CompressedFeatureSet& front, const CompressedFeatureSet& back, double beta);

// Per-tap teacher products needed to align and scale a student.
struct TeacherTapRef {
  Eigen::MatrixXd ffm_v;      // k x D_F
  Eigen::VectorXd ffm_sigma;  // k
  Eigen::MatrixXd bfm_v;      // k x D_B
  Eigen::VectorXd bfm_sigma;  // k
};

// One (FFM, BFM) pair sensed at a layer module; spatial sizes of the two
// maps are unrelated.
struct FeatureMapView {
  const float* data = nullptr;
  Eigen::Index h = 0, w = 0, d = 0;
};

// Full teacher path for one tap: flatten -> rank-k SVD -> post-process ->
// RBF correlation. Optionally exports the products a student will align to.
Dfv distill_teacher_tap(const FeatureMapView& ffm, const FeatureMapView& bfm, int k, double beta,
                        TeacherTapRef* ref_out = nullptr);

// Student path without gradients (rank k+1 + alignment); the differentiable
// version lives in distill_ops.
Dfv distill_student_tap(const FeatureMapView& ffm, const FeatureMapView& bfm, int k, double beta,
                        const TeacherTapRef& ref);

}  // namespace svdd::distill
