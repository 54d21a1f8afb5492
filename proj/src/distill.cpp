#include "svdd/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace svdd::distill {

CompressedFeatureSet postprocess_teacher(const linalg::TruncatedSvd<double>& svd) {
  const double sigma_norm = svd.sigma.norm();
  if (sigma_norm <= 0.0) {
    throw std::invalid_argument("postprocess_teacher: all-zero singular values (degenerate feature map)");
  }
  CompressedFeatureSet out;
  out.role = Role::kTeacher;
  out.source_sigma = svd.sigma;
  out.vectors = (svd.sigma / sigma_norm).asDiagonal() * svd.v;
  return out;
}

AlignmentResult align_student(const Eigen::MatrixXd& teacher_v,
                              const linalg::TruncatedSvd<double>& student_svd,
                              const Eigen::VectorXd& teacher_sigma) {
  const int k = static_cast<int>(teacher_v.rows());
  if (student_svd.rank != k + 1) {
    throw std::invalid_argument("align_student: student must be decomposed at rank k+1 = " +
                                std::to_string(k + 1) + ", got " + std::to_string(student_svd.rank));
  }
  if (teacher_v.cols() != student_svd.v.cols()) {
    throw std::invalid_argument("align_student: teacher/student vector length mismatch");
  }
  const double sigma_norm = teacher_sigma.norm();
  if (sigma_norm <= 0.0) {
    throw std::invalid_argument("align_student: all-zero teacher singular values");
  }

  AlignmentResult result;
  result.indices.resize(k);
  result.signs.resize(k);
  result.features.role = Role::kStudent;
  result.features.source_sigma = teacher_sigma;
  result.features.vectors.resize(k, teacher_v.cols());

  std::vector<bool> used(static_cast<std::size_t>(k) + 1, false);
  for (int i = 0; i < k; ++i) {
    int best = -1;
    double best_abs = -1.0;
    double best_dot = 0.0;
    for (int j = 0; j <= k; ++j) {
      if (used[j]) continue;
      const double denom = teacher_v.row(i).norm() * student_svd.v.row(j).norm();
      const double dot = teacher_v.row(i).dot(student_svd.v.row(j));
      const double abs_cos = denom > 0.0 ? std::abs(dot) / denom : 0.0;
      if (abs_cos > best_abs) {
        best_abs = abs_cos;
        best = j;
        best_dot = dot;
      }
    }
    used[best] = true;
    result.indices[i] = best;
    result.signs[i] = best_dot < 0.0 ? -1.0 : 1.0;
    result.features.vectors.row(i) =
        (teacher_sigma(i) / sigma_norm) * result.signs[i] * student_svd.v.row(best);
  }
  return result;
}

Dfv compute_dfv(const CompressedFeatureSet& front, const CompressedFeatureSet& back, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("compute_dfv: beta must be > 0");
  if (front.vectors.rows() != back.vectors.rows()) {
    throw std::invalid_argument("compute_dfv: front has " + std::to_string(front.vectors.rows()) +
                                " vectors, back has " + std::to_string(back.vectors.rows()));
  }
  Dfv dfv;
  dfv.k = static_cast<int>(front.vectors.rows());
  dfv.d_front = front.vectors.cols();
  dfv.d_back = back.vectors.cols();
  dfv.beta = beta;
  dfv.values.resize(static_cast<std::size_t>(dfv.k) * dfv.d_front * dfv.d_back);
  for (int l = 0; l < dfv.k; ++l) {
    for (Eigen::Index m = 0; m < dfv.d_front; ++m) {
      const double fm = front.vectors(l, m);
      for (Eigen::Index n = 0; n < dfv.d_back; ++n) {
        const double diff = fm - back.vectors(l, n);
        dfv.at(l, m, n) = std::exp(-(diff * diff) / beta);
      }
    }
  }
  return dfv;
}

namespace {

linalg::TruncatedSvd<double> svd_of_map(const FeatureMapView& fm, int rank, const char* side) {
  const Eigen::Index cap = std::min(fm.h * fm.w, fm.d);
  if (rank > cap) {
    throw std::invalid_argument(std::string("distill: rank ") + std::to_string(rank) + " exceeds min(H*W, D) of " +
                                side + " map " + std::to_string(fm.h) + "x" + std::to_string(fm.w) + "x" +
                                std::to_string(fm.d));
  }
  return linalg::truncated_svd<double>(linalg::flatten_feature_map<double>(fm.data, fm.h, fm.w, fm.d), rank,
                                       /*with_backward_cache=*/false);
}

}  // namespace

Dfv distill_teacher_tap(const FeatureMapView& ffm, const FeatureMapView& bfm, int k, double beta,
                        TeacherTapRef* ref_out) {
  const auto f_svd = svd_of_map(ffm, k, "FFM");
  const auto b_svd = svd_of_map(bfm, k, "BFM");
  const auto f_set = postprocess_teacher(f_svd);
  const auto b_set = postprocess_teacher(b_svd);
  if (ref_out) {
    ref_out->ffm_v = f_svd.v;
    ref_out->ffm_sigma = f_svd.sigma;
    ref_out->bfm_v = b_svd.v;
    ref_out->bfm_sigma = b_svd.sigma;
  }
  return compute_dfv(f_set, b_set, beta);
}

Dfv distill_student_tap(const FeatureMapView& ffm, const FeatureMapView& bfm, int k, double beta,
                        const TeacherTapRef& ref) {
  const auto f_svd = svd_of_map(ffm, k + 1, "FFM");
  const auto b_svd = svd_of_map(bfm, k + 1, "BFM");
  const auto f_aligned = align_student(ref.ffm_v, f_svd, ref.ffm_sigma);
  const auto b_aligned = align_student(ref.bfm_v, b_svd, ref.bfm_sigma);
  return compute_dfv(f_aligned.features, b_aligned.features, beta);
}

}  // namespace svdd::distill
