#include "svdd/verify.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

#include "svdd/data.hpp"
#include "svdd/distill.hpp"
#include "svdd/finite_diff.hpp"
#include "svdd/linalg.hpp"
#include "svdd/models.hpp"
#include "svdd/ops.hpp"
#include "svdd/rng.hpp"
#include "svdd/training.hpp"

namespace svdd::verify {

using autograd::Graph;
using autograd::Shape;
using autograd::Tensor;

namespace {

// Scalarize an op output with fixed pseudo-random weights so every entry
// carries an O(1) gradient.
Tensor weighted_sum(Graph& g, const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> w(static_cast<std::size_t>(t.size()));
  for (auto& x : w) x = static_cast<float>(rng.uniform(0.5, 1.5));
  Tensor flat = autograd::reshape(g, t, {1, t.size()});
  Tensor weights = Tensor::leaf({t.size(), 1}, std::move(w), false);
  return autograd::matmul(g, flat, weights);
}

Eigen::MatrixXd random_orthonormal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd a(rows, rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < rows; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  return q.leftCols(cols);
}

}  // namespace

namespace {

enum class InputKind {
  kUniform,    // uniform in [-1, 1]
  kKinkAway,   // uniform with |value| >= 0.05: keeps FD away from the relu kink
  kSeparated,  // pairwise gaps >> 2h: keeps FD from crossing a max tie
};

std::vector<float> gen_values(InputKind kind, std::int64_t n, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(n));
  switch (kind) {
    case InputKind::kUniform:
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
      break;
    case InputKind::kKinkAway:
      for (auto& x : v) {
        const double u = rng.uniform(-1.0, 1.0);
        x = static_cast<float>((u < 0 ? -1.0 : 1.0) * (0.05 + 0.95 * std::abs(u)));
      }
      break;
    case InputKind::kSeparated: {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(0.07 * (i + 1));
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
      break;
    }
  }
  return v;
}

}  // namespace

GroupResult check_autograd_fd(int seeds_per_op) {
  struct OpCase {
    const char* name;
    std::vector<Shape> shapes;
    autograd::LossBuilder build;
    InputKind kind = InputKind::kUniform;
  };
  const std::vector<OpCase> cases = {
      {"relu", {{2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::relu(g, in[0]), 11);
       }, InputKind::kKinkAway},
      {"exp", {{2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::exp(g, in[0]), 12);
       }},
      {"scale", {{2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::scale(g, in[0], 1.7), 13);
       }},
      {"add", {{2, 3}, {2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::add(g, in[0], in[1]), 14);
       }},
      {"add_bias", {{2, 2, 3}, {3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::add(g, in[0], in[1]), 15);
       }},
      {"sub", {{2, 3}, {2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::sub(g, in[0], in[1]), 16);
       }},
      {"mul", {{2, 3}, {2, 3}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::mul(g, in[0], in[1]), 17);
       }},
      {"reshape", {{2, 6}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::reshape(g, in[0], {3, 4}), 18);
       }},
      {"matmul", {{2, 3}, {3, 4}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::matmul(g, in[0], in[1]), 19);
       }},
      {"conv2d", {{1, 4, 4, 2}, {3, 3, 2, 2}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::conv2d(g, in[0], in[1], 1, autograd::Padding::kSame), 20);
       }},
      {"conv2d_stride_valid", {{1, 5, 5, 2}, {3, 3, 2, 2}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::conv2d(g, in[0], in[1], 2, autograd::Padding::kValid), 21);
       }},
      {"maxpool2d", {{1, 4, 4, 2}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::maxpool2d(g, in[0], 2, 2), 22);
       }, InputKind::kSeparated},
      {"softmax_cross_entropy", {{3, 4}}, [](Graph& g, const std::vector<Tensor>& in) {
         return autograd::softmax_cross_entropy(g, in[0], {0, 2, 3});
       }},
      {"l2_norm", {{2, 4}}, [](Graph& g, const std::vector<Tensor>& in) {
         return autograd::l2_norm(g, in[0]);
       }},
      {"slice_batch", {{3, 2, 2}}, [](Graph& g, const std::vector<Tensor>& in) {
         return weighted_sum(g, autograd::slice_batch(g, in[0], 1), 23);
       }},
  };
  GroupResult res;
  res.name = "autograd-fd";
  res.pass = true;
  std::ostringstream detail;
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int s = 0; s < seeds_per_op; ++s) {
      Rng rng(Rng::mix(0xF00D, static_cast<std::uint64_t>(977 * s)));
      std::vector<std::vector<float>> values;
      for (const auto& sh : c.shapes) values.push_back(gen_values(c.kind, autograd::numel(sh), rng));
      const auto rep = autograd::check_gradients_at(c.build, values, c.shapes, 1e-3);
      worst = std::max(worst, rep.max_rel_err);
    }
    detail << c.name << "=" << worst << " ";
    res.worst = std::max(res.worst, worst);
    if (worst >= 1e-3) res.pass = false;
  }
  res.detail = detail.str();
  return res;
}

namespace {

// Random matrix with descending singular values, pairwise gaps > 0.1.
Eigen::MatrixXd gapped_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index r = std::min(rows, cols);
  Eigen::VectorXd sigma(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    sigma(i) = 0.5 + 0.35 * static_cast<double>(r - 1 - i) + rng.uniform(0.0, 0.1);
  }
  std::sort(sigma.data(), sigma.data() + r, std::greater<double>());
  const Eigen::MatrixXd u = random_orthonormal(rng, rows, r);
  const Eigen::MatrixXd v = random_orthonormal(rng, cols, r);
  return u * sigma.asDiagonal() * v.transpose();
}

// phi(M') = sum_i c_i . (s_i v'_i), signs canonicalized against the base V.
double v_functional(const Eigen::MatrixXd& m, int k, const Eigen::MatrixXd& c,
                    const Eigen::MatrixXd& base_v) {
  const auto svd = linalg::truncated_svd<double>(m, k);
  double phi = 0.0;
  for (int i = 0; i < k; ++i) {
    const double s = base_v.row(i).dot(svd.v.row(i)) < 0.0 ? -1.0 : 1.0;
    phi += c.row(i).dot(s * svd.v.row(i));
  }
  return phi;
}

}  // namespace

GroupResult check_svd_backward(int cases_per_branch, const FaultInjection& fault) {
  GroupResult res;
  res.name = "svd-backward";
  res.pass = true;
  const double h = 1e-5;
  double worst_wide = 0.0, worst_tall = 0.0;
  for (int branch = 0; branch < 2; ++branch) {
    for (int cse = 0; cse < cases_per_branch; ++cse) {
      Rng rng(Rng::mix(0x5BDB, static_cast<std::uint64_t>(branch * 10000 + cse)));
      Eigen::Index rows = 2 + static_cast<Eigen::Index>(rng.below(7));
      Eigen::Index cols = rows + static_cast<Eigen::Index>(rng.below(9));
      if (branch == 1) std::swap(rows, cols);  // tall: H*W > D
      cols = std::min<Eigen::Index>(cols, 16);
      rows = std::min<Eigen::Index>(rows, 16);
      const Eigen::MatrixXd m = gapped_matrix(rng, rows, cols);
      const Eigen::Index r = std::min(rows, cols);
      const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r)));

      const auto svd = linalg::truncated_svd<double>(m, k);
      Eigen::MatrixXd c(k, cols);
      for (int i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) c(i, j) = rng.uniform(-1.0, 1.0);
      }
      Eigen::MatrixXd analytic = linalg::svd_backward(svd, c);
      if (fault.svd_backward_sign) analytic = -analytic;

      Eigen::MatrixXd fd(rows, cols);
      Eigen::MatrixXd mp = m;
      for (Eigen::Index p = 0; p < rows; ++p) {
        for (Eigen::Index q = 0; q < cols; ++q) {
          mp(p, q) = m(p, q) + h;
          const double fp = v_functional(mp, k, c, svd.v);
          mp(p, q) = m(p, q) - h;
          const double fm = v_functional(mp, k, c, svd.v);
          mp(p, q) = m(p, q);
          fd(p, q) = (fp - fm) / (2.0 * h);
        }
      }
      const double denom = std::max({analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-9});
      const double rel = (analytic - fd).cwiseAbs().maxCoeff() / denom;
      (branch == 0 ? worst_wide : worst_tall) = std::max(branch == 0 ? worst_wide : worst_tall, rel);
      if (rel >= 1e-3) res.pass = false;
    }
  }
  res.worst = std::max(worst_wide, worst_tall);
  std::ostringstream os;
  os << "wide(HW<=D)=" << worst_wide << " tall=" << worst_tall;
  res.detail = os.str();
  return res;
}

GroupResult check_eckart_young(int cases) {
  GroupResult res;
  res.name = "eckart-young";
  res.pass = true;
  for (int cse = 0; cse < cases; ++cse) {
    Rng rng(Rng::mix(0xECA7, static_cast<std::uint64_t>(cse)));
    const Eigen::Index rows = 2 + static_cast<Eigen::Index>(rng.below(15));
    const Eigen::Index cols = 2 + static_cast<Eigen::Index>(rng.below(15));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    }
    const Eigen::Index r = std::min(rows, cols);
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r)));
    const auto svd = linalg::truncated_svd<double>(m, k);
    const Eigen::MatrixXd mk = svd.u_full.leftCols(k) * svd.sigma.asDiagonal() * svd.v;
    const double err = (m - mk).squaredNorm();
    // Independent oracle: Eigen's two-sided Jacobi SVD of M itself.
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    double tail = 0.0;
    for (Eigen::Index i = k; i < sv.size(); ++i) tail += sv(i) * sv(i);
    const double rel = std::abs(err - tail) / std::max(tail, 1e-12);
    res.worst = std::max(res.worst, rel);
    if (rel >= 1e-6) res.pass = false;
  }
  return res;
}

GroupResult check_alignment(int cases) {
  GroupResult res;
  res.name = "alignment";
  res.pass = true;
  int violations = 0;
  for (int cse = 0; cse < cases; ++cse) {
    Rng rng(Rng::mix(0xA116, static_cast<std::uint64_t>(cse)));
    const int k = 1 + static_cast<int>(rng.below(4));
    const Eigen::Index d = k + 2 + static_cast<Eigen::Index>(rng.below(8));
    const Eigen::MatrixXd teacher_v = random_orthonormal(rng, d, k).transpose();
    Eigen::VectorXd teacher_sigma(k);
    for (int i = 0; i < k; ++i) teacher_sigma(i) = 3.0 - 0.4 * i + rng.uniform(0.0, 0.2);

    linalg::TruncatedSvd<double> student;
    student.rank = k + 1;
    student.v = random_orthonormal(rng, d, k + 1).transpose();

    const auto got = distill::align_student(teacher_v, student, teacher_sigma);

    // Exhaustive argmax oracle, teacher-importance order, without replacement.
    std::vector<bool> used(static_cast<std::size_t>(k) + 1, false);
    bool ok = true;
    for (int i = 0; i < k; ++i) {
      int best = -1;
      double best_abs = -1.0;
      for (int j = 0; j <= k; ++j) {
        if (used[j]) continue;
        const double denom = teacher_v.row(i).norm() * student.v.row(j).norm();
        const double a = denom > 0.0 ? std::abs(teacher_v.row(i).dot(student.v.row(j))) / denom : 0.0;
        if (a > best_abs) {
          best_abs = a;
          best = j;
        }
      }
      used[best] = true;
      if (got.indices[i] != best) ok = false;
    }

    // Permutation invariance of the aligned output.
    {
      std::vector<int> perm(static_cast<std::size_t>(k) + 1);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      linalg::TruncatedSvd<double> shuffled = student;
      for (int j = 0; j <= k; ++j) shuffled.v.row(j) = student.v.row(perm[j]);
      const auto got2 = distill::align_student(teacher_v, shuffled, teacher_sigma);
      if ((got2.features.vectors - got.features.vectors).cwiseAbs().maxCoeff() > 1e-12) ok = false;
    }

    // Sign invariance: negating a candidate must not change the output.
    {
      linalg::TruncatedSvd<double> flipped = student;
      flipped.v.row(rng.below(static_cast<std::uint64_t>(k + 1))) *= -1.0;
      const auto got3 = distill::align_student(teacher_v, flipped, teacher_sigma);
      if ((got3.features.vectors - got.features.vectors).cwiseAbs().maxCoeff() > 1e-12) ok = false;
    }

    if (!ok) ++violations;
  }
  res.worst = violations;
  res.pass = violations == 0;
  res.detail = std::to_string(violations) + " violations / " + std::to_string(cases) + " cases";
  return res;
}

GroupResult check_clipping() {
  GroupResult res;
  res.name = "clipping";
  res.pass = true;
  double worst = 0.0;
  auto fail = [&res](const std::string& why) {
    res.pass = false;
    res.detail += why + "; ";
  };

  // tau = p must give exactly 0.5.
  {
    std::vector<std::vector<float>> gm = {{2.0f}};
    std::vector<std::vector<float>> gt = {{1.0f}};
    const auto d = training::clip_transfer_gradient(gm, gt, 2, training::ClipMode::kLiteral);
    if (d.factor != 0.5) fail("tau=p factor != 0.5");
    worst = std::max(worst, std::abs(d.factor - 0.5));
  }
  // Hand-evaluated factor on explicit global norms.
  {
    std::vector<std::vector<float>> gm = {{3.0f}, {4.0f}};          // norm 5
    std::vector<std::vector<float>> gt = {{1.0f, 2.0f}, {2.0f}};    // norm 3
    const int p = 3;
    const double tau = 5.0 / 3.0;
    const double expected = 1.0 / (1.0 + std::exp(-tau + p));
    const auto d = training::clip_transfer_gradient(gm, gt, p, training::ClipMode::kLiteral);
    const double err = std::abs(d.factor - expected);
    worst = std::max(worst, err);
    if (err >= 1e-6) fail("literal factor mismatch");
    if (std::abs(gt[0][0] - static_cast<float>(expected) * 1.0f) > 1e-6f) fail("gradient not scaled");
  }
  // Range (0, 1] across a spread of ratios and epochs.
  for (int p = 0; p <= 1000; p += 97) {
    std::vector<std::vector<float>> gm = {{7.5f}};
    std::vector<std::vector<float>> gt = {{0.5f}};
    const auto d = training::clip_transfer_gradient(gm, gt, p, training::ClipMode::kLiteral);
    if (!(d.factor > 0.0 && d.factor <= 1.0)) fail("factor out of (0,1] at p=" + std::to_string(p));
  }
  // off: bit-exact pass-through.
  {
    std::vector<std::vector<float>> gm = {{1.0f}};
    std::vector<std::vector<float>> gt = {{0.123456f, -9.875f}};
    const auto before = gt;
    const auto d = training::clip_transfer_gradient(gm, gt, 5, training::ClipMode::kOff);
    if (gt != before || d.factor != 1.0) fail("off mode not pass-through");
  }
  // Zero transfer gradient: pass-through, tau = +inf.
  {
    std::vector<std::vector<float>> gm = {{1.0f}};
    std::vector<std::vector<float>> gt = {{0.0f}};
    const auto d = training::clip_transfer_gradient(gm, gt, 5, training::ClipMode::kLiteral);
    if (!std::isinf(d.tau) || d.scaled) fail("zero transfer gradient not passed through");
  }
  // inverted applies in the complementary case.
  {
    std::vector<std::vector<float>> gm = {{1.0f}};
    std::vector<std::vector<float>> gt = {{2.0f}};
    const auto lit = training::clip_transfer_gradient(gm, gt, 1, training::ClipMode::kLiteral);
    if (lit.scaled) fail("literal scaled although transfer dominates");
    std::vector<std::vector<float>> gt2 = {{2.0f}};
    const auto inv = training::clip_transfer_gradient(gm, gt2, 1, training::ClipMode::kInverted);
    if (!inv.scaled) fail("inverted did not scale although transfer dominates");
  }
  res.worst = worst;
  if (res.detail.empty()) res.detail = "factor checks ok";
  return res;
}

GroupResult check_fixed_point() {
  GroupResult res;
  res.name = "fixed-point";
  const auto d = data::synthetic_dataset(4, 6, 0xF1);
  models::Model teacher(models::preset("tiny-vgg-T", d.classes), 41);
  teacher.set_trainable(false);
  models::Model student(models::preset("tiny-vgg-T", d.classes), 42);
  student.copy_parameters_from(teacher);
  const auto probe = training::transfer_fixed_point_probe(teacher, student, d, 4, 1, 8.0, 0xF2);
  res.worst = std::max(probe.loss, probe.grad_norm);
  res.pass = probe.loss < 1e-6 && probe.grad_norm < 1e-4;
  std::ostringstream os;
  os << "transfer_loss=" << probe.loss << " grad_norm=" << probe.grad_norm;
  res.detail = os.str();
  return res;
}

std::vector<GroupResult> run_all(const FaultInjection& fault) {
  return {check_autograd_fd(100),    check_svd_backward(50, fault), check_eckart_young(100),
          check_alignment(1000),     check_clipping(),              check_fixed_point()};
}

int exit_code(const std::vector<GroupResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return 2;
  }
  return 0;
}

}  // namespace svdd::verify
