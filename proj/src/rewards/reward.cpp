#include "dalign/rewards/reward.hpp"

#include <cmath>

#include "dalign/core/error.hpp"

namespace dalign {
namespace {

[[noreturn]] void mismatch(RewardKind kind, const char* state) {
  throw Error(Errc::invalid_argument, std::string(reward_kind_name(kind)) +
                                          " reward cannot score a " + state + " state");
}

}  // namespace

const char* reward_kind_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::constant: return "constant";
    case RewardKind::linear: return "linear";
    case RewardKind::quadratic: return "quadratic";
    case RewardKind::table: return "table";
    case RewardKind::frobenius: return "frobenius";
    case RewardKind::composite: return "composite";
    case RewardKind::custom: return "custom";
  }
  return "unknown";
}

RewardModel RewardModel::constant(double c) {
  RewardModel r;
  r.kind_ = RewardKind::constant;
  r.offset_ = c;
  return r;
}

RewardModel RewardModel::linear(Eigen::VectorXd c, double offset) {
  RewardModel r;
  r.kind_ = RewardKind::linear;
  r.vec_ = std::move(c);
  r.offset_ = offset;
  return r;
}

RewardModel RewardModel::quadratic(Eigen::VectorXd m, double scale) {
  RewardModel r;
  r.kind_ = RewardKind::quadratic;
  r.vec_ = std::move(m);
  r.scale_ = scale;
  return r;
}

RewardModel RewardModel::table(int K, int L,
                               const std::vector<std::pair<std::string, double>>& entries) {
  DistributionTable shape;
  shape.K = K;
  shape.L = L;
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  std::vector<double> values(n, 0.0);
  for (const auto& [seq, v] : entries) {
    const auto x = DiscreteSequence::parse(seq, K);
    require(x.length() == L, Errc::invalid_argument, "reward entry '" + seq + "' has wrong length");
    values[shape.index_of(x)] = v;
  }
  return table_dense(K, L, std::move(values));
}

RewardModel RewardModel::table_dense(int K, int L, std::vector<double> values) {
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  require(K >= 1 && L >= 1 && static_cast<std::int64_t>(values.size()) == n,
          Errc::invalid_argument, "reward table must have K^L entries");
  for (double v : values) require(std::isfinite(v), Errc::invalid_argument, "non-finite reward");
  RewardModel r;
  r.kind_ = RewardKind::table;
  r.K_ = K;
  r.L_ = L;
  r.table_ = std::move(values);
  return r;
}

RewardModel RewardModel::frobenius(Eigen::Matrix3d target, double scale) {
  RewardModel r;
  r.kind_ = RewardKind::frobenius;
  r.target_ = target;
  r.scale_ = scale;
  return r;
}

RewardModel RewardModel::composite(std::vector<std::pair<double, RewardModel>> parts) {
  require(!parts.empty(), Errc::invalid_argument, "composite reward needs parts");
  RewardModel r;
  r.kind_ = RewardKind::composite;
  for (auto& [w, part] : parts)
    r.parts_.emplace_back(w, std::make_shared<const RewardModel>(std::move(part)));
  return r;
}

RewardModel RewardModel::custom(std::function<double(const DiscreteSequence&)> fn) {
  RewardModel r;
  r.kind_ = RewardKind::custom;
  r.custom_ = std::move(fn);
  return r;
}

bool RewardModel::differentiable() const {
  if (kind_ == RewardKind::custom) return false;
  for (const auto& [w, part] : parts_)
    if (!part->differentiable()) return false;
  return true;
}

double RewardModel::eval_table(const DiscreteSequence& x) const {
  require(x.K == K_ && x.length() == L_, Errc::invalid_argument,
          "sequence shape does not match reward table");
  std::int64_t idx = 0;
  for (int tok : x.tokens) {
    require(tok >= 0 && tok < K_, Errc::invalid_argument, "table reward needs a clean sequence");
    idx = idx * K_ + tok;
  }
  return table_[idx];
}

double RewardModel::eval(const DiscreteSequence& x) const {
  switch (kind_) {
    case RewardKind::constant: return offset_;
    case RewardKind::table: return eval_table(x);
    case RewardKind::custom: return custom_(x);
    case RewardKind::composite: {
      double s = 0.0;
      for (const auto& [w, part] : parts_) s += w * part->eval(x);
      return s;
    }
    default: mismatch(kind_, "sequence");
  }
}

double RewardModel::eval(const ContinuousState& x) const {
  switch (kind_) {
    case RewardKind::constant: return offset_;
    case RewardKind::linear:
      require(x.size() == vec_.size(), Errc::invalid_argument, "dimension mismatch");
      return vec_.dot(x) + offset_;
    case RewardKind::quadratic:
      require(x.size() == vec_.size(), Errc::invalid_argument, "dimension mismatch");
      return -scale_ * (x - vec_).squaredNorm();
    case RewardKind::composite: {
      double s = 0.0;
      for (const auto& [w, part] : parts_) s += w * part->eval(x);
      return s;
    }
    default: mismatch(kind_, "vector");
  }
}

double RewardModel::eval(const RotationState& x) const {
  switch (kind_) {
    case RewardKind::constant: return offset_;
    case RewardKind::frobenius: return scale_ * (target_.transpose() * x).trace();
    case RewardKind::composite: {
      double s = 0.0;
      for (const auto& [w, part] : parts_) s += w * part->eval(x);
      return s;
    }
    default: mismatch(kind_, "rotation");
  }
}

Eigen::VectorXd RewardModel::grad(const ContinuousState& x) const {
  require(differentiable(), Errc::not_differentiable, "reward declared non-differentiable");
  switch (kind_) {
    case RewardKind::constant: return Eigen::VectorXd::Zero(x.size());
    case RewardKind::linear:
      require(x.size() == vec_.size(), Errc::invalid_argument, "dimension mismatch");
      return vec_;
    case RewardKind::quadratic:
      require(x.size() == vec_.size(), Errc::invalid_argument, "dimension mismatch");
      return -2.0 * scale_ * (x - vec_);
    case RewardKind::composite: {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
      for (const auto& [w, part] : parts_) g += w * part->grad(x);
      return g;
    }
    default: mismatch(kind_, "vector");
  }
}

Eigen::Matrix3d RewardModel::grad(const RotationState& x) const {
  require(differentiable(), Errc::not_differentiable, "reward declared non-differentiable");
  switch (kind_) {
    case RewardKind::constant: return Eigen::Matrix3d::Zero();
    case RewardKind::frobenius: return scale_ * target_;
    case RewardKind::composite: {
      Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
      for (const auto& [w, part] : parts_) g += w * part->grad(x);
      return g;
    }
    default: mismatch(kind_, "rotation");
  }
}

std::vector<double> RewardModel::table_values(int K, int L) const {
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  if (kind_ == RewardKind::table) {
    require(K == K_ && L == L_, Errc::invalid_argument, "reward table shape mismatch");
    return table_;
  }
  DistributionTable shape;
  shape.K = K;
  shape.L = L;
  std::vector<double> values(n);
  for (std::int64_t i = 0; i < n; ++i) values[i] = eval(shape.sequence(i));
  return values;
}

double RewardModel::extension(const Eigen::MatrixXd& probs) const {
  const int L = static_cast<int>(probs.rows());
  const int K = static_cast<int>(probs.cols());
  if (kind_ == RewardKind::constant) return offset_;
  const auto values = table_values(K, L);
  double total = 0.0;
  std::vector<int> tok(L);
  for (std::size_t idx = 0; idx < values.size(); ++idx) {
    std::size_t rem = idx;
    double w = 1.0;
    for (int l = L - 1; l >= 0; --l) {
      w *= probs(l, static_cast<int>(rem % K));
      rem /= K;
    }
    total += w * values[idx];
  }
  return total;
}

Eigen::MatrixXd RewardModel::extension_partials(const Eigen::MatrixXd& probs) const {
  require(differentiable(), Errc::not_differentiable, "reward declared non-differentiable");
  const int L = static_cast<int>(probs.rows());
  const int K = static_cast<int>(probs.cols());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(L, K);
  if (kind_ == RewardKind::constant) return g;
  const auto values = table_values(K, L);
  std::vector<int> tok(L);
  for (std::size_t idx = 0; idx < values.size(); ++idx) {
    std::size_t rem = idx;
    for (int l = L - 1; l >= 0; --l) {
      tok[l] = static_cast<int>(rem % K);
      rem /= K;
    }
    for (int l = 0; l < L; ++l) {
      double w = values[idx];
      for (int m = 0; m < L; ++m)
        if (m != l) w *= probs(m, tok[m]);
      g(l, tok[l]) += w;
    }
  }
  return g;
}

}  // namespace dalign
