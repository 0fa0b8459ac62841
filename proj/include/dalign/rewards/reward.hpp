#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dalign/geometry/so3.hpp"
#include "dalign/processes/discrete.hpp"
#include "dalign/processes/gaussian.hpp"

namespace dalign {

enum class RewardKind { constant, linear, quadratic, table, frobenius, composite, custom };

const char* reward_kind_name(RewardKind kind);

/// Reward r: X -> R over sequences, vectors or rotations. Immutable.
class RewardModel {
 public:
  static RewardModel constant(double c);
  /// r(x) = c.x + offset
  static RewardModel linear(Eigen::VectorXd c, double offset = 0.0);
  /// r(x) = -scale * ||x - m||^2
  static RewardModel quadratic(Eigen::VectorXd m, double scale = 1.0);
  /// Lookup over clean sequences; sequences not listed score 0.
  static RewardModel table(int K, int L, const std::vector<std::pair<std::string, double>>& entries);
  static RewardModel table_dense(int K, int L, std::vector<double> values);
  /// r(R) = scale * Tr(R0^T R)
  static RewardModel frobenius(Eigen::Matrix3d target, double scale = 1.0);
  /// Weighted sum of sub-rewards.
  static RewardModel composite(std::vector<std::pair<double, RewardModel>> parts);
  /// Black-box sequence reward without gradients.
  static RewardModel custom(std::function<double(const DiscreteSequence&)> fn);

  RewardKind kind() const { return kind_; }
  bool differentiable() const;

  double eval(const DiscreteSequence& x) const;
  double eval(const ContinuousState& x) const;
  double eval(const RotationState& x) const;

  Eigen::VectorXd grad(const ContinuousState& x) const;
  /// Euclidean gradient in ambient 3x3 coordinates.
  Eigen::Matrix3d grad(const RotationState& x) const;

  /// Multilinear extension sum_x prod_l P[l, x_l] r(x) at per-position
  /// probabilities P (L x K; an extra MASK column is rejected).
  double extension(const Eigen::MatrixXd& probs) const;
  /// Exact partial derivatives of the extension, L x K.
  Eigen::MatrixXd extension_partials(const Eigen::MatrixXd& probs) const;

  /// Dense reward values over the K^L table index (table-like kinds only).
  std::vector<double> table_values(int K, int L) const;

 private:
  RewardModel() = default;
  double eval_table(const DiscreteSequence& x) const;

  RewardKind kind_ = RewardKind::constant;
  double offset_ = 0.0;
  double scale_ = 1.0;
  Eigen::VectorXd vec_;
  Eigen::Matrix3d target_ = Eigen::Matrix3d::Identity();
  int K_ = 0;
  int L_ = 0;
  std::vector<double> table_;
  std::vector<std::pair<double, std::shared_ptr<const RewardModel>>> parts_;
  std::function<double(const DiscreteSequence&)> custom_;
};

}  // namespace dalign
