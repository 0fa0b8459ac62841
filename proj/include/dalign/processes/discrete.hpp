#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dalign {

/// Token sequence over {0..K-1} with MASK encoded as K.
struct DiscreteSequence {
  std::vector<int> tokens;
  int K = 0;

  int mask() const { return K; }
  int length() const { return static_cast<int>(tokens.size()); }
  bool is_masked(int l) const { return tokens[l] == K; }
  int masked_count() const;

  /// L x (K+1) indicator array; the last column is MASK.
  Eigen::MatrixXd onehot() const;

  /// Letters 'A'+k for tokens, '_' for MASK.
  std::string str() const;
  static DiscreteSequence parse(const std::string& text, int K);

  bool operator==(const DiscreteSequence&) const = default;
};

DiscreteSequence fully_masked(int K, int L);

/// Number of positions where the one-hot views differ, i.e. ||x - y||_1 / 2.
int change_count(const DiscreteSequence& x, const DiscreteSequence& y);

/// Base-(K+1) code of a possibly masked sequence, position 0 most significant.
std::int64_t encode_state(const DiscreteSequence& x);
DiscreteSequence decode_state(std::int64_t code, int K, int L);
std::int64_t state_count(int K, int L);

/// Explicit law over the K^L clean sequences, indexed by base-K code with
/// position 0 most significant (so AA, AB, BA, BB for K = L = 2).
struct DistributionTable {
  int K = 0;
  int L = 0;
  std::vector<double> prob;
  double logZ = 0.0;  // log of the normalizer the entries were divided by

  std::int64_t size() const { return static_cast<std::int64_t>(prob.size()); }
  DiscreteSequence sequence(std::int64_t index) const;
  std::int64_t index_of(const DiscreteSequence& x) const;
  double operator[](const DiscreteSequence& x) const { return prob[index_of(x)]; }

  /// Normalizes non-negative masses; entries not listed are zero.
  static DistributionTable from_entries(int K, int L,
                                        const std::vector<std::pair<std::string, double>>& entries);
  static DistributionTable from_masses(int K, int L, std::vector<double> masses);

  /// Checks the invariants (non-negative, sums to 1 within 1e-12).
  void validate() const;
};

/// Desk-scale caps for table-backed models.
inline constexpr int kMaxVocab = 8;
inline constexpr int kMaxLength = 6;

}  // namespace dalign
