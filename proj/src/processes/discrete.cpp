#include "dalign/processes/discrete.hpp"

#include <cmath>

#include "dalign/core/error.hpp"

namespace dalign {

int DiscreteSequence::masked_count() const {
  int n = 0;
  for (int tok : tokens) n += tok == K;
  return n;
}

Eigen::MatrixXd DiscreteSequence::onehot() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(length(), K + 1);
  for (int l = 0; l < length(); ++l) m(l, tokens[l]) = 1.0;
  return m;
}

std::string DiscreteSequence::str() const {
  std::string s;
  s.reserve(tokens.size());
  for (int tok : tokens) s.push_back(tok == K ? '_' : static_cast<char>('A' + tok));
  return s;
}

DiscreteSequence DiscreteSequence::parse(const std::string& text, int K) {
  require(K >= 1 && K <= 26, Errc::invalid_argument, "vocabulary size out of range");
  require(!text.empty(), Errc::invalid_argument, "empty sequence");
  DiscreteSequence x{{}, K};
  for (char c : text) {
    if (c == '_') {
      x.tokens.push_back(K);
      continue;
    }
    const int tok = c - 'A';
    require(tok >= 0 && tok < K, Errc::invalid_argument,
            std::string("token '") + c + "' outside vocabulary");
    x.tokens.push_back(tok);
  }
  return x;
}

DiscreteSequence fully_masked(int K, int L) { return DiscreteSequence{std::vector<int>(L, K), K}; }

int change_count(const DiscreteSequence& x, const DiscreteSequence& y) {
  require(x.length() == y.length() && x.K == y.K, Errc::invalid_argument,
          "sequences differ in shape");
  int n = 0;
  for (int l = 0; l < x.length(); ++l) n += x.tokens[l] != y.tokens[l];
  return n;
}

std::int64_t encode_state(const DiscreteSequence& x) {
  std::int64_t code = 0;
  for (int tok : x.tokens) code = code * (x.K + 1) + tok;
  return code;
}

DiscreteSequence decode_state(std::int64_t code, int K, int L) {
  DiscreteSequence x{std::vector<int>(L), K};
  for (int l = L - 1; l >= 0; --l) {
    x.tokens[l] = static_cast<int>(code % (K + 1));
    code /= (K + 1);
  }
  return x;
}

std::int64_t state_count(int K, int L) {
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= (K + 1);
  return n;
}

DiscreteSequence DistributionTable::sequence(std::int64_t index) const {
  DiscreteSequence x{std::vector<int>(L), K};
  for (int l = L - 1; l >= 0; --l) {
    x.tokens[l] = static_cast<int>(index % K);
    index /= K;
  }
  return x;
}

std::int64_t DistributionTable::index_of(const DiscreteSequence& x) const {
  require(x.length() == L && x.K == K, Errc::invalid_argument, "sequence shape mismatch");
  std::int64_t idx = 0;
  for (int tok : x.tokens) {
    require(tok >= 0 && tok < K, Errc::invalid_argument, "masked sequence has no table entry");
    idx = idx * K + tok;
  }
  return idx;
}

DistributionTable DistributionTable::from_masses(int K, int L, std::vector<double> masses) {
  require(K >= 1 && K <= kMaxVocab && L >= 1 && L <= kMaxLength, Errc::invalid_argument,
          "table exceeds desk-scale caps (K <= 8, L <= 6)");
  DistributionTable d;
  d.K = K;
  d.L = L;
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  require(static_cast<std::int64_t>(masses.size()) == n, Errc::invalid_argument,
          "table size must be K^L");
  double total = 0.0;
  for (double m : masses) {
    require(m >= 0.0 && std::isfinite(m), Errc::invalid_argument, "negative table mass");
    total += m;
  }
  require(total > 0.0, Errc::invalid_argument, "table has no mass");
  for (double& m : masses) m /= total;
  d.prob = std::move(masses);
  d.logZ = std::log(total);
  return d;
}

DistributionTable DistributionTable::from_entries(
    int K, int L, const std::vector<std::pair<std::string, double>>& entries) {
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  require(n <= 262144, Errc::invalid_argument, "table exceeds desk-scale caps");
  std::vector<double> masses(n, 0.0);
  DistributionTable shape;
  shape.K = K;
  shape.L = L;
  for (const auto& [seq, p] : entries) {
    const auto x = DiscreteSequence::parse(seq, K);
    require(x.length() == L, Errc::invalid_argument, "entry '" + seq + "' has wrong length");
    masses[shape.index_of(x)] += p;
  }
  return from_masses(K, L, std::move(masses));
}

void DistributionTable::validate() const {
  double total = 0.0;
  for (double p : prob) {
    require(p >= 0.0, Errc::validation, "negative probability");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, Errc::validation, "probabilities do not sum to 1");
}

}  // namespace dalign
