// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dgconv/errors.hpp"
#include "dgconv/tensor.hpp"

namespace dgconv {

/// Continuous gate values; one per Kronecker factor.
using GateVector = std::vector<double>;

/// sign(x) with sign(0) = 1: g_k = 1 iff x >= 0.
inline std::vector<std::uint8_t> binarize(const GateVector& tilde_g) {
  std::vector<std::uint8_t> g(tilde_g.size());
  for (std::size_t k = 0; k < tilde_g.size(); ++k) {
    if (std::isnan(tilde_g[k])) throw ValueError("binarize: NaN gate value");
    g[k] = tilde_g[k] >= 0.0 ? 1 : 0;
  }
  return g;
}

/// Binary Cin x Cout matrix stored as a packed bitset, always the Kronecker
/// product of 2x2 {ones, identity} factors (rectangular cases replicate).
struct RelationshipMatrix {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> factors;  // the square part's gates, factor 1 first
  std::vector<std::uint64_t> bits;    // row-major, padded to whole words per row

  int words_per_row() const { return (cols + 63) / 64; }

  bool get(int i, int j) const {
    return (bits[static_cast<std::size_t>(i) * words_per_row() + j / 64] >>
            (j % 64)) & 1u;
  }
  void set(int i, int j) {
    bits[static_cast<std::size_t>(i) * words_per_row() + j / 64] |= 1ull << (j % 64);
  }

  bool operator==(const RelationshipMatrix& o) const {
    return rows == o.rows && cols == o.cols && bits == o.bits;
  }
};

/// U = kron_k (g_k * ones2 + (1-g_k) * I2); shape 2^K x 2^K.
inline RelationshipMatrix build_relationship_matrix(const std::vector<std::uint8_t>& g) {
  const int K = static_cast<int>(g.size());
  const int C = 1 << K;
  RelationshipMatrix u;
  u.rows = u.cols = C;
  u.factors = g;
  u.bits.assign(static_cast<std::size_t>(C) * u.words_per_row(), 0);
  // u[i][j] = prod_k factor_k[bit_k(i)][bit_k(j)]; identity factors force
  // matching bits, ones factors accept anything.
  std::uint32_t id_mask = 0;  // bit k-1 (factor K is the least significant)
  for (int k = 0; k < K; ++k)
    if (!g[k]) id_mask |= 1u << (K - 1 - k);
  for (int i = 0; i < C; ++i)
    for (int j = 0; j < C; ++j)
      if (((static_cast<std::uint32_t>(i) ^ static_cast<std::uint32_t>(j)) & id_mask) == 0)
        u.set(i, j);
  return u;
}

/// Rectangular extension: for Cout = r * Cin the square construction is
/// replicated across output blocks, U = U_square(Cin) (x) ones(1, r); the
/// transposed form covers Cin = r * Cout.
inline RelationshipMatrix build_relationship_matrix(const std::vector<std::uint8_t>& g,
                                                    int cin, int cout) {
  if (!is_power_of_two(cin) || !is_power_of_two(cout))
    throw ConfigError("relationship matrix: channel counts must be powers of two");
  const int csq = std::min(cin, cout);
  if (static_cast<int>(g.size()) != int_log2(csq))
    throw ConfigError("relationship matrix: gate count must be log2(min(Cin,Cout))");
  RelationshipMatrix sq = build_relationship_matrix(g);
  if (cin == cout) return sq;
  RelationshipMatrix u;
  u.rows = cin;
  u.cols = cout;
  u.factors = g;
  u.bits.assign(static_cast<std::size_t>(cin) * u.words_per_row(), 0);
  if (cout > cin) {
    const int r = cout / cin;
    for (int i = 0; i < cin; ++i)
      for (int j = 0; j < cout; ++j)
        if (sq.get(i, j / r)) u.set(i, j);
  } else {
    const int r = cin / cout;
    for (int i = 0; i < cin; ++i)
      for (int j = 0; j < cout; ++j)
        if (sq.get(i / r, j)) u.set(i, j);
  }
  return u;
}

/// Brute-force count of ones; the independent cross-check for
/// layer_complexity.
inline std::uint64_t nnz_oracle(const RelationshipMatrix& u) {
  std::uint64_t count = 0;
  for (int i = 0; i < u.rows; ++i)
    for (int j = 0; j < u.cols; ++j)
      if (u.get(i, j)) ++count;
  return count;
}

/// G = 2^(number of identity factors).
inline int group_count(const std::vector<std::uint8_t>& g) {
  int zeros = 0;
  for (auto b : g)
    if (!b) ++zeros;
  return 1 << zeros;
}

/// zeta for one layer: C * prod(1 + g_k) = number of ones in U.
inline std::uint64_t layer_complexity(const std::vector<std::uint8_t>& g, int C) {
  if (!is_power_of_two(C)) throw ConfigError("layer_complexity: C must be a power of two");
  if (int_log2(C) != static_cast<int>(g.size()))
    throw ConfigError("layer_complexity: gate count must equal log2(C)");
  std::uint64_t z = C;
  for (auto b : g) z *= 1 + b;
  return z;
}

/// Channel permutation P (perm[new] = old) under which U becomes
/// block-diagonal with G all-ones blocks. Channels sort by their bits at the
/// identity-factor positions (the group id), then by bits at ones positions.
inline std::vector<int> block_diagonal_permutation(const std::vector<std::uint8_t>& g) {
  const int K = static_cast<int>(g.size());
  const int C = 1 << K;
  std::vector<int> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  auto keys = [&](int ch) {
    int group_key = 0, within_key = 0;
    for (int k = 0; k < K; ++k) {
      const int bit = (ch >> (K - 1 - k)) & 1;  // factor k's bit
      if (g[k])
        within_key = (within_key << 1) | bit;
      else
        group_key = (group_key << 1) | bit;
    }
    return std::pair<int, int>(group_key, within_key);
  };
  std::stable_sort(perm.begin(), perm.end(),
                   [&](int a, int b) { return keys(a) < keys(b); });
  return perm;
}

/// Groups, complexity, and block-diagonalizing permutation of one gate
/// configuration.
struct GroupingReport {
  int group_count = 1;
  std::vector<std::vector<int>> members;  // channel indices per group
  std::uint64_t zeta_layer = 0;
  std::vector<int> permutation;
};

inline GroupingReport grouping_report(const std::vector<std::uint8_t>& g) {
  GroupingReport r;
  r.group_count = dgconv::group_count(g);
  r.permutation = block_diagonal_permutation(g);
  const int C = 1 << g.size();
  r.zeta_layer = layer_complexity(g, C);
  const int per = C / r.group_count;
  r.members.resize(r.group_count);
  for (int pos = 0; pos < C; ++pos) r.members[pos / per].push_back(r.permutation[pos]);
  for (auto& m : r.members) std::sort(m.begin(), m.end());
  return r;
}

/// Relaxed real-valued construction U(g) = kron(g_k*ones + (1-g_k)*I) for
/// continuous g; the object the straight-through gate gradients differentiate.
inline Eigen::MatrixXd relaxed_relationship(const GateVector& g) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Ones(1, 1);
  for (double gk : g) {
    Eigen::Matrix2d f;
    f << 1.0, gk, gk, 1.0;  // gk*ones + (1-gk)*I
    Eigen::MatrixXd next(u.rows() * 2, u.cols() * 2);
    for (int i = 0; i < u.rows(); ++i)
      for (int j = 0; j < u.cols(); ++j) next.block(2 * i, 2 * j, 2, 2) = u(i, j) * f;
    u = std::move(next);
  }
  return u;
}

/// dU/dg_k of the relaxed construction: factor k replaced by (ones - I).
inline Eigen::MatrixXd du_dgk(const GateVector& g, int k) {
  if (k < 0 || k >= static_cast<int>(g.size()))
    throw ConfigError("du_dgk: factor index out of range");
  Eigen::MatrixXd u = Eigen::MatrixXd::Ones(1, 1);
  for (int i = 0; i < static_cast<int>(g.size()); ++i) {
    Eigen::Matrix2d f;
    if (i == k)
      f << 0.0, 1.0, 1.0, 0.0;  // ones - I
    else
      f << 1.0, g[i], g[i], 1.0;
    Eigen::MatrixXd next(u.rows() * 2, u.cols() * 2);
    for (int r = 0; r < u.rows(); ++r)
      for (int c = 0; c < u.cols(); ++c) next.block(2 * r, 2 * c, 2, 2) = u(r, c) * f;
    u = std::move(next);
  }
  return u;
}

inline Eigen::MatrixXd du_dgk(const std::vector<std::uint8_t>& g, int k) {
  GateVector gc(g.begin(), g.end());
  return du_dgk(gc, k);
}

}  // namespace dgconv
