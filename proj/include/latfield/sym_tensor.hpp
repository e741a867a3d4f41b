#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <vector>

#include "latfield/errors.hpp"

namespace latfield {

//! Enumeration of sorted multi-indices {0 <= i1 <= ... <= ik < dim},
//! shared by everything that stores symmetric tensors componentwise.
class SymIndexSet {
public:
  SymIndexSet(int dim, int order) : dim_(dim), order_(order) {
    std::vector<int> idx(order, 0);
    build(idx, 0, 0);
  }

  int dim() const { return dim_; }
  int order() const { return order_; }
  int size() const { return static_cast<int>(indices_.size()); }
  const std::vector<int> &index(int i) const { return indices_[i]; }

  //! Rank of an arbitrary (not necessarily sorted) multi-index.
  int rank(std::vector<int> idx) const {
    std::sort(idx.begin(), idx.end());
    auto it = rank_.find(idx);
    if (it == rank_.end())
      throw DimensionMismatch("multi-index out of range");
    return it->second;
  }

  //! Number of distinct permutations of the multi-index, k!/prod(counts!).
  double multiplicity(int i) const { return mult_[i]; }

private:
  void build(std::vector<int> &idx, int pos, int lo) {
    if (pos == order_) {
      rank_[idx] = static_cast<int>(indices_.size());
      indices_.push_back(idx);
      mult_.push_back(permCount(idx));
      return;
    }
    for (int v = lo; v < dim_; ++v) {
      idx[pos] = v;
      build(idx, pos + 1, v);
    }
  }

  static double permCount(const std::vector<int> &idx) {
    double f = 1.0;
    for (size_t i = 1; i <= idx.size(); ++i)
      f *= double(i);
    int run = 1;
    for (size_t i = 1; i <= idx.size(); ++i) {
      if (i < idx.size() && idx[i] == idx[i - 1]) {
        ++run;
      } else {
        for (int j = 2; j <= run; ++j)
          f /= double(j);
        run = 1;
      }
    }
    return f;
  }

  int dim_, order_;
  std::vector<std::vector<int>> indices_;
  std::vector<double> mult_;
  std::map<std::vector<int>, int> rank_;
};

//! Element of (R^m)^{sym k} in canonical multiset layout. Components are the
//! full-tensor entries; contractions expand with multinomial multiplicities.
template <typename Scalar = double> class SymTensor {
public:
  SymTensor() : idx_(0, 0) {}
  SymTensor(int dim, int order)
      : idx_(dim, order),
        comp_(Eigen::Vector<Scalar, Eigen::Dynamic>::Zero(idx_.size())) {}

  int dim() const { return idx_.dim(); }
  int order() const { return idx_.order(); }
  const SymIndexSet &indexSet() const { return idx_; }

  Scalar &operator()(const std::vector<int> &multi) {
    return comp_[idx_.rank(multi)];
  }
  Scalar operator()(const std::vector<int> &multi) const {
    return comp_[idx_.rank(multi)];
  }
  Scalar &coeff(int i) { return comp_[i]; }
  Scalar coeff(int i) const { return comp_[i]; }
  int size() const { return idx_.size(); }

  Eigen::Vector<Scalar, Eigen::Dynamic> &components() { return comp_; }
  const Eigen::Vector<Scalar, Eigen::Dynamic> &components() const {
    return comp_;
  }

  SymTensor &operator+=(const SymTensor &o) {
    comp_ += o.comp_;
    return *this;
  }
  SymTensor &operator*=(Scalar s) {
    comp_ *= s;
    return *this;
  }
  SymTensor operator*(Scalar s) const {
    SymTensor r = *this;
    r.comp_ *= s;
    return r;
  }
  SymTensor operator+(const SymTensor &o) const {
    SymTensor r = *this;
    r.comp_ += o.comp_;
    return r;
  }
  SymTensor operator-(const SymTensor &o) const {
    SymTensor r = *this;
    r.comp_ -= o.comp_;
    return r;
  }

  //! Full scalar product A : B, expanding the multiset layout with
  //! multiplicities.
  Scalar dot(const SymTensor &o) const {
    if (dim() != o.dim() || order() != o.order())
      throw DimensionMismatch("SymTensor::dot shape mismatch");
    Scalar s = 0;
    for (int i = 0; i < size(); ++i)
      s += idx_.multiplicity(i) * comp_[i] * o.comp_[i];
    return s;
  }

  //! Evaluate the tensor on a tuple of vectors, A[v1,...,vk].
  Scalar apply(const std::vector<Eigen::VectorXd> &vs) const {
    if (static_cast<int>(vs.size()) != order())
      throw DimensionMismatch("SymTensor::apply arity mismatch");
    Scalar s = 0;
    std::vector<int> multi(order());
    // sum over all d^k index tuples (orders are tiny here)
    int k = order(), d = dim();
    std::vector<int> ctr(k, 0);
    while (true) {
      Scalar term = 1;
      for (int j = 0; j < k; ++j) {
        term *= vs[j][ctr[j]];
        multi[j] = ctr[j];
      }
      s += term * (*this)(multi);
      int j = 0;
      for (; j < k; ++j) {
        if (++ctr[j] < d)
          break;
        ctr[j] = 0;
      }
      if (j == k || k == 0)
        break;
    }
    return s;
  }

  double maxAbs() const {
    return comp_.size() ? comp_.cwiseAbs().maxCoeff() : 0.0;
  }

private:
  SymIndexSet idx_;
  Eigen::Vector<Scalar, Eigen::Dynamic> comp_;
};

//! Symmetric tensor product v1 (.) v2 (.) ... (.) vk.
//! Each component is the average over permutations of the plain product,
//! which in the multiset layout is the permanent divided by k!.
template <typename Scalar = double>
SymTensor<Scalar>
sym_tensor_product(const std::vector<Eigen::Vector<Scalar, Eigen::Dynamic>> &vs) {
  if (vs.empty())
    throw DimensionMismatch("sym_tensor_product: empty tuple");
  const int d = static_cast<int>(vs[0].size());
  const int k = static_cast<int>(vs.size());
  for (auto &v : vs)
    if (v.size() != d)
      throw DimensionMismatch("sym_tensor_product: mixed dimensions");
  SymTensor<Scalar> out(d, k);
  // permutations of the slot assignment
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i)
    perm[i] = i;
  double kfact = 1;
  for (int i = 2; i <= k; ++i)
    kfact *= i;
  do {
    std::vector<int> ctr(k, 0);
    // accumulate v_{perm[0]}[i1] * ... over all index tuples; instead walk
    // canonical multisets directly: for each multiset, sum over distinct
    // arrangements is handled by iterating permutations here.
    for (int c = 0; c < out.size(); ++c) {
      const auto &multi = out.indexSet().index(c);
      Scalar term = 1;
      for (int j = 0; j < k; ++j)
        term *= vs[perm[j]][multi[j]];
      out.coeff(c) += term / Scalar(kfact);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

inline SymTensor<double> sym_outer_power(const Eigen::VectorXd &v, int k) {
  std::vector<Eigen::VectorXd> vs(k, v);
  return sym_tensor_product(vs);
}

} // namespace latfield
