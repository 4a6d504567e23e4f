#pragma once

#include <functional>
#include <vector>

#include "fbc/tensor.hpp"

namespace fbc {

/// Explicit joint probability table over small finite variables,
/// row-major over the product space of the stated arities.
struct DiscreteJoint {
    std::vector<int> arity;
    std::vector<double> p;

    DiscreteJoint(std::vector<int> arity_, std::vector<double> p_);
    int cells() const;
    int num_vars() const { return static_cast<int>(arity.size()); }

    /// Marginal over the given variable subset (ascending order preserved).
    std::vector<double> marginal(const std::vector<int>& vars) const;
    /// Flat cell index -> per-variable assignment.
    std::vector<int> unpack(int cell) const;
};

/// -sum p ln p in nats, with 0 ln 0 = 0. Rejects unnormalized input.
double entropy(const std::vector<double>& dist);

double nats_to_bits(double nats);

/// I(A;B) over disjoint variable subsets of the joint.
double mutual_information(const DiscreteJoint& joint, const std::vector<int>& a,
                          const std::vector<int>& b);

/// I(A;B|C), also over disjoint subsets.
double conditional_mutual_information(const DiscreteJoint& joint, const std::vector<int>& a,
                                      const std::vector<int>& b, const std::vector<int>& c);

/// Residual |I(Z,S) - [I(Z,X) - I(X,{Z,S}) + I(X,S)]| for Z = f(X), on a
/// joint over (X, S). Extends the table with Z and evaluates each term
/// by brute force.
double verify_chain_identity(const DiscreteJoint& joint_xs, const std::function<int(int)>& f,
                             int z_arity);

/// Same residual on an explicit 3-variable joint over (X, S, Z); raises
/// if Z is not (almost surely) a deterministic function of X.
double verify_chain_identity(const DiscreteJoint& joint_xsz);

/// Plug-in entropy of a batch of m-bit codes (rows of a [N,m] 0/1
/// tensor), by exhaustive enumeration. m must be at most 12.
double empirical_code_entropy(const Tensor& codes);

}  // namespace fbc
