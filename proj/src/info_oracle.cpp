#include "fbc/info_oracle.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fbc {

namespace {

void check_disjoint(const std::vector<int>& a, const std::vector<int>& b) {
    for (int x : a)
        for (int y : b)
            if (x == y) throw std::invalid_argument("variable sets must be disjoint");
}

void check_vars(const DiscreteJoint& j, const std::vector<int>& vars) {
    if (vars.empty()) throw std::invalid_argument("variable set must be non-empty");
    for (int v : vars)
        if (v < 0 || v >= j.num_vars()) throw std::invalid_argument("variable index out of range");
}

int pack_subset(const std::vector<int>& assignment, const std::vector<int>& vars,
                const std::vector<int>& arity) {
    int idx = 0;
    for (int v : vars) idx = idx * arity[static_cast<size_t>(v)] + assignment[static_cast<size_t>(v)];
    return idx;
}

int subset_cells(const DiscreteJoint& j, const std::vector<int>& vars) {
    int n = 1;
    for (int v : vars) n *= j.arity[static_cast<size_t>(v)];
    return n;
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::vector<int> arity_, std::vector<double> p_)
    : arity(std::move(arity_)), p(std::move(p_)) {
    for (int a : arity)
        if (a <= 0) throw std::invalid_argument("joint: arities must be positive");
    if (static_cast<int>(p.size()) != cells())
        throw std::invalid_argument("joint: table size does not match arities");
    double total = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("joint: entries must be in [0,1]");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("joint: table sums to " + std::to_string(total) + ", expected 1");
}

int DiscreteJoint::cells() const {
    int n = 1;
    for (int a : arity) n *= a;
    return n;
}

std::vector<int> DiscreteJoint::unpack(int cell) const {
    std::vector<int> out(arity.size(), 0);
    for (int v = num_vars() - 1; v >= 0; --v) {
        out[static_cast<size_t>(v)] = cell % arity[static_cast<size_t>(v)];
        cell /= arity[static_cast<size_t>(v)];
    }
    return out;
}

std::vector<double> DiscreteJoint::marginal(const std::vector<int>& vars) const {
    check_vars(*this, vars);
    std::vector<double> out(static_cast<size_t>(subset_cells(*this, vars)), 0.0);
    for (int cell = 0; cell < cells(); ++cell) {
        std::vector<int> a = unpack(cell);
        out[static_cast<size_t>(pack_subset(a, vars, arity))] += p[static_cast<size_t>(cell)];
    }
    return out;
}

double entropy(const std::vector<double>& dist) {
    double total = 0.0;
    for (double v : dist) {
        if (v < 0.0 || !std::isfinite(v))
            throw std::invalid_argument("entropy: probabilities must be finite and non-negative");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("entropy: distribution sums to " + std::to_string(total));
    double h = 0.0;
    for (double v : dist)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double nats_to_bits(double nats) { return nats / std::log(2.0); }

double mutual_information(const DiscreteJoint& joint, const std::vector<int>& a,
                          const std::vector<int>& b) {
    check_vars(joint, a);
    check_vars(joint, b);
    check_disjoint(a, b);
    std::vector<double> pa = joint.marginal(a);
    std::vector<double> pb = joint.marginal(b);
    // joint marginal over a ++ b, indexed consistently with pack_subset
    std::vector<int> ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    std::vector<double> pab(static_cast<size_t>(subset_cells(joint, ab)), 0.0);
    int bcells = subset_cells(joint, b);
    for (int cell = 0; cell < joint.cells(); ++cell) {
        std::vector<int> asg = joint.unpack(cell);
        int ia = pack_subset(asg, a, joint.arity);
        int ib = pack_subset(asg, b, joint.arity);
        pab[static_cast<size_t>(ia * bcells + ib)] += joint.p[static_cast<size_t>(cell)];
    }
    double mi = 0.0;
    for (size_t ia = 0; ia < pa.size(); ++ia)
        for (size_t ib = 0; ib < pb.size(); ++ib) {
            double pj = pab[ia * static_cast<size_t>(bcells) + ib];
            if (pj > 0.0) mi += pj * std::log(pj / (pa[ia] * pb[ib]));
        }
    return mi;
}

double conditional_mutual_information(const DiscreteJoint& joint, const std::vector<int>& a,
                                      const std::vector<int>& b, const std::vector<int>& c) {
    check_vars(joint, a);
    check_vars(joint, b);
    check_vars(joint, c);
    check_disjoint(a, b);
    check_disjoint(a, c);
    check_disjoint(b, c);
    // I(A;B|C) = I(A;{B,C}) - I(A;C)
    std::vector<int> bc = b;
    bc.insert(bc.end(), c.begin(), c.end());
    return mutual_information(joint, a, bc) - mutual_information(joint, a, c);
}

double verify_chain_identity(const DiscreteJoint& joint_xs, const std::function<int(int)>& f,
                             int z_arity) {
    if (joint_xs.num_vars() != 2)
        throw std::invalid_argument("verify_chain_identity: expects a joint over (X,S)");
    if (z_arity <= 0) throw std::invalid_argument("verify_chain_identity: z arity must be positive");
    int nx = joint_xs.arity[0], ns = joint_xs.arity[1];
    std::vector<double> table(static_cast<size_t>(nx * ns * z_arity), 0.0);
    for (int x = 0; x < nx; ++x) {
        int z = f(x);
        if (z < 0 || z >= z_arity)
            throw std::invalid_argument("verify_chain_identity: f(x) out of the declared z range");
        for (int s = 0; s < ns; ++s)
            table[static_cast<size_t>((x * ns + s) * z_arity + z)] =
                joint_xs.p[static_cast<size_t>(x * ns + s)];
    }
    return verify_chain_identity(DiscreteJoint({nx, ns, z_arity}, std::move(table)));
}

double verify_chain_identity(const DiscreteJoint& joint_xsz) {
    if (joint_xsz.num_vars() != 3)
        throw std::invalid_argument("verify_chain_identity: expects a joint over (X,S,Z)");
    const int X = 0, S = 1, Z = 2;
    // Z must be deterministic given X wherever X has mass.
    int nx = joint_xsz.arity[0], ns = joint_xsz.arity[1], nz = joint_xsz.arity[2];
    for (int x = 0; x < nx; ++x) {
        int seen = -1;
        for (int s = 0; s < ns; ++s)
            for (int z = 0; z < nz; ++z) {
                double v = joint_xsz.p[static_cast<size_t>((x * ns + s) * nz + z)];
                if (v <= 0.0) continue;
                if (seen == -1) seen = z;
                else if (seen != z)
                    throw std::invalid_argument(
                        "verify_chain_identity: Z is not a deterministic function of X");
            }
    }
    double i_zs = mutual_information(joint_xsz, {Z}, {S});
    double i_zx = mutual_information(joint_xsz, {Z}, {X});
    double i_x_zs = mutual_information(joint_xsz, {X}, {Z, S});
    double i_xs = mutual_information(joint_xsz, {X}, {S});
    return std::abs(i_zs - (i_zx - i_x_zs + i_xs));
}

double empirical_code_entropy(const Tensor& codes) {
    if (codes.ndim() != 2) throw std::invalid_argument("empirical_code_entropy: expects [N,m] codes");
    int n = codes.shape[0], m = codes.shape[1];
    if (m > 12)
        throw std::invalid_argument("empirical_code_entropy: m = " + std::to_string(m) +
                                    " exceeds the enumeration limit of 12");
    if (n <= 0) throw std::invalid_argument("empirical_code_entropy: empty batch");
    std::vector<double> counts(static_cast<size_t>(1) << m, 0.0);
    for (int r = 0; r < n; ++r) {
        unsigned idx = 0;
        for (int c = 0; c < m; ++c) {
            double v = codes.at2(r, c);
            if (v != 0.0 && v != 1.0)
                throw std::invalid_argument("empirical_code_entropy: non-binary entry");
            idx = (idx << 1) | (v == 1.0 ? 1u : 0u);
        }
        counts[idx] += 1.0;
    }
    for (double& c : counts) c /= n;
    return entropy(counts);
}

}  // namespace fbc
