#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "mixture.hpp"
#include "rng.hpp"
#include "sphere_geometry.hpp"
#include "stats.hpp"

namespace spinlab {

/// Memory ceiling for coupling tensors, settable via SPINLAB_MEM_BUDGET_MB
/// (default 2048 MiB).  Checked at sampling time, before allocation.
inline std::size_t mem_budget_bytes() {
    const char* env = std::getenv("SPINLAB_MEM_BUDGET_MB");
    unsigned long long mb = 2048;
    if (env && *env) {
        char* end = nullptr;
        mb = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0' || mb == 0)
            throw ConfigError("SPINLAB_MEM_BUDGET_MB must be a positive integer");
    }
    return static_cast<std::size_t>(mb) * 1024 * 1024;
}

namespace field_detail {

inline std::size_t checked_pow(int n, int p) {
    std::size_t acc = 1;
    const std::size_t cap = std::size_t{1} << 58;
    for (int i = 0; i < p; ++i) {
        if (acc > cap / static_cast<std::size_t>(n))
            throw ResourceLimit("tensor extent overflow: n=" + std::to_string(n) +
                                " p=" + std::to_string(p));
        acc *= static_cast<std::size_t>(n);
    }
    return acc;
}

inline std::vector<double>& contraction_scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

inline std::vector<double>& slot_scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

/// Full contraction of a degree-p tensor (row-major, extent n per axis) with
/// one vector per slot.
inline double contract_full(const double* t, int n, int p, const double* const* vecs) {
    if (p == 1) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += t[i] * vecs[0][i];
        return acc;
    }
    auto& buf = contraction_scratch();
    std::size_t scratch_len = checked_pow(n, p - 1);
    if (buf.size() < scratch_len) buf.resize(scratch_len);
    const double* src = t;
    std::size_t cur = checked_pow(n, p);
    for (int axis = p - 1; axis >= 1; --axis) {
        const double* v = vecs[axis];
        std::size_t rows = cur / static_cast<std::size_t>(n);
        for (std::size_t k = 0; k < rows; ++k) {
            const double* row = src + k * static_cast<std::size_t>(n);
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += row[j] * v[j];
            buf[k] = acc;  // k <= k*n: safe when src aliases buf
        }
        src = buf.data();
        cur = rows;
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += src[i] * vecs[0][i];
    return acc;
}

/// Contraction leaving one slot free; writes the length-n result to out.
/// vecs[free_slot] is ignored.  Trailing axes are folded from the back, then
/// leading axes from the front; both passes may run in place.
inline void contract_free(const double* t, int n, int p, const double* const* vecs,
                          int free_slot, double* out) {
    if (p == 1) {
        std::copy(t, t + n, out);
        return;
    }
    auto& buf = contraction_scratch();
    std::size_t scratch_len = checked_pow(n, p - 1);
    if (buf.size() < scratch_len) buf.resize(scratch_len);
    const double* src = t;
    std::size_t cur = checked_pow(n, p);
    for (int axis = p - 1; axis > free_slot; --axis) {
        const double* v = vecs[axis];
        std::size_t rows = cur / static_cast<std::size_t>(n);
        for (std::size_t k = 0; k < rows; ++k) {
            const double* row = src + k * static_cast<std::size_t>(n);
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += row[j] * v[j];
            buf[k] = acc;
        }
        src = buf.data();
        cur = rows;
    }
    for (int lead = 0; lead < free_slot; ++lead) {
        const double* v = vecs[lead];
        std::size_t stride = cur / static_cast<std::size_t>(n);
        for (std::size_t k = 0; k < stride; ++k) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += src[j * stride + k] * v[j];
            buf[k] = acc;  // k < stride <= j*stride+k for j>=1: forward-safe
        }
        src = buf.data();
        cur = stride;
    }
    std::copy(src, src + n, out);
}

}  // namespace field_detail

/// Independent standard-normal coupling tensors, one per interaction degree.
/// Entries are regenerated bit-exactly from (n, degrees, seed).
class CouplingTensors {
  public:
    CouplingTensors() = default;

    static CouplingTensors sample(int n, std::vector<int> degrees, std::uint64_t seed) {
        validate_shape(n, degrees);
        std::size_t bytes = 0;
        for (int p : degrees) bytes += field_detail::checked_pow(n, p) * sizeof(double);
        if (bytes > mem_budget_bytes())
            throw ResourceLimit("coupling tensors need " + std::to_string(bytes) +
                                " bytes, over the SPINLAB_MEM_BUDGET_MB budget");
        CouplingTensors out;
        out.n_ = n;
        out.seed_ = seed;
        out.degrees_ = std::move(degrees);
        out.data_.reserve(out.degrees_.size());
        for (int p : out.degrees_) {
            Rng rng = make_stream(seed, "tensor", static_cast<std::uint64_t>(p));
            std::normal_distribution<double> g(0.0, 1.0);
            std::vector<double> t(field_detail::checked_pow(n, p));
            for (double& x : t) x = g(rng);
            out.data_.push_back(std::move(t));
        }
        return out;
    }

    /// Explicit entries, for hand-built cases in tests.
    static CouplingTensors from_entries(int n,
                                        std::vector<std::pair<int, std::vector<double>>> entries) {
        std::vector<int> degrees;
        for (auto& [p, t] : entries) degrees.push_back(p);
        validate_shape(n, degrees);
        CouplingTensors out;
        out.n_ = n;
        out.degrees_ = std::move(degrees);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].second.size() != field_detail::checked_pow(n, out.degrees_[i]))
                throw DimensionMismatch("tensor entry count must be n^p");
            out.data_.push_back(std::move(entries[i].second));
        }
        return out;
    }

    int dim() const { return n_; }
    std::uint64_t seed() const { return seed_; }
    const std::vector<int>& degrees() const { return degrees_; }
    bool empty() const { return degrees_.empty(); }

    bool has(int p) const {
        for (int q : degrees_)
            if (q == p) return true;
        return false;
    }

    const std::vector<double>& tensor(int p) const {
        for (std::size_t i = 0; i < degrees_.size(); ++i)
            if (degrees_[i] == p) return data_[i];
        throw DomainError("no tensor of degree " + std::to_string(p));
    }

    std::size_t total_entries() const {
        std::size_t acc = 0;
        for (auto& t : data_) acc += t.size();
        return acc;
    }

    /// Binary dump (host little-endian): magic, version, n, seed, degree count,
    /// then per degree p and its n^p entries.
    void dump(std::ostream& os) const {
        write_pod(os, std::uint32_t{0x53504c54});  // "SPLT"
        write_pod(os, std::uint32_t{1});
        write_pod(os, std::uint32_t(n_));
        write_pod(os, seed_);
        write_pod(os, std::uint32_t(degrees_.size()));
        for (std::size_t i = 0; i < degrees_.size(); ++i) {
            write_pod(os, std::uint32_t(degrees_[i]));
            write_pod(os, std::uint64_t(data_[i].size()));
            os.write(reinterpret_cast<const char*>(data_[i].data()),
                     static_cast<std::streamsize>(data_[i].size() * sizeof(double)));
        }
        if (!os) throw Error("tensor dump failed");
    }

    static CouplingTensors load(std::istream& is) {
        auto magic = read_pod<std::uint32_t>(is);
        auto version = read_pod<std::uint32_t>(is);
        if (magic != 0x53504c54 || version != 1) throw Error("bad tensor dump header");
        CouplingTensors out;
        out.n_ = static_cast<int>(read_pod<std::uint32_t>(is));
        out.seed_ = read_pod<std::uint64_t>(is);
        auto count = read_pod<std::uint32_t>(is);
        for (std::uint32_t i = 0; i < count; ++i) {
            int p = static_cast<int>(read_pod<std::uint32_t>(is));
            auto len = read_pod<std::uint64_t>(is);
            if (len != field_detail::checked_pow(out.n_, p))
                throw Error("tensor dump length mismatch at degree " + std::to_string(p));
            std::vector<double> t(len);
            is.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(len * sizeof(double)));
            out.degrees_.push_back(p);
            out.data_.push_back(std::move(t));
        }
        if (!is) throw Error("tensor dump truncated");
        validate_shape(out.n_, out.degrees_);
        return out;
    }

  private:
    static void validate_shape(int n, const std::vector<int>& degrees) {
        if (n < 1) throw DimensionMismatch("coupling tensors need n >= 1");
        int prev = 0;
        for (int p : degrees) {
            if (p < 1) throw DomainError("interaction degree must be >= 1");
            if (p <= prev) throw DomainError("degrees must be strictly ascending");
            prev = p;
        }
    }

    template <class T>
    static void write_pod(std::ostream& os, T v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    template <class T>
    static T read_pod(std::istream& is) {
        T v{};
        is.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!is) throw Error("tensor dump truncated");
        return v;
    }

    int n_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<int> degrees_;
    std::vector<std::vector<double>> data_;
};

/// One (degree, coefficient) term of a Gaussian polynomial field
///   H(s) = sum_p coeff_p * <J_p, s^{(x)p}>.
struct FieldTerm {
    int degree = 0;
    double coeff = 0.0;
};

/// Coefficients gamma_p n^{-(p-1)/2} of the model Hamiltonian in dimension n.
inline std::vector<FieldTerm> hamiltonian_terms(const Mixture& mix, int n) {
    std::vector<FieldTerm> out;
    for (int p : mix.active_degrees())
        out.push_back({p, mix.coeff(p) * std::pow(static_cast<double>(n), -0.5 * (p - 1))});
    return out;
}

/// Coefficients scale * s_n * 2^{-p} x_p n^{-p/2} of the perturbation field.
inline std::vector<FieldTerm> perturbation_terms(const PerturbationParams& pp, int n,
                                                 double scale = 1.0) {
    std::vector<FieldTerm> out;
    if (scale == 0.0) return out;
    double s = pp.strength(n);
    for (int p = 1; p <= pp.p_max(); ++p)
        out.push_back({p, scale * s * std::pow(0.5, p) * pp.weight(p) *
                              std::pow(static_cast<double>(n), -0.5 * p)});
    return out;
}

namespace field_detail {

constexpr int kMaxDegree = 16;

inline void check_point(const CouplingTensors& J, std::span<const double> s) {
    if (static_cast<int>(s.size()) != J.dim())
        throw DimensionMismatch("point dimension " + std::to_string(s.size()) +
                                " does not match tensor dimension " + std::to_string(J.dim()));
}

}  // namespace field_detail

inline double field_value(const CouplingTensors& J, std::span<const FieldTerm> terms,
                          std::span<const double> s) {
    field_detail::check_point(J, s);
    double acc = 0.0;
    std::array<const double*, field_detail::kMaxDegree> vecs{};
    for (const auto& term : terms) {
        if (term.coeff == 0.0) continue;
        for (int i = 0; i < term.degree; ++i) vecs[static_cast<std::size_t>(i)] = s.data();
        acc += term.coeff * field_detail::contract_full(J.tensor(term.degree).data(), J.dim(),
                                                        term.degree, vecs.data());
    }
    return acc;
}

/// Accumulates the Euclidean gradient into out (length n).
inline void field_gradient_acc(const CouplingTensors& J, std::span<const FieldTerm> terms,
                               std::span<const double> s, std::span<double> out) {
    field_detail::check_point(J, s);
    if (out.size() != s.size()) throw DimensionMismatch("gradient output length mismatch");
    int n = J.dim();
    auto& tmp = field_detail::slot_scratch();
    if (tmp.size() < static_cast<std::size_t>(n)) tmp.resize(static_cast<std::size_t>(n));
    std::array<const double*, field_detail::kMaxDegree> vecs{};
    for (const auto& term : terms) {
        if (term.coeff == 0.0) continue;
        const double* tdata = J.tensor(term.degree).data();
        for (int i = 0; i < term.degree; ++i) vecs[static_cast<std::size_t>(i)] = s.data();
        for (int slot = 0; slot < term.degree; ++slot) {
            field_detail::contract_free(tdata, n, term.degree, vecs.data(), slot, tmp.data());
            for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += term.coeff * tmp[static_cast<std::size_t>(i)];
        }
    }
}

/// u^T Hess(H)(s) u: sum over ordered slot pairs with u substituted twice.
inline double field_directional_second(const CouplingTensors& J, std::span<const FieldTerm> terms,
                                       std::span<const double> s, std::span<const double> u) {
    field_detail::check_point(J, s);
    if (u.size() != s.size()) throw DimensionMismatch("direction length mismatch");
    int n = J.dim();
    double acc = 0.0;
    std::array<const double*, field_detail::kMaxDegree> vecs{};
    for (const auto& term : terms) {
        if (term.coeff == 0.0 || term.degree < 2) continue;
        const double* tdata = J.tensor(term.degree).data();
        for (int a = 0; a < term.degree; ++a) {
            for (int b = 0; b < term.degree; ++b) {
                if (a == b) continue;
                for (int i = 0; i < term.degree; ++i) vecs[static_cast<std::size_t>(i)] = s.data();
                vecs[static_cast<std::size_t>(a)] = u.data();
                vecs[static_cast<std::size_t>(b)] = u.data();
                acc += term.coeff * field_detail::contract_full(tdata, n, term.degree, vecs.data());
            }
        }
    }
    return acc;
}

/// Accumulates Hess(H)(s) u into out.
inline void field_hessian_vec_acc(const CouplingTensors& J, std::span<const FieldTerm> terms,
                                  std::span<const double> s, std::span<const double> u,
                                  std::span<double> out) {
    field_detail::check_point(J, s);
    if (u.size() != s.size() || out.size() != s.size())
        throw DimensionMismatch("hessian-vector length mismatch");
    int n = J.dim();
    auto& tmp = field_detail::slot_scratch();
    if (tmp.size() < static_cast<std::size_t>(n)) tmp.resize(static_cast<std::size_t>(n));
    std::array<const double*, field_detail::kMaxDegree> vecs{};
    for (const auto& term : terms) {
        if (term.coeff == 0.0 || term.degree < 2) continue;
        const double* tdata = J.tensor(term.degree).data();
        for (int a = 0; a < term.degree; ++a) {
            for (int b = 0; b < term.degree; ++b) {
                if (a == b) continue;
                for (int i = 0; i < term.degree; ++i) vecs[static_cast<std::size_t>(i)] = s.data();
                vecs[static_cast<std::size_t>(b)] = u.data();
                field_detail::contract_free(tdata, n, term.degree, vecs.data(), a, tmp.data());
                for (int i = 0; i < n; ++i)
                    out[static_cast<std::size_t>(i)] += term.coeff * tmp[static_cast<std::size_t>(i)];
            }
        }
    }
}

/// Accumulates the s-gradient of u^T Hess(H)(s) u into out.
inline void field_directional_second_grad_acc(const CouplingTensors& J,
                                              std::span<const FieldTerm> terms,
                                              std::span<const double> s, std::span<const double> u,
                                              std::span<double> out) {
    field_detail::check_point(J, s);
    if (u.size() != s.size() || out.size() != s.size())
        throw DimensionMismatch("directional-second gradient length mismatch");
    int n = J.dim();
    auto& tmp = field_detail::slot_scratch();
    if (tmp.size() < static_cast<std::size_t>(n)) tmp.resize(static_cast<std::size_t>(n));
    std::array<const double*, field_detail::kMaxDegree> vecs{};
    for (const auto& term : terms) {
        if (term.coeff == 0.0 || term.degree < 3) continue;
        const double* tdata = J.tensor(term.degree).data();
        for (int a = 0; a < term.degree; ++a) {
            for (int b = 0; b < term.degree; ++b) {
                if (a == b) continue;
                for (int k = 0; k < term.degree; ++k) {
                    if (k == a || k == b) continue;
                    for (int i = 0; i < term.degree; ++i)
                        vecs[static_cast<std::size_t>(i)] = s.data();
                    vecs[static_cast<std::size_t>(a)] = u.data();
                    vecs[static_cast<std::size_t>(b)] = u.data();
                    field_detail::contract_free(tdata, n, term.degree, vecs.data(), k, tmp.data());
                    for (int i = 0; i < n; ++i)
                        out[static_cast<std::size_t>(i)] += term.coeff * tmp[static_cast<std::size_t>(i)];
                }
            }
        }
    }
}

/// How the decoupling perturbation is attached to sampled fields.
struct PerturbSpec {
    bool enabled = false;
    int p_max = 4;
    double c = 0.375;
    double scale = 1.0;  // multiplies the whole perturbation term; 0 turns it off
    std::optional<PerturbationParams> fixed_x;  // override the random weight draw
    std::optional<PerturbationParams> fixed_y;

    static PerturbSpec off() { return {}; }

    static PerturbSpec standard(int p_max = 4, double c = 0.375, double scale = 1.0) {
        PerturbSpec s;
        s.enabled = true;
        s.p_max = p_max;
        s.c = c;
        s.scale = scale;
        return s;
    }
};

/// Model Hamiltonian on one sphere plus (optionally) its perturbation field:
///   value(s) = H(s) + scale * s_n * g(s).
struct PerturbedField {
    int n = 0;
    Mixture mix;
    PerturbationParams params;  // meaningful only when pert_terms nonempty
    CouplingTensors main;
    CouplingTensors pert;
    std::vector<FieldTerm> main_terms;
    std::vector<FieldTerm> pert_terms;

    static PerturbedField sample(int n, const Mixture& mix, const PerturbSpec& spec,
                                 std::uint64_t seed, bool second_factor = false) {
        PerturbedField f;
        f.n = n;
        f.mix = mix;
        f.main = CouplingTensors::sample(n, mix.active_degrees(), child_seed(seed, "main"));
        f.main_terms = hamiltonian_terms(mix, n);
        if (spec.enabled && spec.scale != 0.0) {
            const auto& fixed = second_factor ? spec.fixed_y : spec.fixed_x;
            if (fixed) {
                f.params = *fixed;
            } else {
                Rng wr = make_stream(seed, second_factor ? "weights-y" : "weights-x");
                f.params = PerturbationParams::sample(spec.p_max, spec.c, wr);
            }
            std::vector<int> degrees;
            for (int p = 1; p <= f.params.p_max(); ++p) degrees.push_back(p);
            f.pert = CouplingTensors::sample(n, std::move(degrees), child_seed(seed, "pert"));
            f.pert_terms = perturbation_terms(f.params, n, spec.scale);
        }
        return f;
    }

    /// Hand-assembled field for tests.
    static PerturbedField assemble(int n, const Mixture& mix, CouplingTensors main,
                                   CouplingTensors pert, const PerturbationParams& params,
                                   double scale) {
        PerturbedField f;
        f.n = n;
        f.mix = mix;
        f.params = params;
        f.main = std::move(main);
        f.pert = std::move(pert);
        f.main_terms = hamiltonian_terms(mix, n);
        if (!f.pert.empty() && scale != 0.0)
            f.pert_terms = perturbation_terms(params, n, scale);
        return f;
    }

    bool perturbed() const { return !pert_terms.empty(); }

    double main_value(std::span<const double> s) const { return field_value(main, main_terms, s); }

    double pert_value(std::span<const double> s) const {
        if (pert_terms.empty()) return 0.0;
        return field_value(pert, pert_terms, s);
    }

    double value(std::span<const double> s) const { return main_value(s) + pert_value(s); }

    void gradient_acc(std::span<const double> s, std::span<double> out) const {
        field_gradient_acc(main, main_terms, s, out);
        if (!pert_terms.empty()) field_gradient_acc(pert, pert_terms, s, out);
    }

    std::vector<double> gradient(std::span<const double> s) const {
        std::vector<double> out(s.size(), 0.0);
        gradient_acc(s, out);
        return out;
    }

    double directional_second(std::span<const double> s, std::span<const double> u) const {
        double acc = field_directional_second(main, main_terms, s, u);
        if (!pert_terms.empty()) acc += field_directional_second(pert, pert_terms, s, u);
        return acc;
    }

    void hessian_vec_acc(std::span<const double> s, std::span<const double> u,
                         std::span<double> out) const {
        field_hessian_vec_acc(main, main_terms, s, u, out);
        if (!pert_terms.empty()) field_hessian_vec_acc(pert, pert_terms, s, u, out);
    }

    void directional_second_grad_acc(std::span<const double> s, std::span<const double> u,
                                     std::span<double> out) const {
        field_directional_second_grad_acc(main, main_terms, s, u, out);
        if (!pert_terms.empty())
            field_directional_second_grad_acc(pert, pert_terms, s, u, out);
    }
};

/// All fields of one disorder draw for a pair system (n, m): the whole-sphere
/// Hamiltonian in dimension n+m carrying the first-factor weights x, and the
/// two factor Hamiltonians with weights x and y.  The five coupling tensor
/// sets are mutually independent; x and y are independent of everything else.
struct FieldBundle {
    int n = 0, m = 0;
    Mixture mix;
    PerturbedField whole;   // dimension n+m, weights x
    PerturbedField first;   // dimension n, weights x
    PerturbedField second;  // dimension m, weights y

    static FieldBundle sample(int n, int m, const Mixture& mix, const PerturbSpec& spec,
                              std::uint64_t seed) {
        if (n < 1 || m < 1) throw DimensionMismatch("field bundle needs n, m >= 1");
        FieldBundle b;
        b.n = n;
        b.m = m;
        b.mix = mix;
        PerturbSpec whole_spec = spec;
        PerturbSpec second_spec = spec;
        if (spec.enabled && !spec.fixed_x) {
            // one x draw shared by the whole-sphere and first-factor fields
            Rng wr = make_stream(seed, "weights-x");
            whole_spec.fixed_x = PerturbationParams::sample(spec.p_max, spec.c, wr);
        }
        if (spec.enabled && !spec.fixed_y) {
            Rng wr = make_stream(seed, "weights-y");
            second_spec.fixed_y = PerturbationParams::sample(spec.p_max, spec.c, wr);
        }
        b.whole = PerturbedField::sample(n + m, mix, whole_spec, child_seed(seed, "whole"));
        b.first = PerturbedField::sample(n, mix, whole_spec, child_seed(seed, "first"));
        b.second = PerturbedField::sample(m, mix, second_spec, child_seed(seed, "second"),
                                          /*second_factor=*/true);
        return b;
    }

    int dim_total() const { return n + m; }
};

namespace field_detail {

inline std::vector<double>& concat_scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

}  // namespace field_detail

/// Decoupled pair Hamiltonian: whole-sphere interaction term evaluated at the
/// concatenated point plus the two factor perturbations.
inline double decoupled_evaluate(const FieldBundle& b, std::span<const double> rho,
                                 std::span<const double> tau) {
    if (static_cast<int>(rho.size()) != b.n || static_cast<int>(tau.size()) != b.m)
        throw DimensionMismatch("decoupled_evaluate: factor dimensions differ from bundle");
    auto& cat = field_detail::concat_scratch();
    cat.resize(rho.size() + tau.size());
    std::copy(rho.begin(), rho.end(), cat.begin());
    std::copy(tau.begin(), tau.end(), cat.begin() + static_cast<std::ptrdiff_t>(rho.size()));
    return b.whole.main_value(cat) + b.first.pert_value(rho) + b.second.pert_value(tau);
}

/// Theoretical covariance of the decoupled field at two pair configurations.
inline double decoupled_covariance(const FieldBundle& b, const OverlapTriple& t) {
    double acc = static_cast<double>(b.n + b.m) * b.mix.xi(t.combined);
    if (b.first.perturbed()) acc += eta_x(b.first.params, b.n, t.first);
    if (b.second.perturbed()) acc += eta_x(b.second.params, b.m, t.second);
    return acc;
}

struct CovarianceCheck {
    double empirical = 0.0;
    double theory = 0.0;
    double stderr_ = 0.0;
    double z = 0.0;
};

/// Monte Carlo check of E[H(sa) H(sb)] = n * xi(<sa, sb>/n) over fresh
/// disorder draws of the unperturbed Hamiltonian.
inline CovarianceCheck covariance_check(int n, const Mixture& mix, std::span<const double> sa,
                                        std::span<const double> sb, int n_draws,
                                        std::uint64_t seed) {
    if (static_cast<int>(sa.size()) != n || static_cast<int>(sb.size()) != n)
        throw DimensionMismatch("covariance_check: point dimension mismatch");
    if (n_draws < 2) throw DomainError("covariance_check needs n_draws >= 2");
    auto terms_cache = hamiltonian_terms(mix, n);
    std::vector<double> prod(static_cast<std::size_t>(n_draws));
    for (int k = 0; k < n_draws; ++k) {
        auto J = CouplingTensors::sample(n, mix.active_degrees(),
                                         child_seed(seed, "draw", static_cast<std::uint64_t>(k)));
        prod[static_cast<std::size_t>(k)] =
            field_value(J, terms_cache, sa) * field_value(J, terms_cache, sb);
    }
    CovarianceCheck out;
    out.empirical = mean(prod);
    double r = dot(sa, sb) / static_cast<double>(n);
    out.theory = static_cast<double>(n) * mix.xi(std::clamp(r, -1.0, 1.0));
    out.stderr_ = standard_error(prod);
    out.z = out.stderr_ > 0.0 ? (out.empirical - out.theory) / out.stderr_ : 0.0;
    return out;
}

}  // namespace spinlab
