#pragma once

// Pretraining objectives.
//
//  * NTP: cross-entropy of the next event's code.
//  * TPP: per-code censored time-to-event likelihood over T time bins.
//  * ORA: per-code censored joint likelihood over T x V time-value cells.
//
// For an anchor position and code m with cell distribution P^m:
//   observed at cell c:           -log P^m[c]
//   censored in time bin k_c:     -log(1 - sum_{k < k_c} sum_l P^m[k, l])
// The censored argument is the mass of the cells with k >= k_c, computed
// directly and clamped below at 1e-12. Loss values are means over all
// (position, code) terms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/discretizer.hpp"
#include "ora/model.hpp"
#include "ora/targets.hpp"

namespace ora {

inline constexpr double kCensorClamp = 1e-12;

struct LossDiagnostics {
    size_t terms = 0;
    size_t observed = 0;
    size_t censored = 0;
    size_t clamped = 0;

    LossDiagnostics& operator+=(const LossDiagnostics& o) {
        terms += o.terms;
        observed += o.observed;
        censored += o.censored;
        clamped += o.clamped;
        return *this;
    }
};

template <class Real>
struct LossBatch {
    ad::Var<Real> loss;  // scalar
    LossDiagnostics diagnostics;
};

/// Scoring target of one (position, code) pair: an observed cell index, or
/// the censoring time bin k_c.
struct CellTarget {
    std::uint32_t index = 0;
    bool observed = false;
};

/// positions x codes targets, row-major.
struct CellTargets {
    size_t positions = 0;
    size_t codes = 0;
    std::vector<CellTarget> cells;

    const CellTarget& at(size_t p, size_t c) const { return cells[p * codes + c]; }
};

/// Maps target sets onto head cells. A code whose layout has no value axis
/// scores only the time bin; numeric layouts require the observed value.
inline CellTargets make_cell_targets(const std::vector<TargetSet>& sets, const std::vector<BinGrid>& grids,
                                     const HeadLayout& layout) {
    if (grids.size() != layout.codes()) throw DomainError("cell targets: missing grid for some vocabulary codes");
    CellTargets out;
    out.positions = sets.size();
    out.codes = layout.codes();
    out.cells.resize(out.positions * out.codes);
    for (size_t p = 0; p < sets.size(); ++p) {
        const TargetSet& set = sets[p];
        for (size_t c = 0; c < out.codes; ++c) {
            CellTarget& ct = out.cells[p * out.codes + c];
            ct.index = static_cast<std::uint32_t>(std::min(lookup_time(grids[c], set.censor_duration), layout.T - 1));
        }
        for (const auto& t : set.observed) {
            CellTarget& ct = out.cells[p * out.codes + t.code];
            const BinGrid& g = grids.at(t.code);
            const size_t k = std::min(lookup_time(g, t.delta_t), layout.T - 1);
            ct.observed = true;
            if (layout.numeric[t.code]) {
                if (!t.value)
                    throw DomainError("ora_loss: observed target of numeric code " + std::to_string(t.code) +
                                      " has no value");
                if (!g.is_numeric()) throw DomainError("ora_loss: numeric code " + std::to_string(t.code) + " has a time-only grid");
                const size_t l = std::min(bin_of(*g.value_edges, *t.value), layout.V - 1);
                ct.index = static_cast<std::uint32_t>(k * layout.V + l);
            } else {
                ct.index = static_cast<std::uint32_t>(k);
            }
        }
    }
    return out;
}

/// Negative log-likelihood of one term from explicit cell masses laid out
/// T x value_bins. Censored terms use the mass at time bins >= k_c, floored
/// at kCensorClamp; `clamped` reports whether the floor applied.
inline double cell_nll(const double* probs, size_t cells, size_t value_bins, const CellTarget& target,
                       bool* clamped = nullptr, double* residual = nullptr) {
    if (clamped) *clamped = false;
    if (target.observed) {
        if (target.index >= cells) throw DomainError("cell_nll: observed cell out of range");
        return -std::log(probs[target.index]);
    }
    double r = 0;
    for (size_t i = static_cast<size_t>(target.index) * value_bins; i < cells; ++i) r += probs[i];
    if (residual) *residual = r;
    if (r < kCensorClamp) {
        if (clamped) *clamped = true;
        return -std::log(kCensorClamp);
    }
    return -std::log(r);
}

namespace detail {

/// Sum over all (position, code) terms of the censored discretized
/// likelihood, as one tape op over the stage-2 logits.
template <class Real>
LossBatch<Real> censored_likelihood_sum(const HeadLogits<Real>& logits, const HeadLayout& layout,
                                        const CellTargets& targets) {
    const size_t T = layout.T, V = layout.V, P = targets.positions, K = targets.codes;
    if (K != layout.codes()) throw ShapeError("likelihood: targets and layout disagree on code count");
    if (P != logits.positions) throw ShapeError("likelihood: targets and logits disagree on position count");
    if (layout.n_numeric && !logits.numeric) throw ShapeError("likelihood: missing numeric logits");
    if (layout.n_nonnumeric && !logits.nonnumeric) throw ShapeError("likelihood: missing non-numeric logits");
    const size_t num_width = layout.n_numeric * V, non_width = layout.n_nonnumeric;
    if (logits.numeric && logits.numeric->size() != P * T * num_width)
        throw ShapeError("likelihood: numeric logits have shape " + ad::shape_str(logits.numeric->shape()));
    if (logits.nonnumeric && logits.nonnumeric->size() != P * T * non_width)
        throw ShapeError("likelihood: non-numeric logits have shape " + ad::shape_str(logits.nonnumeric->shape()));

    // Cell probabilities are saved for backward, together with a per-term
    // weight: the censored residual mass R (0 for observed or clamped terms).
    struct Saved {
        std::vector<Real> probs;  // P*K blocks of cells(c)
        std::vector<size_t> offset;
        std::vector<double> residual;
        std::vector<char> clamped;
    };
    auto saved = std::make_shared<Saved>();
    saved->offset.resize(P * K + 1);
    size_t total = 0;
    for (size_t p = 0; p < P; ++p)
        for (size_t c = 0; c < K; ++c) {
            saved->offset[p * K + c] = total;
            total += layout.cells(c);
        }
    saved->offset[P * K] = total;
    saved->probs.resize(total);
    saved->residual.assign(P * K, 0.0);
    saved->clamped.assign(P * K, 0);

    const std::vector<Real>* num_v = logits.numeric ? &logits.numeric->value() : nullptr;
    const std::vector<Real>* non_v = logits.nonnumeric ? &logits.nonnumeric->value() : nullptr;
    LossDiagnostics diag;
    double loss = 0.0;
    std::vector<double> z;
    for (size_t p = 0; p < P; ++p) {
        for (size_t c = 0; c < K; ++c) {
            const bool num = layout.numeric[c];
            const size_t vb = num ? V : 1, width = num ? num_width : non_width, off = layout.slot[c] * vb;
            const std::vector<Real>& src = num ? *num_v : *non_v;
            const size_t n = T * vb;
            z.resize(n);
            for (size_t k = 0; k < T; ++k)
                for (size_t l = 0; l < vb; ++l) z[k * vb + l] = static_cast<double>(src[(p * T + k) * width + off + l]);
            const double mx = *std::max_element(z.begin(), z.end());
            double s = 0;
            for (auto& v : z) s += (v = std::exp(v - mx));
            for (auto& v : z) v /= s;
            Real* probs = saved->probs.data() + saved->offset[p * K + c];
            for (size_t i = 0; i < n; ++i) probs[i] = static_cast<Real>(z[i]);
            const CellTarget& ct = targets.at(p, c);
            bool clamped = false;
            double r = 0;
            loss += cell_nll(z.data(), n, vb, ct, &clamped, &r);
            ++diag.terms;
            if (ct.observed) {
                ++diag.observed;
            } else {
                ++diag.censored;
                if (clamped) {
                    ++diag.clamped;
                    saved->clamped[p * K + c] = 1;
                } else {
                    saved->residual[p * K + c] = r;
                }
            }
        }
    }

    ad::Tape<Real>* tape = logits.numeric ? logits.numeric->tape : logits.nonnumeric->tape;
    const std::optional<size_t> inum = logits.numeric ? std::optional(logits.numeric->id) : std::nullopt;
    const std::optional<size_t> inon = logits.nonnumeric ? std::optional(logits.nonnumeric->id) : std::nullopt;
    const bool rg = (inum && tape->requires_grad(*inum)) || (inon && tape->requires_grad(*inon));
    auto var = tape->push(
        "censored_likelihood", ad::Shape{1}, std::vector<Real>{static_cast<Real>(loss)}, rg,
        [saved, targets, inum, inon, T, V, P, K, num_width, non_width, layout, self = tape->size()](ad::Tape<Real>& t) {
            const double g = static_cast<double>(t.grad_buffer(self)[0]);
            Real* gnum = (inum && t.requires_grad(*inum)) ? t.grad_buffer(*inum).data() : nullptr;
            Real* gnon = (inon && t.requires_grad(*inon)) ? t.grad_buffer(*inon).data() : nullptr;
            for (size_t p = 0; p < P; ++p) {
                for (size_t c = 0; c < K; ++c) {
                    const bool num = layout.numeric[c];
                    Real* dst = num ? gnum : gnon;
                    if (!dst) continue;
                    const size_t pk = p * K + c;
                    if (saved->clamped[pk]) continue;
                    const size_t vb = num ? V : 1, width = num ? num_width : non_width, off = layout.slot[c] * vb;
                    const Real* probs = saved->probs.data() + saved->offset[pk];
                    const CellTarget& ct = targets.at(p, c);
                    for (size_t k = 0; k < T; ++k) {
                        for (size_t l = 0; l < vb; ++l) {
                            const size_t i = k * vb + l;
                            double d = static_cast<double>(probs[i]);
                            if (ct.observed) {
                                if (i == ct.index) d -= 1.0;
                            } else if (k >= ct.index) {
                                d -= static_cast<double>(probs[i]) / saved->residual[pk];
                            }
                            dst[(p * T + k) * width + off + l] += static_cast<Real>(g * d);
                        }
                    }
                }
            }
        });
    return {var, diag};
}

}  // namespace detail

/// Sum of ORA terms; callers divide by the term count of the whole batch.
template <class Real>
LossBatch<Real> ora_loss_sum(const HeadLogits<Real>& logits, const HeadLayout& layout, const CellTargets& targets) {
    return detail::censored_likelihood_sum(logits, layout, targets);
}

/// Mean ORA loss over all (position, code) terms.
template <class Real>
LossBatch<Real> ora_loss(const HeadLogits<Real>& logits, const HeadLayout& layout, const CellTargets& targets) {
    auto out = detail::censored_likelihood_sum(logits, layout, targets);
    if (out.diagnostics.terms == 0) throw DomainError("ora_loss: no terms");
    out.loss = ad::scale(out.loss, Real(1) / static_cast<Real>(out.diagnostics.terms));
    return out;
}

/// Mean TPP loss; the layout must have no value axis.
template <class Real>
LossBatch<Real> tpp_loss(const HeadLogits<Real>& logits, const HeadLayout& layout, const CellTargets& targets) {
    if (layout.n_numeric) throw DomainError("tpp_loss: layout carries a value axis; use a time-only layout");
    return ora_loss(logits, layout, targets);
}

/// Sum of next-code cross-entropy terms over positions with a label.
template <class Real>
LossBatch<Real> ntp_loss_sum(ad::Var<Real> logits, const std::vector<std::optional<size_t>>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("ntp_loss: logits must be positions x codes");
    const size_t P = s[0], K = s[1];
    if (labels.size() != P) throw ShapeError("ntp_loss: one label slot per logit row required");
    const auto& v = logits.value();
    auto probs = std::make_shared<std::vector<Real>>(v.size());
    LossDiagnostics diag;
    double loss = 0;
    for (size_t p = 0; p < P; ++p) {
        if (!labels[p]) continue;
        if (*labels[p] >= K) throw DomainError("ntp_loss: label " + std::to_string(*labels[p]) + " out of vocabulary");
        const Real* row = v.data() + p * K;
        double mx = static_cast<double>(*std::max_element(row, row + K)), s_ = 0;
        for (size_t k = 0; k < K; ++k) s_ += std::exp(static_cast<double>(row[k]) - mx);
        for (size_t k = 0; k < K; ++k) (*probs)[p * K + k] = static_cast<Real>(std::exp(static_cast<double>(row[k]) - mx) / s_);
        loss += std::log(s_) + mx - static_cast<double>(row[*labels[p]]);
        ++diag.terms;
        ++diag.observed;
    }
    const size_t il = logits.id;
    auto var = logits.tape->push(
        "next_code_xent", ad::Shape{1}, std::vector<Real>{static_cast<Real>(loss)}, logits.tape->requires_grad(il),
        [il, probs, labels, P, K, self = logits.tape->size()](ad::Tape<Real>& t) {
            const Real g = t.grad_buffer(self)[0];
            auto& gl = t.grad_buffer(il);
            for (size_t p = 0; p < P; ++p) {
                if (!labels[p]) continue;
                for (size_t k = 0; k < K; ++k) gl[p * K + k] += g * (*probs)[p * K + k];
                gl[p * K + *labels[p]] -= g;
            }
        });
    return {var, diag};
}

template <class Real>
LossBatch<Real> ntp_loss(ad::Var<Real> logits, const std::vector<std::optional<size_t>>& labels) {
    auto out = ntp_loss_sum(logits, labels);
    if (out.diagnostics.terms == 0) throw DomainError("ntp_loss: no labelled positions");
    out.loss = ad::scale(out.loss, Real(1) / static_cast<Real>(out.diagnostics.terms));
    return out;
}

/// Next-code labels for positions [begin, end): the code of the following
/// event, or nullopt for the last event and for out-of-vocabulary successors.
inline std::vector<std::optional<size_t>> next_code_labels(const PatientRecord& record, const Vocabulary& vocab,
                                                           size_t begin, size_t end) {
    std::vector<std::optional<size_t>> out;
    for (size_t j = begin; j < end; ++j)
        out.push_back(j + 1 < record.size() ? vocab.find(record.events[j + 1].code) : std::nullopt);
    return out;
}

/// One line of the training log; field order is fixed.
inline std::string training_log_line(size_t step, ObjectiveKind kind, double loss, const LossDiagnostics& d) {
    return "step=" + std::to_string(step) + "\tobjective=" + to_string(kind) + "\tloss=" + format_double(loss) +
           "\tobserved=" + std::to_string(d.observed) + "\tcensored=" + std::to_string(d.censored) +
           "\tclamped=" + std::to_string(d.clamped);
}

}  // namespace ora
