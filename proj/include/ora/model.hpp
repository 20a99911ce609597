#pragma once

// Causal transformer encoder over event streams plus the prediction heads.
//
// Input per event: code embedding + time-gap bucket embedding + value bucket
// embedding. The encoder is a stack of pre-norm blocks (causal multi-head
// self-attention, then a 4D-wide GELU MLP) followed by a final layer norm;
// row j of its output E depends only on events 0..j.
//
// Heads:
//  * next-code head: E -> |M| logits.
//  * factorized time-to-event head: E_j -> H_j in R^{T x D2} through one
//    shared projection, then per code a D2 -> V map (numeric codes) or
//    D2 -> 1 map (others) applied to every row of H_j. A numeric code's
//    distribution is the softmax over all T*V cells, a non-numeric code's the
//    softmax over its T cells.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ora/autodiff.hpp"
#include "ora/checkpoint.hpp"
#include "ora/discretizer.hpp"
#include "ora/event_stream.hpp"
#include "ora/vocab.hpp"

namespace ora {

enum class ObjectiveKind { NTP, TPP, ORA };

inline std::string to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::NTP: return "ntp";
        case ObjectiveKind::TPP: return "tpp";
        case ObjectiveKind::ORA: return "ora";
    }
    return "?";
}

inline ObjectiveKind parse_objective(const std::string& s) {
    if (s == "ntp") return ObjectiveKind::NTP;
    if (s == "tpp") return ObjectiveKind::TPP;
    if (s == "ora") return ObjectiveKind::ORA;
    throw ConfigError("unknown objective '" + s + "' (expected ntp, tpp or ora)");
}

struct BackboneConfig {
    size_t D = 64;
    size_t layers = 2;
    size_t heads = 2;
    size_t context_length = 128;
    size_t D2 = 32;
    size_t T = 4;
    size_t V = 4;

    void validate() const {
        if (!D || !layers || !heads || !context_length || !D2 || !T || !V)
            throw ConfigError("backbone config values must be positive");
        if (D % heads) throw ConfigError("D must be divisible by heads");
    }

    /// Transformer configuration used for parameter-count arithmetic only.
    static BackboneConfig paper_preset() { return {768, 11, 12, 8192, 512, 8, 10}; }
};

// ---------------------------------------------------------------------------
// Inputs

inline constexpr size_t kGapBuckets = 16;

/// 0 for the first event; otherwise 1 + the number of edges 2^i/24 days
/// (i = 0..13, one hour to ~341 days) at or below the gap.
inline size_t gap_bucket(std::optional<double> gap_days) {
    if (!gap_days) return 0;
    size_t b = 1;
    double edge = 1.0 / 24.0;
    for (size_t i = 0; i < kGapBuckets - 2; ++i, edge *= 2.0)
        if (*gap_days >= edge) ++b;
    return b;
}

struct InputSequence {
    std::vector<size_t> codes;          // vocabulary index, |M| for out-of-vocabulary
    std::vector<size_t> gap_buckets;    // [0, 16)
    std::vector<size_t> value_buckets;  // [0, V), V = no value
    /// Position in the source record of each element.
    std::vector<size_t> positions;

    size_t size() const noexcept { return codes.size(); }
};

struct EmbedCounters {
    size_t truncated = 0;
};

/// Input tokens for events [begin, end) of a record, keeping only the most
/// recent `context_length` of them.
inline InputSequence embed_events(const PatientRecord& record, const Vocabulary& vocab,
                                  const std::vector<BinGrid>& grids, size_t V, size_t begin, size_t end,
                                  size_t context_length, EmbedCounters* counters = nullptr) {
    if (end > record.size() || begin > end) throw DomainError("embed_events: position range out of bounds");
    if (end - begin > context_length) {
        begin = end - context_length;
        if (counters) ++counters->truncated;
    }
    InputSequence seq;
    for (size_t j = begin; j < end; ++j) {
        const Event& ev = record.events[j];
        auto idx = vocab.find(ev.code);
        seq.codes.push_back(idx ? *idx : vocab.size());
        seq.gap_buckets.push_back(gap_bucket(j == 0 ? std::nullopt : std::optional(ev.time - record.events[j - 1].time)));
        size_t vb = V;
        if (idx && ev.value && grids.at(*idx).is_numeric())
            vb = std::min(bin_of(*grids[*idx].value_edges, *ev.value), V - 1);
        seq.value_buckets.push_back(vb);
        seq.positions.push_back(j);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Head layout

/// Where each vocabulary code lives in the head's stage-2 outputs.
struct HeadLayout {
    size_t T = 0;
    size_t V = 1;
    std::vector<char> numeric;  // per code
    std::vector<size_t> slot;   // index among numeric or among non-numeric codes
    size_t n_numeric = 0;
    size_t n_nonnumeric = 0;

    size_t codes() const noexcept { return numeric.size(); }
    size_t cells(size_t code) const { return numeric.at(code) ? T * V : T; }
    size_t value_bins(size_t code) const { return numeric.at(code) ? V : 1; }

    /// With `value_axis` false every code gets a T-cell distribution (the
    /// time-only objective).
    static HeadLayout from(const Vocabulary& vocab, size_t T, size_t V, bool value_axis) {
        HeadLayout l;
        l.T = T;
        l.V = V;
        for (const auto& e : vocab.entries()) {
            const bool num = value_axis && e.is_numeric;
            l.numeric.push_back(num ? 1 : 0);
            l.slot.push_back(num ? l.n_numeric++ : l.n_nonnumeric++);
        }
        return l;
    }
};

// ---------------------------------------------------------------------------
// Parameter accounting

struct HeadParameterCount {
    double factorized = 0;
    double direct = 0;
    double reduction = 0;  // 1 - factorized / direct; negative when larger
};

/// Weight counts (biases excluded) of the factorized head against a single
/// projection from R^D onto every code's cells.
inline HeadParameterCount count_parameters(const BackboneConfig& c, size_t n_numeric, size_t n_nonnumeric) {
    const double D = static_cast<double>(c.D), D2 = static_cast<double>(c.D2), T = static_cast<double>(c.T),
                 V = static_cast<double>(c.V);
    const double num = static_cast<double>(n_numeric), non = static_cast<double>(n_nonnumeric);
    HeadParameterCount out;
    out.factorized = D * T * D2 + num * D2 * V + non * D2;
    out.direct = D * (T * V * num + T * non);
    out.reduction = out.direct > 0 ? 1.0 - out.factorized / out.direct : 0.0;
    return out;
}

inline HeadParameterCount count_parameters(const BackboneConfig& c, const Vocabulary& vocab) {
    const size_t num = vocab.numeric_count();
    return count_parameters(c, num, vocab.size() - num);
}

/// Weights of the encoder stack (embeddings excluded, biases and layer norms
/// included) for a given MLP width.
inline double count_backbone_parameters(const BackboneConfig& c, size_t mlp_hidden) {
    const double D = static_cast<double>(c.D), H = static_cast<double>(mlp_hidden);
    const double per_layer = 4 * (D * D + D) + (D * H + H) + (H * D + D) + 4 * D;
    return static_cast<double>(c.layers) * per_layer + 2 * D;
}

// ---------------------------------------------------------------------------
// Model

template <class Real>
struct HeadLogits {
    std::optional<ad::Var<Real>> numeric;     // (L*T) x (n_numeric*V)
    std::optional<ad::Var<Real>> nonnumeric;  // (L*T) x n_nonnumeric
    size_t positions = 0;
};

/// Per-code discretized distribution at one position.
struct HeadOutput {
    size_t T = 0;
    /// code -> probabilities, row-major T x V (numeric) or T (other).
    std::unordered_map<size_t, std::vector<double>> probs;
    std::unordered_map<size_t, size_t> value_bins;
};

template <class Real>
class Model {
public:
    Model(BackboneConfig config, ObjectiveKind objective, const Vocabulary& vocab, std::uint64_t seed)
        : config_(config), objective_(objective), layout_(make_layout(config, objective, vocab)),
          vocab_size_(vocab.size()) {
        config_.validate();
        ad::Rng rng(seed);
        init(rng);
    }

    const BackboneConfig& config() const noexcept { return config_; }
    ObjectiveKind objective() const noexcept { return objective_; }
    const HeadLayout& layout() const noexcept { return layout_; }
    size_t vocab_size() const noexcept { return vocab_size_; }

    std::vector<ad::Tensor<Real>>& params() noexcept { return params_; }
    const std::vector<ad::Tensor<Real>>& params() const noexcept { return params_; }
    const std::vector<std::string>& names() const noexcept { return names_; }

    ad::Tensor<Real>& param(const std::string& name) { return params_.at(index_.at(name)); }
    const ad::Tensor<Real>& param(const std::string& name) const { return params_.at(index_.at(name)); }

    std::vector<NamedTensor<Real>> named_params() const {
        std::vector<NamedTensor<Real>> out;
        for (size_t i = 0; i < params_.size(); ++i) out.push_back({names_[i], params_[i]});
        return out;
    }

    void load(const std::vector<NamedTensor<Real>>& entries) {
        if (entries.size() != params_.size())
            throw ValidationError("checkpoint has " + std::to_string(entries.size()) + " entries, model expects " +
                                  std::to_string(params_.size()));
        for (const auto& e : entries) {
            auto it = index_.find(e.name);
            if (it == index_.end()) throw ValidationError("checkpoint entry '" + e.name + "' unknown to model");
            if (params_[it->second].shape != e.tensor.shape)
                throw ValidationError("checkpoint entry '" + e.name + "' has shape " + ad::shape_str(e.tensor.shape) +
                                      ", model expects " + ad::shape_str(params_[it->second].shape));
            params_[it->second] = e.tensor;
        }
    }

    /// Parameter leaves on a tape, in `params()` order.
    struct Binding {
        std::vector<ad::Var<Real>> vars;
        const Model* model = nullptr;
        ad::Var<Real> operator[](const std::string& name) const { return vars.at(model->index_.at(name)); }
    };

    Binding bind(ad::Tape<Real>& tape, bool requires_grad) const {
        Binding b;
        b.model = this;
        b.vars.reserve(params_.size());
        for (const auto& p : params_) b.vars.push_back(tape.leaf(p, requires_grad));
        return b;
    }

    /// Per-position embeddings E (L x D), causal.
    ad::Var<Real> encode(ad::Tape<Real>&, const Binding& p, const InputSequence& in) const {
        const size_t L = in.size();
        if (L == 0) throw DomainError("encode: empty sequence");
        if (L > config_.context_length) throw DomainError("encode: sequence longer than context length");
        const size_t D = config_.D, H = config_.heads, dh = D / H;
        using namespace ad;
        Var<Real> x = add(add(gather_rows(p["embed.code"], in.codes), gather_rows(p["embed.gap"], in.gap_buckets)),
                          gather_rows(p["embed.value"], in.value_buckets));
        const auto mask = causal_mask(H, L);
        const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
        for (size_t l = 0; l < config_.layers; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            Var<Real> h = layer_norm(x, p[pre + "ln1.gain"], p[pre + "ln1.bias"]);
            auto heads_of = [&](const std::string& w) {
                Var<Real> y = add_bias(matmul(h, p[pre + w + ".weight"]), p[pre + w + ".bias"]);
                return swap01(reshape(y, Shape{L, H, dh}));
            };
            Var<Real> q = heads_of("query"), k = heads_of("key"), v = heads_of("value");
            Var<Real> scores = scale(matmul(q, transpose(k)), inv_sqrt);
            Var<Real> attn = softmax(masked_fill(scores, mask, Real(-1e9)));
            Var<Real> ctx = reshape(swap01(matmul(attn, v)), Shape{L, D});
            x = add(x, add_bias(matmul(ctx, p[pre + "attn_out.weight"]), p[pre + "attn_out.bias"]));
            Var<Real> h2 = layer_norm(x, p[pre + "ln2.gain"], p[pre + "ln2.bias"]);
            Var<Real> m = gelu(add_bias(matmul(h2, p[pre + "mlp_in.weight"]), p[pre + "mlp_in.bias"]));
            x = add(x, add_bias(matmul(m, p[pre + "mlp_out.weight"]), p[pre + "mlp_out.bias"]));
        }
        return layer_norm(x, p["final_ln.gain"], p["final_ln.bias"]);
    }

    /// Next-code logits (L x |M|).
    ad::Var<Real> ntp_logits(const Binding& p, ad::Var<Real> E) const {
        if (objective_ != ObjectiveKind::NTP) throw DomainError("ntp_logits: model has no next-code head");
        return ad::add_bias(ad::matmul(E, p["ntp.weight"]), p["ntp.bias"]);
    }

    /// Stage-2 logits of the factorized head for every row of E.
    HeadLogits<Real> head(const Binding& p, ad::Var<Real> E) const {
        if (objective_ == ObjectiveKind::NTP) throw DomainError("head: model has no time-to-event head");
        using namespace ad;
        const size_t L = E.shape().at(0);
        Var<Real> h = add_bias(matmul(E, p["head.shared.weight"]), p["head.shared.bias"]);
        h = reshape(h, Shape{L * config_.T, config_.D2});
        HeadLogits<Real> out;
        out.positions = L;
        if (layout_.n_numeric)
            out.numeric = add_bias(matmul(h, p["head.numeric.weight"]), p["head.numeric.bias"]);
        if (layout_.n_nonnumeric)
            out.nonnumeric = add_bias(matmul(h, p["head.nonnumeric.weight"]), p["head.nonnumeric.bias"]);
        return out;
    }

    /// Normalized distributions of the requested codes for one embedding row.
    HeadOutput head_forward(const std::vector<Real>& embedding, const std::vector<size_t>& codes) const {
        if (embedding.size() != config_.D) throw ShapeError("head_forward: embedding must have length D");
        for (size_t c : codes)
            if (c >= layout_.codes()) throw DomainError("head_forward: unknown code index " + std::to_string(c));
        ad::Tape<Real> tape;
        const Binding b = bind(tape, false);
        auto E = tape.constant(ad::Tensor<Real>({1, config_.D}, embedding));
        return distributions(head(b, E), 0, codes);
    }

    /// Softmax-normalized cells of `codes` at one position of a head output.
    HeadOutput distributions(const HeadLogits<Real>& logits, size_t position, const std::vector<size_t>& codes) const {
        HeadOutput out;
        out.T = layout_.T;
        const size_t T = layout_.T, V = layout_.V;
        for (size_t c : codes) {
            const bool num = layout_.numeric.at(c);
            const size_t vb = num ? V : 1;
            const auto& src = num ? logits.numeric->value() : logits.nonnumeric->value();
            const size_t width = num ? layout_.n_numeric * V : layout_.n_nonnumeric;
            const size_t offset = layout_.slot[c] * vb;
            std::vector<double> z(T * vb);
            for (size_t k = 0; k < T; ++k)
                for (size_t l = 0; l < vb; ++l) z[k * vb + l] = static_cast<double>(src[(position * T + k) * width + offset + l]);
            const double mx = *std::max_element(z.begin(), z.end());
            double s = 0;
            for (auto& v : z) s += (v = std::exp(v - mx));
            for (auto& v : z) v /= s;
            out.probs[c] = std::move(z);
            out.value_bins[c] = vb;
        }
        return out;
    }

private:
    static HeadLayout make_layout(const BackboneConfig& c, ObjectiveKind k, const Vocabulary& vocab) {
        return HeadLayout::from(vocab, c.T, k == ObjectiveKind::ORA ? c.V : 1, k == ObjectiveKind::ORA);
    }

    void add_param(const std::string& name, ad::Tensor<Real> t) {
        index_[name] = params_.size();
        names_.push_back(name);
        params_.push_back(std::move(t));
    }

    void init(ad::Rng& rng) {
        const size_t D = config_.D, K = vocab_size_;
        using ad::param_init;
        add_param("embed.code", param_init<Real>({K + 1, D}, rng, 1.0));
        add_param("embed.gap", param_init<Real>({kGapBuckets, D}, rng, 1.0));
        add_param("embed.value", param_init<Real>({config_.V + 1, D}, rng, 1.0));
        for (size_t l = 0; l < config_.layers; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            add_param(pre + "ln1.gain", ad::Tensor<Real>({D}, Real(1)));
            add_param(pre + "ln1.bias", ad::Tensor<Real>({D}));
            for (const char* w : {"query", "key", "value", "attn_out"}) {
                add_param(pre + w + ".weight", param_init<Real>({D, D}, rng));
                add_param(pre + w + ".bias", ad::Tensor<Real>({D}));
            }
            add_param(pre + "ln2.gain", ad::Tensor<Real>({D}, Real(1)));
            add_param(pre + "ln2.bias", ad::Tensor<Real>({D}));
            add_param(pre + "mlp_in.weight", param_init<Real>({D, 4 * D}, rng));
            add_param(pre + "mlp_in.bias", ad::Tensor<Real>({4 * D}));
            add_param(pre + "mlp_out.weight", param_init<Real>({4 * D, D}, rng));
            add_param(pre + "mlp_out.bias", ad::Tensor<Real>({D}));
        }
        add_param("final_ln.gain", ad::Tensor<Real>({D}, Real(1)));
        add_param("final_ln.bias", ad::Tensor<Real>({D}));
        if (objective_ == ObjectiveKind::NTP) {
            add_param("ntp.weight", param_init<Real>({D, K}, rng));
            add_param("ntp.bias", ad::Tensor<Real>({K}));
            return;
        }
        const size_t T = config_.T, D2 = config_.D2, V = layout_.V;
        add_param("head.shared.weight", param_init<Real>({D, T * D2}, rng));
        add_param("head.shared.bias", ad::Tensor<Real>({T * D2}));
        if (layout_.n_numeric) {
            add_param("head.numeric.weight", param_init<Real>({D2, layout_.n_numeric * V}, rng));
            add_param("head.numeric.bias", ad::Tensor<Real>({layout_.n_numeric * V}));
        }
        if (layout_.n_nonnumeric) {
            add_param("head.nonnumeric.weight", param_init<Real>({D2, layout_.n_nonnumeric}, rng));
            add_param("head.nonnumeric.bias", ad::Tensor<Real>({layout_.n_nonnumeric}));
        }
    }

    BackboneConfig config_;
    ObjectiveKind objective_;
    HeadLayout layout_;
    size_t vocab_size_;
    std::vector<ad::Tensor<Real>> params_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace ora
