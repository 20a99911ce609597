#pragma once

// Linear probes on frozen embeddings.
//
// Dataset file: a header `# task=<name><TAB>kind=<binary|real|survival>`,
// then one example per line:
//   binary    patient_id<TAB>prediction_time<TAB>0|1
//   real      patient_id<TAB>prediction_time<TAB>value
//   survival  patient_id<TAB>prediction_time<TAB>duration<TAB>event(0|1)
// Feature file: `patient_id<TAB>prediction_time<TAB>f1,f2,...`.
// Prediction file: the dataset header (plus `edges=` for survival), then
// `patient_id<TAB>score` or `patient_id<TAB>S(0),S(1),...`.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ora/discretizer.hpp"
#include "ora/model.hpp"
#include "ora/objectives.hpp"
#include "ora/util.hpp"

namespace ora {

enum class TaskKind { Binary, Real, Survival };

inline std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::Binary: return "binary";
        case TaskKind::Real: return "real";
        case TaskKind::Survival: return "survival";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "binary") return TaskKind::Binary;
    if (s == "real") return TaskKind::Real;
    if (s == "survival") return TaskKind::Survival;
    throw ParseError("unknown task kind '" + s + "'");
}

struct ProbeExample {
    std::string patient_id;
    double prediction_time = 0;
    double label = 0;     // binary 0/1 or real value
    double duration = 0;  // survival only
    int event = 0;        // survival only

    friend bool operator==(const ProbeExample&, const ProbeExample&) = default;
};

struct ProbeDataset {
    std::string task;
    TaskKind kind = TaskKind::Binary;
    std::vector<ProbeExample> examples;

    size_t size() const noexcept { return examples.size(); }
    friend bool operator==(const ProbeDataset&, const ProbeDataset&) = default;
};

namespace detail {

/// Parses `# key=value<TAB>key=value` headers.
inline std::map<std::string, std::string> parse_header(std::string_view line, const std::string& what) {
    if (line.size() < 2 || line.substr(0, 2) != "# ") throw ParseError(what + ": missing '# ' header line");
    std::map<std::string, std::string> out;
    for (const auto& field : split(line.substr(2), '\t')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw ParseError(what + ": malformed header field '" + field + "'");
        out[field.substr(0, eq)] = field.substr(eq + 1);
    }
    return out;
}

inline std::string header_value(const std::map<std::string, std::string>& h, const std::string& key,
                                const std::string& what) {
    auto it = h.find(key);
    if (it == h.end()) throw ParseError(what + ": header lacks '" + key + "'");
    return it->second;
}

}  // namespace detail

inline std::string dataset_header(const std::string& task, TaskKind kind) {
    return "# task=" + task + "\tkind=" + to_string(kind);
}

inline std::string serialize_dataset(const ProbeDataset& d) {
    std::string out = dataset_header(d.task, d.kind) + '\n';
    for (const auto& e : d.examples) {
        out += e.patient_id + '\t' + format_double(e.prediction_time) + '\t';
        if (d.kind == TaskKind::Survival)
            out += format_double(e.duration) + '\t' + std::to_string(e.event);
        else if (d.kind == TaskKind::Binary)
            out += std::to_string(static_cast<int>(e.label));
        else
            out += format_double(e.label);
        out += '\n';
    }
    return out;
}

inline ProbeDataset parse_dataset(std::string_view text) {
    auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("dataset: empty file");
    auto h = detail::parse_header(lines[0], "dataset");
    ProbeDataset d;
    d.task = detail::header_value(h, "task", "dataset");
    d.kind = parse_task_kind(detail::header_value(h, "kind", "dataset"));
    std::set<std::string> seen;
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string where = "dataset line " + std::to_string(i + 1);
        auto f = split(lines[i], '\t');
        const size_t want = d.kind == TaskKind::Survival ? 4 : 3;
        if (f.size() != want) throw ParseError(where + ": expected " + std::to_string(want) + " fields");
        ProbeExample e;
        e.patient_id = f[0];
        if (!seen.insert(e.patient_id).second) throw ValidationError(where + ": duplicate patient '" + f[0] + "'");
        e.prediction_time = parse_double(f[1], where);
        if (d.kind == TaskKind::Survival) {
            e.duration = parse_double(f[2], where);
            if (!(e.duration >= 0)) throw ValidationError(where + ": negative duration");
            const auto ev = parse_int(f[3], where);
            if (ev != 0 && ev != 1) throw ParseError(where + ": event indicator must be 0 or 1");
            e.event = static_cast<int>(ev);
        } else if (d.kind == TaskKind::Binary) {
            const auto y = parse_int(f[2], where);
            if (y != 0 && y != 1) throw ParseError(where + ": binary label must be 0 or 1");
            e.label = static_cast<double>(y);
        } else {
            e.label = parse_double(f[2], where);
        }
        d.examples.push_back(std::move(e));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Features

struct FeatureMatrix {
    std::vector<std::string> patient_ids;
    std::vector<double> prediction_times;
    Eigen::MatrixXd values;  // examples x D

    size_t rows() const noexcept { return patient_ids.size(); }
};

inline std::string serialize_features(const FeatureMatrix& f) {
    std::string out;
    for (size_t i = 0; i < f.rows(); ++i) {
        out += f.patient_ids[i] + '\t' + format_double(f.prediction_times[i]) + '\t';
        for (Eigen::Index d = 0; d < f.values.cols(); ++d) {
            if (d) out += ',';
            out += format_double(f.values(static_cast<Eigen::Index>(i), d));
        }
        out += '\n';
    }
    return out;
}

inline FeatureMatrix parse_features(std::string_view text) {
    FeatureMatrix f;
    std::vector<std::vector<double>> rows;
    size_t line_no = 0;
    for (auto line : lines_of(text)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "features line " + std::to_string(line_no);
        auto fields = split(line, '\t');
        if (fields.size() != 3) throw ParseError(where + ": expected 3 fields");
        f.patient_ids.push_back(fields[0]);
        f.prediction_times.push_back(parse_double(fields[1], where));
        rows.push_back(parse_double_list(fields[2], where));
        if (rows.back().size() != rows.front().size()) throw ParseError(where + ": inconsistent feature width");
    }
    const auto D = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    f.values.resize(static_cast<Eigen::Index>(rows.size()), D);
    for (size_t i = 0; i < rows.size(); ++i)
        for (Eigen::Index d = 0; d < D; ++d) f.values(static_cast<Eigen::Index>(i), d) = rows[i][static_cast<size_t>(d)];
    return f;
}

/// Index of the last event at or before `t`, or nullopt when `t` precedes
/// every event.
inline std::optional<size_t> history_end(const PatientRecord& r, double t) {
    auto it = std::upper_bound(r.events.begin(), r.events.end(), t,
                               [](double x, const Event& e) { return x < e.time; });
    if (it == r.events.begin()) return std::nullopt;
    return static_cast<size_t>(it - r.events.begin()) - 1;
}

/// Encoder output at the last event at or before each prediction time; later
/// events are never read.
template <class Real>
FeatureMatrix extract_embeddings(const Model<Real>& model, const std::vector<PatientRecord>& records,
                                 const Vocabulary& vocab, const std::vector<BinGrid>& grids,
                                 const ProbeDataset& dataset, EmbedCounters* counters = nullptr) {
    std::unordered_map<std::string, const PatientRecord*> by_id;
    for (const auto& r : records) by_id[r.patient_id] = &r;
    const size_t D = model.config().D;
    FeatureMatrix f;
    f.values.resize(static_cast<Eigen::Index>(dataset.size()), static_cast<Eigen::Index>(D));
    for (size_t i = 0; i < dataset.size(); ++i) {
        const auto& ex = dataset.examples[i];
        auto it = by_id.find(ex.patient_id);
        if (it == by_id.end()) throw ValidationError("embed: patient '" + ex.patient_id + "' not in event file");
        auto end = history_end(*it->second, ex.prediction_time);
        if (!end)
            throw DomainError("embed: prediction time " + format_double(ex.prediction_time) + " precedes every event of '" +
                              ex.patient_id + "'");
        auto seq = embed_events(*it->second, vocab, grids, model.config().V, 0, *end + 1, model.config().context_length,
                                counters);
        ad::Tape<Real> tape;
        auto binding = model.bind(tape, false);
        const auto& E = model.encode(tape, binding, seq).value();
        const size_t last = seq.size() - 1;
        for (size_t d = 0; d < D; ++d)
            f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = static_cast<double>(E[last * D + d]);
        f.patient_ids.push_back(ex.patient_id);
        f.prediction_times.push_back(ex.prediction_time);
    }
    return f;
}

/// Rows of `f` in dataset order; every dataset patient must be present.
inline Eigen::MatrixXd align_features(const FeatureMatrix& f, const ProbeDataset& d) {
    std::unordered_map<std::string, size_t> row;
    for (size_t i = 0; i < f.rows(); ++i) row[f.patient_ids[i]] = i;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(d.size()), f.values.cols());
    for (size_t i = 0; i < d.size(); ++i) {
        auto it = row.find(d.examples[i].patient_id);
        if (it == row.end()) throw ValidationError("features lack patient '" + d.examples[i].patient_id + "'");
        out.row(static_cast<Eigen::Index>(i)) = f.values.row(static_cast<Eigen::Index>(it->second));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Heads

/// Affine map fitted on frozen features: out = ((x - mean) / scale) W + b.
struct LinearProbe {
    TaskKind kind = TaskKind::Binary;
    Eigen::VectorXd mean, scale;
    Eigen::MatrixXd weights;  // D x outputs
    Eigen::VectorXd bias;     // outputs
    std::vector<double> edges;  // survival bins
    size_t iterations = 0;
    double gradient_norm = 0;

    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const {
        Eigen::MatrixXd Z = X.rowwise() - mean.transpose();
        return Z.array().rowwise() / scale.transpose().array();
    }
    Eigen::MatrixXd logits(const Eigen::MatrixXd& X) const {
        Eigen::MatrixXd out = transform(X) * weights;
        out.rowwise() += bias.transpose();
        return out;
    }
};

namespace detail {

inline void standardize(const Eigen::MatrixXd& X, LinearProbe& p) {
    const auto n = static_cast<double>(X.rows());
    p.mean = X.colwise().mean().transpose();
    p.scale.resize(X.cols());
    for (Eigen::Index d = 0; d < X.cols(); ++d) {
        const double var = (X.col(d).array() - p.mean(d)).square().sum() / n;
        p.scale(d) = var > 1e-24 ? std::sqrt(var) : 1.0;  // constant columns map to zero
    }
}

inline void check_rows(const Eigen::MatrixXd& X, size_t n, const char* what) {
    if (X.rows() == 0) throw DomainError(std::string(what) + ": no examples");
    if (static_cast<size_t>(X.rows()) != n) throw DomainError(std::string(what) + ": label count does not match rows");
}

}  // namespace detail

struct ProbeOptions {
    double l2 = 1e-4;
    size_t max_iter = 100;
    double tolerance = 1e-6;
};

/// Logistic regression on standardized features minimizing mean cross-entropy
/// + l2/2 |w|^2 (intercept unpenalized). Damped Newton iterations until the
/// gradient norm falls to `tolerance` or `max_iter` is reached.
inline LinearProbe fit_logistic(const Eigen::MatrixXd& X, const std::vector<double>& y, const ProbeOptions& opt = {}) {
    detail::check_rows(X, y.size(), "fit_logistic");
    bool has0 = false, has1 = false;
    for (double v : y) (v > 0.5 ? has1 : has0) = true;
    if (!has0 || !has1) throw DomainError("fit_logistic: both classes must be present");
    LinearProbe p;
    p.kind = TaskKind::Binary;
    detail::standardize(X, p);
    const Eigen::Index n = X.rows(), D = X.cols();
    Eigen::MatrixXd Z(n, D + 1);
    Z.leftCols(D) = p.transform(X);
    Z.col(D).setOnes();
    Eigen::VectorXd Y(n);
    for (Eigen::Index i = 0; i < n; ++i) Y(i) = y[static_cast<size_t>(i)];
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(D + 1);
    Eigen::VectorXd penalty = Eigen::VectorXd::Constant(D + 1, opt.l2);
    penalty(D) = 0;
    const double inv_n = 1.0 / static_cast<double>(n);
    auto objective = [&](const Eigen::VectorXd& b) {
        Eigen::VectorXd eta = Z * b;
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            // log(1 + e^eta) - y eta, stably
            const double e = eta(i);
            s += (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - Y(i) * e;
        }
        return s * inv_n + 0.5 * (penalty.array() * b.array().square()).sum();
    };
    double f = objective(beta);
    for (p.iterations = 0; p.iterations < opt.max_iter; ++p.iterations) {
        Eigen::VectorXd eta = Z * beta;
        Eigen::VectorXd prob = eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
        Eigen::VectorXd grad = Z.transpose() * (prob - Y) * inv_n + penalty.cwiseProduct(beta);
        p.gradient_norm = grad.norm();
        if (p.gradient_norm <= opt.tolerance) break;
        Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
        Eigen::MatrixXd H = Z.transpose() * w.asDiagonal() * Z * inv_n;
        H.diagonal() += penalty + Eigen::VectorXd::Constant(D + 1, 1e-10);
        Eigen::VectorXd step = H.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd next = beta - step;
        double fn = objective(next);
        while (!(fn <= f) && t > 1e-10) {
            t *= 0.5;
            next = beta - t * step;
            fn = objective(next);
        }
        if (!(fn <= f)) break;
        beta = next;
        f = fn;
    }
    p.weights = beta.head(D);
    p.bias = Eigen::VectorXd::Constant(1, beta(D));
    return p;
}

/// Closed-form ridge regression on raw features:
/// (X'X/n + l2 I) w = X'y/n with an unpenalized intercept.
inline LinearProbe fit_linear(const Eigen::MatrixXd& X, const std::vector<double>& y, double l2 = 1e-4) {
    detail::check_rows(X, y.size(), "fit_linear");
    const Eigen::Index n = X.rows(), D = X.cols();
    Eigen::MatrixXd Z(n, D + 1);
    Z.leftCols(D) = X;
    Z.col(D).setOnes();
    Eigen::VectorXd Y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    const double inv_n = 1.0 / static_cast<double>(n);
    Eigen::MatrixXd A = Z.transpose() * Z * inv_n;
    A.diagonal().head(D).array() += l2;
    Eigen::VectorXd rhs = Z.transpose() * Y * inv_n;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13)
        throw DomainError("fit_linear: normal matrix is singular; use l2 > 0");
    Eigen::VectorXd beta = ldlt.solve(rhs);
    LinearProbe p;
    p.kind = TaskKind::Real;
    p.mean = Eigen::VectorXd::Zero(D);
    p.scale = Eigen::VectorXd::Ones(D);
    p.weights = beta.head(D);
    p.bias = Eigen::VectorXd::Constant(1, beta(D));
    return p;
}

struct SurvivalOptions {
    double l2 = 1e-4;
    size_t max_iter = 2000;
    double tolerance = 1e-6;
    double learning_rate = 0.05;
};

/// Softmax over `bins` duration bins (quantiles of observed durations)
/// trained on the censored discrete likelihood with full-batch Adam.
inline LinearProbe fit_discrete_survival(const Eigen::MatrixXd& X, const std::vector<double>& durations,
                                         const std::vector<int>& events, size_t bins,
                                         const SurvivalOptions& opt = {}) {
    detail::check_rows(X, durations.size(), "fit_discrete_survival");
    if (events.size() != durations.size()) throw DomainError("fit_discrete_survival: indicator count mismatch");
    if (bins < 2) throw DomainError("fit_discrete_survival: at least 2 bins required");
    std::vector<double> observed;
    for (size_t i = 0; i < durations.size(); ++i)
        if (events[i]) observed.push_back(durations[i]);
    if (observed.empty()) throw DomainError("fit_discrete_survival: every example is censored");
    LinearProbe p;
    p.kind = TaskKind::Survival;
    p.edges = quantile_edges(observed, bins);
    const size_t B = p.edges.size() + 1;
    detail::standardize(X, p);
    const Eigen::MatrixXd Z = p.transform(X);
    const size_t n = static_cast<size_t>(X.rows()), D = static_cast<size_t>(X.cols());

    HeadLayout layout;
    layout.T = B;
    layout.V = 1;
    layout.numeric = {0};
    layout.slot = {0};
    layout.n_nonnumeric = 1;
    CellTargets targets{n, 1, {}};
    for (size_t i = 0; i < n; ++i) {
        const size_t k = static_cast<size_t>(std::upper_bound(p.edges.begin(), p.edges.end(), durations[i]) - p.edges.begin());
        targets.cells.push_back({static_cast<std::uint32_t>(k), events[i] != 0});
    }
    ad::Tensor<double> feats({n, D});
    for (size_t i = 0; i < n; ++i)
        for (size_t d = 0; d < D; ++d) feats[i * D + d] = Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
    std::vector<ad::Tensor<double>> params = {ad::Tensor<double>({D, B}), ad::Tensor<double>({B})};
    ad::AdamState<double> state;
    ad::AdamConfig cfg;
    cfg.lr = opt.learning_rate;
    for (p.iterations = 0; p.iterations < opt.max_iter; ++p.iterations) {
        ad::Tape<double> tape;
        auto W = tape.leaf(params[0]), b = tape.leaf(params[1]);
        auto x = tape.constant(feats);
        HeadLogits<double> h;
        h.positions = n;
        h.nonnumeric = ad::reshape(ad::add_bias(ad::matmul(x, W), b), {n * B, 1});
        auto loss = ora_loss(h, layout, targets).loss;
        loss = ad::add(loss, ad::scale(ad::sum_all(ad::multiply(W, W)), 0.5 * opt.l2));
        tape.backward(loss);
        std::vector<std::vector<double>> grads = {tape.grad(W), tape.grad(b)};
        double g2 = 0;
        for (const auto& g : grads)
            for (double v : g) g2 += v * v;
        p.gradient_norm = std::sqrt(g2);
        if (p.gradient_norm <= opt.tolerance) break;
        ad::adam_step(params, grads, state, cfg);
    }
    p.weights.resize(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(B));
    for (size_t d = 0; d < D; ++d)
        for (size_t k = 0; k < B; ++k) p.weights(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = params[0][d * B + k];
    p.bias.resize(static_cast<Eigen::Index>(B));
    for (size_t k = 0; k < B; ++k) p.bias(static_cast<Eigen::Index>(k)) = params[1][k];
    return p;
}

/// Per-example scores: probability (binary) or value (real).
inline std::vector<double> predict_scores(const LinearProbe& p, const Eigen::MatrixXd& X) {
    if (p.kind == TaskKind::Survival) throw DomainError("predict_scores: survival probes predict curves");
    Eigen::MatrixXd z = p.logits(X);
    std::vector<double> out(static_cast<size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        out[static_cast<size_t>(i)] = p.kind == TaskKind::Binary ? 1.0 / (1.0 + std::exp(-z(i, 0))) : z(i, 0);
    return out;
}

/// Cell masses per example for a survival probe.
inline std::vector<std::vector<double>> predict_masses(const LinearProbe& p, const Eigen::MatrixXd& X) {
    if (p.kind != TaskKind::Survival) throw DomainError("predict_masses: not a survival probe");
    Eigen::MatrixXd z = p.logits(X);
    std::vector<std::vector<double>> out;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        std::vector<double> m(static_cast<size_t>(z.cols()));
        double s = 0;
        for (Eigen::Index k = 0; k < z.cols(); ++k) s += (m[static_cast<size_t>(k)] = std::exp(z(i, k) - mx));
        for (auto& v : m) v /= s;
        out.push_back(std::move(m));
    }
    return out;
}

/// S(k) = 1 - mass through bin k; non-increasing by construction.
inline std::vector<double> survival_curve(const std::vector<double>& masses) {
    std::vector<double> s(masses.size());
    double cum = 0;
    for (size_t k = 0; k < masses.size(); ++k) {
        cum += masses[k];
        s[k] = std::max(0.0, 1.0 - cum);
    }
    return s;
}

inline std::vector<std::vector<double>> predict_curves(const LinearProbe& p, const Eigen::MatrixXd& X) {
    auto masses = predict_masses(p, X);
    for (auto& m : masses) m = survival_curve(m);
    return masses;
}

// ---------------------------------------------------------------------------
// Probe and prediction files

inline std::string serialize_probe(const LinearProbe& p) {
    auto vec = [](const Eigen::VectorXd& v) {
        std::vector<double> xs(v.data(), v.data() + v.size());
        return join_doubles(xs);
    };
    std::string out = "kind\t" + to_string(p.kind) + "\n";
    out += "edges\t" + join_doubles(p.edges) + "\n";
    out += "mean\t" + vec(p.mean) + "\n";
    out += "scale\t" + vec(p.scale) + "\n";
    out += "bias\t" + vec(p.bias) + "\n";
    for (Eigen::Index d = 0; d < p.weights.rows(); ++d) out += "weight\t" + vec(p.weights.row(d).transpose()) + "\n";
    return out;
}

inline LinearProbe parse_probe(std::string_view text) {
    LinearProbe p;
    std::vector<std::vector<double>> rows;
    auto to_vec = [](const std::vector<double>& xs) {
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size())));
    };
    bool have_kind = false;
    for (auto line : lines_of(text)) {
        if (line.empty()) continue;
        auto f = split(line, '\t');
        if (f.size() != 2) throw ParseError("probe file: expected key<TAB>values");
        const std::string where = "probe file field '" + f[0] + "'";
        if (f[0] == "kind") {
            p.kind = parse_task_kind(f[1]);
            have_kind = true;
        } else if (f[0] == "edges") {
            p.edges = parse_double_list(f[1], where);
        } else if (f[0] == "mean") {
            p.mean = to_vec(parse_double_list(f[1], where));
        } else if (f[0] == "scale") {
            p.scale = to_vec(parse_double_list(f[1], where));
        } else if (f[0] == "bias") {
            p.bias = to_vec(parse_double_list(f[1], where));
        } else if (f[0] == "weight") {
            rows.push_back(parse_double_list(f[1], where));
        } else {
            throw ParseError("probe file: unknown field '" + f[0] + "'");
        }
    }
    if (!have_kind) throw ParseError("probe file: missing kind");
    p.weights.resize(static_cast<Eigen::Index>(rows.size()), p.bias.size());
    for (size_t d = 0; d < rows.size(); ++d) {
        if (static_cast<Eigen::Index>(rows[d].size()) != p.bias.size())
            throw ParseError("probe file: weight row width does not match bias");
        for (size_t k = 0; k < rows[d].size(); ++k)
            p.weights(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = rows[d][k];
    }
    if (p.mean.size() != p.weights.rows() || p.scale.size() != p.weights.rows())
        throw ParseError("probe file: standardization width does not match weights");
    return p;
}

struct Predictions {
    std::string task;
    TaskKind kind = TaskKind::Binary;
    std::vector<double> edges;
    std::vector<std::string> patient_ids;
    std::vector<double> scores;               // binary / real
    std::vector<std::vector<double>> curves;  // survival

    friend bool operator==(const Predictions&, const Predictions&) = default;
};

inline std::string serialize_predictions(const Predictions& p) {
    std::string out = dataset_header(p.task, p.kind);
    if (p.kind == TaskKind::Survival) out += "\tedges=" + join_doubles(p.edges);
    out += '\n';
    for (size_t i = 0; i < p.patient_ids.size(); ++i)
        out += p.patient_ids[i] + '\t' +
               (p.kind == TaskKind::Survival ? join_doubles(p.curves[i]) : format_double(p.scores[i])) + '\n';
    return out;
}

inline Predictions parse_predictions(std::string_view text) {
    auto lines = lines_of(text);
    if (lines.empty()) throw ParseError("predictions: empty file");
    auto h = detail::parse_header(lines[0], "predictions");
    Predictions p;
    p.task = detail::header_value(h, "task", "predictions");
    p.kind = parse_task_kind(detail::header_value(h, "kind", "predictions"));
    if (p.kind == TaskKind::Survival) p.edges = parse_double_list(detail::header_value(h, "edges", "predictions"), "edges");
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string where = "predictions line " + std::to_string(i + 1);
        auto f = split(lines[i], '\t');
        if (f.size() != 2) throw ParseError(where + ": expected 2 fields");
        p.patient_ids.push_back(f[0]);
        if (p.kind == TaskKind::Survival) {
            p.curves.push_back(parse_double_list(f[1], where));
            if (p.curves.back().size() != p.edges.size() + 1) throw ParseError(where + ": curve length mismatch");
        } else {
            p.scores.push_back(parse_double(f[1], where));
        }
    }
    return p;
}

/// Deterministic train/test assignment by patient id.
inline bool in_train_split(const std::string& patient_id, std::uint64_t seed, double train_fraction) {
    const std::uint64_t h = splitmix64(fnv1a(patient_id) ^ derive_seed(seed, "probe-split"));
    return static_cast<double>(h >> 11) * 0x1.0p-53 < train_fraction;
}

}  // namespace ora
