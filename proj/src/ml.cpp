#include "stegoplane/ml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stegoplane/rng.hpp"

namespace stegoplane::ml {

// ---- PCA ----------------------------------------------------------------

namespace {

void fix_axis_signs(MatD & axes) {
    for (Eigen::Index c = 0; c < axes.cols(); ++c) {
        Eigen::Index at = 0;
        axes.col(c).cwiseAbs().maxCoeff(&at);
        if (axes(at, c) < 0.0) axes.col(c) = -axes.col(c);
    }
}

} // namespace

PcaModel pca_fit(const MatD & X, int components) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    require(n >= 2 && d >= 1, Errc::invalid_argument, "pca needs at least 2 samples");
    require(components >= 1 && components <= std::min<Eigen::Index>(n, d), Errc::invalid_argument,
            "pca component count must be in [1, min(samples, dims)]");

    PcaModel model;
    model.mean = X.colwise().mean();
    MatD centered = X.rowwise() - model.mean.transpose();
    const double denom = static_cast<double>(n - 1);

    if (n >= d) {
        const MatD cov = (centered.transpose() * centered) / denom;
        Eigen::SelfAdjointEigenSolver<MatD> eig(cov);
        require(eig.info() == Eigen::Success, Errc::invalid_argument, "pca eigendecomposition failed");
        model.total_variance = eig.eigenvalues().sum();
        model.axes.resize(d, components);
        model.eigenvalues.resize(components);
        for (int c = 0; c < components; ++c) {
            const Eigen::Index src = d - 1 - c; // solver returns ascending order
            model.axes.col(c) = eig.eigenvectors().col(src);
            model.eigenvalues[c] = eig.eigenvalues()[src];
        }
    } else {
        // Gram dual: eigenvectors of X Xᵀ / (n-1) map to the same axes.
        const MatD gram = (centered * centered.transpose()) / denom;
        Eigen::SelfAdjointEigenSolver<MatD> eig(gram);
        require(eig.info() == Eigen::Success, Errc::invalid_argument, "pca eigendecomposition failed");
        model.total_variance = eig.eigenvalues().sum();
        model.axes.resize(d, components);
        model.eigenvalues.resize(components);
        for (int c = 0; c < components; ++c) {
            const Eigen::Index src = n - 1 - c;
            const double lambda = std::max(eig.eigenvalues()[src], 0.0);
            model.eigenvalues[c] = lambda;
            if (lambda > 1e-300) {
                model.axes.col(c) = centered.transpose() * eig.eigenvectors().col(src) /
                                    std::sqrt(lambda * denom);
            } else {
                model.axes.col(c).setZero();
                model.axes(c % d, c) = 1.0;
            }
        }
    }
    fix_axis_signs(model.axes);
    return model;
}

MatD PcaModel::transform(const MatD & X) const {
    require(X.cols() == mean.size(), Errc::dimension_mismatch, "pca transform dim mismatch");
    return (X.rowwise() - mean.transpose()) * axes;
}

MatD PcaModel::inverse_transform(const MatD & Z) const {
    require(Z.cols() == axes.cols(), Errc::dimension_mismatch, "pca inverse dim mismatch");
    return (Z * axes.transpose()).rowwise() + mean.transpose();
}

double PcaModel::explained_variance_ratio() const {
    if (total_variance <= 0.0) return 0.0;
    return eigenvalues.sum() / total_variance;
}

// ---- feature scaling -------------------------------------------------------

Standardizer Standardizer::fit(const MatF & X) {
    require(X.rows() >= 2, Errc::invalid_argument, "standardizer needs >= 2 rows");
    Standardizer s;
    s.mean = X.colwise().mean();
    MatF centered = X.rowwise() - s.mean.transpose();
    s.scale = (centered.array().square().colwise().sum() / static_cast<float>(X.rows())).sqrt();
    for (Eigen::Index i = 0; i < s.scale.size(); ++i) {
        if (s.scale[i] < 1e-12f) s.scale[i] = 1.f;
    }
    return s;
}

MatF Standardizer::transform(const MatF & X) const {
    require(X.cols() == mean.size(), Errc::dimension_mismatch, "standardizer dim mismatch");
    return (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

// ---- logistic regression ---------------------------------------------------

void LogisticRegression::fit(const MatF & X, const std::vector<std::uint8_t> & y) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    require(n == static_cast<Eigen::Index>(y.size()), Errc::length_mismatch,
            "feature/label count mismatch");
    bool saw0 = false, saw1 = false;
    for (const auto v : y) (v ? saw1 : saw0) = true;
    require(saw0 && saw1, Errc::degenerate_labels, "labels are all one class");

    VecF target(n);
    for (Eigen::Index i = 0; i < n; ++i) target[i] = static_cast<float>(y[static_cast<std::size_t>(i)]);

    const float l2 = config_.l2 < 0 ? 1.f / static_cast<float>(n) : static_cast<float>(config_.l2);
    weights_ = VecF::Zero(d);
    bias_ = 0.f;

    VecF m_w = VecF::Zero(d), v_w = VecF::Zero(d);
    float m_b = 0.f, v_b = 0.f;
    const float lr = static_cast<float>(config_.learning_rate);
    const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    const float inv_n = 1.f / static_cast<float>(n);

    VecF margins(n), probs(n), residual(n), grad_w(d);
    iterations_ = 0;
    for (int it = 1; it <= config_.max_iters; ++it) {
        margins.noalias() = X * weights_;
        margins.array() += bias_;
        probs = (1.f / (1.f + (-margins.array()).exp())).matrix();
        residual = probs - target;
        grad_w.noalias() = X.transpose() * residual;
        grad_w *= inv_n;
        grad_w += l2 * weights_;
        const float grad_b = residual.sum() * inv_n;

        const double gnorm = std::sqrt(static_cast<double>(grad_w.squaredNorm()) +
                                       static_cast<double>(grad_b) * grad_b);
        iterations_ = it;
        if (gnorm < config_.tol) break;

        const float c1 = 1.f - std::pow(beta1, static_cast<float>(it));
        const float c2 = 1.f - std::pow(beta2, static_cast<float>(it));
        m_w = beta1 * m_w + (1.f - beta1) * grad_w;
        v_w = (beta2 * v_w.array() + (1.f - beta2) * grad_w.array().square()).matrix();
        weights_.array() -= lr * (m_w.array() / c1) / ((v_w.array() / c2).sqrt() + eps);
        m_b = beta1 * m_b + (1.f - beta1) * grad_b;
        v_b = beta2 * v_b + (1.f - beta2) * grad_b * grad_b;
        bias_ -= lr * (m_b / c1) / (std::sqrt(v_b / c2) + eps);
    }
}

VecF LogisticRegression::decision(const MatF & X) const {
    require(X.cols() == weights_.size(), Errc::dimension_mismatch, "logreg dim mismatch");
    VecF m = X * weights_;
    m.array() += bias_;
    return m;
}

std::vector<std::uint8_t> LogisticRegression::predict(const MatF & X) const {
    const VecF m = decision(X);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = m[i] > 0.f ? 1 : 0;
    return out;
}

// ---- multilayer perceptron -------------------------------------------------

namespace {

void seeded_normal(MatF & m, SplitMix64 & rng, float scale) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            m(r, c) = static_cast<float>(rng.next_normal()) * scale;
        }
    }
}

struct AdamState {
    MatF m_w1, v_w1, m_w2, v_w2;
    VecF m_b1, v_b1, m_b2, v_b2;
    int step = 0;

    void init(const MatF & w1, const MatF & w2, const VecF & b1, const VecF & b2) {
        m_w1 = MatF::Zero(w1.rows(), w1.cols());
        v_w1 = m_w1;
        m_w2 = MatF::Zero(w2.rows(), w2.cols());
        v_w2 = m_w2;
        m_b1 = VecF::Zero(b1.size());
        v_b1 = m_b1;
        m_b2 = VecF::Zero(b2.size());
        v_b2 = m_b2;
    }

    template <typename T>
    void update_one(T & param, const T & grad, T & m, T & v, float lr, float c1, float c2) {
        const float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
        m = beta1 * m + (1.f - beta1) * grad;
        v = (beta2 * v.array() + (1.f - beta2) * grad.array().square()).matrix();
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }

    void update(MatF & w1, const MatF & g1, MatF & w2, const MatF & g2, VecF & b1, const VecF & gb1,
                VecF & b2, const VecF & gb2, float lr) {
        ++step;
        const float c1 = 1.f - std::pow(0.9f, static_cast<float>(step));
        const float c2 = 1.f - std::pow(0.999f, static_cast<float>(step));
        update_one(w1, g1, m_w1, v_w1, lr, c1, c2);
        update_one(w2, g2, m_w2, v_w2, lr, c1, c2);
        update_one(b1, gb1, m_b1, v_b1, lr, c1, c2);
        update_one(b2, gb2, m_b2, v_b2, lr, c1, c2);
    }
};

} // namespace

void MlpBinary::fit(const MatF & X, const std::vector<std::uint8_t> & y) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    require(n == static_cast<Eigen::Index>(y.size()), Errc::length_mismatch,
            "feature/label count mismatch");
    bool saw0 = false, saw1 = false;
    for (const auto v : y) (v ? saw1 : saw0) = true;
    require(saw0 && saw1, Errc::degenerate_labels, "labels are all one class");

    const Eigen::Index n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(
                                                             std::llround(config_.val_fraction * n)));
    const Eigen::Index n_fit = n - n_val;
    require(n_fit >= 2, Errc::invalid_argument, "too few rows for the validation split");

    const MatF Xf = X.topRows(n_fit);
    const MatF Xv = X.bottomRows(n_val);
    VecF yf(n_fit), yv(n_val);
    for (Eigen::Index i = 0; i < n_fit; ++i) yf[i] = static_cast<float>(y[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < n_val; ++i)
        yv[i] = static_cast<float>(y[static_cast<std::size_t>(n_fit + i)]);

    const int hidden = config_.hidden;
    SplitMix64 rng(config_.seed);
    w1_.resize(d, hidden);
    w2_.resize(hidden, 1);
    seeded_normal(w1_, rng, std::sqrt(2.f / static_cast<float>(d)));
    seeded_normal(w2_, rng, std::sqrt(2.f / static_cast<float>(hidden)));
    b1_ = VecF::Zero(hidden);
    b2_ = VecF::Zero(1);

    AdamState adam;
    adam.init(w1_, w2_, b1_, b2_);
    const float lr = static_cast<float>(config_.learning_rate);
    const float inv_nfit = 1.f / static_cast<float>(n_fit);

    MatF best_w1 = w1_, best_w2 = w2_;
    VecF best_b1 = b1_, best_b2 = b2_;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    MatF hidden_act, grad_hidden;
    VecF logits, probs, delta;
    auto val_loss = [&]() {
        MatF hv = (Xv * w1_).rowwise() + b1_.transpose();
        hv = hv.cwiseMax(0.f);
        VecF lv = hv * w2_;
        lv.array() += b2_[0];
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n_val; ++i) {
            const double z = lv[i];
            // log(1 + e^z) - y z, computed stably
            loss += std::max(z, 0.0) - static_cast<double>(yv[i]) * z + std::log1p(std::exp(-std::abs(z)));
        }
        return loss / static_cast<double>(n_val);
    };

    epochs_ = 0;
    for (int epoch = 1; epoch <= config_.max_epochs; ++epoch) {
        hidden_act = (Xf * w1_).rowwise() + b1_.transpose();
        hidden_act = hidden_act.cwiseMax(0.f);
        logits = hidden_act * w2_;
        logits.array() += b2_[0];
        probs = (1.f / (1.f + (-logits.array()).exp())).matrix();
        delta = (probs - yf) * inv_nfit;

        const MatF grad_w2 = hidden_act.transpose() * delta;
        const float grad_b2 = delta.sum();
        grad_hidden = delta * w2_.transpose();
        grad_hidden = (grad_hidden.array() * (hidden_act.array() > 0.f).cast<float>()).matrix();
        const MatF grad_w1 = Xf.transpose() * grad_hidden;
        const VecF grad_b1 = grad_hidden.colwise().sum();

        VecF gb2(1);
        gb2[0] = grad_b2;
        adam.update(w1_, grad_w1, w2_, grad_w2, b1_, grad_b1, b2_, gb2, lr);
        epochs_ = epoch;

        const double vl = val_loss();
        if (vl < best_val - config_.min_delta) {
            best_val = vl;
            best_w1 = w1_;
            best_w2 = w2_;
            best_b1 = b1_;
            best_b2 = b2_;
            since_best = 0;
        } else if (++since_best >= config_.patience) {
            break;
        }
    }
    w1_ = best_w1;
    w2_ = best_w2;
    b1_ = best_b1;
    b2_ = best_b2;
}

VecF MlpBinary::predict_proba(const MatF & X) const {
    require(X.cols() == w1_.rows(), Errc::dimension_mismatch, "mlp dim mismatch");
    MatF h = (X * w1_).rowwise() + b1_.transpose();
    h = h.cwiseMax(0.f);
    VecF logits = h * w2_;
    logits.array() += b2_[0];
    return (1.f / (1.f + (-logits.array()).exp())).matrix();
}

std::vector<std::uint8_t> MlpBinary::predict(const MatF & X) const {
    const VecF p = predict_proba(X);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p[i] > 0.5f ? 1 : 0;
    return out;
}

void MlpClassifierHeads::fit(const MatF & X, const Eigen::MatrixXi & labels) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    require(labels.rows() == n && labels.cols() == heads_, Errc::length_mismatch,
            "label matrix shape mismatch");
    require(labels.minCoeff() >= 0 && labels.maxCoeff() < classes_, Errc::invalid_argument,
            "label value out of range");

    const Eigen::Index n_val = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(
                                                             std::llround(config_.val_fraction * n)));
    const Eigen::Index n_fit = n - n_val;
    require(n_fit >= 2, Errc::invalid_argument, "too few rows for the validation split");

    const MatF Xf = X.topRows(n_fit);
    const MatF Xv = X.bottomRows(n_val);
    const Eigen::MatrixXi Lf = labels.topRows(n_fit);
    const Eigen::MatrixXi Lv = labels.bottomRows(n_val);

    const int hidden = config_.hidden;
    const int out_dim = heads_ * classes_;
    SplitMix64 rng(config_.seed);
    w1_.resize(d, hidden);
    w2_.resize(hidden, out_dim);
    seeded_normal(w1_, rng, std::sqrt(2.f / static_cast<float>(d)));
    seeded_normal(w2_, rng, std::sqrt(2.f / static_cast<float>(hidden)));
    b1_ = VecF::Zero(hidden);
    b2_ = VecF::Zero(out_dim);

    AdamState adam;
    adam.init(w1_, w2_, b1_, b2_);
    const float lr = static_cast<float>(config_.learning_rate);
    const float inv_nfit = 1.f / static_cast<float>(n_fit);

    MatF best_w1 = w1_, best_w2 = w2_;
    VecF best_b1 = b1_, best_b2 = b2_;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    // softmax per head over contiguous blocks of `classes_` logits
    auto softmax_heads = [&](MatF & logits) {
        for (int h = 0; h < heads_; ++h) {
            auto block = logits.middleCols(h * classes_, classes_);
            const VecF rowmax = block.rowwise().maxCoeff();
            block.colwise() -= rowmax;
            block = block.array().exp();
            const VecF rowsum = block.rowwise().sum();
            block.array().colwise() /= rowsum.array();
        }
    };
    auto ce_loss = [&](const MatF & probs, const Eigen::MatrixXi & labs) {
        double loss = 0.0;
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            for (int h = 0; h < heads_; ++h) {
                const float p = probs(i, h * classes_ + labs(i, h));
                loss -= std::log(std::max(p, 1e-12f));
            }
        }
        return loss / static_cast<double>(probs.rows());
    };
    auto forward = [&](const MatF & input, MatF & hidden_out) {
        hidden_out = (input * w1_).rowwise() + b1_.transpose();
        hidden_out = hidden_out.cwiseMax(0.f);
        MatF logits = (hidden_out * w2_).rowwise() + b2_.transpose();
        softmax_heads(logits);
        return logits;
    };

    epochs_ = 0;
    MatF hidden_act, hidden_val;
    for (int epoch = 1; epoch <= config_.max_epochs; ++epoch) {
        MatF probs = forward(Xf, hidden_act);
        // dL/dlogits = probs - onehot, averaged over rows
        for (Eigen::Index i = 0; i < n_fit; ++i) {
            for (int h = 0; h < heads_; ++h) {
                probs(i, h * classes_ + Lf(i, h)) -= 1.f;
            }
        }
        probs *= inv_nfit;

        const MatF grad_w2 = hidden_act.transpose() * probs;
        const VecF grad_b2 = probs.colwise().sum();
        MatF grad_hidden = probs * w2_.transpose();
        grad_hidden = (grad_hidden.array() * (hidden_act.array() > 0.f).cast<float>()).matrix();
        const MatF grad_w1 = Xf.transpose() * grad_hidden;
        const VecF grad_b1 = grad_hidden.colwise().sum();

        adam.update(w1_, grad_w1, w2_, grad_w2, b1_, grad_b1, b2_, grad_b2, lr);
        epochs_ = epoch;

        const double vl = ce_loss(forward(Xv, hidden_val), Lv);
        if (vl < best_val - config_.min_delta) {
            best_val = vl;
            best_w1 = w1_;
            best_w2 = w2_;
            best_b1 = b1_;
            best_b2 = b2_;
            since_best = 0;
        } else if (++since_best >= config_.patience) {
            break;
        }
    }
    w1_ = best_w1;
    w2_ = best_w2;
    b1_ = best_b1;
    b2_ = best_b2;
}

Eigen::MatrixXi MlpClassifierHeads::predict(const MatF & X) const {
    require(X.cols() == w1_.rows(), Errc::dimension_mismatch, "mlp dim mismatch");
    MatF h = (X * w1_).rowwise() + b1_.transpose();
    h = h.cwiseMax(0.f);
    MatF logits = (h * w2_).rowwise() + b2_.transpose();
    Eigen::MatrixXi out(X.rows(), heads_);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (int head = 0; head < heads_; ++head) {
            Eigen::Index best = 0;
            logits.row(i).segment(head * classes_, classes_).maxCoeff(&best);
            out(i, head) = static_cast<int>(best);
        }
    }
    return out;
}

// ---- gradient-boosted trees -----------------------------------------------

namespace {

struct BinnedFeatures {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> bins; // N x D
    std::vector<std::vector<float>> thresholds;                      // per feature, ascending
};

BinnedFeatures bin_features(const MatF & X, int max_bins) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    BinnedFeatures out;
    out.bins.resize(n, d);
    out.thresholds.resize(static_cast<std::size_t>(d));
    std::vector<float> sorted(static_cast<std::size_t>(n));
    std::vector<float> unique;
    for (Eigen::Index f = 0; f < d; ++f) {
        for (Eigen::Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = X(i, f);
        std::sort(sorted.begin(), sorted.end());
        unique.clear();
        for (const float v : sorted) {
            if (unique.empty() || v != unique.back()) unique.push_back(v);
        }
        auto & th = out.thresholds[static_cast<std::size_t>(f)];
        th.clear();
        if (static_cast<int>(unique.size()) <= max_bins) {
            // exact cuts between every pair of adjacent distinct values
            for (std::size_t u = 1; u < unique.size(); ++u) {
                th.push_back(0.5f * (unique[u - 1] + unique[u]));
            }
        } else {
            // quantile positions snapped to the nearest value boundary
            for (int b = 1; b < max_bins; ++b) {
                const std::size_t at = static_cast<std::size_t>(
                    static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(n) / max_bins);
                const float v = sorted[at];
                const auto it = std::lower_bound(unique.begin(), unique.end(), v);
                if (it == unique.begin()) continue;
                const float cut = 0.5f * (*(it - 1) + *it);
                if (th.empty() || cut > th.back()) th.push_back(cut);
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const float v = X(i, f);
            const auto it = std::upper_bound(th.begin(), th.end(), v);
            out.bins(i, f) = static_cast<std::uint8_t>(it - th.begin());
        }
    }
    return out;
}

} // namespace

void GbdtBinary::fit(const MatF & X, const std::vector<std::uint8_t> & y) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    require(n == static_cast<Eigen::Index>(y.size()), Errc::length_mismatch,
            "feature/label count mismatch");

    double positives = 0;
    for (const auto v : y) positives += v;
    // one-vs-rest heads may see a single class; fall back to the prior
    const double p0 = std::clamp(positives / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    base_margin_ = static_cast<float>(std::log(p0 / (1.0 - p0)));
    trees_.clear();
    rounds_ = 0;

    const BinnedFeatures binned = bin_features(X, config_.bins);
    const int max_nodes_per_level = 1 << config_.depth;
    const int bins = config_.bins;

    std::vector<float> margin(static_cast<std::size_t>(n), base_margin_);
    std::vector<float> grad(static_cast<std::size_t>(n)), hess(static_cast<std::size_t>(n));
    std::vector<int> node_of(static_cast<std::size_t>(n));

    std::vector<double> hist_g(static_cast<std::size_t>(max_nodes_per_level * d * bins));
    std::vector<double> hist_h(hist_g.size());

    for (int round = 0; round < config_.rounds; ++round) {
        double total_abs_grad = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const float p = 1.f / (1.f + std::exp(-margin[static_cast<std::size_t>(i)]));
            const float g = p - static_cast<float>(y[static_cast<std::size_t>(i)]);
            grad[static_cast<std::size_t>(i)] = g;
            hess[static_cast<std::size_t>(i)] = std::max(p * (1.f - p), 1e-12f);
            total_abs_grad += std::abs(g);
        }
        if (total_abs_grad / static_cast<double>(n) < 1e-7) break; // converged

        Tree tree;
        tree.nodes.push_back(Node{});
        std::fill(node_of.begin(), node_of.end(), 0);
        std::vector<int> level_nodes{0};

        for (int depth = 0; depth <= config_.depth && !level_nodes.empty(); ++depth) {
            const int level_count = static_cast<int>(level_nodes.size());
            std::fill(hist_g.begin(), hist_g.begin() + static_cast<std::ptrdiff_t>(level_count) * d * bins, 0.0);
            std::fill(hist_h.begin(), hist_h.begin() + static_cast<std::ptrdiff_t>(level_count) * d * bins, 0.0);

            std::vector<int> slot(tree.nodes.size(), -1);
            for (int s = 0; s < level_count; ++s) slot[static_cast<std::size_t>(level_nodes[static_cast<std::size_t>(s)])] = s;

            for (Eigen::Index i = 0; i < n; ++i) {
                const int node = node_of[static_cast<std::size_t>(i)];
                if (node < 0) continue;
                const int s = slot[static_cast<std::size_t>(node)];
                if (s < 0) continue;
                const std::size_t base = (static_cast<std::size_t>(s) * static_cast<std::size_t>(d)) * static_cast<std::size_t>(bins);
                for (Eigen::Index f = 0; f < d; ++f) {
                    const std::size_t at = base + static_cast<std::size_t>(f) * static_cast<std::size_t>(bins) +
                                           binned.bins(i, f);
                    hist_g[at] += grad[static_cast<std::size_t>(i)];
                    hist_h[at] += hess[static_cast<std::size_t>(i)];
                }
            }

            std::vector<int> next_level;
            for (int s = 0; s < level_count; ++s) {
                const int node_id = level_nodes[static_cast<std::size_t>(s)];
                const std::size_t base = static_cast<std::size_t>(s) * static_cast<std::size_t>(d) * static_cast<std::size_t>(bins);
                // node totals: every sample lands in exactly one bin of feature 0
                double g_total = 0.0, h_total = 0.0;
                for (int b = 0; b < bins; ++b) {
                    g_total += hist_g[base + static_cast<std::size_t>(b)];
                    h_total += hist_h[base + static_cast<std::size_t>(b)];
                }
                const double lambda = config_.l2;
                const double score_parent = g_total * g_total / (h_total + lambda);

                double best_gain = 1e-12;
                int best_feature = -1;
                int best_bin = -1;
                double best_gl = 0.0, best_hl = 0.0;
                for (Eigen::Index f = 0; f < d; ++f) {
                    const auto & th = binned.thresholds[static_cast<std::size_t>(f)];
                    if (th.empty()) continue;
                    const std::size_t fbase = base + static_cast<std::size_t>(f) * static_cast<std::size_t>(bins);
                    double gl = 0.0, hl = 0.0;
                    for (int b = 0; b < static_cast<int>(th.size()); ++b) {
                        gl += hist_g[fbase + static_cast<std::size_t>(b)];
                        hl += hist_h[fbase + static_cast<std::size_t>(b)];
                        const double gr = g_total - gl;
                        const double hr = h_total - hl;
                        if (hl <= 0.0 || hr <= 0.0) continue;
                        const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - score_parent;
                        if (gain > best_gain) {
                            best_gain = gain;
                            best_feature = static_cast<int>(f);
                            best_bin = b;
                            best_gl = gl;
                            best_hl = hl;
                        }
                    }
                }

                if (best_feature < 0 || depth == config_.depth) {
                    Node & leaf = tree.nodes[static_cast<std::size_t>(node_id)];
                    leaf.feature = -1;
                    leaf.value = static_cast<float>(-g_total / (h_total + lambda));
                    continue;
                }
                const int left_id = static_cast<int>(tree.nodes.size());
                Node left_child, right_child;
                // provisional leaf values in case children never split
                const double gr = g_total - best_gl, hr = h_total - best_hl;
                left_child.value = static_cast<float>(-best_gl / (best_hl + config_.l2));
                right_child.value = static_cast<float>(-gr / (hr + config_.l2));
                tree.nodes.push_back(left_child);
                tree.nodes.push_back(right_child);
                // push_back may reallocate; write the parent through its index
                Node & parent = tree.nodes[static_cast<std::size_t>(node_id)];
                parent.feature = best_feature;
                parent.threshold = binned.thresholds[static_cast<std::size_t>(best_feature)][static_cast<std::size_t>(best_bin)];
                parent.left = left_id;
                parent.right = left_id + 1;
                next_level.push_back(left_id);
                next_level.push_back(left_id + 1);
            }

            // route samples to children
            for (Eigen::Index i = 0; i < n; ++i) {
                const int node = node_of[static_cast<std::size_t>(i)];
                if (node < 0) continue;
                const int s = slot[static_cast<std::size_t>(node)];
                if (s < 0) continue;
                const Node & parent = tree.nodes[static_cast<std::size_t>(node)];
                if (parent.feature < 0) {
                    node_of[static_cast<std::size_t>(i)] = -1 - node; // settled in a leaf
                    continue;
                }
                const float v = X(i, parent.feature);
                node_of[static_cast<std::size_t>(i)] = v <= parent.threshold ? parent.left : parent.right;
            }
            level_nodes = std::move(next_level);
        }

        // update margins with the shrunken tree
        for (Eigen::Index i = 0; i < n; ++i) {
            margin[static_cast<std::size_t>(i)] +=
                config_.learning_rate * predict_one(tree, X.row(i).data(), X.row(i).innerStride());
        }
        for (Eigen::Index i = 0; i < n; ++i) node_of[static_cast<std::size_t>(i)] = 0;
        trees_.push_back(std::move(tree));
        rounds_ = round + 1;
    }
}

float GbdtBinary::predict_one(const Tree & tree, const float * row, Eigen::Index stride) const {
    int at = 0;
    for (;;) {
        const Node & node = tree.nodes[static_cast<std::size_t>(at)];
        if (node.feature < 0) return node.value;
        const float v = row[static_cast<Eigen::Index>(node.feature) * stride];
        at = v <= node.threshold ? node.left : node.right;
    }
}

VecF GbdtBinary::margin(const MatF & X) const {
    VecF out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        float m = base_margin_;
        for (const Tree & tree : trees_) {
            m += config_.learning_rate * predict_one(tree, X.row(i).data(), X.row(i).innerStride());
        }
        out[i] = m;
    }
    return out;
}

std::vector<std::uint8_t> GbdtBinary::predict(const MatF & X) const {
    const VecF m = margin(X);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = m[i] > 0.f ? 1 : 0;
    return out;
}

void GbdtOneVsRest::fit(const MatF & X, const std::vector<int> & labels) {
    require(static_cast<Eigen::Index>(labels.size()) == X.rows(), Errc::length_mismatch,
            "feature/label count mismatch");
    members_.clear();
    members_.reserve(static_cast<std::size_t>(classes_));
    std::vector<std::uint8_t> binary(labels.size());
    for (int c = 0; c < classes_; ++c) {
        for (std::size_t i = 0; i < labels.size(); ++i) binary[i] = labels[i] == c ? 1 : 0;
        GbdtBinary member(config_);
        member.fit(X, binary);
        members_.push_back(std::move(member));
    }
}

std::vector<int> GbdtOneVsRest::predict(const MatF & X) const {
    require(!members_.empty(), Errc::invalid_argument, "classifier not fitted");
    MatF margins(X.rows(), classes_);
    for (int c = 0; c < classes_; ++c) margins.col(c) = members_[static_cast<std::size_t>(c)].margin(X);
    std::vector<int> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::Index best = 0;
        margins.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

// ---- ridge regression -------------------------------------------------------

RidgeModel ridge_fit(const MatD & X, const MatD & Y, double alpha) {
    require(X.rows() == Y.rows(), Errc::length_mismatch, "ridge needs matched row counts");
    require(X.rows() >= 2, Errc::invalid_argument, "ridge needs at least 2 rows");
    RidgeModel model;
    model.x_mean = X.colwise().mean();
    model.y_mean = Y.colwise().mean();
    const MatD Xc = X.rowwise() - model.x_mean.transpose();
    const MatD Yc = Y.rowwise() - model.y_mean.transpose();
    MatD gram = Xc.transpose() * Xc;
    gram.diagonal().array() += alpha;
    model.coef = gram.ldlt().solve(Xc.transpose() * Yc);
    return model;
}

MatD RidgeModel::predict(const MatD & X) const {
    require(X.cols() == x_mean.size(), Errc::dimension_mismatch, "ridge dim mismatch");
    return ((X.rowwise() - x_mean.transpose()) * coef).rowwise() + y_mean.transpose();
}

// ---- metrics -----------------------------------------------------------------

double accuracy(const std::vector<std::uint8_t> & predicted, const std::vector<std::uint8_t> & truth) {
    require(predicted.size() == truth.size() && !truth.empty(), Errc::length_mismatch,
            "prediction/label count mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double mean_row_cosine(const MatD & a, const MatD & b) {
    require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() > 0, Errc::dimension_mismatch,
            "cosine needs matched matrices");
    double total = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double na = a.row(i).norm();
        const double nb = b.row(i).norm();
        if (na > 0.0 && nb > 0.0) total += a.row(i).dot(b.row(i)) / (na * nb);
    }
    return total / static_cast<double>(a.rows());
}

double mean_of(const std::vector<double> & xs) {
    require(!xs.empty(), Errc::invalid_argument, "mean of empty set");
    double s = 0.0;
    for (const double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double> & xs) {
    const double m = mean_of(xs);
    double s = 0.0;
    for (const double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

} // namespace stegoplane::ml
