#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stegoplane/errors.hpp"

namespace stegoplane::ml {

using MatF = Eigen::MatrixXf;
using VecF = Eigen::VectorXf;
using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

// ---- PCA ----------------------------------------------------------------

// Principal axes of row-sample data. Axes are orthonormal columns ordered by
// descending eigenvalue; each axis is signed so its largest-magnitude entry
// is positive. Fitting uses the covariance eigendecomposition (or the Gram
// dual when samples < dims, which yields the same axes).
struct PcaModel {
    VecD mean;        // D
    MatD axes;        // D x k
    VecD eigenvalues; // k, descending
    double total_variance = 0.0;

    MatD transform(const MatD & X) const;
    MatD inverse_transform(const MatD & Z) const;
    double explained_variance_ratio() const;
    int components() const noexcept { return static_cast<int>(axes.cols()); }
};

PcaModel pca_fit(const MatD & X, int components);

// ---- feature scaling ----------------------------------------------------

struct Standardizer {
    VecF mean;
    VecF scale; // 1 for constant columns

    static Standardizer fit(const MatF & X);
    MatF transform(const MatF & X) const;
};

// ---- logistic regression ------------------------------------------------

struct LogRegConfig {
    int max_iters = 1000;
    double tol = 1e-3;        // stop when the mean-loss gradient norm drops below
    double learning_rate = 0.05;
    double l2 = -1.0;         // < 0 means 1/N
};

class LogisticRegression {
public:
    explicit LogisticRegression(LogRegConfig config = {}) : config_(config) {}

    void fit(const MatF & X, const std::vector<std::uint8_t> & y);
    VecF decision(const MatF & X) const; // margins
    std::vector<std::uint8_t> predict(const MatF & X) const;

    const VecF & weights() const noexcept { return weights_; }
    float bias() const noexcept { return bias_; }
    int iterations_run() const noexcept { return iterations_; }

private:
    LogRegConfig config_;
    VecF weights_;
    float bias_ = 0.f;
    int iterations_ = 0;
};

// ---- multilayer perceptron ----------------------------------------------

// One hidden ReLU layer trained full-batch with adaptive-moment steps and
// early stopping on a trailing validation slice (callers order rows so the
// slice respects any grouping). Weights restore to the best validation loss.
struct MlpConfig {
    int hidden = 256;
    int max_epochs = 500;
    double learning_rate = 1e-2;
    int patience = 25;
    double min_delta = 1e-5;
    double val_fraction = 0.10;
    std::uint64_t seed = 1;
};

class MlpBinary {
public:
    explicit MlpBinary(MlpConfig config = {}) : config_(config) {}

    void fit(const MatF & X, const std::vector<std::uint8_t> & y);
    VecF predict_proba(const MatF & X) const;
    std::vector<std::uint8_t> predict(const MatF & X) const;
    int epochs_run() const noexcept { return epochs_; }

private:
    MlpConfig config_;
    MatF w1_, w2_;
    VecF b1_, b2_;
    int epochs_ = 0;
};

// Shared trunk with `heads` independent softmax heads of `classes` outputs.
class MlpClassifierHeads {
public:
    MlpClassifierHeads(MlpConfig config, int heads, int classes)
        : config_(config), heads_(heads), classes_(classes) {}

    void fit(const MatF & X, const Eigen::MatrixXi & labels); // labels: N x heads
    Eigen::MatrixXi predict(const MatF & X) const;
    int epochs_run() const noexcept { return epochs_; }

private:
    MlpConfig config_;
    int heads_;
    int classes_;
    MatF w1_, w2_;
    VecF b1_, b2_;
    int epochs_ = 0;
};

// ---- gradient-boosted trees ----------------------------------------------

struct GbdtConfig {
    int depth = 3;
    int rounds = 200;
    float learning_rate = 0.1f;
    int bins = 64;
    float l2 = 1.0f;
};

class GbdtBinary {
public:
    explicit GbdtBinary(GbdtConfig config = {}) : config_(config) {}

    void fit(const MatF & X, const std::vector<std::uint8_t> & y);
    VecF margin(const MatF & X) const;
    std::vector<std::uint8_t> predict(const MatF & X) const;
    int rounds_run() const noexcept { return rounds_; }

private:
    struct Node {
        int feature = -1;      // -1 marks a leaf
        float threshold = 0.f; // go left when x <= threshold
        int left = -1;
        int right = -1;
        float value = 0.f;
    };
    struct Tree {
        std::vector<Node> nodes;
    };

    float predict_one(const Tree & tree, const float * row, Eigen::Index stride) const;

    GbdtConfig config_;
    float base_margin_ = 0.f;
    std::vector<Tree> trees_;
    int rounds_ = 0;
};

// One-vs-rest multiclass on top of the binary booster.
class GbdtOneVsRest {
public:
    GbdtOneVsRest(GbdtConfig config, int classes) : config_(config), classes_(classes) {}

    void fit(const MatF & X, const std::vector<int> & labels);
    std::vector<int> predict(const MatF & X) const;

private:
    GbdtConfig config_;
    int classes_;
    std::vector<GbdtBinary> members_;
};

// ---- ridge regression ----------------------------------------------------

struct RidgeModel {
    VecD x_mean;
    VecD y_mean;
    MatD coef; // D x T
    MatD predict(const MatD & X) const;
};

RidgeModel ridge_fit(const MatD & X, const MatD & Y, double alpha);

// ---- metrics ---------------------------------------------------------------

double accuracy(const std::vector<std::uint8_t> & predicted, const std::vector<std::uint8_t> & truth);

// Mean cosine similarity over paired rows; zero-norm rows contribute 0.
double mean_row_cosine(const MatD & a, const MatD & b);

double mean_of(const std::vector<double> & xs);
double stddev_of(const std::vector<double> & xs); // population std over seeds

} // namespace stegoplane::ml
