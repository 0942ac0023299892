#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vaxnerf/encoding.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/rng.hpp"

namespace vaxnerf {

enum class DensityActivation : std::uint32_t { softplus = 0, relu = 1 };

/// Radiance MLP shape. The trunk has `depth` ReLU layers of `width` units;
/// layer depth/2 (when >= 1) sees [h; encoded position]. A linear head gives
/// the raw density; a linear feature layer is concatenated with the encoded
/// direction and fed through one ReLU layer of `color_width` units to the
/// raw rgb head.
struct MlpConfig {
    int depth = 8;
    int width = 256;
    int color_width = 128;
    int pos_levels = 10;
    int dir_levels = 4;
    bool include_input = true;
    DensityActivation density_activation = DensityActivation::softplus;
    double density_shift = -1.0;  // softplus(raw + shift); ignored in relu mode

    int pos_dim() const { return encoded_size(pos_levels, include_input); }
    int dir_dim() const { return encoded_size(dir_levels, include_input); }
    int skip_layer() const { return depth / 2 >= 1 ? depth / 2 : -1; }

    void validate() const {
        if (depth < 1 || width < 1 || color_width < 1) throw ConfigError("mlp depth, width and color_width must be >= 1");
        if (pos_levels < 0 || dir_levels < 0) throw ConfigError("encoding levels must be >= 0");
    }

    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Parameters of one MLP, stored as a single flat buffer so that gradients,
/// optimizer moments and checkpoints share one layout. Tensors are listed
/// in declaration order: for every linear layer its weight (out x in,
/// column-major) then its bias; layers are trunk 0..depth-1, density head,
/// feature, color hidden, rgb head.
template <class Scalar>
class MlpParams {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MatMap = Eigen::Map<Mat>;
    using ConstMatMap = Eigen::Map<const Mat>;
    using VecMap = Eigen::Map<Vec>;
    using ConstVecMap = Eigen::Map<const Vec>;

    struct Slot {
        int rows;
        int cols;
        std::size_t offset;
    };

    MlpParams() = default;

    explicit MlpParams(const MlpConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        std::size_t offset = 0;
        auto add = [&](int out, int in) {
            slots_.push_back({out, in, offset});
            offset += static_cast<std::size_t>(out) * in;
            slots_.push_back({out, 1, offset});
            offset += static_cast<std::size_t>(out);
        };
        for (int l = 0; l < cfg.depth; ++l) {
            int in = l == 0 ? cfg.pos_dim() : cfg.width;
            if (l == cfg.skip_layer()) in = cfg.width + cfg.pos_dim();
            add(cfg.width, in);
        }
        add(1, cfg.width);
        add(cfg.width, cfg.width);
        add(cfg.color_width, cfg.width + cfg.dir_dim());
        add(3, cfg.color_width);
        values_.assign(offset, Scalar(0));
    }

    const MlpConfig& config() const { return cfg_; }
    std::size_t size() const { return values_.size(); }
    std::vector<Scalar>& values() { return values_; }
    const std::vector<Scalar>& values() const { return values_; }
    const std::vector<Slot>& slots() const { return slots_; }
    int layer_count() const { return cfg_.depth + 4; }

    int density_layer() const { return cfg_.depth; }
    int feature_layer() const { return cfg_.depth + 1; }
    int color_layer() const { return cfg_.depth + 2; }
    int rgb_layer() const { return cfg_.depth + 3; }

    MatMap weight(int layer) {
        const Slot& s = slots_[2 * layer];
        return MatMap(values_.data() + s.offset, s.rows, s.cols);
    }
    ConstMatMap weight(int layer) const {
        const Slot& s = slots_[2 * layer];
        return ConstMatMap(values_.data() + s.offset, s.rows, s.cols);
    }
    VecMap bias(int layer) {
        const Slot& s = slots_[2 * layer + 1];
        return VecMap(values_.data() + s.offset, s.rows);
    }
    ConstVecMap bias(int layer) const {
        const Slot& s = slots_[2 * layer + 1];
        return ConstVecMap(values_.data() + s.offset, s.rows);
    }

    /// Same layout, all zeros (gradient accumulator).
    MlpParams zeros_like() const {
        MlpParams z = *this;
        std::fill(z.values_.begin(), z.values_.end(), Scalar(0));
        return z;
    }

    bool all_finite() const {
        for (Scalar v : values_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    /// Glorot-uniform weights, zero biases.
    void init_glorot(Rng& rng) {
        for (std::size_t i = 0; i < slots_.size(); i += 2) {
            const Slot& w = slots_[i];
            double limit = std::sqrt(6.0 / (w.rows + w.cols));
            for (std::size_t k = 0; k < static_cast<std::size_t>(w.rows) * w.cols; ++k)
                values_[w.offset + k] = static_cast<Scalar>(rng.uniform(-limit, limit));
            const Slot& b = slots_[i + 1];
            std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(b.offset), b.rows, Scalar(0));
        }
    }

    template <class Other>
    MlpParams<Other> cast() const {
        MlpParams<Other> out(cfg_);
        for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<Other>(values_[i]);
        return out;
    }

    friend bool operator==(const MlpParams& a, const MlpParams& b) {
        return a.cfg_ == b.cfg_ && a.values_ == b.values_;
    }

private:
    MlpConfig cfg_;
    std::vector<Slot> slots_;
    std::vector<Scalar> values_;
};

/// Activations kept by a forward pass for the backward pass.
template <class Scalar>
struct MlpTape {
    using Mat = typename MlpParams<Scalar>::Mat;
    std::vector<Mat> trunk_in;   // input of each trunk layer
    std::vector<Mat> trunk_out;  // ReLU output of each trunk layer
    Mat color_in;                // [feature; encoded direction]
    Mat color_hidden;            // ReLU output of the color layer
};

/// Batched forward pass; columns are points. Returns raw density (1 x M)
/// and raw rgb (3 x M) pre-activations.
template <class Scalar>
void mlp_forward(const MlpParams<Scalar>& p, const typename MlpParams<Scalar>::Mat& x_enc,
                 const typename MlpParams<Scalar>::Mat& d_enc, typename MlpParams<Scalar>::Mat& sigma_raw,
                 typename MlpParams<Scalar>::Mat& rgb_raw, MlpTape<Scalar>* tape = nullptr) {
    using Mat = typename MlpParams<Scalar>::Mat;
    const MlpConfig& cfg = p.config();
    if (x_enc.rows() != cfg.pos_dim() || d_enc.rows() != cfg.dir_dim() || x_enc.cols() != d_enc.cols())
        throw ValidationError("mlp_forward: encoded input shape does not match the network");
    const Eigen::Index m = x_enc.cols();

    MlpTape<Scalar> local;
    MlpTape<Scalar>& t = tape ? *tape : local;
    t.trunk_in.resize(cfg.depth);
    t.trunk_out.resize(cfg.depth);
    for (int l = 0; l < cfg.depth; ++l) {
        if (l == 0) {
            t.trunk_in[0] = x_enc;
        } else if (l == cfg.skip_layer()) {
            t.trunk_in[l].resize(cfg.width + cfg.pos_dim(), m);
            t.trunk_in[l].topRows(cfg.width) = t.trunk_out[l - 1];
            t.trunk_in[l].bottomRows(cfg.pos_dim()) = x_enc;
        } else {
            t.trunk_in[l] = t.trunk_out[l - 1];
        }
        Mat z = p.weight(l) * t.trunk_in[l];
        z.colwise() += p.bias(l);
        t.trunk_out[l] = z.cwiseMax(Scalar(0));
    }
    const Mat& h = t.trunk_out.back();
    sigma_raw = p.weight(p.density_layer()) * h;
    sigma_raw.colwise() += p.bias(p.density_layer());

    t.color_in.resize(cfg.width + cfg.dir_dim(), m);
    t.color_in.topRows(cfg.width) = p.weight(p.feature_layer()) * h;
    t.color_in.topRows(cfg.width).colwise() += p.bias(p.feature_layer());
    t.color_in.bottomRows(cfg.dir_dim()) = d_enc;
    Mat zc = p.weight(p.color_layer()) * t.color_in;
    zc.colwise() += p.bias(p.color_layer());
    t.color_hidden = zc.cwiseMax(Scalar(0));
    rgb_raw = p.weight(p.rgb_layer()) * t.color_hidden;
    rgb_raw.colwise() += p.bias(p.rgb_layer());
}

/// Accumulates parameter gradients into `grads` given upstream gradients of
/// the raw outputs.
/// Inference in fixed-width column blocks, zero-padding the last one. Every
/// product then has the same shape, so a point's output does not depend on
/// how many other points share the call or where it sits among them.
inline constexpr Eigen::Index kInferBlock = 256;

template <class Scalar>
void mlp_infer(const MlpParams<Scalar>& p, const typename MlpParams<Scalar>::Mat& x_enc,
               const typename MlpParams<Scalar>::Mat& d_enc, typename MlpParams<Scalar>::Mat& sigma_raw,
               typename MlpParams<Scalar>::Mat& rgb_raw) {
    using Mat = typename MlpParams<Scalar>::Mat;
    const Eigen::Index m = x_enc.cols();
    sigma_raw.resize(1, m);
    rgb_raw.resize(3, m);
    Mat xb = Mat::Zero(x_enc.rows(), kInferBlock), db = Mat::Zero(d_enc.rows(), kInferBlock), sb, rb;
    for (Eigen::Index b = 0; b < m; b += kInferBlock) {
        const Eigen::Index n = std::min(kInferBlock, m - b);
        if (n < kInferBlock) {
            xb.setZero();
            db.setZero();
        }
        xb.leftCols(n) = x_enc.middleCols(b, n);
        db.leftCols(n) = d_enc.middleCols(b, n);
        mlp_forward(p, xb, db, sb, rb);
        sigma_raw.middleCols(b, n) = sb.leftCols(n);
        rgb_raw.middleCols(b, n) = rb.leftCols(n);
    }
}

template <class Scalar>
void mlp_backward(const MlpParams<Scalar>& p, const MlpTape<Scalar>& t, const typename MlpParams<Scalar>::Mat& d_sigma_raw,
                  const typename MlpParams<Scalar>::Mat& d_rgb_raw, MlpParams<Scalar>& grads) {
    using Mat = typename MlpParams<Scalar>::Mat;
    const MlpConfig& cfg = p.config();

    grads.weight(p.rgb_layer()).noalias() += d_rgb_raw * t.color_hidden.transpose();
    grads.bias(p.rgb_layer()) += d_rgb_raw.rowwise().sum();
    Mat dzc = (p.weight(p.rgb_layer()).transpose() * d_rgb_raw).cwiseProduct(
        (t.color_hidden.array() > Scalar(0)).template cast<Scalar>().matrix());
    grads.weight(p.color_layer()).noalias() += dzc * t.color_in.transpose();
    grads.bias(p.color_layer()) += dzc.rowwise().sum();
    Mat dfeat = p.weight(p.color_layer()).leftCols(cfg.width).transpose() * dzc;

    const Mat& h = t.trunk_out.back();
    grads.weight(p.feature_layer()).noalias() += dfeat * h.transpose();
    grads.bias(p.feature_layer()) += dfeat.rowwise().sum();
    grads.weight(p.density_layer()).noalias() += d_sigma_raw * h.transpose();
    grads.bias(p.density_layer()) += d_sigma_raw.rowwise().sum();

    Mat dh = p.weight(p.feature_layer()).transpose() * dfeat;
    dh.noalias() += p.weight(p.density_layer()).transpose() * d_sigma_raw;
    for (int l = cfg.depth - 1; l >= 0; --l) {
        Mat dz = dh.cwiseProduct((t.trunk_out[l].array() > Scalar(0)).template cast<Scalar>().matrix());
        grads.weight(l).noalias() += dz * t.trunk_in[l].transpose();
        grads.bias(l) += dz.rowwise().sum();
        if (l == 0) break;
        Mat din = p.weight(l).transpose() * dz;
        dh = l == cfg.skip_layer() ? Mat(din.topRows(cfg.width)) : din;
    }
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Density from the raw head output.
inline double density_activation(const MlpConfig& cfg, double raw) {
    return cfg.density_activation == DensityActivation::softplus ? softplus(raw + cfg.density_shift)
                                                                  : std::max(0.0, raw);
}
inline double density_activation_grad(const MlpConfig& cfg, double raw) {
    return cfg.density_activation == DensityActivation::softplus ? sigmoid(raw + cfg.density_shift)
                                                                  : (raw > 0.0 ? 1.0 : 0.0);
}

}  // namespace vaxnerf
