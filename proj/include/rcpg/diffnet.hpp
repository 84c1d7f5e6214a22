#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcpg/rng.hpp"

namespace rcpg {

enum class Head { softmax, linear };

/**
Network input, either a dense vector or a list of active indices standing for
a sum of unit basis vectors (one-hot and concatenated one-hot encodings).
Both views are non-owning; the caller keeps the buffer alive for the call.
*/
struct NetInput {
    std::span<const double> dense{};
    std::span<const int> active{};
    bool use_active = false;

    static NetInput from_dense(std::span<const double> x) { return {x, {}, false}; }
    static NetInput from_active(std::span<const int> idx) { return {{}, idx, true}; }
};

/// Cached activations of one forward pass, reusable across calls.
struct NetForward {
    std::vector<double> h;  // hidden layer after the rectifier
    std::vector<double> z;  // pre-head outputs
    std::vector<double> p;  // head outputs (softmax probabilities, or z for linear)
};

constexpr double kLogProbFloor = 1e-12;

/**
Two-layer network with a rectified hidden layer and an explicit, hand-derived
backward pass. Parameters live in one flat vector laid out as
[W1 (hidden x in, row-major), b1, W2 (out x hidden, row-major), b2], which
keeps gradient accumulation, optimizer state and serialization trivial.
*/
class DiffNet {
public:
    DiffNet(int in, int out, Head head, std::uint64_t seed, int hidden = 100)
        : in_(in), out_(out), hidden_(hidden), head_(head) {
        if (in <= 0 || out <= 0 || hidden <= 0)
            throw std::invalid_argument("DiffNet: widths must be positive");
        params_.resize(param_count());
        Rng g = make_stream(seed, 0x6e65742d696e6974ULL);
        for (double& w : params_) w = uniform01(g) * 0.1 - 0.05;
    }

    static DiffNet zeros(int in, int out, Head head, int hidden = 100) {
        DiffNet n(in, out, head, 0, hidden);
        std::fill(n.params_.begin(), n.params_.end(), 0.0);
        return n;
    }

    int input_width() const { return in_; }
    int output_width() const { return out_; }
    int hidden_width() const { return hidden_; }
    Head head() const { return head_; }

    std::size_t param_count() const {
        return static_cast<std::size_t>(hidden_) * (in_ + 1) +
               static_cast<std::size_t>(out_) * (hidden_ + 1);
    }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // individual parameter accessors, mostly useful to tests and oracles
    double w1(int j, int i) const { return params_[static_cast<std::size_t>(j) * in_ + i]; }
    double b1(int j) const { return params_[off_b1() + j]; }
    double w2(int k, int j) const { return params_[off_w2() + static_cast<std::size_t>(k) * hidden_ + j]; }
    double b2(int k) const { return params_[off_b2() + k]; }

    /// theta += coeff * grad
    void axpy(double coeff, std::span<const double> grad) {
        if (grad.size() != params_.size())
            throw std::invalid_argument("DiffNet::axpy: gradient size mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i] += coeff * grad[i];
    }

    void forward_into(const NetInput& x, NetForward& f) const {
        check_input(x);
        f.h.assign(hidden_, 0.0);
        f.z.assign(out_, 0.0);
        if (x.use_active) {
            for (int j = 0; j < hidden_; ++j) f.h[j] = b1(j);
            for (int i : x.active) {
                if (i < 0 || i >= in_)
                    throw std::out_of_range("DiffNet: active index out of range");
                for (int j = 0; j < hidden_; ++j) f.h[j] += w1(j, i);
            }
        } else {
            for (int j = 0; j < hidden_; ++j) {
                double acc = b1(j);
                const double* row = params_.data() + static_cast<std::size_t>(j) * in_;
                for (int i = 0; i < in_; ++i) acc += row[i] * x.dense[i];
                f.h[j] = acc;
            }
        }
        for (int j = 0; j < hidden_; ++j)
            if (f.h[j] < 0.0) f.h[j] = 0.0;
        for (int k = 0; k < out_; ++k) {
            double acc = b2(k);
            const double* row = params_.data() + off_w2() + static_cast<std::size_t>(k) * hidden_;
            for (int j = 0; j < hidden_; ++j) acc += row[j] * f.h[j];
            f.z[k] = acc;
        }
        if (head_ == Head::softmax) {
            double zmax = *std::max_element(f.z.begin(), f.z.end());
            double sum = 0.0;
            f.p.assign(out_, 0.0);
            for (int k = 0; k < out_; ++k) {
                f.p[k] = std::exp(f.z[k] - zmax);
                sum += f.p[k];
            }
            for (int k = 0; k < out_; ++k) f.p[k] /= sum;
        } else {
            f.p = f.z;
        }
    }

    std::vector<double> forward(const NetInput& x) const {
        NetForward f;
        forward_into(x, f);
        return f.p;
    }

    /**
    Accumulates scale * dJ/dtheta into grad, where dz is dJ/dz at the cached
    forward pass f. The rectifier subgradient at exactly zero is taken as 0.
    */
    void backprop_accum(const NetInput& x, const NetForward& f, std::span<const double> dz,
                        double scale, std::span<double> grad) const {
        if (grad.size() != params_.size())
            throw std::invalid_argument("DiffNet::backprop_accum: gradient size mismatch");
        if (dz.size() != static_cast<std::size_t>(out_))
            throw std::invalid_argument("DiffNet::backprop_accum: dz size mismatch");
        // output layer
        for (int k = 0; k < out_; ++k) {
            double g = scale * dz[k];
            grad[off_b2() + k] += g;
            double* wrow = grad.data() + off_w2() + static_cast<std::size_t>(k) * hidden_;
            for (int j = 0; j < hidden_; ++j) wrow[j] += g * f.h[j];
        }
        // back into the hidden layer through the rectifier mask
        thread_local std::vector<double> gpre;
        gpre.assign(hidden_, 0.0);
        for (int j = 0; j < hidden_; ++j) {
            if (f.h[j] <= 0.0) continue;
            double acc = 0.0;
            for (int k = 0; k < out_; ++k) acc += dz[k] * w2(k, j);
            gpre[j] = acc;
        }
        for (int j = 0; j < hidden_; ++j) {
            if (gpre[j] == 0.0) continue;
            double g = scale * gpre[j];
            grad[off_b1() + j] += g;
            double* wrow = grad.data() + static_cast<std::size_t>(j) * in_;
            if (x.use_active) {
                for (int i : x.active) wrow[i] += g;
            } else {
                for (int i = 0; i < in_; ++i) wrow[i] += g * x.dense[i];
            }
        }
    }

    struct ScoreResult {
        std::vector<double> grad;
        double log_prob = 0.0;
    };

    /// Gradient of log p_k for the softmax head. The reported log probability
    /// is floored at log(1e-12); the gradient uses the exact probabilities.
    ScoreResult log_prob_grad(const NetInput& x, int k) const {
        int idx[1] = {k};
        return log_prob_grad_group(x, idx);
    }

    /**
    Gradient of log(sum_{k in group} p_k) for the softmax head. Needed when
    several output slots stand for the same outcome and their mass is pooled.
    */
    ScoreResult log_prob_grad_group(const NetInput& x, std::span<const int> group) const {
        require_head(Head::softmax, "log_prob_grad");
        if (group.empty()) throw std::invalid_argument("DiffNet: empty output group");
        NetForward f;
        forward_into(x, f);
        double pg = 0.0;
        for (int k : group) {
            if (k < 0 || k >= out_) throw std::out_of_range("DiffNet: group index out of range");
            pg += f.p[k];
        }
        std::vector<double> dz(out_);
        for (int k = 0; k < out_; ++k) dz[k] = -f.p[k];
        if (pg > 0.0)
            for (int k : group) dz[k] += f.p[k] / pg;
        ScoreResult r;
        r.grad.assign(params_.size(), 0.0);
        backprop_accum(x, f, dz, 1.0, r.grad);
        r.log_prob = std::log(std::max(pg, kLogProbFloor));
        return r;
    }

    struct EntropyResult {
        std::vector<double> grad;
        double entropy = 0.0;
    };

    /// Gradient of the softmax entropy H(p). dH/dz_j = -p_j (log p_j + H).
    EntropyResult entropy_grad(const NetInput& x) const {
        require_head(Head::softmax, "entropy_grad");
        NetForward f;
        forward_into(x, f);
        double ent = 0.0;
        for (int k = 0; k < out_; ++k)
            if (f.p[k] > 0.0) ent -= f.p[k] * std::log(f.p[k]);
        std::vector<double> dz(out_, 0.0);
        for (int k = 0; k < out_; ++k)
            if (f.p[k] > 0.0) dz[k] = -f.p[k] * (std::log(f.p[k]) + ent);
        EntropyResult r;
        r.grad.assign(params_.size(), 0.0);
        backprop_accum(x, f, dz, 1.0, r.grad);
        r.entropy = ent;
        return r;
    }

    /// Scalar output of a single-output linear-head network.
    double value(const NetInput& x) const {
        require_head(Head::linear, "value");
        if (out_ != 1) throw std::logic_error("DiffNet::value: output width must be 1");
        NetForward f;
        forward_into(x, f);
        return f.z[0];
    }

private:
    std::size_t off_b1() const { return static_cast<std::size_t>(hidden_) * in_; }
    std::size_t off_w2() const { return off_b1() + hidden_; }
    std::size_t off_b2() const { return off_w2() + static_cast<std::size_t>(out_) * hidden_; }

    void check_input(const NetInput& x) const {
        if (!x.use_active && x.dense.size() != static_cast<std::size_t>(in_))
            throw std::invalid_argument("DiffNet: dense input width mismatch");
    }
    void require_head(Head h, const char* op) const {
        if (head_ != h) throw std::logic_error(std::string("DiffNet::") + op + ": wrong head kind");
    }

    int in_, out_, hidden_;
    Head head_;
    std::vector<double> params_;
};

/**
Adam optimizer state for one network. Only critics are trained with Adam;
policy and adversary updates use plain scheduled gradient steps.
*/
struct AdamState {
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<double> m, v;

    explicit AdamState(const DiffNet& net, double lr_ = 1e-3)
        : lr(lr_), m(net.param_count(), 0.0), v(net.param_count(), 0.0) {}
};

/// One descending Adam step: params -= lr * mhat / (sqrt(vhat) + eps).
inline void adam_step(std::vector<double>& params, std::span<const double> grad, AdamState& st) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw std::invalid_argument("adam_step: size mismatch");
    st.t += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

struct CriticLoss {
    std::vector<double> grad;
    double mse = 0.0;
};

/**
Mean squared error of a single-output critic over one batch of active-feature
inputs, together with its gradient in parameter space.
*/
inline CriticLoss critic_mse_grad(const DiffNet& net,
                                  const std::vector<std::vector<int>>& active_batch,
                                  const std::vector<double>& targets) {
    if (active_batch.empty() || active_batch.size() != targets.size())
        throw std::invalid_argument("critic_mse_grad: batch sizes mismatch or empty");
    std::size_t n = active_batch.size();
    CriticLoss r;
    r.grad.assign(net.param_count(), 0.0);
    NetForward f;
    double dz[1];
    for (std::size_t i = 0; i < n; ++i) {
        NetInput x = NetInput::from_active(active_batch[i]);
        net.forward_into(x, f);
        double resid = f.z[0] - targets[i];
        r.mse += resid * resid;
        dz[0] = 2.0 * resid / static_cast<double>(n);
        net.backprop_accum(x, f, dz, 1.0, r.grad);
    }
    r.mse /= static_cast<double>(n);
    return r;
}

/// Fits a single-output critic on one episode batch: one Adam step on the
/// batch MSE gradient. Returns the pre-step loss.
inline double critic_fit_episode(DiffNet& net, const std::vector<std::vector<int>>& active_batch,
                                 const std::vector<double>& targets, AdamState& st) {
    CriticLoss loss = critic_mse_grad(net, active_batch, targets);
    adam_step(net.params(), loss.grad, st);
    return loss.mse;
}

// ---- snapshot format ----
//
// Little-endian binary: magic "RCNW", u32 version, u32 in, u32 hidden,
// u32 out, u32 head (0 softmax, 1 linear), u64 parameter count, then the
// parameters as IEEE-754 doubles.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

constexpr std::uint32_t kNetSnapshotVersion = 1;

inline void save_net(const DiffNet& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_net: cannot open " + path);
    os.write("RCNW", 4);
    detail::put_u32(os, kNetSnapshotVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(net.input_width()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.hidden_width()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.output_width()));
    detail::put_u32(os, net.head() == Head::softmax ? 0u : 1u);
    detail::put_u64(os, net.param_count());
    for (double w : net.params()) detail::put_u64(os, std::bit_cast<std::uint64_t>(w));
    if (!os) throw std::runtime_error("save_net: write failed for " + path);
}

inline DiffNet load_net(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_net: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RCNW", 4) != 0)
        throw std::runtime_error("load_net: bad magic in " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != kNetSnapshotVersion)
        throw std::runtime_error("load_net: unsupported snapshot version " +
                                 std::to_string(version));
    std::uint32_t in = detail::get_u32(is);
    std::uint32_t hidden = detail::get_u32(is);
    std::uint32_t out = detail::get_u32(is);
    std::uint32_t head = detail::get_u32(is);
    std::uint64_t count = detail::get_u64(is);
    if (!is || head > 1) throw std::runtime_error("load_net: corrupt header in " + path);
    DiffNet net = DiffNet::zeros(static_cast<int>(in), static_cast<int>(out),
                                 head == 0 ? Head::softmax : Head::linear,
                                 static_cast<int>(hidden));
    if (count != net.param_count())
        throw std::runtime_error("load_net: parameter count mismatch in " + path);
    for (double& w : net.params()) {
        w = std::bit_cast<double>(detail::get_u64(is));
        if (!is) throw std::runtime_error("load_net: truncated file " + path);
    }
    return net;
}

}  // namespace rcpg
