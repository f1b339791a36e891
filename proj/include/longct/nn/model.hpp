#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "longct/nn/layers.hpp"
#include "longct/util/rng.hpp"

namespace longct {

/// Fully convolutional DenseNet configuration. The defaults give the paper
/// architecture: 5 dense blocks of 4 layers down and up, growth rate 12,
/// 48 first-convolution filters (1.3748M parameters static, 1.3752M
/// longitudinal). Tests use smaller block layouts.
struct ModelConfig {
    enum class Variant { Static, Longitudinal };

    Variant variant = Variant::Longitudinal;
    int in_channels = 2;
    int n_classes = 5;
    int first_conv_filters = 48;
    int growth_rate = 12;
    std::vector<int> down_blocks{4, 4, 4, 4, 4};
    std::vector<int> up_blocks{4, 4, 4, 4, 4};
    int bottleneck_layers = 4;
    double dropout = 0.2;
    int kernel = 3;

    static ModelConfig static_config() {
        ModelConfig c;
        c.variant = Variant::Static;
        c.in_channels = 1;
        return c;
    }
    static ModelConfig longitudinal_config() { return ModelConfig{}; }

    int n_resolutions() const { return static_cast<int>(down_blocks.size()); }

    void validate() const {
        LONGCT_REQUIRE(down_blocks.size() == up_blocks.size(),
                       "ModelConfig: down/up block counts differ");
        LONGCT_REQUIRE(!down_blocks.empty(), "ModelConfig: needs at least one block");
        for (int m : down_blocks) LONGCT_REQUIRE(m >= 1, "ModelConfig: empty dense block");
        for (int m : up_blocks) LONGCT_REQUIRE(m >= 1, "ModelConfig: empty dense block");
        LONGCT_REQUIRE(bottleneck_layers >= 1, "ModelConfig: empty bottleneck");
        LONGCT_REQUIRE(n_classes >= 2 && growth_rate >= 1 && first_conv_filters >= 1,
                       "ModelConfig: invalid channel settings");
        LONGCT_REQUIRE(dropout >= 0 && dropout < 1, "ModelConfig: dropout must be in [0,1)");
        LONGCT_REQUIRE(kernel == 3, "ModelConfig: only 3x3 convolutions are supported");
        const int expected = variant == Variant::Static ? 1 : 2;
        LONGCT_REQUIRE(in_channels == expected,
                       "ModelConfig: in_channels must match the variant");
    }

    const char* variant_name() const {
        return variant == Variant::Static ? "static" : "longitudinal";
    }
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c) {
    j = {{"variant", c.variant_name()},
         {"in_channels", c.in_channels},
         {"n_classes", c.n_classes},
         {"first_conv_filters", c.first_conv_filters},
         {"growth_rate", c.growth_rate},
         {"down_blocks", c.down_blocks},
         {"up_blocks", c.up_blocks},
         {"bottleneck_layers", c.bottleneck_layers},
         {"dropout", c.dropout},
         {"kernel", c.kernel}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::string v = j.at("variant").get<std::string>();
    LONGCT_REQUIRE(v == "static" || v == "longitudinal",
                   "ModelConfig: unknown variant " + v);
    c.variant = v == "static" ? ModelConfig::Variant::Static
                              : ModelConfig::Variant::Longitudinal;
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.first_conv_filters = j.at("first_conv_filters").get<int>();
    c.growth_rate = j.at("growth_rate").get<int>();
    c.down_blocks = j.at("down_blocks").get<std::vector<int>>();
    c.up_blocks = j.at("up_blocks").get<std::vector<int>>();
    c.bottleneck_layers = j.at("bottleneck_layers").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.kernel = j.at("kernel").get<int>();
    c.validate();
    return c;
}

/// FC-DenseNet (Tiramisu-style) encoder/decoder: dense blocks with
/// transitions down (BN-ReLU-1x1conv-dropout-maxpool) and transitions up
/// (3x3 stride-2 transposed convolution), a final 1x1 convolution and a
/// per-pixel softmax. Templated on the scalar type so tests can run the
/// same graph in double precision.
///
/// Every dense block works in one preallocated concatenation buffer: layers
/// read the leading channel window and append their feature maps behind it,
/// so no concatenation is ever materialized separately. Backward passes
/// recompute BN/ReLU activations from the buffered inputs instead of
/// caching normalized copies.
template <typename T>
class FCDenseNet {
public:
    struct ParamTensor {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };
    struct BufferTensor {
        std::string name;
        std::vector<T> value;
    };

    explicit FCDenseNet(const ModelConfig& cfg, uint64_t init_seed = 42)
        : cfg_(cfg), rng_(hash_combine(init_seed, 0x6e657477ULL)) {
        cfg_.validate();
        build();
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<ParamTensor>& parameters() { return params_; }
    const std::vector<ParamTensor>& parameters() const { return params_; }
    std::vector<BufferTensor>& buffers() { return buffers_; }
    const std::vector<BufferTensor>& buffers() const { return buffers_; }

    /// Exact count of trainable scalar parameters.
    int64_t count_parameters() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(T(0));
    }

    /// Per-pixel class probabilities for a batch of slices. In training mode
    /// batch statistics and dropout are active and the activations needed by
    /// backward() stay cached.
    Tensor<T> forward(const Tensor<T>& x, bool training, uint64_t step_seed = 0) {
        LONGCT_REQUIRE(x.c == cfg_.in_channels,
                       "forward: input has " + std::to_string(x.c) +
                           " channels, model expects " +
                           std::to_string(cfg_.in_channels));
        const int div = 1 << cfg_.n_resolutions();
        training_ = training;
        step_key_ = hash_combine(step_seed, 0x64726f70ULL);

        cache_ = Cache{};
        pad_h_ = (div - x.h % div) % div;
        pad_w_ = (div - x.w % div) % div;
        orig_h_ = x.h;
        orig_w_ = x.w;
        cache_.input = (pad_h_ || pad_w_)
                           ? nn::pad_spatial(x, pad_h_ / 2, pad_h_ - pad_h_ / 2,
                                             pad_w_ / 2, pad_w_ - pad_w_ / 2)
                           : x;
        const Tensor<T>& in = cache_.input;
        const int nb = cfg_.n_resolutions();
        const int k = cfg_.growth_rate;
        cache_.down.resize(static_cast<size_t>(nb));
        cache_.td.resize(static_cast<size_t>(nb));
        cache_.up.resize(static_cast<size_t>(nb));
        cache_.tu_inputs.resize(static_cast<size_t>(nb));

        int h = in.h, w = in.w;
        int cur_c = cfg_.first_conv_filters;
        for (int b = 0; b < nb; ++b) {
            const int m = cfg_.down_blocks[static_cast<size_t>(b)];
            BlockCache& bc = cache_.down[static_cast<size_t>(b)];
            if (b > 0) {
                h /= 2;
                w /= 2;
            }
            bc.buffer = Tensor<T>(in.n, cur_c + m * k, h, w);
            if (b == 0) {
                conv_fwd(first_conv_, nn::full_view(in),
                         nn::window_mview(bc.buffer, 0, cur_c));
            } else {
                td_fwd(td_[static_cast<size_t>(b - 1)],
                       cache_.td[static_cast<size_t>(b - 1)],
                       cache_.down[static_cast<size_t>(b - 1)].buffer,
                       nn::window_mview(bc.buffer, 0, cur_c));
            }
            block_fwd(down_[static_cast<size_t>(b)], bc, cur_c);
            cur_c += m * k;
        }

        // Bottleneck, fed by the last transition down.
        h /= 2;
        w /= 2;
        cache_.bottleneck.buffer =
            Tensor<T>(in.n, cur_c + cfg_.bottleneck_layers * k, h, w);
        td_fwd(td_[static_cast<size_t>(nb - 1)], cache_.td[static_cast<size_t>(nb - 1)],
               cache_.down[static_cast<size_t>(nb - 1)].buffer,
               nn::window_mview(cache_.bottleneck.buffer, 0, cur_c));
        block_fwd(bottleneck_, cache_.bottleneck, cur_c);
        Tensor<T> newf = nn::slice_channels(cache_.bottleneck.buffer, cur_c,
                                            cfg_.bottleneck_layers * k);

        for (int ub = 0; ub < nb; ++ub) {
            const int skip_idx = nb - 1 - ub;
            const Tensor<T>& skip = cache_.down[static_cast<size_t>(skip_idx)].buffer;
            const int m = cfg_.up_blocks[static_cast<size_t>(ub)];
            const int up_c = newf.c;
            const int c_in = up_c + skip.c;
            h *= 2;
            w *= 2;
            BlockCache& uc = cache_.up[static_cast<size_t>(ub)];
            uc.buffer = Tensor<T>(in.n, c_in + m * k, h, w);
            cache_.tu_inputs[static_cast<size_t>(ub)] = std::move(newf);
            nn::convtranspose2d_fwd_core(
                nn::full_view(cache_.tu_inputs[static_cast<size_t>(ub)]),
                params_[static_cast<size_t>(tu_[static_cast<size_t>(ub)].w)].value,
                params_[static_cast<size_t>(tu_[static_cast<size_t>(ub)].b)]
                    .value.v.data(),
                nn::window_mview(uc.buffer, 0, up_c));
            nn::copy_view(nn::full_view(skip), nn::window_mview(uc.buffer, up_c, skip.c));
            block_fwd(up_[static_cast<size_t>(ub)], uc, c_in);
            up_cat_channels_[static_cast<size_t>(ub)] = up_c;
            if (ub + 1 < nb)
                newf = nn::slice_channels(uc.buffer, c_in, m * k);
        }

        const Tensor<T>& final_in = cache_.up[static_cast<size_t>(nb - 1)].buffer;
        Tensor<T> logits(in.n, cfg_.n_classes, h, w);
        conv_fwd(final_conv_, nn::full_view(final_in), nn::full_mview(logits));
        cache_.probs = nn::softmax_forward(logits);

        if (pad_h_ || pad_w_)
            return nn::crop_spatial(cache_.probs, pad_h_ / 2, pad_w_ / 2, orig_h_,
                                    orig_w_);
        return cache_.probs;
    }

    /// Accumulate parameter gradients from the probability-space gradient of
    /// the last training-mode forward pass.
    void backward(const Tensor<T>& dprobs_in) {
        LONGCT_REQUIRE(training_, "backward: requires a training-mode forward pass");
        Tensor<T> dprobs = dprobs_in;
        if (pad_h_ || pad_w_)
            dprobs = nn::pad_spatial(dprobs_in, pad_h_ / 2, pad_h_ - pad_h_ / 2,
                                     pad_w_ / 2, pad_w_ - pad_w_ / 2);
        const Tensor<T> dlogits = nn::softmax_backward(dprobs, cache_.probs);

        const int nb = cfg_.n_resolutions();
        const int k = cfg_.growth_rate;

        const Tensor<T>& final_in = cache_.up[static_cast<size_t>(nb - 1)].buffer;
        Tensor<T> d_buffer(final_in.n, final_in.c, final_in.h, final_in.w);
        {
            nn::MView<T> dv = nn::full_mview(d_buffer);
            conv_bwd(final_conv_, nn::full_view(final_in), nn::full_view(dlogits), &dv);
        }

        std::vector<Tensor<T>> dskip(static_cast<size_t>(nb));
        Tensor<T> dnew;
        for (int ub = nb - 1; ub >= 0; --ub) {
            BlockCache& uc = cache_.up[static_cast<size_t>(ub)];
            const int m = cfg_.up_blocks[static_cast<size_t>(ub)];
            const int up_c = up_cat_channels_[static_cast<size_t>(ub)];
            const int skip_idx = nb - 1 - ub;
            const int skip_c =
                cache_.down[static_cast<size_t>(skip_idx)].buffer.c;
            const int c_in = up_c + skip_c;
            if (ub < nb - 1) {
                Tensor<T> fresh(uc.buffer.n, uc.buffer.c, uc.buffer.h, uc.buffer.w);
                nn::add_into_channels(fresh, dnew, c_in);
                d_buffer = std::move(fresh);
            }
            block_bwd(up_[static_cast<size_t>(ub)], uc, c_in, m, d_buffer);
            dskip[static_cast<size_t>(skip_idx)] =
                nn::slice_channels(d_buffer, up_c, skip_c);
            const Tensor<T> dup = nn::slice_channels(d_buffer, 0, up_c);
            Tensor<T> dx;
            nn::convtranspose2d_backward(
                cache_.tu_inputs[static_cast<size_t>(ub)],
                params_[static_cast<size_t>(tu_[static_cast<size_t>(ub)].w)].value, dup,
                dx,
                params_[static_cast<size_t>(tu_[static_cast<size_t>(ub)].w)].grad,
                params_[static_cast<size_t>(tu_[static_cast<size_t>(ub)].b)]
                    .grad.v.data());
            dnew = std::move(dx);
        }

        {  // bottleneck
            BlockCache& bc = cache_.bottleneck;
            const int c_in = bc.buffer.c - cfg_.bottleneck_layers * k;
            Tensor<T> fresh(bc.buffer.n, bc.buffer.c, bc.buffer.h, bc.buffer.w);
            nn::add_into_channels(fresh, dnew, c_in);
            d_buffer = std::move(fresh);
            block_bwd(bottleneck_, bc, c_in, cfg_.bottleneck_layers, d_buffer);
            dnew = nn::slice_channels(d_buffer, 0, c_in);  // grad at last TD output
        }

        for (int b = nb - 1; b >= 0; --b) {
            BlockCache& bc = cache_.down[static_cast<size_t>(b)];
            const int m = cfg_.down_blocks[static_cast<size_t>(b)];
            const int c_in = bc.buffer.c - m * k;
            Tensor<T> d_block = td_bwd(td_[static_cast<size_t>(b)],
                                       cache_.td[static_cast<size_t>(b)], bc.buffer,
                                       dnew);
            nn::add_into_channels(d_block, dskip[static_cast<size_t>(b)], 0);
            block_bwd(down_[static_cast<size_t>(b)], bc, c_in, m, d_block);
            if (b > 0) {
                dnew = nn::slice_channels(d_block, 0, c_in);
            } else {
                conv_bwd(first_conv_, nn::full_view(cache_.input),
                         nn::window_view(d_block, 0, c_in), nullptr);
            }
        }
    }

    /// Release cached activations (kept between forward and backward).
    void clear_cache() { cache_ = Cache{}; }

private:
    struct ConvRef {
        int w = -1, b = -1;
        int k = 3, pad = 1;
    };
    struct BNRef {
        int gamma = -1, beta = -1;
        int mean = -1, var = -1;
    };
    struct DenseLayerRef {
        BNRef bn;
        ConvRef conv;
        uint64_t uid = 0;
    };
    struct BlockRef {
        std::vector<DenseLayerRef> layers;
    };
    struct TDRef {
        BNRef bn;
        ConvRef conv;
        uint64_t uid = 0;
    };
    struct TUWeights {
        int w = -1, b = -1;
    };

    struct BlockCache {
        Tensor<T> buffer;
        std::vector<nn::BNStats> layers;
    };
    struct TDCache {
        nn::BNStats bn;
        std::vector<uint8_t> argmax;
        int pre_h = 0, pre_w = 0;
    };
    struct Cache {
        Tensor<T> input;
        std::vector<BlockCache> down;
        std::vector<TDCache> td;
        BlockCache bottleneck;
        std::vector<Tensor<T>> tu_inputs;
        std::vector<BlockCache> up;
        Tensor<T> probs;
    };

    int add_param(const std::string& name, int n, int c, int h, int w, double bound) {
        ParamTensor p;
        p.name = name;
        p.value = Tensor<T>(n, c, h, w);
        p.grad = Tensor<T>(n, c, h, w);
        if (bound > 0) {
            for (auto& v : p.value.v)
                v = static_cast<T>(rng_.uniform(-bound, bound));
        }
        params_.push_back(std::move(p));
        return static_cast<int>(params_.size()) - 1;
    }

    int add_const_param(const std::string& name, int n, T value) {
        ParamTensor p;
        p.name = name;
        p.value = Tensor<T>(n, 1, 1, 1);
        p.grad = Tensor<T>(n, 1, 1, 1);
        p.value.fill(value);
        params_.push_back(std::move(p));
        return static_cast<int>(params_.size()) - 1;
    }

    int add_buffer(const std::string& name, int n, T value) {
        BufferTensor b;
        b.name = name;
        b.value.assign(static_cast<size_t>(n), value);
        buffers_.push_back(std::move(b));
        return static_cast<int>(buffers_.size()) - 1;
    }

    ConvRef add_conv(const std::string& name, int co, int ci, int k) {
        // Fan-in scaled uniform initialization for weights and biases.
        const double bound = 1.0 / std::sqrt(static_cast<double>(ci) * k * k);
        ConvRef r;
        r.k = k;
        r.pad = k / 2;
        r.w = add_param(name + ".weight", co, ci, k, k, bound);
        r.b = add_param(name + ".bias", co, 1, 1, 1, bound);
        return r;
    }

    BNRef add_bn(const std::string& name, int c) {
        BNRef r;
        r.gamma = add_const_param(name + ".gamma", c, T(1));
        r.beta = add_const_param(name + ".beta", c, T(0));
        r.mean = add_buffer(name + ".running_mean", c, T(0));
        r.var = add_buffer(name + ".running_var", c, T(1));
        return r;
    }

    void build() {
        const int k = cfg_.growth_rate;
        int c = cfg_.first_conv_filters;
        first_conv_ = add_conv("first_conv", c, cfg_.in_channels, 3);

        const int nb = cfg_.n_resolutions();
        uint64_t uid = 1;
        for (int b = 0; b < nb; ++b) {
            BlockRef block;
            for (int l = 0; l < cfg_.down_blocks[static_cast<size_t>(b)]; ++l) {
                const std::string base =
                    "down." + std::to_string(b) + ".layer." + std::to_string(l);
                DenseLayerRef layer;
                layer.bn = add_bn(base + ".bn", c + l * k);
                layer.conv = add_conv(base + ".conv", k, c + l * k, 3);
                layer.uid = uid++;
                block.layers.push_back(layer);
            }
            down_.push_back(std::move(block));
            c += cfg_.down_blocks[static_cast<size_t>(b)] * k;
            const std::string tdname = "down." + std::to_string(b) + ".td";
            TDRef td;
            td.bn = add_bn(tdname + ".bn", c);
            td.conv = add_conv(tdname + ".conv", c, c, 1);
            td.uid = uid++;
            td_.push_back(td);
        }

        BlockRef btl;
        for (int l = 0; l < cfg_.bottleneck_layers; ++l) {
            const std::string base = "bottleneck.layer." + std::to_string(l);
            DenseLayerRef layer;
            layer.bn = add_bn(base + ".bn", c + l * k);
            layer.conv = add_conv(base + ".conv", k, c + l * k, 3);
            layer.uid = uid++;
            btl.layers.push_back(layer);
        }
        bottleneck_ = std::move(btl);
        int newc = cfg_.bottleneck_layers * k;

        up_cat_channels_.assign(static_cast<size_t>(nb), 0);
        int skip_c = c;  // channels of the deepest skip
        for (int ub = 0; ub < nb; ++ub) {
            const std::string tuname = "up." + std::to_string(ub) + ".tu";
            const double bound = 1.0 / std::sqrt(static_cast<double>(newc) * 9);
            TUWeights tu;
            tu.w = add_param(tuname + ".weight", newc, newc, 3, 3, bound);
            tu.b = add_param(tuname + ".bias", newc, 1, 1, 1, bound);
            tu_.push_back(tu);

            int cat_c = newc + skip_c;
            BlockRef block;
            for (int l = 0; l < cfg_.up_blocks[static_cast<size_t>(ub)]; ++l) {
                const std::string base =
                    "up." + std::to_string(ub) + ".layer." + std::to_string(l);
                DenseLayerRef layer;
                layer.bn = add_bn(base + ".bn", cat_c + l * k);
                layer.conv = add_conv(base + ".conv", k, cat_c + l * k, 3);
                layer.uid = uid++;
                block.layers.push_back(layer);
            }
            up_.push_back(std::move(block));
            const int m = cfg_.up_blocks[static_cast<size_t>(ub)];
            if (ub + 1 < nb) {
                newc = m * k;
                // The next skip up the ladder.
                skip_c -= cfg_.down_blocks[static_cast<size_t>(nb - 1 - ub)] * k;
            } else {
                newc = cat_c + m * k;  // last block keeps its full concat
            }
        }
        final_conv_ = add_conv("final_conv", cfg_.n_classes, newc, 1);
    }

    void conv_fwd(const ConvRef& r, const nn::CView<T>& x, const nn::MView<T>& y) {
        nn::conv2d_fwd_core(x, params_[static_cast<size_t>(r.w)].value,
                            params_[static_cast<size_t>(r.b)].value.v.data(), r.k,
                            r.pad, y);
    }

    void conv_bwd(const ConvRef& r, const nn::CView<T>& x, const nn::CView<T>& dy,
                  nn::MView<T>* dx) {
        nn::conv2d_bwd_core(x, params_[static_cast<size_t>(r.w)].value, dy, r.k, r.pad,
                            dx, params_[static_cast<size_t>(r.w)].grad,
                            params_[static_cast<size_t>(r.b)].grad.v.data());
    }

    /// One dense layer in a block buffer: BN+ReLU over the first cin_l
    /// channels, 3x3 conv and dropout into the next growth_rate channels.
    void dense_layer_fwd(const DenseLayerRef& r, nn::BNStats& stats,
                         Tensor<T>& buffer, int cin_l) {
        Tensor<T> bnrelu(buffer.n, cin_l, buffer.h, buffer.w);
        nn::bn_relu_fwd_core(nn::window_view(buffer, 0, cin_l),
                             params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
                             params_[static_cast<size_t>(r.bn.beta)].value.v.data(),
                             buffers_[static_cast<size_t>(r.bn.mean)].value.data(),
                             buffers_[static_cast<size_t>(r.bn.var)].value.data(),
                             training_, 0.1, 1e-5, stats, nn::full_mview(bnrelu));
        conv_fwd(r.conv, nn::full_view(bnrelu),
                 nn::window_mview(buffer, cin_l, cfg_.growth_rate));
        if (training_ && cfg_.dropout > 0)
            nn::dropout_core(nn::window_mview(buffer, cin_l, cfg_.growth_rate),
                             cfg_.dropout, step_key_, r.uid);
    }

    void block_fwd(const BlockRef& block, BlockCache& bc, int c_in) {
        bc.layers.assign(block.layers.size(), nn::BNStats{});
        for (size_t l = 0; l < block.layers.size(); ++l)
            dense_layer_fwd(block.layers[l], bc.layers[l], bc.buffer,
                            c_in + static_cast<int>(l) * cfg_.growth_rate);
    }

    /// Backward through one block. d_buffer holds the gradient of the whole
    /// concatenation buffer; on return its first c_in channels carry the
    /// gradient at the block input.
    void block_bwd(const BlockRef& block, const BlockCache& bc, int c_in, int m,
                   Tensor<T>& d_buffer) {
        const int k = cfg_.growth_rate;
        for (int l = m - 1; l >= 0; --l) {
            const DenseLayerRef& r = block.layers[static_cast<size_t>(l)];
            const nn::BNStats& stats = bc.layers[static_cast<size_t>(l)];
            const int cin_l = c_in + l * k;
            if (cfg_.dropout > 0)
                nn::dropout_core(nn::window_mview(d_buffer, cin_l, k), cfg_.dropout,
                                 step_key_, r.uid);
            Tensor<T> bnrelu(d_buffer.n, cin_l, d_buffer.h, d_buffer.w);
            nn::bn_relu_recompute_core(
                nn::window_view(bc.buffer, 0, cin_l),
                params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
                params_[static_cast<size_t>(r.bn.beta)].value.v.data(), stats,
                nn::full_mview(bnrelu));
            Tensor<T> d_relu(d_buffer.n, cin_l, d_buffer.h, d_buffer.w);
            nn::MView<T> drv = nn::full_mview(d_relu);
            conv_bwd(r.conv, nn::full_view(bnrelu), nn::window_view(d_buffer, cin_l, k),
                     &drv);
            nn::bn_relu_bwd_core(nn::full_view(d_relu),
                                 nn::window_view(bc.buffer, 0, cin_l),
                                 nn::full_view(bnrelu),
                                 params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
                                 stats,
                                 params_[static_cast<size_t>(r.bn.gamma)].grad.v.data(),
                                 params_[static_cast<size_t>(r.bn.beta)].grad.v.data(),
                                 nn::window_mview(d_buffer, 0, cin_l),
                                 /*accumulate=*/true);
        }
    }

    /// Transition down: BN+ReLU, 1x1 conv, dropout, 2x2 max pool, written
    /// into the next block's leading channel window.
    void td_fwd(const TDRef& r, TDCache& cache, const Tensor<T>& in_buffer,
                const nn::MView<T>& out) {
        const int c = in_buffer.c;
        Tensor<T> bnrelu(in_buffer.n, c, in_buffer.h, in_buffer.w);
        nn::bn_relu_fwd_core(nn::full_view(in_buffer),
                             params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
                             params_[static_cast<size_t>(r.bn.beta)].value.v.data(),
                             buffers_[static_cast<size_t>(r.bn.mean)].value.data(),
                             buffers_[static_cast<size_t>(r.bn.var)].value.data(),
                             training_, 0.1, 1e-5, cache.bn, nn::full_mview(bnrelu));
        Tensor<T> conv_out(in_buffer.n, c, in_buffer.h, in_buffer.w);
        conv_fwd(r.conv, nn::full_view(bnrelu), nn::full_mview(conv_out));
        if (training_ && cfg_.dropout > 0)
            nn::dropout_core(nn::full_mview(conv_out), cfg_.dropout, step_key_, r.uid);
        cache.pre_h = in_buffer.h;
        cache.pre_w = in_buffer.w;
        nn::maxpool2_fwd_core(nn::full_view(conv_out), out, cache.argmax);
    }

    /// Gradient at the transition-down input (the block buffer).
    Tensor<T> td_bwd(const TDRef& r, const TDCache& cache, const Tensor<T>& in_buffer,
                     const Tensor<T>& d_pooled) {
        Tensor<T> d_conv(d_pooled.n, in_buffer.c, cache.pre_h, cache.pre_w);
        nn::maxpool2_bwd_core(nn::full_view(d_pooled), cache.argmax,
                              nn::full_mview(d_conv));
        if (cfg_.dropout > 0)
            nn::dropout_core(nn::full_mview(d_conv), cfg_.dropout, step_key_, r.uid);
        Tensor<T> bnrelu(in_buffer.n, in_buffer.c, in_buffer.h, in_buffer.w);
        nn::bn_relu_recompute_core(
            nn::full_view(in_buffer),
            params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
            params_[static_cast<size_t>(r.bn.beta)].value.v.data(), cache.bn,
            nn::full_mview(bnrelu));
        Tensor<T> d_relu(in_buffer.n, in_buffer.c, in_buffer.h, in_buffer.w);
        nn::MView<T> drv = nn::full_mview(d_relu);
        conv_bwd(r.conv, nn::full_view(bnrelu), nn::full_view(d_conv), &drv);
        Tensor<T> d_in(in_buffer.n, in_buffer.c, in_buffer.h, in_buffer.w);
        nn::bn_relu_bwd_core(nn::full_view(d_relu), nn::full_view(in_buffer),
                             nn::full_view(bnrelu),
                             params_[static_cast<size_t>(r.bn.gamma)].value.v.data(),
                             cache.bn,
                             params_[static_cast<size_t>(r.bn.gamma)].grad.v.data(),
                             params_[static_cast<size_t>(r.bn.beta)].grad.v.data(),
                             nn::full_mview(d_in), /*accumulate=*/false);
        return d_in;
    }

    ModelConfig cfg_;
    Rng rng_;
    std::vector<ParamTensor> params_;
    std::vector<BufferTensor> buffers_;

    ConvRef first_conv_;
    std::vector<BlockRef> down_;
    std::vector<TDRef> td_;
    BlockRef bottleneck_;
    std::vector<TUWeights> tu_;
    std::vector<BlockRef> up_;
    ConvRef final_conv_;

    // forward state
    bool training_ = false;
    uint64_t step_key_ = 0;
    int pad_h_ = 0, pad_w_ = 0, orig_h_ = 0, orig_w_ = 0;
    std::vector<int> up_cat_channels_;
    Cache cache_;
};

}  // namespace longct
