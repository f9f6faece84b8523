#include "catfa/model.hpp"

namespace catfa {

namespace {

bool power_of_two(int r) { return r >= 1 && (r & (r - 1)) == 0; }

std::string stage_name(const char* branch, int s) {
    return std::string(branch) + std::to_string(s + 1);
}

} // namespace

// ---- configuration -----------------------------------------------------------------

ModelConfig ModelConfig::variant_s() {
    ModelConfig c;
    c.channels = {96, 192, 384, 768};
    c.cat_blocks = {1, 1, 3, 1};
    c.convnext_blocks = {3, 3, 9, 3};
    c.heads = {1, 2, 4, 8};
    c.reduction = {8, 4, 2, 1};
    return c;
}

ModelConfig ModelConfig::variant_l() {
    ModelConfig c;
    c.channels = {128, 256, 512, 1024};
    c.cat_blocks = {2, 2, 6, 2};
    c.convnext_blocks = {3, 3, 27, 3};
    c.heads = {1, 2, 4, 8};
    c.reduction = {8, 4, 2, 1};
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.channels = {16, 32, 64, 128};
    c.cat_blocks = {1, 1, 1, 1};
    c.convnext_blocks = {1, 1, 1, 1};
    c.heads = {1, 2, 4, 8};
    c.reduction = {8, 4, 2, 1};
    return c;
}

ModelConfig ModelConfig::named(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "s") return variant_s();
    if (name == "l") return variant_l();
    throw config_error("unknown model variant '" + name + "' (expected tiny, s, or l)");
}

void ModelConfig::validate() const {
    std::vector<std::string> faults;
    for (int s = 0; s < kStages; ++s) {
        const std::string at = "stage " + std::to_string(s + 1) + ": ";
        if (channels[s] < 2)
            faults.push_back(at + "channels must be >= 2, got " + std::to_string(channels[s]));
        if (heads[s] < 1)
            faults.push_back(at + "heads must be >= 1, got " + std::to_string(heads[s]));
        else if (channels[s] >= 1 && channels[s] % heads[s] != 0)
            faults.push_back(at + "heads " + std::to_string(heads[s]) +
                             " must divide channels " + std::to_string(channels[s]));
        if (cat_blocks[s] < 1)
            faults.push_back(at + "attention block count must be >= 1, got " +
                             std::to_string(cat_blocks[s]));
        if (convnext_blocks[s] < 1)
            faults.push_back(at + "conv block count must be >= 1, got " +
                             std::to_string(convnext_blocks[s]));
        if (!power_of_two(reduction[s]))
            faults.push_back(at + "reduction must be a power of two >= 1, got " +
                             std::to_string(reduction[s]));
    }
    if (input_hw < kTotalStride || input_hw % kTotalStride != 0)
        faults.push_back("input_hw must be a positive multiple of " +
                         std::to_string(kTotalStride) + ", got " + std::to_string(input_hw));
    if (!faults.empty()) {
        std::string msg = "model config invalid: ";
        for (size_t i = 0; i < faults.size(); ++i) {
            if (i) msg += "; ";
            msg += faults[i];
        }
        throw config_error(msg);
    }
}

// ---- construction --------------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelConfig& config, uint64_t seed) : cfg_(config), store_(seed) {
    cfg_.validate();
    const auto& ch = cfg_.channels;

    // Transformer branch: strided merge then attention blocks, per stage.
    for (int s = 0; s < kStages; ++s) {
        const int in_ch = s == 0 ? kModelInChannels : ch[s - 1];
        const int kernel = s == 0 ? 7 : 3;
        const int stride = s == 0 ? 4 : 2;
        const std::string prefix = stage_name("t", s);
        t_merge_[s] = PatchMergeParams<T>::create(store_, prefix + ".merge", in_ch, ch[s],
                                                  kernel, stride);
        for (int j = 0; j < cfg_.cat_blocks[s]; ++j)
            t_blocks_[s].push_back(CatBlockParams<T>::create(
                store_, prefix + ".block" + std::to_string(j + 1), ch[s], cfg_.heads[s],
                cfg_.reduction[s], ch[s], cfg_.dfcn_pad));
    }

    // Convolutional branch: exact-tiling merge then residual blocks.
    for (int s = 0; s < kStages; ++s) {
        const int in_ch = s == 0 ? kModelInChannels : ch[s - 1];
        const int kernel = s == 0 ? 4 : 2;
        const int stride = kernel;
        const std::string prefix = stage_name("c", s);
        c_merge_[s] = PatchMergeParams<T>::create(store_, prefix + ".merge", in_ch, ch[s],
                                                  kernel, stride);
        for (int j = 0; j < cfg_.convnext_blocks[s]; ++j)
            c_blocks_[s].push_back(ConvNeXtParams<T>::create(
                store_, prefix + ".block" + std::to_string(j + 1), ch[s]));
    }

    // Per-stage fusion of the two branches.
    for (int s = 0; s < kStages; ++s)
        fuse_[s] = CctfaParams<T>::create(store_, stage_name("fuse", s), ch[s]);

    // Decoder: upsample from the deepest fused map, gate each shallower skip,
    // mix (except after the last gate), then predict.
    decoder_start_ = store_.items().size();
    for (int d = 0; d < kStages - 1; ++d) {
        const int from = kStages - 1 - d; // channel index we upsample from
        const std::string prefix = "dec" + std::to_string(from);
        up_w_[d] = store_.create(prefix + ".up_w", {ch[from], ch[from - 1], 2, 2},
                                 Init::trunc_normal);
        up_b_[d] = store_.create(prefix + ".up_b", {ch[from - 1]}, Init::zeros);
        safg_[d] = SafgParams<T>::create(store_, prefix + ".gate", ch[from - 1]);
        if (d < kStages - 2)
            block_[d] = ConvGNeXtParams<T>::create(store_, prefix + ".block", ch[from - 1]);
    }
    head_w_ = store_.create("head.w", {1, ch[0], 1, 1}, Init::trunc_normal);
    head_b_ = store_.create("head.b", {1}, Init::zeros);
    // Start from a confident-background prior (sigmoid(-2) ~ 0.12). Masks are
    // mostly background, so this removes the large first-epoch transient that
    // otherwise drives the head into saturation at aggressive learning rates.
    head_b_->value[0] = T(-2);
}

template <typename T>
int64_t Model<T>::decoder_params() const {
    int64_t n = 0;
    const auto& items = store_.items();
    for (size_t i = decoder_start_; i < items.size(); ++i) n += items[i]->value.size();
    return n;
}

template <typename T>
std::vector<std::pair<std::string, BatchNormState<T>*>> Model<T>::bn_states() {
    std::vector<std::pair<std::string, BatchNormState<T>*>> out;
    for (int d = 0; d < kStages - 2; ++d) {
        const std::string prefix = "dec" + std::to_string(kStages - 1 - d) + ".block.bn";
        out.emplace_back(prefix, &block_[d].bn_state);
    }
    return out;
}

// ---- forward ---------------------------------------------------------------------------

template <typename T>
TensorT<T> Model<T>::forward(const TensorT<T>& x, Mode mode, ModelCache<T>* cache,
                             const TraceFn<T>& trace) {
    if (x.rank() != 4)
        throw shape_error("model: input must be rank 4 (B,C,H,W), got " + x.shape_str());
    if (x.dim(1) != kModelInChannels)
        throw shape_error("model: expected " + std::to_string(kModelInChannels) +
                          " input channels, got " + std::to_string(x.dim(1)));
    if (x.dim(2) % kTotalStride != 0 || x.dim(3) % kTotalStride != 0)
        throw shape_error("model: input extents must be multiples of " +
                          std::to_string(kTotalStride) + ", got " + x.shape_str());

    auto tr = [&](const std::string& name, const TensorT<T>& v) {
        if (trace) trace(name, v);
    };

    std::array<TensorT<T>, kStages> fused;
    TensorT<T> t_in = x;
    TensorT<T> c = x;
    for (int s = 0; s < kStages; ++s) {
        if (cache) {
            cache->t_blocks[s].resize(t_blocks_[s].size());
            cache->c_blocks[s].resize(c_blocks_[s].size());
        }
        const std::string tname = stage_name("t", s), cname = stage_name("c", s);

        TensorT<T> t = patch_merge(t_in, t_merge_[s], cache ? &cache->t_merge[s] : nullptr);
        tr(tname + ".merge", t);
        for (size_t j = 0; j < t_blocks_[s].size(); ++j) {
            t = cat_block(t, t_blocks_[s][j], cache ? &cache->t_blocks[s][j] : nullptr);
            tr(tname + ".block" + std::to_string(j + 1), t);
        }

        c = patch_merge(c, c_merge_[s], cache ? &cache->c_merge[s] : nullptr);
        tr(cname + ".merge", c);
        for (size_t j = 0; j < c_blocks_[s].size(); ++j) {
            c = convnext_block(c, c_blocks_[s][j], cache ? &cache->c_blocks[s][j] : nullptr);
            tr(cname + ".block" + std::to_string(j + 1), c);
        }

        fused[s] = cctfa(t, c, fuse_[s], cache ? &cache->fuse[s] : nullptr);
        tr(stage_name("fuse", s), fused[s]);
        t_in = fused[s];
    }

    TensorT<T> d = fused[kStages - 1];
    for (int k = 0; k < kStages - 1; ++k) {
        const int skip = kStages - 2 - k;
        const std::string prefix = "dec" + std::to_string(skip + 1);
        if (cache) cache->up_in[k] = d;
        d = transposed_conv2d(d, up_w_[k]->value, up_b_[k]->value, 2);
        tr(prefix + ".up", d);
        d = safg(fused[skip], d, safg_[k], cache ? &cache->safg[k] : nullptr);
        tr(prefix + ".gate", d);
        if (k < kStages - 2) {
            d = conv_g_next_block(d, block_[k], mode, cache ? &cache->block[k] : nullptr);
            tr(prefix + ".block", d);
        }
    }

    if (cache) cache->head_in = d;
    TensorT<T> logits = conv2d(d, head_w_->value, head_b_->value, 1, 0);
    tr("head.logits", logits);
    logits = bilinear_upsample(logits, x.dim(2), x.dim(3));
    tr("head.upsample", logits);
    TensorT<T> prob = sigmoid(logits);
    tr("head.prob", prob);

    if (cache) {
        cache->mode = mode;
        cache->fused = std::move(fused);
        cache->prob = prob;
    }
    return prob;
}

// ---- backward -----------------------------------------------------------------------

template <typename T>
TensorT<T> Model<T>::backward(const TensorT<T>& dprob, const ModelCache<T>& cache) {
    if (cache.mode != Mode::train)
        throw runtime_fault("model backward: cache must come from a train-mode forward");
    auto grad = [](Param<T>* p) -> TensorT<T>* { return &ParamStore<T>::grad_of(p); };

    // Head.
    TensorT<T> dlogits = sigmoid_backward(cache.prob, dprob);
    dlogits = bilinear_upsample_backward(dlogits, cache.head_in.dim(2), cache.head_in.dim(3));
    TensorT<T> dd = conv2d_backward(cache.head_in, head_w_->value, 1, 0, PadMode::zero, dlogits,
                                    grad(head_w_), grad(head_b_));

    // Decoder, deepest-joined stage last.
    std::array<TensorT<T>, kStages> dfused;
    for (int s = 0; s < kStages; ++s) dfused[s] = TensorT<T>::zeros_like(cache.fused[s]);
    for (int k = kStages - 2; k >= 0; --k) {
        if (k < kStages - 2) dd = conv_g_next_block_backward(dd, block_[k], cache.block[k]);
        auto [d_skip, d_dec] = safg_backward(dd, safg_[k], cache.safg[k]);
        add_into(dfused[kStages - 2 - k], d_skip);
        dd = transposed_conv2d_backward(cache.up_in[k], up_w_[k]->value, 2, d_dec,
                                        grad(up_w_[k]), grad(up_b_[k]));
    }
    add_into(dfused[kStages - 1], dd);

    // Encoders. The fused map of stage s feeds both the decoder (added above)
    // and the transformer merge of stage s+1.
    TensorT<T> dc_next;
    TensorT<T> dx;
    for (int s = kStages - 1; s >= 0; --s) {
        auto [d_t, d_c] = cctfa_backward(dfused[s], fuse_[s], cache.fuse[s]);
        if (dc_next.size() > 0) add_into(d_c, dc_next);
        for (int j = static_cast<int>(c_blocks_[s].size()) - 1; j >= 0; --j)
            d_c = convnext_block_backward(d_c, c_blocks_[s][j], cache.c_blocks[s][j]);
        TensorT<T> d_c_in = patch_merge_backward(d_c, c_merge_[s], cache.c_merge[s]);

        for (int j = static_cast<int>(t_blocks_[s].size()) - 1; j >= 0; --j)
            d_t = cat_block_backward(d_t, t_blocks_[s][j], cache.t_blocks[s][j]);
        TensorT<T> d_t_in = patch_merge_backward(d_t, t_merge_[s], cache.t_merge[s]);

        if (s > 0) {
            add_into(dfused[s - 1], d_t_in);
            dc_next = std::move(d_c_in);
        } else {
            dx = add(d_t_in, d_c_in);
        }
    }
    return dx;
}

template class Model<float>;
template class Model<double>;

} // namespace catfa
