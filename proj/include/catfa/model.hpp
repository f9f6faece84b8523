#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "catfa/attention.hpp"
#include "catfa/blocks.hpp"
#include "catfa/fusion.hpp"

namespace catfa {

// Dual-branch segmentation network. Two four-stage encoders (a transformer
// branch of attention blocks and a convolutional branch of residual blocks)
// run over the same image; a fusion module joins them after every stage and
// the fused map both feeds the next transformer stage and serves as the skip
// connection for the decoder. The decoder upsamples stage by stage, gating
// each skip before mixing, and predicts a probability map at full resolution.

inline constexpr int kStages = 4;
inline constexpr int kModelInChannels = 3;
// Stage strides: 4, then 2, 2, 2 -> feature grids at 1/4 .. 1/32 of the input.
inline constexpr int kTotalStride = 32;

struct ModelConfig {
    std::array<int, kStages> channels{16, 32, 64, 128};
    std::array<int, kStages> cat_blocks{1, 1, 1, 1};
    std::array<int, kStages> convnext_blocks{1, 1, 1, 1};
    std::array<int, kStages> heads{1, 2, 4, 8};
    std::array<int, kStages> reduction{8, 4, 2, 1};
    // Border treatment of the depthwise convolution inside the token mixer.
    PadMode dfcn_pad = PadMode::zero;
    // Nominal training image extent (synthetic data size); forward accepts
    // any extent that is a multiple of 32.
    int input_hw = 64;

    static ModelConfig variant_s();
    static ModelConfig variant_l();
    static ModelConfig tiny();
    // "tiny" | "s" | "l"
    static ModelConfig named(const std::string& name);

    // Throws config_error listing every violated constraint at once.
    void validate() const;
};

// Called with each named intermediate during a traced forward pass, so a
// non-finite activation can be pinned to the block that produced it.
template <typename T>
using TraceFn = std::function<void(const std::string& name, const TensorT<T>& value)>;

template <typename T>
struct ModelCache {
    Mode mode = Mode::train;
    std::array<PatchMergeCache<T>, kStages> t_merge;
    std::array<std::vector<CatBlockCache<T>>, kStages> t_blocks;
    std::array<PatchMergeCache<T>, kStages> c_merge;
    std::array<std::vector<ConvNeXtCache<T>>, kStages> c_blocks;
    std::array<CctfaCache<T>, kStages> fuse;
    std::array<TensorT<T>, kStages> fused;
    // Decoder stages in application order: 0 joins the stage-3 skip, 1 the
    // stage-2 skip, 2 the stage-1 skip.
    std::array<TensorT<T>, kStages - 1> up_in;
    std::array<SafgCache<T>, kStages - 1> safg;
    std::array<ConvGNeXtCache<T>, kStages - 2> block;
    TensorT<T> head_in;
    TensorT<T> prob;
};

template <typename T>
class Model {
public:
    Model(const ModelConfig& config, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    // x: B x 3 x H x W with H, W multiples of 32 -> B x 1 x H x W in (0, 1).
    TensorT<T> forward(const TensorT<T>& x, Mode mode, ModelCache<T>* cache = nullptr,
                       const TraceFn<T>& trace = {});

    // Backward through a train-mode forward; accumulates parameter gradients
    // and returns the input cotangent.
    TensorT<T> backward(const TensorT<T>& dprob, const ModelCache<T>& cache);

    // Learnable scalars (normalizer running estimates excluded).
    int64_t count_params() const { return store_.total_size(); }
    // Learnable scalars in the decoder (upsamplers, gates, residual blocks,
    // prediction head).
    int64_t decoder_params() const;

    // Running-statistics buffers of the decoder batch norms, for checkpoints.
    std::vector<std::pair<std::string, BatchNormState<T>*>> bn_states();

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    size_t decoder_start_ = 0;

    std::array<PatchMergeParams<T>, kStages> t_merge_;
    std::array<std::vector<CatBlockParams<T>>, kStages> t_blocks_;
    std::array<PatchMergeParams<T>, kStages> c_merge_;
    std::array<std::vector<ConvNeXtParams<T>>, kStages> c_blocks_;
    std::array<CctfaParams<T>, kStages> fuse_;
    std::array<Param<T>*, kStages - 1> up_w_{};
    std::array<Param<T>*, kStages - 1> up_b_{};
    std::array<SafgParams<T>, kStages - 1> safg_;
    std::array<ConvGNeXtParams<T>, kStages - 2> block_;
    Param<T>* head_w_ = nullptr;
    Param<T>* head_b_ = nullptr;
};

} // namespace catfa
