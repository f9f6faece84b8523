#include "catfa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "catfa/io.hpp"
#include "catfa/loss.hpp"
#include "catfa/metrics.hpp"

namespace catfa {

namespace {

TensorT<float> flip_hw(const TensorT<float>& t, bool flip_h, bool flip_v) {
    // t: C x H x W
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    TensorT<float> out(t.shape());
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at3(ci, y, x) = t.at3(ci, flip_v ? h - 1 - y : y, flip_h ? w - 1 - x : x);
    return out;
}

struct Batch {
    TensorT<float> x; // B x 3 x H x W
    TensorT<float> r; // B x 1 x H x W
};

Batch gather_batch(const std::vector<SynthSample>& data, const std::vector<int>& idx,
                   size_t from, size_t to, Rng* flip_rng) {
    const int b = static_cast<int>(to - from);
    const int h = data[0].image.dim(1), w = data[0].image.dim(2);
    Batch out{TensorT<float>({b, 3, h, w}), TensorT<float>({b, 1, h, w})};
    for (int i = 0; i < b; ++i) {
        const SynthSample& s = data[static_cast<size_t>(idx[from + static_cast<size_t>(i)])];
        TensorT<float> img = s.image, msk = s.mask;
        if (flip_rng) {
            const bool fh = flip_rng->below(2) == 1, fv = flip_rng->below(2) == 1;
            if (fh || fv) {
                img = flip_hw(img, fh, fv);
                msk = flip_hw(msk, fh, fv);
            }
        }
        std::copy(img.data(), img.data() + img.size(), &out.x.at4(i, 0, 0, 0));
        std::copy(msk.data(), msk.data() + msk.size(), &out.r.at4(i, 0, 0, 0));
    }
    return out;
}

// Name the first non-finite intermediate of a traced re-forward.
[[noreturn]] void abort_non_finite(Model<float>& model, const TensorT<float>& x, int epoch,
                                   size_t batch_index) {
    std::string first_bad = "loss";
    bool found = false;
    model.forward(x, Mode::train, nullptr,
                  [&](const std::string& name, const TensorT<float>& v) {
                      if (!found && !all_finite(v)) {
                          first_bad = name;
                          found = true;
                      }
                  });
    throw runtime_fault("training aborted: non-finite values first appeared in '" + first_bad +
                        "' (epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch_index + 1) + ")");
}

void clip_gradients(ParamStore<float>& store, double max_norm) {
    double sq = 0;
    for (const auto& p : store.items())
        for (int64_t i = 0; i < p->grad.size(); ++i)
            sq += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const float scale = static_cast<float>(max_norm / norm);
    for (const auto& p : store.items())
        for (int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= scale;
}

double mean_mask_dice(Model<float>& model, const std::vector<SynthSample>& data,
                      const std::vector<int>& idx, int batch) {
    double total = 0;
    size_t done = 0;
    const int h = data[0].image.dim(1), w = data[0].image.dim(2);
    while (done < idx.size()) {
        const size_t to = std::min(done + static_cast<size_t>(batch), idx.size());
        Batch b = gather_batch(data, idx, done, to, nullptr);
        TensorT<float> prob = model.forward(b.x, Mode::eval);
        for (size_t i = 0; i < to - done; ++i) {
            Mask pred(static_cast<size_t>(h) * w), gt(static_cast<size_t>(h) * w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    pred[static_cast<size_t>(y) * w + x] =
                        prob.at4(static_cast<int>(i), 0, y, x) >= 0.5f ? 1 : 0;
                    gt[static_cast<size_t>(y) * w + x] =
                        b.r.at4(static_cast<int>(i), 0, y, x) >= 0.5f ? 1 : 0;
                }
            total += dsc_of(confusion(pred, gt));
        }
        done = to;
    }
    return total / static_cast<double>(idx.size());
}

} // namespace

TrainResult train_model(Model<float>& model, const std::vector<SynthSample>& data,
                        const TrainOptions& opt) {
    if (opt.epochs < 1) throw config_error("train: epochs must be >= 1");
    if (opt.batch < 1) throw config_error("train: batch must be >= 1");
    if (data.size() < 4)
        throw config_error("train: need at least 4 samples to split 75/25, got " +
                           std::to_string(data.size()));

    const int n = static_cast<int>(data.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(opt.seed);
    rng.shuffle(order);
    int n_train = (n * 3) / 4;
    n_train = std::clamp(n_train, 1, n - 1);
    std::vector<int> train_idx(order.begin(), order.begin() + n_train);
    std::vector<int> val_idx(order.begin() + n_train, order.end());

    TrainResult result;
    result.n_train = n_train;
    result.n_val = n - n_train;

    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        rng.shuffle(train_idx);
        double loss_sum = 0;
        size_t done = 0, batch_index = 0;
        while (done < train_idx.size()) {
            const size_t to = std::min(done + static_cast<size_t>(opt.batch), train_idx.size());
            Batch b = gather_batch(data, train_idx, done, to, opt.augment_flips ? &rng : nullptr);
            ModelCache<float> cache;
            TensorT<float> prob = model.forward(b.x, Mode::train, &cache);
            if (!all_finite(prob)) abort_non_finite(model, b.x, epoch, batch_index);
            TensorT<float> dp;
            const double loss = generalized_dice_loss(prob, b.r, opt.eps_loss, &dp);
            if (!std::isfinite(loss)) abort_non_finite(model, b.x, epoch, batch_index);
            model.params().zero_grads();
            model.backward(dp, cache);
            if (opt.clip_norm > 0) clip_gradients(model.params(), opt.clip_norm);
            adamw_step(model.params(), opt.optim);
            loss_sum += loss * static_cast<double>(to - done);
            done = to;
            ++batch_index;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(train_idx.size());

        double val_loss_sum = 0;
        size_t vdone = 0;
        while (vdone < val_idx.size()) {
            const size_t to = std::min(vdone + static_cast<size_t>(opt.batch), val_idx.size());
            Batch b = gather_batch(data, val_idx, vdone, to, nullptr);
            TensorT<float> prob = model.forward(b.x, Mode::eval);
            val_loss_sum +=
                generalized_dice_loss<float>(prob, b.r, opt.eps_loss, nullptr) *
                static_cast<double>(to - vdone);
            vdone = to;
        }
        stats.val_loss = val_loss_sum / static_cast<double>(val_idx.size());
        stats.val_dice = mean_mask_dice(model, data, val_idx, opt.batch);
        result.history.push_back(stats);

        if (opt.verbose)
            std::printf("epoch %d/%d train_loss=%s val_loss=%s val_dice=%s\n", epoch, opt.epochs,
                        fmt_g(stats.train_loss).c_str(), fmt_g(stats.val_loss).c_str(),
                        fmt_g(stats.val_dice).c_str());
    }

    if (!opt.history_csv.empty()) {
        std::ofstream f(opt.history_csv, std::ios::trunc);
        if (!f) throw runtime_fault("cannot open history csv for writing: " + opt.history_csv);
        f << "epoch,train_loss,val_loss,val_dice,seed\n";
        for (size_t e = 0; e < result.history.size(); ++e) {
            const EpochStats& s = result.history[e];
            f << (e + 1) << ',' << fmt_g(s.train_loss) << ',' << fmt_g(s.val_loss) << ','
              << fmt_g(s.val_dice) << ',' << opt.seed << '\n';
        }
    }
    if (!opt.checkpoint.empty()) save_checkpoint(model, opt.checkpoint);
    return result;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

constexpr double kCheckpointFormat = 1;
constexpr const char* kConfigEntry = "__config__";

std::vector<double> pack_config(const ModelConfig& c) {
    std::vector<double> v;
    v.push_back(kCheckpointFormat);
    for (int x : c.channels) v.push_back(x);
    for (int x : c.cat_blocks) v.push_back(x);
    for (int x : c.convnext_blocks) v.push_back(x);
    for (int x : c.heads) v.push_back(x);
    for (int x : c.reduction) v.push_back(x);
    v.push_back(static_cast<double>(c.dfcn_pad));
    v.push_back(c.input_hw);
    return v;
}

ModelConfig unpack_config(const std::string& path, const TensorT<double>& t) {
    if (t.rank() != 1 || t.size() != 23)
        throw config_error("checkpoint " + path + ": malformed config header");
    size_t i = 0;
    auto next_int = [&]() { return static_cast<int>(t[static_cast<int64_t>(i++)]); };
    const int format = next_int();
    if (format != static_cast<int>(kCheckpointFormat))
        throw config_error("checkpoint " + path + ": unsupported format " +
                           std::to_string(format));
    ModelConfig c;
    for (int s = 0; s < kStages; ++s) c.channels[s] = next_int();
    for (int s = 0; s < kStages; ++s) c.cat_blocks[s] = next_int();
    for (int s = 0; s < kStages; ++s) c.convnext_blocks[s] = next_int();
    for (int s = 0; s < kStages; ++s) c.heads[s] = next_int();
    for (int s = 0; s < kStages; ++s) c.reduction[s] = next_int();
    const int pad = next_int();
    if (pad < 0 || pad > 2)
        throw config_error("checkpoint " + path + ": bad padding mode " + std::to_string(pad));
    c.dfcn_pad = static_cast<PadMode>(pad);
    c.input_hw = next_int();
    return c;
}

} // namespace

void save_checkpoint(Model<float>& model, const std::string& path) {
    std::vector<NamedTensor> entries;
    TensorT<double> header({23}, pack_config(model.config()));
    entries.push_back({kConfigEntry, AnyTensor::from(std::move(header))});
    for (const auto& p : model.params().items())
        entries.push_back({p->name, AnyTensor::from(p->value)});
    for (auto& [name, state] : model.bn_states()) {
        if (!state->initialized) continue;
        entries.push_back({name + ".running_mean", AnyTensor::from(state->running_mean)});
        entries.push_back({name + ".running_var", AnyTensor::from(state->running_var)});
    }
    write_container(path, entries);
}

Model<float> load_checkpoint(const std::string& path) {
    const std::vector<NamedTensor> entries = read_container(path);
    std::map<std::string, const AnyTensor*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e.tensor;

    auto cfg_it = by_name.find(kConfigEntry);
    if (cfg_it == by_name.end())
        throw config_error("checkpoint " + path + ": missing config header entry");
    const ModelConfig cfg = unpack_config(path, tensor_as<double>(*cfg_it->second));
    by_name.erase(cfg_it);

    Model<float> model(cfg, 0);
    for (const auto& p : model.params().items()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw config_error("checkpoint " + path + ": missing parameter '" + p->name + "'");
        const TensorT<float>& v = tensor_as<float>(*it->second);
        if (!v.same_shape(p->value))
            throw config_error("checkpoint " + path + ": parameter '" + p->name +
                               "' has shape " + v.shape_str() + ", expected " +
                               p->value.shape_str());
        p->value = v;
        by_name.erase(it);
    }
    for (auto& [name, state] : model.bn_states()) {
        auto mean_it = by_name.find(name + ".running_mean");
        auto var_it = by_name.find(name + ".running_var");
        if ((mean_it == by_name.end()) != (var_it == by_name.end()))
            throw config_error("checkpoint " + path + ": incomplete running statistics for '" +
                               name + "'");
        if (mean_it == by_name.end()) continue;
        state->running_mean = tensor_as<float>(*mean_it->second);
        state->running_var = tensor_as<float>(*var_it->second);
        state->initialized = true;
        by_name.erase(mean_it);
        by_name.erase(var_it);
    }
    if (!by_name.empty())
        throw config_error("checkpoint " + path + ": unexpected entry '" +
                           by_name.begin()->first + "'");
    return model;
}

// ---- dataset directories ------------------------------------------------------------

std::vector<SynthSample> load_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(dir) / "images";
    const fs::path masks = fs::path(dir) / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw config_error("dataset dir " + dir + " must contain images/ and masks/");

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".pgm")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw config_error("dataset dir " + dir + ": no .pgm images found");

    std::vector<SynthSample> out;
    for (const std::string& name : names) {
        const fs::path mask_path = masks / name;
        if (!fs::is_regular_file(mask_path))
            throw config_error("dataset dir " + dir + ": no mask for image '" + name + "'");
        const PgmImage img = read_pgm((images / name).string());
        const PgmImage msk = read_pgm(mask_path.string());
        if (img.h != msk.h || img.w != msk.w)
            throw config_error("dataset dir " + dir + ": image/mask extents differ for '" + name +
                               "'");
        SynthSample s;
        s.image = TensorT<float>({3, img.h, img.w});
        s.mask = TensorT<float>({1, img.h, img.w});
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                const float v =
                    static_cast<float>(img.pixels[static_cast<size_t>(y) * img.w + x]) / 255.0f;
                for (int c = 0; c < 3; ++c) s.image.at3(c, y, x) = v;
                s.mask.at3(0, y, x) =
                    msk.pixels[static_cast<size_t>(y) * img.w + x] >= 128 ? 1.0f : 0.0f;
            }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace catfa
