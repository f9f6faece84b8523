#include "catfa.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "catfa/bench.hpp"
#include "catfa/gradcheck.hpp"
#include "catfa/io.hpp"
#include "catfa/metrics.hpp"
#include "catfa/model.hpp"
#include "catfa/synth.hpp"
#include "catfa/train.hpp"

namespace fs = std::filesystem;

using namespace catfa;

struct catfa_tensor {
    TensorT<float> t;
};

struct catfa_model {
    Model<float> m;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
catfa_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const shape_error& e) {
        set_error(e.what());
        return CATFA_ERR_CONFIG;
    } catch (const config_error& e) {
        set_error(e.what());
        return CATFA_ERR_CONFIG;
    } catch (const std::exception& e) {
        set_error(e.what());
        return CATFA_ERR_RUNTIME;
    }
}

template <typename Fn>
auto guarded_ptr(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        set_error(e.what());
        return nullptr;
    }
}

std::string require(const char* value, const char* what) {
    if (!value || !*value) throw config_error(std::string(what) + " must be given");
    return value;
}

// ---- infer helpers ---------------------------------------------------------

std::string stem_of(const std::string& path) {
    const std::string name = fs::path(path).filename().string();
    const size_t dotpos = name.find_last_of('.');
    return dotpos == std::string::npos || dotpos == 0 ? name : name.substr(0, dotpos);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

TensorT<float> gray_to_input(const PgmImage& img) {
    TensorT<float> x({1, 3, img.h, img.w});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < img.h * img.w; ++i)
            x[static_cast<int64_t>(c) * img.h * img.w + i] = img.pixels[static_cast<size_t>(i)] / 255.0f;
    return x;
}

PgmImage channel_to_pgm(const TensorT<float>& x, int b, int c) {
    const int h = x.dim(2), w = x.dim(3);
    PgmImage img;
    img.h = h;
    img.w = w;
    img.pixels.resize(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) {
        const float v = x[((static_cast<int64_t>(b) * x.dim(1) + c) * h * w) + i];
        const float clamped = std::min(1.0f, std::max(0.0f, v));
        img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(clamped * 255.0f));
    }
    return img;
}

PgmImage mask_to_pgm(const TensorT<float>& prob, int b, float threshold) {
    const int h = prob.dim(2), w = prob.dim(3);
    PgmImage img;
    img.h = h;
    img.w = w;
    img.pixels.resize(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i)
        img.pixels[static_cast<size_t>(i)] =
            prob[static_cast<int64_t>(b) * h * w + i] >= threshold ? 255 : 0;
    return img;
}

// ---- eval helpers ----------------------------------------------------------

std::vector<std::string> pgm_names(const std::string& dir) {
    if (!fs::is_directory(dir)) throw config_error("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (has_suffix(name, ".pgm")) names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    return names;
}

void require_matching(const std::vector<std::string>& a, const std::string& a_dir,
                      const std::vector<std::string>& b, const std::string& b_dir) {
    for (const std::string& name : a)
        if (!std::binary_search(b.begin(), b.end(), name))
            throw config_error("no match for " + a_dir + "/" + name + " in " + b_dir);
    for (const std::string& name : b)
        if (!std::binary_search(a.begin(), a.end(), name))
            throw config_error("no match for " + b_dir + "/" + name + " in " + a_dir);
}

struct ScoredDir {
    std::vector<std::string> files;
    // scores[m][i] = metric m of image i, in MetricsReport field order
    std::vector<std::vector<double>> scores = std::vector<std::vector<double>>(7);
};

const char* const kMetricNames[7] = {"dsc", "iou",  "precision", "recall",
                                     "specificity", "mcc",       "hd"};

ScoredDir score_dir(const std::string& pred_dir, const std::string& gt_dir) {
    const std::vector<std::string> preds = pgm_names(pred_dir);
    const std::vector<std::string> gts = pgm_names(gt_dir);
    if (preds.empty()) throw config_error("no .pgm files in " + pred_dir);
    require_matching(preds, pred_dir, gts, gt_dir);

    ScoredDir out;
    out.files = preds;
    for (const std::string& name : preds) {
        const PgmImage p = read_pgm((fs::path(pred_dir) / name).string());
        const PgmImage g = read_pgm((fs::path(gt_dir) / name).string());
        if (p.h != g.h || p.w != g.w)
            throw config_error("size mismatch for " + name + ": prediction " +
                               std::to_string(p.w) + "x" + std::to_string(p.h) +
                               " vs ground truth " + std::to_string(g.w) + "x" +
                               std::to_string(g.h));
        Mask pm(p.pixels.size()), gm(g.pixels.size());
        for (size_t i = 0; i < p.pixels.size(); ++i) pm[i] = p.pixels[i] >= 128 ? 1 : 0;
        for (size_t i = 0; i < g.pixels.size(); ++i) gm[i] = g.pixels[i] >= 128 ? 1 : 0;
        const MetricsReport r = report(pm, gm, p.h, p.w);
        const double vals[7] = {r.dsc, r.iou, r.precision, r.recall, r.specificity, r.mcc, r.hd};
        for (int m = 0; m < 7; ++m) out.scores[static_cast<size_t>(m)].push_back(vals[m]);
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0;
    const double mu = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        try {
            size_t used = 0;
            const int value = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(value);
        } catch (const std::exception&) {
            throw config_error(std::string(what) + ": not an integer: '" + item + "'");
        }
        pos = comma + 1;
    }
    return out;
}

} // namespace

// ---- library surface ----------------------------------------------------------

extern "C" {

const char* catfa_version(void) { return "1.0.0"; }

const char* catfa_last_error(void) { return g_last_error.c_str(); }

catfa_tensor* catfa_tensor_create(const int32_t* dims, int32_t ndim) {
    return guarded_ptr([&]() -> catfa_tensor* {
        if (!dims || ndim < 1 || ndim > 4)
            throw config_error("tensor rank must be 1..4");
        std::vector<int> shape(dims, dims + ndim);
        return new catfa_tensor{TensorT<float>(shape)};
    });
}

catfa_tensor* catfa_tensor_read(const char* path) {
    return guarded_ptr([&]() -> catfa_tensor* {
        const AnyTensor any = read_tensor_file(require(path, "path"));
        TensorT<float> t = any.dtype == kDtypeF32 ? any.f32 : cast<float>(any.f64);
        return new catfa_tensor{std::move(t)};
    });
}

catfa_status catfa_tensor_write(const catfa_tensor* t, const char* path) {
    return guarded([&] {
        if (!t) throw config_error("tensor is NULL");
        write_tensor_file(require(path, "path"), t->t);
        return CATFA_OK;
    });
}

int32_t catfa_tensor_ndim(const catfa_tensor* t) { return t ? t->t.rank() : 0; }

int32_t catfa_tensor_dim(const catfa_tensor* t, int32_t axis) {
    if (!t || axis < 0 || axis >= t->t.rank()) return 0;
    return t->t.dim(axis);
}

int64_t catfa_tensor_size(const catfa_tensor* t) { return t ? t->t.size() : 0; }

float* catfa_tensor_data(catfa_tensor* t) { return t ? t->t.data() : nullptr; }

void catfa_tensor_free(catfa_tensor* t) { delete t; }

catfa_model* catfa_model_create(const char* variant, uint64_t seed) {
    return guarded_ptr([&]() -> catfa_model* {
        const ModelConfig cfg = ModelConfig::named(require(variant, "variant"));
        return new catfa_model{Model<float>(cfg, seed)};
    });
}

catfa_model* catfa_model_load(const char* checkpoint_path) {
    return guarded_ptr([&]() -> catfa_model* {
        return new catfa_model{load_checkpoint(require(checkpoint_path, "checkpoint path"))};
    });
}

catfa_status catfa_model_save(catfa_model* m, const char* checkpoint_path) {
    return guarded([&] {
        if (!m) throw config_error("model is NULL");
        save_checkpoint(m->m, require(checkpoint_path, "checkpoint path"));
        return CATFA_OK;
    });
}

catfa_tensor* catfa_model_forward(catfa_model* m, const catfa_tensor* input) {
    return guarded_ptr([&]() -> catfa_tensor* {
        if (!m) throw config_error("model is NULL");
        if (!input) throw config_error("input is NULL");
        return new catfa_tensor{m->m.forward(input->t, Mode::eval)};
    });
}

int64_t catfa_model_param_count(const catfa_model* m) { return m ? m->m.count_params() : 0; }

void catfa_model_free(catfa_model* m) { delete m; }

// ---- commands -------------------------------------------------------------------

catfa_status catfa_cmd_train(const char* config_path) {
    return guarded([&] {
        const RunConfig rc = RunConfig::parse_file(require(config_path, "config path"));
        fs::create_directories(rc.out_dir);
        const std::vector<SynthSample> data =
            rc.data_dir.empty() ? make_synth_dataset(200, rc.model.input_hw, rc.seed)
                                : load_dataset_dir(rc.data_dir);
        Model<float> model(rc.model, rc.seed);
        TrainOptions opt;
        opt.epochs = rc.epochs;
        opt.batch = rc.batch;
        opt.optim.lr = rc.lr;
        opt.eps_loss = rc.eps_loss;
        opt.seed = rc.seed;
        opt.history_csv = (fs::path(rc.out_dir) / "history.csv").string();
        opt.checkpoint = (fs::path(rc.out_dir) / "checkpoint.ctfa").string();
        opt.verbose = true;
        const TrainResult result = train_model(model, data, opt);
        std::printf("trained %d epochs on %d samples (%d val); final val_dice=%s\n", opt.epochs,
                    result.n_train + result.n_val, result.n_val,
                    fmt_g(result.history.back().val_dice).c_str());
        return CATFA_OK;
    });
}

catfa_status catfa_cmd_infer(const char* checkpoint_path, const char* input, const char* out_dir,
                             uint64_t seed) {
    return guarded([&] {
        Model<float> model = load_checkpoint(require(checkpoint_path, "checkpoint path"));
        const std::string in = require(input, "input");
        const std::string dir = require(out_dir, "output directory");
        fs::create_directories(dir);

        std::string stem;
        TensorT<float> x;
        if (in == "synth") {
            stem = "synth";
            const SynthSample sample =
                make_synth_dataset(1, model.config().input_hw, seed, SynthTask::anywhere)[0];
            x = TensorT<float>({1, 3, sample.image.dim(1), sample.image.dim(2)},
                               sample.image.vec());
            write_pgm((fs::path(dir) / "synth_input.pgm").string(), channel_to_pgm(x, 0, 0));
            const TensorT<float> gt({1, 1, sample.mask.dim(1), sample.mask.dim(2)},
                                    sample.mask.vec());
            write_pgm((fs::path(dir) / "synth_gt.pgm").string(), mask_to_pgm(gt, 0, 0.5f));
        } else if (has_suffix(in, ".pgm")) {
            stem = stem_of(in);
            x = gray_to_input(read_pgm(in));
        } else if (has_suffix(in, ".ctfa")) {
            stem = stem_of(in);
            const AnyTensor any = read_tensor_file(in);
            TensorT<float> t = any.dtype == kDtypeF32 ? any.f32 : cast<float>(any.f64);
            if (t.rank() == 3)
                x = TensorT<float>({1, t.dim(0), t.dim(1), t.dim(2)}, t.vec());
            else if (t.rank() == 4)
                x = std::move(t);
            else
                throw config_error("infer: tensor input must be rank 3 or 4, got rank " +
                                   std::to_string(t.rank()));
        } else {
            throw config_error("infer: unsupported input '" + in +
                               "' (expected a .pgm image, a .ctfa tensor, or \"synth\")");
        }

        const TensorT<float> prob = model.forward(x, Mode::eval);
        write_tensor_file((fs::path(dir) / (stem + "_prob.ctfa")).string(), prob);
        const int batch = prob.dim(0);
        for (int b = 0; b < batch; ++b) {
            const std::string name =
                batch == 1 ? stem + "_mask.pgm" : stem + "_mask" + std::to_string(b) + ".pgm";
            write_pgm((fs::path(dir) / name).string(), mask_to_pgm(prob, b, 0.5f));
        }
        std::printf("wrote %s_prob.ctfa and %d mask(s) to %s\n", stem.c_str(), batch,
                    dir.c_str());
        return CATFA_OK;
    });
}

catfa_status catfa_cmd_eval(const char* pred_dir, const char* gt_dir, const char* compare_dir,
                            const char* out_csv) {
    return guarded([&] {
        const std::string preds = require(pred_dir, "prediction directory");
        const std::string gts = require(gt_dir, "ground-truth directory");
        const std::string csv = require(out_csv, "output csv path");
        const ScoredDir scored = score_dir(preds, gts);

        FILE* f = std::fopen(csv.c_str(), "wb");
        if (!f) throw runtime_fault("cannot open for writing: " + csv);
        std::fprintf(f, "file,dsc,iou,precision,recall,specificity,mcc,hd\n");
        for (size_t i = 0; i < scored.files.size(); ++i) {
            std::fprintf(f, "%s", scored.files[i].c_str());
            for (int m = 0; m < 7; ++m)
                std::fprintf(f, ",%s", fmt_g(scored.scores[static_cast<size_t>(m)][i]).c_str());
            std::fprintf(f, "\n");
        }
        std::fprintf(f, "mean");
        for (int m = 0; m < 7; ++m)
            std::fprintf(f, ",%s", fmt_g(mean_of(scored.scores[static_cast<size_t>(m)])).c_str());
        std::fprintf(f, "\nsd");
        for (int m = 0; m < 7; ++m)
            std::fprintf(f, ",%s", fmt_g(sd_of(scored.scores[static_cast<size_t>(m)])).c_str());
        std::fprintf(f, "\n");

        if (compare_dir && *compare_dir) {
            const ScoredDir other = score_dir(compare_dir, gts);
            if (other.files != scored.files) {
                std::fclose(f);
                throw config_error("compare directory must hold the same file names as " + preds);
            }
            std::string wrow = "wilcoxon_w_plus", prow = "wilcoxon_p";
            for (int m = 0; m < 7; ++m) {
                try {
                    const WilcoxonResult r = wilcoxon_one_tailed(
                        scored.scores[static_cast<size_t>(m)], other.scores[static_cast<size_t>(m)]);
                    wrow += "," + fmt_g(r.w_plus);
                    prow += "," + fmt_g(r.p);
                } catch (const config_error&) {
                    wrow += ",undefined";
                    prow += ",undefined";
                }
            }
            std::fprintf(f, "%s\n%s\n", wrow.c_str(), prow.c_str());
        }
        std::fclose(f);

        std::printf("evaluated %zu images; mean dsc=%s hd=%s; wrote %s\n", scored.files.size(),
                    fmt_g(mean_of(scored.scores[0])).c_str(),
                    fmt_g(mean_of(scored.scores[6])).c_str(), csv.c_str());
        return CATFA_OK;
    });
}

catfa_status catfa_cmd_gradcheck(const char* scope, uint64_t seed) {
    return guarded([&] {
        const char* corrupt_env = std::getenv("CATFA_GRADCHECK_CORRUPT");
        const bool corrupt = corrupt_env && *corrupt_env && std::strcmp(corrupt_env, "0") != 0;
        const std::vector<GradCheckRow> rows =
            grad_check(require(scope, "scope"), seed, corrupt);
        bool all_pass = true;
        for (const GradCheckRow& row : rows) {
            std::printf("%-20s max_rel_err=%.3e tol=%.0e %s\n", row.target.c_str(),
                        row.max_rel_err, row.tol, row.pass ? "ok" : "FAILED");
            all_pass = all_pass && row.pass;
        }
        std::printf("gradcheck %s: %zu target(s) %s\n", scope, rows.size(),
                    all_pass ? "passed" : "FAILED");
        if (!all_pass) {
            set_error("gradcheck: at least one target exceeded its tolerance");
            return CATFA_CHECK_FAILED;
        }
        return CATFA_OK;
    });
}

catfa_status catfa_cmd_bench(int64_t tokens, int64_t channels, const char* reductions_csv,
                             int32_t reps, const char* out_csv) {
    return guarded([&] {
        const std::vector<int> reductions =
            parse_int_list(require(reductions_csv, "reduction list"), "bench reductions");
        const std::vector<BenchRow> rows = run_bench(tokens, channels, reductions, reps);
        std::printf("kernel,r,tokens,channels,madds,median_ms\n");
        for (const BenchRow& row : rows)
            std::printf("%s,%d,%lld,%lld,%llu,%.6f\n", row.kernel.c_str(), row.r,
                        static_cast<long long>(row.tokens),
                        static_cast<long long>(row.channels),
                        static_cast<unsigned long long>(row.madds), row.median_ms);
        if (out_csv && *out_csv) write_bench_csv(out_csv, rows);
        return CATFA_OK;
    });
}

} // extern "C"
