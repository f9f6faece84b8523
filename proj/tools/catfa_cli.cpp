// Command-line front end. Everything goes through the public C API; this
// file only parses flags and maps statuses onto exit codes:
//   0 success, 1 failed check, 2 bad configuration/input, 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "catfa.h"

int main(int argc, char** argv) {
    CLI::App app{"catfa: dual-branch attention segmentation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint;
    std::string input;
    std::string pred_dir, gt_dir, compare_dir;
    std::string out;
    std::string scope = "all";
    std::string reduction = "1,2,4,8";
    uint64_t seed = 42;
    int64_t tokens = 4096;
    int64_t channels = 64;
    int32_t reps = 5;

    CLI::App* train = app.add_subcommand("train", "train a model from a run-config file");
    train->add_option("--config", config_path, "run-config file (key=value lines)")->required();

    CLI::App* infer = app.add_subcommand("infer", "run a checkpoint on one input");
    infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    infer->add_option("--input", input, ".pgm image, .ctfa tensor, or \"synth\"")->required();
    infer->add_option("--out", out, "output directory (default: out)");
    infer->add_option("--seed", seed, "seed for synthetic input");

    CLI::App* eval = app.add_subcommand("eval", "score prediction masks against ground truth");
    eval->add_option("--pred-dir", pred_dir, "directory of predicted masks (*.pgm)")->required();
    eval->add_option("--gt-dir", gt_dir, "directory of ground-truth masks (*.pgm)")->required();
    eval->add_option("--compare", compare_dir,
                     "second prediction directory; adds signed-rank test rows");
    eval->add_option("--out", out, "output CSV path (default: metrics.csv)");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient validation");
    gradcheck->add_option("--scope", scope, "primitives | blocks | model | all");
    gradcheck->add_option("--seed", seed, "seed for the random fixtures");

    CLI::App* bench = app.add_subcommand("bench", "time the attention-score kernel");
    bench->add_option("--tokens", tokens, "token count (default: 4096)");
    bench->add_option("--channels", channels, "token width (default: 64)");
    bench->add_option("--reduction", reduction, "comma-separated reduction factors");
    bench->add_option("--reps", reps, "timed repetitions per row (default: 5)");
    bench->add_option("--out", out, "also write rows to this CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    catfa_status status = CATFA_OK;
    if (train->parsed()) {
        status = catfa_cmd_train(config_path.c_str());
    } else if (infer->parsed()) {
        if (out.empty()) out = "out";
        status = catfa_cmd_infer(checkpoint.c_str(), input.c_str(), out.c_str(), seed);
    } else if (eval->parsed()) {
        if (out.empty()) out = "metrics.csv";
        status = catfa_cmd_eval(pred_dir.c_str(), gt_dir.c_str(),
                                compare_dir.empty() ? nullptr : compare_dir.c_str(),
                                out.c_str());
    } else if (gradcheck->parsed()) {
        status = catfa_cmd_gradcheck(scope.c_str(), seed);
    } else if (bench->parsed()) {
        status = catfa_cmd_bench(tokens, channels, reduction.c_str(), reps,
                                 out.empty() ? nullptr : out.c_str());
    }

    if (status != CATFA_OK) std::fprintf(stderr, "error: %s\n", catfa_last_error());
    return static_cast<int>(status);
}
