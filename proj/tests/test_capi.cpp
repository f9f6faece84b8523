#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "catfa.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("capi_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int counter;
};
int TempDir::counter = 0;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    REQUIRE(f.good());
    f << text;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// Binary PGM with the top half background and bottom half foreground.
void write_half_mask(const std::string& path, int hw) {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n" << hw << " " << hw << "\n255\n";
    for (int y = 0; y < hw; ++y)
        for (int x = 0; x < hw; ++x) f.put(y >= hw / 2 ? char(255) : char(0));
}

} // namespace

TEST_CASE("version and error channel") {
    REQUIRE(catfa_version() != nullptr);
    CHECK(std::strlen(catfa_version()) > 0);
    REQUIRE(catfa_last_error() != nullptr);
}

TEST_CASE("tensor lifecycle: create, fill, write, read back") {
    TempDir tmp;
    const int32_t dims[3] = {2, 3, 4};
    catfa_tensor* t = catfa_tensor_create(dims, 3);
    REQUIRE(t != nullptr);
    CHECK(catfa_tensor_ndim(t) == 3);
    CHECK(catfa_tensor_dim(t, 0) == 2);
    CHECK(catfa_tensor_dim(t, 2) == 4);
    CHECK(catfa_tensor_dim(t, 3) == 0); // out of range reads as zero
    CHECK(catfa_tensor_size(t) == 24);

    float* data = catfa_tensor_data(t);
    REQUIRE(data != nullptr);
    for (int i = 0; i < 24; ++i) data[i] = static_cast<float>(i) * 0.5f;

    const std::string path = tmp.file("t.ctfa");
    REQUIRE(catfa_tensor_write(t, path.c_str()) == CATFA_OK);
    catfa_tensor* back = catfa_tensor_read(path.c_str());
    REQUIRE(back != nullptr);
    CHECK(catfa_tensor_size(back) == 24);
    const float* bdata = catfa_tensor_data(back);
    for (int i = 0; i < 24; ++i) CHECK(bdata[i] == static_cast<float>(i) * 0.5f);

    catfa_tensor_free(t);
    catfa_tensor_free(back);

    CHECK(catfa_tensor_create(dims, 0) == nullptr);
    CHECK(std::strlen(catfa_last_error()) > 0);
    CHECK(catfa_tensor_create(nullptr, 2) == nullptr);
    CHECK(catfa_tensor_read(tmp.file("absent.ctfa").c_str()) == nullptr);
    CHECK(catfa_tensor_ndim(nullptr) == 0);
    CHECK(catfa_tensor_data(nullptr) == nullptr);
    catfa_tensor_free(nullptr); // must be a no-op
}

TEST_CASE("model handles: create, count, invalid variants, eval guard") {
    catfa_model* m = catfa_model_create("tiny", 1);
    REQUIRE(m != nullptr);
    CHECK(catfa_model_param_count(m) > 100000);

    // A freshly built model has no normalizer statistics, so inference-mode
    // forward must fail rather than silently normalize with garbage.
    const int32_t dims[4] = {1, 3, 64, 64};
    catfa_tensor* x = catfa_tensor_create(dims, 4);
    for (int64_t i = 0; i < catfa_tensor_size(x); ++i) catfa_tensor_data(x)[i] = 0.5f;
    CHECK(catfa_model_forward(m, x) == nullptr);
    CHECK(std::strlen(catfa_last_error()) > 0);

    CHECK(catfa_model_forward(nullptr, x) == nullptr);
    CHECK(catfa_model_forward(m, nullptr) == nullptr);
    catfa_tensor_free(x);
    catfa_model_free(m);

    CHECK(catfa_model_create("xxl", 1) == nullptr);
    CHECK(catfa_model_create(nullptr, 1) == nullptr);
    CHECK(catfa_model_create("", 1) == nullptr);
    CHECK(catfa_model_param_count(nullptr) == 0);
    catfa_model_free(nullptr);
}

TEST_CASE("train command produces a loadable, deterministic checkpoint") {
    TempDir tmp;
    const std::string out = tmp.file("run");
    write_text(tmp.file("run.cfg"), "variant = tiny\n"
                                    "channels = 8,16,32,64\n"
                                    "epochs = 1\n"
                                    "batch = 4\n"
                                    "seed = 5\n"
                                    "out_dir = " + out + "\n");
    REQUIRE(catfa_cmd_train(tmp.file("run.cfg").c_str()) == CATFA_OK);
    REQUIRE(fs::exists(out + "/checkpoint.ctfa"));
    REQUIRE(fs::exists(out + "/history.csv"));
    const std::string history = slurp(out + "/history.csv");
    CHECK(history.rfind("epoch,train_loss,val_loss,val_dice,seed\n", 0) == 0);

    catfa_model* m = catfa_model_load((out + "/checkpoint.ctfa").c_str());
    REQUIRE(m != nullptr);

    const int32_t dims[4] = {1, 3, 64, 64};
    catfa_tensor* x = catfa_tensor_create(dims, 4);
    for (int64_t i = 0; i < catfa_tensor_size(x); ++i)
        catfa_tensor_data(x)[i] = 0.25f + 0.5f * static_cast<float>(i % 7) / 7.0f;
    catfa_tensor* y = catfa_model_forward(m, x);
    REQUIRE(y != nullptr);
    CHECK(catfa_tensor_ndim(y) == 4);
    CHECK(catfa_tensor_dim(y, 1) == 1);
    CHECK(catfa_tensor_dim(y, 2) == 64);
    for (int64_t i = 0; i < catfa_tensor_size(y); ++i) {
        REQUIRE(catfa_tensor_data(y)[i] > 0.0f);
        REQUIRE(catfa_tensor_data(y)[i] < 1.0f);
    }

    // Saving the loaded model and loading again keeps outputs bitwise equal.
    REQUIRE(catfa_model_save(m, tmp.file("again.ctfa").c_str()) == CATFA_OK);
    catfa_model* m2 = catfa_model_load(tmp.file("again.ctfa").c_str());
    REQUIRE(m2 != nullptr);
    catfa_tensor* y2 = catfa_model_forward(m2, x);
    REQUIRE(y2 != nullptr);
    CHECK(std::memcmp(catfa_tensor_data(y), catfa_tensor_data(y2),
                      sizeof(float) * static_cast<size_t>(catfa_tensor_size(y))) == 0);

    SUBCASE("inference command writes probability tensor and mask image") {
        const std::string inf = tmp.file("inf");
        REQUIRE(catfa_cmd_infer((out + "/checkpoint.ctfa").c_str(), "synth", inf.c_str(), 9) ==
                CATFA_OK);
        CHECK(fs::exists(inf + "/synth_prob.ctfa"));
        CHECK(fs::exists(inf + "/synth_mask.pgm"));
        CHECK(fs::exists(inf + "/synth_input.pgm"));
        CHECK(fs::exists(inf + "/synth_gt.pgm"));
        catfa_tensor* prob = catfa_tensor_read((inf + "/synth_prob.ctfa").c_str());
        REQUIRE(prob != nullptr);
        CHECK(catfa_tensor_ndim(prob) == 4);
        catfa_tensor_free(prob);
        CHECK(catfa_cmd_infer((out + "/checkpoint.ctfa").c_str(), "nope.txt", inf.c_str(), 9) ==
              CATFA_ERR_CONFIG);
    }

    catfa_tensor_free(x);
    catfa_tensor_free(y);
    catfa_tensor_free(y2);
    catfa_model_free(m);
    catfa_model_free(m2);
}

TEST_CASE("train command rejects bad configuration") {
    TempDir tmp;
    CHECK(catfa_cmd_train(tmp.file("absent.cfg").c_str()) == CATFA_ERR_CONFIG);
    CHECK(std::string(catfa_last_error()).find("cannot open config file") != std::string::npos);
    write_text(tmp.file("bad.cfg"), "variant = tiny\nwarp_speed = 11\n");
    CHECK(catfa_cmd_train(tmp.file("bad.cfg").c_str()) == CATFA_ERR_CONFIG);
    CHECK(catfa_cmd_train(nullptr) == CATFA_ERR_CONFIG);
}

TEST_CASE("eval command scores directories and reports degenerate comparisons") {
    TempDir tmp;
    fs::create_directories(tmp.path / "pred");
    fs::create_directories(tmp.path / "gt");
    for (const std::string name : {"a.pgm", "b.pgm", "c.pgm", "d.pgm", "e.pgm"}) {
        write_half_mask((tmp.path / "pred" / name).string(), 16);
        write_half_mask((tmp.path / "gt" / name).string(), 16);
    }

    const std::string csv = tmp.file("scores.csv");
    REQUIRE(catfa_cmd_eval((tmp.path / "pred").string().c_str(),
                           (tmp.path / "gt").string().c_str(), nullptr, csv.c_str()) == CATFA_OK);
    const std::string content = slurp(csv);
    CHECK(content.rfind("file,dsc,iou,precision,recall,specificity,mcc,hd\n", 0) == 0);
    CHECK(content.find("a.pgm,1,1,1,1,1,1,0") != std::string::npos);
    CHECK(content.find("mean,1,1,1,1,1,1,0") != std::string::npos);
    CHECK(content.find("sd,0,0,0,0,0,0,0") != std::string::npos);

    // A comparison against identical predictions has no nonzero differences,
    // so the signed-rank test is undefined for every metric.
    const std::string csv2 = tmp.file("scores2.csv");
    REQUIRE(catfa_cmd_eval((tmp.path / "pred").string().c_str(),
                           (tmp.path / "gt").string().c_str(),
                           (tmp.path / "pred").string().c_str(), csv2.c_str()) == CATFA_OK);
    const std::string content2 = slurp(csv2);
    CHECK(content2.find("wilcoxon_w_plus,undefined") != std::string::npos);
    CHECK(content2.find("wilcoxon_p,undefined") != std::string::npos);

    SUBCASE("mismatched directories fail") {
        write_half_mask((tmp.path / "pred" / "extra.pgm").string(), 16);
        CHECK(catfa_cmd_eval((tmp.path / "pred").string().c_str(),
                             (tmp.path / "gt").string().c_str(), nullptr,
                             csv.c_str()) == CATFA_ERR_CONFIG);
    }
    SUBCASE("empty prediction directory fails") {
        fs::create_directories(tmp.path / "none");
        CHECK(catfa_cmd_eval((tmp.path / "none").string().c_str(),
                             (tmp.path / "gt").string().c_str(), nullptr,
                             csv.c_str()) == CATFA_ERR_CONFIG);
    }
}

TEST_CASE("gradcheck command: pass, deliberate corruption, bad scope") {
    CHECK(catfa_cmd_gradcheck("primitives", 3) == CATFA_OK);

    ::setenv("CATFA_GRADCHECK_CORRUPT", "1", 1);
    CHECK(catfa_cmd_gradcheck("primitives", 3) == CATFA_CHECK_FAILED);
    CHECK(std::string(catfa_last_error()).find("gradcheck") != std::string::npos);
    ::unsetenv("CATFA_GRADCHECK_CORRUPT");

    CHECK(catfa_cmd_gradcheck("everything", 3) == CATFA_ERR_CONFIG);
    CHECK(catfa_cmd_gradcheck(nullptr, 3) == CATFA_ERR_CONFIG);
}

TEST_CASE("bench command emits one row per kernel and validates inputs") {
    TempDir tmp;
    const std::string csv = tmp.file("bench.csv");
    REQUIRE(catfa_cmd_bench(128, 8, "2,4", 3, csv.c_str()) == CATFA_OK);
    const std::string content = slurp(csv);
    CHECK(content.rfind("kernel,r,tokens,channels,madds,median_ms\n", 0) == 0);
    CHECK(content.find("standard,1,128,8,131072,") != std::string::npos);
    CHECK(content.find("reduced,2,128,8,65536,") != std::string::npos);
    CHECK(content.find("reduced,4,128,8,32768,") != std::string::npos);

    CHECK(catfa_cmd_bench(100, 8, "8", 3, nullptr) == CATFA_ERR_CONFIG);   // divisibility
    CHECK(catfa_cmd_bench(128, 8, "1,x", 3, nullptr) == CATFA_ERR_CONFIG); // parse
    CHECK(catfa_cmd_bench(128, 8, nullptr, 3, nullptr) == CATFA_ERR_CONFIG);
}
