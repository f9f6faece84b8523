#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "catfa/model.hpp"
#include "catfa/tensor.hpp"

namespace catfa {

// ---- binary tensor files ------------------------------------------------------
//
// Little-endian layout, magic "CTFA", version byte 1.
//
//   single tensor:  magic, version, dtype u8 (0 = float32, 1 = float64),
//                   ndim u8 (1..4), ndim u32 dims, row-major payload
//   container:      magic, version, u32 entry count, then per entry a u16
//                   name length + UTF-8 name followed by the single-tensor
//                   fields from dtype onward
//
// The two layouts are not self-distinguishing (a dtype byte and a count byte
// look alike), so reading is explicit: read_tensor_file for single tensors,
// read_container for containers.

constexpr int kDtypeF32 = 0;
constexpr int kDtypeF64 = 1;

// Either a float32 or a float64 tensor, as found in a file.
struct AnyTensor {
    int dtype = kDtypeF32;
    TensorT<float> f32;
    TensorT<double> f64;

    static AnyTensor from(TensorT<float> t);
    static AnyTensor from(TensorT<double> t);
    const std::vector<int>& shape() const { return dtype == kDtypeF32 ? f32.shape() : f64.shape(); }
};

struct NamedTensor {
    std::string name;
    AnyTensor tensor;
};

template <typename T>
void write_tensor_file(const std::string& path, const TensorT<T>& t);

AnyTensor read_tensor_file(const std::string& path);

void write_container(const std::string& path, const std::vector<NamedTensor>& entries);

std::vector<NamedTensor> read_container(const std::string& path);

// Typed view of an AnyTensor; throws config_error on a dtype mismatch rather
// than converting silently.
template <typename T>
const TensorT<T>& tensor_as(const AnyTensor& t);

// ---- binary PGM (P5) -----------------------------------------------------------

struct PgmImage {
    int h = 0, w = 0;
    std::vector<uint8_t> pixels; // row-major, maxval-scaled (we write maxval 255)
};

void write_pgm(const std::string& path, const PgmImage& img);
PgmImage read_pgm(const std::string& path);

// ---- run configuration ----------------------------------------------------------
//
// Plain key=value lines; '#' starts a comment; unknown keys are rejected.
// Keys and defaults:
//   variant          tiny        model preset (tiny | s | l)
//   channels         per variant four comma-separated ints
//   cat_blocks       per variant four comma-separated ints
//   convnext_blocks  per variant four comma-separated ints
//   heads            per variant four comma-separated ints
//   reduction        per variant four comma-separated ints
//   epochs           30
//   batch            8
//   lr               1e-4
//   eps_loss         1e-6
//   seed             1
//   data_dir         (empty)     empty -> a generated synthetic dataset
//   out_dir          out

struct RunConfig {
    std::string variant = "tiny";
    ModelConfig model; // variant preset with explicit array overrides applied
    int epochs = 30;
    int batch = 8;
    double lr = 1e-4;
    double eps_loss = 1e-6;
    uint64_t seed = 1;
    std::string data_dir;
    std::string out_dir = "out";

    static RunConfig parse_file(const std::string& path);
    // `origin` only labels error messages.
    static RunConfig parse_text(const std::string& text, const std::string& origin);
};

// ---- formatting ------------------------------------------------------------------

// Fixed float formatting ("%.9g") so identical values always print as
// identical bytes in CSV artifacts.
std::string fmt_g(double v);

} // namespace catfa
