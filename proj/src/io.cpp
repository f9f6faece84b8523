#include "catfa/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace catfa {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'F', 'A'};
constexpr uint8_t kVersion = 1;

// ---- little-endian byte plumbing ----

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    std::string origin;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw config_error("tensor file " + origin + ": truncated while reading " + what);
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_whole_file(const std::string& path, const char* kind) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw runtime_fault(std::string("cannot open ") + kind + ": " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_whole_file(const std::string& path, const std::string& bytes, const char* kind) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw runtime_fault(std::string("cannot open ") + kind + " for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw runtime_fault(std::string("failed writing ") + kind + ": " + path);
}

void put_header(std::string& out) {
    out.append(kMagic, 4);
    put_u8(out, kVersion);
}

void check_header(Reader& r) {
    const std::string magic = r.bytes(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic))
        throw config_error("tensor file " + r.origin + ": bad magic");
    const uint8_t version = r.u8("version");
    if (version != kVersion)
        throw config_error("tensor file " + r.origin + ": unsupported version " +
                           std::to_string(version));
}

void put_tensor_body(std::string& out, const AnyTensor& t) {
    put_u8(out, static_cast<uint8_t>(t.dtype));
    const auto& shape = t.shape();
    put_u8(out, static_cast<uint8_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    if (t.dtype == kDtypeF32) {
        for (int64_t i = 0; i < t.f32.size(); ++i)
            put_u32(out, std::bit_cast<uint32_t>(t.f32[i]));
    } else {
        for (int64_t i = 0; i < t.f64.size(); ++i)
            put_u64(out, std::bit_cast<uint64_t>(t.f64[i]));
    }
}

AnyTensor read_tensor_body(Reader& r) {
    const uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32 && dtype != kDtypeF64)
        throw config_error("tensor file " + r.origin + ": unknown dtype " + std::to_string(dtype));
    const uint8_t ndim = r.u8("rank");
    if (ndim < 1 || ndim > 4)
        throw config_error("tensor file " + r.origin + ": rank must be 1..4, got " +
                           std::to_string(ndim));
    std::vector<int> shape(ndim);
    int64_t volume = 1;
    for (int i = 0; i < ndim; ++i) {
        const uint32_t d = r.u32("dims");
        if (d == 0 || d > (1u << 28))
            throw config_error("tensor file " + r.origin + ": bad extent " + std::to_string(d));
        shape[i] = static_cast<int>(d);
        volume *= shape[i];
    }
    AnyTensor out;
    out.dtype = dtype;
    if (dtype == kDtypeF32) {
        std::vector<float> data(static_cast<size_t>(volume));
        for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
        out.f32 = TensorT<float>(shape, std::move(data));
    } else {
        std::vector<double> data(static_cast<size_t>(volume));
        for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
        out.f64 = TensorT<double>(shape, std::move(data));
    }
    return out;
}

} // namespace

AnyTensor AnyTensor::from(TensorT<float> t) {
    AnyTensor a;
    a.dtype = kDtypeF32;
    a.f32 = std::move(t);
    return a;
}

AnyTensor AnyTensor::from(TensorT<double> t) {
    AnyTensor a;
    a.dtype = kDtypeF64;
    a.f64 = std::move(t);
    return a;
}

template <>
const TensorT<float>& tensor_as<float>(const AnyTensor& t) {
    if (t.dtype != kDtypeF32) throw config_error("tensor entry is float64, expected float32");
    return t.f32;
}

template <>
const TensorT<double>& tensor_as<double>(const AnyTensor& t) {
    if (t.dtype != kDtypeF64) throw config_error("tensor entry is float32, expected float64");
    return t.f64;
}

template <typename T>
void write_tensor_file(const std::string& path, const TensorT<T>& t) {
    std::string out;
    put_header(out);
    put_tensor_body(out, AnyTensor::from(t));
    write_whole_file(path, out, "tensor file");
}

template void write_tensor_file<float>(const std::string&, const TensorT<float>&);
template void write_tensor_file<double>(const std::string&, const TensorT<double>&);

AnyTensor read_tensor_file(const std::string& path) {
    const std::string buf = read_whole_file(path, "tensor file");
    Reader r{buf, 0, path};
    check_header(r);
    AnyTensor t = read_tensor_body(r);
    if (r.pos != buf.size())
        throw config_error("tensor file " + path + ": trailing bytes after payload");
    return t;
}

void write_container(const std::string& path, const std::vector<NamedTensor>& entries) {
    std::set<std::string> seen;
    std::string out;
    put_header(out);
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.empty() || e.name.size() > 0xffff)
            throw config_error("tensor container: entry name must be 1..65535 bytes");
        if (!seen.insert(e.name).second)
            throw config_error("tensor container: duplicate entry name '" + e.name + "'");
        put_u16(out, static_cast<uint16_t>(e.name.size()));
        out.append(e.name);
        put_tensor_body(out, e.tensor);
    }
    write_whole_file(path, out, "tensor container");
}

std::vector<NamedTensor> read_container(const std::string& path) {
    const std::string buf = read_whole_file(path, "tensor container");
    Reader r{buf, 0, path};
    check_header(r);
    const uint32_t count = r.u32("entry count");
    std::vector<NamedTensor> entries;
    std::set<std::string> seen;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = r.u16("name length");
        NamedTensor e;
        e.name = r.bytes(len, "name");
        if (!seen.insert(e.name).second)
            throw config_error("tensor container " + path + ": duplicate entry name '" + e.name +
                               "'");
        e.tensor = read_tensor_body(r);
        entries.push_back(std::move(e));
    }
    if (r.pos != buf.size())
        throw config_error("tensor container " + path + ": trailing bytes after last entry");
    return entries;
}

// ---- PGM -----------------------------------------------------------------------

void write_pgm(const std::string& path, const PgmImage& img) {
    if (img.h < 1 || img.w < 1 ||
        img.pixels.size() != static_cast<size_t>(img.h) * static_cast<size_t>(img.w))
        throw shape_error("pgm write: pixel buffer does not match extents");
    std::string out = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    write_whole_file(path, out, "pgm");
}

PgmImage read_pgm(const std::string& path) {
    const std::string buf = read_whole_file(path, "pgm");
    size_t pos = 0;
    auto bad = [&](const std::string& why) {
        return config_error("pgm " + path + ": " + why);
    };
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw bad("not a binary PGM (P5)");
    pos = 2;
    auto next_int = [&](const char* what) {
        // Skip whitespace and '#' comments.
        while (pos < buf.size()) {
            if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
            throw bad(std::string("expected ") + what);
        long v = 0;
        while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1 << 30) throw bad(std::string("oversized ") + what);
            ++pos;
        }
        return v;
    };
    PgmImage img;
    img.w = static_cast<int>(next_int("width"));
    img.h = static_cast<int>(next_int("height"));
    const long maxval = next_int("maxval");
    if (img.w < 1 || img.h < 1) throw bad("extents must be positive");
    if (maxval < 1 || maxval > 255) throw bad("only 8-bit maxval (1..255) supported");
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
        throw bad("expected single whitespace before pixel data");
    ++pos;
    const size_t need = static_cast<size_t>(img.w) * static_cast<size_t>(img.h);
    if (buf.size() - pos < need) throw bad("truncated pixel data");
    if (buf.size() - pos > need) throw bad("trailing bytes after pixel data");
    img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
    return img;
}

// ---- run configuration ------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw config_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    std::vector<std::string> faults;
    auto fault = [&](const std::string& msg) { faults.push_back(msg); };

    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            fault("line " + std::to_string(lineno) + ": expected key=value, got '" + stripped +
                  "'");
            continue;
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            fault("line " + std::to_string(lineno) + ": empty key");
            continue;
        }
        if (kv.count(key)) fault("duplicate key '" + key + "'");
        kv[key] = value;
    }

    static const std::set<std::string> known = {
        "variant",   "channels", "cat_blocks", "convnext_blocks", "heads", "reduction",
        "epochs",    "batch",    "lr",         "eps_loss",        "seed",  "data_dir",
        "out_dir"};
    for (const auto& [k, v] : kv)
        if (!known.count(k)) fault("unknown key '" + k + "'");

    auto take = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    auto parse_int = [&](const char* key, const std::string& v, long long lo, long long hi,
                         long long fallback) -> long long {
        try {
            size_t used = 0;
            const long long x = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("");
            if (x < lo || x > hi) {
                fault(std::string(key) + ": value " + v + " out of range [" + std::to_string(lo) +
                      ", " + std::to_string(hi) + "]");
                return fallback;
            }
            return x;
        } catch (const std::exception&) {
            fault(std::string(key) + ": expected an integer, got '" + v + "'");
            return fallback;
        }
    };
    auto parse_double = [&](const char* key, const std::string& v, double fallback) -> double {
        try {
            size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("");
            return x;
        } catch (const std::exception&) {
            fault(std::string(key) + ": expected a number, got '" + v + "'");
            return fallback;
        }
    };
    auto parse_int4 = [&](const char* key, const std::string& v,
                          std::array<int, kStages>& target) {
        std::array<int, kStages> vals{};
        int count = 0;
        std::istringstream ss(v);
        std::string item;
        bool ok = true;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (count >= kStages) {
                ok = false;
                break;
            }
            try {
                size_t used = 0;
                vals[count] = static_cast<int>(std::stol(item, &used));
                if (used != item.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                ok = false;
                break;
            }
            ++count;
        }
        if (!ok || count != kStages) {
            fault(std::string(key) + ": expected " + std::to_string(kStages) +
                  " comma-separated integers, got '" + v + "'");
            return;
        }
        target = vals;
    };

    RunConfig cfg;
    if (const auto* v = take("variant")) cfg.variant = *v;
    try {
        cfg.model = ModelConfig::named(cfg.variant);
    } catch (const config_error& e) {
        fault(e.what());
    }
    if (const auto* v = take("channels")) parse_int4("channels", *v, cfg.model.channels);
    if (const auto* v = take("cat_blocks")) parse_int4("cat_blocks", *v, cfg.model.cat_blocks);
    if (const auto* v = take("convnext_blocks"))
        parse_int4("convnext_blocks", *v, cfg.model.convnext_blocks);
    if (const auto* v = take("heads")) parse_int4("heads", *v, cfg.model.heads);
    if (const auto* v = take("reduction")) parse_int4("reduction", *v, cfg.model.reduction);
    if (const auto* v = take("epochs"))
        cfg.epochs = static_cast<int>(parse_int("epochs", *v, 1, 1000000, cfg.epochs));
    if (const auto* v = take("batch"))
        cfg.batch = static_cast<int>(parse_int("batch", *v, 1, 1 << 20, cfg.batch));
    if (const auto* v = take("lr")) {
        cfg.lr = parse_double("lr", *v, cfg.lr);
        if (cfg.lr < 0) fault("lr: must be >= 0");
    }
    if (const auto* v = take("eps_loss")) {
        cfg.eps_loss = parse_double("eps_loss", *v, cfg.eps_loss);
        if (!(cfg.eps_loss > 0)) fault("eps_loss: must be > 0");
    }
    if (const auto* v = take("seed"))
        cfg.seed = static_cast<uint64_t>(
            parse_int("seed", *v, 0, std::numeric_limits<long long>::max(), 1));
    if (const auto* v = take("data_dir")) cfg.data_dir = *v;
    if (const auto* v = take("out_dir")) cfg.out_dir = *v;

    try {
        cfg.model.validate();
    } catch (const config_error& e) {
        fault(e.what());
    }

    if (!faults.empty()) {
        std::string msg = "config " + origin + " invalid: ";
        for (size_t i = 0; i < faults.size(); ++i) {
            if (i) msg += "; ";
            msg += faults[i];
        }
        throw config_error(msg);
    }
    return cfg;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace catfa
