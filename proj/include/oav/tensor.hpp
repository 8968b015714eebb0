#pragma once

// Dense row-major tensors over 64-bit floats, seeded deterministic RNG, and
// the OAVT binary tensor format. Everything downstream builds on this header.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace oav {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AlignmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << s[i] << (i + 1 < s.size() ? "," : "");
    }
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("element count " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    double at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data[((a * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel()) {
            throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
        }
        return Tensor(std::move(s), data);
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Plain (non-autograd) tensor math
// ---------------------------------------------------------------------------

// C += A * B with A:[m,k], B:[k,n]. Row-major i-p-j loop; inner loop runs over
// contiguous rows of B and C so the compiler can vectorize it.
inline void matmul_accumulate(const double* a, const double* b, double* c,
                              std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
    }
    Tensor c({a.shape[0], b.shape[1]});
    matmul_accumulate(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1],
                      b.shape[1]);
    return c;
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d wants rank 2, got " + shape_str(a.shape));
    Tensor t({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i) {
        for (std::size_t j = 0; j < a.shape[1]; ++j) {
            t.at2(j, i) = a.at2(i, j);
        }
    }
    return t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("add shape mismatch: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] += b.data[i];
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) {
        throw ShapeError("sub shape mismatch: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    Tensor c = a;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] -= b.data[i];
    return c;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    for (double& v : c.data) v *= s;
    return c;
}

// ---------------------------------------------------------------------------
// Rng
//
// splitmix64 core: state advances by the golden-ratio increment and each
// output is a finalized mix of the new state. Integer stream is platform
// exact. uniform01 maps the top 53 bits to [0,1). normal() draws one
// Box-Muller value from two fresh uniforms per call (no cached spare, so the
// generator state stays a single 64-bit word):
//   z = sqrt(-2 ln(1-u1)) * cos(2 pi u2)
// ---------------------------------------------------------------------------

struct Rng {
    std::uint64_t state{0};

    Rng() = default;
    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        state += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return next_u64() % n;
    }

    double normal() {
        const double u1 = 1.0 - uniform01();  // (0,1], keeps log() finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

// Derives an independent stream from (seed, index) pairs, e.g. per-step or
// per-sample streams that can be reproduced without replaying history.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL + index * 0xD1B54A32D192ED03ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline Tensor rand_normal(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal();
    return t;
}

inline Tensor rand_uniform(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = lo + (hi - lo) * rng.uniform01();
    return t;
}

// ---------------------------------------------------------------------------
// Exact summation (order-independent, correctly rounded)
//
// Shewchuk-style partials with the final round-to-even correction, as used by
// CPython's math.fsum. Because the partials represent the exact sum, the
// rounded result does not depend on the order the terms were added in. Used
// where a reduction must be invariant under input permutation.
// ---------------------------------------------------------------------------

class ExactSum {
public:
    void add(double x) {
        std::size_t i = 0;
        for (std::size_t j = 0; j < partials_.size(); ++j) {
            double y = partials_[j];
            if (std::abs(x) < std::abs(y)) std::swap(x, y);
            const double hi = x + y;
            const double yr = hi - x;
            const double lo = y - yr;
            if (lo != 0.0) partials_[i++] = lo;
            x = hi;
        }
        partials_.resize(i);
        partials_.push_back(x);
    }

    double result() const {
        if (partials_.empty()) return 0.0;
        std::size_t n = partials_.size();
        double hi = partials_[--n];
        double lo = 0.0;
        while (n > 0) {
            const double x = hi;
            const double y = partials_[--n];
            hi = x + y;
            const double yr = hi - x;
            lo = y - yr;
            if (lo != 0.0) break;
        }
        if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
            const double y = lo * 2.0;
            const double x = hi + y;
            const double yr = x - hi;
            if (y == yr) hi = x;
        }
        return hi;
    }

    void reset() { partials_.clear(); }

private:
    std::vector<double> partials_;
};

// ---------------------------------------------------------------------------
// OAVT binary tensor format
//
// magic "OAVT" | u32 version (=1) | u32 dtype (0=float32, 1=float64) |
// u32 rank | u64 extents[rank] | raw little-endian element data.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "OAVT I/O assumes a little-endian host");

enum class TensorDType : std::uint32_t { f32 = 0, f64 = 1 };

inline constexpr std::uint32_t kOavtVersion = 1;

inline void save_tensor(const std::string& path, const Tensor& t,
                        TensorDType dtype = TensorDType::f64) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path);
    out.write("OAVT", 4);
    const std::uint32_t version = kOavtVersion;
    const std::uint32_t dt = static_cast<std::uint32_t>(dtype);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&dt), 4);
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (std::size_t e : t.shape) {
        const std::uint64_t ext = e;
        out.write(reinterpret_cast<const char*>(&ext), 8);
    }
    if (dtype == TensorDType::f64) {
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    } else {
        std::vector<float> buf(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "OAVT", 4) != 0) {
        throw FormatError("bad magic bytes in " + path);
    }
    std::uint32_t version = 0, dt = 0, rank = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&dt), 4);
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (!in) throw FormatError("truncated header in " + path);
    if (version != kOavtVersion) {
        throw FormatError("unknown OAVT version " + std::to_string(version) + " in " + path);
    }
    if (dt > 1) throw FormatError("unknown dtype code " + std::to_string(dt) + " in " + path);
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t ext = 0;
        in.read(reinterpret_cast<char*>(&ext), 8);
        if (!in || ext == 0) throw FormatError("bad extent in " + path);
        shape[i] = static_cast<std::size_t>(ext);
    }
    Tensor t(shape);
    if (static_cast<TensorDType>(dt) == TensorDType::f64) {
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    } else {
        std::vector<float> buf(t.numel());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<double>(buf[i]);
    }
    if (!in) throw FormatError("truncated element data in " + path);
    return t;
}

}  // namespace oav
