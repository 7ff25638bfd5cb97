#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace jshead {

// ---------------------------------------------------------------------------
// Errors. exit_code() matches the CLI contract: 1 usage, 2 data/format.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const noexcept { return 2; }
};

class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

#define JSHEAD_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                                \
    public:                                                                    \
        using Error::Error;                                                    \
    };

JSHEAD_DEFINE_ERROR(IoError)          // missing/unreadable file
JSHEAD_DEFINE_ERROR(FormatError)      // bad magic, version, dtype
JSHEAD_DEFINE_ERROR(LengthError)      // truncated or oversized payload
JSHEAD_DEFINE_ERROR(EmptyError)       // zero-sized matrix or grid
JSHEAD_DEFINE_ERROR(DataError)        // non-finite or inconsistent values
JSHEAD_DEFINE_ERROR(ShapeError)       // dimension mismatch between inputs
JSHEAD_DEFINE_ERROR(DegenerateError)  // zero-norm row / class embedding
JSHEAD_DEFINE_ERROR(ConflictError)    // duplicate label
JSHEAD_DEFINE_ERROR(NotFoundError)    // unknown label
JSHEAD_DEFINE_ERROR(CapacityError)    // rejection sampling exhausted
JSHEAD_DEFINE_ERROR(CorruptionError)  // CRC mismatch
JSHEAD_DEFINE_ERROR(TrainingError)    // loss diverged
JSHEAD_DEFINE_ERROR(ResourceError)    // thread spawn failure

#undef JSHEAD_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is bit-stable by the standard; the value
// mappings below are spelled out so the stream never depends on libstdc++
// distribution internals (golden fixtures are regenerated from seeds).
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; exactly two uniforms per pair
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        const double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Little-endian byte buffers for the DSEM/DSAD/DSPK/DSFM containers.
// ---------------------------------------------------------------------------

struct ByteWriter {
    std::string buf;

    void u8(std::uint8_t v) { buf.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void raw(const void* p, std::size_t n) {
        buf.append(static_cast<const char*>(p), n);
    }

    void magic(const char tag[5]) { buf.append(tag, 4); }
};

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& b) : buf(b) {}

    void require(std::size_t n) const {
        if (pos + n > buf.size())
            throw LengthError("truncated payload: need " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos) + ", have " +
                              std::to_string(buf.size() - pos));
    }

    std::uint8_t u8() {
        require(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }

    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(std::size_t n) {
        require(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }

    std::size_t remaining() const { return buf.size() - pos; }

    void expect_magic(const char tag[5], const std::string& what) {
        require(4);
        if (buf.compare(pos, 4, tag, 4) != 0)
            throw FormatError("bad magic in " + what + ": expected '" + tag + "'");
        pos += 4;
    }
};

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

// CRC32 (IEEE, zlib-compatible) of a byte string.
std::uint32_t crc32_of(const std::string& bytes);

}  // namespace jshead
