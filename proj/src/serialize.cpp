#include "attnd/serialize.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "attnd/errors.hpp"

namespace attnd {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'T', 'D'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

void put_f64(std::vector<uint8_t>& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

class Reader {
public:
    Reader(const std::vector<uint8_t>& bytes, std::string path)
        : bytes_(bytes), path_(std::move(path)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = static_cast<uint32_t>(bytes_[pos_]) | static_cast<uint32_t>(bytes_[pos_ + 1]) << 8 |
                     static_cast<uint32_t>(bytes_[pos_ + 2]) << 16 |
                     static_cast<uint32_t>(bytes_[pos_ + 3]) << 24;
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }

    std::string str(size_t len) {
        need(len);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
        pos_ += len;
        return s;
    }

    void expect_magic() {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, kMagic, 4) != 0) {
            throw FormatError(path_ + ": bad magic bytes, not a tensor container");
        }
        pos_ += 4;
    }

    bool done() const { return pos_ == bytes_.size(); }
    size_t pos() const { return pos_; }

private:
    void need(size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError(path_ + ": truncated payload at offset " + std::to_string(pos_));
        }
    }

    const std::vector<uint8_t>& bytes_;
    std::string path_;
    size_t pos_ = 0;
};

}  // namespace

void save_container(const TensorContainer& c, const std::string& path) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, TensorContainer::kVersion);
    const std::string meta = c.meta.dump();
    put_u32(out, static_cast<uint32_t>(meta.size()));
    out.insert(out.end(), meta.begin(), meta.end());
    put_u32(out, static_cast<uint32_t>(c.tensors.size()));
    for (const auto& [name, tensor] : c.tensors) {  // std::map iterates sorted
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(tensor.rank()));
        for (size_t d : tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
        for (double v : tensor.data()) put_f64(out, v);
    }
    write_file_bytes(path, out.data(), out.size());
}

TensorContainer load_container(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    Reader r(bytes, path);
    r.expect_magic();
    const uint32_t version = r.u32();
    if (version != TensorContainer::kVersion) {
        throw FormatError(path + ": container version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(TensorContainer::kVersion) + ")");
    }
    TensorContainer c;
    const uint32_t meta_len = r.u32();
    const std::string meta = r.str(meta_len);
    try {
        c.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": container meta is not valid JSON: " + e.what());
    }
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        const uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw FormatError(path + ": tensor '" + name + "' has bad rank");
        std::vector<size_t> shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = r.u32();
            numel *= shape[d];
        }
        std::vector<double> data(numel);
        for (size_t k = 0; k < numel; ++k) data[k] = r.f64();
        c.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (!r.done()) {
        throw FormatError(path + ": trailing bytes after tensor directory (offset " +
                          std::to_string(r.pos()) + ")");
    }
    return c;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path + " for reading");
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("failed reading " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("failed writing " + path);
}

std::string read_file_text(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_file_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, text.data(), text.size());
}

uint32_t crc32_of(const void* data, size_t size) {
    return static_cast<uint32_t>(
        ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(size)));
}

uint32_t crc32_of_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return crc32_of(bytes.data(), bytes.size());
}

}  // namespace attnd
