#include "morphlm/nn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace morphlm::nn {
namespace {

constexpr char kMagic[8] = {'M', 'L', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class Writer {
public:
    template <class T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    const std::vector<char>& bytes() const { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    std::string get_string(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    const char* at(std::size_t offset, std::size_t n) const {
        if (offset + n > data_.size()) {
            throw std::runtime_error("checkpoint: payload truncated");
        }
        return data_.data() + offset;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw std::runtime_error("checkpoint: header truncated");
        }
    }

    std::vector<char> data_;
    std::size_t pos_ = 0;
};

struct Entry {
    std::string name;
    DType dtype;
    std::vector<std::size_t> shape;
    std::uint64_t offset;
    std::uint64_t length;
};

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    }
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

ParameterStore parse(const std::filesystem::path& path) {
    Reader r(read_file(path));
    if (r.get_string(8) != std::string(kMagic, 8)) {
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    }
    if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
    }
    const auto count = r.get<std::uint32_t>();
    std::vector<Entry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.name = r.get_string(r.get<std::uint32_t>());
        e.dtype = static_cast<DType>(r.get<std::uint8_t>());
        if (e.dtype != DType::float64 && e.dtype != DType::float32) {
            throw std::runtime_error("checkpoint: unknown dtype for " + e.name);
        }
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) {
            e.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        }
        e.offset = r.get<std::uint64_t>();
        e.length = r.get<std::uint64_t>();
        entries.push_back(std::move(e));
    }
    const std::size_t payload = r.pos();
    ParameterStore store;
    for (const Entry& e : entries) {
        Tensor t(e.shape);
        const std::size_t width = e.dtype == DType::float64 ? 8 : 4;
        if (e.length != t.size() * width) {
            throw std::runtime_error("checkpoint: length mismatch for " + e.name);
        }
        const char* src = r.at(payload + e.offset, e.length);
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (e.dtype == DType::float64) {
                std::uint64_t bits;
                std::memcpy(&bits, src + i * 8, 8);
                t[i] = std::bit_cast<double>(to_little(bits));
            } else {
                std::uint32_t bits;
                std::memcpy(&bits, src + i * 4, 4);
                t[i] = static_cast<double>(std::bit_cast<float>(to_little(bits)));
            }
        }
        store.add(e.name, std::move(t));
    }
    return store;
}

}  // namespace

void save_parameters(const std::filesystem::path& path, const ParameterStore& params, DType dtype) {
    Writer header;
    header.put_bytes(kMagic, sizeof(kMagic));
    header.put<std::uint32_t>(kVersion);
    header.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    Writer payload;
    for (const Parameter& p : params) {
        const std::uint64_t offset = payload.bytes().size();
        for (double v : p.value.values()) {
            if (dtype == DType::float64) {
                payload.put<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
            } else {
                payload.put<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            }
        }
        header.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        header.put_bytes(p.name.data(), p.name.size());
        header.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
        header.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) {
            header.put<std::uint64_t>(d);
        }
        header.put<std::uint64_t>(offset);
        header.put<std::uint64_t>(payload.bytes().size() - offset);
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        }
        out.write(header.bytes().data(), static_cast<std::streamsize>(header.bytes().size()));
        out.write(payload.bytes().data(), static_cast<std::streamsize>(payload.bytes().size()));
        if (!out) {
            throw std::runtime_error("checkpoint: write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

ParameterStore load_parameters(const std::filesystem::path& path) { return parse(path); }

void load_parameters_into(const std::filesystem::path& path, ParameterStore& params) {
    ParameterStore loaded = parse(path);
    if (loaded.size() != params.size()) {
        throw std::runtime_error("checkpoint: " + path.string() + " has " +
                                 std::to_string(loaded.size()) + " tensors, model expects " +
                                 std::to_string(params.size()));
    }
    for (Parameter& p : params) {
        const Parameter& src = loaded.get(p.name);
        if (src.value.shape() != p.value.shape()) {
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " +
                                     src.value.shape_string() + " vs " + p.value.shape_string());
        }
        p.value = src.value;
    }
}

}  // namespace morphlm::nn
