#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "octflow/errors.hpp"

namespace octflow {

// Non-owning ordered view of the model's parameter arrays. Order is the
// model's construction order and is what the weight file format preserves.
template <typename T>
struct ParamRef {
    std::string name;
    std::vector<int> dims;
    T* data = nullptr;
    std::size_t count = 0;
};

template <typename T>
class ParamStore {
public:
    void add(std::string name, std::vector<int> dims, T* data, std::size_t count) {
        std::size_t n = 1;
        for (int d : dims) {
            if (d <= 0) throw ShapeError("parameter '" + name + "' has non-positive dim");
            n *= static_cast<std::size_t>(d);
        }
        if (n != count) {
            throw ShapeError("parameter '" + name + "' dims product " + std::to_string(n) +
                             " != count " + std::to_string(count));
        }
        entries_.push_back(ParamRef<T>{std::move(name), std::move(dims), data, count});
        total_ += count;
    }

    std::size_t size() const { return entries_.size(); }
    const ParamRef<T>& operator[](std::size_t i) const { return entries_[i]; }
    std::size_t total_count() const { return total_; }

    std::vector<T*> pointers() const {
        std::vector<T*> p;
        p.reserve(entries_.size());
        for (const auto& e : entries_) p.push_back(e.data);
        return p;
    }
    std::vector<std::size_t> counts() const {
        std::vector<std::size_t> c;
        c.reserve(entries_.size());
        for (const auto& e : entries_) c.push_back(e.count);
        return c;
    }

    // Detached copy of all values, ordered like the store.
    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.emplace_back(e.data, e.data + e.count);
        return out;
    }
    void restore(const std::vector<std::vector<T>>& vals) {
        if (vals.size() != entries_.size()) throw ShapeError("restore: array count mismatch");
        for (std::size_t i = 0; i < vals.size(); ++i) {
            if (vals[i].size() != entries_[i].count) {
                throw ShapeError("restore: '" + entries_[i].name + "' count mismatch");
            }
            std::memcpy(entries_[i].data, vals[i].data(), vals[i].size() * sizeof(T));
        }
    }

private:
    std::vector<ParamRef<T>> entries_;
    std::size_t total_ = 0;
};

namespace detail {

inline void write_f32_le(std::ostream& os, const float* src, std::size_t n) {
    static_assert(sizeof(float) == 4);
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u;
            std::memcpy(&u, &src[i], 4);
            char b[4] = {char(u & 0xff), char((u >> 8) & 0xff), char((u >> 16) & 0xff), char(u >> 24)};
            os.write(b, 4);
        }
    }
}

inline void read_f32_le(std::istream& is, float* dst, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char b[4];
            is.read(reinterpret_cast<char*>(b), 4);
            std::uint32_t u = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                              (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
            std::memcpy(&dst[i], &u, 4);
        }
    }
}

} // namespace detail

// Weight file: a text manifest naming every array with its dims and byte
// offset, a blank line, then one contiguous little-endian f32 payload.
//
//   octflow-weights 1
//   arrays <K>
//   total <N>
//   <name> dims <d0> <d1> ... offset <bytes>
//   ...
//   payload <bytes>
//   <blank line><raw f32 data>
inline void save_weights(const std::string& path, const ParamStore<float>& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");

    std::ostringstream man;
    man << "octflow-weights 1\n";
    man << "arrays " << store.size() << "\n";
    man << "total " << store.total_count() << "\n";
    std::size_t off = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store[i];
        man << e.name << " dims";
        for (int d : e.dims) man << ' ' << d;
        man << " offset " << off << "\n";
        off += e.count * 4;
    }
    man << "payload " << off << "\n\n";
    os << man.str();
    for (std::size_t i = 0; i < store.size(); ++i) {
        detail::write_f32_le(os, store[i].data, store[i].count);
    }
    if (!os) throw IoError("short write to '" + path + "'");
}

// Loads weights into an existing store. Names, order, dims and totals must
// all match the store exactly; values are overwritten in place.
inline void load_weights(const std::string& path, ParamStore<float>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");

    auto fail = [&](const std::string& why) -> void {
        throw IoError("'" + path + "': " + why);
    };
    std::string line;
    if (!std::getline(is, line) || line != "octflow-weights 1") fail("bad magic line");
    std::size_t arrays = 0, total = 0;
    {
        if (!std::getline(is, line)) fail("truncated manifest");
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key >> arrays) || key != "arrays") fail("bad arrays line");
        if (!std::getline(is, line)) fail("truncated manifest");
        std::istringstream ls2(line);
        if (!(ls2 >> key >> total) || key != "total") fail("bad total line");
    }
    if (arrays != store.size()) fail("array count " + std::to_string(arrays) +
                                     " != expected " + std::to_string(store.size()));
    if (total != store.total_count()) fail("total " + std::to_string(total) +
                                           " != expected " + std::to_string(store.total_count()));

    std::size_t expect_off = 0;
    for (std::size_t i = 0; i < arrays; ++i) {
        if (!std::getline(is, line)) fail("truncated manifest");
        std::istringstream ls(line);
        std::string name, kw;
        if (!(ls >> name >> kw) || kw != "dims") fail("bad array line " + std::to_string(i));
        const auto& e = store[i];
        if (name != e.name) fail("array " + std::to_string(i) + " is '" + name +
                                 "', expected '" + e.name + "'");
        std::vector<long long> toks;
        long long v;
        std::string tail;
        while (ls >> tail) {
            if (tail == "offset") break;
            try { v = std::stoll(tail); } catch (...) { fail("bad dim token '" + tail + "'"); }
            toks.push_back(v);
        }
        if (tail != "offset") fail("missing offset on array line " + std::to_string(i));
        unsigned long long off = 0;
        if (!(ls >> off)) fail("bad offset on array line " + std::to_string(i));
        if (toks.size() != e.dims.size()) fail("'" + name + "' rank mismatch");
        for (std::size_t d = 0; d < toks.size(); ++d) {
            if (toks[d] != e.dims[d]) fail("'" + name + "' dim " + std::to_string(d) + " mismatch");
        }
        if (off != expect_off) fail("'" + name + "' offset " + std::to_string(off) +
                                    " != expected " + std::to_string(expect_off));
        expect_off += e.count * 4;
    }
    {
        if (!std::getline(is, line)) fail("truncated manifest");
        std::istringstream ls(line);
        std::string key;
        unsigned long long payload = 0;
        if (!(ls >> key >> payload) || key != "payload") fail("bad payload line");
        if (payload != expect_off) fail("payload size mismatch");
        if (!std::getline(is, line) || !line.empty()) fail("missing blank separator");
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        detail::read_f32_le(is, store[i].data, store[i].count);
        if (!is) fail("truncated payload at array '" + store[i].name + "'");
    }
    char extra;
    if (is.read(&extra, 1)) fail("trailing bytes after payload");
}

} // namespace octflow
