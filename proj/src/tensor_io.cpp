#include "lowlight/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "lowlight/errors.hpp"

namespace lowlight {

namespace {

constexpr char kMagic[4] = {'L', 'L', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ParseError("tensor file truncated");
    return v;
}

}  // namespace

const Tensor* TensorFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_tensor_file(const std::string& path, const TensorFile& tf) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IngestionError("cannot open for write: " + path);
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kVersion);
    const std::string& meta = tf.meta_json.empty() ? std::string("{}") : tf.meta_json;
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(tf.tensors.size()));
    for (const auto& [name, t] : tf.tensors) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(t.v.data()),
                 static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
    if (!os) throw IngestionError("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IngestionError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not an LLTC tensor file: " + path);
    const auto version = get<std::uint32_t>(is);
    if (version != kVersion)
        throw ParseError("unsupported LLTC version " + std::to_string(version));
    const auto meta_len = get<std::uint64_t>(is);
    TensorFile tf;
    tf.meta_json.resize(meta_len);
    is.read(tf.meta_json.data(), static_cast<std::streamsize>(meta_len));
    const auto n_tensors = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const auto name_len = get<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = get<std::uint32_t>(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(get<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!is) throw ParseError("tensor file truncated: " + path);
        tf.tensors.emplace_back(std::move(name), std::move(t));
    }
    return tf;
}

}  // namespace lowlight
