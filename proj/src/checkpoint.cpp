#include "pgcn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pgcn {

namespace {

constexpr char kMagic[5] = {'P', 'G', 'C', 'N', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error(path + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64(std::ofstream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(out, bits);
}

double read_f64(std::ifstream& in, const std::string& path) {
    std::uint64_t bits = read_u64(in, path);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u64(out, params.size());
    for (const auto& [name, tensor] : params) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, static_cast<std::uint64_t>(tensor.rank()));
        for (auto e : tensor.shape()) write_u64(out, static_cast<std::uint64_t>(e));
        for (double v : tensor.data()) write_f64(out, v);
    }
    if (!out) throw std::runtime_error("write failure on checkpoint: " + path);
}

NamedParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
        throw std::runtime_error(path + ": bad checkpoint magic (expected PGCN1)");
    }
    const std::uint64_t count = read_u64(in, path);
    NamedParams params;
    params.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
            throw std::runtime_error(path + ": truncated checkpoint");
        }
        const std::uint64_t rank = read_u64(in, path);
        Shape shape;
        for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::int64_t>(read_u64(in, path)));
        std::vector<double> values(static_cast<std::size_t>(numel(shape)));
        for (auto& v : values) v = read_f64(in, path);
        params.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(values)));
    }
    return params;
}

void assign_parameters(NamedParams& target, const NamedParams& loaded) {
    std::map<std::string, Tensor> by_name;
    for (const auto& [name, t] : loaded) by_name.emplace(name, t);
    std::ostringstream diff;
    bool mismatch = false;
    for (auto& [name, t] : target) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            diff << "  missing in checkpoint: " << name << "\n";
            mismatch = true;
            continue;
        }
        if (it->second.shape() != t.shape()) {
            diff << "  shape mismatch for " << name << ": model " << shape_str(t.shape()) << " checkpoint "
                 << shape_str(it->second.shape()) << "\n";
            mismatch = true;
        }
        by_name.erase(it);
    }
    for (const auto& [name, t] : by_name) {
        (void)t;
        diff << "  unexpected in checkpoint: " << name << "\n";
        mismatch = true;
    }
    if (mismatch) throw std::runtime_error("checkpoint incompatible with model:\n" + diff.str());
    by_name.clear();
    for (const auto& [name, t] : loaded) by_name.emplace(name, t);
    for (auto& [name, t] : target) {
        t.data() = by_name.at(name).data();
    }
}

}  // namespace pgcn
