#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qbc/errors.hpp"
#include "qbc/io.hpp"

namespace qbc::io {
namespace {

constexpr uint32_t kTensorMagic = 0x31544251u; // "QBT1" little-endian
constexpr uint32_t kDtypeF32 = 0;

template <typename T>
void put(std::string& out, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    out.append(raw, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos, const std::string& path) {
    if (pos + sizeof(T) > in.size()) throw IoError("truncated tensor file: " + path);
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void atomic_write(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory: " + path + ": " + ec.message());
}

void save_tensor(const Tensor& t, const std::string& path) {
    std::string out;
    out.reserve(t.data.size() * sizeof(float) + 64);
    put<uint32_t>(out, kTensorMagic);
    put<uint32_t>(out, kDtypeF32);
    put<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) put<int64_t>(out, e);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    atomic_write(path, out);
}

Tensor load_tensor(const std::string& path) {
    const std::string in = read_file(path);
    size_t pos = 0;
    if (take<uint32_t>(in, pos, path) != kTensorMagic)
        throw IoError("not a tensor file: " + path);
    if (take<uint32_t>(in, pos, path) != kDtypeF32)
        throw IoError("unsupported tensor dtype: " + path);
    const uint32_t rank = take<uint32_t>(in, pos, path);
    if (rank > 8) throw IoError("implausible tensor rank: " + path);
    Tensor t;
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const int64_t e = take<int64_t>(in, pos, path);
        if (e < 0) throw IoError("negative extent in tensor file: " + path);
        t.shape.push_back(e);
        numel *= e;
    }
    if (pos + static_cast<size_t>(numel) * sizeof(float) != in.size())
        throw IoError("tensor payload size mismatch: " + path);
    t.data.resize(static_cast<size_t>(numel));
    std::memcpy(t.data.data(), in.data() + pos, t.data.size() * sizeof(float));
    return t;
}

void save_labels(const std::vector<int64_t>& labels, const std::string& path) {
    std::string out;
    for (int64_t v : labels) {
        out += std::to_string(v);
        out += '\n';
    }
    atomic_write(path, out);
}

std::vector<int64_t> load_labels(const std::string& path) {
    const std::string in = read_file(path);
    std::vector<int64_t> labels;
    std::istringstream ss(in);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        try {
            labels.push_back(std::stoll(line));
        } catch (const std::exception&) {
            throw IoError("bad label line '" + line + "' in " + path);
        }
    }
    return labels;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    const std::string in = read_file(path);
    std::vector<std::vector<std::string>> rows;
    std::istringstream ss(in);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t pos = 0;
        while (true) {
            const size_t comma = line.find(',', pos);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(pos));
                break;
            }
            fields.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

} // namespace qbc::io
