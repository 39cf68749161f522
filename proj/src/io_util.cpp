#include "ifan/io_util.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "ifan/rng.hpp"

namespace fs = std::filesystem;

namespace ifan {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

uint32_t get_u32(const std::string& s, size_t& off) {
    if (off + 4 > s.size()) throw std::runtime_error("truncated stream");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    off += 4;
    return v;
}

uint64_t get_u64(const std::string& s, size_t& off) {
    if (off + 8 > s.size()) throw std::runtime_error("truncated stream");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    off += 8;
    return v;
}

float get_f32(const std::string& s, size_t& off) {
    uint32_t bits = get_u32(s, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return s;
}

bool file_exists(const std::string& path) { return fs::exists(path); }

void ensure_dir(const std::string& path) { fs::create_directories(path); }

bool dir_nonempty(const std::string& path) {
    if (!fs::exists(path)) return false;
    return fs::is_directory(path) && !fs::is_empty(path);
}

std::string bytes_digest_hex(const std::string& bytes) {
    uint64_t h = fnv1a64(bytes.data(), bytes.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_digest_hex(const std::string& path) { return bytes_digest_hex(read_file(path)); }

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace ifan
