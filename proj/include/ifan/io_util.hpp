#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ifan {

// little-endian scalar encoding (checkpoint and dataset files are
// byte-defined, not host-defined)
void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);
uint32_t get_u32(const std::string& s, size_t& off);
uint64_t get_u64(const std::string& s, size_t& off);
float get_f32(const std::string& s, size_t& off);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);
bool dir_nonempty(const std::string& path);

std::string file_digest_hex(const std::string& path);
std::string bytes_digest_hex(const std::string& bytes);

// fixed-format float for deterministic text output
std::string fmt_double(double v);

} // namespace ifan
