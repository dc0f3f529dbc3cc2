#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace lvq {

namespace fs = std::filesystem;

// Error classes surfaced by the CLI as "<ClassName>: <message>" on a single line.
#define LVQ_DEFINE_ERROR(NAME)                                        \
  struct NAME : std::runtime_error {                                  \
    explicit NAME(const std::string& msg)                             \
        : std::runtime_error(std::string(#NAME) + ": " + msg) {}      \
  }

LVQ_DEFINE_ERROR(GeometryOverflow);
LVQ_DEFINE_ERROR(DatasetWriteError);
LVQ_DEFINE_ERROR(DegenerateMask);
LVQ_DEFINE_ERROR(AmbiguousPhase);
LVQ_DEFINE_ERROR(DegenerateScaler);
LVQ_DEFINE_ERROR(ShapeMismatch);
LVQ_DEFINE_ERROR(UnsupportedLayer);
LVQ_DEFINE_ERROR(ChannelUnderflow);
LVQ_DEFINE_ERROR(InsufficientPatients);
LVQ_DEFINE_ERROR(NonFiniteLoss);
LVQ_DEFINE_ERROR(CandidateOverflow);
LVQ_DEFINE_ERROR(MissingCheckpoint);
LVQ_DEFINE_ERROR(TooFewPairs);
LVQ_DEFINE_ERROR(PccUndefined);
LVQ_DEFINE_ERROR(EmptySlice);
LVQ_DEFINE_ERROR(BadInput);

#undef LVQ_DEFINE_ERROR

void warn(const std::string& msg);

// FNV-1a, used for config hashes and manifest input hashes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(const std::string& s);
std::uint64_t hash_file(const fs::path& p);
std::string hex64(std::uint64_t h);

// Shortest exact decimal for a double; used everywhere a float goes into text
// so reruns are byte-identical.
std::string fmt_double(double v);

std::string read_text_file(const fs::path& p);
void write_text_file(const fs::path& p, const std::string& content);
std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

}  // namespace lvq
