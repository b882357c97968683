#pragma once
// Shared primitives: error categories, seeded generator streams, sparse
// vectors over parameter space, hex-float and digest helpers.

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace prefopt {

// Error categories double as CLI exit codes.
enum class ErrorKind : int {
    usage = 2,
    config = 3,
    data = 4,
    numeric = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// ----------------------------------------------------------------- seeding

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Stage-name keyed split: inserting a new stage never perturbs the others.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage) noexcept;

// Index keyed split for per-sample / per-epoch streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

double uniform01(Rng& rng);

// ----------------------------------------------------------------- sparse

// Sorted, duplicate-free (index, value) list.
class SparseVec {
public:
    SparseVec() = default;

    static SparseVec from_dense(const std::vector<double>& dense);
    // Sums duplicates and sorts.
    static SparseVec from_entries(std::vector<std::pair<std::size_t, double>> entries);

    const std::vector<std::pair<std::size_t, double>>& entries() const noexcept { return entries_; }
    std::size_t nnz() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    double at(std::size_t index) const;
    double dot(const SparseVec& other) const;
    double norm() const;
    void add_to(std::vector<double>& dense, double scale = 1.0) const;
    std::vector<double> to_dense(std::size_t size) const;

private:
    std::vector<std::pair<std::size_t, double>> entries_;
};

// ----------------------------------------------------------------- formats

std::string hex_double(double v);
double parse_double(std::string_view text);  // accepts hex-float and decimal, "inf"
std::string decimal17(double v);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t v);
std::string file_digest(const std::string& path);

double sigmoid(double t) noexcept;
double log_sigmoid(double t) noexcept;

}  // namespace prefopt
