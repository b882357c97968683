#include "prefopt/core.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

namespace prefopt {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stage) noexcept {
    return splitmix64(base ^ fnv1a64(stage));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xd1342543de82ef95ULL + 1));
}

double uniform01(Rng& rng) {
    // 53 random mantissa bits, [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

SparseVec SparseVec::from_dense(const std::vector<double>& dense) {
    SparseVec out;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i] != 0.0) {
            out.entries_.emplace_back(i, dense[i]);
        }
    }
    return out;
}

SparseVec SparseVec::from_entries(std::vector<std::pair<std::size_t, double>> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseVec out;
    for (const auto& [i, v] : entries) {
        if (!out.entries_.empty() && out.entries_.back().first == i) {
            out.entries_.back().second += v;
        } else {
            out.entries_.emplace_back(i, v);
        }
    }
    return out;
}

double SparseVec::at(std::size_t index) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                               [](const auto& e, std::size_t i) { return e.first < i; });
    return (it != entries_.end() && it->first == index) ? it->second : 0.0;
}

double SparseVec::dot(const SparseVec& other) const {
    double s = 0.0;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    while (a != entries_.end() && b != other.entries_.end()) {
        if (a->first < b->first) {
            ++a;
        } else if (b->first < a->first) {
            ++b;
        } else {
            s += a->second * b->second;
            ++a;
            ++b;
        }
    }
    return s;
}

double SparseVec::norm() const { return std::sqrt(dot(*this)); }

void SparseVec::add_to(std::vector<double>& dense, double scale) const {
    for (const auto& [i, v] : entries_) {
        dense[i] += scale * v;
    }
}

std::vector<double> SparseVec::to_dense(std::size_t size) const {
    std::vector<double> out(size, 0.0);
    add_to(out);
    return out;
}

std::string hex_double(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_double(std::string_view text) {
    std::string s(text);
    if (s.empty()) {
        fail(ErrorKind::data, "empty numeric field");
    }
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) {
        fail(ErrorKind::data, "malformed number '" + s + "'");
    }
    return v;
}

std::string decimal17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::data, "cannot open " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64(bytes));
}

double sigmoid(double t) noexcept {
    if (t >= 0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double log_sigmoid(double t) noexcept {
    // log σ(t) = -log(1 + e^{-t}), stable on both tails
    if (t >= 0) {
        return -std::log1p(std::exp(-t));
    }
    return t - std::log1p(std::exp(t));
}

}  // namespace prefopt
