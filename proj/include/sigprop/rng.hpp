#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace sigprop {

// SplitMix64 finalizer. Used to turn structured integers (seed, run index,
// layer index, ...) into well-mixed stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// xoshiro256++ (Blackman & Vigna, public domain). Chosen over mt19937_64
// because weight generation dominates simulator runtime and this engine is
// several times cheaper per draw at equal statistical quality.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit constexpr Xoshiro256pp(std::uint64_t seed = 0) noexcept {
    s_[0] = splitmix64(seed);
    s_[1] = splitmix64(s_[0]);
    s_[2] = splitmix64(s_[1]);
    s_[3] = splitmix64(s_[2]);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~0ULL; }

  constexpr result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  constexpr bool operator==(const Xoshiro256pp&) const = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

using Rng = Xoshiro256pp;

// Derives the seed of an independent substream from a master seed and a path
// of integer ids. Every stochastic component draws from its own derived
// stream, so no global RNG state exists and runs can execute in any order.
template <class... Ids>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Ids... ids) noexcept {
  ((seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ids)))),
   ...);
  return seed;
}

// FNV-1a with a SplitMix64 finalizer; hashes config strings into stream ids.
constexpr std::uint64_t hash64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// Uniform double in (0, 1] from the top 53 bits; safe as a log argument.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
}

namespace detail {

// Strip tables for the normal ziggurat (Marsaglia & Tsang, 128 strips),
// rescaled so the fast-path magnitude carries 55 bits.
struct ZigguratTables {
  static constexpr double kR = 3.442619855899;
  static constexpr double kM = 36028797018963968.0;  // 2^55

  std::array<std::uint64_t, 128> kn;
  std::array<double, 128> wn, fn;

  ZigguratTables() noexcept {
    double dn = kR, tn = kR;
    const double vn = 9.91256303526217e-3;  // strip area for 128 strips
    const double q = vn / std::exp(-0.5 * dn * dn);
    kn[0] = static_cast<std::uint64_t>((dn / q) * kM);
    kn[1] = 0;
    wn[0] = q / kM;
    wn[127] = dn / kM;
    fn[0] = 1.0;
    fn[127] = std::exp(-0.5 * dn * dn);
    for (int i = 126; i >= 1; --i) {
      dn = std::sqrt(-2.0 * std::log(vn / dn + std::exp(-0.5 * dn * dn)));
      kn[i + 1] = static_cast<std::uint64_t>((dn / tn) * kM);
      tn = dn;
      fn[i] = std::exp(-0.5 * dn * dn);
      wn[i] = dn / kM;
    }
  }
};

inline const ZigguratTables& ziggurat_tables() {
  static const ZigguratTables tables;
  return tables;
}

// Wedge and tail handling, entered with the word that failed the fast
// accept. Kept out of line so the fast path stays branch-predictable and
// call-free.
[[gnu::noinline]] inline double ziggurat_slow(Rng& rng,
                                              const ZigguratTables& t,
                                              std::uint64_t u) {
  while (true) {
    const std::size_t iz = u & 127;
    const bool neg = (u >> 7) & 1;
    const std::uint64_t rabs = u >> 9;  // 55-bit magnitude
    const double x = static_cast<double>(rabs) * t.wn[iz];
    if (rabs < t.kn[iz]) return neg ? -x : x;
    if (iz == 0) {
      // Exact tail beyond kR via Marsaglia's method.
      double xx, yy;
      do {
        xx = -std::log(uniform_unit(rng)) / ZigguratTables::kR;
        yy = -std::log(uniform_unit(rng));
      } while (yy + yy < xx * xx);
      const double v = ZigguratTables::kR + xx;
      return neg ? -v : v;
    }
    if (t.fn[iz] + uniform_unit(rng) * (t.fn[iz - 1] - t.fn[iz]) <
        std::exp(-0.5 * x * x))
      return neg ? -x : x;
    u = rng();
  }
}

inline double standard_normal_impl(Rng& rng, const ZigguratTables& t) {
  const std::uint64_t u = rng();
  const std::size_t iz = u & 127;
  const std::uint64_t rabs = u >> 9;
  if (rabs < t.kn[iz]) {
    // Branchless sign injection: the magnitude is non-negative, so setting
    // the sign bit from bit 7 avoids an unpredictable 50/50 branch.
    const double mag = static_cast<double>(rabs) * t.wn[iz];
    const std::uint64_t sign = (u & 128) << 56;
    return std::bit_cast<double>(std::bit_cast<std::uint64_t>(mag) | sign);
  }
  return ziggurat_slow(rng, t, u);
}

}  // namespace detail

// One standard-normal draw. Exact (rejection-based) to double rounding.
inline double standard_normal(Rng& rng) {
  return detail::standard_normal_impl(rng, detail::ziggurat_tables());
}

}  // namespace sigprop
