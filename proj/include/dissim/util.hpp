#ifndef DISSIM_UTIL_HPP_
#define DISSIM_UTIL_HPP_

#include <cstdint>
#include <cstdio>
#include <random>
#include <string>

namespace dissim {

/* shortest-round-trip-ish formatting; 17 significant digits round-trip
 * IEEE doubles exactly, which the trace/report formats rely on */
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/* deterministic per-item generator: identical streams no matter how work
 * is partitioned across threads */
inline std::mt19937_64 rng_for(uint64_t seed, uint64_t index) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(index)));
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(g);
}

}  // namespace dissim

#endif  // DISSIM_UTIL_HPP_
