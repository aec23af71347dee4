#include "marl/common.hpp"

#include <cstdio>
#include <cstring>

namespace marl {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t mix(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t derive_seed(uint64_t master, const std::string& label) {
  return mix(master ^ fnv1a(label));
}

uint64_t derive_seed(uint64_t master, uint64_t index) {
  return mix(master ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

std::string format_double(double v) {
  // Shortest representation that round-trips exactly. Low %g precisions
  // can be longer than higher ones ("1e+01" vs "10"), so scan them all.
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string best = buf;
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(shorter, "%lf", &back);
    if (back == v && std::strlen(shorter) < best.size()) best = shorter;
  }
  return best;
}

}  // namespace marl
