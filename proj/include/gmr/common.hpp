#ifndef GMR_COMMON_HPP
#define GMR_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gmr {

// Library-wide error type. Contract violations, parse errors and invariant
// failures all throw this; the CLI maps it to a nonzero exit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// SplitMix64. Used to derive independent seed streams (per replication, per
// subject) so parallel or reordered execution cannot change results.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream r of master seed s.
inline std::uint64_t seed_stream(std::uint64_t s, std::uint64_t r) {
  return splitmix64(splitmix64(s) ^ splitmix64(r * 0xd1342543de82ef95ULL + 1));
}

// Mixed-radix index over digit vector d with radices r: sum d[i] * prod(r[j<i]).
inline long mixed_radix_index(const std::vector<int>& digits,
                              const std::vector<int>& radices) {
  long idx = 0;
  long mult = 1;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    idx += digits[i] * mult;
    mult *= radices[i];
  }
  return idx;
}

}  // namespace gmr

#endif
