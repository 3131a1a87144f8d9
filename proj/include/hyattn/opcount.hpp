#pragma once

#include <cstdint>

// Scalar-operation instrumentation. Kernels report bulk counts after each
// stage; when no counter is installed the hooks are a null-pointer test.
namespace hyattn::opcount {

struct Counts {
    std::uint64_t mul = 0;
    std::uint64_t add = 0;
    std::uint64_t exp = 0;
    std::uint64_t div = 0;
    std::uint64_t cmp = 0;

    std::uint64_t flops() const { return mul + add + exp + div + cmp; }
};

Counts*& active();

// Installs a counter for the current thread for the lifetime of the scope.
class Scope {
  public:
    explicit Scope(Counts& counts) : prev_(active()) { active() = &counts; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

  private:
    Counts* prev_;
};

inline void madd(std::uint64_t n) {
    if (Counts* c = active()) {
        c->mul += n;
        c->add += n;
    }
}
inline void mul(std::uint64_t n) {
    if (Counts* c = active()) c->mul += n;
}
inline void add(std::uint64_t n) {
    if (Counts* c = active()) c->add += n;
}
inline void expo(std::uint64_t n) {
    if (Counts* c = active()) c->exp += n;
}
inline void div(std::uint64_t n) {
    if (Counts* c = active()) c->div += n;
}
inline void cmp(std::uint64_t n) {
    if (Counts* c = active()) c->cmp += n;
}

} // namespace hyattn::opcount
