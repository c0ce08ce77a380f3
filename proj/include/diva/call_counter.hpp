#pragma once

#include <atomic>
#include <cstdint>

namespace diva {

// Copyable relaxed counter used to prove which code paths ran.
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& other) : n_(other.get()) {}
  CallCounter& operator=(const CallCounter& other) {
    n_.store(other.get(), std::memory_order_relaxed);
    return *this;
  }

  void bump() const { n_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }
  void reset() const { n_.store(0, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

}  // namespace diva
