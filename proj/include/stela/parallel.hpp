#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace stela {

// Runs fn(begin, end) over contiguous chunks of [0, n). With threads <= 1 the
// call happens inline on the calling thread. Chunks are disjoint, so writers
// to per-row outputs need no locking, and chunk boundaries depend only on
// (n, threads), keeping row-parallel results identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  if (threads <= 1 || n == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    std::size_t begin = t * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& th : pool) th.join();
}

// Same chunking as parallel_for, but each chunk gets its own accumulator of
// type Acc (default-constructed via make()); merge(acc) is then called on the
// calling thread in ascending chunk order. Reduction order is fixed, so a run
// with T threads is reproducible for that same T.
template <class Acc, class Make, class Fn, class Merge>
void parallel_reduce(std::size_t n, int threads, Make&& make, Fn&& fn, Merge&& merge) {
  if (n == 0) return;
  if (threads <= 1 || n == 1) {
    Acc acc = make();
    fn(std::size_t{0}, n, acc);
    merge(acc);
    return;
  }
  std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::size_t chunk = (n + nt - 1) / nt;
  std::vector<Acc> partials;
  partials.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) partials.push_back(make());
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    std::size_t begin = t * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, &partials, t, begin, end] { fn(begin, end, partials[t]); });
  }
  for (auto& th : pool) th.join();
  for (auto& acc : partials) merge(acc);
}

}  // namespace stela
