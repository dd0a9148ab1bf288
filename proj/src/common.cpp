#include "dynsurf/common.hpp"

#include <atomic>
#include <cstdlib>

namespace dynsurf {

namespace {
std::atomic<int> g_workers{0};

int detect_workers() {
    if (const char* env = std::getenv("DYNSURF_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}
}  // namespace

int worker_count() {
    int n = g_workers.load(std::memory_order_relaxed);
    if (n == 0) {
        n = detect_workers();
        g_workers.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_worker_count(int n) { g_workers.store(n > 0 ? n : 1, std::memory_order_relaxed); }

void parallel_chunks(std::int64_t n, const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = std::min<std::int64_t>(worker_count(), n);
    if (workers <= 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const std::int64_t begin = n * w / workers;
        const std::int64_t end = n * (w + 1) / workers;
        threads.emplace_back([&, w, begin, end] { fn(w, begin, end); });
    }
    for (auto& t : threads) t.join();
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    parallel_chunks(n, [&](int, std::int64_t b, std::int64_t e) {
        for (std::int64_t i = b; i < e; ++i) fn(i);
    });
}

}  // namespace dynsurf
