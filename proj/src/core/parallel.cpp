#include "core/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace vsod {

namespace {

std::atomic<int> g_threads{1};

// Lazily started worker pool. Workers take whole chunks, so each index is
// processed by exactly one worker and chunk interiors run in serial order.
class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void run(std::size_t n, int workers,
             const std::function<void(std::size_t, std::size_t)>& fn) {
        ensure_workers(workers - 1);
        std::size_t chunks = std::min<std::size_t>(std::size_t(workers), n);
        std::size_t per = (n + chunks - 1) / chunks;
        std::size_t actual = (n + per - 1) / per;

        {
            std::unique_lock lock(mu_);
            job_fn_ = &fn;
            job_n_ = n;
            job_per_ = per;
            next_chunk_.store(0, std::memory_order_relaxed);
            pending_ = actual;
            generation_++;
        }
        cv_.notify_all();
        work();  // calling thread participates
        std::unique_lock lock(mu_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

    ~Pool() {
        {
            std::unique_lock lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
    }

private:
    void ensure_workers(int n) {
        std::unique_lock lock(mu_);
        while (int(threads_.size()) < n) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            work();
        }
    }

    void work() {
        while (true) {
            const auto* fn = job_fn_;
            if (!fn) break;
            std::size_t i = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            std::size_t begin = i * job_per_;
            if (begin >= job_n_) break;
            std::size_t end = std::min(job_n_, begin + job_per_);
            (*fn)(begin, end);
            std::unique_lock lock(mu_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::jthread> threads_;
    const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0, job_per_ = 0;
    std::atomic<std::size_t> next_chunk_{0};
    std::size_t pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

} // namespace

void set_thread_count(int n) { g_threads.store(n < 1 ? 1 : n); }

int thread_count() { return g_threads.load(); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& chunk_fn) {
    if (n == 0) return;
    int workers = thread_count();
    if (workers <= 1 || n == 1) {
        chunk_fn(0, n);
        return;
    }
    Pool::instance().run(n, workers, chunk_fn);
}

} // namespace vsod
