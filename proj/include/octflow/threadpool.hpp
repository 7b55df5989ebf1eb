#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace octflow {

// Chunked fork-join pool. Work is claimed by chunk index from a per-call job
// descriptor, so results are identical for any worker count (including 1) and
// a worker that wakes late can only see an already-exhausted descriptor.
class ThreadPool {
    struct Job {
        const std::function<void(std::size_t)>* fn = nullptr;
        std::size_t total = 0;
        std::atomic<std::size_t> next{0};
        std::atomic<std::size_t> pending{0};
    };

public:
    explicit ThreadPool(std::size_t workers) {
        extra_ = workers > 1 ? workers - 1 : 0;
        for (std::size_t i = 0; i < extra_; ++i) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    std::size_t size() const { return extra_ + 1; }

    // Runs fn(chunk) for chunk in [0, chunks); returns when all chunks are done.
    // fn must only write chunk-owned data.
    void run_chunks(std::size_t chunks, const std::function<void(std::size_t)>& fn) {
        if (chunks == 0) return;
        if (extra_ == 0 || chunks == 1) {
            for (std::size_t c = 0; c < chunks; ++c) fn(c);
            return;
        }
        auto job = std::make_shared<Job>();
        job->fn = &fn;
        job->total = chunks;
        job->pending.store(chunks, std::memory_order_relaxed);
        {
            std::lock_guard<std::mutex> lk(mutex_);
            current_ = job;
            ++generation_;
        }
        cv_.notify_all();
        drain(*job);
        std::unique_lock<std::mutex> lk(mutex_);
        done_cv_.wait(lk, [&] { return job->pending.load(std::memory_order_acquire) == 0; });
        current_.reset();
    }

    static ThreadPool& global() {
        static ThreadPool pool(default_workers());
        return pool;
    }

    static std::size_t default_workers() {
        if (const char* env = std::getenv("OCTFLOW_THREADS")) {
            const long n = std::atol(env);
            if (n >= 1) return static_cast<std::size_t>(n);
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc ? hc : 1;
    }

private:
    void drain(Job& job) {
        while (true) {
            const std::size_t c = job.next.fetch_add(1, std::memory_order_relaxed);
            if (c >= job.total) break;
            (*job.fn)(c);
            if (job.pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(mutex_);
                done_cv_.notify_all();
            }
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        while (true) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return stop_ || (current_ && generation_ != seen); });
                if (stop_) return;
                seen = generation_;
                job = current_;
            }
            drain(*job);
        }
    }

    std::vector<std::thread> threads_;
    std::size_t extra_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::shared_ptr<Job> current_;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// Deterministic parallel map over [0, n): fn(lo, hi) on contiguous ranges.
template <typename Fn>
void parallel_ranges(std::size_t n, const Fn& fn) {
    ThreadPool& pool = ThreadPool::global();
    const std::size_t chunks = std::min(n, pool.size());
    if (chunks <= 1) {
        if (n > 0) fn(std::size_t{0}, n);
        return;
    }
    const std::size_t per = (n + chunks - 1) / chunks;
    std::function<void(std::size_t)> body = [&](std::size_t c) {
        const std::size_t lo = c * per;
        const std::size_t hi = std::min(n, lo + per);
        if (lo < hi) fn(lo, hi);
    };
    pool.run_chunks(chunks, body);
}

} // namespace octflow
