#include "opelab/parallel.hpp"

#include "opelab/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace opelab {

void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task) {
    if (count == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(jobs, 1, count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::size_t first_error_index = count;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                task(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (i < first_error_index) {
                    first_error_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> threads;
    threads.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(worker);
    worker();
    threads.clear();
    if (first_error) std::rethrow_exception(first_error);
}

unsigned resolve_jobs(std::optional<unsigned> requested) {
    if (requested) {
        if (*requested == 0) throw ArgumentError("--jobs must be at least 1");
        return *requested;
    }
    const char* env = std::getenv("OPELAB_JOBS");
    if (env == nullptr || *env == '\0') return 1;
    const std::string_view text(env);
    unsigned value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || value == 0) {
        throw ArgumentError("OPELAB_JOBS must be a positive integer, got '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace opelab
