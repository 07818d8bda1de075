#pragma once

#include <fftw3.h>

#include <memory>
#include <mutex>
#include <new>

#include "mrvf/errors.hpp"

namespace mrvf::detail {

// FFTW's planner (both precisions) is not re-entrant; execution is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

// fftw_malloc and fftwf_malloc share one allocator with SIMD alignment.
template <typename T>
FftwBuffer<T> fftw_buffer(std::size_t n) {
    auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)));
    if (!p) throw std::bad_alloc();
    return FftwBuffer<T>(p);
}

class Plan {
public:
    explicit Plan(fftw_plan p) : plan_(p) {
        if (!plan_) throw Error("FFTW failed to create a plan");
    }
    ~Plan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan_);
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;
    void execute() const { fftw_execute(plan_); }

private:
    fftw_plan plan_;
};

class PlanF {
public:
    explicit PlanF(fftwf_plan p) : plan_(p) {
        if (!plan_) throw Error("FFTW failed to create a plan");
    }
    ~PlanF() {
        std::lock_guard lock(fftw_planner_mutex());
        fftwf_destroy_plan(plan_);
    }
    PlanF(const PlanF&) = delete;
    PlanF& operator=(const PlanF&) = delete;
    /// New-array execution; `data` must share the alignment of the planning array.
    void execute(fftwf_complex* data) const { fftwf_execute_dft(plan_, data, data); }

private:
    fftwf_plan plan_;
};

} // namespace mrvf::detail
