#include "modwave/fft.hpp"

#include <mutex>

#include <fftw3.h>

namespace mw {

namespace {

std::mutex plan_mutex;

CVec run(const CVec& x, int sign) {
    const int n = static_cast<int>(x.size());
    CVec out(n);
    if (n == 0) return out;
    CVec in = x;
    auto* pin = reinterpret_cast<fftw_complex*>(in.data());
    auto* pout = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lk(plan_mutex);
        plan = fftw_plan_dft_1d(n, pin, pout, sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lk(plan_mutex);
        fftw_destroy_plan(plan);
    }
    return out;
}

}  // namespace

CVec fft(const CVec& x) { return run(x, FFTW_FORWARD); }
CVec ifft(const CVec& x) { return run(x, FFTW_BACKWARD); }

}  // namespace mw
