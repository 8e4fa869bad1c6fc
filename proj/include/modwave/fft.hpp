#pragma once

#include "modwave/common.hpp"

namespace mw {

// Unnormalized DFTs: forward uses e^{-2 pi i jk/n}, backward e^{+2 pi i jk/n}.
CVec fft(const CVec& x);
CVec ifft(const CVec& x);

}  // namespace mw
