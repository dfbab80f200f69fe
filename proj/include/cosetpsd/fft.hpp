#pragma once

#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace cosetpsd {

// Thin wrapper over Eigen's kissfft backend. Plans are cached per thread, so
// concurrent calls from worker threads never share mutable state.
namespace fft {

using cvec = std::vector<std::complex<double>>;

inline Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> instance;
  return instance;
}

/// X[k] = sum_n x[n] exp(-j 2 pi k n / len).
inline void forward(const cvec& in, cvec& out) {
  // kissfft does not handle lengths below 2; those transforms are the identity.
  if (in.size() < 2) {
    out = in;
    return;
  }
  out.resize(in.size());
  engine().fwd(out, in);
}

inline cvec forward(const cvec& in) {
  cvec out;
  forward(in, out);
  return out;
}

/// x[n] = (1/len) sum_k X[k] exp(+j 2 pi k n / len).
inline void inverse(const cvec& in, cvec& out) {
  if (in.size() < 2) {
    out = in;
    return;
  }
  out.resize(in.size());
  engine().inv(out, in);
}

inline cvec inverse(const cvec& in) {
  cvec out;
  inverse(in, out);
  return out;
}

}  // namespace fft
}  // namespace cosetpsd
