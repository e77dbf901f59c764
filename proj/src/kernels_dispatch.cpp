#include "echoes/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#if defined(ECHOES_HAVE_AVX2)
namespace echoes::kernels::avx2 {
void matmul(const double*, const double*, double*, std::size_t, std::size_t,
            std::size_t);
void relu(const double*, double*, std::size_t);
void relu_grad(const double*, const double*, double*, std::size_t);
void add_bias(double*, const double*, std::size_t, std::size_t);
void adam_update(double*, double*, double*, const double*, std::size_t, double,
                 double, double, double, double, double);
}  // namespace echoes::kernels::avx2
#endif

#if defined(ECHOES_HAVE_NEON)
namespace echoes::kernels::neon {
void matmul(const double*, const double*, double*, std::size_t, std::size_t,
            std::size_t);
void relu(const double*, double*, std::size_t);
void relu_grad(const double*, const double*, double*, std::size_t);
void add_bias(double*, const double*, std::size_t, std::size_t);
void adam_update(double*, double*, double*, const double*, std::size_t, double,
                 double, double, double, double, double);
}  // namespace echoes::kernels::neon
#endif

namespace echoes::kernels {

namespace {

const Ops kScalarOps{scalar::matmul, scalar::relu, scalar::relu_grad,
                     scalar::add_bias, scalar::adam_update};

#if defined(ECHOES_HAVE_AVX2)
const Ops kAvx2Ops{avx2::matmul, avx2::relu, avx2::relu_grad, avx2::add_bias,
                   avx2::adam_update};
#endif

#if defined(ECHOES_HAVE_NEON)
const Ops kNeonOps{neon::matmul, neon::relu, neon::relu_grad, neon::add_bias,
                   neon::adam_update};
#endif

Backend pick_default() {
#if defined(ECHOES_HAVE_AVX2)
  if (__builtin_cpu_supports("avx2")) {
    return Backend::Avx2;
  }
#endif
#if defined(ECHOES_HAVE_NEON)
  return Backend::Neon;
#endif
  return Backend::Scalar;
}

Backend parse_env(const char* value) {
  const std::string name(value);
  if (name == "auto") {
    return pick_default();
  }
  if (name == "scalar") {
    return Backend::Scalar;
  }
  if (name == "avx2") {
    return Backend::Avx2;
  }
  if (name == "neon") {
    return Backend::Neon;
  }
  throw std::runtime_error("ECHOES_BACKEND: unknown backend '" + name + "'");
}

Backend initial_backend() {
  const char* env = std::getenv("ECHOES_BACKEND");
  const Backend b = env ? parse_env(env) : pick_default();
  if (!backend_supported(b)) {
    throw std::runtime_error(std::string("backend not supported on this host: ") +
                             backend_name(b));
  }
  return b;
}

Backend& current() {
  static Backend backend = initial_backend();
  return backend;
}

}  // namespace

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
#if defined(ECHOES_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::Neon:
#if defined(ECHOES_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const Ops& ops_for(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return kScalarOps;
    case Backend::Avx2:
#if defined(ECHOES_HAVE_AVX2)
      if (__builtin_cpu_supports("avx2")) {
        return kAvx2Ops;
      }
#endif
      break;
    case Backend::Neon:
#if defined(ECHOES_HAVE_NEON)
      return kNeonOps;
#else
      break;
#endif
  }
  throw std::runtime_error(std::string("backend not supported on this host: ") +
                           backend_name(b));
}

const Ops& ops() { return ops_for(current()); }

Backend active_backend() { return current(); }

bool set_backend(Backend b) {
  if (!backend_supported(b)) {
    return false;
  }
  current() = b;
  return true;
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
    case Backend::Neon:
      return "neon";
  }
  return "?";
}

}  // namespace echoes::kernels
