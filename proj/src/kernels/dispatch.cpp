#include "qbc/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace qbc::kern {

#if defined(QBC_HAVE_AVX2)
const Ops* avx2_ops_table();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(QBC_HAVE_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* g_active = nullptr;

const Ops* pick_default() {
    const char* env = std::getenv("QBC_KERNEL_BACKEND");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
        if (std::strcmp(env, "avx2") == 0 && avx2_ops() != nullptr) return avx2_ops();
        // "auto" or anything unrecognized falls through to detection
    }
    if (const Ops* v = avx2_ops()) return v;
    return &scalar_ops();
}

} // namespace

const Ops* avx2_ops() {
#if defined(QBC_HAVE_AVX2)
    if (cpu_has_avx2()) return avx2_ops_table();
#endif
    return nullptr;
}

const Ops& ops() {
    if (g_active == nullptr) g_active = pick_default();
    return *g_active;
}

bool select_backend(Backend b) {
    switch (b) {
    case Backend::Scalar:
        g_active = &scalar_ops();
        return true;
    case Backend::Avx2:
        if (const Ops* v = avx2_ops()) {
            g_active = v;
            return true;
        }
        return false;
    case Backend::Auto:
        g_active = pick_default();
        return true;
    }
    return false;
}

std::string active_backend_name() { return ops().name; }

} // namespace qbc::kern
