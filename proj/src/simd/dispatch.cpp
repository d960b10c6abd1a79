#include <cstdlib>
#include <string_view>

#include "gmq/simd/kernels.hpp"

namespace gmq::simd {

const Kernels& active() {
    static const Kernels& chosen = [&]() -> const Kernels& {
        const char* env = std::getenv("GMQ_SIMD");
        if (env != nullptr && std::string_view(env) == "scalar") return scalar_kernels();
        if (const Kernels* k = avx2_kernels()) return *k;
        return scalar_kernels();
    }();
    return chosen;
}

}  // namespace gmq::simd
