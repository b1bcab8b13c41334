#pragma once

#include "prunelab/kernels/kernels.hpp"

namespace prunelab::kernels {

// Each returns nullptr when the variant was not compiled into this binary.
const KernelTable* avx2_table();
const KernelTable* neon_table();

}  // namespace prunelab::kernels
