#include <atomic>
#include <cstdlib>
#include <string_view>

#include "kernels_internal.hpp"

namespace prunelab::kernels {
namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(__i386__)) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const KernelTable* pick_default() {
    const auto tables = available_tables();
    if (const char* env = std::getenv("PRUNELAB_KERNELS")) {
        for (const auto* t : tables) {
            if (std::string_view(t->name) == env) return t;
        }
    }
    return tables.back();
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> current{pick_default()};
    return current;
}

}  // namespace

std::vector<const KernelTable*> available_tables() {
    std::vector<const KernelTable*> out{&scalar_table()};
    if (const auto* t = neon_table()) out.push_back(t);
    if (const auto* t = avx2_table(); t != nullptr && cpu_has_avx2()) out.push_back(t);
    return out;
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(std::string_view name) {
    for (const auto* t : available_tables()) {
        if (name == t->name) {
            slot().store(t, std::memory_order_release);
            return true;
        }
    }
    return false;
}

}  // namespace prunelab::kernels
