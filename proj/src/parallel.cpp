#include "countsplit/parallel.hpp"

#include <cstdlib>
#include <string>

namespace countsplit {

int threads_from_environment() {
    const char* raw = std::getenv("COUNTSPLIT_THREADS");
    if (!raw) {
        return 1;
    }
    try {
        const int value = std::stoi(raw);
        return value > 0 ? value : 1;
    } catch (...) {
        return 1;
    }
}

}
