#include "hyattn/opcount.hpp"

namespace hyattn::opcount {

Counts*& active() {
    thread_local Counts* current = nullptr;
    return current;
}

} // namespace hyattn::opcount
