#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vmsvae {

// Incremental SHA-256, hex-encoded. Used for the frozen-backbone invariant
// and for trainable-parameter change detection.
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t len);

    template <typename T>
    void update_vector(const std::vector<T>& v) {
        update(v.data(), v.size() * sizeof(T));
    }

    std::string hex();  // finalizes; call once

  private:
    void* ctx_;
};

std::string sha256_hex(const void* data, size_t len);

}  // namespace vmsvae
