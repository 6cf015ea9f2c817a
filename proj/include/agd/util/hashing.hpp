#pragma once

// SHA-256 helpers over OpenSSL's EVP interface, used for artifact manifests
// and determinism checks.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "agd/types.hpp"

namespace agd {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw IoError("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, size_t len) {
        if (EVP_DigestUpdate(ctx_, data, len) != 1) throw IoError("sha256 update failed");
    }
    void update(const std::string& s) { update(s.data(), s.size()); }

    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw IoError("sha256 final failed");
        std::ostringstream os;
        os << std::hex << std::setfill('0');
        for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << int(digest[i]);
        return os.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(const std::string& data) {
    Sha256 h;
    h.update(data);
    return h.hex();
}

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot hash missing file: " + path.string());
    Sha256 h;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        if (f.gcount() > 0) h.update(buf, size_t(f.gcount()));
    }
    return h.hex();
}

}  // namespace agd
