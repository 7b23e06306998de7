#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include <openssl/evp.h>
#include <zlib.h>

#include "ftncfm/common/errors.hpp"

namespace ftncfm {

inline bool has_gzip_suffix(const std::filesystem::path& p) {
    const std::string s = p.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

inline void ensure_parent(const std::filesystem::path& p) {
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + p.parent_path().string() + "': " + ec.message());
    }
}

// Writes `text`, gzip-compressed when the name ends in ".gz". The gzip header
// carries no timestamp, so output bytes depend only on the text.
inline void write_text(const std::filesystem::path& path, std::string_view text) {
    ensure_parent(path);
    if (has_gzip_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb9");
        if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
        std::size_t done = 0;
        while (done < text.size()) {
            const auto chunk = static_cast<unsigned>(std::min<std::size_t>(text.size() - done, 1u << 20));
            if (gzwrite(f, text.data() + done, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw IoError("gzip write failed for '" + path.string() + "'");
            }
            done += chunk;
        }
        if (gzclose(f) != Z_OK) throw IoError("gzip close failed for '" + path.string() + "'");
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
    if (has_gzip_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "rb");
        if (!f) throw IoError("cannot open '" + path.string() + "'");
        std::string out;
        char buf[1 << 15];
        int n = 0;
        while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
        const bool bad = n < 0;
        gzclose(f);
        if (bad) throw IoError("corrupt gzip stream in '" + path.string() + "'");
        return out;
    }
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256 failed");
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return ss.str();
}

inline std::string file_sha256(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return sha256_hex(ss.str());
}

// Shortest decimal form with `digits` significant digits.
inline std::string format_sig(double v, int digits = 9) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

} // namespace ftncfm
