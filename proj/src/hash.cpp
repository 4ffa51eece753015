#include "chemtown/hash.hpp"

#include <fstream>
#include <sstream>

#include "chemtown/errors.hpp"

namespace chemtown::hash {

std::string to_hex(std::uint64_t value) {
    static const char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

std::string digest(std::string_view data) { return to_hex(fnv1a64(data)); }

std::string digest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return digest(buffer.str());
}

} // namespace chemtown::hash
