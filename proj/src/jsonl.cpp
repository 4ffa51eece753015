#include "chemtown/jsonl.hpp"

#include <fstream>

#include "chemtown/errors.hpp"

namespace chemtown::jsonl {

std::vector<nlohmann::json> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read file: " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json value = nlohmann::json::parse(line, nullptr, false);
        if (value.is_discarded())
            throw FormatError("malformed JSON in " + path.filename().string(), line_no);
        out.push_back(std::move(value));
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write file: " + path.string());
    for (const auto& value : lines) out << value.dump() << "\n";
    if (!out) throw InputError("write failed: " + path.string());
}

const nlohmann::json& require(const nlohmann::json& obj, const char* field, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end()) throw FormatError(std::string("missing field \"") + field + "\"", line);
    return *it;
}

} // namespace chemtown::jsonl
