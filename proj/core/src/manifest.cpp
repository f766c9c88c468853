#include "docdpm/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "docdpm/png_io.hpp"

namespace docdpm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
    throw std::runtime_error("manifest: " + path + ":" + std::to_string(line) + ": " + what);
}

std::string resolve(const fs::path& base, const std::string& p) {
    fs::path q(p);
    return (q.is_absolute() ? q : base / q).lexically_normal().string();
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    fs::path base = fs::path(path).parent_path();

    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            fail(path, lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) fail(path, lineno, "expected a JSON object");
        if (!j.contains("degraded") || !j["degraded"].is_string())
            fail(path, lineno, "missing string field \"degraded\"");
        if (!j.contains("clean") || !j["clean"].is_string())
            fail(path, lineno, "missing string field \"clean\"");

        ManifestRecord rec;
        rec.degraded_path = resolve(base, j["degraded"].get<std::string>());
        rec.clean_path = resolve(base, j["clean"].get<std::string>());
        if (!fs::exists(rec.degraded_path))
            fail(path, lineno, "degraded image not found: " + rec.degraded_path);
        if (!fs::exists(rec.clean_path))
            fail(path, lineno, "clean image not found: " + rec.clean_path);

        if (j.contains("words")) {
            if (!j["words"].is_array()) fail(path, lineno, "\"words\" must be an array");
            auto [img_w, img_h] = read_png_size(rec.clean_path);
            for (const auto& wj : j["words"]) {
                if (!wj.is_object() || !wj.contains("text") || !wj["text"].is_string() ||
                    !wj.contains("bbox") || !wj["bbox"].is_array() || wj["bbox"].size() != 4)
                    fail(path, lineno, "each word needs \"text\" and a 4-element \"bbox\"");
                for (const auto& v : wj["bbox"])
                    if (!v.is_number_integer())
                        fail(path, lineno, "bbox entries must be integers");
                WordBox b;
                b.text = wj["text"].get<std::string>();
                b.x = wj["bbox"][0].get<int>();
                b.y = wj["bbox"][1].get<int>();
                b.w = wj["bbox"][2].get<int>();
                b.h = wj["bbox"][3].get<int>();
                if (b.text.empty()) fail(path, lineno, "word text must be nonempty");
                if (b.w <= 0 || b.h <= 0) fail(path, lineno, "bbox must have positive size");
                if (b.x < 0 || b.y < 0 || b.x + b.w > img_w || b.y + b.h > img_h)
                    fail(path, lineno, "bbox extends outside the clean image");
                rec.words.push_back(std::move(b));
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw std::runtime_error("manifest: cannot open " + path + " for writing");
        for (const auto& rec : records) {
            json j;
            j["degraded"] = rec.degraded_path;
            j["clean"] = rec.clean_path;
            if (!rec.words.empty()) {
                json words = json::array();
                for (const auto& b : rec.words)
                    words.push_back({{"text", b.text}, {"bbox", {b.x, b.y, b.w, b.h}}});
                j["words"] = std::move(words);
            }
            f << j.dump() << '\n';
        }
        if (!f.good()) throw std::runtime_error("manifest: write failed for " + path);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace docdpm
