#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "datagen.hpp"
#include "matrix.hpp"
#include "text_format.hpp"

namespace dualenc {

struct DataRecord {
    int id = 0;
    std::string long_text;
    std::string short_text;
    Matrix<float> image;  // cells x channels
};

inline DataRecord to_record(const GeneratedScene& scene) {
    DataRecord r;
    r.id = scene.spec.scene_id;
    r.long_text = scene.captions.long_text;
    r.short_text = scene.captions.short_text;
    r.image = scene.image;
    return r;
}

inline std::vector<DataRecord> to_records(const std::vector<GeneratedScene>& scenes) {
    std::vector<DataRecord> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(to_record(s));
    return out;
}

// One JSON object per line, field order fixed: id, long, short, image.
// Floats carry 9 significant digits, which round-trips 32-bit exactly.
inline void write_dataset(const std::string& path, const std::vector<DataRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_dataset: cannot open " + path);
    std::string line;
    for (const auto& r : records) {
        line.clear();
        line += "{\"id\":" + std::to_string(r.id);
        line += ",\"long\":\"" + json_escape(r.long_text) + "\"";
        line += ",\"short\":\"" + json_escape(r.short_text) + "\"";
        line += ",\"image\":[";
        for (std::size_t i = 0; i < r.image.rows(); ++i) {
            if (i) line += ',';
            line += '[';
            for (std::size_t j = 0; j < r.image.cols(); ++j) {
                if (j) line += ',';
                line += format_g9(static_cast<double>(r.image(i, j)));
            }
            line += ']';
        }
        line += "]}\n";
        out << line;
    }
    require(out.good(), "write_dataset: write failure on " + path);
}

inline std::vector<DataRecord> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_dataset: cannot open " + path);
    std::vector<DataRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw contract_error("read_dataset: " + path + " line " +
                                 std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("long") ||
            !j.contains("short") || !j.contains("image"))
            throw contract_error("read_dataset: " + path + " line " +
                                 std::to_string(line_no) + ": missing field");
        DataRecord r;
        try {
            r.id = j["id"].get<int>();
            r.long_text = j["long"].get<std::string>();
            r.short_text = j["short"].get<std::string>();
            const auto& img = j["image"];
            const std::size_t rows = img.size();
            require(rows > 0, "empty image");
            const std::size_t cols = img[0].size();
            r.image = Matrix<float>(rows, cols);
            for (std::size_t a = 0; a < rows; ++a) {
                require(img[a].size() == cols, "ragged image rows");
                for (std::size_t b = 0; b < cols; ++b)
                    r.image(a, b) = img[a][b].get<float>();
            }
        } catch (const std::exception& e) {
            throw contract_error("read_dataset: " + path + " line " +
                                 std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dualenc
