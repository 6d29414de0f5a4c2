#include "voxmim/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "voxmim/errors.hpp"

namespace voxmim {

void DatasetManifest::validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& r : records) {
        if (r.id.empty()) throw DataError("manifest record with empty id");
        if (!ids.insert(r.id).second) throw DataError("duplicate manifest id '" + r.id + "'");
        if (role == ManifestRole::Unlabeled && r.label)
            throw DataError("unlabeled manifest carries a label for id '" + r.id + "'");
        if (role == ManifestRole::Labeled) {
            if (!r.label) throw DataError("labeled manifest missing label for id '" + r.id + "'");
            if (*r.label != 0 && *r.label != 1)
                throw DataError("label for id '" + r.id + "' must be 0 or 1");
        }
    }
}

size_t DatasetManifest::count_label(int label) const {
    size_t n = 0;
    for (const auto& r : records)
        if (r.label && *r.label == label) ++n;
    return n;
}

DatasetManifest load_manifest(const std::string& path, ManifestRole role) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path);
    DatasetManifest m;
    m.role = role;

    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (row == 1) {
            if (line != "id,volume,label")
                throw DataError(path + " row 1: expected header 'id,volume,label'");
            continue;
        }
        std::stringstream ss(line);
        std::string id, volume, label;
        if (!std::getline(ss, id, ',') || !std::getline(ss, volume, ','))
            throw DataError(path + " row " + std::to_string(row) + ": malformed record");
        std::getline(ss, label, ',');
        ManifestRecord rec{id, volume, std::nullopt};
        if (!label.empty()) {
            if (label != "0" && label != "1")
                throw DataError(path + " row " + std::to_string(row) + ": label must be 0, 1 or empty");
            rec.label = label == "1" ? 1 : 0;
        }
        m.records.push_back(std::move(rec));
    }
    try {
        m.validate();
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    manifest.validate();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path);
    out << "id,volume,label\n";
    for (const auto& r : manifest.records) {
        out << r.id << "," << r.volume_path << ",";
        if (r.label) out << *r.label;
        out << "\n";
    }
    if (!out) throw DataError("write failure on " + path);
}

}  // namespace voxmim
