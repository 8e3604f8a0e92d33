#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crib/csv.hpp"
#include "crib/errors.hpp"
#include "crib/rng.hpp"

namespace crib {

enum class Role { Train, Internal, External };

inline const char* to_string(Role r) {
    switch (r) {
        case Role::Train: return "train";
        case Role::Internal: return "internal";
        case Role::External: return "external";
    }
    return "?";
}

inline Role parse_role(const std::string& s, const std::string& ctx) {
    if (s == "train") return Role::Train;
    if (s == "internal") return Role::Internal;
    if (s == "external") return Role::External;
    throw InvariantError(ctx + ": unknown role '" + s + "'");
}

struct ScanRecord {
    std::string scan_id;
    std::string scanner_id;
    std::string image_path;
    bool is_primary = false;
    double pixel_spacing = 1.0; // micrometres per pixel
};

struct SlideRecord {
    std::string slide_id;
    std::string patient_id;
    std::string cohort_id;
    Role role = Role::Train;
    int label = 0;           // cribriform present/absent
    bool borderline = false; // reference-negative but suggestive
    std::vector<ScanRecord> scans;

    const ScanRecord& primary_scan() const {
        for (const auto& s : scans)
            if (s.is_primary) return s;
        throw InvariantError("slide " + slide_id + " has no primary scan");
    }
};

struct DatasetManifest {
    std::vector<SlideRecord> slides;
    int schema_version = 1;

    const SlideRecord* find_slide(const std::string& slide_id) const {
        for (const auto& s : slides)
            if (s.slide_id == slide_id) return &s;
        return nullptr;
    }

    std::set<std::string> scanner_ids() const {
        std::set<std::string> out;
        for (const auto& s : slides)
            for (const auto& sc : s.scans) out.insert(sc.scanner_id);
        return out;
    }

    std::vector<std::string> patients_with_role(Role role) const {
        std::set<std::string> seen;
        std::vector<std::string> out;
        for (const auto& s : slides) {
            if (s.role != role) continue;
            if (seen.insert(s.patient_id).second) out.push_back(s.patient_id);
        }
        return out;
    }
};

struct FoldAssignment {
    int k = 10;
    std::map<std::string, int> fold_of_patient;
    std::uint64_t seed = 0;

    int fold_of(const std::string& patient_id) const {
        auto it = fold_of_patient.find(patient_id);
        if (it == fold_of_patient.end())
            throw InvariantError("patient not in fold assignment: " + patient_id);
        return it->second;
    }
};

inline const std::vector<std::string>& manifest_columns() {
    static const std::vector<std::string> cols = {
        "slide_id", "patient_id", "cohort_id", "role",   "label",         "borderline",
        "scan_id",  "scanner_id", "is_primary", "pixel_spacing", "image_path"};
    return cols;
}

namespace detail {

inline int parse_binary(const std::string& s, const std::string& ctx, const char* field) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw InvariantError(ctx + ": " + field + " must be 0 or 1, got '" + s + "'");
}

} // namespace detail

inline void validate_manifest(const DatasetManifest& m) {
    std::set<std::string> slide_ids;
    std::map<std::string, Role> patient_role;
    std::set<std::string> scan_ids;
    for (const auto& s : m.slides) {
        if (!slide_ids.insert(s.slide_id).second)
            throw InvariantError("duplicate slide_id '" + s.slide_id + "'");
        if (s.scans.empty())
            throw InvariantError("slide '" + s.slide_id + "' has no scans");
        int primaries = 0;
        for (const auto& sc : s.scans) {
            if (!scan_ids.insert(sc.scan_id).second)
                throw InvariantError("duplicate scan_id '" + sc.scan_id + "'");
            primaries += sc.is_primary ? 1 : 0;
            if (!(sc.pixel_spacing > 0.0))
                throw InvariantError("scan '" + sc.scan_id + "': pixel_spacing must be > 0");
        }
        if (primaries != 1)
            throw InvariantError("slide '" + s.slide_id + "' has " + std::to_string(primaries) +
                                 " primary scans, expected exactly 1");
        auto [it, inserted] = patient_role.emplace(s.patient_id, s.role);
        if (!inserted && it->second != s.role)
            throw InvariantError("patient '" + s.patient_id + "' appears in more than one role");
    }
}

// Manifest CSV: one row per scan, slide-level fields repeated. Fixed column
// order, UTF-8, LF line endings.
inline DatasetManifest load_manifest(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    if (t.header != manifest_columns())
        throw InvariantError(path + ": unexpected header; expected "
                             "slide_id,patient_id,cohort_id,role,label,borderline,"
                             "scan_id,scanner_id,is_primary,pixel_spacing,image_path");

    DatasetManifest m;
    std::map<std::string, std::size_t> slide_index;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string ctx = path + ":" + std::to_string(t.line_numbers[r]);
        SlideRecord rec;
        rec.slide_id = row[0];
        rec.patient_id = row[1];
        rec.cohort_id = row[2];
        rec.role = parse_role(row[3], ctx);
        rec.label = detail::parse_binary(row[4], ctx, "label");
        rec.borderline = detail::parse_binary(row[5], ctx, "borderline") != 0;
        ScanRecord scan;
        scan.scan_id = row[6];
        scan.scanner_id = row[7];
        scan.is_primary = detail::parse_binary(row[8], ctx, "is_primary") != 0;
        scan.pixel_spacing = csv::parse_double(row[9], ctx);
        scan.image_path = row[10];
        if (rec.slide_id.empty()) throw InvariantError(ctx + ": empty slide_id");

        auto it = slide_index.find(rec.slide_id);
        if (it == slide_index.end()) {
            slide_index.emplace(rec.slide_id, m.slides.size());
            rec.scans.push_back(scan);
            m.slides.push_back(std::move(rec));
        } else {
            SlideRecord& existing = m.slides[it->second];
            if (existing.patient_id != rec.patient_id || existing.cohort_id != rec.cohort_id ||
                existing.role != rec.role || existing.label != rec.label ||
                existing.borderline != rec.borderline)
                throw InvariantError(ctx + ": slide '" + rec.slide_id +
                                     "' has inconsistent slide-level fields across scan rows");
            existing.scans.push_back(scan);
        }
    }
    validate_manifest(m);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    csv::Writer w(path);
    w.row(manifest_columns());
    for (const auto& s : m.slides) {
        for (const auto& sc : s.scans) {
            w.row({s.slide_id, s.patient_id, s.cohort_id, to_string(s.role),
                   std::to_string(s.label), s.borderline ? "1" : "0", sc.scan_id, sc.scanner_id,
                   sc.is_primary ? "1" : "0", csv::fmt_g(sc.pixel_spacing), sc.image_path});
        }
    }
}

// Patient-grouped folds over the training role. Patients are sorted before
// the seeded shuffle so the assignment does not depend on manifest row order.
inline FoldAssignment make_grouped_folds(const DatasetManifest& m, int k, std::uint64_t seed) {
    if (k < 2) throw InvariantError("fold count must be >= 2, got " + std::to_string(k));
    std::vector<std::string> patients = m.patients_with_role(Role::Train);
    std::sort(patients.begin(), patients.end());
    if (patients.size() < static_cast<std::size_t>(k))
        throw InvariantError("fewer training patients (" + std::to_string(patients.size()) +
                             ") than folds (" + std::to_string(k) + ")");
    auto st = rng::stream(seed, "core/folds");
    st.shuffle(patients);
    FoldAssignment fa;
    fa.k = k;
    fa.seed = seed;
    for (std::size_t i = 0; i < patients.size(); ++i)
        fa.fold_of_patient[patients[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return fa;
}

// One (slide_id, scan_id) per slide: the scan carrying the reference
// annotation. Headline metrics are computed on these only.
inline std::vector<std::pair<std::string, std::string>> select_primary_scans(const DatasetManifest& m) {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(m.slides.size());
    for (const auto& s : m.slides) out.emplace_back(s.slide_id, s.primary_scan().scan_id);
    return out;
}

} // namespace crib
