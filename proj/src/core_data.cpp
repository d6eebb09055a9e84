#include "mfe/core_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mfe/rng.hpp"

namespace fs = std::filesystem;

namespace mfe {

const char* to_string(Disease d) { return d == Disease::MF ? "MF" : "E"; }

Disease disease_from_string(const std::string& s) {
    if (s == "MF") return Disease::MF;
    if (s == "E" || s == "Eczema") return Disease::Eczema;
    throw std::runtime_error("manifest: unknown disease label '" + s + "' (want MF or E)");
}

const SlideRecord* Manifest::find(const std::string& slide_id) const {
    for (const auto& s : slides)
        if (s.slide_id == slide_id) return &s;
    return nullptr;
}

std::string Manifest::resolve(const std::string& rel_path) const {
    if (rel_path.empty()) return rel_path;
    if (base_dir.empty()) return rel_path;
    return (fs::path(base_dir) / rel_path).string();
}

size_t Manifest::count(Disease d) const {
    size_t n = 0;
    for (const auto& s : slides)
        if (s.disease == d) ++n;
    return n;
}

std::vector<std::string> SplitSpec::slides_in(int bucket) const {
    std::vector<std::string> out;
    for (const auto& [id, b] : assignment)
        if (b == bucket) out.push_back(id);
    return out;
}

namespace {

[[noreturn]] void manifest_error(const std::string& path, int line, const std::string& what) {
    throw std::runtime_error("manifest '" + path + "' line " + std::to_string(line) +
                             ": " + what);
}

void validate_manifest(const Manifest& m, const std::string& path) {
    std::set<std::string> ids;
    for (const auto& s : m.slides) {
        if (s.slide_id.empty())
            throw std::runtime_error("manifest '" + path + "': empty slide_id");
        if (!ids.insert(s.slide_id).second)
            throw std::runtime_error("manifest '" + path + "': duplicate slide_id '" +
                                     s.slide_id + "'");
        if (s.patient_id.empty())
            throw std::runtime_error("manifest '" + path + "': slide '" + s.slide_id +
                                     "' has empty patient_id");
        if (s.width_px <= 0 || s.height_px <= 0)
            throw std::runtime_error("manifest '" + path + "': slide '" + s.slide_id +
                                     "' has non-positive dimensions");
        const RasterDims img = read_raster_dims(m.resolve(s.image_path));
        if (img.h != s.height_px || img.w != s.width_px)
            throw std::runtime_error("manifest '" + path + "': slide '" + s.slide_id +
                                     "': field width/height (" + std::to_string(s.width_px) +
                                     "x" + std::to_string(s.height_px) +
                                     ") does not match raster (" + std::to_string(img.w) +
                                     "x" + std::to_string(img.h) + ")");
        if (s.has_mask()) {
            const RasterDims msk = read_raster_dims(m.resolve(s.mask_path));
            if (msk.h != s.height_px || msk.w != s.width_px)
                throw std::runtime_error(
                    "manifest '" + path + "': slide '" + s.slide_id +
                    "': field mask_path: mask dimensions (" + std::to_string(msk.w) + "x" +
                    std::to_string(msk.h) + ") do not match image (" +
                    std::to_string(s.width_px) + "x" + std::to_string(s.height_px) + ")");
        }
    }
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest '" + path + "': cannot open");
    Manifest m;
    m.base_dir = fs::path(path).parent_path().string();
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (!header_seen) {
            if (tag != "mfe-manifest") manifest_error(path, lineno, "missing 'mfe-manifest' header");
            int version = 0;
            ss >> version;
            if (version != 1) manifest_error(path, lineno, "unsupported schema version");
            header_seen = true;
        } else if (tag == "seed") {
            if (!(ss >> m.seed)) manifest_error(path, lineno, "field seed: not an integer");
        } else if (tag == "legend") {
            LegendEntry e;
            int r, g, b;
            if (!(ss >> e.class_id >> e.name >> r >> g >> b))
                manifest_error(path, lineno, "field legend: want <id> <name> <r> <g> <b>");
            e.rgb = {static_cast<uint8_t>(r), static_cast<uint8_t>(g), static_cast<uint8_t>(b)};
            m.legend.push_back(e);
        } else if (tag == "slide") {
            SlideRecord s;
            std::string disease;
            if (!(ss >> s.slide_id >> s.patient_id >> disease >> s.image_path >>
                  s.mask_path >> s.width_px >> s.height_px))
                manifest_error(path, lineno,
                               "field slide: want <id> <patient> <MF|E> <image> <mask|-> <w> <h>");
            s.disease = disease_from_string(disease);
            if (s.mask_path == "-") s.mask_path.clear();
            m.slides.push_back(std::move(s));
        } else {
            manifest_error(path, lineno, "unknown record '" + tag + "'");
        }
    }
    if (!header_seen) throw std::runtime_error("manifest '" + path + "': empty file");
    validate_manifest(m, path);
    return m;
}

void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest '" + path + "': cannot open for writing");
    out << "mfe-manifest 1\n";
    out << "seed " << m.seed << "\n";
    for (const auto& e : m.legend)
        out << "legend " << e.class_id << " " << e.name << " " << int(e.rgb[0]) << " "
            << int(e.rgb[1]) << " " << int(e.rgb[2]) << "\n";
    for (const auto& s : m.slides)
        out << "slide " << s.slide_id << " " << s.patient_id << " " << to_string(s.disease)
            << " " << s.image_path << " " << (s.mask_path.empty() ? "-" : s.mask_path)
            << " " << s.width_px << " " << s.height_px << "\n";
    if (!out) throw std::runtime_error("manifest '" + path + "': write failed");
}

SplitSpec load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("split '" + path + "': cannot open");
    SplitSpec s;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "mfe-split") {
            int version;
            ss >> version;
        } else if (tag == "seed") {
            ss >> s.seed;
        } else if (tag == "kind") {
            std::string k;
            ss >> k;
            if (k == "fractions") {
                s.kind = SplitSpec::Kind::fractions;
                ss >> s.fractions[0] >> s.fractions[1] >> s.fractions[2];
            } else if (k == "folds") {
                s.kind = SplitSpec::Kind::folds;
                ss >> s.num_folds;
            } else {
                throw std::runtime_error("split '" + path + "' line " + std::to_string(lineno) +
                                         ": unknown kind '" + k + "'");
            }
        } else if (tag == "assign") {
            std::string id, bucket;
            ss >> id >> bucket;
            int b;
            if (bucket == "train") b = SplitSpec::kTrain;
            else if (bucket == "val") b = SplitSpec::kVal;
            else if (bucket == "test") b = SplitSpec::kTest;
            else b = std::stoi(bucket);
            s.assignment[id] = b;
        } else {
            throw std::runtime_error("split '" + path + "' line " + std::to_string(lineno) +
                                     ": unknown record '" + tag + "'");
        }
    }
    return s;
}

void save_split(const std::string& path, const SplitSpec& s) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("split '" + path + "': cannot open for writing");
    out << "mfe-split 1\n";
    out << "seed " << s.seed << "\n";
    if (s.kind == SplitSpec::Kind::fractions)
        out << "kind fractions " << s.fractions[0] << " " << s.fractions[1] << " "
            << s.fractions[2] << "\n";
    else
        out << "kind folds " << s.num_folds << "\n";
    static const char* names[3] = {"train", "val", "test"};
    for (const auto& [id, b] : s.assignment) {
        out << "assign " << id << " ";
        if (s.kind == SplitSpec::Kind::fractions) out << names[b];
        else out << b;
        out << "\n";
    }
    if (!out) throw std::runtime_error("split '" + path + "': write failed");
}

namespace {

struct PatientGroup {
    std::string patient_id;
    Disease disease;            // majority label of the patient's slides
    std::vector<std::string> slide_ids;
    uint64_t tiebreak = 0;
};

std::vector<PatientGroup> group_patients(const Manifest& manifest, uint64_t seed) {
    std::map<std::string, PatientGroup> by_patient;
    for (const auto& s : manifest.slides) {
        auto& g = by_patient[s.patient_id];
        g.patient_id = s.patient_id;
        g.slide_ids.push_back(s.slide_id);
    }
    for (auto& [pid, g] : by_patient) {
        size_t mf = 0;
        for (const auto& sid : g.slide_ids)
            if (manifest.find(sid)->disease == Disease::MF) ++mf;
        g.disease = (2 * mf >= g.slide_ids.size()) ? Disease::MF : Disease::Eczema;
        g.tiebreak = hash_str(seed, pid.c_str());
    }
    std::vector<PatientGroup> out;
    out.reserve(by_patient.size());
    for (auto& [pid, g] : by_patient) out.push_back(std::move(g));
    // larger patients first so the greedy fill has room to correct
    std::sort(out.begin(), out.end(), [](const PatientGroup& a, const PatientGroup& b) {
        if (a.disease != b.disease) return a.disease == Disease::MF;
        if (a.slide_ids.size() != b.slide_ids.size())
            return a.slide_ids.size() > b.slide_ids.size();
        return a.tiebreak < b.tiebreak;
    });
    return out;
}

// Assign each patient to the bucket with the largest remaining per-class
// quota; ties fall to the bucket with the most total remaining quota, so
// per-class remainders do not pile onto one bucket. quotas[bucket][class]
// counts slides.
std::map<std::string, int> greedy_assign(const std::vector<PatientGroup>& patients,
                                         std::vector<std::array<double, 2>> quotas) {
    std::map<std::string, int> assignment;
    for (const auto& p : patients) {
        const int cls = p.disease == Disease::MF ? 0 : 1;
        int best = 0;
        for (int b = 1; b < static_cast<int>(quotas.size()); ++b) {
            const double qb = quotas[b][cls], qbest = quotas[best][cls];
            if (qb > qbest ||
                (qb == qbest &&
                 quotas[b][0] + quotas[b][1] > quotas[best][0] + quotas[best][1]))
                best = b;
        }
        quotas[best][cls] -= static_cast<double>(p.slide_ids.size());
        for (const auto& sid : p.slide_ids) assignment[sid] = best;
    }
    return assignment;
}

}  // namespace

SplitSpec make_split(const Manifest& manifest, const std::array<double, 3>& fractions,
                     uint64_t seed) {
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("make_split: fractions must sum to 1");
    if (manifest.slides.empty()) throw std::invalid_argument("make_split: empty manifest");

    auto patients = group_patients(manifest, seed);
    int nonempty = 0;
    for (double f : fractions)
        if (f > 0) ++nonempty;
    if (static_cast<int>(patients.size()) < nonempty)
        throw std::invalid_argument("make_split: fewer patients (" +
                                    std::to_string(patients.size()) + ") than non-empty splits (" +
                                    std::to_string(nonempty) + ")");

    const double mf_total = static_cast<double>(manifest.count(Disease::MF));
    const double e_total = static_cast<double>(manifest.count(Disease::Eczema));
    std::vector<std::array<double, 2>> quotas(3);
    for (int b = 0; b < 3; ++b) quotas[b] = {fractions[b] * mf_total, fractions[b] * e_total};

    SplitSpec spec;
    spec.kind = SplitSpec::Kind::fractions;
    spec.seed = seed;
    spec.fractions = fractions;
    spec.assignment = greedy_assign(patients, std::move(quotas));
    return spec;
}

SplitSpec make_folds(const Manifest& manifest, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
    auto patients = group_patients(manifest, seed);
    if (static_cast<int>(patients.size()) < k)
        throw std::invalid_argument("make_folds: k (" + std::to_string(k) +
                                    ") exceeds patient count (" +
                                    std::to_string(patients.size()) + ")");

    const double mf_total = static_cast<double>(manifest.count(Disease::MF));
    const double e_total = static_cast<double>(manifest.count(Disease::Eczema));
    std::vector<std::array<double, 2>> quotas(k);
    for (int b = 0; b < k; ++b) quotas[b] = {mf_total / k, e_total / k};

    SplitSpec spec;
    spec.kind = SplitSpec::Kind::folds;
    spec.seed = seed;
    spec.num_folds = k;
    spec.assignment = greedy_assign(patients, std::move(quotas));
    return spec;
}

}  // namespace mfe
