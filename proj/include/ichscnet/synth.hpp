#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichscnet/errors.hpp"
#include "ichscnet/image.hpp"
#include "ichscnet/metrics.hpp"
#include "ichscnet/rng.hpp"

namespace ichscnet {

using json = nlohmann::json;

inline constexpr const char* kGeneratorVersion = "1.0.0";

struct ClinicalText {
    int age = 0;                  // 18..95
    std::string gender;           // "M" | "F"
    int stay_days = 0;            // 1..60
    int onset_to_ct_hours = 0;    // 1..72
    int gcs = 0;                  // 3..15
    std::string treatment;        // conservative | surgical
    std::string location;         // quadrant or central
    double volume_ml = 0.0;
    std::string rendered;
};

struct CaseRecord {
    std::string case_id;
    GrayImage image;
    Mask gt_mask;
    Mask rough_mask;
    BBox bbox;
    ClinicalText text;
    int label = 0;  // 0 good, 1 poor
};

struct DatasetManifest {
    uint64_t seed = 0;
    std::string generator_version;
    int64_t image_size = 0;
    double calibration_ml_per_px = 0.0;
    double v_thr_ml = 0.0;
    int64_t n_good = 0, n_poor = 0;
    std::vector<std::string> case_ids;
    std::string dir;
};

inline const std::vector<std::string>& treatment_values() {
    static const std::vector<std::string> v = {"conservative", "surgical"};
    return v;
}

inline const std::vector<std::string>& location_values() {
    static const std::vector<std::string> v = {"left-anterior", "right-anterior",
                                               "left-posterior", "right-posterior", "central"};
    return v;
}

inline void validate_fields(const ClinicalText& t, const std::string& ctx) {
    auto fail = [&](const std::string& msg) { throw DataError(ctx + ": " + msg); };
    if (t.age < 18 || t.age > 95) fail("age out of range");
    if (t.gender != "M" && t.gender != "F") fail("bad gender");
    if (t.stay_days < 1 || t.stay_days > 60) fail("stay_days out of range");
    if (t.onset_to_ct_hours < 1 || t.onset_to_ct_hours > 72) fail("onset_to_ct_hours out of range");
    if (t.gcs < 3 || t.gcs > 15) fail("gcs out of range");
    bool ok = false;
    for (const auto& v : treatment_values()) ok |= (v == t.treatment);
    if (!ok) fail("bad treatment");
    ok = false;
    for (const auto& v : location_values()) ok |= (v == t.location);
    if (!ok) fail("bad location");
    if (t.volume_ml < 0) fail("negative volume");
}

inline std::string render_text(const ClinicalText& t) {
    validate_fields(t, "render_text");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "Age %d, %s. Hospital stay %d d. Onset-to-CT %d h. GCS %d. Treatment: %s. "
                  "Hemorrhage at %s, volume %.1f mL.",
                  t.age, t.gender.c_str(), t.stay_days, t.onset_to_ct_hours, t.gcs,
                  t.treatment.c_str(), t.location.c_str(), t.volume_ml);
    return std::string(buf);
}

// label = 1 (poor) iff (volume above threshold AND gcs < 12) OR gcs < 9
inline int prognosis_label(double volume_ml, int gcs, double v_thr) {
    return ((volume_ml > v_thr && gcs < 12) || gcs < 9) ? 1 : 0;
}

inline double calibration_for_size(int64_t image_size) {
    const double r = 128.0 / static_cast<double>(image_size);
    return 0.01 * r * r;  // mL per pixel, volume distribution stable across sizes
}

// ---------------------------------------------------------------------------
// generator internals
// ---------------------------------------------------------------------------

namespace detail_synth {

struct Ellipse {
    double cx, cy, a, b, theta;

    bool inside(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double u = dx * ct + dy * st, v = -dx * st + dy * ct;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

// coarse 9x9 value-noise grid bilinearly upsampled over the image
struct NoiseField {
    static constexpr int kGrid = 9;
    double vals[kGrid][kGrid];
    int64_t size;

    NoiseField(Rng& rng, int64_t image_size) : size(image_size) {
        for (int gy = 0; gy < kGrid; ++gy)
            for (int gx = 0; gx < kGrid; ++gx) vals[gy][gx] = rng.uniform(-1.0, 1.0);
    }

    double at(int64_t y, int64_t x) const {
        const double fy = static_cast<double>(y) / static_cast<double>(size - 1) * (kGrid - 1);
        const double fx = static_cast<double>(x) / static_cast<double>(size - 1) * (kGrid - 1);
        const int y0 = std::min(static_cast<int>(fy), kGrid - 2);
        const int x0 = std::min(static_cast<int>(fx), kGrid - 2);
        const double ty = fy - y0, tx = fx - x0;
        return vals[y0][x0] * (1 - ty) * (1 - tx) + vals[y0][x0 + 1] * (1 - ty) * tx +
               vals[y0 + 1][x0] * ty * (1 - tx) + vals[y0 + 1][x0 + 1] * ty * tx;
    }
};

struct BlobGeometry {
    Ellipse brain;
    std::vector<Ellipse> blobs;
};

inline BlobGeometry sample_geometry(Rng& rng, int64_t size) {
    BlobGeometry g;
    const double s = static_cast<double>(size);
    g.brain.cx = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    g.brain.cy = s / 2.0 + rng.uniform(-0.03, 0.03) * s;
    g.brain.a = rng.uniform(0.32, 0.46) * s;
    g.brain.b = rng.uniform(0.32, 0.46) * s;
    g.brain.theta = rng.uniform(0.0, 3.14159265358979323846);
    const int64_t nblobs = rng.range(1, 3);
    const double blob_scale = s / 128.0;
    for (int64_t k = 0; k < nblobs; ++k) {
        Ellipse e;
        const double r = rng.uniform(0.0, 0.55) * std::min(g.brain.a, g.brain.b);
        const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        e.cx = g.brain.cx + r * std::cos(phi);
        e.cy = g.brain.cy + r * std::sin(phi);
        e.a = rng.uniform(6.0, 22.0) * blob_scale;
        e.b = rng.uniform(6.0, 22.0) * blob_scale;
        e.theta = rng.uniform(0.0, 3.14159265358979323846);
        g.blobs.push_back(e);
    }
    return g;
}

inline Mask geometry_to_mask(const BlobGeometry& g, int64_t size) {
    Mask m(size, size);
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            if (!g.brain.inside(px, py)) continue;
            for (const auto& e : g.blobs)
                if (e.inside(px, py)) {
                    m.at(y, x) = 1;
                    break;
                }
        }
    return m;
}

}  // namespace detail_synth

// 60th percentile of the blob-union volume distribution, estimated once per
// image size with an internal fixed-seed Monte Carlo pass over the same
// geometry recipe the generator uses.
inline double volume_threshold_ml(int64_t image_size) {
    constexpr int kSamples = 2048;
    const double calib = calibration_for_size(image_size);
    std::vector<double> volumes;
    volumes.reserve(kSamples);
    Rng rng(0x5EEDCAB1Eu, hash_tag("v_thr") ^ static_cast<uint64_t>(image_size));
    for (int i = 0; i < kSamples; ++i) {
        const auto g = detail_synth::sample_geometry(rng, image_size);
        const auto m = detail_synth::geometry_to_mask(g, image_size);
        volumes.push_back(static_cast<double>(m.area()) * calib);
    }
    return metrics::percentile_linear(std::move(volumes), 0.60);
}

inline CaseRecord generate_case(uint64_t dataset_seed, int64_t index, int64_t size,
                                double v_thr, double calib) {
    Rng rng(mix64(dataset_seed, static_cast<uint64_t>(index)) ^ hash_tag("case"));
    CaseRecord rec;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "case_%04lld", static_cast<long long>(index));
        rec.case_id = buf;
    }

    const auto geo = detail_synth::sample_geometry(rng, size);
    rec.gt_mask = detail_synth::geometry_to_mask(geo, size);

    // raster: dark background, textured brain, bright blobs
    const detail_synth::NoiseField noise(rng, size);
    const double base = rng.uniform(70.0, 110.0);
    const double amp = rng.uniform(8.0, 20.0);
    std::vector<double> blob_int;
    for (size_t k = 0; k < geo.blobs.size(); ++k) blob_int.push_back(rng.uniform(170.0, 220.0));
    rec.image = GrayImage(size, size);
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double nz = noise.at(y, x);
            double v;
            if (!geo.brain.inside(px, py)) {
                v = 12.0 + 4.0 * std::abs(nz);
            } else {
                v = base + amp * nz;
                for (size_t k = 0; k < geo.blobs.size(); ++k)
                    if (geo.blobs[k].inside(px, py)) v = std::max(v, blob_int[k] + amp * nz);
            }
            rec.image.at(y, x) =
                static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
        }

    // rough mask: dilation + pixel dropout, with a gentler fallback that
    // keeps the overlap invariant guaranteed
    auto corrupt = [&](int64_t radius, double dropout) {
        Mask rough = dilate(rec.gt_mask, radius);
        for (size_t i = 0; i < rough.on.size(); ++i)
            if (rough.on[i] && rng.bernoulli(dropout)) rough.on[i] = 0;
        return rough;
    };
    rec.rough_mask = corrupt(rng.range(1, 3), 0.10);
    if (metrics::jaccard(rec.rough_mask, rec.gt_mask) < 30.0) rec.rough_mask = corrupt(1, 0.05);
    if (metrics::jaccard(rec.rough_mask, rec.gt_mask) < 30.0) rec.rough_mask = rec.gt_mask;

    // bbox: tight box jittered up to +-3 px per edge, retried until it still
    // holds >=95% of the foreground; outward-only jitter as a safe fallback
    BBox tight;
    tight_bbox(rec.gt_mask, tight);
    const int64_t gt_area = rec.gt_mask.area();
    auto contained = [&](const BBox& b) {
        int64_t cnt = 0;
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x)
                if (rec.gt_mask.at(y, x) && b.contains(x, y)) ++cnt;
        return static_cast<double>(cnt) >= 0.95 * static_cast<double>(gt_area);
    };
    bool placed = false;
    for (int attempt = 0; attempt < 8 && !placed; ++attempt) {
        BBox b = {tight.x_min + rng.range(-3, 3), tight.y_min + rng.range(-3, 3),
                  tight.x_max + rng.range(-3, 3), tight.y_max + rng.range(-3, 3)};
        b = b.clamped(size, size);
        if (b.valid() && contained(b)) {
            rec.bbox = b;
            placed = true;
        }
    }
    if (!placed) {
        BBox b = {tight.x_min - rng.range(0, 3), tight.y_min - rng.range(0, 3),
                  tight.x_max + rng.range(0, 3), tight.y_max + rng.range(0, 3)};
        rec.bbox = b.clamped(size, size);
    }

    // clinical fields; gcs is independent of the image, label follows the rule
    rec.text.volume_ml = static_cast<double>(gt_area) * calib;
    rec.text.age = static_cast<int>(rng.range(18, 95));
    rec.text.gender = rng.bernoulli(0.5) ? "M" : "F";
    rec.text.stay_days = static_cast<int>(rng.range(1, 60));
    rec.text.onset_to_ct_hours = static_cast<int>(rng.range(1, 72));
    rec.text.gcs = static_cast<int>(rng.range(3, 15));
    rec.text.treatment = treatment_values()[static_cast<size_t>(rng.range(0, 1))];

    double mx = 0, my = 0;
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x)
            if (rec.gt_mask.at(y, x)) {
                mx += static_cast<double>(x);
                my += static_cast<double>(y);
            }
    mx /= static_cast<double>(gt_area);
    my /= static_cast<double>(gt_area);
    const double cx = static_cast<double>(size) / 2.0, cy = cx;
    const double dc = std::sqrt((mx - cx) * (mx - cx) + (my - cy) * (my - cy));
    if (dc <= 0.12 * static_cast<double>(size)) rec.text.location = "central";
    else if (mx < cx) rec.text.location = my < cy ? "left-anterior" : "left-posterior";
    else rec.text.location = my < cy ? "right-anterior" : "right-posterior";

    rec.text.rendered = render_text(rec.text);
    rec.label = prognosis_label(rec.text.volume_ml, rec.text.gcs, v_thr);
    return rec;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace detail_synth {

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << content;
    if (!f) throw DataError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline json case_to_json(const CaseRecord& rec) {
    return json{{"case_id", rec.case_id},
                {"age", rec.text.age},
                {"gender", rec.text.gender},
                {"stay_days", rec.text.stay_days},
                {"onset_to_ct_hours", rec.text.onset_to_ct_hours},
                {"gcs", rec.text.gcs},
                {"treatment", rec.text.treatment},
                {"location", rec.text.location},
                {"volume_ml", rec.text.volume_ml},
                {"rendered", rec.text.rendered},
                {"bbox", {rec.bbox.x_min, rec.bbox.y_min, rec.bbox.x_max, rec.bbox.y_max}},
                {"label", rec.label}};
}

}  // namespace detail_synth

inline DatasetManifest generate_dataset(int64_t n_cases, uint64_t seed,
                                        const std::string& out_dir, int64_t image_size = 128) {
    if (n_cases < 8) throw ConfigError("n_cases must be >= 8");
    if (image_size < 16 || image_size % 8)
        throw ConfigError("image_size must be >= 16 and divisible by 8");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir + "/images", ec);
    fs::create_directories(out_dir + "/masks", ec);
    fs::create_directories(out_dir + "/rough", ec);
    if (ec || !fs::is_directory(out_dir + "/rough"))
        throw DataError("cannot create dataset directory: " + out_dir);

    const double calib = calibration_for_size(image_size);
    const double v_thr = volume_threshold_ml(image_size);

    DatasetManifest man;
    man.seed = seed;
    man.generator_version = kGeneratorVersion;
    man.image_size = image_size;
    man.calibration_ml_per_px = calib;
    man.v_thr_ml = v_thr;
    man.dir = out_dir;

    std::string jsonl;
    for (int64_t i = 0; i < n_cases; ++i) {
        CaseRecord rec = generate_case(seed, i, image_size, v_thr, calib);
        write_png_gray(out_dir + "/images/" + rec.case_id + ".png", rec.image);
        write_png_gray(out_dir + "/masks/" + rec.case_id + ".png", mask_to_image(rec.gt_mask));
        write_png_gray(out_dir + "/rough/" + rec.case_id + ".png",
                       mask_to_image(rec.rough_mask));
        jsonl += detail_synth::case_to_json(rec).dump();
        jsonl += "\n";
        man.case_ids.push_back(rec.case_id);
        if (rec.label == 1) ++man.n_poor;
        else ++man.n_good;
    }
    detail_synth::write_file(out_dir + "/cases.jsonl", jsonl);

    const json mj{{"seed", seed},
                  {"generator_version", man.generator_version},
                  {"image_size", image_size},
                  {"calibration_ml_per_px", calib},
                  {"v_thr_ml", v_thr},
                  {"class_counts", {{"good", man.n_good}, {"poor", man.n_poor}}},
                  {"cases", man.case_ids}};
    detail_synth::write_file(out_dir + "/manifest.json", mj.dump(2) + "\n");
    return man;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<CaseRecord> cases;

    const CaseRecord& by_id(const std::string& id) const {
        for (const auto& c : cases)
            if (c.case_id == id) return c;
        throw DataError("unknown case_id: " + id);
    }
};

// Full invariant validation; any violation is an error naming the case.
inline Dataset load_dataset(const std::string& dir) {
    json mj;
    try {
        mj = json::parse(detail_synth::read_file(dir + "/manifest.json"));
    } catch (const json::exception& e) {
        throw DataError("manifest.json parse failure: " + std::string(e.what()));
    }
    Dataset ds;
    try {
        ds.manifest.seed = mj.at("seed").get<uint64_t>();
        ds.manifest.generator_version = mj.at("generator_version").get<std::string>();
        ds.manifest.image_size = mj.at("image_size").get<int64_t>();
        ds.manifest.calibration_ml_per_px = mj.at("calibration_ml_per_px").get<double>();
        ds.manifest.v_thr_ml = mj.at("v_thr_ml").get<double>();
        ds.manifest.n_good = mj.at("class_counts").at("good").get<int64_t>();
        ds.manifest.n_poor = mj.at("class_counts").at("poor").get<int64_t>();
        ds.manifest.case_ids = mj.at("cases").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError("manifest.json missing field: " + std::string(e.what()));
    }
    ds.manifest.dir = dir;
    const int64_t size = ds.manifest.image_size;

    std::map<std::string, json> by_id;
    {
        std::istringstream lines(detail_synth::read_file(dir + "/cases.jsonl"));
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            json cj;
            try {
                cj = json::parse(line);
            } catch (const json::exception& e) {
                throw DataError("cases.jsonl parse failure: " + std::string(e.what()));
            }
            by_id[cj.at("case_id").get<std::string>()] = cj;
        }
    }

    int64_t n_good = 0, n_poor = 0;
    for (const auto& id : ds.manifest.case_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("case " + id + ": missing from cases.jsonl");
        const json& cj = it->second;
        CaseRecord rec;
        rec.case_id = id;
        try {
            rec.text.age = cj.at("age").get<int>();
            rec.text.gender = cj.at("gender").get<std::string>();
            rec.text.stay_days = cj.at("stay_days").get<int>();
            rec.text.onset_to_ct_hours = cj.at("onset_to_ct_hours").get<int>();
            rec.text.gcs = cj.at("gcs").get<int>();
            rec.text.treatment = cj.at("treatment").get<std::string>();
            rec.text.location = cj.at("location").get<std::string>();
            rec.text.volume_ml = cj.at("volume_ml").get<double>();
            rec.text.rendered = cj.at("rendered").get<std::string>();
            const auto bb = cj.at("bbox").get<std::vector<int64_t>>();
            if (bb.size() != 4) throw DataError("case " + id + ": bbox must have 4 entries");
            rec.bbox = {bb[0], bb[1], bb[2], bb[3]};
            rec.label = cj.at("label").get<int>();
        } catch (const json::exception& e) {
            throw DataError("case " + id + ": bad record: " + std::string(e.what()));
        }
        if (rec.label != 0 && rec.label != 1)
            throw DataError("case " + id + ": label outside {0,1}");
        try {
            validate_fields(rec.text, "case " + id);
        } catch (const DataError&) {
            throw;
        }
        if (rec.text.rendered != render_text(rec.text))
            throw DataError("case " + id + ": rendered text does not match its fields");

        rec.image = read_png_gray(dir + "/images/" + id + ".png");
        const GrayImage gt_img = read_png_gray(dir + "/masks/" + id + ".png");
        const GrayImage rough_img = read_png_gray(dir + "/rough/" + id + ".png");
        if (rec.image.width != size || rec.image.height != size)
            throw DataError("case " + id + ": image dimensions mismatch");
        if (gt_img.width != size || gt_img.height != size)
            throw DataError("case " + id + ": gt mask dimensions mismatch");
        if (rough_img.width != size || rough_img.height != size)
            throw DataError("case " + id + ": rough mask dimensions mismatch");
        rec.gt_mask = image_to_mask(gt_img, true, id + " (gt)");
        rec.rough_mask = image_to_mask(rough_img, true, id + " (rough)");

        const int64_t gt_area = rec.gt_mask.area();
        const double expect_vol =
            static_cast<double>(gt_area) * ds.manifest.calibration_ml_per_px;
        if (std::abs(rec.text.volume_ml - expect_vol) > 1e-6)
            throw DataError("case " + id + ": volume_ml inconsistent with mask area");
        if (!rec.bbox.valid() || rec.bbox.x_min < 0 || rec.bbox.y_min < 0 ||
            rec.bbox.x_max > size || rec.bbox.y_max > size)
            throw DataError("case " + id + ": bbox outside image");
        int64_t inside = 0;
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x)
                if (rec.gt_mask.at(y, x) && rec.bbox.contains(x, y)) ++inside;
        if (static_cast<double>(inside) < 0.95 * static_cast<double>(gt_area))
            throw DataError("case " + id + ": bbox contains <95% of foreground");
        if (metrics::jaccard(rec.rough_mask, rec.gt_mask) < 30.0)
            throw DataError("case " + id + ": rough mask overlap below Jaccard 0.3");

        if (rec.label == 1) ++n_poor;
        else ++n_good;
        ds.cases.push_back(std::move(rec));
    }
    if (n_good != ds.manifest.n_good || n_poor != ds.manifest.n_poor)
        throw DataError("class_counts in manifest do not match case labels");
    return ds;
}

}  // namespace ichscnet
