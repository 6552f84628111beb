#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichscnet/metrics.hpp"
#include "ichscnet/network.hpp"

namespace ichscnet {

struct FoldMetrics {
    int64_t fold_index = 0;
    int64_t n_val = 0;
    bool has_seg = false;
    bool has_cla = false;
    bool has_vm0 = false;
    SegAggregate seg;
    ClaScores cla;
    double vm0_dsc = 0;  // decoder valid mask at the finest scale vs coarse GT
};

struct CaseEval {
    std::string case_id;
    int64_t fold = 0;
    int label = 0;
    bool has_seg = false, has_cla = false, has_vm0 = false;
    SegScores seg;
    double p_poor = 0;
    int predicted = 0;
    double vm0_dsc = 0;
};

struct RunReport {
    nlohmann::json config;
    std::string positive_class = "poor";
    double wall_time_sec = 0;
    std::string steps_file = "steps.jsonl";
    std::vector<FoldMetrics> folds;
    std::vector<CaseEval> cases;
};

inline nlohmann::json seg_aggregate_to_json(const SegAggregate& a) {
    return {{"dsc", a.dsc},
            {"jaccard", a.jaccard},
            {"hd95", a.hd95},
            {"pro", a.pro},
            {"cases", a.cases},
            {"hd95_excluded", a.hd95_excluded},
            {"pro_excluded", a.pro_excluded},
            {"pooled_dsc", a.pooled_dsc},
            {"pooled_jaccard", a.pooled_jaccard},
            {"pooled_pro", a.pooled_pro},
            {"pooled_hd95", a.pooled_hd95},
            {"pooled_pro_defined", a.pooled_pro_defined},
            {"pooled_hd95_defined", a.pooled_hd95_defined}};
}

inline SegAggregate seg_aggregate_from_json(const nlohmann::json& j) {
    SegAggregate a;
    j.at("dsc").get_to(a.dsc);
    j.at("jaccard").get_to(a.jaccard);
    j.at("hd95").get_to(a.hd95);
    j.at("pro").get_to(a.pro);
    j.at("cases").get_to(a.cases);
    j.at("hd95_excluded").get_to(a.hd95_excluded);
    j.at("pro_excluded").get_to(a.pro_excluded);
    j.at("pooled_dsc").get_to(a.pooled_dsc);
    j.at("pooled_jaccard").get_to(a.pooled_jaccard);
    j.at("pooled_pro").get_to(a.pooled_pro);
    j.at("pooled_hd95").get_to(a.pooled_hd95);
    j.at("pooled_pro_defined").get_to(a.pooled_pro_defined);
    j.at("pooled_hd95_defined").get_to(a.pooled_hd95_defined);
    return a;
}

inline nlohmann::json cla_to_json(const ClaScores& c) {
    return {{"acc", c.acc},
            {"rec", c.rec},
            {"pre", c.pre},
            {"auc", c.auc},
            {"rec_flagged", c.rec_flagged},
            {"pre_flagged", c.pre_flagged},
            {"auc_flagged", c.auc_flagged}};
}

inline ClaScores cla_from_json(const nlohmann::json& j) {
    ClaScores c;
    j.at("acc").get_to(c.acc);
    j.at("rec").get_to(c.rec);
    j.at("pre").get_to(c.pre);
    j.at("auc").get_to(c.auc);
    j.at("rec_flagged").get_to(c.rec_flagged);
    j.at("pre_flagged").get_to(c.pre_flagged);
    j.at("auc_flagged").get_to(c.auc_flagged);
    return c;
}

// Arithmetic means over folds.  Flag-excluded classification metrics also
// record how many folds were skipped.
inline nlohmann::json report_mean_json(const RunReport& r) {
    nlohmann::json mean;
    const double nf = static_cast<double>(r.folds.size());
    bool any_seg = false, any_cla = false, any_vm0 = false;
    for (const auto& f : r.folds) {
        any_seg |= f.has_seg;
        any_cla |= f.has_cla;
        any_vm0 |= f.has_vm0;
    }
    if (any_seg) {
        double dsc = 0, jac = 0, hd = 0, pro = 0, pdsc = 0, pjac = 0, ppro = 0, phd = 0;
        for (const auto& f : r.folds) {
            dsc += f.seg.dsc;
            jac += f.seg.jaccard;
            hd += f.seg.hd95;
            pro += f.seg.pro;
            pdsc += f.seg.pooled_dsc;
            pjac += f.seg.pooled_jaccard;
            ppro += f.seg.pooled_pro;
            phd += f.seg.pooled_hd95;
        }
        mean["seg"] = {{"dsc", dsc / nf},         {"jaccard", jac / nf},
                       {"hd95", hd / nf},         {"pro", pro / nf},
                       {"pooled_dsc", pdsc / nf}, {"pooled_jaccard", pjac / nf},
                       {"pooled_pro", ppro / nf}, {"pooled_hd95", phd / nf}};
    }
    if (any_cla) {
        double acc = 0;
        double rec = 0, pre = 0, auc = 0;
        int64_t rec_n = 0, pre_n = 0, auc_n = 0;
        for (const auto& f : r.folds) {
            acc += f.cla.acc;
            if (!f.cla.rec_flagged) { rec += f.cla.rec; ++rec_n; }
            if (!f.cla.pre_flagged) { pre += f.cla.pre; ++pre_n; }
            if (!f.cla.auc_flagged) { auc += f.cla.auc; ++auc_n; }
        }
        mean["cla"] = {
            {"acc", acc / nf},
            {"rec", rec_n ? rec / static_cast<double>(rec_n) : 0.0},
            {"pre", pre_n ? pre / static_cast<double>(pre_n) : 0.0},
            {"auc", auc_n ? auc / static_cast<double>(auc_n) : 0.0},
            {"rec_excluded_folds", static_cast<int64_t>(r.folds.size()) - rec_n},
            {"pre_excluded_folds", static_cast<int64_t>(r.folds.size()) - pre_n},
            {"auc_excluded_folds", static_cast<int64_t>(r.folds.size()) - auc_n}};
    }
    if (any_vm0) {
        double v = 0;
        for (const auto& f : r.folds) v += f.vm0_dsc;
        mean["vm0_dsc"] = v / nf;
    }
    return mean;
}

inline nlohmann::json metric_definitions_json() {
    return {{"dsc", "2|A∩B| / (|A|+|B|) in percent; 100 when both masks are empty"},
            {"jaccard", "|A∩B| / |A∪B| in percent; 100 when both masks are empty"},
            {"hd95",
             "95th percentile (linear interpolation) of the combined directed "
             "boundary distances, 8-connected boundaries; empty-side cases use the "
             "image-diagonal sentinel and are excluded from fold means"},
            {"pro", "mean over GT connected components of the covered fraction, percent"},
            {"acc", "fraction of correct predictions at threshold p(poor) >= 0.5"},
            {"rec", "TP / (TP+FN), positive class = poor outcome"},
            {"pre", "TP / (TP+FP), positive class = poor outcome"},
            {"auc", "Mann-Whitney rank statistic with midranks for ties, percent"},
            {"aggregation",
             "primary values are arithmetic means over folds of per-fold macro "
             "scores; pooled variants merge counts (or distances) across cases "
             "before scoring"}};
}

inline nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
        nlohmann::json jf = {{"fold_index", f.fold_index}, {"n_val", f.n_val}};
        jf["seg"] = f.has_seg ? seg_aggregate_to_json(f.seg) : nlohmann::json(nullptr);
        jf["cla"] = f.has_cla ? cla_to_json(f.cla) : nlohmann::json(nullptr);
        jf["vm0_dsc"] = f.has_vm0 ? nlohmann::json(f.vm0_dsc) : nlohmann::json(nullptr);
        folds.push_back(std::move(jf));
    }
    return {{"config", r.config},
            {"positive_class", r.positive_class},
            {"wall_time_sec", r.wall_time_sec},
            {"steps_file", r.steps_file},
            {"folds", folds},
            {"mean", report_mean_json(r)},
            {"metric_definitions", metric_definitions_json()}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
    RunReport r;
    try {
        r.config = j.at("config");
        j.at("positive_class").get_to(r.positive_class);
        j.at("wall_time_sec").get_to(r.wall_time_sec);
        j.at("steps_file").get_to(r.steps_file);
        for (const auto& jf : j.at("folds")) {
            FoldMetrics f;
            jf.at("fold_index").get_to(f.fold_index);
            jf.at("n_val").get_to(f.n_val);
            if (!jf.at("seg").is_null()) {
                f.has_seg = true;
                f.seg = seg_aggregate_from_json(jf.at("seg"));
            }
            if (!jf.at("cla").is_null()) {
                f.has_cla = true;
                f.cla = cla_from_json(jf.at("cla"));
            }
            if (!jf.at("vm0_dsc").is_null()) {
                f.has_vm0 = true;
                jf.at("vm0_dsc").get_to(f.vm0_dsc);
            }
            r.folds.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report document malformed: ") + e.what());
    }
    return r;
}

inline std::string format_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline void write_case_csv(const std::string& path, const std::vector<CaseEval>& cases) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write case CSV: " + path);
    out << "case_id,fold,label,dsc,jaccard,hd95,hd95_flagged,pro,pro_flagged,"
           "p_poor,predicted,vm0_dsc\n";
    auto cell = [](bool present, double v) {
        return present ? std::to_string(v) : std::string();
    };
    for (const auto& c : cases) {
        out << c.case_id << ',' << c.fold << ',' << c.label << ','
            << cell(c.has_seg, c.seg.dsc) << ',' << cell(c.has_seg, c.seg.jaccard) << ','
            << cell(c.has_seg, c.seg.hd95) << ','
            << (c.has_seg ? (c.seg.hd95_flagged ? "1" : "0") : "") << ','
            << cell(c.has_seg, c.seg.pro) << ','
            << (c.has_seg ? (c.seg.pro_flagged ? "1" : "0") : "") << ','
            << cell(c.has_cla, c.p_poor) << ','
            << (c.has_cla ? std::to_string(c.predicted) : std::string()) << ','
            << cell(c.has_vm0, c.vm0_dsc) << '\n';
    }
    if (!out) throw DataError("short write on case CSV: " + path);
}

// ---------------------------------------------------------------------------
// ablation table
// ---------------------------------------------------------------------------

// Which metric columns a mode's table row shows: single-task rows and the
// single-path variants report only their task's four columns.
inline bool mode_reports_seg(Mode m) {
    return m == Mode::full || m == Mode::sam_clip_no_mtff || m == Mode::seg_only ||
           m == Mode::sam_only || m == Mode::sam_plus_mtff;
}

inline bool mode_reports_cla(Mode m) {
    return m == Mode::full || m == Mode::sam_clip_no_mtff || m == Mode::cla_only ||
           m == Mode::clip_only || m == Mode::clip_plus_mtff;
}

struct AblationRow {
    std::string mode;
    // empty string renders as "-"
    std::string dsc, jaccard, hd95, pro, acc, rec, pre, auc;
};

inline AblationRow ablation_row(Mode mode, const RunReport& r) {
    AblationRow row;
    row.mode = to_string(mode);
    const nlohmann::json mean = report_mean_json(r);
    if (mode_reports_seg(mode) && mean.contains("seg")) {
        row.dsc = format_cell(mean["seg"]["dsc"].get<double>());
        row.jaccard = format_cell(mean["seg"]["jaccard"].get<double>());
        row.hd95 = format_cell(mean["seg"]["hd95"].get<double>());
        row.pro = format_cell(mean["seg"]["pro"].get<double>());
    }
    if (mode_reports_cla(mode) && mean.contains("cla")) {
        row.acc = format_cell(mean["cla"]["acc"].get<double>());
        row.rec = format_cell(mean["cla"]["rec"].get<double>());
        row.pre = format_cell(mean["cla"]["pre"].get<double>());
        row.auc = format_cell(mean["cla"]["auc"].get<double>());
    }
    return row;
}

inline const std::vector<std::string>& ablation_columns() {
    static const std::vector<std::string> cols = {"mode", "dsc", "jaccard", "hd95",
                                                  "pro",  "acc", "rec",     "pre",
                                                  "auc"};
    return cols;
}

inline void write_ablation_csv(const std::string& path,
                               const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ablation CSV: " + path);
    const auto& cols = ablation_columns();
    for (size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    auto cell = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
    for (const auto& r : rows)
        out << r.mode << ',' << cell(r.dsc) << ',' << cell(r.jaccard) << ','
            << cell(r.hd95) << ',' << cell(r.pro) << ',' << cell(r.acc) << ','
            << cell(r.rec) << ',' << cell(r.pre) << ',' << cell(r.auc) << '\n';
    if (!out) throw DataError("short write on ablation CSV: " + path);
}

inline std::vector<AblationRow> read_ablation_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ablation CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty ablation CSV: " + path);
    std::vector<AblationRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        while (f.size() < 9) f.emplace_back();
        auto cell = [](const std::string& s) { return s == "-" ? std::string() : s; };
        AblationRow r;
        r.mode = f[0];
        r.dsc = cell(f[1]);
        r.jaccard = cell(f[2]);
        r.hd95 = cell(f[3]);
        r.pro = cell(f[4]);
        r.acc = cell(f[5]);
        r.rec = cell(f[6]);
        r.pre = cell(f[7]);
        r.auc = cell(f[8]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// text rendering
// ---------------------------------------------------------------------------

inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return "";
    std::vector<size_t> width(rows[0].size(), 0);
    for (const auto& r : rows)
        for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream out;
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        for (size_t c = 0; c < rows[ri].size(); ++c) {
            out << (c ? "  " : "");
            out << rows[ri][c];
            out << std::string(width[c] - rows[ri][c].size(), ' ');
        }
        out << '\n';
        if (ri == 0) {
            size_t total = 0;
            for (size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 2 : 0);
            out << std::string(total, '-') << '\n';
        }
    }
    return out.str();
}

inline std::string render_ablation(const std::vector<AblationRow>& rows) {
    std::vector<std::vector<std::string>> t;
    t.push_back({"mode", "DSC", "Jaccard", "95HD", "PRO", "Acc", "Rec", "Pre", "AUC"});
    auto cell = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
    for (const auto& r : rows)
        t.push_back({r.mode, cell(r.dsc), cell(r.jaccard), cell(r.hd95), cell(r.pro),
                     cell(r.acc), cell(r.rec), cell(r.pre), cell(r.auc)});
    return render_table(t);
}

inline std::string render_run_report(const RunReport& r) {
    std::vector<std::vector<std::string>> t;
    std::vector<std::string> head = {"metric"};
    for (const auto& f : r.folds) head.push_back("fold" + std::to_string(f.fold_index));
    head.push_back("mean");
    t.push_back(head);

    const nlohmann::json mean = report_mean_json(r);
    auto push_row = [&](const std::string& name, auto get_fold, double mean_v,
                        bool enabled) {
        if (!enabled) return;
        std::vector<std::string> row = {name};
        for (const auto& f : r.folds) row.push_back(get_fold(f));
        row.push_back(format_cell(mean_v));
        t.push_back(std::move(row));
    };

    bool any_seg = false, any_cla = false, any_vm0 = false;
    for (const auto& f : r.folds) {
        any_seg |= f.has_seg;
        any_cla |= f.has_cla;
        any_vm0 |= f.has_vm0;
    }
    if (any_seg) {
        push_row("DSC",
                 [](const FoldMetrics& f) {
                     return f.has_seg ? format_cell(f.seg.dsc) : std::string("-");
                 },
                 mean["seg"]["dsc"].get<double>(), true);
        push_row("Jaccard",
                 [](const FoldMetrics& f) {
                     return f.has_seg ? format_cell(f.seg.jaccard) : std::string("-");
                 },
                 mean["seg"]["jaccard"].get<double>(), true);
        push_row("95HD",
                 [](const FoldMetrics& f) {
                     return f.has_seg ? format_cell(f.seg.hd95) : std::string("-");
                 },
                 mean["seg"]["hd95"].get<double>(), true);
        push_row("PRO",
                 [](const FoldMetrics& f) {
                     return f.has_seg ? format_cell(f.seg.pro) : std::string("-");
                 },
                 mean["seg"]["pro"].get<double>(), true);
    }
    if (any_cla) {
        push_row("Acc",
                 [](const FoldMetrics& f) {
                     return f.has_cla ? format_cell(f.cla.acc) : std::string("-");
                 },
                 mean["cla"]["acc"].get<double>(), true);
        push_row("Rec",
                 [](const FoldMetrics& f) {
                     return f.has_cla && !f.cla.rec_flagged ? format_cell(f.cla.rec)
                                                            : std::string("-");
                 },
                 mean["cla"]["rec"].get<double>(), true);
        push_row("Pre",
                 [](const FoldMetrics& f) {
                     return f.has_cla && !f.cla.pre_flagged ? format_cell(f.cla.pre)
                                                            : std::string("-");
                 },
                 mean["cla"]["pre"].get<double>(), true);
        push_row("AUC",
                 [](const FoldMetrics& f) {
                     return f.has_cla && !f.cla.auc_flagged ? format_cell(f.cla.auc)
                                                            : std::string("-");
                 },
                 mean["cla"]["auc"].get<double>(), true);
    }
    if (any_vm0)
        push_row("VM0-DSC",
                 [](const FoldMetrics& f) {
                     return f.has_vm0 ? format_cell(f.vm0_dsc) : std::string("-");
                 },
                 mean["vm0_dsc"].get<double>(), true);

    std::ostringstream out;
    out << "mode: " << r.config.value("mode", std::string("?"))
        << "   folds: " << r.folds.size() << "   positive class: " << r.positive_class
        << "\n\n"
        << render_table(t);
    return out.str();
}

}  // namespace ichscnet
