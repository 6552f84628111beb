#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ichscnet/checkpoint.hpp"
#include "ichscnet/config.hpp"
#include "ichscnet/folds.hpp"
#include "ichscnet/losses.hpp"
#include "ichscnet/metrics.hpp"
#include "ichscnet/network.hpp"
#include "ichscnet/optimizer.hpp"
#include "ichscnet/report.hpp"
#include "ichscnet/synth.hpp"

namespace ichscnet {

// Prompt sampling seeds.  Training varies them per fold/epoch/case; evaluation
// derives them from the run seed and the case's dataset position only, so a
// reloaded checkpoint reproduces validation metrics exactly.
inline uint64_t train_prompt_seed(uint64_t run_seed, int64_t fold, int64_t epoch,
                                  int64_t case_index) {
    return mix64(mix64(run_seed, hash_tag("train_prompt")),
                 mix64(mix64(static_cast<uint64_t>(fold), static_cast<uint64_t>(epoch)),
                       static_cast<uint64_t>(case_index)));
}

inline uint64_t eval_prompt_seed(uint64_t run_seed, int64_t case_index) {
    return mix64(mix64(run_seed, hash_tag("eval_prompt")),
                 static_cast<uint64_t>(case_index));
}

inline uint64_t fold_model_seed(uint64_t run_seed, int64_t fold) {
    return mix64(mix64(run_seed, hash_tag("model")), static_cast<uint64_t>(fold));
}

template <typename T>
CaseInput<T> case_input(const CaseRecord& rec, uint64_t prompt_seed) {
    CaseInput<T> in;
    in.image = image_to_tensor<T>(rec.image);
    in.text = rec.text.rendered;
    in.bbox = rec.bbox;
    in.rough = rec.rough_mask;
    in.prompt_seed = prompt_seed;
    return in;
}

inline std::unordered_map<std::string, int64_t> case_index_map(const Dataset& ds) {
    std::unordered_map<std::string, int64_t> m;
    for (size_t i = 0; i < ds.cases.size(); ++i)
        m[ds.cases[i].case_id] = static_cast<int64_t>(i);
    return m;
}

template <typename T>
struct EvalResult {
    FoldMetrics fold;
    std::vector<CaseEval> cases;
};

template <typename T>
EvalResult<T> evaluate_model(Model<T>& model, const Dataset& ds,
                             const std::vector<std::string>& ids, uint64_t run_seed,
                             int64_t fold_index) {
    const auto index_of = case_index_map(ds);
    const Mode mode = model.config().mode;
    const int64_t size = model.config().image_size;
    const bool has_seg = mode_has_seg_head(mode);
    const bool has_cla = mode_has_classifier(mode);

    EvalResult<T> result;
    result.fold.fold_index = fold_index;
    result.fold.n_val = static_cast<int64_t>(ids.size());

    SegAccumulator seg_acc;
    std::vector<double> probs;
    std::vector<int> labels;
    double vm0_sum = 0;

    for (const auto& id : ids) {
        const CaseRecord& rec = ds.by_id(id);
        auto it = index_of.find(id);
        if (it == index_of.end()) throw DataError("case " + id + ": not in dataset");
        auto out = model.forward(case_input<T>(rec, eval_prompt_seed(run_seed, it->second)));

        CaseEval ce;
        ce.case_id = id;
        ce.fold = fold_index;
        ce.label = rec.label;
        if (has_seg) {
            const Mask pred = tensor_to_mask(out.seg_full.value());
            ce.seg = seg_scores(pred, rec.gt_mask);
            ce.has_seg = true;
            seg_acc.add(pred, rec.gt_mask);
        }
        {
            const Mask vm0 = tensor_to_mask(out.vms[0].value());
            const Mask gt_r = downsample_mask(rec.gt_mask, size / model.r());
            ce.vm0_dsc = seg_scores(vm0, gt_r).dsc;
            ce.has_vm0 = true;
            vm0_sum += ce.vm0_dsc;
        }
        if (has_cla) {
            const double p_poor = static_cast<double>(out.cla_probs.value().data()[1]);
            ce.p_poor = p_poor;
            ce.predicted = p_poor >= 0.5 ? 1 : 0;
            ce.has_cla = true;
            probs.push_back(p_poor);
            labels.push_back(rec.label);
        }
        result.cases.push_back(std::move(ce));
    }

    if (has_seg) {
        result.fold.seg = seg_acc.aggregate();
        result.fold.has_seg = true;
    }
    if (has_cla) {
        result.fold.cla = classification_scores(probs, labels);
        result.fold.has_cla = true;
    }
    if (!ids.empty()) {
        result.fold.vm0_dsc = vm0_sum / static_cast<double>(ids.size());
        result.fold.has_vm0 = true;
    }
    return result;
}

// Cross-entropy class weights computed on the training split only.
template <typename T>
void apply_class_weights(LossWeights<T>& w, const Dataset& ds,
                         const std::vector<std::string>& train_ids, int64_t fold_index) {
    int64_t n0 = 0, n1 = 0;
    for (const auto& id : train_ids) (ds.by_id(id).label ? n1 : n0)++;
    if (n0 == 0 || n1 == 0)
        throw DataError("fold " + std::to_string(fold_index) +
                        ": train split lacks class " + (n0 == 0 ? "0" : "1") +
                        ", class weights undefined");
    const double total = static_cast<double>(n0 + n1);
    w.xi0 = static_cast<T>(total / (2.0 * static_cast<double>(n0)));
    w.xi1 = static_cast<T>(total / (2.0 * static_cast<double>(n1)));
}

template <typename T>
ModelConfig model_config_for(const RunConfig& cfg, const Dataset& ds) {
    ModelConfig mc;
    mc.mode = parse_mode(cfg.mode);
    mc.image_size = ds.manifest.image_size;
    mc.classifier = cfg.classifier_config();
    return mc;
}

namespace detail {

template <typename T>
nlohmann::json step_line(int64_t fold, int64_t epoch, int64_t step, int64_t batch_n,
                         const LossBreakdown& b, double grad_norm, bool finite) {
    nlohmann::json per_scale = nlohmann::json::array();
    for (const auto& [d, j] : b.seg_per_scale) per_scale.push_back({d, j});
    return {{"fold", fold},
            {"epoch", epoch},
            {"step", step},
            {"n", batch_n},
            {"total", b.total},
            {"seg", b.has_seg ? nlohmann::json(b.seg_total) : nlohmann::json(nullptr)},
            {"cla", b.has_cla ? nlohmann::json(b.cla) : nlohmann::json(nullptr)},
            {"mta", b.has_mta ? nlohmann::json(b.mta) : nlohmann::json(nullptr)},
            {"seg_per_scale", per_scale},
            {"grad_norm", grad_norm},
            {"finite", finite}};
}

inline bool breakdown_finite(const LossBreakdown& b) {
    if (!std::isfinite(b.total)) return false;
    if (b.has_seg && !std::isfinite(b.seg_total)) return false;
    if (b.has_cla && !std::isfinite(b.cla)) return false;
    if (b.has_mta && !std::isfinite(b.mta)) return false;
    return true;
}

}  // namespace detail

template <typename T>
RunReport train_impl(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    Dataset ds = load_dataset(cfg.dataset_dir);
    const auto index_of = case_index_map(ds);

    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
    {
        std::ofstream f(fs::path(cfg.out_dir) / "config.json");
        if (!f) throw DataError("cannot write config.json in " + cfg.out_dir);
        f << cfg.to_json().dump(2) << '\n';
    }

    const std::vector<FoldSplit> folds =
        cfg.train_eq_val ? make_identity_split(ds) : make_folds(ds, cfg.folds, cfg.seed);
    {
        std::ofstream f(fs::path(cfg.out_dir) / "folds.json");
        if (!f) throw DataError("cannot write folds.json in " + cfg.out_dir);
        f << folds_to_json(folds, cfg.seed).dump(2) << '\n';
    }

    std::ofstream steps_out(fs::path(cfg.out_dir) / "steps.jsonl");
    if (!steps_out) throw DataError("cannot write steps.jsonl in " + cfg.out_dir);

    RunReport report;
    report.config = cfg.to_json();

    const Mode mode = parse_mode(cfg.mode);
    const ModelConfig mc = model_config_for<T>(cfg, ds);

    for (const FoldSplit& fold : folds) {
        Model<T> model(mc, fold_model_seed(cfg.seed, fold.fold_index));
        LossWeights<T> w = cfg.template loss_weights<T>();
        if (mode_has_classifier(mode))
            apply_class_weights(w, ds, fold.train_ids, fold.fold_index);
        AdamW<T> opt(model.store(), cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2,
                     cfg.grad_clip);
        Rng order_rng(mix64(cfg.seed, static_cast<uint64_t>(fold.fold_index)),
                      "batch_order");

        std::vector<int64_t> order;
        order.reserve(fold.train_ids.size());
        for (const auto& id : fold.train_ids) order.push_back(index_of.at(id));

        int64_t step_in_fold = 0;
        bool done = false;
        for (int64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[order_rng.below(i)]);
            for (size_t start = 0; start < order.size() && !done;
                 start += static_cast<size_t>(cfg.batch_size)) {
                const size_t stop =
                    std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));

                std::vector<SegLossParts<T>> seg_parts;
                std::vector<Var<T>> cla_terms, mta_terms;
                for (size_t bi = start; bi < stop; ++bi) {
                    const CaseRecord& rec = ds.cases[static_cast<size_t>(order[bi])];
                    auto out = model.forward(case_input<T>(
                        rec, train_prompt_seed(cfg.seed, fold.fold_index, epoch,
                                               order[bi])));
                    if (mode_has_seg_head(mode)) {
                        std::vector<Tensor<T>> gts;
                        for (const auto& sp : out.stage_probs) {
                            const int64_t h = sp.value().shape()[1];
                            gts.push_back(mask_to_tensor<T>(
                                downsample_mask(rec.gt_mask, mc.image_size / h)));
                        }
                        seg_parts.push_back(seg_loss(out.stage_probs, gts, w));
                    }
                    if (mode_has_classifier(mode))
                        cla_terms.push_back(cla_loss(out.cla_probs, rec.label, w));
                    if (mode_uses_mta(mode))
                        mta_terms.push_back(mta_loss(out.p_dist, out.seg_r, w));
                }

                auto tl = total_loss(seg_parts, cla_terms, mta_terms, w);
                const bool finite = detail::breakdown_finite(tl.breakdown);
                if (!finite) {
                    steps_out << detail::step_line<T>(fold.fold_index, epoch,
                                                      step_in_fold + 1,
                                                      static_cast<int64_t>(stop - start),
                                                      tl.breakdown, 0.0, false)
                                     .dump()
                              << '\n';
                    steps_out.flush();
                    throw NumericError("non-finite loss at fold " +
                                       std::to_string(fold.fold_index) + " epoch " +
                                       std::to_string(epoch) + " step " +
                                       std::to_string(step_in_fold + 1));
                }
                backward(tl.total);
                const double gn = opt.grad_norm();
                opt.step();
                model.store().zero_grads();
                ++step_in_fold;
                steps_out << detail::step_line<T>(fold.fold_index, epoch, step_in_fold,
                                                  static_cast<int64_t>(stop - start),
                                                  tl.breakdown, gn, true)
                                 .dump()
                          << '\n';
                if (cfg.max_steps > 0 && step_in_fold >= cfg.max_steps) done = true;
            }
        }
        steps_out.flush();

        save_checkpoint((fs::path(cfg.out_dir) / "checkpoints" /
                         ("fold" + std::to_string(fold.fold_index) + ".ckpt"))
                            .string(),
                        model.store(), cfg.to_json(), fold.fold_index,
                        order_rng.state_string());

        auto er = evaluate_model(model, ds, fold.val_ids, cfg.seed, fold.fold_index);
        report.folds.push_back(er.fold);
        for (auto& c : er.cases) report.cases.push_back(std::move(c));
    }

    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        std::ofstream f(fs::path(cfg.out_dir) / "report.json");
        if (!f) throw DataError("cannot write report.json in " + cfg.out_dir);
        f << report_to_json(report).dump(2) << '\n';
    }
    write_case_csv((fs::path(cfg.out_dir) / "report.csv").string(), report.cases);
    return report;
}

inline RunReport train(const RunConfig& cfg) {
    return parse_precision(cfg.precision) == Precision::dbl ? train_impl<double>(cfg)
                                                            : train_impl<float>(cfg);
}

template <typename T>
RunReport evaluate_impl(const CheckpointHeader& header, const std::string& checkpoint_path,
                        const std::string& dataset_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = RunConfig::from_json(header.config);
    cfg.dataset_dir = dataset_dir;
    cfg.validate();

    Dataset ds = load_dataset(dataset_dir);
    Model<T> model(model_config_for<T>(cfg, ds), fold_model_seed(cfg.seed, header.fold_index));
    load_checkpoint(checkpoint_path, model.store());

    const std::vector<FoldSplit> folds =
        cfg.train_eq_val ? make_identity_split(ds) : make_folds(ds, cfg.folds, cfg.seed);
    if (header.fold_index < 0 ||
        header.fold_index >= static_cast<int64_t>(folds.size()))
        throw DataError("checkpoint fold index " + std::to_string(header.fold_index) +
                        " out of range for " + std::to_string(folds.size()) + " folds");
    const FoldSplit& fold = folds[static_cast<size_t>(header.fold_index)];

    auto er = evaluate_model(model, ds, fold.val_ids, cfg.seed, fold.fold_index);
    RunReport report;
    report.config = cfg.to_json();
    report.folds.push_back(er.fold);
    report.cases = std::move(er.cases);
    report.steps_file = "";
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline RunReport evaluate(const std::string& checkpoint_path,
                          const std::string& dataset_dir) {
    const CheckpointHeader header = read_checkpoint_header(checkpoint_path);
    return header.dtype == "f64"
               ? evaluate_impl<double>(header, checkpoint_path, dataset_dir)
               : evaluate_impl<float>(header, checkpoint_path, dataset_dir);
}

// Runs every mode with the base config's dataset, seed, and fold layout; each
// mode writes a full run directory under the base out_dir.
inline std::vector<AblationRow> ablate(const RunConfig& base) {
    namespace fs = std::filesystem;
    base.validate();
    fs::create_directories(base.out_dir);
    std::vector<AblationRow> rows;
    for (Mode m : kAllModes) {
        RunConfig c = base;
        c.mode = to_string(m);
        c.out_dir = (fs::path(base.out_dir) / to_string(m)).string();
        rows.push_back(ablation_row(m, train(c)));
    }
    write_ablation_csv((fs::path(base.out_dir) / "ablation.csv").string(), rows);
    {
        std::ofstream f(fs::path(base.out_dir) / "ablation.txt");
        if (!f) throw DataError("cannot write ablation.txt in " + base.out_dir);
        f << render_ablation(rows);
    }
    return rows;
}

// `report` subcommand: renders whichever artifact the directory holds.
inline std::string render_run_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path ab = fs::path(dir) / "ablation.csv";
    if (fs::exists(ab)) return render_ablation(read_ablation_csv(ab.string()));
    const fs::path rp = fs::path(dir) / "report.json";
    if (!fs::exists(rp)) throw DataError("no report.json or ablation.csv in " + dir);
    std::ifstream in(rp);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("report.json parse error: " + std::string(e.what()));
    }
    return render_run_report(report_from_json(j));
}

}  // namespace ichscnet
