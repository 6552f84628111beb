#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ichscnet/train.hpp"

using namespace ichscnet;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path root;
    fs::path data;       // 12 cases, 16 px, both classes >= 3
    uint64_t data_seed = 0;
    fs::path data24;     // 10 cases, 24 px, both classes >= 2
    uint64_t data24_seed = 0;
};

const Fixture& fixture() {
    static Fixture fx = [] {
        Fixture f;
        f.root = fs::temp_directory_path() / "ich_harness_fixture";
        fs::remove_all(f.root);
        fs::create_directories(f.root);
        f.data = f.root / "data";
        for (uint64_t seed = 1;; ++seed) {
            const DatasetManifest m = generate_dataset(12, seed, f.data.string(), 16);
            if (std::min(m.n_good, m.n_poor) >= 3) {
                f.data_seed = seed;
                break;
            }
            fs::remove_all(f.data);
        }
        f.data24 = f.root / "data24";
        for (uint64_t seed = 1;; ++seed) {
            const DatasetManifest m = generate_dataset(10, seed, f.data24.string(), 24);
            if (std::min(m.n_good, m.n_poor) >= 2) {
                f.data24_seed = seed;
                break;
            }
            fs::remove_all(f.data24);
        }
        return f;
    }();
    return fx;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fixture().root / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig smoke_config(const std::string& out_name) {
    RunConfig cfg;
    cfg.dataset_dir = fixture().data.string();
    cfg.out_dir = (fixture().root / out_name).string();
    fs::remove_all(cfg.out_dir);
    cfg.mode = "full";
    cfg.precision = "double";
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.folds = 2;
    cfg.seed = 17;
    cfg.lr = 1e-3;
    return cfg;
}

int run_cli(const std::string& args, const fs::path& stdout_file = {}) {
    std::string cmd = std::string("\"") + ICHSCNET_BIN + "\" " + args;
    if (!stdout_file.empty())
        cmd += " > \"" + stdout_file.string() + "\" 2>&1";
    else
        cmd += " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json parse_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::vector<nlohmann::json> parse_jsonl(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<nlohmann::json> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
    return lines;
}

bool fold_metrics_equal(const FoldMetrics& a, const FoldMetrics& b) {
    if (a.fold_index != b.fold_index || a.n_val != b.n_val) return false;
    if (a.has_seg != b.has_seg || a.has_cla != b.has_cla || a.has_vm0 != b.has_vm0)
        return false;
    if (a.has_seg) {
        if (a.seg.dsc != b.seg.dsc || a.seg.jaccard != b.seg.jaccard ||
            a.seg.hd95 != b.seg.hd95 || a.seg.pro != b.seg.pro ||
            a.seg.cases != b.seg.cases || a.seg.hd95_excluded != b.seg.hd95_excluded ||
            a.seg.pro_excluded != b.seg.pro_excluded ||
            a.seg.pooled_dsc != b.seg.pooled_dsc ||
            a.seg.pooled_jaccard != b.seg.pooled_jaccard ||
            a.seg.pooled_pro != b.seg.pooled_pro || a.seg.pooled_hd95 != b.seg.pooled_hd95)
            return false;
    }
    if (a.has_cla) {
        if (a.cla.acc != b.cla.acc || a.cla.rec != b.cla.rec || a.cla.pre != b.cla.pre ||
            a.cla.auc != b.cla.auc || a.cla.rec_flagged != b.cla.rec_flagged ||
            a.cla.pre_flagged != b.cla.pre_flagged || a.cla.auc_flagged != b.cla.auc_flagged)
            return false;
    }
    if (a.has_vm0 && a.vm0_dsc != b.vm0_dsc) return false;
    return true;
}

}  // namespace

TEST_CASE("run config survives the JSON round trip") {
    RunConfig cfg;
    cfg.dataset_dir = "somewhere";
    cfg.mode = "sam_plus_mtff";
    cfg.gamma = {2.0, 1.0, 0.5, 0.125};
    cfg.seed = 99;
    cfg.train_eq_val = true;
    cfg.folds = 1;
    const RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.mode == "sam_plus_mtff");
    CHECK(back.gamma[3] == 0.125);
    CHECK(back.train_eq_val);
}

TEST_CASE("run config rejects malformed documents") {
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"learning_rate", 0.1}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"lr", "fast"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"gamma", {1.0, 2.0}}}), ConfigError);
    CHECK_THROWS_MATCHES(RunConfig::from_json({{"bogus", 1}}), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("unknown config key")));
}

TEST_CASE("run config validation guards every knob") {
    RunConfig cfg;
    cfg.dataset_dir = "d";
    cfg.validate();

    auto expect_bad = [](RunConfig c) { CHECK_THROWS_AS(c.validate(), ConfigError); };
    {
        RunConfig c = cfg;
        c.dataset_dir.clear();
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.mode = "everything";
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.lr = 0;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.weight_decay = -1;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.beta1 = 1.0;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.batch_size = 0;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.epochs = 0;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.folds = 1;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.train_eq_val = true;
        expect_bad(c);  // folds stays 5
    }
    {
        RunConfig c = cfg;
        c.gamma[2] = -0.1;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.mta_variant = "average";
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.precision = "half";
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.classifier_preset = "resnet";
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.epsilon_prob = 0;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.grad_clip = -1;
        expect_bad(c);
    }
    {
        RunConfig c = cfg;
        c.max_steps = -1;
        expect_bad(c);
    }
}

TEST_CASE("config overrides parse JSON values with string fallback") {
    RunConfig cfg;
    cfg.dataset_dir = "d";
    cfg.apply_override("lr=0.005");
    CHECK(cfg.lr == 0.005);
    cfg.apply_override("mode=sam_only");
    CHECK(cfg.mode == "sam_only");
    cfg.apply_override("train_eq_val=true");
    CHECK(cfg.train_eq_val);
    cfg.apply_override("folds=1");
    CHECK(cfg.folds == 1);
    cfg.validate();
    cfg.apply_override("gamma=[4,3,2,1]");
    CHECK(cfg.gamma[0] == 4.0);
    CHECK(cfg.gamma[3] == 1.0);
    cfg.apply_override("out_dir=runs/x=y");
    CHECK(cfg.out_dir == "runs/x=y");
    CHECK_THROWS_AS(cfg.apply_override("nonsense"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("=5"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("bogus=5"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("lr=fast"), ConfigError);
}

TEST_CASE("mode-dependent loss weights zero the absent head") {
    RunConfig cfg;
    cfg.dataset_dir = "d";
    cfg.mode = "cla_only";
    CHECK(cfg.loss_weights<double>().alpha == 0.0);
    CHECK(cfg.loss_weights<double>().beta == 0.8);
    cfg.mode = "seg_only";
    CHECK(cfg.loss_weights<double>().alpha == 0.2);
    CHECK(cfg.loss_weights<double>().beta == 0.0);
    cfg.mode = "full";
    const auto w = cfg.loss_weights<double>();
    CHECK(w.alpha == 0.2);
    CHECK(w.beta == 0.8);
    CHECK(w.gamma[1] == 0.75);
}

TEST_CASE("stratified folds partition every class evenly") {
    const Dataset ds = load_dataset(fixture().data.string());
    const auto folds = make_folds(ds, 3, 5);
    REQUIRE(folds.size() == 3);

    std::set<std::string> all_ids;
    for (const auto& c : ds.cases) all_ids.insert(c.case_id);

    std::set<std::string> seen_val;
    for (const auto& f : folds) {
        std::set<std::string> val(f.val_ids.begin(), f.val_ids.end());
        std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
        CHECK(val.size() == f.val_ids.size());
        CHECK(train.size() == f.train_ids.size());
        CHECK(val.size() + train.size() == all_ids.size());
        for (const auto& id : val) CHECK(train.count(id) == 0);
        for (const auto& id : seen_val) CHECK(val.count(id) == 0);
        seen_val.insert(val.begin(), val.end());
    }
    CHECK(seen_val == all_ids);

    for (int cls = 0; cls < 2; ++cls) {
        std::vector<int64_t> counts;
        for (const auto& f : folds) {
            int64_t n = 0;
            for (const auto& id : f.val_ids)
                if (ds.by_id(id).label == cls) ++n;
            counts.push_back(n);
        }
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);
    }
}

TEST_CASE("folds are seed-deterministic and seed-sensitive") {
    const Dataset ds = load_dataset(fixture().data.string());
    const auto a = make_folds(ds, 3, 5);
    const auto b = make_folds(ds, 3, 5);
    const auto c = make_folds(ds, 3, 6);
    REQUIRE(a.size() == b.size());
    bool same_seed_equal = true, diff_seed_equal = true;
    for (size_t i = 0; i < a.size(); ++i) {
        same_seed_equal &= a[i].val_ids == b[i].val_ids;
        diff_seed_equal &= a[i].val_ids == c[i].val_ids;
    }
    CHECK(same_seed_equal);
    CHECK_FALSE(diff_seed_equal);
}

TEST_CASE("folds refuse starved classes and bad counts") {
    const Dataset ds = load_dataset(fixture().data.string());
    CHECK_THROWS_AS(make_folds(ds, 1, 5), ConfigError);
    CHECK_THROWS_MATCHES(
        make_folds(ds, 11, 5), DataError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("class")));
}

TEST_CASE("identity split feeds validation with the train set") {
    const Dataset ds = load_dataset(fixture().data.string());
    const auto splits = make_identity_split(ds);
    REQUIRE(splits.size() == 1);
    CHECK(splits[0].fold_index == 0);
    CHECK(splits[0].train_ids == splits[0].val_ids);
    CHECK(splits[0].train_ids.size() == ds.cases.size());
}

TEST_CASE("fold documents round trip through JSON") {
    const Dataset ds = load_dataset(fixture().data.string());
    const auto folds = make_folds(ds, 3, 5);
    const auto back = folds_from_json(folds_to_json(folds, 5));
    REQUIRE(back.size() == folds.size());
    for (size_t i = 0; i < folds.size(); ++i) {
        CHECK(back[i].fold_index == folds[i].fold_index);
        CHECK(back[i].train_ids == folds[i].train_ids);
        CHECK(back[i].val_ids == folds[i].val_ids);
    }
    CHECK_THROWS_AS(folds_from_json({{"seed", 5}}), DataError);
}

TEST_CASE("class weights follow inverse frequency on the train split") {
    const Dataset ds = load_dataset(fixture().data.string());
    std::vector<std::string> two_and_two, one_and_three, only_zero;
    int n0 = 0, n1 = 0;
    for (const auto& c : ds.cases) {
        if (c.label == 0 && n0 < 2) {
            two_and_two.push_back(c.case_id);
            ++n0;
        } else if (c.label == 1 && n1 < 2) {
            two_and_two.push_back(c.case_id);
            ++n1;
        }
        if (c.label == 0) only_zero.push_back(c.case_id);
    }
    one_and_three = two_and_two;
    one_and_three.pop_back();  // leaves 2/1 of one class
    LossWeights<double> w;
    apply_class_weights(w, ds, two_and_two, 0);
    CHECK(w.xi0 == 1.0);
    CHECK(w.xi1 == 1.0);

    LossWeights<double> w2;
    std::vector<std::string> skew;
    int s0 = 0, s1 = 0;
    for (const auto& c : ds.cases) {
        if (c.label == 0 && s0 < 1) {
            skew.push_back(c.case_id);
            ++s0;
        }
        if (c.label == 1 && s1 < 3) {
            skew.push_back(c.case_id);
            ++s1;
        }
    }
    REQUIRE(skew.size() == 4);
    apply_class_weights(w2, ds, skew, 3);
    CHECK(w2.xi0 == Catch::Approx(2.0));
    CHECK(w2.xi1 == Catch::Approx(2.0 / 3.0));

    LossWeights<double> w3;
    CHECK_THROWS_MATCHES(
        apply_class_weights(w3, ds, only_zero, 7), DataError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("fold 7")));
}

TEST_CASE("adamw applies decay, clipping, and leaves frozen tensors alone") {
    ParamStore<double> store(5);
    auto& w_train = store.normal("w", "g", Trainability::train, {3}, 1.0);
    auto& w_tune = store.normal("t", "g2", Trainability::fine_tune, {2}, 1.0);
    auto& w_frozen = store.normal("f", "g3", Trainability::frozen, {2}, 1.0);
    const Tensor<double> train0 = w_train.value;
    const Tensor<double> tune0 = w_tune.value;
    const Tensor<double> frozen0 = w_frozen.value;

    const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, clip = 5.0, eps = 1e-8;
    AdamW<double> opt(store, lr, wd, b1, b2, clip);
    for (int64_t i = 0; i < 3; ++i) w_train.grad[i] = 4.0;
    for (int64_t i = 0; i < 2; ++i) w_tune.grad[i] = 3.0;
    for (int64_t i = 0; i < 2; ++i) w_frozen.grad[i] = 100.0;

    // trainable norm: sqrt(3*16 + 2*9) colors the clip scale
    const double norm = std::sqrt(3 * 16.0 + 2 * 9.0);
    CHECK(opt.grad_norm() == Catch::Approx(norm).margin(1e-12));
    opt.step();
    CHECK(opt.steps_taken() == 1);

    const double scale = clip / norm;
    auto expected = [&](double v0, double g_raw) {
        const double g = g_raw * scale;
        const double m = (1 - b1) * g;
        const double v = (1 - b2) * g * g;
        const double mhat = m / (1 - b1);
        const double vhat = v / (1 - b2);
        return v0 - lr * (mhat / (std::sqrt(vhat) + eps) + wd * v0);
    };
    for (int64_t i = 0; i < 3; ++i)
        CHECK(w_train.value[i] == Catch::Approx(expected(train0[i], 4.0)).margin(1e-12));
    for (int64_t i = 0; i < 2; ++i)
        CHECK(w_tune.value[i] == Catch::Approx(expected(tune0[i], 3.0)).margin(1e-12));
    for (int64_t i = 0; i < 2; ++i) CHECK(w_frozen.value[i] == frozen0[i]);

    SECTION("zero gradients leave pure decoupled decay") {
        ParamStore<double> s2(6);
        auto& p = s2.normal("w", "g", Trainability::train, {1}, 1.0);
        const double v0 = p.value[0];
        AdamW<double> o2(s2, lr, wd, b1, b2, 0.0);
        o2.step();
        CHECK(p.value[0] == Catch::Approx(v0 * (1.0 - lr * wd)).margin(1e-15));
    }
}

TEST_CASE("checkpoints restore every tensor bitwise") {
    const fs::path dir = fresh_dir("ckpt");
    ModelConfig mc;
    mc.image_size = 16;
    mc.d_t = 8;
    mc.d_p = 8;
    mc.d_a = 8;
    mc.c_m = 8;
    mc.c_f = 8;
    Model<double> model(mc, 31);
    std::map<std::string, Tensor<double>> before;
    for (const auto* p : model.store().all()) before.emplace(p->name, p->value);

    const std::string path = (dir / "m.ckpt").string();
    const nlohmann::json cfg_echo = {{"note", "unit"}, {"seed", 31}};
    save_checkpoint(path, model.store(), cfg_echo, 2, "rng:state");

    for (auto* p : model.store().all())
        for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.5;

    const CheckpointHeader h = load_checkpoint(path, model.store());
    CHECK(h.dtype == "f64");
    CHECK(h.fold_index == 2);
    CHECK(h.rng_state == "rng:state");
    CHECK(h.config == cfg_echo);
    for (const auto* p : model.store().all()) {
        const Tensor<double>& orig = before.at(p->name);
        REQUIRE(p->value.shape() == orig.shape());
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            if (p->value[i] != orig[i]) {
                FAIL(p->name << " differs at " << i);
            }
        }
    }
}

TEST_CASE("checkpoints refuse mismatched models") {
    const fs::path dir = fresh_dir("ckpt_bad");
    ModelConfig mc;
    mc.image_size = 16;
    mc.d_t = 8;
    mc.d_p = 8;
    mc.d_a = 8;
    mc.c_m = 8;
    mc.c_f = 8;
    Model<double> full_model(mc, 31);
    const std::string path = (dir / "full.ckpt").string();
    save_checkpoint(path, full_model.store(), nlohmann::json::object(), 0, "");

    SECTION("archive groups with no home are named") {
        ModelConfig sam = mc;
        sam.mode = Mode::sam_only;
        Model<double> sam_model(sam, 31);
        CHECK_THROWS_MATCHES(load_checkpoint(path, sam_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("no home")));
    }
    SECTION("model groups missing from the archive are named") {
        ModelConfig seg = mc;
        seg.mode = Mode::seg_only;
        Model<double> seg_model(seg, 31);
        const std::string spath = (dir / "seg.ckpt").string();
        save_checkpoint(spath, seg_model.store(), nlohmann::json::object(), 0, "");
        CHECK_THROWS_MATCHES(load_checkpoint(spath, full_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("missing from checkpoint")));
    }
    SECTION("tensor shape drift is named per parameter") {
        ModelConfig wide = mc;
        wide.c_f = 12;
        Model<double> wide_model(wide, 31);
        CHECK_THROWS_MATCHES(load_checkpoint(path, wide_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("shape mismatch")));
    }
    SECTION("trainability drift is rejected") {
        Model<double> refrozen(mc, 31, {{"pyramid", Trainability::frozen}});
        CHECK_THROWS_MATCHES(load_checkpoint(path, refrozen.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("trainability")));
    }
    SECTION("precision mismatch is explicit") {
        Model<float> single(mc, 31);
        CHECK_THROWS_MATCHES(
            load_checkpoint(path, single.store()), DataError,
            Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("f64")));
    }
    SECTION("corrupt archives are refused") {
        const std::string garbled = (dir / "garbled.ckpt").string();
        std::string bytes = slurp(path);
        bytes[0] = 'X';
        std::ofstream(garbled, std::ios::binary) << bytes;
        CHECK_THROWS_MATCHES(load_checkpoint(garbled, full_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("not a checkpoint")));

        const std::string truncated = (dir / "trunc.ckpt").string();
        std::ofstream(truncated, std::ios::binary)
            << slurp(path).substr(0, slurp(path).size() - 16);
        CHECK_THROWS_MATCHES(load_checkpoint(truncated, full_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("truncated")));

        std::string vbytes = slurp(path);
        vbytes[8] = 9;  // format version field
        const std::string vpath = (dir / "version.ckpt").string();
        std::ofstream(vpath, std::ios::binary) << vbytes;
        CHECK_THROWS_MATCHES(load_checkpoint(vpath, full_model.store()), DataError,
                             Catch::Matchers::MessageMatches(
                                 Catch::Matchers::ContainsSubstring("version")));
    }
}

TEST_CASE("a one-epoch run writes the full artifact set") {
    RunConfig cfg = smoke_config("smoke");
    const RunReport report = train(cfg);
    const fs::path out(cfg.out_dir);

    CHECK(parse_file(out / "config.json") == cfg.to_json());

    const Dataset ds = load_dataset(cfg.dataset_dir);
    const auto folds = make_folds(ds, cfg.folds, cfg.seed);
    const auto folds_doc = folds_from_json(parse_file(out / "folds.json"));
    REQUIRE(folds_doc.size() == folds.size());
    for (size_t i = 0; i < folds.size(); ++i) {
        CHECK(folds_doc[i].val_ids == folds[i].val_ids);
        CHECK(folds_doc[i].train_ids == folds[i].train_ids);
    }

    // every step line satisfies the composition identity in double precision
    const auto steps = parse_jsonl(out / "steps.jsonl");
    int64_t expected_steps = 0;
    for (const auto& f : folds)
        expected_steps +=
            cfg.epochs * ((static_cast<int64_t>(f.train_ids.size()) + cfg.batch_size - 1) /
                          cfg.batch_size);
    REQUIRE(static_cast<int64_t>(steps.size()) == expected_steps);
    const auto w = cfg.loss_weights<double>();
    for (const auto& s : steps) {
        CHECK(s.at("finite").get<bool>());
        CHECK(s.at("n").get<int64_t>() >= 1);
        CHECK(s.at("grad_norm").get<double>() >= 0.0);
        const double seg = s.at("seg").get<double>();
        const double cla = s.at("cla").get<double>();
        const double mta = s.at("mta").get<double>();
        const double total = s.at("total").get<double>();
        CHECK(total == compose_total(mta, seg, cla, w.alpha, w.beta));
        std::vector<std::pair<double, double>> per_scale;
        for (const auto& pr : s.at("seg_per_scale"))
            per_scale.emplace_back(pr.at(0).get<double>(), pr.at(1).get<double>());
        REQUIRE(per_scale.size() == 4);
        CHECK(seg == compose_seg_total(per_scale, w.gamma));
    }

    REQUIRE(report.folds.size() == 2);
    for (const auto& f : report.folds) {
        CHECK(f.has_seg);
        CHECK(f.has_cla);
        CHECK(f.has_vm0);
        CHECK(f.n_val == 6);
    }
    CHECK(report.cases.size() == ds.cases.size());

    const auto jr = parse_file(out / "report.json");
    const RunReport back = report_from_json(jr);
    REQUIRE(back.folds.size() == 2);
    CHECK(fold_metrics_equal(back.folds[0], report.folds[0]));
    CHECK(fold_metrics_equal(back.folds[1], report.folds[1]));
    CHECK(jr.contains("mean"));
    CHECK(jr.at("mean").contains("seg"));
    CHECK(jr.at("mean").contains("cla"));
    CHECK(jr.at("metric_definitions").contains("hd95"));

    std::ifstream csv(out / "report.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header ==
          "case_id,fold,label,dsc,jaccard,hd95,hd95_flagged,pro,pro_flagged,"
          "p_poor,predicted,vm0_dsc");
    int64_t rows = 0;
    std::string line;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == static_cast<int64_t>(ds.cases.size()));

    SECTION("reloading each fold checkpoint reproduces its metrics exactly") {
        for (const auto& f : report.folds) {
            const std::string ck =
                (out / "checkpoints" / ("fold" + std::to_string(f.fold_index) + ".ckpt"))
                    .string();
            REQUIRE(fs::exists(ck));
            const RunReport er = evaluate(ck, cfg.dataset_dir);
            REQUIRE(er.folds.size() == 1);
            CHECK(fold_metrics_equal(er.folds[0], f));
            const auto& reported = report.cases;
            for (const auto& ce : er.cases) {
                auto it = std::find_if(reported.begin(), reported.end(),
                                       [&](const CaseEval& c) {
                                           return c.case_id == ce.case_id;
                                       });
                REQUIRE(it != reported.end());
                CHECK(it->fold == ce.fold);
                CHECK(it->p_poor == ce.p_poor);
                CHECK(it->predicted == ce.predicted);
                CHECK(it->seg.dsc == ce.seg.dsc);
                CHECK(it->vm0_dsc == ce.vm0_dsc);
            }
        }
    }
    SECTION("a reloaded checkpoint scores fresh data without drama") {
        const std::string ck = (out / "checkpoints" / "fold0.ckpt").string();
        const fs::path fresh = fixture().root / "smoke_fresh";
        fs::remove_all(fresh);
        generate_dataset(12, fixture().data_seed + 100, fresh.string(), 16);
        const RunReport er = evaluate(ck, fresh.string());
        REQUIRE(er.folds.size() == 1);
        CHECK(er.folds[0].has_cla);
        CHECK(er.folds[0].has_seg);
    }
    SECTION("evaluating against a differently sized dataset fails loudly") {
        const std::string ck = (out / "checkpoints" / "fold0.ckpt").string();
        CHECK_THROWS_AS(evaluate(ck, fixture().data24.string()), DataError);
        CHECK_THROWS_AS(evaluate((out / "nope.ckpt").string(), fixture().data.string()),
                        DataError);
    }
}

TEST_CASE("training twice from one config is byte-identical") {
    RunConfig a = smoke_config("det_a");
    RunConfig b = smoke_config("det_b");
    const RunReport ra = train(a);
    const RunReport rb = train(b);
    CHECK(slurp(fs::path(a.out_dir) / "steps.jsonl") ==
          slurp(fs::path(b.out_dir) / "steps.jsonl"));

    nlohmann::json ja = report_to_json(ra);
    nlohmann::json jb = report_to_json(rb);
    for (auto* j : {&ja, &jb}) {
        j->erase("wall_time_sec");
        j->at("config").erase("out_dir");
    }
    CHECK(ja == jb);
}

TEST_CASE("overfit harness uses the identity split and honors max_steps") {
    RunConfig cfg = smoke_config("overfit");
    cfg.train_eq_val = true;
    cfg.folds = 1;
    cfg.max_steps = 2;
    const RunReport report = train(cfg);
    REQUIRE(report.folds.size() == 1);
    CHECK(report.folds[0].n_val == 12);

    const auto folds_doc = folds_from_json(parse_file(fs::path(cfg.out_dir) / "folds.json"));
    REQUIRE(folds_doc.size() == 1);
    CHECK(folds_doc[0].train_ids == folds_doc[0].val_ids);

    const auto steps = parse_jsonl(fs::path(cfg.out_dir) / "steps.jsonl");
    CHECK(steps.size() == 2);
}

TEST_CASE("single-task runs blank the other head end to end") {
    SECTION("seg_only") {
        RunConfig cfg = smoke_config("seg_only_run");
        cfg.mode = "seg_only";
        const RunReport report = train(cfg);
        for (const auto& f : report.folds) {
            CHECK(f.has_seg);
            CHECK_FALSE(f.has_cla);
        }
        for (const auto& c : report.cases) {
            CHECK(c.has_seg);
            CHECK_FALSE(c.has_cla);
        }
        for (const auto& s : parse_jsonl(fs::path(cfg.out_dir) / "steps.jsonl")) {
            CHECK(s.at("cla").is_null());
            CHECK(s.at("mta").is_null());
            CHECK_FALSE(s.at("seg").is_null());
        }
    }
    SECTION("cla_only") {
        RunConfig cfg = smoke_config("cla_only_run");
        cfg.mode = "cla_only";
        const RunReport report = train(cfg);
        for (const auto& f : report.folds) {
            CHECK_FALSE(f.has_seg);
            CHECK(f.has_cla);
            CHECK(f.has_vm0);
        }
        for (const auto& s : parse_jsonl(fs::path(cfg.out_dir) / "steps.jsonl")) {
            CHECK(s.at("seg").is_null());
            CHECK(s.at("mta").is_null());
            CHECK_FALSE(s.at("cla").is_null());
        }
    }
}

TEST_CASE("the ablation sweep reproduces the published blank pattern") {
    RunConfig base = smoke_config("ablate");
    base.train_eq_val = true;
    base.folds = 1;
    base.batch_size = 8;
    base.max_steps = 1;
    const auto rows = ablate(base);
    REQUIRE(rows.size() == kAllModes.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        const Mode m = kAllModes[i];
        INFO(rows[i].mode);
        CHECK(rows[i].mode == to_string(m));
        CHECK(rows[i].dsc.empty() == !mode_reports_seg(m));
        CHECK(rows[i].jaccard.empty() == !mode_reports_seg(m));
        CHECK(rows[i].hd95.empty() == !mode_reports_seg(m));
        CHECK(rows[i].pro.empty() == !mode_reports_seg(m));
        CHECK(rows[i].acc.empty() == !mode_reports_cla(m));
        CHECK(rows[i].rec.empty() == !mode_reports_cla(m));
        CHECK(rows[i].pre.empty() == !mode_reports_cla(m));
        CHECK(rows[i].auc.empty() == !mode_reports_cla(m));
        if (!rows[i].dsc.empty()) CHECK(std::stod(rows[i].dsc) >= 0.0);
        if (!rows[i].acc.empty()) CHECK(std::stod(rows[i].acc) >= 0.0);
        CHECK(fs::exists(fs::path(base.out_dir) / rows[i].mode / "report.json"));
    }

    const auto back = read_ablation_csv((fs::path(base.out_dir) / "ablation.csv").string());
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].mode == rows[i].mode);
        CHECK(back[i].dsc == rows[i].dsc);
        CHECK(back[i].acc == rows[i].acc);
        CHECK(back[i].auc == rows[i].auc);
    }

    const std::string text = slurp(fs::path(base.out_dir) / "ablation.txt");
    CHECK(text == render_ablation(rows));
    CHECK(text.find("sam_clip_no_mtff") != std::string::npos);
    CHECK(text.find('-') != std::string::npos);

    SECTION("report rendering picks the right artifact") {
        CHECK(render_run_dir(base.out_dir) == render_ablation(rows));
        const std::string sub = render_run_dir((fs::path(base.out_dir) / "full").string());
        CHECK(sub.find("mode: full") != std::string::npos);
        CHECK(sub.find("DSC") != std::string::npos);
        CHECK_THROWS_AS(render_run_dir(fresh_dir("not_a_run").string()), DataError);
    }
}

TEST_CASE("the command line glues the pieces together") {
    const fs::path dir = fresh_dir("cli");

    SECTION("generate writes a loadable dataset and reports counts") {
        const fs::path ds_dir = dir / "gen";
        const fs::path log = dir / "gen.log";
        REQUIRE(run_cli("generate --n 10 --seed 4 --out \"" + ds_dir.string() +
                            "\" --size 16",
                        log) == 0);
        CHECK(slurp(log).find("wrote 10 cases") != std::string::npos);
        const Dataset ds = load_dataset(ds_dir.string());
        CHECK(ds.cases.size() == 10);

        const fs::path twin = dir / "gen_twin";
        generate_dataset(10, 4, twin.string(), 16);
        CHECK(slurp(ds_dir / "cases.jsonl") == slurp(twin / "cases.jsonl"));
        CHECK(slurp(ds_dir / "manifest.json") == slurp(twin / "manifest.json"));
    }
    SECTION("generate validates its arguments") {
        CHECK(run_cli("generate --n 4 --seed 1 --out \"" + (dir / "bad").string() +
                      "\" --size 16") == 2);
        CHECK(run_cli("generate --n 10 --seed 1 --out \"" + (dir / "bad2").string() +
                      "\" --size 15") == 2);
        CHECK(run_cli("generate --seed 1 --out somewhere") == 2);
        CHECK(run_cli("noexist --n 1") == 2);
    }
    SECTION("train, eval, and report run from config files") {
        RunConfig cfg = smoke_config("cli_train");
        cfg.train_eq_val = true;
        cfg.folds = 1;
        cfg.max_steps = 1;
        cfg.batch_size = 8;
        const fs::path cfg_path = dir / "run.json";
        std::ofstream(cfg_path) << cfg.to_json().dump(2);

        const fs::path log = dir / "train.log";
        REQUIRE(run_cli("train --config \"" + cfg_path.string() + "\" --override lr=0.0005",
                        log) == 0);
        CHECK(slurp(log).find("DSC") != std::string::npos);
        const auto written = parse_file(fs::path(cfg.out_dir) / "config.json");
        CHECK(written.at("lr").get<double>() == 0.0005);

        const fs::path eval_log = dir / "eval.log";
        REQUIRE(run_cli("eval --checkpoint \"" +
                            (fs::path(cfg.out_dir) / "checkpoints" / "fold0.ckpt").string() +
                            "\" --data \"" + cfg.dataset_dir + "\"",
                        eval_log) == 0);
        CHECK(slurp(eval_log).find("Acc") != std::string::npos);

        const fs::path rep_log = dir / "report.log";
        REQUIRE(run_cli("report --run-dir \"" + cfg.out_dir + "\"", rep_log) == 0);
        CHECK(slurp(rep_log).find("mode: full") != std::string::npos);
    }
    SECTION("failures map to documented exit codes") {
        const fs::path bad_cfg = dir / "bad.json";
        std::ofstream(bad_cfg) << "{\"bogus\": 1}";
        CHECK(run_cli("train --config \"" + bad_cfg.string() + "\"") == 2);

        const fs::path nocase_cfg = dir / "nocase.json";
        RunConfig cfg = smoke_config("cli_nocase");
        cfg.dataset_dir = (dir / "missing_dataset").string();
        std::ofstream(nocase_cfg) << cfg.to_json().dump(2);
        CHECK(run_cli("train --config \"" + nocase_cfg.string() + "\"") == 3);

        CHECK(run_cli("train --config \"" + (dir / "noexist.json").string() + "\"") == 2);
        CHECK(run_cli("eval --checkpoint \"" + (dir / "none.ckpt").string() +
                      "\" --data \"" + fixture().data.string() + "\"") == 3);
        CHECK(run_cli("report --run-dir \"" + (dir / "empty_run").string() + "\"") == 3);
    }
}
