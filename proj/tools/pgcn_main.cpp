#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgcn/ablation.hpp"
#include "pgcn/checkpoint.hpp"
#include "pgcn/gradchecks.hpp"
#include "pgcn/train.hpp"

namespace {

pgcn::KVConfig load_config(const std::string& path) {
    if (path.empty()) return pgcn::KVConfig();
    return pgcn::KVConfig::from_file(path);
}

int cmd_train(const std::string& config_path, std::int64_t seed_override, const std::string& out_dir) {
    pgcn::KVConfig cfg = load_config(config_path);
    pgcn::SyntheticSpec spec = pgcn::SyntheticSpec::from_config(cfg);
    pgcn::TrainConfig tc = pgcn::TrainConfig::from_config(cfg);
    cfg.reject_unknown();
    if (seed_override >= 0) tc.seed = static_cast<std::uint64_t>(seed_override);

    pgcn::SynthDataset dataset = pgcn::synth_dataset(spec, tc.seed);
    pgcn::Rng rng(pgcn::mix64(tc.seed ^ 0x6d6f64656cULL));
    pgcn::PGCNModel model(pgcn::ModelConfig::default_desk(spec.classes, tc.adapt_mode), rng);
    const pgcn::AugmentParams aug;

    pgcn::train(model, dataset, tc, aug, out_dir, &std::cout);
    std::cout << "final val accuracy:\n";
    for (auto mode : {pgcn::EvalMode::backbone_only, pgcn::EvalMode::pgcn, pgcn::EvalMode::posture_only,
                      pgcn::EvalMode::pgcn_fusion}) {
        std::cout << "  " << pgcn::eval_mode_name(mode) << " "
                  << pgcn::evaluate(model, dataset, mode, aug) << "\n";
    }
    std::cout << "wrote " << out_dir << "/model.pgcn and " << out_dir << "/metrics.csv\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir, const std::string& mode_name) {
    const pgcn::EvalMode mode = pgcn::eval_mode_from_name(mode_name);
    std::ifstream labels(data_dir + "/labels.csv");
    if (!labels) throw std::runtime_error("cannot open " + data_dir + "/labels.csv");
    std::string line;
    std::getline(labels, line);  // header
    std::vector<pgcn::EvalItem> items;
    std::int64_t max_label = 0;
    const pgcn::AugmentParams aug;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string split, index, label, pose_file, clip_file;
        std::getline(ss, split, ',');
        std::getline(ss, index, ',');
        std::getline(ss, label, ',');
        std::getline(ss, pose_file, ',');
        std::getline(ss, clip_file, ',');
        if (split != "val") continue;
        pgcn::NamedParams clip = pgcn::load_checkpoint(data_dir + "/" + clip_file);
        pgcn::PoseSequence pose = pgcn::read_pose_file(data_dir + "/" + pose_file);
        auto [proc_clip, proc_pose] = pgcn::test_process(clip.at(0).second, pose, aug);
        const std::int64_t y = std::stoll(label);
        max_label = std::max(max_label, y);
        items.push_back(pgcn::EvalItem{proc_clip, proc_pose, y});
    }
    if (items.empty()) throw std::runtime_error("no validation rows in " + data_dir + "/labels.csv");

    std::int64_t classes = ((max_label + 3) / 3) * 3;  // synthetic class counts are multiples of 3
    if (classes <= max_label) classes = max_label + 1;
    pgcn::Rng rng(0);
    pgcn::PGCNModel model(pgcn::ModelConfig::default_desk(classes, pgcn::AdaptMode::adaptive), rng);
    pgcn::NamedParams target = model.parameters();
    pgcn::assign_parameters(target, pgcn::load_checkpoint(checkpoint_path));
    const double acc = pgcn::evaluate_items(model, items, mode);
    std::cout << pgcn::eval_mode_name(mode) << " accuracy " << acc << " on " << items.size()
              << " samples\n";
    return 0;
}

int cmd_gradcheck(const std::string& op, std::int64_t seeds) {
    bool ok = true;
    for (std::int64_t seed = 0; seed < seeds; ++seed) {
        for (const auto& [name, result] : pgcn::run_gradchecks(op, static_cast<std::uint64_t>(seed))) {
            const bool pass = result.passed(pgcn::kGradCheckTol);
            ok = ok && pass;
            std::cout << (pass ? "PASS" : "FAIL") << " " << name << " seed " << seed << " max_rel_error "
                      << result.max_rel_error << " (" << result.coords_checked << " coords";
            if (!result.worst_param.empty()) std::cout << ", worst " << result.worst_param;
            std::cout << ")";
            if (!result.message.empty()) std::cout << " " << result.message;
            std::cout << "\n";
        }
    }
    return ok ? 0 : 1;
}

int cmd_mapcoords(const std::string& chain_path, const std::string& coord_str) {
    pgcn::LayerChain chain = pgcn::read_chain_file(chain_path);
    std::array<double, 3> coord{};
    std::istringstream ss(coord_str);
    std::string tok;
    for (int axis = 0; axis < 3; ++axis) {
        if (!std::getline(ss, tok, ',')) throw std::runtime_error("--coord needs three values t,y,x");
        coord[static_cast<std::size_t>(axis)] = std::stod(tok);
    }
    if (std::getline(ss, tok, ',')) throw std::runtime_error("--coord needs exactly three values t,y,x");

    const auto out = chain.output_extents();
    const auto mapped = pgcn::map_coordinate(chain, coord);
    std::cout << "output extents " << out[0] << " " << out[1] << " " << out[2] << "\n";
    const char* axis_names[3] = {"t", "y", "x"};
    for (int axis = 0; axis < 3; ++axis) {
        const auto m = chain.axis_map(axis);
        std::cout << axis_names[axis] << ": coord " << coord[static_cast<std::size_t>(axis)] << " -> index "
                  << mapped[static_cast<std::size_t>(axis)] << " (jump " << m.jump << ", center0 "
                  << m.center << ")\n";
    }
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::int64_t seed) {
    pgcn::KVConfig cfg = load_config(spec_path);
    pgcn::SyntheticSpec spec = pgcn::SyntheticSpec::from_config(cfg);
    cfg.reject_unknown();
    pgcn::SynthDataset dataset = pgcn::synth_dataset(spec, static_cast<std::uint64_t>(seed));
    pgcn::export_dataset(dataset, out_dir);
    std::cout << "wrote " << dataset.train_size() << " train + " << dataset.val_size()
              << " val samples to " << out_dir << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
    pgcn::KVConfig cfg = load_config(config_path);
    pgcn::AblationConfig ac = pgcn::AblationConfig::from_config(cfg);
    cfg.reject_unknown();
    pgcn::AblationReport report = pgcn::run_ablation(ac, out_dir, &std::cout);
    std::cout << report.summary();
    return report.all_ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pose-graph action recognition toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_path, data_dir, mode_name = "pgcn";
    std::string op = "all", chain_path, coord_str;
    std::int64_t seed = -1, synth_seed = 0, gradcheck_seeds = 5;

    auto* train = app.add_subcommand("train", "train the full model on the synthetic dataset");
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("--seed", seed, "overrides the config seed");
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on an exported dataset");
    eval->add_option("--checkpoint", checkpoint_path)->required();
    eval->add_option("--data", data_dir, "directory written by the synth subcommand")->required();
    eval->add_option("--mode", mode_name,
                     "backbone-only | fc-aggregate | pgcn | pgcn-fusion | posture-only");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--op", op, "check name or 'all'");
    gradcheck->add_option("--seeds", gradcheck_seeds, "number of seeds");

    auto* mapcoords = app.add_subcommand("mapcoords", "map a video coordinate to feature-map indices");
    mapcoords->add_option("--chain", chain_path, "layer chain description file")->required();
    mapcoords->add_option("--coord", coord_str, "t,y,x in input space")->required();

    auto* synth = app.add_subcommand("synth", "generate and export the synthetic dataset");
    synth->add_option("--spec", config_path, "dataset spec config file");
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--seed", synth_seed);

    auto* ablate = app.add_subcommand("ablate", "run the directional comparison suite");
    ablate->add_option("--config", config_path);
    ablate->add_option("--out", out_dir)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(config_path, seed, out_dir);
        if (*eval) return cmd_eval(checkpoint_path, data_dir, mode_name);
        if (*gradcheck) return cmd_gradcheck(op, gradcheck_seeds);
        if (*mapcoords) return cmd_mapcoords(chain_path, coord_str);
        if (*synth) return cmd_synth(config_path, out_dir, synth_seed);
        if (*ablate) return cmd_ablate(config_path, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
