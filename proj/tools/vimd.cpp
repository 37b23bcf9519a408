// vimd: train / eval / bench / ablate / render driver for the
// bidirectional-SSM stereo disparity model.

#include "vimd/bench.hpp"
#include "vimd/render.hpp"
#include "vimd/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace vimd;

namespace {

struct Options {
    std::string config_path;
    std::string manifest = "synthetic";
    std::string checkpoint;
    std::string out = "out";
    std::string device = "cpu";
    std::string input;  // render source
    long iters = 2000;
    double lr = 1e-5;
    unsigned seed = 0;
    int passes = 1;
    std::string self_attention = "off";
    bool strict_io = false;
    bool dual_sequence = true;
    int model_dim = 128;
    int state_dim = 8;
    int num_layers = 6;
    double max_disparity = 192;
    int batch = 2;
    long checkpoint_every = 500;
    int width = 128;
    int height = 64;
    std::string report_only;
    std::string model_name = "vimd";

    ModelConfig model_config() const {
        ModelConfig cfg;
        cfg.model_dim = model_dim;
        cfg.state_dim = state_dim;
        cfg.num_layers = num_layers;
        cfg.max_disparity = max_disparity;
        cfg.passes = passes;
        cfg.self_attention = self_attention == "on";
        cfg.dual_sequence = dual_sequence;
        cfg.validate();
        return cfg;
    }
};

// flat key=value config files; '#' starts a comment
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw FormatError("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config: expected key=value, got: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

void apply_config_file(Options& o, const std::string& path) {
    auto kv = read_config_file(path);
    auto str = [&](const char* k, std::string& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = it->second;
    };
    auto num = [&](const char* k, auto& dst) {
        if (auto it = kv.find(k); it != kv.end()) dst = static_cast<std::decay_t<decltype(dst)>>(std::stod(it->second));
    };
    auto flag = [&](const char* k, bool& dst) {
        if (auto it = kv.find(k); it != kv.end())
            dst = it->second == "1" || it->second == "true" || it->second == "on";
    };
    str("manifest", o.manifest);
    str("checkpoint", o.checkpoint);
    str("out", o.out);
    str("device", o.device);
    str("self_attention", o.self_attention);
    str("model_name", o.model_name);
    num("iters", o.iters);
    num("lr", o.lr);
    num("seed", o.seed);
    num("passes", o.passes);
    num("model_dim", o.model_dim);
    num("state_dim", o.state_dim);
    num("num_layers", o.num_layers);
    num("max_disparity", o.max_disparity);
    num("batch", o.batch);
    num("checkpoint_every", o.checkpoint_every);
    num("width", o.width);
    num("height", o.height);
    flag("strict_io", o.strict_io);
    flag("dual_sequence", o.dual_sequence);
    for (const auto& [k, v] : kv) {
        static const char* known[] = {"manifest",   "checkpoint",    "out",
                                      "device",     "self_attention", "model_name",
                                      "iters",      "lr",            "seed",
                                      "passes",     "model_dim",     "state_dim",
                                      "num_layers", "max_disparity", "batch",
                                      "checkpoint_every", "width",   "height",
                                      "strict_io",  "dual_sequence"};
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) throw FormatError("config: unknown key '" + k + "'");
    }
}

void add_common_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config_path, "flat key=value config file");
    cmd->add_option("--manifest", o.manifest, "dataset manifest path, or 'synthetic'");
    cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint to load");
    cmd->add_option("--iters", o.iters, "training iterations");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_option("--seed", o.seed, "rng seed");
    cmd->add_option("--passes", o.passes, "encoder stack traversals")->check(CLI::IsMember({1, 2}));
    cmd->add_option("--self-attention", o.self_attention, "global attention after the last layer")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--device", o.device, "execution device label");
    cmd->add_flag("--strict-io", o.strict_io, "abort on the first unreadable dataset entry");
    cmd->add_option("--model-dim", o.model_dim, "token feature width");
    cmd->add_option("--state-dim", o.state_dim, "ssm state size");
    cmd->add_option("--num-layers", o.num_layers, "encoder stack depth");
    cmd->add_option("--max-disparity", o.max_disparity, "search range upper bound");
    cmd->add_option("--batch", o.batch, "training batch size");
    cmd->add_option("--checkpoint-every", o.checkpoint_every, "checkpoint interval (iterations)");
    cmd->add_option("--width", o.width, "synthetic frame width");
    cmd->add_option("--height", o.height, "synthetic frame height");
    cmd->add_option("--model-name", o.model_name, "label used in benchmark reports");
}

void echo_config(const Options& o, const std::string& command) {
    fs::create_directories(o.out);
    std::ofstream f(fs::path(o.out) / "run_config.txt");
    f << "command=" << command << "\n"
      << "manifest=" << o.manifest << "\n"
      << "checkpoint=" << o.checkpoint << "\n"
      << "out=" << o.out << "\n"
      << "device=" << o.device << "\n"
      << "iters=" << o.iters << "\n"
      << "lr=" << o.lr << "\n"
      << "seed=" << o.seed << "\n"
      << "passes=" << o.passes << "\n"
      << "self_attention=" << o.self_attention << "\n"
      << "dual_sequence=" << (o.dual_sequence ? "true" : "false") << "\n"
      << "strict_io=" << (o.strict_io ? "true" : "false") << "\n"
      << "model_dim=" << o.model_dim << "\n"
      << "state_dim=" << o.state_dim << "\n"
      << "num_layers=" << o.num_layers << "\n"
      << "max_disparity=" << o.max_disparity << "\n"
      << "batch=" << o.batch << "\n"
      << "checkpoint_every=" << o.checkpoint_every << "\n"
      << "width=" << o.width << "\n"
      << "height=" << o.height << "\n"
      << "model_name=" << o.model_name << "\n";
}

std::vector<StereoSample> load_samples(const Options& o) {
    if (o.manifest == "synthetic") return synthetic_suite(o.width, o.height, o.seed + 1);
    DatasetManifest m = load_manifest(o.manifest);
    IterationResult it = iterate(m, 1, o.seed, o.strict_io);
    for (const auto& err : it.errors) std::cerr << "warning: skipped " << err << "\n";
    std::vector<StereoSample> samples;
    for (auto& b : it.batches)
        for (auto& s : b) samples.push_back(std::move(s));
    require(!samples.empty(), "no loadable samples in " + o.manifest);
    return samples;
}

VimStereoModel make_model(const Options& o) {
    if (!o.checkpoint.empty()) {
        VimStereoModel m = VimStereoModel::load(o.checkpoint);
        ModelConfig cfg = m.config();
        cfg.passes = o.passes;
        cfg.self_attention = o.self_attention == "on";
        cfg.dual_sequence = o.dual_sequence;
        return m.variant(cfg);
    }
    return VimStereoModel(o.model_config(), o.seed);
}

int cmd_train(Options& o) {
    echo_config(o, "train");
    std::vector<StereoSample> samples = load_samples(o);
    for (const auto& s : samples)
        require(s.gt_disparity.has_value(), "train: sample without ground truth: " + s.frame_id);
    VimStereoModel model = make_model(o);
    std::cout << "training " << model.params().total_size() << " parameters on "
              << samples.size() << " pairs for " << o.iters << " iterations\n";

    std::ofstream log(fs::path(o.out) / "loss_log.csv");
    log << "iter,loss,epe_train\n";
    try {
        train_model(model, samples, o.iters, o.lr, o.batch, o.seed, [&](const TrainLogRow& row) {
            log << row.iter << "," << row.loss << "," << row.epe_train << "\n";
            log.flush();
            if (row.iter % 10 == 0)
                std::cout << "iter " << row.iter << "  loss " << row.loss << "  epe "
                          << row.epe_train << "\n";
            if (o.checkpoint_every > 0 && row.iter > 0 && row.iter % o.checkpoint_every == 0)
                model.save((fs::path(o.out) / ("ckpt_" + std::to_string(row.iter) + ".vimd")).string());
        });
    } catch (const NumericError& e) {
        std::ofstream(fs::path(o.out) / "error.txt") << e.what() << "\n";
        std::cerr << "training aborted: " << e.what() << "\n";
        return 1;
    }
    const std::string final_path = (fs::path(o.out) / "checkpoint.vimd").string();
    model.save(final_path);
    std::cout << "saved " << final_path << "\n";
    return 0;
}

int cmd_eval(Options& o) {
    echo_config(o, "eval");
    require(!o.checkpoint.empty(), "eval: --checkpoint is required");
    std::vector<StereoSample> samples = load_samples(o);
    VimStereoModel model = make_model(o);
    EvalResult res = eval_model(model, samples);
    std::cout << "pairs " << res.pairs << "  EPE " << format_sig4(res.epe) << "  D1 "
              << format_sig4(res.d1) << "\n";
    std::ofstream f(fs::path(o.out) / "eval.csv");
    f << "pairs,epe,d1\n" << res.pairs << "," << res.epe << "," << res.d1 << "\n";
    return 0;
}

void write_report(const Options& o, const std::vector<BenchRecord>& records) {
    std::ofstream csv(fs::path(o.out) / "bench.csv");
    csv << to_csv(records);
    std::ofstream md(fs::path(o.out) / "bench.md");
    md << markdown_bench_table(records);
    std::cout << markdown_bench_table(records);
}

int cmd_bench(Options& o) {
    echo_config(o, "bench");
    if (!o.report_only.empty()) {
        std::ifstream f(o.report_only);
        require(f.good(), "bench: cannot open " + o.report_only);
        std::stringstream buf;
        buf << f.rdbuf();
        write_report(o, report_from_components(buf.str()));
        return 0;
    }
    DeviceLock lock(o.device);
    std::vector<StereoSample> samples = load_samples(o);
    VimStereoModel model = make_model(o);
    std::string dataset =
        o.manifest == "synthetic" ? "synthetic" : fs::path(o.manifest).stem().string();
    std::vector<BenchRecord> records;
    records.push_back(bench_dataset(model, o.model_name, dataset, samples));
    write_report(o, records);
    return 0;
}

int cmd_ablate(Options& o) {
    echo_config(o, "ablate");
    DeviceLock lock(o.device);
    std::vector<StereoSample> samples = load_samples(o);
    ModelConfig base = o.model_config();
    std::optional<VimStereoModel> trained;
    if (!o.checkpoint.empty()) {
        trained = VimStereoModel::load(o.checkpoint);
        base = trained->config();
    }
    auto factory = [&](int variant) {
        ModelConfig cfg = ablation_config(base, variant);
        return trained ? trained->variant(cfg) : VimStereoModel(cfg, o.seed);
    };
    std::string dataset =
        o.manifest == "synthetic" ? "synthetic" : fs::path(o.manifest).stem().string();
    AblationResult res = run_ablation(factory, dataset, samples);
    std::ofstream csv(fs::path(o.out) / "ablation.csv");
    csv << to_csv(res.records);
    std::ofstream md(fs::path(o.out) / "ablation.md");
    md << markdown_ablation_table(res);
    std::cout << markdown_ablation_table(res);
    return 0;
}

int cmd_render(Options& o) {
    echo_config(o, "render");
    require(!o.input.empty(), "render: --input is required");
    DisparityMap map = load_disparity(o.input);
    fs::path dst = fs::path(o.out) / (fs::path(o.input).stem().string() + "_heat.png");
    render_heatmap_png(map, dst.string());
    std::cout << "wrote " << dst.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bidirectional-SSM stereo disparity toolkit"};
    app.require_subcommand(1);

    Options o;
    // config file first, so explicit flags win over it
    for (int i = 1; i < argc - 1; ++i)
        if (std::string(argv[i]) == "--config") o.config_path = argv[i + 1];
    if (!o.config_path.empty()) {
        try {
            apply_config_file(o, o.config_path);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }

    CLI::App* train = app.add_subcommand("train", "overfit or fine-tune on a dataset");
    CLI::App* eval = app.add_subcommand("eval", "report EPE and D1 for a checkpoint");
    CLI::App* bench = app.add_subcommand("bench", "timed benchmark with memory probe");
    CLI::App* ablate = app.add_subcommand("ablate", "pass-policy / attention variants");
    CLI::App* render = app.add_subcommand("render", "disparity map to heat-map PNG");
    for (CLI::App* cmd : {train, eval, bench, ablate, render}) add_common_flags(cmd, o);
    bench->add_option("--report-only", o.report_only,
                      "recompute the efficiency score from a dataset,model,epe,fps,mem CSV");
    render->add_option("--input", o.input, "disparity file (.png KITTI encoding or .pfm)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (bench->parsed()) return cmd_bench(o);
        if (ablate->parsed()) return cmd_ablate(o);
        if (render->parsed()) return cmd_render(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
