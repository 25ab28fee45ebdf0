#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ktf/checkpoint.hpp"
#include "ktf/config.hpp"
#include "ktf/dataset_io.hpp"
#include "ktf/streaming.hpp"
#include "ktf/train.hpp"

namespace fs = std::filesystem;
using namespace ktf;

namespace {

constexpr const char* kUsage =
    "usage: ktf <prepare|train|evaluate|simulate> [--config PATH] [--seed N] [--out DIR]\n"
    "           [--KEY VALUE ...]   any config key can be overridden as a flag\n";

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const auto n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Cli {
    std::string command;
    std::string config_path;
    RunConfig cfg;
};

// --config is applied before every other flag no matter where it appears,
// so flags always win over the file
Cli parse_cli(int argc, char** argv) {
    Cli cli;
    cli.command = argv[1];
    std::vector<std::pair<std::string, std::string>> flags;
    for (int i = 2; i < argc; i += 2) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0 || key.size() == 2)
            throw ConfigError("expected --key, got '" + key + "'");
        if (i + 1 >= argc) throw ConfigError("flag " + key + " needs a value");
        key.erase(0, 2);
        std::replace(key.begin(), key.end(), '-', '_');
        if (key == "config") cli.config_path = argv[i + 1];
        else flags.emplace_back(key, argv[i + 1]);
    }
    if (!cli.config_path.empty()) load_config_file(cli.cfg, cli.config_path);
    for (const auto& [key, value] : flags) {
        const std::string& k = key == "out" ? "out_dir" : key;
        apply_config_value(cli.cfg, k, value);
        cli.cfg.from_flags.insert(k);
    }
    return cli;
}

void require_key(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError(std::string("config: ") + key + " is required");
}

// deterministic provenance record: command, config, seed, input digests,
// then the full effective config. No wall-clock — reruns must match bytes.
void write_run_log(const Cli& cli, const std::vector<std::string>& inputs) {
    fs::create_directories(cli.cfg.out_dir);
    std::ofstream log(fs::path(cli.cfg.out_dir) / "run.log", std::ios::binary);
    if (!log) throw DataError("cannot write run.log in " + cli.cfg.out_dir);
    log << "command=" << cli.command << "\n";
    log << "config_file=" << (cli.config_path.empty() ? "(none)" : cli.config_path);
    if (!cli.config_path.empty()) log << " digest=" << hex64(file_digest(cli.config_path));
    log << "\n";
    log << "seed=" << cli.cfg.seed << "\n";
    for (const auto& p : inputs) log << "input=" << p << " digest=" << hex64(file_digest(p)) << "\n";
    log << "=== effective config ===\n" << dump_config(cli.cfg);

    std::ofstream eff(fs::path(cli.cfg.out_dir) / "effective.cfg", std::ios::binary);
    eff << dump_config(cli.cfg);
}

struct LoadedRun {
    PreparedData data;
    ContentFeatures features;
    Split split;
};

LoadedRun load_run(RunConfig& cfg) {
    require_key(cfg.data_dir, "data_dir");
    LoadedRun r;
    r.data = load_prepared(cfg.data_dir);
    cfg.model.num_contents = r.data.num_questions + r.data.num_lectures;
    cfg.model.num_tags = r.data.num_tags;
    r.features = build_content_features(r.data);
    r.split = split_train_validation(r.data.sequences, cfg.holdout_fraction,
                                     cfg.new_user_fraction, cfg.seed);
    return r;
}

// a --seq-len flag on evaluate/simulate retargets the inference window
// unless --eval-seq-len pins it explicitly
int64_t inference_window(const RunConfig& cfg) {
    if (cfg.from_flags.count("seq_len") && !cfg.from_flags.count("eval_seq_len"))
        return cfg.train.seq_len;
    return cfg.train.eval_seq_len;
}

int command_prepare(Cli& cli) {
    auto& cfg = cli.cfg;
    require_key(cfg.train_csv, "train_csv");
    require_key(cfg.questions_csv, "questions_csv");
    require_key(cfg.lectures_csv, "lectures_csv");
    require_key(cfg.out_dir, "out_dir");

    const auto d = prepare_dataset(cfg.train_csv, cfg.questions_csv, cfg.lectures_csv);
    save_prepared(cfg.out_dir, d);
    write_run_log(cli, {cfg.train_csv, cfg.questions_csv, cfg.lectures_csv});

    std::cout << "rows=" << d.num_rows() << " users=" << d.sequences.size()
              << " questions=" << d.num_questions << " lectures=" << d.num_lectures
              << " tags=" << d.num_tags << "\n";
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(cfg.out_dir)) {
        const auto n = e.path().filename().string();
        if (n == "manifest.txt" || n == "contents.bin" || n.rfind("users_", 0) == 0)
            names.push_back(n);
    }
    std::sort(names.begin(), names.end());
    for (const auto& n : names)
        std::cout << "shard " << n << " digest="
                  << hex64(file_digest((fs::path(cfg.out_dir) / n).string())) << "\n";
    return 0;
}

int command_train(Cli& cli) {
    auto& cfg = cli.cfg;
    auto run = load_run(cfg);
    write_run_log(cli, {});

    Rng model_rng = Rng::derive(cfg.seed, {3});
    Model<double> model(cfg.model, model_rng);
    AdamState<double> adam;
    adam.init(model.parameters());
    TrainerState ts;
    if (!cfg.checkpoint.empty()) {
        ts = load_checkpoint(cfg.checkpoint, model, adam);
        std::cout << "resumed from " << cfg.checkpoint << " at step " << ts.step << "\n";
    }

    fs::create_directories(cfg.out_dir);
    const auto metrics_path = fs::path(cfg.out_dir) / "metrics.tsv";
    const bool resuming = !cfg.checkpoint.empty();
    std::ofstream metrics(metrics_path,
                          std::ios::binary | (resuming ? std::ios::app : std::ios::trunc));
    if (!metrics) throw DataError("cannot write " + metrics_path.string());
    if (!resuming || fs::file_size(metrics_path) == 0) metrics << kMetricsHeader << "\n";

    const auto outcome = train_model(model, run.features, run.split, cfg.train, adam, ts, &metrics);
    metrics.flush();

    const auto ckpt = (fs::path(cfg.out_dir) / "model.ktc").string();
    save_checkpoint(ckpt, model, adam, outcome.state);

    std::cout << "trained steps=" << outcome.state.step
              << (outcome.early_stopped ? " (early stop)" : "") << "\n";
    std::cout << "checkpoint=" << ckpt << "\n";
    if (outcome.final_metrics.count > 0)
        std::cout << "final val_auc=" << g17(outcome.final_metrics.auc)
                  << " val_acc=" << g17(outcome.final_metrics.accuracy)
                  << " val_loss=" << g17(outcome.final_metrics.loss)
                  << " count=" << outcome.final_metrics.count << "\n";
    else
        std::cout << "final (no validation rows)\n";
    return 0;
}

int command_evaluate(Cli& cli) {
    auto& cfg = cli.cfg;
    require_key(cfg.checkpoint, "checkpoint");
    auto run = load_run(cfg);
    write_run_log(cli, {cfg.checkpoint});

    Rng model_rng = Rng::derive(cfg.seed, {3});
    Model<double> model(cfg.model, model_rng);
    AdamState<double> adam;
    adam.init(model.parameters());
    load_checkpoint(cfg.checkpoint, model, adam);

    const int64_t L = inference_window(cfg);
    const auto rep = evaluate_split(model, run.features, run.split.validation,
                                    run.split.score_from, L, cfg.train.eval_batch_size);
    std::cout << "eval seq_len=" << L << " val_auc=" << g17(rep.auc)
              << " val_acc=" << g17(rep.accuracy) << " val_loss=" << g17(rep.loss)
              << " count=" << rep.count << "\n";
    return 0;
}

int command_simulate(Cli& cli) {
    auto& cfg = cli.cfg;
    require_key(cfg.checkpoint, "checkpoint");
    auto run = load_run(cfg);
    write_run_log(cli, {cfg.checkpoint});

    Rng model_rng = Rng::derive(cfg.seed, {3});
    Model<double> model(cfg.model, model_rng);
    AdamState<double> adam;
    adam.init(model.parameters());
    load_checkpoint(cfg.checkpoint, model, adam);

    const int64_t L = inference_window(cfg);
    const auto sim = run_simulation(model, run.features, run.split, cfg.group_cap, L);

    fs::create_directories(cfg.out_dir);
    const auto pred_path = fs::path(cfg.out_dir) / "predictions.csv";
    std::ofstream out(pred_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + pred_path.string());
    out << "row_id,answered_correctly\n";
    for (const auto& [row_id, p] : sim.predictions) out << row_id << ',' << g17(p) << "\n";
    out.close();

    const auto offline = evaluate_split(model, run.features, run.split.validation,
                                        run.split.score_from, L, cfg.train.eval_batch_size);
    const double gap = std::abs(sim.metrics.auc - offline.auc);
    std::cout << "predictions=" << sim.predictions.size() << " file=" << pred_path.string() << "\n";
    std::cout << "sim val_auc=" << g17(sim.metrics.auc) << " val_acc=" << g17(sim.metrics.accuracy)
              << " val_loss=" << g17(sim.metrics.loss) << "\n";
    std::cout << "offline val_auc=" << g17(offline.auc) << " auc_gap=" << g17(gap) << "\n";
    std::cout << "rows_per_second=" << g17(sim.rows_per_second) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << kUsage;
        return 2;
    }
    try {
        Cli cli = parse_cli(argc, argv);
        if (cli.command == "prepare") return command_prepare(cli);
        if (cli.command == "train") return command_train(cli);
        if (cli.command == "evaluate") return command_evaluate(cli);
        if (cli.command == "simulate") return command_simulate(cli);
        std::cerr << "unknown command '" << cli.command << "'\n" << kUsage;
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {  // ShapeError lands here too
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
