#include "hmte/commands.hpp"

#include "hmte/checkpoint.hpp"
#include "hmte/config.hpp"
#include "hmte/gradcheck_suite.hpp"
#include "hmte/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;

namespace hmte {

namespace {

struct RunLayout {
    fs::path root;
    fs::path config_echo() const { return root / "config.echo"; }
    fs::path ckpt() const { return root / "ckpt"; }
    fs::path logs() const { return root / "logs"; }
    fs::path reports() const { return root / "reports"; }

    void create() const {
        for (const auto& d : {root, ckpt(), logs(), reports()}) fs::create_directories(d);
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> explicit_seed) {
    if (explicit_seed) return *explicit_seed;
    if (auto env = seed_from_env()) return *env;
    return 0;
}

struct LoadedModel {
    RunConfig config;
    ParamStore store;
    std::unique_ptr<HybridModel> model;
};

std::unique_ptr<LoadedModel> load_model(const fs::path& checkpoint) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    auto m = std::make_unique<LoadedModel>();
    m->config = parse_config(ck.config_text);
    m->config.validate();
    std::mt19937_64 rng(m->config.seed);
    m->model = std::make_unique<HybridModel>(m->config.model, m->store, rng);
    restore_params(ck, m->store);
    return m;
}

std::string report_header(const RunConfig& config, const std::string& what, std::size_t n) {
    std::ostringstream os;
    os << "config_digest = " << fnv1a_hex(config_echo(config)) << '\n'
       << "evaluated = " << what << '\n'
       << "images = " << n << '\n';
    return os.str();
}

void write_reports(const fs::path& dir, const std::string& name, const Evaluation& e, const std::string& header) {
    std::ostringstream h;
    h << header;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "loss_total = %.6f\nloss_focal = %.6f\nloss_dice = %.6f\n", e.loss.total,
                  e.loss.focal, e.loss.dice);
    h << buf;
    write_text(dir / (name + ".txt"), format_report_table(e.report, h.str()));
    write_text(dir / (name + ".csv"), format_report_csv(e.report, h.str()));
}

std::vector<Sample> pick(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(samples[i]);
    return out;
}

struct SplitRow {
    std::string image_path;
    std::string case_id;
    Split split;
};

inline constexpr const char* kSplitHeader = "image_path,case_id,split";

void write_split_file(const fs::path& path, const std::vector<ManifestRow>& rows, const SplitAssignment& a) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << kSplitHeader << '\n';
    for (const auto& r : rows) f << r.image_path.generic_string() << ',' << r.case_id << ',' << split_name(a.of(r.case_id)) << '\n';
}

std::vector<SplitRow> read_split_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open split file " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != kSplitHeader) {
        throw std::runtime_error(path.string() + ": expected header '" + kSplitHeader + "'");
    }
    std::vector<SplitRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.rfind(',');
        if (a == std::string::npos || a == b) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), parse_split(line.substr(b + 1))});
    }
    return rows;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace

int cmd_gen_synth(const GenSynthArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.n <= 0 || args.n % 2 != 0) throw UsageError("--n must be a positive even number");
        if (args.size < 16) throw UsageError("--size must be >= 16");
        if (args.out.empty()) throw UsageError("--out is required");
        const std::uint64_t seed = resolve_seed(args.seed);
        std::error_code ec;
        fs::create_directories(args.out / "images", ec);
        fs::create_directories(args.out / "masks", ec);
        if (ec) throw std::runtime_error("cannot create " + args.out.string() + ": " + ec.message());

        const std::vector<Sample> samples = synth_generate(args.n, args.size, seed);
        std::vector<ManifestRow> rows;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%05zu.pgm", i);
            ManifestRow r{fs::path("images") / name, fs::path("masks") / name, samples[i].label, samples[i].case_id};
            write_pgm(args.out / r.image_path, samples[i].image);
            write_pgm(args.out / r.mask_path, samples[i].mask);
            rows.push_back(std::move(r));
        }
        write_manifest(args.out / "manifest.csv", rows);
        const auto baseline = IntensityBaseline::fit(samples);
        out << "wrote " << samples.size() << " samples to " << (args.out / "manifest.csv").string() << '\n'
            << "seed " << seed << '\n'
            << "mean-intensity baseline accuracy " << std::fixed << std::setprecision(4)
            << baseline.accuracy(samples) << '\n';
        return kExitOk;
    });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.config.empty()) throw UsageError("--config is required");
        if (args.out.empty()) throw UsageError("--out is required");
        RunConfig config = load_config(args.config);
        for (const auto& kv : args.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("override '" + kv + "' is not key=value");
            set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (args.manifest) config.manifest = *args.manifest;
        if (args.seed) {
            config.seed = *args.seed;
        } else if (!config.explicit_keys.contains("seed")) {
            config.seed = resolve_seed(std::nullopt);
        }
        if (config.manifest.empty()) throw UsageError("no manifest: set 'manifest' in the config or pass --manifest");
        config.validate();

        const RunLayout run{args.out};
        run.create();
        const std::string echo = config_echo(config);
        write_text(run.config_echo(), echo);
        const std::string digest = fnv1a_hex(echo);
        out << "config digest " << digest << '\n';

        const std::vector<ManifestRow> rows = read_manifest(config.manifest);
        const std::vector<Sample> samples = load_samples(config.manifest, config.model.image_size);
        const SplitAssignment split = case_level_split(samples, config.split, config.seed);
        write_split_file(run.reports() / "split.csv", rows, split);
        const auto train = pick(samples, split.indices(samples, Split::Train));
        const auto val = pick(samples, split.indices(samples, Split::Val));
        const auto test = pick(samples, split.indices(samples, Split::Test));
        out << "split train=" << train.size() << " val=" << val.size() << " test=" << test.size() << '\n';

        Trainer trainer(config);
        out << "parameters " << trainer.params().element_count() << " in " << trainer.params().size()
            << " tensors\n";
        std::ofstream log(run.logs() / "train.log");
        std::ofstream csv(run.logs() / "train.csv");
        csv << "epoch,train_total,train_focal,train_dice,val_total,val_focal,val_dice,val_acc,val_dsc,seconds\n";
        const fs::path best = run.ckpt() / "best.ckpt";

        TrainOptions opts;
        opts.on_epoch = [&](const EpochLog& e) {
            char line[256];
            std::snprintf(line, sizeof(line),
                          "epoch %3lld  train %.5f (focal %.5f dice %.5f)  val %.5f  val_acc %.4f  val_dsc %.4f  %.1fs",
                          static_cast<long long>(e.epoch), e.train.total, e.train.focal, e.train.dice, e.val.total,
                          e.val_acc ? e.val_acc->value() : 0.0, e.val_dsc, e.seconds);
            out << line << '\n' << std::flush;
            log << line << '\n' << std::flush;
            csv << std::setprecision(10) << e.epoch << ',' << e.train.total << ',' << e.train.focal << ','
                << e.train.dice << ',' << e.val.total << ',' << e.val.focal << ',' << e.val.dice << ','
                << (e.val_acc ? e.val_acc->value() : 0.0) << ',' << e.val_dsc << ',' << e.seconds << '\n'
                << std::flush;
        };
        opts.on_best = [&](const EpochLog&) { save_checkpoint(best, echo, trainer.params()); };

        const TrainResult result = trainer.fit(train, val, opts);
        if (val.empty()) save_checkpoint(best, echo, trainer.params());

        std::ofstream steps(run.logs() / "steps.csv");
        steps << "step,total,focal,dice\n" << std::setprecision(17);
        for (std::size_t i = 0; i < result.steps.size(); ++i) {
            const auto& s = result.steps[i];
            steps << i << ',' << s.total << ',' << s.focal << ',' << s.dice << '\n';
        }
        out << "best epoch " << result.best_epoch << " checkpoint " << best.string() << '\n';

        if (!test.empty()) {
            const Evaluation e = evaluate(trainer.model(), test, config.loss);
            write_reports(run.reports(), "test", e, report_header(config, "test", test.size()));
            out << format_report_table(e.report, "");
        }
        return kExitOk;
    });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.checkpoint.empty() || args.manifest.empty()) throw UsageError("--checkpoint and --manifest are required");
        Split wanted;
        try {
            wanted = parse_split(args.split);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        const auto loaded = load_model(args.checkpoint);
        const RunConfig& config = loaded->config;
        const fs::path run_dir = args.out ? *args.out : fs::absolute(args.checkpoint).parent_path().parent_path();
        const RunLayout run{run_dir};
        fs::create_directories(run.reports());

        const std::vector<ManifestRow> rows = read_manifest(args.manifest);
        const std::vector<Sample> samples = load_samples(args.manifest, config.model.image_size);

        std::optional<fs::path> split_path = args.split_file;
        if (!split_path && fs::exists(run.reports() / "split.csv")) split_path = run.reports() / "split.csv";

        std::vector<std::size_t> idx;
        std::vector<SplitRecord> records;
        if (split_path) {
            const auto listed = read_split_file(*split_path);
            std::map<std::string, Split> by_image;
            for (const auto& r : listed) {
                records.push_back({r.case_id, r.split});
                by_image[r.image_path] = r.split;
            }
            // The manifest's own case ids under the listed splits must not straddle either.
            for (const auto& r : rows) {
                const auto it = by_image.find(r.image_path.generic_string());
                if (it == by_image.end()) throw std::runtime_error("image " + r.image_path.string() + " missing from split file");
                records.push_back({r.case_id, it->second});
            }
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (by_image.at(rows[i].image_path.generic_string()) == wanted) idx.push_back(i);
            }
        } else {
            const SplitAssignment a = case_level_split(samples, config.split, config.seed);
            for (const auto& s : samples) records.push_back({s.case_id, a.of(s.case_id)});
            idx = a.indices(samples, wanted);
        }
        const auto leaks = find_split_leaks(records);
        if (!leaks.empty()) {
            throw std::runtime_error("split leakage: case '" + leaks.front() + "' appears in more than one split (" +
                                     std::to_string(leaks.size()) + " leaking cases)");
        }
        if (idx.empty()) throw std::runtime_error("split '" + args.split + "' is empty");

        const auto subset = pick(samples, idx);
        const Evaluation e = evaluate(*loaded->model, subset, config.loss);
        write_reports(run.reports(), "eval_" + args.split, e, report_header(config, args.split, subset.size()));
        out << report_header(config, args.split, subset.size()) << format_report_table(e.report, "");
        out << "reports in " << run.reports().string() << '\n';
        return kExitOk;
    });
}

int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.checkpoint.empty() || args.image.empty() || args.out.empty()) {
            throw UsageError("--checkpoint, --image and --out are required");
        }
        const auto loaded = load_model(args.checkpoint);
        const Index size = loaded->config.model.image_size;
        Image image = read_pgm(args.image);
        if (image.rows() != size || image.cols() != size) {
            err << "warning: image is " << image.rows() << "x" << image.cols() << ", zero-padding to square and resizing to "
                << size << "x" << size << '\n';
            const PaddedPair p = zero_pad_square(image, Image::Zero(image.rows(), image.cols()));
            image = resize_bilinear(p.image, size, size);
        }
        NoGradGuard no_grad;
        std::mt19937_64 unused(0);
        const MultitaskOutput o = loaded->model->forward(to_tensor(image), false, unused);
        fs::create_directories(args.out);
        const Image prob = from_tensor(o.mask_prob);
        write_pgm(args.out / "mask_prob.pgm", prob);
        write_pgm(args.out / "mask.pgm", (prob >= Real(0.5)).cast<Real>());
        const double p = static_cast<double>(o.class_prob.item());
        char line[64];
        std::snprintf(line, sizeof(line), "class_prob %.4f", p);
        out << line << '\n' << "label " << (p >= 0.5 ? "malignant" : "benign") << '\n';
        return kExitOk;
    });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (args.size < 16 || args.size % 16 != 0) throw UsageError("--size must be a positive multiple of 16");
        GradCheckSuiteOptions opt;
        opt.size = args.size;
        opt.seed = resolve_seed(args.seed);
        const auto t0 = std::chrono::steady_clock::now();
        const auto entries = run_gradcheck_suite(opt);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << format_gradcheck_table(entries, opt.tolerance);
        std::size_t failed = 0;
        for (const auto& e : entries) failed += !e.pass;
        out << entries.size() << " components, " << failed << " failed, " << std::fixed << std::setprecision(1) << secs
            << "s\n";
        return failed == 0 ? kExitOk : kExitFailure;
    });
}

}  // namespace hmte
