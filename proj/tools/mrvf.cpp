// Pipeline driver: gen-voxels, build-dict, train, reconstruct, eval.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mrvf/errors.hpp"
#include "mrvf/pipeline.hpp"

namespace {

using namespace mrvf;
namespace pl = mrvf::pipeline;

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    bool quiet = false;

    pl::RunOptions run() const { return {threads, quiet ? nullptr : &std::cout}; }

    pl::PipelineConfig load() const {
        auto cfg = pl::load_config(config);
        if (seed) cfg.sampling.seed = *seed;
        return cfg;
    }
};

void add_common(CLI::App* sub, Common& c, bool config_required) {
    auto* opt = sub->add_option("--config", c.config, "pipeline config file");
    if (config_required) opt->required();
    sub->add_option("--seed", c.seed, "master seed (overrides sampling.seed)");
    sub->add_option("--threads", c.threads, "worker threads, 0 = all cores")->capture_default_str();
    sub->add_flag("--quiet", c.quiet, "suppress progress output");
}

reconstruction::Method parse_method(const std::string& s) { return reconstruction::method_from_string(s); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vascular MR fingerprinting pipeline"};
    app.require_subcommand(1);

    Common gen_c, dict_c, train_c, rec_c, eval_c;
    std::string gen_out, dict_out, manifest, train_dict, train_out, rec_input, rec_out, rec_method, eval_out,
        eval_method;
    std::optional<std::size_t> train_k;
    std::optional<std::string> rec_dict, rec_model;

    auto* gen = app.add_subcommand("gen-voxels", "generate voxel masks and their manifest");
    add_common(gen, gen_c, true);
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* build = app.add_subcommand("build-dict", "simulate a dictionary from a voxel manifest");
    add_common(build, dict_c, true);
    build->add_option("--manifest", manifest, "manifest written by gen-voxels")->required();
    build->add_option("--out", dict_out, "output MRVD file")->required();

    auto* train = app.add_subcommand("train", "fit the DBL regression model");
    add_common(train, train_c, false);
    train->add_option("--dict", train_dict, "MRVD dictionary")->required();
    train->add_option("--k", train_k, "component count (default: reconstruction.k, then n/500 capped at 50)");
    train->add_option("--out", train_out, "output MRVM file")->required();

    auto* rec = app.add_subcommand("reconstruct", "estimate parameter maps");
    add_common(rec, rec_c, false);
    rec->add_option("--input", rec_input, "FPV1 fingerprint volume or MRVD dictionary")->required();
    rec->add_option("--method", rec_method, "dbm or dbl (default: reconstruction.method)");
    rec->add_option("--dict", rec_dict, "MRVD dictionary for dbm");
    rec->add_option("--model", rec_model, "MRVM model for dbl");
    rec->add_option("--out", rec_out, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "recovery, cross-geometry bias and t-test reports");
    add_common(ev, eval_c, true);
    ev->add_option("--method", eval_method, "dbm or dbl (overrides reconstruction.method)");
    ev->add_option("--out", eval_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (gen->parsed()) {
            pl::cmd_gen_voxels(gen_c.load(), gen_out, gen_c.run());
        } else if (build->parsed()) {
            pl::cmd_build_dict(dict_c.load(), manifest, dict_out, dict_c.run());
        } else if (train->parsed()) {
            std::optional<pl::PipelineConfig> cfg;
            if (!train_c.config.empty()) cfg = train_c.load();
            const std::size_t k = train_k ? *train_k : (cfg ? cfg->reconstruction.k : 0);
            const std::uint64_t seed = train_c.seed ? *train_c.seed : (cfg ? cfg->sampling.seed : 0);
            pl::cmd_train(train_dict, k, seed, train_out, train_c.run(), cfg ? &*cfg : nullptr);
        } else if (rec->parsed()) {
            std::optional<pl::PipelineConfig> cfg;
            if (!rec_c.config.empty()) cfg = rec_c.load();
            pl::ReconstructRequest req;
            req.input = rec_input;
            req.method = !rec_method.empty() ? parse_method(rec_method)
                                             : (cfg ? cfg->reconstruction.method : reconstruction::Method::Dbm);
            if (rec_dict) req.dict = *rec_dict;
            if (rec_model) req.model = *rec_model;
            req.out_dir = rec_out;
            req.config = cfg ? &*cfg : nullptr;
            pl::cmd_reconstruct(req, rec_c.run());
        } else if (ev->parsed()) {
            auto cfg = eval_c.load();
            if (!eval_method.empty()) cfg.reconstruction.method = parse_method(eval_method);
            pl::cmd_eval(cfg, eval_out, eval_c.run());
        }
    } catch (const ValidationError& e) {
        std::cerr << "mrvf: validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const FormatError& e) {
        std::cerr << "mrvf: format error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const VersionError& e) {
        std::cerr << "mrvf: version error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "mrvf: error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
