// cmi_attack: command-line front end for the attack library.
//
// Exit codes: 0 success, 1 gradcheck over tolerance, 2 configuration error,
// 3 data error, 4 missing backend capability.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cmi/cmi.hpp"

namespace {

using namespace cmi;

struct Common {
    std::string config_path;
    std::string manifest_path;
    std::string embeddings_path;
    std::string synonyms_path;
    std::string out_path;
    std::string backend = "toy";
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::size_t embedding_dim = 16;
    std::string asr_base = "prefiltered";
};

// Everything an attack run needs, loaded from the command-line inputs.
struct Session {
    AttackConfig cfg;
    DatasetManifest manifest;
    RetrievalCorpus corpus;
    std::shared_ptr<const WordEmbeddingTable> table;
    std::unique_ptr<ToyAlignedBackend> backend;
    std::unique_ptr<UnigramFiller> filler;
    std::unique_ptr<SynonymFiller> synonyms;
    json inputs = json::object();

    AttackResources resources() const { return {*backend, *table, *filler, synonyms.get()}; }
};

std::string file_digest(const std::string& path) { return digest_hex(read_file(path)); }

Session open_session(const Common& c) {
    Session s;
    if (!c.config_path.empty()) {
        s.cfg = load_config(c.config_path);
        s.inputs["config"] = file_digest(c.config_path);
    }
    if (c.seed) s.cfg.seed = *c.seed;
    validate(s.cfg);
    if (c.backend != "toy") throw CapabilityError("backend '" + c.backend + "' is not available in this build");

    s.manifest = load_manifest(c.manifest_path);
    s.corpus = corpus_from_manifest(s.manifest);
    s.inputs["manifest"] = file_digest(c.manifest_path);

    auto loaded = load_embedding_table(c.embeddings_path);
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
    s.table = std::make_shared<const WordEmbeddingTable>(std::move(loaded.table));
    s.inputs["embeddings"] = file_digest(c.embeddings_path);

    if (!c.synonyms_path.empty()) {
        s.synonyms = std::make_unique<SynonymFiller>(load_synonyms(c.synonyms_path));
        s.inputs["synonyms"] = file_digest(c.synonyms_path);
    }
    const Shape3 shape = s.corpus.items.front().image.shape();
    s.backend = std::make_unique<ToyAlignedBackend>(s.cfg.seed, shape, c.embedding_dim, s.table);
    s.filler = std::make_unique<UnigramFiller>(UnigramFiller::seeded(s.table->tokens(), s.cfg.seed));
    return s;
}

void write_json(const std::string& path, const json& j) {
    const std::string text = canonical_dump(j) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_file(path, text);
    }
}

int run_attack(const Common& c) {
    const Session s = open_session(c);
    const auto attacked = attack_corpus(s.resources(), s.corpus, s.cfg, c.workers);

    RunArtifact artifact;
    artifact.config_snapshot = to_json(s.cfg);
    artifact.backend = to_json(s.backend->descriptor());
    artifact.inputs = s.inputs;
    for (std::size_t i = 0; i < s.corpus.items.size(); ++i)
        artifact.pairs.push_back(to_json(s.corpus.items[i].pair_id, attacked.outcomes[i]));
    artifact.aggregate = aggregate_results(attacked.outcomes);
    const auto ev =
        evaluate_corpus(*s.backend, s.corpus, attacked.adv_images, attacked.adv_captions, asr_base_from_string(c.asr_base));
    artifact.aggregate["retrieval"] = to_json(ev.metrics);
    artifact.seed = s.cfg.seed;
    artifact.timestamp = utc_timestamp();
    persist_run(artifact, c.out_path);
    std::cerr << "attacked " << s.corpus.items.size() << " pairs (" << attacked.failures << " failed) -> "
              << c.out_path << "\n";
    return 0;
}

int run_eval(const Common& c, const std::string& run_path) {
    const RunArtifact run = load_run(run_path);
    Common opened = c;
    if (!opened.seed) opened.seed = run.seed;
    if (run.backend.contains("embedding_dim")) opened.embedding_dim = run.backend.at("embedding_dim").get<std::size_t>();
    const Session s = open_session(opened);

    std::map<std::string, const json*> by_id;
    for (const auto& p : run.pairs) by_id[p.at("pair_id").get<std::string>()] = &p;
    std::vector<ImageTensor> images;
    std::vector<CaptionSet> captions;
    for (const auto& item : s.corpus.items) {
        const auto it = by_id.find(item.pair_id);
        if (it == by_id.end()) throw PairingError("pair '" + item.pair_id + "' is missing from the run artifact");
        const json& p = *it->second;
        if (p.at("status") == "ok") {
            images.push_back(image_from_json(p.at("adv_image")));
            CaptionSet caps;
            for (const auto& t : p.at("adv_captions")) caps.push_back(Caption::from_text(t.get<std::string>()));
            captions.push_back(std::move(caps));
        } else {
            images.push_back(item.image);
            captions.push_back(item.captions);
        }
    }
    const auto ev = evaluate_corpus(*s.backend, s.corpus, images, captions, asr_base_from_string(c.asr_base));
    json records = json::array();
    for (const auto& r : make_eval_records(ev.clean, ev.adv)) {
        records.push_back(json{{"pair_id", r.pair_id},
                               {"tr_rank_clean", r.tr_rank_clean},
                               {"tr_rank_adv", r.tr_rank_adv},
                               {"ir_rank_clean", r.ir_rank_clean},
                               {"ir_rank_adv", r.ir_rank_adv}});
    }
    write_json(c.out_path, json{{"asr_base", c.asr_base},
                                {"metrics", to_json(ev.metrics)},
                                {"records", records},
                                {"run", file_digest(run_path)},
                                {"timestamp", utc_timestamp()}});
    return 0;
}

int run_ablate(const Common& c, const std::vector<std::size_t>& n_sweep) {
    const Session s = open_session(c);
    if (!s.synonyms) throw ConfigError("synonyms: ablate needs --synonyms for the text-strategy sweep");
    AblationOptions opt;
    opt.n_sweep = n_sweep;
    opt.asr_base = asr_base_from_string(c.asr_base);
    opt.workers = c.workers;
    auto report = run_ablation(s.resources(), s.corpus, s.cfg, opt);
    report.timestamp = utc_timestamp();
    write_json(c.out_path, to_json(report));
    return 0;
}

int run_gen_toy(const std::string& out_dir, const ToyCorpusSpec& spec) {
    const auto toy = generate_toy_corpus(spec);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    write_file((dir / "manifest.json").string(), canonical_dump(to_json(toy.manifest)) + "\n");
    save_embedding_table(*toy.table, (dir / "embeddings.txt").string());
    json syn = json::object();
    for (const auto& [k, v] : toy.synonyms) syn[k] = v;
    write_file((dir / "synonyms.json").string(), canonical_dump(syn) + "\n");
    // The toy backend weights are a function of the seed, so the attack must
    // run with the seed the corpus was aligned to.
    AttackConfig cfg;
    cfg.seed = spec.seed;
    write_file((dir / "config.json").string(), canonical_dump(to_json(cfg)) + "\n");
    std::cerr << "wrote " << spec.n_pairs << " pairs to " << out_dir << " (matched sim " << toy.matched_mean_sim
              << ", mismatched " << toy.mismatched_mean_sim << ")\n";
    return 0;
}

// Central-difference audit of the image-phase gradient on the first pair.
int run_gradcheck(const Common& c, double h, double tolerance) {
    const Session s = open_session(c);
    const auto& item = s.corpus.items.front();
    const auto scales = image_phase_scales(s.cfg, item.captions.size());
    const auto analytic = image_gradient(*s.backend, s.cfg.image_set_loss, item.image, item.captions, scales);
    const auto text = encode_captions(*s.backend, item.captions);

    Tensor3 probe(item.image.tensor());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        auto loss_at = [&](double v) {
            Tensor3 t = probe;
            t[i] = v;
            const ImageTensor x = ImageTensor::clamped(std::move(t));
            std::vector<EmbeddingVector> embs;
            for (double sc : scales) embs.push_back(encode_scaled(*s.backend, x, sc));
            return set_loss(s.cfg.image_set_loss, text, embs);
        };
        // One-sided near the box edges so both probes stay inside [0,1].
        const double x0 = probe[i];
        const double lo = std::max(0.0, x0 - h);
        const double hi = std::min(1.0, x0 + h);
        const double numeric = (loss_at(hi) - loss_at(lo)) / (hi - lo);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-7});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    write_json(c.out_path, json{{"pair_id", item.pair_id},
                                {"set_loss", to_string(s.cfg.image_set_loss.kind)},
                                {"max_relative_error", worst},
                                {"tolerance", tolerance},
                                {"pass", worst <= tolerance}});
    return worst <= tolerance ? 0 : 1;
}

void add_inputs(CLI::App* cmd, Common& c, bool need_out) {
    cmd->add_option("--config", c.config_path, "attack configuration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--manifest", c.manifest_path, "dataset manifest JSON")->required();
    cmd->add_option("--embeddings", c.embeddings_path, "word embedding text file")->required();
    cmd->add_option("--synonyms", c.synonyms_path, "synonym list JSON");
    auto* out = cmd->add_option("--out", c.out_path, "output file");
    if (need_out) out->required();
    cmd->add_option("--backend", c.backend, "model backend")->capture_default_str();
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--workers", c.workers, "parallel workers")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--embedding-dim", c.embedding_dim, "toy backend embedding size")->capture_default_str();
    cmd->add_option("--asr-base", c.asr_base, "prefiltered or all")
        ->capture_default_str()
        ->check(CLI::IsMember({"prefiltered", "all"}));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Collaborative multimodal adversarial attack on image-text retrieval"};
    app.require_subcommand(1);

    Common common;
    std::string run_path;
    std::vector<std::size_t> n_sweep{1, 3, 5};
    std::string toy_dir;
    ToyCorpusSpec toy;
    std::size_t toy_side = 16;
    double fd_step = 1e-5;
    double fd_tolerance = 1e-4;

    auto* attack = app.add_subcommand("attack", "attack every pair in a manifest and write a run artifact");
    add_inputs(attack, common, true);

    auto* eval = app.add_subcommand("eval", "retrieval metrics for a run artifact");
    add_inputs(eval, common, false);
    eval->add_option("--run", run_path, "run artifact from `attack`")->required()->check(CLI::ExistingFile);

    auto* ablate = app.add_subcommand("ablate", "EG/IE grid, text-strategy and interaction-step sweeps");
    add_inputs(ablate, common, false);
    ablate->add_option("--n-sweep", n_sweep, "interaction step counts")->capture_default_str();

    auto* gen = app.add_subcommand("gen-toy", "write a seeded toy corpus (manifest, embeddings, synonyms)");
    gen->add_option("--out-dir", toy_dir, "output directory")->required();
    gen->add_option("--seed", toy.seed)->capture_default_str();
    gen->add_option("--pairs", toy.n_pairs)->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--side", toy_side, "image height and width")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--channels", toy.image_shape.channels)->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--vocab", toy.vocab_size)->capture_default_str();
    gen->add_option("--clusters", toy.n_clusters)->capture_default_str();
    gen->add_option("--embedding-dim", toy.embedding_dim)->capture_default_str();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference audit of the image gradient");
    add_inputs(grad, common, false);
    grad->add_option("--step", fd_step)->capture_default_str();
    grad->add_option("--tolerance", fd_tolerance)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (attack->parsed()) return run_attack(common);
        if (eval->parsed()) return run_eval(common, run_path);
        if (ablate->parsed()) return run_ablate(common, n_sweep);
        if (gen->parsed()) {
            toy.image_shape.height = toy.image_shape.width = toy_side;
            return run_gen_toy(toy_dir, toy);
        }
        if (grad->parsed()) return run_gradcheck(common, fd_step, fd_tolerance);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CapabilityError& e) {
        std::cerr << "capability error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
