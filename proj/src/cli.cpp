#include "ctree/cli.hpp"

#include <algorithm>
#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctree/archive.hpp"
#include "ctree/errors.hpp"
#include "ctree/heatmap.hpp"
#include "ctree/mock_backend.hpp"
#include "ctree/service.hpp"
#include "ctree/tree_builder.hpp"
#include "ctree/vector_file.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ctree {
namespace {

struct BackendFlags {
    std::string kind;
    std::string concept_space;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--backend", kind, "mock or real (default: $BACKEND, else mock)")
            ->check(CLI::IsMember({"mock", "real"}));
        cmd->add_option("--concept-space", concept_space, "mock concept-space JSON (default: $MOCK_CONCEPT_SPACE)");
    }

    std::shared_ptr<DiffusionBackend> make() const {
        BackendOptions o = backend_options_from_env();
        if (kind == "mock") o.kind = BackendKind::mock;
        if (kind == "real") o.kind = BackendKind::real;
        if (!concept_space.empty()) o.concept_space_path = concept_space;
        return make_backend(o);
    }
};

std::vector<std::int64_t> parse_seeds(const std::string& text) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            fail(ErrorCode::invalid_argument, "bad seed '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

ImageSet read_image_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorCode::io, dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".vec" || ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".webp") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    ImageSet set;
    for (const auto& f : files) {
        ImageRef img;
        img.id = f.stem().string();
        if (f.extension() == ".vec") {
            img.vector = read_vector_file(f);
        } else {
            img.path = fs::absolute(f);
        }
        set.images.push_back(std::move(img));
    }
    if (set.empty()) fail(ErrorCode::empty_set, "no images (.vec, .png, .jpg, .webp) in " + dir.string());
    return set;
}

json report_json(const ConsistencyReport& r) {
    return {{"self_left", r.self_left}, {"self_right", r.self_right}, {"cross", r.cross},
            {"objective", r.objective}};
}

json summary_json(const ConceptTree& tree) {
    json nodes = json::array();
    for (const auto& [id, n] : tree.nodes) {
        json j = {{"id", id}, {"depth", n.depth}, {"status", to_string(n.status)}, {"children", n.children}};
        if (n.token) j["token"] = *n.token;
        if (n.parent) j["parent"] = *n.parent;
        if (n.self_consistency) j["self_consistency"] = *n.self_consistency;
        if (n.sibling_cross_consistency) j["sibling_cross_consistency"] = *n.sibling_cross_consistency;
        nodes.push_back(std::move(j));
    }
    return {{"tree_id", tree.tree_id}, {"nodes", nodes}, {"splits", tree.build_log.size()}};
}

void print_tree(std::ostream& out, const ConceptTree& tree) {
    std::function<void(NodeId, int)> walk = [&](NodeId id, int indent) {
        const auto& n = tree.node(id);
        out << std::string(static_cast<std::size_t>(indent) * 2, ' ') << (n.token ? *n.token : "root") << "  ["
            << to_string(n.status) << "]";
        if (n.self_consistency) out << "  self=" << *n.self_consistency;
        if (n.sibling_cross_consistency) out << "  cross=" << *n.sibling_cross_consistency;
        out << "\n";
        for (const NodeId c : n.children) walk(c, indent + 1);
    };
    walk(0, 0);
}

void write_images(const ImageSet& set, const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& img = set.images[i];
        if (img.has_inline_payload()) {
            write_vector_file(dir / (std::to_string(i) + ".vec"), img.vector);
        } else {
            fs::copy_file(img.path, dir / (std::to_string(i) + img.path.extension().string()),
                          fs::copy_options::overwrite_existing);
        }
    }
}

json images_json(const ImageSet& set) {
    json out = json::array();
    for (const auto& img : set.images) {
        json e = {{"id", img.id}};
        if (img.seed) e["seed"] = *img.seed;
        if (img.prompt) e["prompt"] = *img.prompt;
        if (img.has_inline_payload()) e["vector"] = img.vector;
        else e["path"] = img.path.string();
        out.push_back(std::move(e));
    }
    return out;
}

BuilderOptions progress_options(std::ostream& err, bool quiet) {
    BuilderOptions o;
    if (quiet) return o;
    o.events = [&err](const BuildEvent& e) {
        switch (e.kind) {
            case BuildEventKind::split_started: err << "split node " << e.node << "\n"; break;
            case BuildEventKind::candidate_scored:
                err << "  seed " << *e.seed << ": objective " << e.report->objective << " (self "
                    << e.report->self_left << "/" << e.report->self_right << ", cross " << e.report->cross << ")\n";
                break;
            case BuildEventKind::seed_chosen: err << "  chose seed " << *e.seed << "\n"; break;
            case BuildEventKind::split_finished:
                err << "  " << (e.decision ? to_string(*e.decision) : "") << "\n";
                break;
            case BuildEventKind::train_progress: break;
        }
    };
    return o;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Decompose an image concept into a tree of learned sub-concept tokens", "ctree"};
    app.require_subcommand(1);
    bool as_json = false;
    bool quiet = false;
    app.add_flag("--json", as_json, "machine-readable output");
    app.add_flag("-q,--quiet", quiet, "no progress output");

    // build
    auto* build = app.add_subcommand("build", "build a concept tree from a directory of images");
    std::string images_dir;
    std::string out_dir = "trees";
    std::string tree_id;
    std::string seeds_text;
    BuildConfig config;
    BackendFlags build_backend;
    build->add_option("images-dir", images_dir, "directory of images (.vec for the mock backend)")->required();
    build->add_option("--alpha", config.alpha, "timestep skew in [0, 1]")->capture_default_str();
    build->add_option("--max-depth", config.max_depth, "levels to split")->capture_default_str();
    build->add_option("--seeds", seeds_text, "comma-separated candidate seeds (default 0,1000,1234,111)");
    build->add_option("--candidate-steps", config.candidate_steps)->capture_default_str();
    build->add_option("--final-steps", config.final_steps)->capture_default_str();
    build->add_option("--out", out_dir, "directory receiving <tree-id>/")->capture_default_str();
    build->add_option("--tree-id", tree_id, "tree id (default: images directory name)");
    build_backend.add_to(build);

    // split
    auto* split = app.add_subcommand("split", "split one node of a saved tree");
    std::string tree_path;
    int node_id = 0;
    BackendFlags split_backend;
    split->add_option("tree", tree_path, "tree archive directory")->required();
    split->add_option("node", node_id, "node id")->required();
    split_backend.add_to(split);

    // resume
    auto* resume = app.add_subcommand("resume", "continue an interrupted build");
    BackendFlags resume_backend;
    resume->add_option("tree", tree_path, "tree archive directory")->required();
    resume_backend.add_to(resume);

    // sample
    auto* sample = app.add_subcommand("sample", "generate images of one node");
    int count = 8;
    std::int64_t seed = 0;
    std::string images_out;
    BackendFlags sample_backend;
    sample->add_option("tree", tree_path)->required();
    sample->add_option("node", node_id)->required();
    sample->add_option("-n", count, "number of images")->capture_default_str();
    sample->add_option("--seed", seed)->capture_default_str();
    sample->add_option("--out", images_out, "write images here");
    sample_backend.add_to(sample);

    // combine
    auto* combine = app.add_subcommand("combine", "generate from a prompt mixing tokens of one or more trees");
    std::string trees_text;
    std::string tokens_text;
    std::string template_text = "A photograph of {a} {b}";
    BackendFlags combine_backend;
    combine->add_option("--trees", trees_text, "comma-separated tree archive directories")->required();
    combine->add_option("--tokens", tokens_text, "comma-separated tokens, one per template slot")->required();
    combine->add_option("--template", template_text)->capture_default_str();
    combine->add_option("-n", count)->capture_default_str();
    combine->add_option("--seed", seed)->capture_default_str();
    combine->add_option("--out", images_out, "write images here");
    combine_backend.add_to(combine);

    // score
    auto* score = app.add_subcommand("score", "consistency matrix over a tree's node sample sets");
    std::string svg_path;
    score->add_option("tree", tree_path)->required();
    score->add_option("--svg", svg_path, "heatmap output (default: <tree-id>-consistency.svg)");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP exploration service over a trees directory");
    std::string trees_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
    int workers = 2;
    BackendFlags serve_backend;
    bool no_backend = false;
    serve->add_option("trees-dir", trees_dir)->required();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--workers", workers)->capture_default_str();
    serve->add_flag("--no-backend", no_backend, "read-only: split and generate answer 503");
    serve_backend.add_to(serve);

    // fixture
    auto* fixture = app.add_subcommand("fixture", "write the planted hierarchical mock concept and its images");
    std::string fixture_out;
    std::uint64_t fixture_seed = 7;
    fixture->add_option("out-dir", fixture_out)->required();
    fixture->add_option("--seed", fixture_seed)->capture_default_str();

    std::vector<const char*> argv{"ctree"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*build) {
            if (!seeds_text.empty()) config.seeds = parse_seeds(seeds_text);
            validate(config);
            const fs::path src = fs::absolute(images_dir).lexically_normal();
            if (tree_id.empty()) tree_id = (src.has_filename() ? src : src.parent_path()).filename().string();
            const auto backend = build_backend.make();
            const fs::path dest = fs::path(out_dir) / tree_id;
            BuilderOptions opts = progress_options(err, quiet || as_json);
            opts.checkpoint = [&](const ConceptTree& t) { save_tree(t, dest); };
            TreeBuilder builder(*backend, opts);
            const ConceptTree tree = builder.build_tree(read_image_dir(src), config, tree_id);
            save_tree(tree, dest);
            if (as_json) {
                json j = summary_json(tree);
                j["archive"] = dest.string();
                out << j.dump(2) << "\n";
            } else {
                print_tree(out, tree);
                out << "saved " << dest.string() << "\n";
            }
        } else if (*split || *resume) {
            const auto backend = (*split ? split_backend : resume_backend).make();
            ConceptTree tree = load_tree(tree_path);
            BuilderOptions opts = progress_options(err, quiet || as_json);
            if (*resume) opts.checkpoint = [&](const ConceptTree& t) { save_tree(t, tree_path); };
            TreeBuilder builder(*backend, opts);
            if (*split) {
                auto [updated, record] = builder.split_node(std::move(tree), node_id);
                tree = std::move(updated);
                if (as_json) {
                    json j = summary_json(tree);
                    j["decision"] = to_string(record.decision);
                    if (record.final_report) j["report"] = report_json(*record.final_report);
                    out << j.dump(2) << "\n";
                } else {
                    out << "node " << node_id << ": " << to_string(record.decision) << "\n";
                }
            } else {
                tree = builder.resume_build(std::move(tree));
                if (as_json) out << summary_json(tree).dump(2) << "\n";
                else print_tree(out, tree);
            }
            save_tree(tree, tree_path);
        } else if (*sample || *combine) {
            ImageSet images;
            std::string prompt;
            if (*sample) {
                const auto backend = sample_backend.make();
                const ConceptTree tree = load_tree(tree_path);
                const auto& node = tree.node(node_id);
                if (!node.token) fail(ErrorCode::invalid_argument, "the root has no token; sample a learned node");
                const TokenDictionary dict = tree.dictionary.rebind(backend->vocabulary());
                const std::string toks[1] = {*node.token};
                prompt = compose_prompt(tree.config.sample_template, toks, dict);
                images = backend->generate(prompt, dict, seed, count);
            } else {
                const auto backend = combine_backend.make();
                TokenDictionary dict(backend->vocabulary());
                for (const auto& t : split_list(trees_text)) {
                    dict = merge(dict, load_tree(t).dictionary.rebind(backend->vocabulary()));
                }
                prompt = compose_prompt(template_text, split_list(tokens_text), dict);
                images = backend->generate(prompt, dict, seed, count);
            }
            if (!images_out.empty()) write_images(images, images_out);
            if (as_json) {
                out << json{{"prompt", prompt}, {"images", images_json(images)}}.dump(2) << "\n";
            } else {
                out << prompt << "\n" << images.size() << " images";
                if (!images_out.empty()) out << " written to " << images_out;
                out << "\n";
            }
        } else if (*score) {
            const ConceptTree tree = load_tree(tree_path);
            ConsistencyScorer scorer(nullptr);
            std::unique_ptr<DiffusionBackend> backend;
            bool needs_backend = false;
            std::vector<std::pair<std::string, const ImageSet*>> sets;
            if (tree.root_images.size() >= 2) sets.emplace_back("root", &tree.root_images);
            for (const auto& [id, n] : tree.nodes) {
                if (n.token && n.score_samples.size() >= 2) sets.emplace_back(*n.token, &n.score_samples);
            }
            for (const auto& [label, s] : sets) {
                for (const auto& img : s->images) needs_backend |= !img.has_inline_payload();
            }
            if (needs_backend) backend = make_backend(backend_options_from_env());
            ConsistencyScorer real_scorer(backend ? backend.get() : nullptr);
            ConsistencyScorer& use = backend ? real_scorer : scorer;
            // mock payloads are their own embeddings
            std::vector<ImageSet> inline_sets;
            inline_sets.reserve(sets.size());
            if (!backend) {
                for (auto& [label, s] : sets) {
                    ImageSet copy = *s;
                    Matrix m(copy.size(), copy.images.front().vector.size());
                    for (std::size_t i = 0; i < copy.size(); ++i) {
                        std::copy(copy.images[i].vector.begin(), copy.images[i].vector.end(), m.row(i).begin());
                    }
                    copy.embeddings = std::move(m);
                    inline_sets.push_back(std::move(copy));
                    s = &inline_sets.back();
                }
            }
            const ConsistencyMatrix matrix = use.consistency_matrix(sets);
            if (svg_path.empty()) svg_path = tree.tree_id + "-consistency.svg";
            write_file_bytes(svg_path, render_heatmap_svg(matrix));
            if (as_json) {
                out << consistency_matrix_json(matrix) << "\n";
            } else {
                out << consistency_matrix_json(matrix) << "\nheatmap written to " << svg_path << "\n";
            }
        } else if (*serve) {
            std::shared_ptr<const DiffusionBackend> backend;
            if (!no_backend) backend = serve_backend.make();
            ServiceOptions opts;
            opts.workers = workers;
            ExplorationService service(trees_dir, backend, opts);
            out << "serving " << trees_dir << " on http://" << host << ":" << port << "\n" << std::flush;
            service.listen(host, port);
        } else if (*fixture) {
            const HierarchicalFixture fx = make_hierarchical_fixture(fixture_seed);
            const fs::path dir(fixture_out);
            fs::create_directories(dir / "images");
            write_file_bytes(dir / "concept-space.json", fx.space.to_json_text() + "\n");
            for (const auto& img : fx.root_images.images) {
                write_vector_file(dir / "images" / (img.id + ".vec"), img.vector);
            }
            if (as_json) {
                out << json{{"concept_space", (dir / "concept-space.json").string()},
                            {"images", (dir / "images").string()},
                            {"count", fx.root_images.size()}}
                           .dump(2)
                    << "\n";
            } else {
                out << "wrote " << fx.root_images.size() << " images to " << (dir / "images").string() << "\n";
            }
        }
    } catch (const Error& e) {
        err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        const bool usage = e.code() == ErrorCode::invalid_argument || e.code() == ErrorCode::domain ||
                           e.code() == ErrorCode::arity_mismatch;
        return usage ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

}  // namespace ctree
