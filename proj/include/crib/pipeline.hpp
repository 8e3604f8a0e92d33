#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crib/checkpoint.hpp"
#include "crib/config.hpp"
#include "crib/csv.hpp"
#include "crib/infer.hpp"
#include "crib/manifest.hpp"
#include "crib/metrics.hpp"
#include "crib/parallel.hpp"
#include "crib/registration.hpp"
#include "crib/synth.hpp"
#include "crib/tiling.hpp"
#include "crib/train.hpp"
#include "crib/version.hpp"

namespace crib {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// --- Run configuration -------------------------------------------------------

enum class ScanSet { Primary, Secondary, All };

inline ScanSet parse_scan_set(const std::string& s) {
    if (s == "primary") return ScanSet::Primary;
    if (s == "secondary") return ScanSet::Secondary;
    if (s == "all") return ScanSet::All;
    throw ConfigError("infer.scan_set must be primary|secondary|all, got '" + s + "'");
}

struct RunConfig {
    std::uint64_t seed = 7;
    int jobs = 1;
    std::string out_dir = "out";
    std::string config_digest = "0000000000000000";

    // synth
    int n_train = 200;
    int n_internal = 60;
    int n_external = 0;
    double positive_rate = 0.24;
    double borderline_rate = 0.10;
    int width = 1536;
    int height = 1536;
    int rescan_profiles = 3;
    double rescan_train_fraction = 0.15;
    bool rescan_internal = true;
    int rescan_max_shift = 32;
    int borderline_hole_count = 2;
    double borderline_hole_radius = 4.0;

    PipelineConfig tile;
    TrainRunConfig train;
    InferConfig infer;
    ScanSet infer_scan_set = ScanSet::All;
    bool infer_dump_matrix = false;

    int eval_bootstrap = 1000;
    std::string eval_role = "internal";

    fs::path stage_dir(const std::string& stage) const { return fs::path(out_dir) / stage; }
};

inline RunConfig run_config_from(const KeyValueConfig& kv) {
    RunConfig c;
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 7));
    c.jobs = static_cast<int>(kv.get_int("jobs", 1));
    c.out_dir = kv.get_str("out_dir", "out");
    c.config_digest = kv.digest();

    c.n_train = static_cast<int>(kv.get_int("synth.n_train", c.n_train));
    c.n_internal = static_cast<int>(kv.get_int("synth.n_internal", c.n_internal));
    c.n_external = static_cast<int>(kv.get_int("synth.n_external", c.n_external));
    c.positive_rate = kv.get_double("synth.positive_rate", c.positive_rate);
    c.borderline_rate = kv.get_double("synth.borderline_rate", c.borderline_rate);
    c.width = static_cast<int>(kv.get_int("synth.width", c.width));
    c.height = static_cast<int>(kv.get_int("synth.height", c.height));
    c.rescan_profiles = static_cast<int>(kv.get_int("synth.rescan_profiles", c.rescan_profiles));
    c.rescan_train_fraction = kv.get_double("synth.rescan_train_fraction", c.rescan_train_fraction);
    c.rescan_internal = kv.get_bool("synth.rescan_internal", c.rescan_internal);
    c.rescan_max_shift = static_cast<int>(kv.get_int("synth.rescan_max_shift", c.rescan_max_shift));
    c.borderline_hole_count =
        static_cast<int>(kv.get_int("synth.borderline_hole_count", c.borderline_hole_count));
    c.borderline_hole_radius = kv.get_double("synth.borderline_hole_radius", c.borderline_hole_radius);

    c.tile.patch_size = static_cast<int>(kv.get_int("tile.patch_size", c.tile.patch_size));
    c.tile.stride = static_cast<int>(kv.get_int("tile.stride", c.tile.stride));
    c.tile.target_spacing = kv.get_double("tile.target_spacing", c.tile.target_spacing);
    c.tile.min_tissue_fraction = kv.get_double("tile.min_tissue_fraction", c.tile.min_tissue_fraction);
    c.tile.patch_positive_fraction =
        kv.get_double("tile.patch_positive_fraction", c.tile.patch_positive_fraction);

    c.train.seed = c.seed;
    c.train.patch_epochs = static_cast<int>(kv.get_int("train.patch_epochs", c.train.patch_epochs));
    c.train.slide_epochs = static_cast<int>(kv.get_int("train.slide_epochs", c.train.slide_epochs));
    c.train.patch_batch = static_cast<int>(kv.get_int("train.patch_batch", c.train.patch_batch));
    c.train.max_bag_size = static_cast<int>(kv.get_int("train.max_bag_size", c.train.max_bag_size));
    c.train.folds = static_cast<int>(kv.get_int("train.folds", c.train.folds));
    c.train.augment.geometric = kv.get_bool("train.aug_geometric", true);
    c.train.augment.photometric = kv.get_bool("train.aug_photometric", true);
    c.train.augment.noise = kv.get_bool("train.aug_noise", true);
    c.train.augment.jpeg = kv.get_bool("train.aug_jpeg", true);
    {
        const std::string raw = kv.get_str("train.withhold_pixel_cohorts", "");
        std::string item;
        for (char ch : raw + ",") {
            if (ch == ',') {
                if (!item.empty()) c.train.withhold_pixel_cohorts.push_back(item);
                item.clear();
            } else {
                item.push_back(ch);
            }
        }
    }

    c.infer.seed = c.seed;
    c.infer.n_views = static_cast<int>(kv.get_int("infer.n_views", c.infer.n_views));
    c.infer.calibrate = kv.get_bool("infer.calibrate", c.infer.calibrate);
    c.infer.threshold_raw = kv.get_bool("infer.threshold_raw", c.infer.threshold_raw);
    c.infer_scan_set = parse_scan_set(kv.get_str("infer.scan_set", "all"));
    c.infer_dump_matrix = kv.get_bool("infer.dump_matrix", false);

    c.eval_bootstrap = static_cast<int>(kv.get_int("eval.n_bootstrap", c.eval_bootstrap));
    c.eval_role = kv.get_str("eval.role", c.eval_role);
    return c;
}

inline std::string provenance_line(const RunConfig& cfg) {
    return std::string(kToolName) + " " + kVersion + " seed=" + std::to_string(cfg.seed) +
           " config=" + cfg.config_digest;
}

inline ordered_json provenance_json(const RunConfig& cfg) {
    ordered_json j;
    j["tool"] = kToolName;
    j["version"] = kVersion;
    j["seed"] = cfg.seed;
    j["config_digest"] = cfg.config_digest;
    return j;
}

inline void require_file(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p))
        throw MissingInputError(stage + ": missing input " + p.string() +
                                " (run the upstream stage first)");
}

// --- synth --------------------------------------------------------------------

// Renders the synthetic corpus: primary scans, per-profile rescans,
// pixel annotation masks, the manifest, and ground-truth rescan offsets.
inline void run_synth(const RunConfig& cfg) {
    if (cfg.rescan_profiles < 0 || cfg.rescan_profiles > 3)
        throw ConfigError("synth.rescan_profiles must be 0..3");
    const auto dir = cfg.stage_dir("synth");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");

    const auto scanners = default_scanners();

    struct Entry {
        SlidePlan plan;
        Role role;
        std::string cohort_id;
        std::vector<int> rescan_profiles; // indices into scanners (>= 1)
    };
    std::vector<Entry> entries;

    SlideRenderParams render;
    render.width = cfg.width;
    render.height = cfg.height;
    render.borderline_hole_count = cfg.borderline_hole_count;
    render.borderline_hole_radius = cfg.borderline_hole_radius;

    auto add_role = [&](Role role, int n, const std::string& cohort_id, const std::string& prefix) {
        if (n <= 0) return;
        CohortConfig cc;
        cc.n_slides = n;
        cc.positive_rate = cfg.positive_rate;
        cc.borderline_rate = cfg.borderline_rate;
        cc.role = role;
        cc.cohort_id = cohort_id;
        cc.id_prefix = prefix;
        cc.render = render;
        for (auto& plan : plan_cohort(cc, cfg.seed))
            entries.push_back({std::move(plan), role, cohort_id, {}});
    };
    add_role(Role::Train, cfg.n_train, "synth_train", "tr");
    add_role(Role::Internal, cfg.n_internal, "synth_internal", "iv");
    add_role(Role::External, cfg.n_external, "synth_external", "ev");

    // Rescan plan: all profiles on internal slides, one profile on a seeded
    // fraction of training slides (annotation transfer mirrors real reuse).
    if (cfg.rescan_profiles > 0) {
        std::vector<std::size_t> train_idx;
        for (std::size_t e = 0; e < entries.size(); ++e)
            if (entries[e].role == Role::Train) train_idx.push_back(e);
        auto st = rng::stream(cfg.seed, "synth/rescan-train");
        st.shuffle(train_idx);
        const auto n_rescan = static_cast<std::size_t>(
            std::lround(cfg.rescan_train_fraction * static_cast<double>(train_idx.size())));
        for (std::size_t r = 0; r < n_rescan && r < train_idx.size(); ++r)
            entries[train_idx[r]].rescan_profiles.push_back(1 + static_cast<int>(r % cfg.rescan_profiles));

        if (cfg.rescan_internal)
            for (auto& e : entries)
                if (e.role == Role::Internal)
                    for (int p = 1; p <= cfg.rescan_profiles; ++p) e.rescan_profiles.push_back(p);
    }

    struct SlideOutput {
        SlideRecord record;
        std::vector<std::pair<std::string, std::pair<int, int>>> offsets;
    };
    std::vector<SlideOutput> outputs(entries.size());

    parallel_for(entries.size(), cfg.jobs, [&](std::size_t e) {
        const Entry& entry = entries[e];
        RenderedSlide rendered = render_slide(entry.plan, render, cfg.seed);

        SlideOutput out;
        out.record.slide_id = entry.plan.slide_id;
        out.record.patient_id = entry.plan.patient_id;
        out.record.cohort_id = entry.cohort_id;
        out.record.role = entry.role;
        out.record.label = entry.plan.slide_class == LesionClass::Sieve ? 1 : 0;
        out.record.borderline = entry.plan.slide_class == LesionClass::Borderline;

        ScanRecord primary;
        primary.scan_id = entry.plan.slide_id + "_sc0";
        primary.scanner_id = scanners[0].scanner_id;
        primary.is_primary = true;
        primary.image_path = "images/" + primary.scan_id + ".png";
        out.record.scans.push_back(primary);
        save_png(rendered.image, (dir / primary.image_path).string());
        save_png(rendered.annotation, (dir / "masks" / (entry.plan.slide_id + ".png")).string());

        for (int p : entry.rescan_profiles) {
            const auto& prof = scanners[static_cast<std::size_t>(p)];
            RescanResult rr =
                simulate_rescan(rendered.image, prof,
                                rng::derive_key(cfg.seed, "synth/rescan", entry.plan.slide_index),
                                cfg.rescan_max_shift);
            ScanRecord scan;
            scan.scan_id = entry.plan.slide_id + "_sc" + std::to_string(p);
            scan.scanner_id = prof.scanner_id;
            scan.is_primary = false;
            scan.image_path = "images/" + scan.scan_id + ".png";
            out.record.scans.push_back(scan);
            save_png(rr.image, (dir / scan.image_path).string());
            out.offsets.emplace_back(scan.scan_id, std::make_pair(rr.dx, rr.dy));
        }
        outputs[e] = std::move(out);
    });

    DatasetManifest manifest;
    for (auto& out : outputs) manifest.slides.push_back(std::move(out.record));
    validate_manifest(manifest);

    // Manifest with a provenance comment ahead of the schema header.
    {
        const auto tmp = dir / "manifest.body.csv";
        save_manifest(manifest, tmp.string());
        std::ifstream body(tmp, std::ios::binary);
        std::ofstream outf(dir / "manifest.csv", std::ios::binary);
        outf << "# " << provenance_line(cfg) << "\n" << body.rdbuf();
        body.close();
        fs::remove(tmp);
    }

    csv::Writer offsets((dir / "offsets.csv").string());
    offsets.comment(provenance_line(cfg));
    offsets.row({"scan_id", "dx", "dy"});
    for (const auto& out : outputs)
        for (const auto& [scan_id, d] : out.offsets)
            offsets.row({scan_id, std::to_string(d.first), std::to_string(d.second)});
}

// --- register -----------------------------------------------------------------

// Phase-correlates every rescan against its slide's primary scan on tissue
// masks and writes the estimated shifts.
inline void run_register(const RunConfig& cfg) {
    const auto synth_dir = cfg.stage_dir("synth");
    require_file(synth_dir / "manifest.csv", "register");
    const auto manifest = load_manifest((synth_dir / "manifest.csv").string());

    struct Pair {
        std::string slide_id, source_scan, target_scan;
        fs::path source_path, target_path;
    };
    std::vector<Pair> pairs;
    for (const auto& slide : manifest.slides) {
        const auto& primary = slide.primary_scan();
        for (const auto& scan : slide.scans) {
            if (scan.is_primary) continue;
            pairs.push_back({slide.slide_id, primary.scan_id, scan.scan_id,
                             synth_dir / primary.image_path, synth_dir / scan.image_path});
        }
    }

    struct Row {
        Pair pair;
        ShiftEstimate est;
    };
    std::vector<Row> rows(pairs.size());
    parallel_for(pairs.size(), cfg.jobs, [&](std::size_t i) {
        require_file(pairs[i].source_path, "register");
        require_file(pairs[i].target_path, "register");
        const Mask a = tissue_mask(load_png_rgb(pairs[i].source_path.string()));
        const Mask b = tissue_mask(load_png_rgb(pairs[i].target_path.string()));
        rows[i] = {pairs[i], phase_correlate(a, b)};
    });

    const auto dir = cfg.stage_dir("register");
    fs::create_directories(dir);
    csv::Writer shifts((dir / "shifts.csv").string());
    shifts.comment(provenance_line(cfg));
    shifts.row({"slide_id", "source_scan", "target_scan", "dx", "dy", "peak_ratio"});
    for (const auto& row : rows) {
        if (row.est.peak_ratio < 2.0)
            std::cerr << "warning: low-confidence registration for " << row.pair.target_scan
                      << " (peak ratio " << row.est.peak_ratio << ")\n";
        shifts.row({row.pair.slide_id, row.pair.source_scan, row.pair.target_scan,
                    std::to_string(row.est.dx), std::to_string(row.est.dy),
                    csv::fmt(row.est.peak_ratio, 6)});
    }
}

// --- tile ----------------------------------------------------------------------

// Tissue masking, grid extraction, coverage filtering, patch labelling
// (annotations transferred onto rescans via the registered shifts), and
// one patch store per scan.
inline void run_tile(const RunConfig& cfg) {
    const auto synth_dir = cfg.stage_dir("synth");
    require_file(synth_dir / "manifest.csv", "tile");
    const auto manifest = load_manifest((synth_dir / "manifest.csv").string());

    std::map<std::string, std::pair<int, int>> shift_of_scan;
    const auto shifts_path = cfg.stage_dir("register") / "shifts.csv";
    if (fs::exists(shifts_path)) {
        const auto t = csv::read_file(shifts_path.string());
        const int c_target = t.column("target_scan"), c_dx = t.column("dx"), c_dy = t.column("dy");
        for (const auto& row : t.rows)
            shift_of_scan[row[static_cast<std::size_t>(c_target)]] = {
                static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_dx)], "shifts.csv")),
                static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_dy)], "shifts.csv"))};
    }

    struct Job {
        const SlideRecord* slide;
        const ScanRecord* scan;
    };
    std::vector<Job> jobs;
    for (const auto& slide : manifest.slides)
        for (const auto& scan : slide.scans) {
            if (!scan.is_primary && slide.role == Role::Train &&
                !shift_of_scan.count(scan.scan_id))
                throw MissingInputError("tile: no registered shift for training rescan " +
                                        scan.scan_id + " (run register first)");
            jobs.push_back({&slide, &scan});
        }

    const auto dir = cfg.stage_dir("tile");
    fs::create_directories(dir / "stores");

    struct ScanRows {
        std::vector<PatchRecord> kept;
    };
    std::vector<ScanRows> results(jobs.size());

    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const auto& job = jobs[i];
        const auto image_path = synth_dir / job.scan->image_path;
        require_file(image_path, "tile");
        const Image image = load_png_rgb(image_path.string());
        const Mask tissue = tissue_mask(image);
        auto patches = filter_by_coverage(extract_grid(image.width, image.height, cfg.tile), tissue,
                                          cfg.tile);

        // Annotation mask in this scan's frame.
        Mask annotation(image.width, image.height, 0);
        const auto mask_path = synth_dir / "masks" / (job.slide->slide_id + ".png");
        if (fs::exists(mask_path)) {
            Mask primary_mask = load_png_gray(mask_path.string());
            if (job.scan->is_primary) {
                annotation = std::move(primary_mask);
            } else if (auto it = shift_of_scan.find(job.scan->scan_id); it != shift_of_scan.end()) {
                ShiftEstimate est;
                est.dx = it->second.first;
                est.dy = it->second.second;
                annotation = transfer_annotations(primary_mask, est);
            }
        }

        patch_store::Writer store;
        for (auto& p : patches) {
            p = with_annotation(p, annotation, cfg.tile);
            const Image px = crop(image, p.x, p.y, cfg.tile.patch_size, cfg.tile.patch_size);
            store.add(std::to_string(p.i) + "_" + std::to_string(p.j), encode_png(px, 1));
        }
        store.seal((dir / "stores" / (job.scan->scan_id + ".pstore")).string());
        results[i].kept = std::move(patches);
    });

    csv::Writer index((dir / "patch_index.csv").string());
    index.comment(provenance_line(cfg));
    index.row({"scan_id", "i", "j", "x", "y", "tissue_fraction", "annotated_fraction", "label"});
    for (std::size_t i = 0; i < jobs.size(); ++i)
        for (const auto& p : results[i].kept)
            index.row({jobs[i].scan->scan_id, std::to_string(p.i), std::to_string(p.j),
                       std::to_string(p.x), std::to_string(p.y), csv::fmt(p.tissue_fraction, 6),
                       csv::fmt(p.annotated_fraction, 6), std::to_string(p.label)});
}

// --- dataset assembly -------------------------------------------------------------

inline Dataset load_dataset(const RunConfig& cfg, const DatasetManifest& manifest) {
    const auto tile_dir = cfg.stage_dir("tile");
    require_file(tile_dir / "patch_index.csv", "dataset");
    const auto t = csv::read_file((tile_dir / "patch_index.csv").string());
    const int c_scan = t.column("scan_id"), c_i = t.column("i"), c_j = t.column("j");
    const int c_tissue = t.column("tissue_fraction"), c_ann = t.column("annotated_fraction");
    const int c_label = t.column("label");
    if (c_scan < 0 || c_i < 0 || c_j < 0 || c_tissue < 0 || c_ann < 0 || c_label < 0)
        throw InvariantError("patch_index.csv: unexpected header");

    std::map<std::string, std::vector<PatchMeta>> patches_of_scan;
    for (const auto& row : t.rows) {
        PatchMeta pm;
        pm.i = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_i)], "patch_index"));
        pm.j = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_j)], "patch_index"));
        pm.tissue_fraction = csv::parse_double(row[static_cast<std::size_t>(c_tissue)], "patch_index");
        pm.annotated_fraction = csv::parse_double(row[static_cast<std::size_t>(c_ann)], "patch_index");
        pm.label = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_label)], "patch_index"));
        patches_of_scan[row[static_cast<std::size_t>(c_scan)]].push_back(pm);
    }

    Dataset ds;
    for (const auto& slide : manifest.slides) {
        SlideData sd;
        sd.slide_id = slide.slide_id;
        sd.patient_id = slide.patient_id;
        sd.cohort_id = slide.cohort_id;
        sd.role = slide.role;
        sd.label = slide.label;
        sd.borderline = slide.borderline;
        for (const auto& scan : slide.scans) {
            ScanData sc;
            sc.scan_id = scan.scan_id;
            sc.scanner_id = scan.scanner_id;
            sc.is_primary = scan.is_primary;
            sc.store_path = (tile_dir / "stores" / (scan.scan_id + ".pstore")).string();
            auto it = patches_of_scan.find(scan.scan_id);
            if (it != patches_of_scan.end()) sc.patches = it->second;
            if (scan.is_primary) sd.scans.insert(sd.scans.begin(), std::move(sc));
            else sd.scans.push_back(std::move(sc));
        }
        ds.slides.push_back(std::move(sd));
    }
    return ds;
}

template <typename Pred>
Dataset filter_dataset(const Dataset& ds, Pred keep_slide) {
    Dataset out;
    for (const auto& s : ds.slides)
        if (keep_slide(s)) out.slides.push_back(s);
    return out;
}

// --- train ---------------------------------------------------------------------

// Two-step transfer training across all folds, Platt scaling on the pooled
// held-out-fold scores, checkpoints + fold report on disk.
inline void run_train(const RunConfig& cfg) {
    const auto synth_dir = cfg.stage_dir("synth");
    require_file(synth_dir / "manifest.csv", "train");
    const auto manifest = load_manifest((synth_dir / "manifest.csv").string());
    const auto full = load_dataset(cfg, manifest);
    const auto ds = filter_dataset(full, [](const SlideData& s) { return s.role == Role::Train; });
    if (ds.slides.empty()) throw MissingInputError("train: no training-role slides in manifest");

    const PatchPixels pixels(ds);
    const auto folds = make_grouped_folds(manifest, cfg.train.folds, cfg.seed);

    std::vector<SlideMilResult> results(static_cast<std::size_t>(cfg.train.folds));
    parallel_for(static_cast<std::size_t>(cfg.train.folds), cfg.jobs, [&](std::size_t f) {
        const auto patch_weights =
            train_patch_classifier(ds, pixels, folds, static_cast<int>(f), cfg.train);
        results[f] = train_slide_mil(ds, pixels, folds, static_cast<int>(f), patch_weights, cfg.train);
    });

    const auto dir = cfg.stage_dir("train");
    fs::create_directories(dir);

    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    csv::Writer fold_report((dir / "folds.csv").string());
    fold_report.comment(provenance_line(cfg));
    fold_report.row({"fold", "best_epoch", "holdout_kappa"});
    for (int f = 0; f < cfg.train.folds; ++f) {
        const auto& r = results[static_cast<std::size_t>(f)];
        char name[32];
        std::snprintf(name, sizeof(name), "fold_%02d.ckpt", f);
        checkpoint::save(r.checkpoint.params, OptimizerKind::RAdam,
                         static_cast<std::uint64_t>(r.checkpoint.best_epoch), (dir / name).string());
        fold_report.row({std::to_string(f), std::to_string(r.checkpoint.best_epoch),
                         csv::fmt(r.checkpoint.holdout_kappa, 6)});
        for (const auto& hs : r.holdout_scores) {
            pooled_scores.push_back(hs.score);
            pooled_labels.push_back(hs.label);
        }
    }

    bool warned = false;
    const auto platt = fit_platt(pooled_scores, pooled_labels, &warned);
    if (warned)
        std::cerr << "warning: Platt slope is not positive (a = " << platt.a
                  << "); held-out scores carry no signal\n";
    ordered_json pj;
    pj["a"] = platt.a;
    pj["b"] = platt.b;
    pj["provenance"] = provenance_json(cfg);
    std::ofstream out(dir / "platt.json");
    out << pj.dump(2) << "\n";
}

// --- infer ---------------------------------------------------------------------

inline std::vector<ModelParams> load_checkpoints(const fs::path& train_dir) {
    std::vector<fs::path> paths;
    if (fs::exists(train_dir))
        for (const auto& e : fs::directory_iterator(train_dir))
            if (e.path().extension() == ".ckpt") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    std::vector<ModelParams> out;
    for (const auto& p : paths) out.push_back(checkpoint::load(p.string()).params);
    return out;
}

inline std::string predictions_filename(ScanSet set) {
    switch (set) {
        case ScanSet::Primary: return "predictions_primary.csv";
        case ScanSet::Secondary: return "predictions_secondary.csv";
        case ScanSet::All: return "predictions.csv";
    }
    return "predictions.csv";
}

// Frozen ensemble + TTA over the selected scans of the non-training roles.
inline void run_infer(const RunConfig& cfg) {
    const auto synth_dir = cfg.stage_dir("synth");
    require_file(synth_dir / "manifest.csv", "infer");
    const auto manifest = load_manifest((synth_dir / "manifest.csv").string());

    const auto train_dir = cfg.stage_dir("train");
    auto checkpoints = load_checkpoints(train_dir);
    if (checkpoints.empty())
        throw MissingInputError("infer: no checkpoints under " + train_dir.string());

    CalibrationParams platt;
    if (cfg.infer.calibrate) {
        require_file(train_dir / "platt.json", "infer");
        std::ifstream in(train_dir / "platt.json");
        const auto j = ordered_json::parse(in);
        platt.a = j.at("a").get<double>();
        platt.b = j.at("b").get<double>();
    }

    const auto full = load_dataset(cfg, manifest);
    const auto ds = filter_dataset(full, [](const SlideData& s) { return s.role != Role::Train; });

    struct Target {
        const SlideData* slide;
        const ScanData* scan;
    };
    std::vector<Target> targets;
    for (const auto& slide : ds.slides)
        for (const auto& scan : slide.scans) {
            if (cfg.infer_scan_set == ScanSet::Primary && !scan.is_primary) continue;
            if (cfg.infer_scan_set == ScanSet::Secondary && scan.is_primary) continue;
            targets.push_back({&slide, &scan});
        }
    if (targets.empty()) throw MissingInputError("infer: no scans match the requested scan set");

    const PatchPixels pixels(ds);
    std::vector<SlidePrediction> preds(targets.size());
    parallel_for(targets.size(), cfg.jobs, [&](std::size_t i) {
        preds[i] = ensemble_predict(targets[i].slide->slide_id, *targets[i].scan, pixels, checkpoints,
                                    platt, cfg.infer);
    });

    const auto dir = cfg.stage_dir("infer");
    fs::create_directories(dir);
    csv::Writer out((dir / predictions_filename(cfg.infer_scan_set)).string());
    out.comment(provenance_line(cfg));
    out.row({"slide_id", "scan_id", "raw_score", "calibrated_score", "label"});
    for (const auto& p : preds)
        out.row({p.slide_id, p.scan_id, csv::fmt(p.raw_score, 9), csv::fmt(p.calibrated_score, 9),
                 std::to_string(p.label)});

    if (cfg.infer_dump_matrix) {
        csv::Writer mat((dir / "score_matrix.csv").string());
        mat.comment(provenance_line(cfg));
        mat.row({"slide_id", "scan_id", "model_index", "view_index", "score"});
        for (const auto& p : preds)
            for (std::size_t m = 0; m < p.scores.size(); ++m)
                for (std::size_t v = 0; v < p.scores[m].size(); ++v)
                    mat.row({p.slide_id, p.scan_id, std::to_string(m), std::to_string(v),
                             csv::fmt(p.scores[m][v], 9)});
    }
}

// --- eval ----------------------------------------------------------------------

struct PredictionRow {
    std::string slide_id;
    std::string scan_id;
    double raw_score = 0.0;
    double calibrated_score = 0.0;
    int label = 0;
};

inline std::vector<PredictionRow> load_predictions(const std::vector<fs::path>& files) {
    std::vector<PredictionRow> out;
    for (const auto& f : files) {
        const auto t = csv::read_file(f.string());
        const int c_slide = t.column("slide_id"), c_scan = t.column("scan_id");
        const int c_raw = t.column("raw_score"), c_cal = t.column("calibrated_score");
        const int c_label = t.column("label");
        if (c_slide < 0 || c_scan < 0 || c_raw < 0 || c_cal < 0 || c_label < 0)
            throw InvariantError(f.string() + ": unexpected predictions header");
        for (const auto& row : t.rows) {
            PredictionRow p;
            p.slide_id = row[static_cast<std::size_t>(c_slide)];
            p.scan_id = row[static_cast<std::size_t>(c_scan)];
            p.raw_score = csv::parse_double(row[static_cast<std::size_t>(c_raw)], "predictions");
            p.calibrated_score = csv::parse_double(row[static_cast<std::size_t>(c_cal)], "predictions");
            p.label = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_label)], "predictions"));
            out.push_back(std::move(p));
        }
    }
    return out;
}

inline ordered_json metric_json(const MetricEstimate& est) {
    ordered_json j;
    if (est.defined) j["value"] = est.value;
    else j["value"] = nullptr;
    j["ci_low"] = est.ci_low;
    j["ci_high"] = est.ci_high;
    j["n_bootstrap"] = est.n_bootstrap;
    j["seed"] = est.seed;
    if (est.redraws > 0) j["redrawn_resamples"] = est.redraws;
    return j;
}

struct EvalOptions {
    std::vector<fs::path> prediction_files; // empty = auto-discover
    fs::path raters_file;                   // optional long-format CSV
};

// The statistical harness: headline discrimination/agreement metrics with
// bootstrap CIs on primary scans, calibration bins, ROC points, cross-
// scanner agreement when rescan predictions exist, borderline-case
// analysis, and the optional inter-rater panel.
inline void run_eval(const RunConfig& cfg, const EvalOptions& opts = {}) {
    const auto synth_dir = cfg.stage_dir("synth");
    require_file(synth_dir / "manifest.csv", "eval");
    const auto manifest = load_manifest((synth_dir / "manifest.csv").string());

    std::vector<fs::path> files = opts.prediction_files;
    if (files.empty()) {
        for (const char* name : {"predictions.csv", "predictions_primary.csv", "predictions_secondary.csv"}) {
            const auto p = cfg.stage_dir("infer") / name;
            if (fs::exists(p)) files.push_back(p);
        }
    }
    if (files.empty()) throw MissingInputError("eval: no prediction files found (run infer first)");
    const auto predictions = load_predictions(files);

    const Role role = parse_role(cfg.eval_role, "eval.role");

    std::map<std::string, const SlideRecord*> slide_of;
    std::map<std::string, std::string> scanner_of_scan;
    std::map<std::string, std::string> primary_scan_of;
    for (const auto& s : manifest.slides) {
        slide_of[s.slide_id] = &s;
        primary_scan_of[s.slide_id] = s.primary_scan().scan_id;
        for (const auto& sc : s.scans) scanner_of_scan[sc.scan_id] = sc.scanner_id;
    }

    // Headline metrics: primary scans of the requested role only.
    struct Item {
        double score;
        int pred;
        int label;
        bool borderline;
        std::string slide_id;
    };
    std::vector<Item> items;
    for (const auto& p : predictions) {
        auto it = slide_of.find(p.slide_id);
        if (it == slide_of.end())
            throw InvariantError("eval: prediction for unknown slide '" + p.slide_id + "'");
        const auto* slide = it->second;
        if (slide->role != role) continue;
        if (primary_scan_of[p.slide_id] != p.scan_id) continue;
        items.push_back({p.calibrated_score, p.label, slide->label, slide->borderline, p.slide_id});
    }
    if (items.empty())
        throw MissingInputError("eval: no primary-scan predictions for role '" + cfg.eval_role + "'");

    std::vector<double> scores(items.size());
    std::vector<int> preds(items.size()), labels(items.size()), borderline(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        scores[i] = items[i].score;
        preds[i] = items[i].pred;
        labels[i] = items[i].label;
        borderline[i] = items[i].borderline ? 1 : 0;
    }

    const int nb = cfg.eval_bootstrap;
    auto pick = [&](const std::vector<std::size_t>& idx, const std::vector<double>& v) {
        std::vector<double> out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
        return out;
    };
    auto pick_i = [&](const std::vector<std::size_t>& idx, const std::vector<int>& v) {
        std::vector<int> out(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
        return out;
    };

    auto auc_metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        const auto l = pick_i(idx, labels);
        const long pos = std::count(l.begin(), l.end(), 1);
        if (pos == 0 || static_cast<std::size_t>(pos) == l.size()) return std::nullopt;
        return roc_auc(pick(idx, scores), l);
    };
    auto kappa_metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        const auto k = cohens_kappa(pick_i(idx, preds), pick_i(idx, labels));
        if (k.degenerate) return std::nullopt;
        return k.value;
    };
    auto sens_metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        const auto ss = sensitivity_specificity(confusion(pick_i(idx, preds), pick_i(idx, labels)));
        if (!ss.sensitivity_defined) return std::nullopt;
        return ss.sensitivity;
    };
    auto spec_metric = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
        const auto ss = sensitivity_specificity(confusion(pick_i(idx, preds), pick_i(idx, labels)));
        if (!ss.specificity_defined) return std::nullopt;
        return ss.specificity;
    };

    ordered_json report;
    report["provenance"] = provenance_json(cfg);
    report["role"] = cfg.eval_role;
    report["n_slides"] = items.size();
    report["n_positive"] = std::count(labels.begin(), labels.end(), 1);
    report["auc"] = metric_json(bootstrap_ci("auc", auc_metric, items.size(), nb,
                                             rng::derive_key(cfg.seed, "eval/auc")));
    report["cohens_kappa"] = metric_json(bootstrap_ci("cohens_kappa", kappa_metric, items.size(), nb,
                                                      rng::derive_key(cfg.seed, "eval/kappa")));
    report["sensitivity"] = metric_json(bootstrap_ci("sensitivity", sens_metric, items.size(), nb,
                                                     rng::derive_key(cfg.seed, "eval/sens")));
    report["specificity"] = metric_json(bootstrap_ci("specificity", spec_metric, items.size(), nb,
                                                     rng::derive_key(cfg.seed, "eval/spec")));

    const auto dir = cfg.stage_dir("eval");
    fs::create_directories(dir);

    {
        const auto cm = confusion(preds, labels);
        csv::Writer w((dir / "confusion.csv").string());
        w.comment(provenance_line(cfg));
        w.row({"tp", "fp", "tn", "fn"});
        w.row({std::to_string(cm.tp), std::to_string(cm.fp), std::to_string(cm.tn),
               std::to_string(cm.fn)});
        ordered_json cj;
        cj["tp"] = cm.tp;
        cj["fp"] = cm.fp;
        cj["tn"] = cm.tn;
        cj["fn"] = cm.fn;
        report["confusion"] = cj;
    }

    {
        csv::Writer w((dir / "roc.csv").string());
        w.comment(provenance_line(cfg));
        w.row({"threshold", "fpr", "tpr"});
        for (const auto& pt : roc_points(scores, labels))
            w.row({csv::fmt_g(pt.threshold), csv::fmt(pt.fpr, 9), csv::fmt(pt.tpr, 9)});
    }

    {
        csv::Writer w((dir / "calibration.csv").string());
        w.comment(provenance_line(cfg));
        w.row({"bin_center", "mean_predicted", "observed_frequency", "count"});
        for (const auto& b : calibration_curve(scores, labels, 10))
            w.row({csv::fmt(b.bin_center, 3), csv::fmt(b.mean_predicted, 9),
                   csv::fmt(b.observed_frequency, 9), std::to_string(b.count)});
    }

    // Borderline-case contingency analysis (reference-negative slides).
    if (std::count(borderline.begin(), borderline.end(), 1) > 0) {
        const auto ba = borderline_analysis(preds, labels, borderline);
        ordered_json bj;
        bj["fp_total"] = ba.fp_total;
        bj["fp_borderline"] = ba.fp_borderline;
        bj["fp_borderline_rate"] = ba.fp_borderline_rate;
        bj["tn_total"] = ba.tn_total;
        bj["tn_borderline"] = ba.tn_borderline;
        bj["tn_borderline_rate"] = ba.tn_borderline_rate;
        bj["fisher_p"] = ba.fisher_p;
        report["borderline"] = bj;
    }

    // Cross-scanner agreement over slides scanned by every scanner involved.
    {
        std::map<std::string, std::map<std::string, int>> calls; // scanner -> slide -> pred
        for (const auto& p : predictions) {
            auto it = slide_of.find(p.slide_id);
            if (it == slide_of.end() || it->second->role != role) continue;
            calls[scanner_of_scan[p.scan_id]][p.slide_id] = p.label;
        }
        if (calls.size() >= 2) {
            std::vector<std::string> scanners;
            for (const auto& [sc, _] : calls) scanners.push_back(sc);
            std::vector<std::string> shared;
            for (const auto& [slide_id, _] : calls[scanners[0]]) {
                bool everywhere = true;
                for (const auto& sc : scanners) everywhere &= calls[sc].count(slide_id) > 0;
                if (everywhere) shared.push_back(slide_id);
            }
            if (shared.size() >= 2) {
                std::vector<std::vector<int>> mat_calls;
                for (const auto& sc : scanners) {
                    std::vector<int> v;
                    for (const auto& slide_id : shared) v.push_back(calls[sc][slide_id]);
                    mat_calls.push_back(std::move(v));
                }
                auto panel = scanner_panel(scanners, mat_calls);
                auto matrix = pairwise_kappa_matrix(panel);

                csv::Writer w((dir / "cross_scanner.csv").string());
                w.comment(provenance_line(cfg));
                std::vector<std::string> header{"scanner"};
                header.insert(header.end(), scanners.begin(), scanners.end());
                w.row(header);
                for (std::size_t i = 0; i < scanners.size(); ++i) {
                    std::vector<std::string> row{scanners[i]};
                    for (std::size_t j = 0; j < scanners.size(); ++j)
                        row.push_back(csv::fmt(matrix[i][j].value, 6));
                    w.row(row);
                }

                ordered_json cj;
                cj["scanners"] = scanners;
                cj["n_shared_slides"] = shared.size();
                ordered_json pj = ordered_json::object();
                for (std::size_t i = 0; i < scanners.size(); ++i)
                    for (std::size_t j = i + 1; j < scanners.size(); ++j)
                        pj[scanners[i] + "|" + scanners[j]] = matrix[i][j].value;
                cj["pairwise_kappa"] = pj;
                ordered_json mj = ordered_json::object();
                for (std::size_t i = 0; i < scanners.size(); ++i)
                    mj[scanners[i]] = metric_json(mean_pairwise_kappa(
                        panel, static_cast<int>(i), nb,
                        rng::derive_key(cfg.seed, "eval/xscan", scanners[i])));
                cj["mean_pairwise_kappa"] = mj;
                report["cross_scanner"] = cj;
            }
        }
    }

    // Inter-rater panel: human raters from CSV plus the model's calls.
    if (!opts.raters_file.empty()) {
        require_file(opts.raters_file, "eval");
        const auto t = csv::read_file(opts.raters_file.string());
        const int c_rater = t.column("rater_id"), c_slide = t.column("slide_id"), c_call = t.column("call");
        if (c_rater < 0 || c_slide < 0 || c_call < 0)
            throw InvariantError(opts.raters_file.string() + ": expected rater_id,slide_id,call");
        std::map<std::string, std::map<std::string, int>> rater_calls;
        for (const auto& row : t.rows)
            rater_calls[row[static_cast<std::size_t>(c_rater)]][row[static_cast<std::size_t>(c_slide)]] =
                static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(c_call)], "raters"));

        std::map<std::string, int> model_calls;
        for (const auto& it : items) model_calls[it.slide_id] = it.pred;

        // Slides covered by every human rater and the model.
        std::vector<std::string> shared;
        for (const auto& [slide_id, _] : model_calls) {
            bool everywhere = true;
            for (const auto& [rater, calls2] : rater_calls) everywhere &= calls2.count(slide_id) > 0;
            if (everywhere) shared.push_back(slide_id);
        }
        if (shared.size() < 2)
            throw InvariantError("eval: rater panel shares fewer than 2 slides with predictions");

        RaterPanel panel;
        for (const auto& [rater, calls2] : rater_calls) {
            panel.rater_ids.push_back(rater);
            std::vector<int> v;
            for (const auto& slide_id : shared) v.push_back(calls2.at(slide_id));
            panel.calls.push_back(std::move(v));
        }
        panel.rater_ids.push_back("model");
        {
            std::vector<int> v;
            for (const auto& slide_id : shared) v.push_back(model_calls.at(slide_id));
            panel.calls.push_back(std::move(v));
        }
        panel.model_index = static_cast<int>(panel.rater_ids.size()) - 1;

        auto matrix = pairwise_kappa_matrix(panel);
        csv::Writer w((dir / "rater_kappa.csv").string());
        w.comment(provenance_line(cfg));
        std::vector<std::string> header{"rater"};
        header.insert(header.end(), panel.rater_ids.begin(), panel.rater_ids.end());
        w.row(header);
        for (std::size_t i = 0; i < panel.rater_ids.size(); ++i) {
            std::vector<std::string> row{panel.rater_ids[i]};
            for (std::size_t j = 0; j < panel.rater_ids.size(); ++j)
                row.push_back(csv::fmt(matrix[i][j].value, 6));
            w.row(row);
        }

        ordered_json rj = ordered_json::object();
        for (std::size_t i = 0; i < panel.rater_ids.size(); ++i)
            rj[panel.rater_ids[i]] = metric_json(mean_pairwise_kappa(
                panel, static_cast<int>(i), nb,
                rng::derive_key(cfg.seed, "eval/raters", panel.rater_ids[i])));
        ordered_json top;
        top["n_shared_slides"] = shared.size();
        top["mean_pairwise_kappa"] = rj;
        report["raters"] = top;
    }

    std::ofstream out(dir / "report.json");
    out << report.dump(2) << "\n";
}

} // namespace crib
