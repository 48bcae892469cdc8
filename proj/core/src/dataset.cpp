#include "refocs/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "refocs/errors.hpp"
#include "refocs/image_io.hpp"
#include "refocs/rng.hpp"

namespace refocs {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void DatasetManifest::add_sample(LabeledImage img) {
    if (img.sample_id < 0) throw DataError("add_sample: negative sample id");
    if (images_.count(img.sample_id)) throw DataError("add_sample: duplicate sample id");
    auto it = samples_.find(img.class_id);
    if (it == samples_.end()) {
        samples_[img.class_id] = {img.sample_id};
        class_ids_.insert(std::upper_bound(class_ids_.begin(), class_ids_.end(), img.class_id),
                          img.class_id);
    } else {
        it->second.push_back(img.sample_id);
    }
    const std::int64_t id = img.sample_id;
    images_.emplace(id, std::move(img));
}

void DatasetManifest::attach_exemplar(ExemplarImage ex) {
    if (!has_class(ex.class_id)) {
        throw DataError("exemplar refers to unknown class " + std::to_string(ex.class_id));
    }
    exemplars_[ex.class_id] = std::move(ex);
}

const std::vector<std::int64_t>& DatasetManifest::samples_of(int class_id) const {
    auto it = samples_.find(class_id);
    if (it == samples_.end()) throw DataError("unknown class " + std::to_string(class_id));
    return it->second;
}

const LabeledImage& DatasetManifest::image(std::int64_t sample_id) const {
    auto it = images_.find(sample_id);
    if (it == images_.end()) throw DataError("unknown sample " + std::to_string(sample_id));
    return it->second;
}

const ExemplarImage* DatasetManifest::exemplar(int class_id) const {
    auto it = exemplars_.find(class_id);
    return it == exemplars_.end() ? nullptr : &it->second;
}

void DatasetManifest::validate() const {
    for (const auto& [cid, ids] : samples_) {
        if (ids.empty()) throw DataError("class " + std::to_string(cid) + " has no samples");
    }
    for (const auto& [cid, ex] : exemplars_) {
        if (!has_class(cid)) throw DataError("exemplar for unknown class " + std::to_string(cid));
        if (ex.pixels.ndim() != 3 || ex.pixels.dim(1) != height_ || ex.pixels.dim(2) != width_) {
            throw DataError("exemplar grid mismatch for class " + std::to_string(cid));
        }
    }
    for (const auto& [sid, img] : images_) {
        if (img.pixels.ndim() != 3 || img.pixels.dim(1) != height_ || img.pixels.dim(2) != width_) {
            throw DataError("sample grid mismatch for sample " + std::to_string(sid));
        }
    }
}

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

DatasetManifest ingest_image_folder(const fs::path& root, std::pair<int, int> image_size) {
    if (!fs::is_directory(root)) {
        throw ConfigError("dataset root does not exist: " + root.string());
    }
    const auto [h, w] = image_size;
    DatasetManifest man(root.filename().string(), h, w);

    std::map<std::string, int> dir_to_class;
    int next_class = 0;
    std::int64_t next_sample = 0;
    for (const auto& class_dir : sorted_entries(root, true)) {
        const std::string cname = class_dir.filename().string();
        if (cname == "exemplars") continue;
        const int cid = next_class++;
        dir_to_class[cname] = cid;
        int kept = 0;
        for (const auto& file : sorted_entries(class_dir, false)) {
            if (!is_image_file(file)) continue;
            auto pix = load_image_rgb(file, h, w);
            if (!pix) {
                std::cerr << "warning: skipping undecodable image " << file.string() << "\n";
                continue;
            }
            man.add_sample({std::move(*pix), cid, next_sample++});
            ++kept;
        }
        if (kept == 0) {
            throw DataError("class has no samples: " + cname);
        }
    }
    if (man.class_count() == 0) throw DataError("dataset has no class directories");

    const fs::path exdir = root / "exemplars";
    if (fs::is_directory(exdir)) {
        for (const auto& file : sorted_entries(exdir, false)) {
            if (!is_image_file(file)) continue;
            const std::string stem = file.stem().string();
            auto it = dir_to_class.find(stem);
            if (it == dir_to_class.end()) {
                throw DataError("exemplar for unknown class: " + stem);
            }
            auto pix = load_image_rgb(file, h, w);
            if (!pix) throw DataError("undecodable exemplar: " + file.string());
            man.attach_exemplar({std::move(*pix), it->second, Provenance::canonical});
        }
    }
    man.validate();
    return man;
}

namespace {

std::string class_dir_name(int class_id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "class_%03d", class_id);
    return buf;
}

std::string sample_file_name(std::int64_t sample_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%09lld.png", static_cast<long long>(sample_id));
    return buf;
}

}  // namespace

void save_dataset(const DatasetManifest& manifest, const fs::path& dir) {
    fs::create_directories(dir);
    ordered_json j;
    j["name"] = manifest.name();
    j["image_size"] = {manifest.height(), manifest.width()};
    j["classes"] = ordered_json::array();
    for (int cid : manifest.class_ids()) {
        const std::string cdir = class_dir_name(cid);
        fs::create_directories(dir / cdir);
        ordered_json cj;
        cj["id"] = cid;
        cj["dir"] = cdir;
        cj["samples"] = ordered_json::array();
        for (std::int64_t sid : manifest.samples_of(cid)) {
            const std::string fname = sample_file_name(sid);
            save_image_rgb(dir / cdir / fname, manifest.image(sid).pixels);
            cj["samples"].push_back({{"id", sid}, {"file", cdir + "/" + fname}});
        }
        if (const ExemplarImage* ex = manifest.exemplar(cid)) {
            fs::create_directories(dir / "exemplars");
            const std::string exfile = "exemplars/" + cdir + ".png";
            save_image_rgb(dir / exfile, ex->pixels);
            cj["exemplar"] = {
                {"file", exfile},
                {"provenance", ex->provenance == Provenance::canonical ? "canonical" : "estimated"}};
        }
        j["classes"].push_back(std::move(cj));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write manifest.json under " + dir.string());
    out << j.dump(2) << "\n";
}

DatasetManifest load_dataset(const fs::path& dir, std::pair<int, int> image_size) {
    const fs::path mfile = dir / "manifest.json";
    if (!fs::is_regular_file(mfile)) {
        return ingest_image_folder(dir, image_size);
    }
    std::ifstream in(mfile);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("manifest.json parse failure: " + std::string(e.what()));
    }
    const auto [h, w] = image_size;
    DatasetManifest man(j.value("name", dir.filename().string()), h, w);
    for (const auto& cj : j.at("classes")) {
        const int cid = cj.at("id").get<int>();
        for (const auto& sj : cj.at("samples")) {
            const fs::path file = dir / sj.at("file").get<std::string>();
            auto pix = load_image_rgb(file, h, w);
            if (!pix) throw DataError("missing or undecodable sample: " + file.string());
            man.add_sample({std::move(*pix), cid, sj.at("id").get<std::int64_t>()});
        }
        if (cj.contains("exemplar")) {
            const fs::path file = dir / cj.at("exemplar").at("file").get<std::string>();
            auto pix = load_image_rgb(file, h, w);
            if (!pix) throw DataError("missing or undecodable exemplar: " + file.string());
            const bool canonical = cj.at("exemplar").at("provenance").get<std::string>() == "canonical";
            man.attach_exemplar(
                {std::move(*pix), cid, canonical ? Provenance::canonical : Provenance::estimated});
        }
    }
    man.validate();
    return man;
}

std::pair<DatasetManifest, DatasetManifest> split_classes(const DatasetManifest& manifest,
                                                          double train_fraction,
                                                          std::uint64_t seed,
                                                          int n_way_required) {
    if (train_fraction < 0.0 || train_fraction > 1.0) {
        throw ConfigError("train_fraction must lie in [0,1]");
    }
    std::vector<int> classes = manifest.class_ids();
    const int m = static_cast<int>(classes.size());
    const int n_train = static_cast<int>(std::lround(train_fraction * m));
    Rng rng(mix_keys(seed, 0x5317ed5b11ULL));
    rng.shuffle(classes);

    std::vector<int> train_classes(classes.begin(), classes.begin() + n_train);
    std::vector<int> test_classes(classes.begin() + n_train, classes.end());
    // A non-empty side smaller than the N-way requirement cannot form
    // episodes; an empty side is legitimate (cross-dataset evaluation).
    for (const auto* side : {&train_classes, &test_classes}) {
        if (!side->empty() && static_cast<int>(side->size()) < n_way_required) {
            throw DataError("split leaves " + std::to_string(side->size()) +
                            " classes, fewer than the required " + std::to_string(n_way_required));
        }
    }

    auto build = [&](const std::vector<int>& cls, const std::string& suffix) {
        DatasetManifest out(manifest.name() + suffix, manifest.height(), manifest.width());
        std::vector<int> sorted = cls;
        std::sort(sorted.begin(), sorted.end());
        for (int cid : sorted) {
            for (std::int64_t sid : manifest.samples_of(cid)) {
                out.add_sample(manifest.image(sid));
            }
            if (const ExemplarImage* ex = manifest.exemplar(cid)) {
                out.attach_exemplar(*ex);
            }
        }
        return out;
    };
    return {build(train_classes, "/train"), build(test_classes, "/test")};
}

}  // namespace refocs
