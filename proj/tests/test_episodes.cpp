#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "refocs/episodes.hpp"
#include "refocs/errors.hpp"
#include "refocs/glyphs.hpp"

using namespace refocs;

namespace {

SamplingPlan small_plan() {
    SamplingPlan p;
    p.n_way = 3;
    p.k_shot = 2;
    p.k_query_in_per_class = 2;
    p.k_query_out_total = 4;
    p.episodes_train = 10;
    p.episodes_test = 5;
    return p;
}

std::set<std::int64_t> all_sample_ids(const Episode& ep) {
    std::set<std::int64_t> ids;
    for (const auto& shots : ep.support)
        for (const LabeledImage* img : shots) ids.insert(img->sample_id);
    for (const auto& [img, slot] : ep.queries_in) {
        (void)slot;
        ids.insert(img->sample_id);
    }
    for (const LabeledImage* img : ep.queries_out) ids.insert(img->sample_id);
    return ids;
}

}  // namespace

TEST_CASE("episode sizes follow the plan") {
    DatasetManifest m = generate_glyph_dataset(12, 20, {8, 8}, 2);

    SUBCASE("dense plan") {
        SamplingPlan p;
        p.n_way = 5;
        p.k_shot = 5;
        p.k_query_in_per_class = 10;
        p.k_query_out_total = 50;
        CHECK(p.episode_size() == 125);
        Episode ep = episode_at(m, p, 1, 0);
        CHECK(ep.queries_in.size() == 50);
        CHECK(ep.queries_out.size() == 50);
        CHECK(ep.support.size() == 5);
        CHECK(ep.support[0].size() == 5);
    }
    SUBCASE("one-shot plan") {
        SamplingPlan p;
        p.n_way = 5;
        p.k_shot = 1;
        p.k_query_in_per_class = 1;
        p.k_query_out_total = 5;
        CHECK(p.episode_size() == 15);
        Episode ep = episode_at(m, p, 1, 0);
        CHECK(ep.queries_in.size() == 5);
        CHECK(ep.queries_out.size() == 5);
    }
}

TEST_CASE("support and open classes stay disjoint, samples unique") {
    DatasetManifest m = generate_glyph_dataset(10, 8, {8, 8}, 6);
    SamplingPlan p = small_plan();
    for (int i = 0; i < 1000; ++i) {
        Episode ep = episode_at(m, p, 99, i);

        std::set<int> support_classes(ep.support_class_ids.begin(), ep.support_class_ids.end());
        CHECK(support_classes.size() == static_cast<std::size_t>(p.n_way));
        for (const LabeledImage* out : ep.queries_out)
            CHECK(support_classes.count(out->class_id) == 0);

        for (int slot = 0; slot < p.n_way; ++slot)
            for (const LabeledImage* img : ep.support[static_cast<std::size_t>(slot)])
                CHECK(img->class_id == ep.support_class_ids[static_cast<std::size_t>(slot)]);
        for (const auto& [img, slot] : ep.queries_in)
            CHECK(img->class_id == ep.support_class_ids[static_cast<std::size_t>(slot)]);

        CHECK(all_sample_ids(ep).size() == static_cast<std::size_t>(p.episode_size()));
    }
}

TEST_CASE("openness labels mark in then out queries") {
    DatasetManifest m = generate_glyph_dataset(8, 8, {8, 8}, 6);
    SamplingPlan p = small_plan();
    Episode ep = episode_at(m, p, 5, 3);
    REQUIRE(ep.openness_labels.size() == ep.queries_in.size() + ep.queries_out.size());
    for (std::size_t q = 0; q < ep.queries_in.size(); ++q) CHECK(ep.openness_labels[q] == 0);
    for (std::size_t q = ep.queries_in.size(); q < ep.openness_labels.size(); ++q)
        CHECK(ep.openness_labels[q] == 1);
}

TEST_CASE("episode i is a pure function of seed and i") {
    DatasetManifest m = generate_glyph_dataset(9, 10, {8, 8}, 4);
    SamplingPlan p = small_plan();

    Episode a = episode_at(m, p, 77, 41);
    Episode b = episode_at(m, p, 77, 41);
    CHECK(a.support_class_ids == b.support_class_ids);
    CHECK(all_sample_ids(a) == all_sample_ids(b));

    std::vector<Episode> stream = episode_stream(m, p, 50, 77);
    Episode late = episode_at(m, p, 77, 41);
    CHECK(stream[41].support_class_ids == late.support_class_ids);
    CHECK(all_sample_ids(stream[41]) == all_sample_ids(late));

    Episode other_seed = episode_at(m, p, 78, 41);
    Episode other_index = episode_at(m, p, 77, 42);
    CHECK((all_sample_ids(other_seed) != all_sample_ids(a) ||
           other_seed.support_class_ids != a.support_class_ids));
    CHECK((all_sample_ids(other_index) != all_sample_ids(a) ||
           other_index.support_class_ids != a.support_class_ids));
}

TEST_CASE("thin classes are excluded from support but stay open candidates") {
    DatasetManifest m("thin", 8, 8);
    auto add = [&](int cls, int count, int base) {
        for (int i = 0; i < count; ++i) {
            LabeledImage img;
            img.pixels = Tensor::full({3, 8, 8}, 0.25);
            img.class_id = cls;
            img.sample_id = base + i;
            m.add_sample(img);
        }
        ExemplarImage ex;
        ex.pixels = Tensor::full({3, 8, 8}, 1.0);
        ex.class_id = cls;
        m.attach_exemplar(ex);
    };
    // Classes 0..2 can support a (K=2, K_Qin=2) plan; class 3 holds one
    // sample and can only ever appear as an open query.
    add(0, 6, 0);
    add(1, 6, 100);
    add(2, 6, 200);
    add(3, 1, 300);

    SamplingPlan p;
    p.n_way = 3;
    p.k_shot = 2;
    p.k_query_in_per_class = 2;
    p.k_query_out_total = 1;
    bool saw_thin_open = false;
    for (int i = 0; i < 200; ++i) {
        Episode ep = episode_at(m, p, 11, i);
        for (int cid : ep.support_class_ids) CHECK(cid != 3);
        for (const LabeledImage* out : ep.queries_out)
            if (out->class_id == 3) saw_thin_open = true;
    }
    CHECK(saw_thin_open);
}

TEST_CASE("error paths name the problem") {
    DatasetManifest m = generate_glyph_dataset(5, 6, {8, 8}, 1);
    SamplingPlan p = small_plan();
    p.n_way = 5;
    // 5 classes, 5-way, K_Qout > 0: no class left to be open.
    CHECK_THROWS_AS(episode_at(m, p, 1, 0), DataError);

    SamplingPlan bad = small_plan();
    bad.k_shot = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small_plan();
    bad.k_query_out_total = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    DatasetManifest starved = generate_glyph_dataset(6, 3, {8, 8}, 1);
    SamplingPlan hungry = small_plan();  // needs K + K_Qin = 4 per class
    CHECK_THROWS_AS(episode_at(starved, hungry, 1, 0), DataError);
}

TEST_CASE("restricted open pool") {
    DatasetManifest m = generate_glyph_dataset(12, 8, {8, 8}, 10);
    SamplingPlan p = small_plan();
    p.n_open_classes = 2;
    for (int i = 0; i < 100; ++i) {
        Episode ep = episode_at(m, p, 3, i);
        std::set<int> open_classes;
        for (const LabeledImage* out : ep.queries_out) open_classes.insert(out->class_id);
        CHECK(open_classes.size() <= 2);
    }

    p.n_open_classes = 10;  // only 12 - 3 = 9 non-support classes exist
    CHECK_THROWS_AS(episode_at(m, p, 3, 0), DataError);
}

TEST_CASE("missing exemplars only fail when required") {
    DatasetManifest m("bare", 8, 8);
    for (int cls = 0; cls < 5; ++cls)
        for (int i = 0; i < 6; ++i) {
            LabeledImage img;
            img.pixels = Tensor::full({3, 8, 8}, 0.5);
            img.class_id = cls;
            img.sample_id = cls * 100 + i;
            m.add_sample(img);
        }
    SamplingPlan p = small_plan();
    CHECK_THROWS_AS(episode_at(m, p, 1, 0, true), DataError);
    Episode ep = episode_at(m, p, 1, 0, false);
    for (const ExemplarImage* ex : ep.exemplars) CHECK(ex == nullptr);
}
