#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "isgib/nn.hpp"
#include "support.hpp"

using namespace isgib;

namespace {

EncoderConfig small_cfg(Backbone b, int layers = 1, int hidden = 2, int d_in = 1) {
    EncoderConfig cfg;
    cfg.backbone = b;
    cfg.layers = layers;
    cfg.hidden = hidden;
    cfg.d_in = d_in;
    cfg.num_classes = 2;
    return cfg;
}

void set_values(Tensor t, std::vector<double> v) { t.mutable_value() = std::move(v); }

} // namespace

TEST_CASE("zero-weight single-node sage outputs the bias through relu") {
    Graph g;
    g.num_nodes = 1;
    g.features = Matrix(1, 1, 7.0);
    g.labels = {0};
    const Adjacency adj = Adjacency::build(g);

    ParamStore store(3);
    EncoderParams enc = EncoderParams::create(small_cfg(Backbone::sage), store);
    set_values(enc.weights[0], {0, 0, 0, 0});
    set_values(enc.biases[0], {0.5, -0.75});

    Rng rng(0);
    const Tensor h = encode(g, adj, enc, false, rng);
    REQUIRE(h.value()[0] == 0.5); // relu passes the positive bias
    REQUIRE(h.value()[1] == 0.0); // and clips the negative one
}

TEST_CASE("symmetric two-node graph gets identical embeddings") {
    Graph g;
    g.num_nodes = 2;
    g.edges = {{0, 1}};
    g.features = Matrix(2, 3, 0.4);
    g.labels = {0, 0};
    const Adjacency adj = Adjacency::build(g);

    for (Backbone b : {Backbone::sage, Backbone::gcn, Backbone::gin}) {
        ParamStore store(11);
        EncoderParams enc = EncoderParams::create(small_cfg(b, 2, 4, 3), store);
        Rng rng(0);
        const Tensor h = encode(g, adj, enc, false, rng);
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(h.value()[j] == h.value()[4 + j]);
    }
}

TEST_CASE("one-layer sage matches the hand computation on the chain") {
    const Graph g = testsupport::chain_graph(3, {1.0, 3.0, 5.0});
    const Adjacency adj = Adjacency::build(g);

    ParamStore store(5);
    EncoderParams enc = EncoderParams::create(small_cfg(Backbone::sage, 1, 2, 1), store);
    const std::vector<double> w = {1.0, 0.5, -1.0, 0.25}; // [2 x 2]: rows self, neighbor-mean
    const std::vector<double> b = {0.1, -0.2};
    set_values(enc.weights[0], w);
    set_values(enc.biases[0], b);

    Rng rng(0);
    const Tensor h = encode(g, adj, enc, false, rng);

    // independent arithmetic: neighbor means on the chain are [3, 3, 3]
    const double nm[3] = {3.0, 3.0, 3.0};
    const double x[3] = {1.0, 3.0, 5.0};
    for (std::size_t v = 0; v < 3; ++v)
        for (std::size_t j = 0; j < 2; ++j) {
            const double z = x[v] * w[j] + nm[v] * w[2 + j] + b[j];
            REQUIRE(h.value()[v * 2 + j] == Catch::Approx(std::max(0.0, z)).margin(1e-12));
        }
}

TEST_CASE("encode rejects feature width mismatch") {
    const Graph g = testsupport::chain_graph(3, {}, 2);
    const Adjacency adj = Adjacency::build(g);
    ParamStore store(1);
    EncoderParams enc = EncoderParams::create(small_cfg(Backbone::sage, 1, 2, 5), store);
    Rng rng(0);
    REQUIRE_THROWS_AS(encode(g, adj, enc, false, rng), error);
}

TEST_CASE("encode without dropout is deterministic") {
    const Graph g = testsupport::toy_separable_graph(6);
    const Adjacency adj = Adjacency::build(g);
    ParamStore store(17);
    EncoderParams enc = EncoderParams::create(small_cfg(Backbone::gin, 2, 8, 4), store);
    Rng r1(1), r2(2);
    REQUIRE(encode(g, adj, enc, false, r1).value() == encode(g, adj, enc, false, r2).value());
}

TEST_CASE("readout properties") {
    SECTION("single node passes through") {
        const Tensor h = Tensor::from_data({1.0, -2.0, 3.0}, {1, 3});
        REQUIRE(readout(h).value() == std::vector<double>{1.0, -2.0, 3.0});
    }
    SECTION("opposite vectors cancel") {
        const Tensor h = Tensor::from_data({0.5, -1.25, -0.5, 1.25}, {2, 2});
        REQUIRE(readout(h).value() == std::vector<double>{0.0, 0.0});
    }
    SECTION("permutation invariance is bitwise") {
        Rng rng(23);
        std::vector<double> rows(7 * 3);
        for (double& v : rows) v = rng.normal(0.0, 1.0);
        const Tensor a = Tensor::from_data(rows, {7, 3});
        std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
        std::vector<double> permuted(7 * 3);
        for (std::size_t i = 0; i < 7; ++i)
            for (std::size_t j = 0; j < 3; ++j) permuted[i * 3 + j] = rows[perm[i] * 3 + j];
        const Tensor b = Tensor::from_data(permuted, {7, 3});
        REQUIRE(readout(a).value() == readout(b).value());
    }
    SECTION("gradient is the uniform mean gradient") {
        Tensor h = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {2, 2}, true);
        REQUIRE(grad_check([&] { return sum_all(readout(h)); }, {h}) < 1e-6);
    }
    SECTION("empty graph is rejected") {
        REQUIRE_THROWS_AS(readout(Tensor::zeros({0, 3})), error);
    }
}

TEST_CASE("classifier trivial and arithmetic cases") {
    EncoderConfig cfg = small_cfg(Backbone::sage, 1, 3, 1);
    cfg.num_classes = 3;

    SECTION("zero weights give the bias for any input") {
        ParamStore store(2);
        ClassifierParams cls = ClassifierParams::create(cfg, store);
        set_values(cls.weight, std::vector<double>(9, 0.0));
        set_values(cls.bias, {0.3, -0.1, 2.0});
        const Tensor h = Tensor::from_data({5.0, -4.0, 1.0}, {1, 3});
        REQUIRE(classify(h, cls).value() == std::vector<double>{0.3, -0.1, 2.0});
    }
    SECTION("identity weights pass the embedding through") {
        ParamStore store(2);
        ClassifierParams cls = ClassifierParams::create(cfg, store);
        set_values(cls.weight, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        set_values(cls.bias, {0, 0, 0});
        const Tensor h = Tensor::from_data({5.0, -4.0, 1.0}, {1, 3});
        REQUIRE(classify(h, cls).value() == std::vector<double>{5.0, -4.0, 1.0});
    }
    SECTION("random case matches direct matrix arithmetic") {
        ParamStore store(29);
        ClassifierParams cls = ClassifierParams::create(cfg, store);
        Rng rng(31);
        std::vector<double> hv(3);
        for (double& v : hv) v = rng.normal(0.0, 1.0);
        const Tensor h = Tensor::from_data(hv, {1, 3});
        const auto out = classify(h, cls).value();
        for (std::size_t j = 0; j < 3; ++j) {
            double expect = cls.bias.value()[j];
            for (std::size_t t = 0; t < 3; ++t) expect += hv[t] * cls.weight.value()[t * 3 + j];
            REQUIRE(out[j] == Catch::Approx(expect).margin(1e-12));
        }
    }
    SECTION("width mismatch is rejected") {
        ParamStore store(2);
        ClassifierParams cls = ClassifierParams::create(cfg, store);
        REQUIRE_THROWS_AS(classify(Tensor::from_data({1.0}, {1, 1}), cls), error);
    }
}

namespace {

// identity two-layer head: w1 = I, b1 = 0, w2 = I, b2 = 0
void make_identity_head(Tensor w1, Tensor b1, Tensor w2, Tensor b2, std::size_t d) {
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    set_values(w1, eye);
    set_values(b1, std::vector<double>(d, 0.0));
    set_values(w2, eye);
    set_values(b2, std::vector<double>(d, 0.0));
}

// constant head: all weights zero, output bias fixed
void make_constant_head(Tensor w1, Tensor b1, Tensor w2, Tensor b2, std::size_t in, std::size_t d,
                        std::vector<double> constant) {
    set_values(w1, std::vector<double>(in * d, 0.0));
    set_values(b1, std::vector<double>(d, 0.0));
    set_values(w2, std::vector<double>(d * d, 0.0));
    set_values(b2, std::move(constant));
}

} // namespace

TEST_CASE("critic_score hand cases") {
    SECTION("identical identity heads on identical inputs score zero") {
        ParamStore store(7);
        Critic c = Critic::create("c", 2, 2, 2, 2, CriticDistance::neg_l2, store);
        make_identity_head(c.x_w1, c.x_b1, c.x_w2, c.x_b2, 2);
        make_identity_head(c.h_w1, c.h_b1, c.h_w2, c.h_b2, 2);
        REQUIRE(critic_score({0.7, 0.3}, {0.7, 0.3}, c) == 0.0);
    }
    SECTION("constant projections e1 and e2 score -sqrt(2) under neg_l2") {
        ParamStore store(7);
        Critic c = Critic::create("c", 2, 2, 2, 2, CriticDistance::neg_l2, store);
        make_constant_head(c.x_w1, c.x_b1, c.x_w2, c.x_b2, 2, 2, {1.0, 0.0});
        make_constant_head(c.h_w1, c.h_b1, c.h_w2, c.h_b2, 2, 2, {0.0, 1.0});
        REQUIRE(critic_score({9.0, 9.0}, {-3.0, 4.0}, c) ==
                Catch::Approx(-std::sqrt(2.0)).epsilon(1e-12));
    }
    SECTION("orthogonal projections score zero under dot") {
        ParamStore store(7);
        Critic c = Critic::create("c", 2, 2, 2, 2, CriticDistance::dot, store);
        make_constant_head(c.x_w1, c.x_b1, c.x_w2, c.x_b2, 2, 2, {1.0, 0.0});
        make_constant_head(c.h_w1, c.h_b1, c.h_w2, c.h_b2, 2, 2, {0.0, 1.0});
        REQUIRE(critic_score({1.0, 2.0}, {3.0, 4.0}, c) == 0.0);
    }
    SECTION("score_matrix rejects width mismatch") {
        ParamStore store(7);
        Critic c = Critic::create("c", 2, 3, 2, 2, CriticDistance::neg_l2, store);
        REQUIRE_THROWS_AS(c.score_matrix(Tensor::from_data({1.0}, {1, 1}),
                                         Tensor::from_data({1.0, 2.0, 3.0}, {1, 3})),
                          error);
    }
}

TEST_CASE("parameter init is name-derived, not order-derived") {
    ParamStore a(77), b(77);
    const Tensor wa = a.make("enc.l0.weight", 4, 8);
    a.make("other.param", 2, 2);
    b.make("unrelated.first", 3, 3);
    const Tensor wb = b.make("enc.l0.weight", 4, 8);
    REQUIRE(wa.value() == wb.value());
    // bound follows glorot fan-in/fan-out
    const double bound = std::sqrt(6.0 / (4.0 + 8.0));
    for (double v : wa.value()) REQUIRE(std::abs(v) <= bound);
}

TEST_CASE("all parameters receive finite gradients through the encoder stack") {
    const Graph g = testsupport::toy_separable_graph(4);
    const Adjacency adj = Adjacency::build(g);
    for (Backbone b : {Backbone::sage, Backbone::gcn, Backbone::gin}) {
        ParamStore store(5);
        EncoderConfig cfg = small_cfg(b, 2, 4, 4);
        EncoderParams enc = EncoderParams::create(cfg, store);
        ClassifierParams cls = ClassifierParams::create(cfg, store);
        Rng rng(0);
        const Tensor loss = cross_entropy(classify(encode(g, adj, enc, false, rng), cls), g.labels);
        store.zero_grad();
        loss.backward();
        for (const auto& p : store.tensors())
            for (double gv : p.grad()) REQUIRE(std::isfinite(gv));
    }
}

TEST_CASE("checkpoint round-trips parameters bitwise") {
    const std::string dir = testsupport::fresh_dir("ckpt");
    const std::string path = dir + "/model.json";

    ParamStore store(13);
    EncoderConfig cfg = small_cfg(Backbone::sage, 2, 4, 3);
    EncoderParams enc = EncoderParams::create(cfg, store);
    ClassifierParams cls = ClassifierParams::create(cfg, store);
    const std::vector<double> original = store.flatten();

    nlohmann::json manifest;
    manifest["note"] = "test";
    save_checkpoint(path, store, manifest, 13, 5);

    // perturb, then restore
    for (auto t : store.tensors())
        for (double& v : t.mutable_value()) v += 1.0;
    REQUIRE(store.flatten() != original);

    const nlohmann::json loaded = load_checkpoint(path, store);
    REQUIRE(store.flatten() == original);
    REQUIRE(loaded.at("epoch") == 5);
    REQUIRE(loaded.at("seed") == 13);

    // a differently-shaped model refuses the file
    ParamStore other(13);
    EncoderParams::create(small_cfg(Backbone::gin, 1, 4, 3), other);
    REQUIRE_THROWS_AS(load_checkpoint(path, other), error);
    std::filesystem::remove_all(dir);
}
