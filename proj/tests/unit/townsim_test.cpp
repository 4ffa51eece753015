#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "chemtown/errors.hpp"
#include "chemtown/townsim.hpp"
#include "test_support.hpp"

using namespace chemtown;
using testsupport::lower_abbr;
using testsupport::make_world;
using testsupport::pick;
using testsupport::Rng;
using testsupport::TempDir;

namespace {

townsim::SimulationConfig fixture_config(const testsupport::WorldFixture& fx, std::size_t rounds,
                                         std::uint64_t seed) {
    townsim::SimulationConfig cfg;
    cfg.rounds = rounds;
    cfg.seed = seed;
    cfg.topics = fx.topics;
    return cfg;
}

class FlakyBackend final : public agents::ChatBackend {
public:
    agents::StubBackend inner;
    std::size_t calls = 0;
    std::set<std::size_t> fail_on; // 1-based generate() call numbers

    agents::GenerationResult generate(const agents::ExpertProfile& profile,
                                      const agents::PromptBundle& bundle) override {
        ++calls;
        if (fail_on.count(calls))
            throw BackendError(BackendError::Kind::transport, 1, "connection dropped");
        return inner.generate(profile, bundle);
    }
    std::string id() const override { return "flaky"; }
};

std::vector<const agents::DialogueTurn*> expert_turns(const townsim::Transcript& t) {
    std::vector<const agents::DialogueTurn*> out;
    for (const agents::DialogueTurn& turn : t.turns) {
        if (!turn.mediated) out.push_back(&turn);
    }
    return out;
}

} // namespace

TEST_SUITE("townsim") {

TEST_CASE("the expert pair pool is the 21 roster-ordered combinations") {
    auto pairs = townsim::all_expert_pairs();
    REQUIRE(pairs.size() == 21);
    CHECK(pairs.front() == std::pair<std::string, std::string>{"MDE", "RME"});
    CHECK(pairs.back() == std::pair<std::string, std::string>{"PSE", "QCE"});
    std::set<std::pair<std::string, std::string>> unique(pairs.begin(), pairs.end());
    CHECK(unique.size() == 21);
    auto roster_pos = [](const std::string& abbr) {
        return std::find(agents::kExpertAbbrs.begin(), agents::kExpertAbbrs.end(), abbr) -
               agents::kExpertAbbrs.begin();
    };
    for (const auto& [a, b] : pairs) CHECK(roster_pos(a) < roster_pos(b));
}

TEST_CASE("simulation configs validate their fields") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 2, 1);
    CHECK_NOTHROW(cfg.validate());

    auto zero_rounds = cfg;
    zero_rounds.rounds = 0;
    CHECK_THROWS_AS(zero_rounds.validate(), ConfigError);

    auto one_turn = cfg;
    one_turn.turns_per_round = 1;
    CHECK_THROWS_AS(one_turn.validate(), ConfigError);

    auto no_topics = cfg;
    no_topics.topics.clear();
    CHECK_THROWS_AS(no_topics.validate(), ConfigError);

    auto ca_pair = cfg;
    ca_pair.pairs = {{"MDE", "CA"}};
    CHECK_THROWS_AS(ca_pair.validate(), ConfigError);

    auto same_pair = cfg;
    same_pair.pairs = {{"MDE", "MDE"}};
    CHECK_THROWS_AS(same_pair.validate(), ConfigError);

    auto bad_retrieval = cfg;
    bad_retrieval.retrieval.k = 0;
    CHECK_THROWS_AS(bad_retrieval.validate(), ConfigError);
}

TEST_CASE("configs round-trip through JSON") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 5, 99);
    cfg.pairs = {{"MDE", "PSE"}, {"TME", "QCE"}};
    cfg.ca_enabled = false;
    cfg.turns_per_round = 4;
    cfg.retrieval.k = 3;
    cfg.retrieval.threshold = 0.6;
    cfg.token_budget = 2048;

    auto restored = townsim::config_from_json(townsim::config_to_json(cfg));
    CHECK(restored.rounds == cfg.rounds);
    CHECK(restored.seed == cfg.seed);
    CHECK(restored.pairs == cfg.pairs);
    CHECK(restored.ca_enabled == cfg.ca_enabled);
    CHECK(restored.turns_per_round == cfg.turns_per_round);
    CHECK(restored.topics == cfg.topics);
    CHECK(restored.retrieval.k == cfg.retrieval.k);
    CHECK(restored.retrieval.threshold == cfg.retrieval.threshold);
    CHECK(restored.token_budget == cfg.token_budget);
}

TEST_CASE("schedules replay from the seed and cycle explicit pairs") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 30, 1234);

    auto a = townsim::draw_schedule(cfg);
    auto b = townsim::draw_schedule(cfg);
    REQUIRE(a.size() == 30);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pair == b[i].pair);
        CHECK(a[i].topic == b[i].topic);
        CHECK(a[i].topic == fx.topics[i % fx.topics.size()]);
    }

    auto other_seed = cfg;
    other_seed.seed = 4321;
    auto c = townsim::draw_schedule(other_seed);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_difference |= a[i].pair != c[i].pair;
    CHECK(any_difference);

    const auto pool = townsim::all_expert_pairs();
    std::set<std::pair<std::string, std::string>> pool_set(pool.begin(), pool.end());
    for (const auto& plan : a) CHECK(pool_set.count(plan.pair) == 1);

    auto fixed = cfg;
    fixed.pairs = {{"MDE", "PSE"}, {"TME", "QCE"}, {"RME", "ERE"}};
    auto plans = townsim::draw_schedule(fixed);
    for (std::size_t i = 0; i < plans.size(); ++i)
        CHECK(plans[i].pair == fixed.pairs[i % fixed.pairs.size()]);
}

TEST_CASE("identical seeds reproduce the whole run") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 4, 7);
    agents::StubBackend backend;

    auto first = townsim::run_simulation(cfg, fx.world, backend);
    auto second = townsim::run_simulation(cfg, fx.world, backend);
    REQUIRE(first.transcripts.size() == second.transcripts.size());
    CHECK(first.failed_rounds == 0);
    for (std::size_t i = 0; i < first.transcripts.size(); ++i) {
        CHECK(townsim::transcript_to_json(first.transcripts[i]).dump() ==
              townsim::transcript_to_json(second.transcripts[i]).dump());
    }
}

TEST_CASE("transcripts carry ids, the config snapshot, and monotone timestamps") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 3, 11);
    agents::StubBackend backend;
    auto result = townsim::run_simulation(cfg, fx.world, backend);

    REQUIRE(result.transcripts.size() == 3);
    CHECK(result.transcripts[0].id == "c00000");
    CHECK(result.transcripts[1].id == "c00001");
    CHECK(result.transcripts[2].id == "c00002");

    const nlohmann::json snapshot = townsim::config_to_json(cfg);
    std::uint64_t last_timestamp = 0;
    for (std::size_t r = 0; r < result.transcripts.size(); ++r) {
        const townsim::Transcript& t = result.transcripts[r];
        CHECK(t.round == r);
        CHECK(t.seed == cfg.seed);
        CHECK(t.topic == fx.topics[r % fx.topics.size()]);
        CHECK(t.config == snapshot);
        CHECK(!t.failure.has_value());
        for (const agents::DialogueTurn& turn : t.turns) {
            CHECK(turn.timestamp > last_timestamp);
            last_timestamp = turn.timestamp;
        }
    }
}

TEST_CASE("expert turns alternate between the scheduled pair") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 4, 21);
    cfg.turns_per_round = 4;
    agents::StubBackend backend;
    auto result = townsim::run_simulation(cfg, fx.world, backend);

    for (const townsim::Transcript& t : result.transcripts) {
        auto experts = expert_turns(t);
        REQUIRE(experts.size() == cfg.turns_per_round);
        for (std::size_t i = 0; i < experts.size(); ++i) {
            const std::string& expected = i % 2 == 0 ? t.pair.first : t.pair.second;
            CHECK(experts[i]->speaker == expected);
            if (i > 0) CHECK(experts[i]->speaker != experts[i - 1]->speaker);
        }
        for (const agents::DialogueTurn& turn : t.turns) {
            if (turn.mediated) CHECK(turn.speaker == std::string(agents::kCollaborationAbbr));
        }
    }
}

TEST_CASE("the mediator translates every fixture turn") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 2, 5);
    agents::StubBackend backend;
    auto result = townsim::run_simulation(cfg, fx.world, backend);

    for (const townsim::Transcript& t : result.transcripts) {
        // every expert turn mentions a mapped probe and an unmapped jargon
        // term, so each one draws a mediation with a collaboration turn
        REQUIRE(t.mediations.size() == cfg.turns_per_round);
        CHECK(t.turns.size() == 2 * cfg.turns_per_round);

        auto experts = expert_turns(t);
        for (std::size_t i = 0; i < experts.size(); ++i) {
            const ontology::MediationRecord& m = t.mediations[i];
            CHECK(m.conversation_id == t.id);
            CHECK(m.round == t.round);
            CHECK(m.intervened);
            REQUIRE(m.translations.size() == 1);
            REQUIRE(m.unmapped_terms.size() == 1);
            std::string ab = lower_abbr(experts[i]->speaker);
            CHECK(m.translations[0].src_term == ab + "probe");
            CHECK(m.unmapped_terms[0] == ab + "jargon");
        }
        // collaboration turns directly follow the turn they translate
        for (std::size_t i = 0; i + 1 < t.turns.size(); i += 2) {
            CHECK(!t.turns[i].mediated);
            CHECK(t.turns[i + 1].mediated);
            CHECK(t.turns[i + 1].text.find("probe (" + lower_abbr(t.turns[i].speaker) + "probe)") !=
                  std::string::npos);
        }
    }
}

TEST_CASE("disabling the collaboration agent removes all mediation") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 3, 13);
    cfg.ca_enabled = false;
    agents::StubBackend backend;
    auto result = townsim::run_simulation(cfg, fx.world, backend);
    for (const townsim::Transcript& t : result.transcripts) {
        CHECK(t.mediations.empty());
        CHECK(t.turns.size() == cfg.turns_per_round);
        for (const agents::DialogueTurn& turn : t.turns) CHECK(!turn.mediated);
    }
}

TEST_CASE("knowledge-enabled experts cite their retrieved chunks") {
    auto fx_on = make_world(true);
    auto cfg = fixture_config(fx_on, 3, 17);
    agents::StubBackend backend;
    auto with_kb = townsim::run_simulation(cfg, fx_on.world, backend);
    for (const townsim::Transcript& t : with_kb.transcripts) {
        for (const agents::DialogueTurn* turn : expert_turns(t)) {
            CHECK(turn->citations.size() == fx_on.topics.size());
            for (const vstore::ChunkRef& ref : turn->citations)
                CHECK(ref.doc_id == "kb" + lower_abbr(turn->speaker));
        }
    }

    auto fx_off = make_world(false);
    auto without_kb = townsim::run_simulation(fixture_config(fx_off, 3, 17), fx_off.world, backend);
    for (const townsim::Transcript& t : without_kb.transcripts)
        for (const agents::DialogueTurn* turn : expert_turns(t))
            CHECK(turn->citations.empty());
}

TEST_CASE("a backend failure marks the round and the run continues") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 3, 29);
    FlakyBackend backend;
    backend.fail_on = {4}; // second turn of the second round

    auto result = townsim::run_simulation(cfg, fx.world, backend);
    REQUIRE(result.transcripts.size() == 3);
    CHECK(result.failed_rounds == 1);
    CHECK(!result.transcripts[0].failure.has_value());
    REQUIRE(result.transcripts[1].failure.has_value());
    CHECK(result.transcripts[1].failure->find("connection dropped") != std::string::npos);
    // the first turn of the failed round survives alongside its mediation
    CHECK(expert_turns(result.transcripts[1]).size() == 1);
    CHECK(!result.transcripts[2].failure.has_value());
    CHECK(expert_turns(result.transcripts[2]).size() == cfg.turns_per_round);
}

TEST_CASE("worlds validate the roster against the config") {
    auto fx = make_world(false);
    auto cfg = fixture_config(fx, 1, 1);
    CHECK_NOTHROW(fx.world.validate(cfg));
    CHECK(fx.world.expert("TME").abbr == "TME");
    CHECK_THROWS_AS(fx.world.expert("ZZZ"), ReferenceError);

    auto missing = fx.world;
    missing.experts.erase(missing.experts.begin()); // drop MDE
    CHECK_THROWS_AS(missing.validate(cfg), ConfigError);

    auto duplicate = fx.world;
    duplicate.experts.push_back(duplicate.experts.front());
    CHECK_THROWS_AS(duplicate.validate(cfg), ConfigError);

    auto no_ca = fx.world;
    no_ca.experts.pop_back(); // CA is last in the fixture
    agents::StubBackend backend;
    CHECK_THROWS_AS(townsim::run_simulation(cfg, no_ca, backend), ConfigError);
    auto ca_off = cfg;
    ca_off.ca_enabled = false;
    CHECK_NOTHROW(no_ca.validate(ca_off));

    auto no_registry = fx.world;
    no_registry.registry.reset();
    CHECK_THROWS_AS(no_registry.validate(cfg), ConfigError);

    auto foreign = fx.world;
    foreign.experts[0].domain = "unregistered_domain";
    CHECK_THROWS_AS(foreign.validate(cfg), ConfigError);
}

TEST_CASE("transcripts round-trip through JSON lines") {
    auto fx = make_world(true);
    auto cfg = fixture_config(fx, 5, 31);
    agents::StubBackend backend;
    auto result = townsim::run_simulation(cfg, fx.world, backend);
    result.transcripts[2].failure = "synthetic failure note";

    TempDir tmp;
    townsim::write_transcripts(tmp.file("transcripts.jsonl"), result.transcripts);
    auto loaded = townsim::read_transcripts(tmp.file("transcripts.jsonl"));
    REQUIRE(loaded.size() == result.transcripts.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) CHECK(loaded[i] == result.transcripts[i]);

    townsim::write_transcripts(tmp.file("empty.jsonl"), {});
    CHECK(townsim::read_transcripts(tmp.file("empty.jsonl")).empty());
}

TEST_CASE("transcript parsing names the missing field and line") {
    TempDir tmp;
    auto fx = make_world(false);
    agents::StubBackend backend;
    auto result = townsim::run_simulation(fixture_config(fx, 2, 37), fx.world, backend);

    nlohmann::json good = townsim::transcript_to_json(result.transcripts[0]);
    nlohmann::json broken = townsim::transcript_to_json(result.transcripts[1]);
    broken.erase("turns");
    testsupport::write_text(tmp.file("broken.jsonl"), good.dump() + "\n" + broken.dump() + "\n");
    try {
        townsim::read_transcripts(tmp.file("broken.jsonl"));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("turns") != std::string::npos);
        CHECK(e.line() == 2);
    }
}

} // TEST_SUITE
