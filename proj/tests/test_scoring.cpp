#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lorakit/errors.hpp"
#include "lorakit/scoring.hpp"

using namespace lorakit;
namespace fs = std::filesystem;

namespace {

EvalLog make_log(std::initializer_list<std::vector<bool>> outcomes) {
    EvalLog log;
    int i = 0;
    for (const auto& o : outcomes) {
        log.records.push_back(EvalRecord{"q" + std::to_string(i++), o});
    }
    return log;
}

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& contents) {
        path = fs::temp_directory_path() /
               ("lorakit-scoring-" + std::to_string(std::random_device{}()) + ".jsonl");
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

}  // namespace

TEST_CASE("pass_at_1 basics") {
    CHECK(pass_at_1(make_log({{true, true}, {true, true, true}})) == 1.0);
    CHECK(pass_at_1(make_log({{true, true}, {true, false}})) == 0.75);
    CHECK_THROWS_AS(pass_at_1(EvalLog{}), InvalidInput);
}

TEST_CASE("pass_at_1 matches brute-force enumeration on a random fixture") {
    std::mt19937 gen(424242);
    std::bernoulli_distribution coin(0.37);
    std::uniform_int_distribution<int> width(1, 8);
    EvalLog log;
    for (int q = 0; q < 50; ++q) {
        std::vector<bool> outcomes;
        const int n = width(gen);
        for (int i = 0; i < n; ++i) outcomes.push_back(coin(gen));
        log.records.push_back(EvalRecord{"q" + std::to_string(q), outcomes});
    }

    long double sum = 0.0L;
    for (const auto& r : log.records) {
        long long correct = 0;
        for (bool o : r.outcomes) correct += o;
        sum += static_cast<long double>(correct) / static_cast<long double>(r.outcomes.size());
    }
    const double expected = static_cast<double>(sum / log.records.size());
    CHECK(std::abs(pass_at_1(log) - expected) <= 1e-12);
}

TEST_CASE("pass_at_1 is order invariant") {
    EvalLog log = make_log({{true, false, true}, {false}, {true, true}, {false, false}});
    const double value = pass_at_1(log);
    std::reverse(log.records.begin(), log.records.end());
    CHECK(std::abs(pass_at_1(log) - value) <= 1e-12);
    std::reverse(log.records[0].outcomes.begin(), log.records[0].outcomes.end());
    CHECK(std::abs(pass_at_1(log) - value) <= 1e-12);
}

TEST_CASE("pass_at_1 with n = 1 is plain accuracy") {
    const EvalLog log = make_log({{true}, {false}, {true}, {true}});
    CHECK(pass_at_1(log) == 0.75);
}

TEST_CASE("safety_score polarities are exact complements") {
    const EvalLog all_safe = make_log({{true}, {true}, {true}});
    CHECK(safety_score(all_safe, SafetyPolarity::safe_fraction) == 1.0);
    CHECK(safety_score(all_safe, SafetyPolarity::harmful_fraction) == 0.0);

    const EvalLog mixed = make_log({{true}, {true}, {true}, {false}});
    CHECK(safety_score(mixed, SafetyPolarity::safe_fraction) == 0.75);
    CHECK(safety_score(mixed, SafetyPolarity::harmful_fraction) == 0.25);

    // Exact complementarity even on awkward record counts.
    std::mt19937 gen(7);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t n : {3ul, 7ul, 310ul}) {
        EvalLog log;
        for (std::size_t i = 0; i < n; ++i)
            log.records.push_back(EvalRecord{std::to_string(i), {coin(gen)}});
        const double safe = safety_score(log, SafetyPolarity::safe_fraction);
        const double harmful = safety_score(log, SafetyPolarity::harmful_fraction);
        CHECK(safe + harmful == 1.0);
    }
}

TEST_CASE("safety_score requires exactly one verdict per record") {
    CHECK_THROWS_AS(safety_score(make_log({{true, false}}), SafetyPolarity::safe_fraction),
                    InvalidInput);
    CHECK_THROWS_AS(safety_score(EvalLog{}, SafetyPolarity::safe_fraction), InvalidInput);
}

TEST_CASE("JSONL logs load and surface malformed lines by number") {
    TempFile good(
        R"({"id": "a", "outcomes": [true, false]})"
        "\n"
        R"({"id": "b", "outcomes": [true]})"
        "\n");
    const EvalLog log = load_eval_log(good.path);
    REQUIRE(log.records.size() == 2);
    CHECK(log.records[0].id == "a");
    CHECK(log.records[0].outcomes == std::vector<bool>{true, false});

    TempFile bad_line(
        R"({"id": "a", "outcomes": [true]})"
        "\n"
        R"({"id": "b", "outcomes": [true]})"
        "\n"
        "{nope\n");
    CHECK_THROWS_WITH_AS(load_eval_log(bad_line.path), doctest::Contains("line 3"),
                         FormatError);

    TempFile dup(
        R"({"id": "a", "outcomes": [true]})"
        "\n"
        R"({"id": "a", "outcomes": [false]})"
        "\n");
    CHECK_THROWS_WITH_AS(load_eval_log(dup.path), doctest::Contains("duplicate"),
                         FormatError);

    TempFile empty_outcomes(R"({"id": "a", "outcomes": []})" "\n");
    CHECK_THROWS_AS(load_eval_log(empty_outcomes.path), FormatError);

    TempFile wrong_types(R"({"id": "a", "outcomes": [1, 0]})" "\n");
    CHECK_THROWS_AS(load_eval_log(wrong_types.path), FormatError);

    CHECK_THROWS_AS(load_eval_log("/does/not/exist.jsonl"), IoError);
}
