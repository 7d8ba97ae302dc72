#include <doctest.h>

#include "cli_driver.hpp"

namespace fs = std::filesystem;

TEST_CASE("no arguments exits 1 and --help lists the subcommands") {
  const auto dir = cli::fresh_workspace("dmr_cli_help");
  CHECK(cli::run(dir, "").exit_code == 1);
  const auto help = cli::run(dir, "--help");
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("ingest") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  const auto dir = cli::fresh_workspace("dmr_cli_usage");
  CHECK(cli::run(dir, "frobnicate").exit_code == 1);
  CHECK(cli::run(dir, "ingest --docs docs.jsonl").exit_code == 1);
  CHECK(cli::run(dir, "ingest --docs docs.jsonl --out p.jsonl --max-tokens 0").exit_code == 1);
}

TEST_CASE("data errors exit 2") {
  const auto dir = cli::fresh_workspace("dmr_cli_data");
  CHECK(cli::run(dir, "ingest --docs missing.jsonl --out p.jsonl").exit_code == 2);
  std::ofstream(dir / "bad.jsonl") << "{broken\n";
  CHECK(cli::run(dir, "ingest --docs bad.jsonl --out p.jsonl").exit_code == 2);
}

TEST_CASE("generation without an endpoint is a configuration error") {
  const auto dir = cli::fresh_workspace("dmr_cli_backend");
  REQUIRE(cli::run(dir, "ingest --docs docs.jsonl --out p.jsonl").exit_code == 0);
  ::unsetenv("DMR_GENERATOR_ENDPOINT");
  CHECK(cli::run(dir, "generate --passages p.jsonl --out pairs.jsonl").exit_code == 1);
}

TEST_CASE("gradcheck passes and reports each objective") {
  const auto dir = cli::fresh_workspace("dmr_cli_gradcheck");
  const auto r = cli::run(dir, "gradcheck --instances 2 --coordinates 10");
  CHECK(r.exit_code == 0);
  for (const char* op : {"inbatch", "hardneg", "mlm"}) CHECK(r.out.find(op) != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

TEST_CASE("every output carries a manifest with a config hash") {
  const auto dir = cli::fresh_workspace("dmr_cli_manifest");
  REQUIRE(cli::run(dir, "ingest --docs docs.jsonl --max-tokens 40 --out passages.jsonl").exit_code == 0);
  const auto m = nlohmann::json::parse(dmr::read_text(dir / "passages.jsonl.manifest.json"));
  CHECK(m["subcommand"] == "ingest");
  CHECK(m.contains("config_hash"));
  CHECK(m.contains("libraries"));
}

TEST_CASE("ingest and dedup re-runs are byte-identical") {
  const auto dir = cli::fresh_workspace("dmr_cli_repro");
  auto pass = [&] {
    REQUIRE(cli::run(dir, "ingest --docs docs.jsonl --max-tokens 40 --out passages.jsonl").exit_code == 0);
    REQUIRE(cli::run(dir, "dedup --passages passages.jsonl --method lsh --out d.jsonl --removals r.jsonl").exit_code == 0);
    return cli::hash_tree(dir);
  };
  const auto first = pass();
  CHECK(first == pass());
  CHECK(first.count("d.jsonl.manifest.json") == 1);
}
