#include <doctest.h>

#include <fstream>
#include <sstream>

#include "telecg/cli.hpp"
#include "telecg/http_server.hpp"
#include "telecg/ingest.hpp"
#include "telecg/store.hpp"
#include "../support/temp_dir.hpp"

using namespace telecg;
using telecg::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
};

Result telecg_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run(args, out);
  return {code, out.str()};
}

struct LiveServer {
  TempDir dir{"cli"};
  std::unique_ptr<IngestService> svc;
  std::unique_ptr<HttpServer> http;
  std::string url;

  LiveServer() {
    ServiceConfig sc;
    sc.data_dir = dir.path();
    svc = std::make_unique<IngestService>(sc);
    HttpServerConfig hc;
    hc.port = 0;
    hc.worker_threads = 32;
    http = std::make_unique<HttpServer>(*svc, hc);
    http->start();
    url = http->base_url();
  }
  ~LiveServer() {
    http->stop();
    svc->shutdown();
  }
};

std::string only_session(const Json& report) {
  REQUIRE(report.at("session_ids").size() == 1);
  return report.at("session_ids")[0].get<std::string>();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(telecg_cli({"simulate", "--no-such-flag"}).code == 2);
    CHECK(telecg_cli({"simulate", "--hr", "500"}).code == 2);
    CHECK(telecg_cli({"simulate", "--mains-hz", "55"}).code == 2);
    CHECK(telecg_cli({"simulate", "--lead-off", "3:2:plus"}).code == 2);
    CHECK(telecg_cli({"simulate", "--lead-off", "1:2:sideways"}).code == 2);
    CHECK(telecg_cli({"frobnicate"}).code == 2);
    CHECK(telecg_cli({}).code == 2);
  }

  TEST_CASE("help and version exit 0") {
    const auto help = telecg_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("simulate") != std::string::npos);
    CHECK(telecg_cli({"simulate", "--help"}).code == 0);
    CHECK(telecg_cli({"--version"}).code == 0);
  }

  TEST_CASE("simulate sends every sample and reports json") {
    LiveServer s;
    const auto r = telecg_cli({"simulate", "--server", s.url, "--duration", "10", "--seed", "4"});
    CHECK(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j.at("samples_sent") == 2500);
    CHECK(j.at("batches_sent") == 50);
    CHECK(j.at("batches_dropped") == 0);
    const auto q = s.svc->query_range(only_session(j), 0, UINT64_MAX);
    CHECK(q.read.samples.size() == 2500);
  }

  TEST_CASE("lead-off option produces exactly one alert of that kind") {
    LiveServer s;
    const auto r = telecg_cli({"simulate", "--server", s.url, "--duration", "6", "--lead-off", "2:3:plus"});
    REQUIRE(r.code == 0);
    const auto alerts = s.svc->alerts(only_session(Json::parse(r.out)));
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].kind == AlertKind::LeadOffPlus);
    CHECK(alerts[0].end_ts_us);
  }

  TEST_CASE("unreachable server exits 1") {
    const auto r = telecg_cli({"simulate", "--server", "http://127.0.0.1:1", "--duration", "0.2", "--give-up-ms", "0"});
    CHECK(r.code == 1);
  }

  TEST_CASE("export of an empty session prints nothing") {
    LiveServer s;
    s.svc->upsert_patient({"p1", "p1", 0});
    const auto session = s.svc->create_session("dev", "p1", 250, AdcConfig{});
    auto r = telecg_cli({"export", "--server", s.url, session.session_id});
    CHECK(r.code == 0);
    CHECK(r.out.empty());
    r = telecg_cli({"export", "--data", s.dir.path().string(), session.session_id});
    CHECK(r.code == 0);
    CHECK(r.out.empty());
  }

  TEST_CASE("export of an unknown session exits 1") {
    LiveServer s;
    CHECK(telecg_cli({"export", "--server", s.url, "missing"}).code == 1);
    CHECK(telecg_cli({"export", "--data", s.dir.path().string(), "missing"}).code == 1);
  }

  TEST_CASE("export, replay, export is the identity") {
    LiveServer s;
    const auto sim = telecg_cli({"simulate", "--server", s.url, "--duration", "5", "--lead-off", "1:1.5:minus"});
    REQUIRE(sim.code == 0);
    const auto first = telecg_cli({"export", "--server", s.url, only_session(Json::parse(sim.out))});
    REQUIRE(first.code == 0);
    CHECK(std::count(first.out.begin(), first.out.end(), '\n') == 1250);

    TempDir tmp("cli-export");
    const auto text = (tmp / "first.txt").string();
    std::ofstream(text) << first.out;
    const auto rep = telecg_cli({"replay", text, "--server", s.url, "--device-id", "replayer"});
    REQUIRE(rep.code == 0);
    const auto second = telecg_cli({"export", "--server", s.url, only_session(Json::parse(rep.out))});
    REQUIRE(second.code == 0);
    CHECK(second.out == first.out);

    // the same through the stored segment file
    const auto seg = segment_path(s.dir.path(), only_session(Json::parse(sim.out)));
    const auto rep2 = telecg_cli({"replay", seg.string(), "--server", s.url});
    REQUIRE(rep2.code == 0);
    const auto third = telecg_cli({"export", "--data", s.dir.path().string(), only_session(Json::parse(rep2.out))});
    CHECK(third.out == first.out);
  }

  TEST_CASE("replay of a corrupt segment sends the valid prefix and exits 1") {
    LiveServer s;
    const auto sim = telecg_cli({"simulate", "--server", s.url, "--duration", "2"});
    REQUIRE(sim.code == 0);
    const auto sid = only_session(Json::parse(sim.out));
    s.svc->close_session(sid);
    TempDir tmp("cli-corrupt");
    const auto copy = tmp / "copy.tecg";
    std::filesystem::copy_file(segment_path(s.dir.path(), sid), copy);
    std::filesystem::resize_file(copy, std::filesystem::file_size(copy) - 20);
    const auto rep = telecg_cli({"replay", copy.string(), "--server", s.url});
    CHECK(rep.code == 1);
    CHECK(Json::parse(rep.out).at("replayed_samples") == 450);
  }

  TEST_CASE("replay of a missing file exits 1") {
    CHECK(telecg_cli({"replay", "/nonexistent/x.tecg"}).code == 1);
  }

  TEST_CASE("fleet of 10 devices") {
    LiveServer s;
    const auto r = telecg_cli({"simulate", "--server", s.url, "--duration", "3", "--fleet", "10", "--device-id", "bed"});
    CHECK(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j.at("totals").at("devices") == 10);
    CHECK(j.at("totals").at("samples_sent") == 7500);
    CHECK(j.at("totals").at("ok") == true);
    CHECK(s.svc->list_sessions("").size() == 10);
    CHECK(j.at("devices")[9].at("device_id") == "bed-9");
  }
}
