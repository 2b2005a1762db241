#include <iostream>

#include "CLI11.hpp"
#include "mobman/commands.hpp"

namespace {

void add_common(CLI::App* app, mobman::CommonOptions& o, bool needs_scenario = true) {
  auto* s = app->add_option("--scenario", o.scenario, "scenario JSON file");
  if (needs_scenario) s->required();
  app->add_option("--map", o.map, "reference map file (.csv or .bin); built in memory when omitted");
  app->add_option("--seed", o.seed, "run seed; defaults to the scenario seed");
  app->add_option("--out", o.out, "output directory (map: output file)");
  app->add_option("--ticks", o.ticks, "tick budget");
  app->add_option("--config", o.config, "JSON merge-patch applied to the scenario");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mobman: planar mobile-manipulator simulator and autonomy stack"};
  app.set_version_flag("--version", mobman::kVersion);
  app.require_subcommand(1);

  mobman::CommonOptions opt;
  mobman::ServeOptions serve;
  std::string link = "wired";
  std::string log_path;
  bool paired = false;

  auto* map = app.add_subcommand("map", "build a reference map from a mapping pass");
  add_common(map, opt);
  auto* nav = app.add_subcommand("navigate", "run the scenario route closed-loop");
  add_common(nav, opt);
  nav->add_flag("--paired-occlusion", paired, "also run with the rear occlusion toggled and report the error ratio");
  auto* align = app.add_subcommand("align", "run panel alignment from a seeded start pose");
  add_common(align, opt);
  auto* srv = app.add_subcommand("serve", "host the simulation behind the socket protocol");
  add_common(srv, opt);
  srv->add_option("--port", serve.port, "TCP port (0 picks a free one)");
  srv->add_option("--tick-hz", serve.tick_hz, "wall-clock tick rate");
  srv->add_option("--wireless-loss-threshold", serve.link.loss_threshold_bytes, "bytes above which wireless may drop");
  srv->add_option("--wireless-loss-prob", serve.link.loss_prob, "drop probability for oversized envelopes");
  srv->add_option("--link", link, "wired | wireless")->check(CLI::IsMember({"wired", "wireless"}));
  srv->add_option("--record", serve.record, "write a replayable session log");
  srv->add_option("--script", serve.script, "JSON lines of timed commands");
  srv->add_flag("--headless", serve.headless, "no sockets, no pacing; needs --ticks");
  auto* rep = app.add_subcommand("replay", "re-run a recorded session and recompute metrics");
  add_common(rep, opt);
  rep->add_option("--log", log_path, "session log written by serve --record")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(mobman::ExitCode::kValidation);
  }

  try {
    if (*map) return mobman::cmd_map(opt);
    if (*nav) return mobman::cmd_navigate(opt, paired);
    if (*align) return mobman::cmd_align(opt);
    if (*srv) {
      serve.link.mode = mobman::parse_link_mode(link);
      return mobman::cmd_serve(opt, serve);
    }
    if (*rep) return mobman::cmd_replay(opt, log_path);
  } catch (const mobman::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(mobman::ExitCode::kRuntime);
  }
  return 0;
}
