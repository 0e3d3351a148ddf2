// Serves a scripted OpenAI-compatible API until interrupted.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "alignreplay/mock_server.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scripted OpenAI-compatible mock inference server"};
  int port = 8000;
  std::string fixture_path;
  app.add_option("--port", port, "Port on 127.0.0.1 (0 picks a free one)");
  app.add_option("--fixture", fixture_path, "JSON fixture describing canned behavior")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  nlohmann::json fixture = nlohmann::json::object();
  if (!fixture_path.empty()) {
    std::ifstream in(fixture_path);
    try {
      fixture = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      std::cerr << "fixture: " << e.what() << '\n';
      return 1;
    }
  }

  alignreplay::mock::MockServer server(alignreplay::mock::script_from_json(fixture));
  try {
    server.start(port);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  std::cout << server.base_url() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}
