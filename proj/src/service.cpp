#include "guard/service.hpp"

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <httplib.h>

#include "guard/common.hpp"

namespace guard {
namespace {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (const unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::atomic<std::uint64_t> g_incident_counter{0};

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

nlohmann::json moderation_response(const Verdict& verdict, const std::string& model_id,
                                   const ServiceConfig& config) {
  nlohmann::json body{{"label", verdict.label},
                      {"category_scores", nlohmann::json::object()},
                      {"model_id", model_id},
                      {"latency_seconds", verdict.latency_seconds}};
  for (const auto& [category, score] : verdict.category_scores) {
    body["category_scores"][category] = score;
  }
  if (verdict.unsafe) body["refusal_message"] = config.refusal_template;
  return body;
}

std::string bundle_fingerprint(const std::string& bundle_dir) {
  std::ifstream in(bundle_dir + "/manifest.json", std::ios::binary);
  if (!in) throw InputError("cannot read bundle manifest in " + bundle_dir);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.str())));
  return buf;
}

ModerationService::ModerationService(GuardrailPipeline pipeline, ServiceConfig config,
                                     std::string fingerprint)
    : pipeline_(std::move(pipeline)),
      config_(std::move(config)),
      fingerprint_(std::move(fingerprint)),
      server_(std::make_unique<httplib::Server>()) {
  mount();
}

ModerationService::~ModerationService() = default;

void ModerationService::mount() {
  server_->set_payload_max_length(config_.max_text_bytes + (64 << 10));

  server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200,
              {{"status", "ok"},
               {"model_id", pipeline_.model_id()},
               {"topology", topology_name(pipeline_.topology())},
               {"bundle_fingerprint", fingerprint_}});
  });

  server_->Post("/v1/moderate", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json request;
    try {
      request = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      send_json(res, 400, {{"error", "request body is not valid JSON"}});
      return;
    }
    if (!request.is_object() || !request.contains("text") || !request.at("text").is_string()) {
      send_json(res, 400, {{"error", "request must be an object with a string 'text' field"}});
      return;
    }
    const std::string text = request.at("text").get<std::string>();
    if (text.size() > config_.max_text_bytes) {
      send_json(res, 413, {{"error", "text exceeds size limit"}});
      return;
    }
    try {
      const Verdict verdict = pipeline_.classify(text);
      nlohmann::json body = moderation_response(verdict, pipeline_.model_id(), config_);
      if (request.contains("request_id")) body["request_id"] = request.at("request_id");
      send_json(res, 200, body);
    } catch (const std::exception&) {
      char incident[40];
      std::snprintf(incident, sizeof(incident), "incident-%llu",
                    static_cast<unsigned long long>(++g_incident_counter));
      send_json(res, 500, {{"error", "internal error"}, {"incident", incident}});
    }
  });
}

bool ModerationService::listen(const std::string& host, int port) {
  return server_->listen(host, port);
}

int ModerationService::bind_any(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool ModerationService::serve_after_bind() { return server_->listen_after_bind(); }

void ModerationService::stop() { server_->stop(); }

FileSummary classify_file(const GuardrailPipeline& pipeline, const std::string& input_path,
                          const std::string& output_path, const ServiceConfig& config) {
  std::ifstream in(input_path, std::ios::binary);
  if (!in) throw InputError("cannot open input file: " + input_path);
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t line_no = prompts.size() + 1;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object() || !record.contains("text") || !record.at("text").is_string()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected {\"text\": str}");
    }
    std::string text = record.at("text").get<std::string>();
    if (text.size() > config.max_text_bytes) {
      throw InputError("text on line " + std::to_string(line_no) + " exceeds size limit");
    }
    prompts.push_back(std::move(text));
  }
  if (in.bad()) throw InputError("failed reading input file: " + input_path);

  std::ofstream out(output_path, std::ios::binary);
  if (!out) throw InputError("cannot open output file: " + output_path);

  FileSummary summary;
  for (const auto& prompt : prompts) {
    const Verdict verdict = pipeline.classify(prompt);
    out << moderation_response(verdict, pipeline.model_id(), config).dump() << '\n';
    ++summary.total;
    if (verdict.unsafe) {
      ++summary.unsafe_count;
    } else {
      ++summary.safe_count;
    }
  }
  if (!out) throw InputError("failed writing output file: " + output_path);
  return summary;
}

namespace {
ModerationService* g_service = nullptr;

void handle_signal(int) {
  if (g_service != nullptr) g_service->stop();
}
}  // namespace

int run_service(const std::string& bundle_dir, const std::string& host, int port,
                ServiceConfig config) {
  GuardrailPipeline pipeline = GuardrailPipeline::load_bundle(bundle_dir);
  const std::string fingerprint = bundle_fingerprint(bundle_dir);
  ModerationService service(std::move(pipeline), std::move(config), fingerprint);

  g_service = &service;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);

  std::printf("serving %s on %s:%d\n", service.pipeline().model_id().c_str(), host.c_str(), port);
  std::fflush(stdout);
  const bool ok = service.listen(host, port);
  g_service = nullptr;
  if (!ok) {
    std::fprintf(stderr, "failed to bind %s:%d\n", host.c_str(), port);
    return 1;
  }
  return 0;
}

}  // namespace guard
