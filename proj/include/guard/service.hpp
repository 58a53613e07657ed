#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "guard/pipeline.hpp"

namespace httplib {
class Server;
}

namespace guard {

struct ServiceConfig {
  std::size_t max_text_bytes = 64 * 1024;
  std::string refusal_template =
      "This request was flagged as potentially unsafe and will not be processed.";
};

// Response body shared by the HTTP handler and classify_file so both emit
// the same verdict fields for the same text.
nlohmann::json moderation_response(const Verdict& verdict, const std::string& model_id,
                                   const ServiceConfig& config);

// FNV-1a hash of the bundle manifest bytes, reported by the health endpoint.
std::string bundle_fingerprint(const std::string& bundle_dir);

class ModerationService {
 public:
  ModerationService(GuardrailPipeline pipeline, ServiceConfig config, std::string fingerprint);
  ~ModerationService();
  ModerationService(const ModerationService&) = delete;
  ModerationService& operator=(const ModerationService&) = delete;

  bool listen(const std::string& host, int port);  // blocking
  int bind_any(const std::string& host);           // returns the bound port
  bool serve_after_bind();                         // blocking
  void stop();

  const GuardrailPipeline& pipeline() const { return pipeline_; }

 private:
  void mount();

  GuardrailPipeline pipeline_;
  ServiceConfig config_;
  std::string fingerprint_;
  std::unique_ptr<httplib::Server> server_;
};

struct FileSummary {
  std::size_t total = 0;
  std::size_t safe_count = 0;
  std::size_t unsafe_count = 0;
};

// Reads one prompt per line, writes one JSON verdict per line. The whole
// input is read before any output is created.
FileSummary classify_file(const GuardrailPipeline& pipeline, const std::string& input_path,
                          const std::string& output_path, const ServiceConfig& config);

// Loads the bundle and serves until SIGINT/SIGTERM.
int run_service(const std::string& bundle_dir, const std::string& host, int port,
                ServiceConfig config);

}  // namespace guard
