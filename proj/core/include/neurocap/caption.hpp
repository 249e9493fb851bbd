#pragma once

#include "neurocap/dataset.hpp"
#include "neurocap/image.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace neurocap {

// Prompt sent to the vision-language captioner unless a prompt file overrides it.
inline constexpr std::string_view kDefaultCaptionPrompt =
    "Outline the main content of the image. Describe the color, shape, and size of an object. "
    "Use plain language to accurately describe key visual information.";
inline constexpr std::string_view kDefaultPromptId = "detail-enhance-v1";

// kDefaultPromptId for the built-in prompt, "fnv:<hash>" for any other.
std::string prompt_id_for(std::string_view prompt);

struct CaptionRecord {
  std::string stimulus_id;
  std::string original_caption;
  std::string enhanced_caption;
  std::string backend_id;
  std::string prompt_id;
  std::string status = "enhanced";  // "enhanced" | "failed"
  std::string error;                // set when status == "failed"

  bool operator==(const CaptionRecord&) const = default;
};

class CaptioningBackend {
 public:
  virtual ~CaptioningBackend() = default;
  virtual std::string describe(const Image& image, std::string_view prompt) = 0;
  virtual std::string id() const = 0;
  virtual bool concurrency_safe() const { return true; }
};

// Deterministic mock: returns the text registered for an image (keyed by
// pixel fingerprint), else the fallback text. Id "echo".
class FixtureCaptioningBackend : public CaptioningBackend {
 public:
  explicit FixtureCaptioningBackend(std::optional<std::string> fallback = std::nullopt);

  // Echoes each stimulus's original caption for its image.
  static std::unique_ptr<FixtureCaptioningBackend> from_manifest(const DatasetManifest& manifest);

  void add(const Image& image, std::string text);
  std::string describe(const Image& image, std::string_view prompt) override;
  std::string id() const override { return "echo"; }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::map<std::uint64_t, std::string> texts_;
  std::optional<std::string> fallback_;
  std::atomic<std::size_t> calls_{0};
};

// JSON-over-HTTP client. Request: POST <endpoint> with
//   {"prompt": str, "image_format": "ppm", "image_base64": str}
// and optional "Authorization: Bearer <token>". Response: {"text": str}.
class HttpCaptioningBackend : public CaptioningBackend {
 public:
  HttpCaptioningBackend(std::string endpoint, std::string token = {},
                        std::chrono::milliseconds timeout = std::chrono::seconds(60));

  // NEUROCAP_CAPTION_ENDPOINT (required) and NEUROCAP_CAPTION_TOKEN (optional).
  static std::unique_ptr<HttpCaptioningBackend> from_environment();

  std::string describe(const Image& image, std::string_view prompt) override;
  std::string id() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  std::string token_;
  std::chrono::milliseconds timeout_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

struct EnhanceOptions {
  RetryPolicy retry;
  std::size_t max_tokens = 77;
  // Defaults to count_tokens() when empty.
  std::function<std::size_t(std::string_view)> token_counter;
};

// Longest prefix ending at a sentence boundary that fits max_tokens; falls
// back to the first max_tokens word pieces when no sentence fits.
std::string truncate_to_sentence(std::string_view text, std::size_t max_tokens,
                                 const std::function<std::size_t(std::string_view)>& counter = {});

std::string enhance_caption(CaptioningBackend& backend, const Image& image, std::string_view prompt,
                            const EnhanceOptions& options = {});

struct CaptionStoreOptions {
  EnhanceOptions enhance;
  std::string prompt{kDefaultCaptionPrompt};
  std::size_t parallelism = 1;
  // Stop after this many new records (simulates an interrupted run).
  std::optional<std::size_t> max_new_records;
};

struct CaptionStoreSummary {
  std::size_t enhanced = 0;  // new enhanced records this run
  std::size_t failed = 0;    // new failure records this run
  std::size_t skipped = 0;   // already enhanced before this run
  bool torn_tail_repaired = false;
};

// One line-delimited JSON record per stimulus in the manifest index.
// Already-enhanced stimuli are skipped; failures are appended as "failed"
// records and retried by the next run.
CaptionStoreSummary build_caption_store(const DatasetManifest& manifest, CaptioningBackend& backend,
                                        const std::filesystem::path& store,
                                        const CaptionStoreOptions& options = {});

std::string caption_record_to_json(const CaptionRecord& record);
CaptionRecord caption_record_from_json(std::string_view line);

std::vector<CaptionRecord> read_caption_store(const std::filesystem::path& store);
// Last record per stimulus id.
std::map<std::string, CaptionRecord> latest_caption_records(const std::filesystem::path& store);

}  // namespace neurocap
