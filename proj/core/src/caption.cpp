#include "neurocap/caption.hpp"

#include "neurocap/error.hpp"
#include "neurocap/text_util.hpp"
#include "neurocap/tokenizer.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <mutex>
#include <thread>

namespace neurocap {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string prompt_id_for(std::string_view prompt) {
  if (prompt == kDefaultCaptionPrompt) return std::string(kDefaultPromptId);
  return "fnv:" + hex64(fnv1a64(prompt));
}

FixtureCaptioningBackend::FixtureCaptioningBackend(std::optional<std::string> fallback)
    : fallback_(std::move(fallback)) {}

std::unique_ptr<FixtureCaptioningBackend> FixtureCaptioningBackend::from_manifest(
    const DatasetManifest& manifest) {
  auto backend = std::make_unique<FixtureCaptioningBackend>();
  for (const auto& [id, entry] : manifest.stimuli) {
    backend->add(read_image(entry.image_file), manifest.original_caption(id));
  }
  return backend;
}

void FixtureCaptioningBackend::add(const Image& image, std::string text) {
  texts_[image_fingerprint(image)] = std::move(text);
}

std::string FixtureCaptioningBackend::describe(const Image& image, std::string_view) {
  ++calls_;
  if (auto it = texts_.find(image_fingerprint(image)); it != texts_.end()) return it->second;
  if (fallback_) return *fallback_;
  throw BackendError("echo backend: no fixture text for image " + hex64(image_fingerprint(image)));
}

HttpCaptioningBackend::HttpCaptioningBackend(std::string endpoint, std::string token,
                                             std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), token_(std::move(token)), timeout_(timeout) {
  if (endpoint_.rfind("http://", 0) != 0 && endpoint_.rfind("https://", 0) != 0) {
    throw ConfigError("caption endpoint must start with http:// or https://: " + endpoint_);
  }
}

std::unique_ptr<HttpCaptioningBackend> HttpCaptioningBackend::from_environment() {
  const char* endpoint = std::getenv("NEUROCAP_CAPTION_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') {
    throw ConfigError("NEUROCAP_CAPTION_ENDPOINT is not set");
  }
  const char* token = std::getenv("NEUROCAP_CAPTION_TOKEN");
  return std::make_unique<HttpCaptioningBackend>(endpoint, token ? token : "");
}

std::string HttpCaptioningBackend::describe(const Image& image, std::string_view prompt) {
  const auto scheme_end = endpoint_.find("://") + 3;
  const auto path_start = endpoint_.find('/', scheme_end);
  const std::string base = endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/describe" : endpoint_.substr(path_start);

  httplib::Client client(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  const json body = {{"prompt", std::string(prompt)},
                     {"image_format", "ppm"},
                     {"image_base64", base64_encode(encode_ppm(image))}};
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw BackendError("caption service " + endpoint_ + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("caption service " + endpoint_ + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body).at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError("caption service " + endpoint_ + ": malformed response: " + e.what());
  }
}

std::string truncate_to_sentence(std::string_view text, std::size_t max_tokens,
                                 const std::function<std::size_t(std::string_view)>& counter) {
  const std::function<std::size_t(std::string_view)> count =
      counter ? counter : [](std::string_view t) { return count_tokens(t); };
  const std::string trimmed = trim(text);
  if (count(trimmed) <= max_tokens) return trimmed;

  std::string best;
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    const char c = trimmed[i];
    const bool boundary = (c == '.' || c == '!' || c == '?') &&
                          (i + 1 == trimmed.size() || std::isspace(static_cast<unsigned char>(trimmed[i + 1])));
    if (!boundary) continue;
    std::string prefix = trimmed.substr(0, i + 1);
    if (count(prefix) > max_tokens) break;
    best = std::move(prefix);
  }
  if (!best.empty()) return best;

  // No complete sentence fits: cut at the last whitespace that keeps us in budget.
  std::size_t cut = 0;
  for (std::size_t i = 0; i <= trimmed.size(); ++i) {
    if (i == trimmed.size() || std::isspace(static_cast<unsigned char>(trimmed[i]))) {
      if (count(std::string_view(trimmed).substr(0, i)) > max_tokens) break;
      cut = i;
    }
  }
  return trim(std::string_view(trimmed).substr(0, cut));
}

std::string enhance_caption(CaptioningBackend& backend, const Image& image, std::string_view prompt,
                            const EnhanceOptions& options) {
  if (trim(prompt).empty()) throw ConfigError("caption prompt must be nonempty");
  if (image.empty() || image.width <= 0 || image.height <= 0) {
    throw DataError("enhance_caption: image is empty or undecodable");
  }
  const int attempts = std::max(1, options.retry.max_attempts);
  auto backoff = options.retry.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      const std::string text = backend.describe(image, prompt);
      return truncate_to_sentence(text, options.max_tokens, options.token_counter);
    } catch (const BackendError& e) {
      last_error = e.what();
    }
    if (attempt < attempts && backoff.count() > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * options.retry.multiplier));
    }
  }
  throw BackendError("backend '" + backend.id() + "' failed after " + std::to_string(attempts) +
                     " attempts: " + last_error);
}

std::string caption_record_to_json(const CaptionRecord& r) {
  json j = {{"stimulus_id", r.stimulus_id},
            {"original_caption", r.original_caption},
            {"enhanced_caption", r.enhanced_caption},
            {"backend_id", r.backend_id},
            {"prompt_id", r.prompt_id},
            {"status", r.status}};
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

CaptionRecord caption_record_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    CaptionRecord r;
    r.stimulus_id = j.at("stimulus_id").get<std::string>();
    r.original_caption = j.at("original_caption").get<std::string>();
    r.enhanced_caption = j.at("enhanced_caption").get<std::string>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", std::string());
    if (r.status != "enhanced" && r.status != "failed") {
      throw DataError("caption record has unknown status '" + r.status + "'");
    }
    if (r.status == "enhanced" && r.enhanced_caption.empty()) {
      throw DataError("caption record for '" + r.stimulus_id + "' is enhanced but empty");
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed caption record: ") + e.what());
  }
}

std::vector<CaptionRecord> read_caption_store(const fs::path& store) {
  std::vector<CaptionRecord> out;
  if (!fs::exists(store)) return out;
  std::ifstream in(store);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(caption_record_from_json(line));
    } catch (const DataError& e) {
      throw DataError(store.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, CaptionRecord> latest_caption_records(const fs::path& store) {
  std::map<std::string, CaptionRecord> out;
  for (auto& r : read_caption_store(store)) out[r.stimulus_id] = std::move(r);
  return out;
}

namespace {

// A crash mid-append leaves a final line without its newline. Complete JSON
// gets its newline back; anything else is cut off.
bool repair_torn_tail(const fs::path& store) {
  if (!fs::exists(store)) return false;
  const std::string data = read_text_file(store);
  if (data.empty() || data.back() == '\n') return false;
  const auto last_nl = data.rfind('\n');
  const std::size_t start = last_nl == std::string::npos ? 0 : last_nl + 1;
  bool complete = true;
  try {
    caption_record_from_json(std::string_view(data).substr(start));
  } catch (const DataError&) {
    complete = false;
  }
  if (complete) {
    std::ofstream(store, std::ios::app) << '\n';
  } else {
    fs::resize_file(store, start);
  }
  return true;
}

}  // namespace

CaptionStoreSummary build_caption_store(const DatasetManifest& manifest, CaptioningBackend& backend,
                                        const fs::path& store, const CaptionStoreOptions& options) {
  CaptionStoreSummary summary;
  if (store.has_parent_path()) fs::create_directories(store.parent_path());
  summary.torn_tail_repaired = repair_torn_tail(store);
  const auto existing = latest_caption_records(store);
  const std::string prompt_id = prompt_id_for(options.prompt);

  std::vector<std::string> pending;
  for (const auto& [id, entry] : manifest.stimuli) {
    auto it = existing.find(id);
    if (it != existing.end() && it->second.status == "enhanced") {
      ++summary.skipped;
      continue;
    }
    pending.push_back(id);
  }
  if (options.max_new_records && pending.size() > *options.max_new_records) {
    pending.resize(*options.max_new_records);
  }

  auto process = [&](const std::string& id) {
    CaptionRecord r;
    r.stimulus_id = id;
    r.original_caption = manifest.original_caption(id);
    r.backend_id = backend.id();
    r.prompt_id = prompt_id;
    try {
      const Image image = read_image(manifest.image_path(id));
      r.enhanced_caption = enhance_caption(backend, image, options.prompt, options.enhance);
      if (r.enhanced_caption.empty()) throw BackendError("backend returned an empty caption");
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kBackend && e.kind() != ErrorKind::kData) throw;
      r.status = "failed";
      r.enhanced_caption.clear();
      r.error = e.what();
    }
    return r;
  };

  std::ofstream out(store, std::ios::app);
  if (!out) throw DataError("cannot append to caption store " + store.string());
  const std::size_t width = backend.concurrency_safe() ? std::max<std::size_t>(1, options.parallelism) : 1;
  for (std::size_t start = 0; start < pending.size(); start += width) {
    const std::size_t end = std::min(pending.size(), start + width);
    std::vector<std::future<CaptionRecord>> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(std::async(width > 1 ? std::launch::async : std::launch::deferred,
                                 [&, i] { return process(pending[i]); }));
    }
    // Appends happen here, one at a time, in stimulus order.
    for (auto& f : batch) {
      const CaptionRecord r = f.get();
      out << caption_record_to_json(r) << '\n';
      out.flush();
      if (r.status == "enhanced") ++summary.enhanced;
      else ++summary.failed;
    }
  }
  return summary;
}

}  // namespace neurocap
