#include "alnmt/annotation_service.hpp"

#include <algorithm>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace alnmt::service {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void AnnotationQueue::serve(const active::OracleRequest& request, const active::OracleSink& sink,
                            std::optional<std::chrono::milliseconds> timeout) {
  std::unique_lock lock(mu_);
  if (sink_ != nullptr) throw std::logic_error("annotation queue is already serving a batch");
  if (aborted_) throw active::OracleAborted("annotation service stopped");
  tasks_.clear();
  for (const auto& item : request.items) {
    Task t;
    t.item = item;
    tasks_.push_back(std::move(t));
  }
  sink_ = &sink;
  auto done = [&] {
    return aborted_ || std::all_of(tasks_.begin(), tasks_.end(), [](const Task& t) { return t.resolved; });
  };
  bool finished;
  if (timeout) {
    finished = cv_.wait_for(lock, *timeout, done);
  } else {
    cv_.wait(lock, done);
    finished = true;
  }
  const bool aborted = aborted_;
  sink_ = nullptr;
  tasks_.clear();
  if (aborted) throw active::OracleAborted("annotation service stopped during a batch");
  if (!finished) throw active::OracleAborted("timed out waiting for annotations");
}

std::optional<LeaseGrant> AnnotationQueue::next(const std::string& annotator) {
  std::lock_guard lock(mu_);
  if (sink_ == nullptr) return std::nullopt;
  const auto now = std::chrono::steady_clock::now();
  for (auto& t : tasks_) {
    if (t.resolved) continue;
    if (!t.lease_id.empty() && t.expiry > now) continue;
    t.lease_id = "lease-" + std::to_string(++lease_counter_) + "-" + std::to_string(t.item.id);
    t.annotator = annotator;
    t.expiry = now + lease_;
    return LeaseGrant{t.lease_id, t.item.id, t.item.source, t.item.hypothesis, t.item.score};
  }
  return std::nullopt;
}

AnnotationQueue::Task* AnnotationQueue::find_leased(const std::string& lease_id, std::int64_t sentence_id) {
  const auto now = std::chrono::steady_clock::now();
  for (auto& t : tasks_) {
    if (t.item.id == sentence_id && !t.resolved && t.lease_id == lease_id && t.expiry > now) return &t;
  }
  return nullptr;
}

Outcome AnnotationQueue::submit(const std::string& lease_id, std::int64_t sentence_id, const std::string& target,
                                std::string* error) {
  std::lock_guard lock(mu_);
  if (sink_ == nullptr) return Outcome::no_batch;
  Task* t = find_leased(lease_id, sentence_id);
  if (t == nullptr) return Outcome::stale_lease;
  const std::string text = trim(target);
  if (text.empty()) {
    if (error) *error = "target_text is empty";
    return Outcome::invalid;
  }
  try {
    sink_->label({sentence_id, text, t->annotator});
  } catch (const std::invalid_argument& e) {
    if (error) *error = e.what();
    return Outcome::invalid;
  }
  t->resolved = true;
  cv_.notify_all();
  return Outcome::ack;
}

Outcome AnnotationQueue::skip(const std::string& lease_id, std::int64_t sentence_id, std::string* error) {
  std::lock_guard lock(mu_);
  if (sink_ == nullptr) return Outcome::no_batch;
  Task* t = find_leased(lease_id, sentence_id);
  if (t == nullptr) return Outcome::stale_lease;
  std::optional<active::OracleItem> replacement;
  try {
    replacement = sink_->skip(sentence_id, t->annotator);
  } catch (const std::exception& e) {
    if (error) *error = e.what();
    return Outcome::invalid;
  }
  t->resolved = true;
  if (replacement) {
    Task next;
    next.item = std::move(*replacement);
    tasks_.push_back(std::move(next));
  }
  cv_.notify_all();
  return Outcome::ack;
}

void AnnotationQueue::abort() {
  std::lock_guard lock(mu_);
  aborted_ = true;
  cv_.notify_all();
}

std::size_t AnnotationQueue::pending() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(tasks_.begin(), tasks_.end(), [](const Task& t) { return !t.resolved; }));
}

struct HttpServer::Impl {
  httplib::Server server;
  std::thread thread;
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_outcome(httplib::Response& res, Outcome o, const std::string& error) {
  switch (o) {
    case Outcome::ack:
      reply(res, 200, {{"status", "ack"}});
      return;
    case Outcome::stale_lease:
      reply(res, 409, {{"error", "stale-lease"}});
      return;
    case Outcome::invalid:
      reply(res, 422, {{"error", "invalid"}, {"detail", error}});
      return;
    case Outcome::no_batch:
      reply(res, 409, {{"error", "no-active-batch"}});
      return;
  }
}

/// Parses {lease_id, sentence_id, ...}; nullopt on malformed input.
std::optional<json> parse_body(const httplib::Request& req, bool needs_target) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) return std::nullopt;
  if (!body.contains("lease_id") || !body["lease_id"].is_string()) return std::nullopt;
  if (!body.contains("sentence_id") || !body["sentence_id"].is_number_integer()) return std::nullopt;
  if (needs_target && (!body.contains("target_text") || !body["target_text"].is_string())) return std::nullopt;
  return body;
}

}  // namespace

HttpServer::HttpServer(AnnotationQueue& queue, StatusFn status, ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  auto& svr = impl_->server;
  svr.Get("/api/run/status", [status](const httplib::Request&, httplib::Response& res) {
    const active::Status s = status();
    reply(res, 200,
          {{"iteration", s.iteration},
           {"pending_count", s.pending_count},
           {"labeled_count", s.labeled_count},
           {"pool_count", s.pool_count},
           {"strategy", s.strategy}});
  });
  svr.Get("/api/batch/next", [&queue](const httplib::Request& req, httplib::Response& res) {
    const std::string annotator = req.get_param_value("annotator");
    if (annotator.empty()) {
      reply(res, 400, {{"error", "annotator parameter required"}});
      return;
    }
    auto grant = queue.next(annotator);
    if (!grant) {
      reply(res, 200, {{"idle", true}});
      return;
    }
    reply(res, 200,
          {{"lease_id", grant->lease_id},
           {"sentence_id", grant->sentence_id},
           {"source_text", grant->source_text},
           {"model_best_hypothesis", grant->hypothesis},
           {"score", grant->score}});
  });
  svr.Post("/api/batch/submit", [&queue](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, true);
    if (!body) {
      reply(res, 400, {{"error", "expected {lease_id, sentence_id, target_text}"}});
      return;
    }
    std::string error;
    const Outcome o = queue.submit((*body)["lease_id"], (*body)["sentence_id"], (*body)["target_text"], &error);
    reply_outcome(res, o, error);
  });
  svr.Post("/api/batch/skip", [&queue](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req, false);
    if (!body) {
      reply(res, 400, {{"error", "expected {lease_id, sentence_id}"}});
      return;
    }
    std::string error;
    const Outcome o = queue.skip((*body)["lease_id"], (*body)["sentence_id"], &error);
    reply_outcome(res, o, error);
  });
  options_host_ = options.host;
  options_port_ = options.port;
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start() {
  auto& svr = impl_->server;
  if (options_port_ == 0) {
    port_ = svr.bind_to_any_port(options_host_);
  } else {
    port_ = svr.bind_to_port(options_host_, options_port_) ? options_port_ : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind annotation service on " + options_host_);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace alnmt::service
