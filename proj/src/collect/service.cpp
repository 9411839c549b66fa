#include <algorithm>
#include <cstdio>
#include <random>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "pmk/collect.hpp"
#include "pmk/error.hpp"
#include "pmk/imagecore.hpp"

namespace pmk::collect {

namespace {

using ojson = nlohmann::ordered_json;

constexpr int kJndDisplayMs = 1000;
constexpr int kJndGapMs = 250;
constexpr const char* kImmutable = "public, max-age=31536000, immutable";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::config:
    case ErrorKind::decode:
    case ErrorKind::range: return 400;
    default: return 500;
  }
}

Response json_response(const ojson& j, int status = 200) { return Response{status, j.dump(), "application/json", {}}; }

ojson parse_body(const std::string& body) {
  try {
    auto j = ojson::parse(body);
    if (!j.is_object()) throw Error(ErrorKind::decode, "request body must be a JSON object");
    return j;
  } catch (const ojson::exception& e) {
    throw Error(ErrorKind::decode, std::string("bad JSON body: ") + e.what());
  }
}

template <typename T>
T field(const ojson& j, const char* name) {
  if (!j.contains(name)) throw Error(ErrorKind::decode, std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const ojson::exception&) {
    throw Error(ErrorKind::decode, std::string("field '") + name + "' has the wrong type");
  }
}

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
};

struct Session {
  std::string id;
  std::string kind;  // "2afc" or "jnd"
  std::vector<std::string> plan;
  std::size_t cursor = 0;
  std::map<std::string, int> answers;
  Tally sentinels;
  Tally identical;  // JND only
  Tally noise;
  std::size_t suspect = 0;
  std::chrono::steady_clock::time_point last_active;
  bool ended = false;
  bool expired = false;

  bool done() const { return cursor == plan.size(); }
};

const char* index_page =
    "<!doctype html><title>pmk collect</title><p>Collection service. API: POST /api/session, GET /api/item, "
    "POST /api/answer, GET /api/session/{id}/summary.</p>\n";

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  Clock clock;
  VoteLog log;
  mutable std::mutex mutex;

  std::vector<JudgmentTriplet> triplets;
  std::map<std::string, std::size_t> triplet_at;
  std::vector<JndPair> pairs;
  std::map<std::string, std::size_t> pair_at;
  std::map<std::string, std::size_t> vote_counts;  // answers taken since startup

  std::map<std::string, Session> sessions;
  std::uint64_t token_key;
  std::uint64_t session_counter = 0;
  std::size_t accepted = 0;

  std::map<std::string, std::string> image_by_hash;  // "<hash>.png" -> relative path
  std::map<std::string, std::string> hash_by_path;

  Impl(ServiceConfig c, Clock k) : cfg(std::move(c)), clock(std::move(k)), log(vote_log_path(cfg.root)) {
    if (std::filesystem::exists(triplet_index_path(cfg.root))) {
      triplets = load_2afc_dataset(cfg.root);
      for (std::size_t i = 0; i < triplets.size(); ++i) triplet_at[triplets[i].id] = i;
    }
    if (std::filesystem::exists(jnd_index_path(cfg.root))) {
      pairs = load_jnd_dataset(cfg.root);
      for (std::size_t i = 0; i < pairs.size(); ++i) pair_at[pairs[i].id] = i;
    }
    std::random_device rd;
    token_key = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  std::string image_url(const std::string& rel) {
    auto it = hash_by_path.find(rel);
    if (it == hash_by_path.end()) {
      const auto name = hex64(fnv1a(read_file(cfg.root / rel))) + ".png";
      image_by_hash[name] = rel;
      it = hash_by_path.emplace(rel, name).first;
    }
    return "/img/" + it->second;
  }

  void finish(Session& s, bool complete) {
    s.ended = true;
    s.expired = !complete;
    log.append(SessionOutcome{s.id, s.kind, s.answers.size(), s.sentinels.correct, s.sentinels.total, complete,
                              complete && sentinel_pass(s.sentinels.correct, s.sentinels.total)});
  }

  std::size_t expire_idle() {
    const auto now = clock();
    std::size_t n = 0;
    for (auto& [id, s] : sessions) {
      if (s.ended || now - s.last_active <= cfg.idle_timeout) continue;
      finish(s, false);
      ++n;
    }
    return n;
  }

  Session& live_session(const std::string& id) {
    auto it = sessions.find(id);
    if (it == sessions.end() || it->second.expired) throw Error(ErrorKind::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  Response create_session(const std::string& body) {
    const auto j = parse_body(body);
    const auto kind = field<std::string>(j, "kind");
    Session s;
    s.kind = kind;
    const std::uint64_t plan_seed = Rng(cfg.seed, session_counter).next_u64();
    if (kind == "2afc") {
      if (triplets.empty()) throw Error(ErrorKind::config, "dataset has no 2AFC index");
      s.plan = make_2afc_session(triplets, vote_counts, plan_seed, cfg.two_afc);
      for (const auto& id : s.plan) s.sentinels.total += triplets[triplet_at.at(id)].is_sentinel;
    } else if (kind == "jnd") {
      if (pairs.empty()) throw Error(ErrorKind::config, "dataset has no JND pairs");
      s.plan = make_jnd_session(pairs, plan_seed, cfg.jnd);
      for (const auto& id : s.plan) {
        const auto role = pairs[pair_at.at(id)].role;
        s.identical.total += role == JndRole::sentinel_identical;
        s.noise.total += role == JndRole::sentinel_noise;
      }
      s.sentinels.total = s.identical.total + s.noise.total;
    } else {
      throw Error(ErrorKind::config, "unknown session kind '" + kind + "' (2afc, jnd)");
    }
    s.id = hex64(Rng(token_key, session_counter).next_u64());
    ++session_counter;
    s.last_active = clock();
    ojson out;
    out["session_id"] = s.id;
    out["kind"] = s.kind;
    out["plan_length"] = s.plan.size();
    sessions.emplace(s.id, std::move(s));
    return json_response(out);
  }

  Response current_item(const std::map<std::string, std::string>& query) {
    const auto q = query.find("session");
    if (q == query.end()) throw Error(ErrorKind::decode, "missing session parameter");
    auto& s = live_session(q->second);
    s.last_active = clock();
    ojson out;
    if (s.done()) {
      out["done"] = true;
      return json_response(out);
    }
    const auto& id = s.plan[s.cursor];
    out["id"] = id;
    out["position"] = s.cursor;
    out["plan_length"] = s.plan.size();
    if (s.kind == "2afc") {
      const auto& t = triplets[triplet_at.at(id)];
      out["ref_url"] = image_url(t.ref_path);
      out["p0_url"] = image_url(t.p0_path);
      out["p1_url"] = image_url(t.p1_path);
    } else {
      const auto& p = pairs[pair_at.at(id)];
      out["ref_url"] = image_url(p.ref_path);
      out["probe_url"] = image_url(p.probe_path);
      out["display_ms"] = kJndDisplayMs;
      out["gap_ms"] = kJndGapMs;
    }
    return json_response(out);
  }

  Response answer(const std::string& body) {
    const auto j = parse_body(body);
    auto& s = live_session(field<std::string>(j, "session"));
    const auto id = field<std::string>(j, "id");
    s.last_active = clock();

    ojson out;
    if (s.answers.count(id)) {
      out["accepted"] = true;
      out["duplicate"] = true;
      out["next_available"] = !s.done();
      return json_response(out);
    }
    if (s.done() || s.plan[s.cursor] != id) throw Error(ErrorKind::conflict, "item '" + id + "' is not the current item");

    int value = 0;
    if (s.kind == "2afc") {
      value = field<int>(j, "choice");
      if (value != 0 && value != 1) throw Error(ErrorKind::range, "choice must be 0 or 1");
    } else {
      value = field<bool>(j, "same") ? 1 : 0;
    }
    const double latency = j.contains("latency_ms") ? field<double>(j, "latency_ms") : 0.0;
    if (!(latency >= 0.0)) throw Error(ErrorKind::range, "latency_ms must be >= 0");
    const bool suspect = latency < cfg.suspect_latency_ms;

    if (s.kind == "2afc") {
      const auto& t = triplets[triplet_at.at(id)];
      if (t.is_sentinel) s.sentinels.correct += t.correct && *t.correct == value;
      else ++vote_counts[id];
    } else {
      const auto role = pairs[pair_at.at(id)].role;
      if (role == JndRole::sentinel_identical && value == 1) ++s.identical.correct;
      if (role == JndRole::sentinel_noise && value == 0) ++s.noise.correct;
      s.sentinels.correct = s.identical.correct + s.noise.correct;
    }

    log.append(VoteEntry{s.id, id, value, latency, suspect});
    s.answers[id] = value;
    s.suspect += suspect;
    ++s.cursor;
    ++accepted;
    if (s.done()) finish(s, true);

    out["accepted"] = true;
    out["duplicate"] = false;
    out["next_available"] = !s.done();
    return json_response(out);
  }

  Response summary(const std::string& id) {
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorKind::not_found, "unknown session '" + id + "'");
    const auto& s = it->second;
    ojson out;
    out["session_id"] = s.id;
    out["kind"] = s.kind;
    out["done"] = s.done();
    out["expired"] = s.expired;
    out["answered"] = s.answers.size();
    out["plan_length"] = s.plan.size();
    out["sentinel_correct"] = s.sentinels.correct;
    out["sentinel_total"] = s.sentinels.total;
    out["passed"] = sentinel_pass(s.sentinels.correct, s.sentinels.total);
    out["suspect"] = s.suspect;
    if (s.kind == "jnd") {
      out["identical"] = {{"correct", s.identical.correct}, {"total", s.identical.total}};
      out["noise"] = {{"correct", s.noise.correct}, {"total", s.noise.total}};
    }
    return json_response(out);
  }

  Response image(const std::string& name) {
    const auto it = image_by_hash.find(name);
    if (it == image_by_hash.end()) throw Error(ErrorKind::not_found, "unknown image '" + name + "'");
    const auto bytes = read_file(cfg.root / it->second);
    Response r{200, std::string(bytes.begin(), bytes.end()), "image/png", {}};
    r.headers.emplace_back("Cache-Control", kImmutable);
    r.headers.emplace_back("ETag", "\"" + name.substr(0, name.find('.')) + "\"");
    return r;
  }

  Response route(const std::string& method, const std::string& path,
                 const std::map<std::string, std::string>& query, const std::string& body) {
    static const std::regex summary_path(R"(/api/session/([^/]+)/summary)");
    std::smatch m;
    if (method == "POST" && path == "/api/session") return create_session(body);
    if (method == "GET" && path == "/api/item") return current_item(query);
    if (method == "POST" && path == "/api/answer") return answer(body);
    if (method == "GET" && std::regex_match(path, m, summary_path)) return summary(m[1].str());
    if (method == "GET" && path.rfind("/img/", 0) == 0) return image(path.substr(5));
    if (method == "GET" && path == "/") return Response{200, index_page, "text/html", {}};
    throw Error(ErrorKind::not_found, "no route for " + method + " " + path);
  }
};

Service::Service(ServiceConfig cfg, Clock clock) : impl_(std::make_unique<Impl>(std::move(cfg), std::move(clock))) {}

Service::~Service() = default;

Response Service::handle(const std::string& method, const std::string& path,
                         const std::map<std::string, std::string>& query, const std::string& body) {
  std::lock_guard lock(impl_->mutex);
  try {
    impl_->expire_idle();
    return impl_->route(method, path, query, body);
  } catch (const Error& e) {
    ojson j;
    j["error"] = std::string(to_string(e.kind()));
    j["message"] = e.what();
    return json_response(j, status_of(e.kind()));
  }
}

std::size_t Service::expire_idle() {
  std::lock_guard lock(impl_->mutex);
  return impl_->expire_idle();
}

std::size_t Service::audit() const {
  std::lock_guard lock(impl_->mutex);
  std::size_t bad = 0;
  for (const auto& v : read_vote_log(impl_->log.path()).votes) {
    const auto it = impl_->sessions.find(v.session);
    if (it == impl_->sessions.end()) continue;
    const auto& plan = it->second.plan;
    bad += std::find(plan.begin(), plan.end(), v.item) == plan.end();
  }
  return bad;
}

std::size_t Service::accepted_answers() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->accepted;
}

struct Server::Impl {
  Service& service;
  httplib::Server http;

  explicit Impl(Service& s) : service(s) {}
};

Server::Server(Service& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  if (static_dir && !impl_->http.set_mount_point("/", static_dir->string()))
    throw Error(ErrorKind::config, "static directory " + static_dir->string() + " does not exist");
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    if (!query.count("session") && req.has_header("X-Session")) query["session"] = req.get_header_value("X-Session");
    const auto r = impl_->service.handle(req.method, req.path, query, req.body);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    res.set_content(r.body, r.content_type);
  };
  impl_->http.Get(".*", handler);
  impl_->http.Post(".*", handler);
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorKind::io, "cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) throw Error(ErrorKind::io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

}  // namespace pmk::collect
