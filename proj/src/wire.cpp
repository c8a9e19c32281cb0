#include "oracle_uq/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "oracle_uq/error.hpp"

namespace oracle_uq::wire {
namespace {

using nlohmann::json;

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    require(w > 0, ErrorCode::kBackendUnavailable, std::string("send failed: ") + std::strerror(errno));
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns bytes read; short only at end-of-stream.
std::size_t read_all(int fd, char* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r < 0 && errno == EINTR) continue;
    require(r >= 0, ErrorCode::kBackendUnavailable, std::string("recv failed: ") + std::strerror(errno));
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

Role parse_role(const std::string& s) {
  if (s == "system") return Role::kSystem;
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kInvalidArgument, "unknown role '" + s + "'");
}

std::string wire_code(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kInvalidArgument: return "bad-request";
    case ErrorCode::kUnknownItem: return "payload-missing";
    default: return std::string(to_string(e.code()));
  }
}

ErrorCode local_code(const std::string& code) {
  for (auto c : {ErrorCode::kContextTooLong, ErrorCode::kTokenOutOfVocabulary, ErrorCode::kLabelTokenizesToEmpty,
                 ErrorCode::kBackendUnavailable}) {
    if (to_string(c) == code) return c;
  }
  if (code == "payload-missing") return ErrorCode::kUnknownItem;
  if (code == "bad-request") return ErrorCode::kInvalidArgument;
  return ErrorCode::kWireError;
}

std::vector<TokenId> tokens_from(const json& j) { return j.get<std::vector<TokenId>>(); }

}  // namespace

std::string encode_frame(const json& body) {
  const std::string text = body.dump();
  require(text.size() <= kMaxFrameBytes, ErrorCode::kWireError, "frame too large");
  const auto n = static_cast<std::uint32_t>(text.size());
  std::string out;
  out.reserve(4 + text.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += text;
  return out;
}

json decode_frame(std::string_view bytes) {
  require(bytes.size() >= 4, ErrorCode::kWireError, "frame shorter than its length prefix");
  const std::uint32_t n = read_be32(reinterpret_cast<const unsigned char*>(bytes.data()));
  require(n <= kMaxFrameBytes, ErrorCode::kWireError, "frame length " + std::to_string(n) + " exceeds limit");
  require(bytes.size() - 4 == n, ErrorCode::kWireError, "frame body length does not match its prefix");
  try {
    return json::parse(bytes.substr(4));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kWireError, std::string("malformed frame body: ") + e.what());
  }
}

void write_frame(int fd, const json& body) {
  const std::string frame = encode_frame(body);
  write_all(fd, frame.data(), frame.size());
}

std::optional<json> read_frame(int fd) {
  unsigned char prefix[4];
  const std::size_t got = read_all(fd, reinterpret_cast<char*>(prefix), 4);
  if (got == 0) return std::nullopt;
  require(got == 4, ErrorCode::kWireError, "connection closed inside a length prefix");
  const std::uint32_t n = read_be32(prefix);
  require(n <= kMaxFrameBytes, ErrorCode::kWireError, "frame length " + std::to_string(n) + " exceeds limit");
  std::string body(n, '\0');
  require(read_all(fd, body.data(), n) == n, ErrorCode::kWireError, "connection closed inside a frame");
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kWireError, std::string("malformed frame body: ") + e.what());
  }
}

json context_to_json(const ChatContext& ctx) {
  json turns = json::array();
  for (const auto& t : ctx.turns) turns.push_back({{"role", role_name(t.role)}, {"text", t.text}});
  json j{{"turns", std::move(turns)}, {"steering", nullptr}};
  if (ctx.steering) {
    const auto& s = *ctx.steering;
    j["steering"] = {{"activation_ref", s.activation_ref},
                     {"read_layer", s.read_layer},
                     {"injection_layer", s.injection_layer},
                     {"coefficient", s.coefficient},
                     {"positions", s.positions}};
  }
  return j;
}

ChatContext context_from_json(const json& j) {
  ChatContext ctx;
  for (const auto& t : j.at("turns")) {
    ctx.turns.push_back({parse_role(t.at("role").get<std::string>()), t.at("text").get<std::string>()});
  }
  if (j.contains("steering") && !j.at("steering").is_null()) {
    const auto& s = j.at("steering");
    SteeringSpec spec;
    spec.activation_ref = s.at("activation_ref").get<std::string>();
    spec.read_layer = s.value("read_layer", spec.read_layer);
    spec.injection_layer = s.value("injection_layer", spec.injection_layer);
    spec.coefficient = s.value("coefficient", spec.coefficient);
    spec.positions = s.value("positions", spec.positions);
    ctx.steering = spec;
  }
  return ctx;
}

json generation_to_json(const Generation& gen) {
  json offsets = json::array();
  for (const auto& s : gen.char_offsets) offsets.push_back({s.begin, s.end});
  return {{"tokens", gen.tokens}, {"texts", gen.texts}, {"char_offsets", std::move(offsets)},
          {"logprobs_t1", gen.logprobs_t1}};
}

Generation generation_from_json(const json& j) {
  Generation gen;
  gen.tokens = tokens_from(j.at("tokens"));
  gen.texts = j.at("texts").get<std::vector<std::string>>();
  for (const auto& o : j.at("char_offsets")) gen.char_offsets.push_back({o.at(0).get<std::size_t>(), o.at(1).get<std::size_t>()});
  gen.logprobs_t1 = j.at("logprobs_t1").get<std::vector<double>>();
  require(gen.well_formed(), ErrorCode::kWireError, "malformed generation in response");
  return gen;
}

json handle_request(const SteeredModel& model, const json& request, int capacity) {
  json id = request.contains("id") ? request.at("id") : json(nullptr);
  try {
    const std::string op = request.at("op").get<std::string>();
    const json params = request.value("params", json::object());
    if (op == "info") {
      return {{"id", id}, {"vocab_size", model.vocab_size()}, {"eos_token", model.eos_token()},
              {"capacity", model.concurrency() == Concurrency::kSingleFlight ? 1 : capacity}};
    }
    const ChatContext ctx = context_from_json(request.at("ctx"));
    if (op == "greedy") {
      auto out = generation_to_json(model.greedy_decode(ctx, params.at("max_tokens").get<int>()));
      out["id"] = id;
      return out;
    }
    if (op == "sample") {
      const auto prefix = params.contains("prefix") ? tokens_from(params.at("prefix")) : std::vector<TokenId>{};
      auto out = generation_to_json(model.sample(ctx, params.at("temperature").get<double>(),
                                                 params.at("max_tokens").get<int>(),
                                                 params.at("seed").get<std::uint64_t>(), prefix));
      out["id"] = id;
      return out;
    }
    if (op == "score") {
      const auto tokens = tokens_from(params.at("tokens"));
      const auto s = model.score_continuation(ctx, tokens, params.at("temperature").get<double>());
      return {{"id", id}, {"tokens", s.tokens}, {"logprobs_at_temp", s.logprobs_at_temp},
              {"logprobs_t1", s.logprobs_t1}};
    }
    if (op == "labels") {
      const auto labels = params.at("labels").get<std::vector<std::string>>();
      return {{"id", id}, {"probs", model.label_logits(ctx, labels)}};
    }
    return {{"id", id}, {"error", {{"code", "bad-request"}, {"message", "unsupported op '" + op + "'"}}}};
  } catch (const Error& e) {
    return {{"id", id}, {"error", {{"code", wire_code(e)}, {"message", e.what()}}}};
  } catch (const std::exception& e) {
    return {{"id", id}, {"error", {{"code", "bad-request"}, {"message", e.what()}}}};
  }
}

Endpoint parse_endpoint(std::string_view url) {
  if (url.starts_with("tcp://")) url.remove_prefix(6);
  const auto colon = url.rfind(':');
  require(colon != std::string_view::npos && colon > 0, ErrorCode::kInvalidArgument,
          "endpoint must be host:port, got '" + std::string(url) + "'");
  Endpoint ep;
  ep.host = std::string(url.substr(0, colon));
  try {
    ep.port = std::stoi(std::string(url.substr(colon + 1)));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in '" + std::string(url) + "'");
  }
  require(ep.port > 0 && ep.port < 65536, ErrorCode::kInvalidArgument, "port out of range");
  return ep;
}

RemoteModel::RemoteModel(const std::string& url) {
  const Endpoint ep = parse_endpoint(url);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int rc = ::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res);
  require(rc == 0, ErrorCode::kBackendUnavailable, "cannot resolve '" + ep.host + "': " + gai_strerror(rc));
  for (addrinfo* a = res; a != nullptr; a = a->ai_next) {
    fd_ = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd_ < 0) continue;
    if (::connect(fd_, a->ai_addr, a->ai_addrlen) == 0) break;
    ::close(fd_);
    fd_ = -1;
  }
  ::freeaddrinfo(res);
  require(fd_ >= 0, ErrorCode::kBackendUnavailable, "cannot connect to " + url);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

  const json info = call("info", nullptr, json::object());
  vocab_size_ = info.at("vocab_size").get<std::size_t>();
  eos_ = info.at("eos_token").get<TokenId>();
  concurrency_ = info.value("capacity", 1) > 1 ? Concurrency::kConcurrent : Concurrency::kSingleFlight;
}

RemoteModel::~RemoteModel() {
  if (fd_ >= 0) ::close(fd_);
}

json RemoteModel::call(const std::string& op, const ChatContext* ctx, json params) const {
  std::lock_guard lock(mu_);
  const std::uint64_t id = next_id_++;
  json request{{"id", id}, {"op", op}, {"params", std::move(params)}};
  if (ctx != nullptr) request["ctx"] = context_to_json(*ctx);
  write_frame(fd_, request);
  const auto response = read_frame(fd_);
  require(response.has_value(), ErrorCode::kBackendUnavailable, "server closed the connection");
  if (response->contains("error")) {
    const auto& err = response->at("error");
    throw Error(local_code(err.value("code", std::string("wire-error"))), err.value("message", std::string()));
  }
  require(response->value("id", json(nullptr)) == json(id), ErrorCode::kWireError, "response id mismatch");
  return *response;
}

Generation RemoteModel::greedy_decode(const ChatContext& ctx, int max_tokens) const {
  return generation_from_json(call("greedy", &ctx, {{"max_tokens", max_tokens}}));
}

Generation RemoteModel::sample(const ChatContext& ctx, double temperature, int max_tokens, std::uint64_t seed,
                               std::span<const TokenId> prefix) const {
  json params{{"temperature", temperature}, {"max_tokens", max_tokens}, {"seed", seed}};
  if (!prefix.empty()) params["prefix"] = std::vector<TokenId>(prefix.begin(), prefix.end());
  return generation_from_json(call("sample", &ctx, std::move(params)));
}

ScoredContinuation RemoteModel::score_continuation(const ChatContext& ctx, std::span<const TokenId> tokens,
                                                   double temperature) const {
  const json r = call("score", &ctx,
                      {{"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())}, {"temperature", temperature}});
  ScoredContinuation s;
  s.tokens = tokens_from(r.at("tokens"));
  s.logprobs_at_temp = r.at("logprobs_at_temp").get<std::vector<double>>();
  s.logprobs_t1 = r.at("logprobs_t1").get<std::vector<double>>();
  require(s.tokens.size() == s.logprobs_at_temp.size() && s.tokens.size() == s.logprobs_t1.size(),
          ErrorCode::kWireError, "score arrays differ in length");
  return s;
}

std::vector<double> RemoteModel::label_logits(const ChatContext& ctx, std::span<const std::string> labels) const {
  const json r = call("labels", &ctx, {{"labels", std::vector<std::string>(labels.begin(), labels.end())}});
  auto probs = r.at("probs").get<std::vector<double>>();
  require(probs.size() == labels.size(), ErrorCode::kWireError, "label probability count mismatch");
  return probs;
}

FrameServer::FrameServer(const SteeredModel& model, int port, int capacity)
    : model_(model), capacity_(capacity) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  require(listen_fd_ >= 0, ErrorCode::kBackendUnavailable, "socket failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::kBackendUnavailable, "cannot listen on port " + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

FrameServer::~FrameServer() { stop(); }

std::string FrameServer::url() const { return "tcp://127.0.0.1:" + std::to_string(port_); }

void FrameServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void FrameServer::serve_connection(int fd) {
  try {
    while (!stopping_) {
      const auto request = read_frame(fd);
      if (!request) break;
      write_frame(fd, handle_request(model_, *request, capacity_));
    }
  } catch (const Error&) {
    // A broken client only ends its own connection.
  }
}

void FrameServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lock(mu_);
  for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
  for (int fd : client_fds_) ::close(fd);
  workers_.clear();
  client_fds_.clear();
}

void FrameServer::wait() {
  if (acceptor_.joinable()) acceptor_.join();
}

}  // namespace oracle_uq::wire
