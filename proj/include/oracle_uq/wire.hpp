#pragma once

// Length-prefixed JSON framing (4-byte big-endian length, then a UTF-8 JSON
// body) and a SteeredModel client/server pair speaking it over TCP.

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "oracle_uq/model.hpp"

namespace oracle_uq::wire {

inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

std::string encode_frame(const nlohmann::json& body);

/// Decodes one complete frame from `bytes`; throws kWireError on a short or
/// oversized frame or a malformed body.
nlohmann::json decode_frame(std::string_view bytes);

void write_frame(int fd, const nlohmann::json& body);
/// nullopt on a clean end-of-stream before the length prefix.
std::optional<nlohmann::json> read_frame(int fd);

nlohmann::json context_to_json(const ChatContext& ctx);
ChatContext context_from_json(const nlohmann::json& j);
nlohmann::json generation_to_json(const Generation& gen);
Generation generation_from_json(const nlohmann::json& j);

/// Server-side dispatch of one request; never throws, errors become
/// {"id", "error": {"code", "message"}} responses.
nlohmann::json handle_request(const SteeredModel& model, const nlohmann::json& request, int capacity = 1);

struct Endpoint {
  std::string host;
  int port = 0;
};

/// Accepts "tcp://host:port" or "host:port".
Endpoint parse_endpoint(std::string_view url);

class RemoteModel final : public SteeredModel {
 public:
  explicit RemoteModel(const std::string& url);
  ~RemoteModel() override;

  RemoteModel(const RemoteModel&) = delete;
  RemoteModel& operator=(const RemoteModel&) = delete;

  std::size_t vocab_size() const override { return vocab_size_; }
  TokenId eos_token() const override { return eos_; }
  Concurrency concurrency() const override { return concurrency_; }

  Generation greedy_decode(const ChatContext& ctx, int max_tokens) const override;
  Generation sample(const ChatContext& ctx, double temperature, int max_tokens, std::uint64_t seed,
                    std::span<const TokenId> prefix = {}) const override;
  ScoredContinuation score_continuation(const ChatContext& ctx, std::span<const TokenId> tokens,
                                        double temperature) const override;
  std::vector<double> label_logits(const ChatContext& ctx,
                                   std::span<const std::string> labels) const override;

 private:
  nlohmann::json call(const std::string& op, const ChatContext* ctx, nlohmann::json params) const;

  int fd_ = -1;
  mutable std::mutex mu_;
  mutable std::uint64_t next_id_ = 1;
  std::size_t vocab_size_ = 0;
  TokenId eos_ = 0;
  Concurrency concurrency_ = Concurrency::kSingleFlight;
};

/// Serves a SteeredModel on 127.0.0.1. Port 0 picks a free port.
class FrameServer {
 public:
  FrameServer(const SteeredModel& model, int port = 0, int capacity = 1);
  ~FrameServer();

  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  int port() const { return port_; }
  std::string url() const;
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

 private:
  void accept_loop();
  void serve_connection(int fd);

  const SteeredModel& model_;
  int capacity_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

}  // namespace oracle_uq::wire
