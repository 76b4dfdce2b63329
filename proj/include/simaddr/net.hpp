#pragma once

#include <netinet/in.h>

#include <chrono>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "simaddr/fd.hpp"

namespace simaddr::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resolves an IPv4 host name or dotted quad.
sockaddr_in resolve(const std::string& host, std::uint16_t port);

/// Port a bound socket is listening on.
std::uint16_t local_port(int fd);

UniqueFd udp_bind(const std::string& host, std::uint16_t port);
UniqueFd udp_socket();

UniqueFd tcp_listen(const std::string& host, std::uint16_t port, int backlog = 64);
/// Throws NetError on refusal or after `timeout`.
UniqueFd tcp_connect(const std::string& host, std::uint16_t port,
                     std::chrono::milliseconds timeout);

/// Waits for readability; false on timeout.
bool wait_readable(int fd, std::chrono::milliseconds timeout);

/// Writes everything; throws NetError on failure.
void write_all(int fd, std::span<const std::uint8_t> data);

/// Reads exactly data.size() bytes unless the peer closes first. Returns the
/// number of bytes read; throws NetError on error or if `timeout` elapses
/// with no progress.
std::size_t read_full(int fd, std::span<std::uint8_t> data,
                      std::chrono::milliseconds timeout);

void put_u32_be(std::uint8_t* p, std::uint32_t v) noexcept;
std::uint32_t get_u32_be(const std::uint8_t* p) noexcept;

}  // namespace simaddr::net
