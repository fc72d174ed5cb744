// Dynamixel protocol 1.0 codec and a simulated star-topology servo bus.
#pragma once

#include "hop/dynamics.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hop::bus {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kBroadcastId = 254;
inline constexpr std::size_t kMaxParams = 250;

namespace instr {
inline constexpr std::uint8_t ping = 0x01;
inline constexpr std::uint8_t read = 0x02;
inline constexpr std::uint8_t write = 0x03;
inline constexpr std::uint8_t sync_write = 0x83;
inline constexpr std::uint8_t bulk_read = 0x92;
}  // namespace instr

// Status error bits.
namespace err {
inline constexpr std::uint8_t voltage = 0x01;
inline constexpr std::uint8_t angle_limit = 0x02;
inline constexpr std::uint8_t overheat = 0x04;
inline constexpr std::uint8_t range = 0x08;
inline constexpr std::uint8_t checksum = 0x10;
inline constexpr std::uint8_t overload = 0x20;
inline constexpr std::uint8_t instruction = 0x40;
}  // namespace err

// MX-series control table subset.
namespace reg {
inline constexpr std::uint8_t model_number = 0;  // 2 bytes
inline constexpr std::uint8_t firmware = 2;
inline constexpr std::uint8_t id = 3;
inline constexpr std::uint8_t baud_rate = 4;
inline constexpr std::uint8_t return_delay = 5;
inline constexpr std::uint8_t cw_limit = 6;       // 2 bytes
inline constexpr std::uint8_t ccw_limit = 8;      // 2 bytes
inline constexpr std::uint8_t max_torque = 14;    // 2 bytes
inline constexpr std::uint8_t status_return = 16;
inline constexpr std::uint8_t torque_enable = 24;
inline constexpr std::uint8_t led = 25;
inline constexpr std::uint8_t d_gain = 26;
inline constexpr std::uint8_t i_gain = 27;
inline constexpr std::uint8_t p_gain = 28;
inline constexpr std::uint8_t goal_position = 30;     // 2 bytes
inline constexpr std::uint8_t moving_speed = 32;      // 2 bytes
inline constexpr std::uint8_t torque_limit = 34;      // 2 bytes
inline constexpr std::uint8_t present_position = 36;  // 2 bytes
inline constexpr std::uint8_t present_speed = 38;     // 2 bytes
inline constexpr std::uint8_t present_load = 40;      // 2 bytes
inline constexpr std::uint8_t present_voltage = 42;
inline constexpr std::uint8_t present_temperature = 43;
inline constexpr std::uint8_t moving = 46;
inline constexpr std::uint8_t table_size = 50;
}  // namespace reg

class BusError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct InstructionPacket {
  std::uint8_t id = 0;
  std::uint8_t instruction = instr::ping;
  Bytes params;

  bool operator==(const InstructionPacket&) const = default;
};

struct StatusPacket {
  std::uint8_t id = 0;
  std::uint8_t error = 0;
  Bytes params;

  bool operator==(const StatusPacket&) const = default;
};

/// A decoded frame; `code` is the instruction or the status error byte.
struct Frame {
  std::uint8_t id = 0;
  std::uint8_t code = 0;
  Bytes params;

  InstructionPacket as_instruction() const { return {id, code, params}; }
  StatusPacket as_status() const { return {id, code, params}; }
  bool operator==(const Frame&) const = default;
};

/// ~(sum of bytes) & 0xFF over id, length, instruction/error and params.
std::uint8_t checksum(std::span<const std::uint8_t> body);

/// Throws BusError for an id above 254 or more than 250 params.
Bytes encode(const InstructionPacket& p);
Bytes encode(const StatusPacket& p);

struct Diagnostic {
  enum class Kind { garbage, bad_length, bad_checksum };
  Kind kind;
  std::size_t offset = 0;  // into the decoded buffer
  std::size_t length = 0;  // bytes skipped
};

const char* to_string(Diagnostic::Kind k);

struct DecodeResult {
  std::vector<Frame> frames;
  std::size_t consumed = 0;
  std::vector<Diagnostic> diagnostics;
};

/// Resynchronizing parser; never consumes a partial trailing frame.
DecodeResult decode_stream(std::span<const std::uint8_t> buffer);

/// Incremental wrapper around decode_stream.
class StreamDecoder {
 public:
  std::vector<Frame> feed(std::span<const std::uint8_t> chunk);
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }
  std::size_t buffered() const { return buffer_.size(); }

 private:
  Bytes buffer_;
  std::size_t offset_ = 0;  // stream position of buffer_[0]
  std::vector<Diagnostic> diagnostics_;
};

std::string to_hex(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Devices

/// Speed register unit (0.114 rpm) in rad/s.
inline constexpr double kSpeedUnit = 0.114 * 2.0 * 3.14159265358979323846 / 60.0;

class ServoDevice {
 public:
  ServoDevice(std::uint8_t id, ServoParams params, std::string model = "MX-106", ServoState initial = {});

  std::uint8_t id() const { return id_; }
  const std::string& model() const { return model_; }
  const ServoParams& params() const { return params_; }
  ServoState& state() { return state_; }
  const ServoState& state() const { return state_; }

  /// Register bytes; present_* registers reflect the servo state.
  /// Returns the status error byte (range error when out of the table).
  std::uint8_t read(std::uint8_t addr, std::uint8_t len, Bytes& out) const;
  std::uint8_t write(std::uint8_t addr, std::span<const std::uint8_t> data);

  /// Most recent motor torque estimate for the load register.
  void set_load(double torque) { load_ = torque; }

 private:
  void refresh(std::array<std::uint8_t, reg::table_size>& table) const;

  std::uint8_t id_;
  ServoParams params_;
  std::string model_;
  ServoState state_;
  std::array<std::uint8_t, reg::table_size> table_{};
  double load_ = 0.0;
};

struct BusTiming {
  double bit_rate = 1e6;       // bit/s
  double bits_per_byte = 10.0;
  double turnaround = 20e-6;   // s per responding device
  double timeout = 2e-3;       // s

  double wire_time(std::size_t bytes) const { return bytes * bits_per_byte / bit_rate; }
  void validate() const;
};

struct TranscriptEntry {
  double t = 0.0;  // s, simulated bus clock
  bool tx = true;  // host to devices
  Bytes bytes;
};

struct TransactResult {
  std::vector<StatusPacket> status;
  double elapsed = 0.0;
  std::vector<std::uint8_t> timed_out;
};

struct BulkReadRequest {
  std::uint8_t id = 0;
  std::uint8_t addr = 0;
  std::uint8_t len = 0;
};

struct BulkReadEntry {
  std::uint8_t id = 0;
  bool timeout = false;
  std::uint8_t error = 0;
  Bytes data;
};

struct BulkReadResult {
  std::vector<BulkReadEntry> entries;  // request order
  double elapsed = 0.0;
};

class VirtualBus {
 public:
  explicit VirtualBus(BusTiming timing = {});

  /// Throws BusError on a duplicate id or the broadcast id.
  void attach(ServoDevice device);
  ServoDevice* device(std::uint8_t id);
  const ServoDevice* device(std::uint8_t id) const;
  std::vector<std::uint8_t> ids() const;
  std::size_t size() const { return devices_.size(); }

  TransactResult transact(const InstructionPacket& p);

  const BusTiming& timing() const { return timing_; }
  double clock() const { return clock_; }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
  void clear_transcript() { transcript_.clear(); }
  void set_transcript_enabled(bool on) { log_ = on; }
  /// One line per frame: `t_us DIR bytes...`.
  std::string transcript_text() const;

 private:
  void log(bool tx, const Bytes& bytes, double t);
  std::optional<StatusPacket> respond(ServoDevice& d, const InstructionPacket& p);

  BusTiming timing_;
  std::map<std::uint8_t, ServoDevice> devices_;
  std::vector<TranscriptEntry> transcript_;
  double clock_ = 0.0;
  bool log_ = true;
};

/// Throws BusError on duplicate ids. Empty request: empty result, zero time.
BulkReadResult bulk_read(VirtualBus& bus, const std::vector<BulkReadRequest>& requests);

/// Single READ transaction; nullopt on timeout.
std::optional<Bytes> read_register(VirtualBus& bus, std::uint8_t id, std::uint8_t addr, std::uint8_t len,
                                   double* elapsed = nullptr);

/// SYNC_WRITE of `len` bytes at `addr` for every (id, data) pair; returns the elapsed time.
double sync_write(VirtualBus& bus, std::uint8_t addr, std::uint8_t len,
                  const std::vector<std::pair<std::uint8_t, Bytes>>& data);

Bytes le16(int v);
int from_le16(std::span<const std::uint8_t> b);

}  // namespace hop::bus
