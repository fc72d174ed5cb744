#include "hop/bus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace hop::bus {

std::uint8_t checksum(std::span<const std::uint8_t> body) {
  unsigned sum = 0;
  for (std::uint8_t b : body) sum += b;
  return static_cast<std::uint8_t>(~sum & 0xFF);
}

namespace {

Bytes frame(std::uint8_t id, std::uint8_t code, const Bytes& params) {
  if (id > kBroadcastId) throw BusError("packet id " + std::to_string(id) + " above 254");
  if (params.size() > kMaxParams) {
    throw BusError("packet has " + std::to_string(params.size()) + " params; at most 250 fit one frame");
  }
  Bytes out;
  out.reserve(params.size() + 6);
  out.push_back(0xFF);
  out.push_back(0xFF);
  out.push_back(id);
  out.push_back(static_cast<std::uint8_t>(params.size() + 2));
  out.push_back(code);
  out.insert(out.end(), params.begin(), params.end());
  out.push_back(checksum(std::span<const std::uint8_t>(out).subspan(2)));
  return out;
}

}  // namespace

Bytes encode(const InstructionPacket& p) { return frame(p.id, p.instruction, p.params); }
Bytes encode(const StatusPacket& p) { return frame(p.id, p.error, p.params); }

const char* to_string(Diagnostic::Kind k) {
  switch (k) {
    case Diagnostic::Kind::garbage: return "garbage";
    case Diagnostic::Kind::bad_length: return "bad_length";
    case Diagnostic::Kind::bad_checksum: return "bad_checksum";
  }
  return "unknown";
}

DecodeResult decode_stream(std::span<const std::uint8_t> buf) {
  DecodeResult r;
  const std::size_t n = buf.size();
  std::size_t i = 0;
  auto garbage = [&](std::size_t at) {
    if (!r.diagnostics.empty() && r.diagnostics.back().kind == Diagnostic::Kind::garbage &&
        r.diagnostics.back().offset + r.diagnostics.back().length == at) {
      ++r.diagnostics.back().length;
    } else {
      r.diagnostics.push_back({Diagnostic::Kind::garbage, at, 1});
    }
  };
  while (i < n) {
    if (buf[i] != 0xFF) {
      garbage(i++);
      continue;
    }
    if (i + 1 >= n) break;  // lone 0xFF may start a header
    if (buf[i + 1] != 0xFF) {
      garbage(i++);
      continue;
    }
    if (i + 2 >= n) break;
    if (buf[i + 2] == 0xFF) {  // no valid id is 0xFF: shift the header by one
      garbage(i++);
      continue;
    }
    if (i + 3 >= n) break;
    const std::size_t len = buf[i + 3];
    if (len < 2) {
      r.diagnostics.push_back({Diagnostic::Kind::bad_length, i, 2});
      i += 2;
      continue;
    }
    const std::size_t total = 4 + len;
    if (i + total > n) break;
    const auto body = buf.subspan(i + 2, len + 1);
    if (checksum(body) != buf[i + total - 1]) {
      r.diagnostics.push_back({Diagnostic::Kind::bad_checksum, i, total});
      i += total;
      continue;
    }
    Frame f;
    f.id = buf[i + 2];
    f.code = buf[i + 4];
    f.params.assign(buf.begin() + i + 5, buf.begin() + i + total - 1);
    r.frames.push_back(std::move(f));
    i += total;
  }
  r.consumed = i;
  return r;
}

std::vector<Frame> StreamDecoder::feed(std::span<const std::uint8_t> chunk) {
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
  DecodeResult r = decode_stream(buffer_);
  for (Diagnostic d : r.diagnostics) {
    d.offset += offset_;
    diagnostics_.push_back(d);
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
  offset_ += r.consumed;
  return std::move(r.frames);
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string s;
  char tmp[4];
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::snprintf(tmp, sizeof tmp, "%02X", bytes[i]);
    if (i) s += ' ';
    s += tmp;
  }
  return s;
}

Bytes le16(int v) { return {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>((v >> 8) & 0xFF)}; }

int from_le16(std::span<const std::uint8_t> b) { return b[0] | (b[1] << 8); }

// ---------------------------------------------------------------------------

namespace {

bool read_only(unsigned addr) {
  return addr <= reg::id || (addr >= reg::present_position && addr <= reg::moving);
}

void put16(std::array<std::uint8_t, reg::table_size>& t, unsigned addr, int v) {
  t[addr] = static_cast<std::uint8_t>(v & 0xFF);
  t[addr + 1] = static_cast<std::uint8_t>((v >> 8) & 0xFF);
}

// Magnitude 0..1023, bit 10 set for the clockwise (negative) direction.
int signed_register(double value, double unit) {
  const int mag = static_cast<int>(std::min(1023.0, std::round(std::abs(value) / unit)));
  return value < 0.0 && mag > 0 ? (mag | 0x400) : mag;
}

}  // namespace

ServoDevice::ServoDevice(std::uint8_t id, ServoParams params, std::string model, ServoState initial)
    : id_(id), params_(params), model_(std::move(model)), state_(initial) {
  if (id_ >= kBroadcastId) throw BusError("servo id must lie in 0..253");
  params_.validate();
  put16(table_, reg::model_number, model_ == "MX-64" ? 310 : 320);
  table_[reg::firmware] = 36;
  table_[reg::id] = id_;
  table_[reg::baud_rate] = 1;
  put16(table_, reg::ccw_limit, 4095);
  put16(table_, reg::max_torque, 1023);
  table_[reg::status_return] = 2;
  put16(table_, reg::moving_speed, 0);
  put16(table_, reg::torque_limit, 1023);
  table_[reg::present_voltage] = 120;
  table_[reg::present_temperature] = 40;
}

void ServoDevice::refresh(std::array<std::uint8_t, reg::table_size>& t) const {
  t[reg::torque_enable] = state_.torque_enabled ? 1 : 0;
  t[reg::p_gain] = static_cast<std::uint8_t>(std::clamp(std::lround(state_.p_gain), 0L, 254L));
  put16(t, reg::goal_position, state_.goal_position);
  put16(t, reg::present_position, rad_to_ticks(state_.position));
  put16(t, reg::present_speed, signed_register(state_.velocity, kSpeedUnit));
  put16(t, reg::present_load, signed_register(load_, params_.torque_limit / 1023.0));
  t[reg::moving] = std::abs(state_.velocity) >= kSpeedUnit ? 1 : 0;
}

std::uint8_t ServoDevice::read(std::uint8_t addr, std::uint8_t len, Bytes& out) const {
  out.clear();
  if (len == 0 || addr + len > reg::table_size) return err::range;
  auto t = table_;
  refresh(t);
  out.assign(t.begin() + addr, t.begin() + addr + len);
  return 0;
}

std::uint8_t ServoDevice::write(std::uint8_t addr, std::span<const std::uint8_t> data) {
  if (data.empty() || addr + data.size() > reg::table_size) return err::range;
  auto t = table_;
  refresh(t);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (read_only(addr + k)) return err::range;
    t[addr + k] = data[k];
  }
  const int goal = from_le16(std::span<const std::uint8_t>(t).subspan(reg::goal_position, 2));
  if (goal > 4095) return err::range;
  table_ = t;
  state_.torque_enabled = t[reg::torque_enable] != 0;
  state_.p_gain = t[reg::p_gain];
  state_.goal_position = goal;
  return 0;
}

void BusTiming::validate() const {
  if (!(bit_rate > 0.0 && bits_per_byte > 0.0 && turnaround >= 0.0 && timeout > 0.0)) {
    throw BusError("bus timing: rates must be positive, latencies non-negative");
  }
}

VirtualBus::VirtualBus(BusTiming timing) : timing_(timing) { timing_.validate(); }

void VirtualBus::attach(ServoDevice device) {
  const std::uint8_t id = device.id();
  if (id >= kBroadcastId) throw BusError("no device may use the broadcast id");
  if (devices_.count(id)) throw BusError("duplicate servo id " + std::to_string(id));
  devices_.emplace(id, std::move(device));
}

ServoDevice* VirtualBus::device(std::uint8_t id) {
  auto it = devices_.find(id);
  return it == devices_.end() ? nullptr : &it->second;
}

const ServoDevice* VirtualBus::device(std::uint8_t id) const {
  auto it = devices_.find(id);
  return it == devices_.end() ? nullptr : &it->second;
}

std::vector<std::uint8_t> VirtualBus::ids() const {
  std::vector<std::uint8_t> out;
  for (const auto& [id, d] : devices_) out.push_back(id);
  return out;
}

void VirtualBus::log(bool tx, const Bytes& bytes, double t) {
  if (log_) transcript_.push_back({t, tx, bytes});
}

std::optional<StatusPacket> VirtualBus::respond(ServoDevice& d, const InstructionPacket& p) {
  StatusPacket s;
  s.id = d.id();
  switch (p.instruction) {
    case instr::ping:
      break;
    case instr::read:
      if (p.params.size() != 2) {
        s.error = err::instruction;
      } else {
        s.error = d.read(p.params[0], p.params[1], s.params);
      }
      break;
    case instr::write:
      if (p.params.size() < 2) {
        s.error = err::instruction;
      } else {
        s.error = d.write(p.params[0], std::span<const std::uint8_t>(p.params).subspan(1));
      }
      break;
    default:
      s.error = err::instruction;
  }
  return s;
}

TransactResult VirtualBus::transact(const InstructionPacket& p) {
  const Bytes request = encode(p);
  TransactResult r;
  const double t0 = clock_;
  log(true, request, t0);
  r.elapsed = timing_.wire_time(request.size());

  auto answer = [&](const StatusPacket& s) {
    const Bytes wire = encode(s);
    r.elapsed += timing_.turnaround;
    log(false, wire, t0 + r.elapsed);
    r.elapsed += timing_.wire_time(wire.size());
    r.status.push_back(s);
  };

  if (p.id == kBroadcastId) {
    if (p.instruction == instr::write && p.params.size() >= 2) {
      for (auto& [id, d] : devices_) d.write(p.params[0], std::span<const std::uint8_t>(p.params).subspan(1));
    } else if (p.instruction == instr::sync_write && p.params.size() >= 2) {
      const std::uint8_t addr = p.params[0];
      const std::size_t len = p.params[1];
      const std::size_t stride = len + 1;
      if (len > 0 && (p.params.size() - 2) % stride == 0) {
        for (std::size_t k = 2; k < p.params.size(); k += stride) {
          if (ServoDevice* d = device(p.params[k])) {
            d->write(addr, std::span<const std::uint8_t>(p.params).subspan(k + 1, len));
          }
        }
      }
    } else if (p.instruction == instr::bulk_read && !p.params.empty() && (p.params.size() - 1) % 3 == 0) {
      for (std::size_t k = 1; k < p.params.size(); k += 3) {
        const std::uint8_t len = p.params[k], id = p.params[k + 1], addr = p.params[k + 2];
        ServoDevice* d = device(id);
        if (!d) {
          r.timed_out.push_back(id);
          r.elapsed += timing_.timeout;
          continue;
        }
        StatusPacket s;
        s.id = id;
        s.error = d->read(addr, len, s.params);
        answer(s);
      }
    }
  } else if (ServoDevice* d = device(p.id)) {
    if (auto s = respond(*d, p)) answer(*s);
  } else {
    r.timed_out.push_back(p.id);
    r.elapsed = timing_.timeout;
  }
  clock_ += r.elapsed;
  return r;
}

std::string VirtualBus::transcript_text() const {
  std::ostringstream out;
  for (const auto& e : transcript_) {
    out << std::llround(e.t * 1e6) << (e.tx ? " TX " : " RX ") << to_hex(e.bytes) << '\n';
  }
  return out.str();
}

BulkReadResult bulk_read(VirtualBus& bus, const std::vector<BulkReadRequest>& requests) {
  BulkReadResult out;
  if (requests.empty()) return out;
  std::set<std::uint8_t> seen;
  InstructionPacket p{kBroadcastId, instr::bulk_read, {0x00}};
  for (const auto& q : requests) {
    if (!seen.insert(q.id).second) throw BusError("duplicate id " + std::to_string(q.id) + " in bulk read");
    p.params.push_back(q.len);
    p.params.push_back(q.id);
    p.params.push_back(q.addr);
  }
  const TransactResult r = bus.transact(p);
  std::map<std::uint8_t, const StatusPacket*> by_id;
  for (const auto& s : r.status) by_id[s.id] = &s;
  for (const auto& q : requests) {
    BulkReadEntry e;
    e.id = q.id;
    auto it = by_id.find(q.id);
    if (it == by_id.end()) {
      e.timeout = true;
    } else {
      e.error = it->second->error;
      e.data = it->second->params;
    }
    out.entries.push_back(std::move(e));
  }
  out.elapsed = r.elapsed;
  return out;
}

std::optional<Bytes> read_register(VirtualBus& bus, std::uint8_t id, std::uint8_t addr, std::uint8_t len,
                                   double* elapsed) {
  const TransactResult r = bus.transact({id, instr::read, {addr, len}});
  if (elapsed) *elapsed = r.elapsed;
  if (r.status.empty() || r.status.front().error != 0) return std::nullopt;
  return r.status.front().params;
}

double sync_write(VirtualBus& bus, std::uint8_t addr, std::uint8_t len,
                  const std::vector<std::pair<std::uint8_t, Bytes>>& data) {
  InstructionPacket p{kBroadcastId, instr::sync_write, {addr, len}};
  for (const auto& [id, bytes] : data) {
    if (bytes.size() != len) throw BusError("sync write data length mismatch for id " + std::to_string(id));
    p.params.push_back(id);
    p.params.insert(p.params.end(), bytes.begin(), bytes.end());
  }
  return bus.transact(p).elapsed;
}

}  // namespace hop::bus
