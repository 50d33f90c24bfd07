#include "quictun/quic/connection.hpp"

#include <algorithm>

#include "quictun/common/log.hpp"

namespace quictun::quic {

namespace {

constexpr std::size_t kMaxAckRanges = 32;
constexpr std::size_t kMaxTrackedRanges = 256;
constexpr std::size_t kMaxLostHistory = 4096;
constexpr std::uint64_t kMaxPacketThreshold = 2000;
constexpr std::size_t kMaxUndecryptable = 16;
constexpr std::uint64_t kMaxCryptoBuffer = 64 * 1024;
constexpr Duration kLocalMaxAckDelay = std::chrono::milliseconds(25);
constexpr std::uint64_t kLocalAckDelayExponent = 3;
// Worst-case STREAM frame header: type, 8-byte id, 8-byte offset, 2-byte length.
constexpr std::size_t kStreamFrameMaxOverhead = 1 + 8 + 8 + 2;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void violation(TransportErrorCode code, const std::string& why, std::uint64_t frame = 0)
{
    throw TransportError(code, why, frame);
}

std::uint64_t ms_count(Duration d)
{
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(d).count());
}

}  // namespace

bool Connection::Stream::has_send_work() const
{
    if (reset_code) return reset_pending;
    return send.has_retransmit() || send.has_new_data() || (fin_queued && !fin_sent) || fin_lost;
}

bool Connection::Stream::recv_done() const
{
    if (fin_read) return true;
    if (reset_by_peer) return reset_delivered || released;
    return released && final_size && recv.highest_offset() >= *final_size;
}

Connection::Connection(bool is_client, const ConnectionConfig& config, TimePoint now)
    : is_client_(is_client),
      config_(config),
      address_validated_(is_client),
      cc_(config.max_datagram_size),
      mds_(config.max_datagram_size),
      idle_timeout_(config.idle_timeout),
      next_local_bidi_(is_client ? 0 : 1),
      local_bidi_limit_(config.max_bidi_streams),
      conn_max_recv_(config.connection_receive_window),
      created_(now),
      last_rx_(now),
      idle_base_(now),
      last_ack_eliciting_tx_(now)
{
    scid_ = ConnectionId::random(kLocalCidLength);
}

Connection::~Connection() = default;

std::unique_ptr<Connection> Connection::client(const ConnectionConfig& config, TlsClientConfig tls, TimePoint now)
{
    std::unique_ptr<Connection> c(new Connection(true, config, now));
    c->dcid_ = ConnectionId::random(8);
    c->original_dcid_ = c->dcid_;
    c->init_initial_keys(c->dcid_);
    c->tls_ = std::make_unique<TlsHandshake>(std::move(tls), c->local_transport_params().encode());
    c->tls_->start();
    c->drive_tls();
    return c;
}

std::unique_ptr<Connection> Connection::server(const ConnectionConfig& config,
                                               std::shared_ptr<const TlsServerConfig> tls,
                                               const ConnectionId& original_dcid, const ConnectionId& client_scid,
                                               TimePoint now)
{
    std::unique_ptr<Connection> c(new Connection(false, config, now));
    c->dcid_ = client_scid;
    c->dcid_from_peer_ = true;
    c->original_dcid_ = original_dcid;
    c->init_initial_keys(original_dcid);
    c->tls_ = std::make_unique<TlsHandshake>(std::move(tls), c->local_transport_params().encode());
    return c;
}

void Connection::init_initial_keys(const ConnectionId& client_dcid)
{
    auto secrets = derive_initial_secrets(client_dcid.view());
    auto& space = spaces_[kInitial];
    space.tx = std::make_unique<PacketKeys>(PacketKeys::from_secret(is_client_ ? secrets.client : secrets.server));
    space.rx = std::make_unique<PacketKeys>(PacketKeys::from_secret(is_client_ ? secrets.server : secrets.client));
}

TransportParameters Connection::local_transport_params() const
{
    TransportParameters p;
    p.max_idle_timeout_ms = ms_count(config_.idle_timeout);
    p.initial_max_data = config_.connection_receive_window;
    p.initial_max_stream_data_bidi_local = config_.stream_receive_window;
    p.initial_max_stream_data_bidi_remote = config_.stream_receive_window;
    p.initial_max_stream_data_uni = config_.stream_receive_window;
    p.initial_max_streams_bidi = config_.max_bidi_streams;
    p.initial_max_streams_uni = config_.max_uni_streams;
    p.ack_delay_exponent = kLocalAckDelayExponent;
    p.max_ack_delay_ms = ms_count(kLocalMaxAckDelay);
    p.disable_active_migration = true;
    p.initial_source_connection_id = scid_;
    if (!is_client_) p.original_destination_connection_id = original_dcid_;
    return p;
}

void Connection::drive_tls()
{
    for (auto& out : tls_->take_output()) {
        spaces_[static_cast<int>(out.level)].crypto_send.append(out.data);
    }
    for (auto& secret : tls_->take_secrets()) {
        auto sp = static_cast<Space>(secret.level);
        auto keys = std::make_unique<PacketKeys>(PacketKeys::from_secret(secret.secret));
        if (secret.write) {
            spaces_[sp].tx = std::move(keys);
        } else {
            spaces_[sp].rx = std::move(keys);
            if (sp == kApplication) rx_next_.emplace(next_key_generation(secret.secret));
        }
    }
    if (!peer_params_applied_ && tls_->peer_transport_params()) {
        peer_params_applied_ = true;
        apply_peer_params(TransportParameters::decode(*tls_->peer_transport_params(), is_client_));
    }
}

void Connection::apply_peer_params(const TransportParameters& params)
{
    if (is_client_) {
        if (!params.original_destination_connection_id || !(*params.original_destination_connection_id == original_dcid_)) {
            violation(TransportErrorCode::transport_parameter_error, "original_destination_connection_id mismatch");
        }
    }
    if (!params.initial_source_connection_id || !(*params.initial_source_connection_id == dcid_)) {
        violation(TransportErrorCode::transport_parameter_error, "initial_source_connection_id mismatch");
    }
    if (params.max_idle_timeout_ms > 0) {
        idle_timeout_ = std::min(idle_timeout_, Duration(std::chrono::milliseconds(params.max_idle_timeout_ms)));
    }
    mds_ = std::min<std::size_t>(config_.max_datagram_size, std::max<std::uint64_t>(params.max_udp_payload_size, 1200));
    peer_max_ack_delay_ms_ = params.max_ack_delay_ms;
    peer_ack_delay_exponent_ = params.ack_delay_exponent;
    conn_max_send_ = params.initial_max_data;
    peer_bidi_limit_ = params.initial_max_streams_bidi;
    peer_initial_stream_bidi_local_ = params.initial_max_stream_data_bidi_local;
    peer_initial_stream_bidi_remote_ = params.initial_max_stream_data_bidi_remote;
}

void Connection::on_handshake_complete(TimePoint now)
{
    handshake_complete_ = true;
    if (state_ == State::handshaking) state_ = State::established;
    push_event(ConnectionEventType::handshake_completed);
    if (!is_client_) {
        handshake_done_pending_ = true;
        confirm_handshake(now);
    }
}

void Connection::confirm_handshake(TimePoint now)
{
    if (handshake_confirmed_) return;
    handshake_confirmed_ = true;
    discard_space(kInitial);
    discard_space(kHandshake);
}

void Connection::discard_space(Space sp)
{
    auto& space = spaces_[sp];
    if (space.discarded) return;
    for (auto& [pn, pkt] : space.sent) {
        if (pkt.in_flight) cc_.remove_in_flight(pkt.size);
    }
    space.sent.clear();
    space.lost_history.clear();
    space.ack_eliciting_in_flight = 0;
    space.time_of_last_ack_eliciting.reset();
    space.loss_time.reset();
    space.ack_needed = false;
    space.ack_deadline.reset();
    space.probes = 0;
    space.tx.reset();
    space.rx.reset();
    space.discarded = true;
    pto_count_ = 0;
}

// ---------------------------------------------------------------------------
// Receive path

void Connection::receive(MutableByteView datagram, TimePoint now)
{
    if (state_ == State::closed || state_ == State::draining) return;
    stats_.bytes_received += datagram.size();
    amp_bytes_received_ += datagram.size();
    if (state_ == State::closing) {
        close_send_pending_ = true;
        return;
    }
    std::size_t pos = 0;
    while (pos < datagram.size() && state_ < State::closing) {
        auto rest = datagram.subspan(pos);
        PacketHeader h;
        try {
            h = parse_packet_header(rest, scid_.size());
        } catch (const DecodeError&) {
            ++stats_.packets_dropped;
            break;
        }
        auto packet = rest.first(h.packet_length);
        pos += h.packet_length;
        bool long_header = (rest[0] & 0x80) != 0;
        if (h.type == PacketType::version_negotiation) {
            if (is_client_ && !dcid_from_peer_ && h.dcid == scid_) {
                // We only speak v1; a VN packet means the server does not.
                enter_closing({ConnectionError::Source::peer, false, 0, "version negotiation: no common version"},
                              now, false);
            }
            break;
        }
        if (long_header && h.version != kQuicVersion1) break;
        if (h.type == PacketType::retry || h.type == PacketType::zero_rtt) continue;
        bool ours = h.dcid == scid_ || (!is_client_ && h.dcid == original_dcid_);
        if (!ours) {
            ++stats_.packets_dropped;
            continue;
        }
        Space sp = h.type == PacketType::initial     ? kInitial
                   : h.type == PacketType::handshake ? kHandshake
                                                     : kApplication;
        process_packet(packet, h, sp, now);
    }
    flush_undecryptable(now);
}

void Connection::flush_undecryptable(TimePoint now)
{
    if (undecryptable_.empty()) return;
    auto pending = std::move(undecryptable_);
    undecryptable_.clear();
    for (auto& [bytes, sp] : pending) {
        if (state_ >= State::closing) return;
        if (spaces_[sp].discarded) continue;
        if (!spaces_[sp].rx) {
            undecryptable_.emplace_back(std::move(bytes), sp);
            continue;
        }
        try {
            auto h = parse_packet_header(bytes, scid_.size());
            process_packet(MutableByteView(bytes.data(), h.packet_length), h, sp, now);
        } catch (const DecodeError&) {
            ++stats_.packets_dropped;
        }
    }
}

bool Connection::decrypt_one_rtt(MutableByteView packet, const PacketHeader& h, std::uint64_t& pn,
                                 std::size_t& payload_offset, std::size_t& payload_len, std::uint8_t& first_byte)
{
    auto& space = spaces_[kApplication];
    auto uh = remove_header_protection(packet, h.pn_offset, space.rx->hp);
    if (!uh) return false;
    pn = space.largest_received ? decode_packet_number(*space.largest_received, uh->truncated_pn, uh->pn_length)
                                : uh->truncated_pn;
    auto hdr_len = h.pn_offset + uh->pn_length;
    if (packet.size() < hdr_len + kAeadTagLen) return false;
    auto body = packet.subspan(hdr_len);
    ByteView aad(packet.data(), hdr_len);
    bool phase = (uh->first_byte & 0x04) != 0;
    if (phase == key_phase_) {
        if (!space.rx->aead.open(pn, aad, body)) return false;
    } else if (rx_prev_ && pn < key_phase_first_pn_) {
        if (!rx_prev_->open(pn, aad, body)) return false;
    } else {
        if (!rx_next_ || !handshake_confirmed_) return false;
        if (!rx_next_->aead.open(pn, aad, body)) return false;
        // Peer-initiated key update: rotate both directions.
        rx_prev_.emplace(std::move(space.rx->aead));
        space.rx->aead = std::move(rx_next_->aead);
        space.rx->secret = rx_next_->secret;
        rx_next_.emplace(next_key_generation(space.rx->secret));
        auto tx_next = next_key_generation(space.tx->secret);
        space.tx->aead = std::move(tx_next.aead);
        space.tx->secret = tx_next.secret;
        key_phase_ = phase;
        key_phase_first_pn_ = pn;
        log().debug("peer initiated key update at pn {}", pn);
    }
    payload_offset = hdr_len;
    payload_len = body.size() - kAeadTagLen;
    first_byte = uh->first_byte;
    return true;
}

void Connection::process_packet(MutableByteView packet, const PacketHeader& h, Space sp, TimePoint now)
{
    auto& space = spaces_[sp];
    if (space.discarded) return;
    if (!space.rx) {
        if (sp != kInitial && undecryptable_.size() < kMaxUndecryptable) {
            undecryptable_.emplace_back(Bytes(packet.begin(), packet.end()), sp);
        }
        return;
    }
    std::uint64_t pn = 0;
    std::size_t payload_offset = 0;
    std::size_t payload_len = 0;
    std::uint8_t first = 0;
    if (sp == kApplication) {
        if (!decrypt_one_rtt(packet, h, pn, payload_offset, payload_len, first)) {
            ++stats_.packets_dropped;
            return;
        }
    } else {
        auto uh = remove_header_protection(packet, h.pn_offset, space.rx->hp);
        if (!uh) {
            ++stats_.packets_dropped;
            return;
        }
        pn = space.largest_received ? decode_packet_number(*space.largest_received, uh->truncated_pn, uh->pn_length)
                                    : uh->truncated_pn;
        payload_offset = h.pn_offset + uh->pn_length;
        if (h.packet_length < payload_offset + kAeadTagLen) {
            ++stats_.packets_dropped;
            return;
        }
        auto body = packet.subspan(payload_offset, h.packet_length - payload_offset);
        if (!space.rx->aead.open(pn, ByteView(packet.data(), payload_offset), body)) {
            ++stats_.packets_dropped;
            return;
        }
        payload_len = body.size() - kAeadTagLen;
        first = uh->first_byte;
    }

    bool long_header = (first & 0x80) != 0;
    if ((long_header && (first & 0x0c)) || (!long_header && (first & 0x18))) {
        enter_closing({ConnectionError::Source::local, false,
                       static_cast<std::uint64_t>(TransportErrorCode::protocol_violation), "reserved bits set"},
                      now, true);
        return;
    }
    if (space.received.contains(pn)) return;

    last_rx_ = now;
    idle_base_ = now;
    ack_eliciting_since_rx_ = false;
    ++stats_.packets_received;
    if (is_client_ && sp == kInitial && !dcid_from_peer_) {
        dcid_ = h.scid;
        dcid_from_peer_ = true;
    }
    if (!is_client_ && sp == kHandshake) {
        address_validated_ = true;
        discard_space(kInitial);
    }

    bool ack_eliciting = false;
    try {
        process_frames(ByteView(packet.data() + payload_offset, payload_len), sp, now, ack_eliciting);
    } catch (const TransportError& e) {
        log().debug("closing connection: {}", e.what());
        enter_closing({ConnectionError::Source::local, false, e.code(), e.what()}, now, true);
        close_frame_.frame_type = e.frame_type();
        return;
    } catch (const TlsError& e) {
        log().debug("TLS handshake failed: {}", e.what());
        enter_closing({ConnectionError::Source::local, false, 0x100u + e.alert(), e.what()}, now, true);
        return;
    } catch (const DecodeError& e) {
        enter_closing({ConnectionError::Source::local, false,
                       static_cast<std::uint64_t>(TransportErrorCode::frame_encoding_error), e.what()},
                      now, true);
        return;
    }
    if (space.discarded) return;

    bool gap = space.largest_received && pn != *space.largest_received + 1;
    space.received.insert(pn, pn + 1);
    space.received.keep_highest(kMaxTrackedRanges);
    if (!space.largest_received || pn > *space.largest_received) {
        space.largest_received = pn;
        space.largest_received_time = now;
    }
    space.ack_needed = true;
    if (ack_eliciting) {
        ++space.ack_eliciting_since_ack;
        if (sp != kApplication || gap || space.ack_eliciting_since_ack >= config_.ack_eliciting_threshold) {
            space.ack_immediately = true;
        } else if (!space.ack_deadline) {
            space.ack_deadline = now + kLocalMaxAckDelay;
        }
    }
}

void Connection::process_frames(ByteView payload, Space sp, TimePoint now, bool& ack_eliciting)
{
    BufferReader r(payload);
    if (r.empty()) violation(TransportErrorCode::protocol_violation, "packet without frames");
    while (!r.empty()) {
        std::uint64_t type = 0;
        Frame frame = parse_frame(r, type);
        if (sp != kApplication) {
            bool allowed = type == frame_type::padding || type == frame_type::ping || type == frame_type::ack ||
                           type == frame_type::ack_ecn || type == frame_type::crypto ||
                           type == frame_type::connection_close;
            if (!allowed) violation(TransportErrorCode::protocol_violation, "frame not allowed in long header packet", type);
        }
        if (is_ack_eliciting(type)) ack_eliciting = true;
        bool stop = false;
        std::visit(Overloaded{
                       [](const PaddingFrame&) {},
                       [](const PingFrame&) {},
                       [&](const AckFrame& f) { on_ack_frame(f, sp, now); },
                       [&](const ResetStreamFrame& f) { on_reset_stream(f); },
                       [&](const StopSendingFrame& f) { on_stop_sending(f); },
                       [&](const CryptoFrame& f) { on_crypto_frame(f, sp, now); },
                       [&](const NewTokenFrame&) {
                           if (!is_client_) violation(TransportErrorCode::protocol_violation, "NEW_TOKEN from client", type);
                       },
                       [&](const StreamFrame& f) { on_stream_frame(f); },
                       [&](const MaxDataFrame& f) {
                           if (f.maximum <= conn_max_send_) return;
                           conn_max_send_ = f.maximum;
                           for (auto& [id, s] : streams_) {
                               if (s.want_writable) {
                                   s.want_writable = false;
                                   push_event(ConnectionEventType::stream_writable, id);
                               }
                           }
                       },
                       [&](const MaxStreamDataFrame& f) { on_max_stream_data(f); },
                       [&](const MaxStreamsFrame& f) {
                           if (f.maximum > (1ULL << 60)) violation(TransportErrorCode::frame_encoding_error, "MAX_STREAMS too large", type);
                           if (f.bidirectional && f.maximum > peer_bidi_limit_) {
                               peer_bidi_limit_ = f.maximum;
                               push_event(ConnectionEventType::streams_available);
                           }
                       },
                       [](const DataBlockedFrame&) {},
                       [](const StreamDataBlockedFrame&) {},
                       [](const StreamsBlockedFrame&) {},
                       [](const NewConnectionIdFrame&) {},
                       [](const RetireConnectionIdFrame&) {},
                       [&](const PathChallengeFrame& f) {
                           if (path_responses_.size() < 4) path_responses_.push_back(f.data);
                       },
                       [](const PathResponseFrame&) {},
                       [&](const ConnectionCloseFrame& f) {
                           on_connection_close(f, now);
                           stop = true;
                       },
                       [&](const HandshakeDoneFrame&) {
                           if (!is_client_) violation(TransportErrorCode::protocol_violation, "HANDSHAKE_DONE from client", type);
                           confirm_handshake(now);
                       },
                   },
                   frame);
        if (stop) return;
    }
}

void Connection::on_crypto_frame(const CryptoFrame& f, Space sp, TimePoint now)
{
    auto& space = spaces_[sp];
    if (f.offset + f.data.size() > space.crypto_recv.read_offset() + kMaxCryptoBuffer) {
        violation(TransportErrorCode::crypto_buffer_exceeded, "CRYPTO data beyond buffer", frame_type::crypto);
    }
    space.crypto_recv.insert(f.offset, f.data);
    if (space.crypto_recv.readable() == 0) return;
    Bytes buf(space.crypto_recv.readable());
    space.crypto_recv.read(buf);
    tls_->receive(static_cast<EncryptionLevel>(sp), buf);
    drive_tls();
    if (!handshake_complete_ && tls_->complete()) on_handshake_complete(now);
}

Connection::Stream* Connection::find_stream(StreamId id)
{
    auto it = streams_.find(id);
    return it == streams_.end() ? nullptr : &it->second;
}

Connection::Stream* Connection::get_or_open_stream(StreamId id, bool is_send_frame)
{
    if (auto* s = find_stream(id)) return s;
    bool local = is_client_initiated(id) == is_client_;
    std::uint64_t index = id >> 2;
    if (local) {
        if (!is_bidirectional(id) || index >= local_bidi_opened_) {
            violation(TransportErrorCode::stream_state_error, "frame for unopened local stream");
        }
        return nullptr;  // already retired
    }
    if (!is_bidirectional(id)) {
        if (is_send_frame) violation(TransportErrorCode::stream_state_error, "send-side frame for peer uni stream");
        if (index >= config_.max_uni_streams) violation(TransportErrorCode::stream_limit_error, "uni stream limit");
        if (index < peer_uni_opened_) return nullptr;
        Stream* last = nullptr;
        for (auto i = peer_uni_opened_; i <= index; ++i) {
            StreamId sid = (i << 2) | (is_client_ ? 0x3 : 0x2);
            auto& s = streams_[sid];
            s.id = sid;
            s.fin_acked = true;  // no send half
            s.max_recv_data = config_.stream_receive_window;
            push_event(ConnectionEventType::stream_opened, sid);
            last = &s;
        }
        peer_uni_opened_ = index + 1;
        return last;
    }
    if (index >= local_bidi_limit_) violation(TransportErrorCode::stream_limit_error, "bidi stream limit exceeded");
    if (index < peer_bidi_opened_) return nullptr;
    Stream* last = nullptr;
    for (auto i = peer_bidi_opened_; i <= index; ++i) {
        StreamId sid = (i << 2) | (is_client_ ? 0x1 : 0x0);
        auto& s = streams_[sid];
        s.id = sid;
        s.max_send_data = peer_initial_stream_bidi_local_;
        s.max_recv_data = config_.stream_receive_window;
        push_event(ConnectionEventType::stream_opened, sid);
        last = &s;
    }
    peer_bidi_opened_ = index + 1;
    return last;
}

void Connection::signal_readable(Stream& s)
{
    if (s.readable_signalled) return;
    s.readable_signalled = true;
    push_event(ConnectionEventType::stream_readable, s.id);
}

void Connection::on_stream_frame(const StreamFrame& f)
{
    if (!is_bidirectional(f.stream_id) && is_client_initiated(f.stream_id) == is_client_) {
        violation(TransportErrorCode::stream_state_error, "STREAM on local uni stream", frame_type::stream);
    }
    Stream* s = get_or_open_stream(f.stream_id, false);
    if (!s) return;
    auto end = f.offset + f.data.size();
    if (end > s->max_recv_data) violation(TransportErrorCode::flow_control_error, "stream flow control exceeded");
    if (s->final_size && (end > *s->final_size || (f.fin && end != *s->final_size))) {
        violation(TransportErrorCode::final_size_error, "final size changed");
    }
    if (f.fin) {
        if (end < s->recv.highest_offset()) violation(TransportErrorCode::final_size_error, "final size below received data");
        s->final_size = end;
    }
    if (s->reset_by_peer) return;
    auto fresh = s->recv.insert(f.offset, f.data);
    conn_recv_highest_ += fresh;
    if (conn_recv_highest_ > conn_max_recv_) violation(TransportErrorCode::flow_control_error, "connection flow control exceeded");
    if (s->stop_sending_code || s->released) {
        std::array<std::uint8_t, 16384> sink;
        while (auto n = s->recv.read(sink)) on_stream_data_consumed(*s, n);
        maybe_retire_stream(s->id);
        return;
    }
    if (s->recv.readable() > 0 || (s->final_size && s->recv.read_offset() == *s->final_size)) signal_readable(*s);
}

void Connection::on_reset_stream(const ResetStreamFrame& f)
{
    if (!is_bidirectional(f.stream_id) && is_client_initiated(f.stream_id) == is_client_) {
        violation(TransportErrorCode::stream_state_error, "RESET_STREAM on local uni stream", frame_type::reset_stream);
    }
    Stream* s = get_or_open_stream(f.stream_id, false);
    if (!s) return;
    if (s->final_size && *s->final_size != f.final_size) violation(TransportErrorCode::final_size_error, "reset final size mismatch");
    if (f.final_size < s->recv.highest_offset()) violation(TransportErrorCode::final_size_error, "reset final size too small");
    if (f.final_size > s->max_recv_data) violation(TransportErrorCode::flow_control_error, "reset beyond stream window");
    if (s->reset_by_peer) return;
    conn_recv_highest_ += f.final_size - s->recv.highest_offset();
    if (conn_recv_highest_ > conn_max_recv_) violation(TransportErrorCode::flow_control_error, "connection flow control exceeded");
    s->final_size = f.final_size;
    s->reset_by_peer = f.error_code;
    // Unread bytes will never be delivered; return their credit.
    auto unread = f.final_size - s->recv.read_offset();
    conn_consumed_ += unread;
    if (conn_max_recv_ - conn_consumed_ < config_.connection_receive_window / 2) {
        conn_max_recv_ = conn_consumed_ + config_.connection_receive_window;
        max_data_pending_ = true;
    }
    s->max_stream_data_pending = false;
    if (s->released) {
        maybe_retire_stream(s->id);
        return;
    }
    signal_readable(*s);
}

void Connection::on_stop_sending(const StopSendingFrame& f)
{
    if (!is_bidirectional(f.stream_id) && is_client_initiated(f.stream_id) != is_client_) {
        violation(TransportErrorCode::stream_state_error, "STOP_SENDING on receive-only stream", frame_type::stop_sending);
    }
    Stream* s = get_or_open_stream(f.stream_id, true);
    if (!s) return;
    if (s->stopped_by_peer) return;
    s->stopped_by_peer = f.error_code;
    if (!s->send_done() && !s->reset_code) {
        s->reset_code = f.error_code;
        s->reset_final_size = s->send.next_new_offset();
        s->reset_pending = true;
        stream_ctl_pending_ = true;
    }
    s->want_writable = false;
    push_event(ConnectionEventType::stream_writable, s->id);
}

void Connection::on_max_stream_data(const MaxStreamDataFrame& f)
{
    if (!is_bidirectional(f.stream_id) && is_client_initiated(f.stream_id) != is_client_) {
        violation(TransportErrorCode::stream_state_error, "MAX_STREAM_DATA on receive-only stream", frame_type::max_stream_data);
    }
    Stream* s = get_or_open_stream(f.stream_id, true);
    if (!s || f.maximum <= s->max_send_data) return;
    s->max_send_data = f.maximum;
    if (s->want_writable) {
        s->want_writable = false;
        push_event(ConnectionEventType::stream_writable, s->id);
    }
}

void Connection::on_connection_close(const ConnectionCloseFrame& f, TimePoint now)
{
    ConnectionError err{ConnectionError::Source::peer, f.application, f.error_code, f.reason};
    enter_draining(err, now);
}

// ---------------------------------------------------------------------------
// Acknowledgements and loss recovery

void Connection::on_ack_frame(const AckFrame& ack, Space sp, TimePoint now)
{
    auto& space = spaces_[sp];
    if (ack.largest() >= space.next_pn) violation(TransportErrorCode::protocol_violation, "ACK of unsent packet", frame_type::ack);
    if (!space.largest_acked || ack.largest() > *space.largest_acked) space.largest_acked = ack.largest();

    std::vector<std::pair<std::uint64_t, SentPacket>> newly;
    for (const auto& range : ack.ranges) {
        auto it = space.sent.lower_bound(range.smallest);
        while (it != space.sent.end() && it->first <= range.largest) {
            newly.emplace_back(it->first, std::move(it->second));
            it = space.sent.erase(it);
        }
        auto lt = space.lost_history.lower_bound(range.smallest);
        while (lt != space.lost_history.end() && lt->first <= range.largest) {
            // Declared lost, yet it arrived: the path reorders at least this much.
            const auto& rec = lt->second;
            ++stats_.spurious_losses;
            auto distance = rec.largest_acked_at_loss - lt->first + 1;
            if (distance >= packet_threshold_) packet_threshold_ = std::min(distance + 1, kMaxPacketThreshold);
            reorder_window_ = std::max(reorder_window_, now - rec.time_sent);
            if (rec.event != 0 && rec.event == congestion_event_ && event_unconfirmed_losses_ > 0 &&
                --event_unconfirmed_losses_ == 0) {
                cc_.undo_last_congestion_event();
            }
            lt = space.lost_history.erase(lt);
        }
    }
    if (newly.empty()) return;

    bool any_eliciting = false;
    for (auto& [pn, pkt] : newly) any_eliciting |= pkt.ack_eliciting;
    if (any_eliciting) {
        for (auto& [pn, pkt] : newly) {
            if (pn != ack.largest()) continue;
            Duration ack_delay{0};
            if (sp == kApplication) {
                ack_delay = std::chrono::microseconds(ack.ack_delay << peer_ack_delay_exponent_);
            }
            rtt_.update(now - pkt.time_sent, ack_delay, handshake_confirmed_,
                        std::chrono::milliseconds(peer_max_ack_delay_ms_));
        }
    }
    for (auto& [pn, pkt] : newly) {
        if (pkt.in_flight) {
            bool app_limited = cc_.bytes_in_flight() < cc_.window() / 2;
            cc_.remove_in_flight(pkt.size);
            cc_.on_acked(pkt.size, pkt.time_sent, app_limited);
        }
        if (pkt.ack_eliciting && space.ack_eliciting_in_flight > 0) --space.ack_eliciting_in_flight;
        on_frames_acked(pkt);
    }
    detect_lost_packets(sp, now);
    pto_count_ = 0;
}

void Connection::on_frames_acked(const SentPacket& pkt)
{
    for (const auto& f : pkt.frames) {
        switch (f.kind) {
        case SentFrame::Kind::stream: {
            auto* s = find_stream(f.stream_id);
            if (!s) break;
            s->send.on_ack(f.offset, f.length);
            if (f.fin) s->fin_ack_seen = true;
            if (s->fin_ack_seen && s->send.all_acked()) s->fin_acked = true;
            if (s->want_writable && !s->stopped_by_peer) {
                s->want_writable = false;
                push_event(ConnectionEventType::stream_writable, s->id);
            }
            maybe_retire_stream(f.stream_id);
            break;
        }
        case SentFrame::Kind::crypto:
            if (!spaces_[f.stream_id].discarded) spaces_[f.stream_id].crypto_send.on_ack(f.offset, f.length);
            break;
        case SentFrame::Kind::reset_stream: {
            auto* s = find_stream(f.stream_id);
            if (!s) break;
            s->reset_acked = true;
            maybe_retire_stream(f.stream_id);
            break;
        }
        default: break;
        }
    }
}

Duration Connection::loss_delay() const
{
    auto base = std::max(rtt_.latest(), rtt_.smoothed());
    auto d = base * 9 / 8;
    d = std::max(d, reorder_window_ * 5 / 4);
    return std::max(d, kGranularity);
}

void Connection::detect_lost_packets(Space sp, TimePoint now)
{
    auto& space = spaces_[sp];
    space.loss_time.reset();
    if (!space.largest_acked) return;
    auto delay = loss_delay();
    auto lost_send_time = now - delay;
    auto largest_acked = *space.largest_acked;

    std::optional<TimePoint> largest_lost_time;
    std::vector<std::uint64_t> lost_pns;
    // Persistent congestion: a run of consecutive lost packets spanning the threshold duration.
    auto pc_duration = (rtt_.pto_base() + std::chrono::milliseconds(peer_max_ack_delay_ms_)) *
                       static_cast<int>(kPersistentCongestionThreshold);
    bool persistent = false;
    std::optional<std::uint64_t> run_prev;
    std::optional<TimePoint> run_start;

    auto it = space.sent.begin();
    while (it != space.sent.end() && it->first <= largest_acked) {
        auto& pkt = it->second;
        auto pn = it->first;
        if (pkt.time_sent <= lost_send_time || largest_acked >= pn + packet_threshold_) {
            if (pkt.in_flight) {
                cc_.remove_in_flight(pkt.size);
                if (!largest_lost_time || pkt.time_sent > *largest_lost_time) largest_lost_time = pkt.time_sent;
            }
            if (pkt.ack_eliciting) {
                if (space.ack_eliciting_in_flight > 0) --space.ack_eliciting_in_flight;
                space.lost_history[pn] = LostRecord{pkt.time_sent, largest_acked, 0};
                lost_pns.push_back(pn);
                if (run_prev && pn == *run_prev + 1) {
                    if (rtt_.has_sample() && pkt.time_sent - *run_start >= pc_duration) persistent = true;
                } else {
                    run_start = pkt.time_sent;
                }
                run_prev = pn;
            }
            on_packet_lost(sp, pn, pkt);
            it = space.sent.erase(it);
        } else {
            auto t = pkt.time_sent + delay;
            if (!space.loss_time || t < *space.loss_time) space.loss_time = t;
            ++it;
        }
    }
    if (largest_lost_time) {
        bool new_event = !cc_.in_recovery(*largest_lost_time);
        cc_.on_congestion_event(*largest_lost_time, now);
        if (new_event) {
            ++congestion_event_;
            event_unconfirmed_losses_ = lost_pns.size();
            for (auto pn : lost_pns) space.lost_history[pn].event = congestion_event_;
        }
        if (persistent) {
            log().debug("persistent congestion");
            cc_.on_persistent_congestion();
        }
    }
    while (space.lost_history.size() > kMaxLostHistory) space.lost_history.erase(space.lost_history.begin());
}

void Connection::on_packet_lost(Space sp, std::uint64_t pn, SentPacket& pkt)
{
    ++stats_.packets_lost;
    for (const auto& f : pkt.frames) {
        switch (f.kind) {
        case SentFrame::Kind::stream: {
            auto* s = find_stream(f.stream_id);
            if (!s || s->reset_code) break;
            s->send.on_lost(f.offset, f.length);
            if (f.fin && !s->fin_acked) s->fin_lost = true;
            break;
        }
        case SentFrame::Kind::crypto:
            if (!spaces_[f.stream_id].discarded) spaces_[f.stream_id].crypto_send.on_lost(f.offset, f.length);
            break;
        case SentFrame::Kind::max_data: max_data_pending_ = true; break;
        case SentFrame::Kind::max_streams: max_streams_pending_ = true; break;
        case SentFrame::Kind::handshake_done: handshake_done_pending_ = true; break;
        case SentFrame::Kind::max_stream_data: {
            auto* s = find_stream(f.stream_id);
            if (s && !s->final_size) {
                s->max_stream_data_pending = true;
                stream_ctl_pending_ = true;
            }
            break;
        }
        case SentFrame::Kind::reset_stream: {
            auto* s = find_stream(f.stream_id);
            if (s && !s->reset_acked) {
                s->reset_pending = true;
                stream_ctl_pending_ = true;
            }
            break;
        }
        case SentFrame::Kind::stop_sending: {
            auto* s = find_stream(f.stream_id);
            if (s && !s->recv_done() && !s->reset_by_peer) {
                s->stop_sending_pending = true;
                stream_ctl_pending_ = true;
            }
            break;
        }
        default: break;
        }
    }
}

Duration Connection::pto_duration(Space sp) const
{
    auto d = rtt_.pto_base();
    if (sp == kApplication) d += std::chrono::milliseconds(peer_max_ack_delay_ms_);
    return d * (1 << std::min<std::uint32_t>(pto_count_, 16));
}

std::optional<std::pair<TimePoint, Connection::Space>> Connection::loss_time_and_space() const
{
    std::optional<std::pair<TimePoint, Space>> best;
    for (int i = 0; i < 3; ++i) {
        const auto& space = spaces_[i];
        if (space.discarded || !space.loss_time) continue;
        if (!best || *space.loss_time < best->first) best = {*space.loss_time, static_cast<Space>(i)};
    }
    return best;
}

std::optional<std::pair<TimePoint, Connection::Space>> Connection::pto_time_and_space(TimePoint now) const
{
    bool any_in_flight = false;
    for (const auto& space : spaces_) any_in_flight |= !space.discarded && space.ack_eliciting_in_flight > 0;
    if (!any_in_flight) {
        if (is_client_ && !handshake_complete_) {
            // Anti-deadlock: keep probing until the server's address validation completes.
            auto sp = spaces_[kHandshake].tx && !spaces_[kHandshake].discarded ? kHandshake : kInitial;
            auto base = spaces_[sp].time_of_last_ack_eliciting.value_or(now);
            return std::make_pair(base + pto_duration(sp), sp);
        }
        return std::nullopt;
    }
    std::optional<std::pair<TimePoint, Space>> best;
    for (int i = 0; i < 3; ++i) {
        const auto& space = spaces_[i];
        if (space.discarded || space.ack_eliciting_in_flight == 0 || !space.time_of_last_ack_eliciting) continue;
        if (i == kApplication && !handshake_confirmed_) break;
        auto t = *space.time_of_last_ack_eliciting + pto_duration(static_cast<Space>(i));
        if (!best || t < best->first) best = {t, static_cast<Space>(i)};
    }
    return best;
}

std::optional<TimePoint> Connection::loss_detection_timer(TimePoint now) const
{
    if (auto lt = loss_time_and_space()) return lt->first;
    if (!address_validated_ && amp_bytes_sent_ >= 3 * amp_bytes_received_) return std::nullopt;
    if (auto pto = pto_time_and_space(now)) return pto->first;
    return std::nullopt;
}

void Connection::on_loss_detection_timeout(TimePoint now)
{
    if (auto lt = loss_time_and_space()) {
        detect_lost_packets(lt->second, now);
        return;
    }
    auto pto = pto_time_and_space(now);
    if (!pto) return;
    auto sp = pto->second;
    auto& space = spaces_[sp];
    space.probes = space.ack_eliciting_in_flight > 0 ? 2 : 1;
    if (sp != kApplication) space.crypto_send.requeue_unacked();
    ++pto_count_;
}

// ---------------------------------------------------------------------------
// Timers

std::optional<TimePoint> Connection::next_timeout() const
{
    if (state_ == State::closed) return std::nullopt;
    if (state_ >= State::closing) return close_deadline_;
    std::optional<TimePoint> t;
    auto consider = [&](std::optional<TimePoint> c) {
        if (c && (!t || *c < *t)) t = c;
    };
    auto now = last_rx_;  // only used for the anti-deadlock base; real timers carry absolute times
    consider(loss_detection_timer(std::max(now, last_ack_eliciting_tx_)));
    for (const auto& space : spaces_) {
        if (space.discarded) continue;
        if (space.ack_needed) consider(space.ack_deadline);
    }
    consider(idle_base_ + std::max(idle_timeout_, 3 * rtt_.pto_base()));
    if (!handshake_complete_) consider(created_ + config_.handshake_timeout);
    if (handshake_complete_ && config_.keep_alive_interval && !keep_alive_pending_) {
        consider(std::max(last_ack_eliciting_tx_, last_rx_) + *config_.keep_alive_interval);
    }
    if (handshake_complete_ && config_.liveness_timeout > Duration::zero() &&
        spaces_[kApplication].ack_eliciting_in_flight > 0) {
        consider(last_rx_ + std::max(config_.liveness_timeout, 3 * rtt_.pto_base()));
    }
    consider(pacing_until_);
    return t;
}

void Connection::on_timeout(TimePoint now)
{
    if (state_ == State::closed) return;
    if (state_ >= State::closing) {
        if (close_deadline_ && now >= *close_deadline_) state_ = State::closed;
        return;
    }
    if (now >= idle_base_ + std::max(idle_timeout_, 3 * rtt_.pto_base())) {
        error_ = ConnectionError{ConnectionError::Source::idle_timeout, false, 0, "idle timeout"};
        state_ = State::closed;
        push_event(ConnectionEventType::connection_closed);
        return;
    }
    if (!handshake_complete_ && now >= created_ + config_.handshake_timeout) {
        enter_closing({ConnectionError::Source::handshake_timeout, false, 0, "handshake timed out"}, now, true);
        return;
    }
    if (handshake_complete_ && config_.liveness_timeout > Duration::zero() &&
        spaces_[kApplication].ack_eliciting_in_flight > 0 &&
        now >= last_rx_ + std::max(config_.liveness_timeout, 3 * rtt_.pto_base())) {
        enter_closing({ConnectionError::Source::liveness_timeout, false, 0, "peer stopped responding"}, now, true);
        return;
    }
    if (pacing_until_ && now >= *pacing_until_) pacing_until_.reset();
    for (auto& space : spaces_) {
        if (space.ack_deadline && now >= *space.ack_deadline) {
            space.ack_immediately = true;
            space.ack_deadline.reset();
        }
    }
    if (handshake_complete_ && config_.keep_alive_interval &&
        now >= std::max(last_ack_eliciting_tx_, last_rx_) + *config_.keep_alive_interval) {
        keep_alive_pending_ = true;
    }
    if (auto t = loss_detection_timer(now); t && now >= *t) on_loss_detection_timeout(now);
}

std::optional<ConnectionEvent> Connection::poll_event()
{
    if (events_.empty()) return std::nullopt;
    auto e = events_.front();
    events_.pop_front();
    return e;
}

// ---------------------------------------------------------------------------
// Streams

std::optional<StreamId> Connection::open_bidi()
{
    if (!handshake_complete_ || state_ >= State::closing) return std::nullopt;
    if (local_bidi_opened_ >= peer_bidi_limit_) return std::nullopt;
    StreamId id = (local_bidi_opened_ << 2) | (is_client_ ? 0x0 : 0x1);
    ++local_bidi_opened_;
    auto& s = streams_[id];
    s.id = id;
    s.max_send_data = peer_initial_stream_bidi_remote_;
    s.max_recv_data = config_.stream_receive_window;
    return id;
}

StreamWrite Connection::stream_send(StreamId id, ByteView data)
{
    auto* s = find_stream(id);
    if (!s || state_ >= State::closing) return {0, std::nullopt};
    if (s->stopped_by_peer) return {0, s->stopped_by_peer};
    if (s->fin_queued || s->reset_code) return {0, std::nullopt};
    auto unacked = s->send.unacked_bytes();
    std::size_t room = config_.stream_send_buffer > unacked ? config_.stream_send_buffer - unacked : 0;
    auto n = std::min(room, data.size());
    if (n > 0) s->send.append(data.first(n));
    if (n < data.size()) s->want_writable = true;
    return {n, std::nullopt};
}

void Connection::stream_finish(StreamId id)
{
    auto* s = find_stream(id);
    if (!s || s->reset_code) return;
    s->fin_queued = true;
}

void Connection::stream_reset(StreamId id, std::uint64_t code)
{
    auto* s = find_stream(id);
    if (!s || s->send_done() || s->reset_code) return;
    s->reset_code = code;
    s->reset_final_size = s->send.next_new_offset();
    s->reset_pending = true;
    stream_ctl_pending_ = true;
}

StreamRead Connection::stream_recv(StreamId id, MutableByteView out)
{
    auto* s = find_stream(id);
    if (!s) {
        // Unknown: either retired (finished) or not yet opened by the peer.
        bool local = is_client_initiated(id) == is_client_;
        bool retired = local ? (id >> 2) < local_bidi_opened_ : (id >> 2) < peer_bidi_opened_;
        return {0, retired, std::nullopt};
    }
    s->readable_signalled = false;
    StreamRead result;
    if (s->reset_by_peer) {
        s->reset_delivered = true;
        result.reset = s->reset_by_peer;
    } else {
        result.n = s->recv.read(out);
        if (result.n) on_stream_data_consumed(*s, result.n);
        result.fin = s->final_size && s->recv.read_offset() == *s->final_size;
        if (result.fin) s->fin_read = true;
    }
    maybe_retire_stream(id);
    return result;
}

void Connection::stream_stop_sending(StreamId id, std::uint64_t code)
{
    auto* s = find_stream(id);
    if (!s || s->recv_done() || s->reset_by_peer || s->stop_sending_code) return;
    if (s->final_size && s->recv.highest_offset() >= *s->final_size) {
        // Everything already arrived; just drop it.
    } else {
        s->stop_sending_pending = true;
        stream_ctl_pending_ = true;
    }
    s->stop_sending_code = code;
    std::array<std::uint8_t, 16384> sink;
    while (auto n = s->recv.read(sink)) on_stream_data_consumed(*s, n);
}

void Connection::stream_release(StreamId id)
{
    auto* s = find_stream(id);
    if (!s) return;
    s->released = true;
    if (!s->send_done() && !s->reset_code && !s->fin_queued) stream_reset(id, 0);
    if (!s->recv_done() && !s->reset_by_peer && !s->stop_sending_code) stream_stop_sending(id, 0);
    if (!s->reset_by_peer) {
        std::array<std::uint8_t, 16384> sink;
        while (auto n = s->recv.read(sink)) on_stream_data_consumed(*s, n);
    }
    maybe_retire_stream(id);
}

void Connection::on_stream_data_consumed(Stream& s, std::uint64_t bytes)
{
    conn_consumed_ += bytes;
    if (conn_max_recv_ - conn_consumed_ < config_.connection_receive_window / 2) {
        conn_max_recv_ = conn_consumed_ + config_.connection_receive_window;
        max_data_pending_ = true;
    }
    if (!s.final_size && s.max_recv_data - s.recv.read_offset() < config_.stream_receive_window / 2) {
        s.max_recv_data = s.recv.read_offset() + config_.stream_receive_window;
        s.max_stream_data_pending = true;
        stream_ctl_pending_ = true;
    }
}

void Connection::maybe_retire_stream(StreamId id)
{
    auto it = streams_.find(id);
    if (it == streams_.end()) return;
    auto& s = it->second;
    if (!s.released || !s.send_done() || !s.recv_done()) return;
    bool peer_initiated = is_client_initiated(id) != is_client_;
    streams_.erase(it);
    if (peer_initiated && is_bidirectional(id)) {
        ++peer_bidi_retired_;
        local_bidi_limit_ = config_.max_bidi_streams + peer_bidi_retired_;
        max_streams_pending_ = true;
    }
}

// ---------------------------------------------------------------------------
// Transmit path

bool Connection::has_app_data() const
{
    for (const auto& [id, s] : streams_) {
        if (s.reset_code) {
            if (s.reset_pending) return true;
            continue;
        }
        if (s.send.has_retransmit() || s.fin_lost) return true;
        if (s.send.has_new_data() && s.send.next_new_offset() < s.max_send_data && conn_sent_ < conn_max_send_) return true;
        if (s.fin_queued && !s.fin_sent && !s.send.has_new_data()) return true;
    }
    return false;
}

bool Connection::space_has_data(Space sp) const
{
    const auto& space = spaces_[sp];
    if (space.crypto_send.has_retransmit() || space.crypto_send.has_new_data()) return true;
    if (sp != kApplication) return false;
    if (handshake_done_pending_ || max_data_pending_ || max_streams_pending_ || stream_ctl_pending_ ||
        !path_responses_.empty()) {
        return true;
    }
    return has_app_data();
}

std::size_t Connection::header_overhead(Space sp, std::size_t pn_len) const
{
    if (sp == kApplication) return 1 + dcid_.size() + pn_len;
    std::size_t n = 1 + 4 + 1 + dcid_.size() + 1 + scid_.size() + 2 + pn_len;
    if (sp == kInitial) n += 1;  // empty token
    return n;
}

bool Connection::write_ack_frame(Space sp, TimePoint now, BufferWriter& w, std::size_t budget)
{
    auto& space = spaces_[sp];
    if (space.received.empty()) return false;
    AckFrame f;
    for (auto it = space.received.ranges().rbegin();
         it != space.received.ranges().rend() && f.ranges.size() < kMaxAckRanges; ++it) {
        f.ranges.push_back({it->first, it->second - 1});
    }
    if (sp == kApplication) {
        auto delay = std::chrono::duration_cast<std::chrono::microseconds>(now - space.largest_received_time).count();
        f.ack_delay = static_cast<std::uint64_t>(std::max<std::int64_t>(delay, 0)) >> kLocalAckDelayExponent;
    }
    auto mark = w.size();
    write_frame(w, f);
    while (w.size() > budget && f.ranges.size() > 1) {
        w.data().resize(mark);
        f.ranges.resize(f.ranges.size() / 2);
        write_frame(w, f);
    }
    if (w.size() > budget) {
        w.data().resize(mark);
        return false;
    }
    space.ack_needed = false;
    space.ack_immediately = false;
    space.ack_eliciting_since_ack = 0;
    space.ack_deadline.reset();
    return true;
}

std::size_t Connection::fill_packet(Space sp, TimePoint now, std::size_t budget, BufferWriter& w, SentPacket& pkt,
                                    bool allow_data)
{
    auto& space = spaces_[sp];
    bool probe = space.probes > 0;
    bool keep_alive = sp == kApplication && keep_alive_pending_;
    bool ack_due = space.ack_needed &&
                   (space.ack_immediately || (space.ack_deadline && *space.ack_deadline <= now));
    bool send_data = (allow_data || probe) && space_has_data(sp);
    if (!ack_due && !probe && !keep_alive && !send_data) return 0;

    auto room = [&]() -> std::size_t { return budget > w.size() ? budget - w.size() : 0; };
    auto eliciting = [&](SentFrame frame) {
        pkt.ack_eliciting = true;
        pkt.frames.push_back(frame);
    };

    if (space.ack_needed) write_ack_frame(sp, now, w, budget);

    if (send_data && sp == kApplication) {
        if (handshake_done_pending_ && room() >= 1) {
            write_frame(w, HandshakeDoneFrame{});
            handshake_done_pending_ = false;
            eliciting({SentFrame::Kind::handshake_done});
        }
        while (!path_responses_.empty() && room() >= 9) {
            write_frame(w, PathResponseFrame{path_responses_.front()});
            path_responses_.pop_front();
            eliciting({SentFrame::Kind::path_response});
        }
        if (max_data_pending_ && room() >= 9) {
            write_frame(w, MaxDataFrame{conn_max_recv_});
            max_data_pending_ = false;
            eliciting({SentFrame::Kind::max_data});
        }
        if (max_streams_pending_ && room() >= 9) {
            write_frame(w, MaxStreamsFrame{true, local_bidi_limit_});
            max_streams_pending_ = false;
            eliciting({SentFrame::Kind::max_streams});
        }
        if (stream_ctl_pending_) {
            bool all_written = true;
            for (auto& [id, s] : streams_) {
                if (s.max_stream_data_pending) {
                    if (room() < 17) { all_written = false; break; }
                    write_frame(w, MaxStreamDataFrame{id, s.max_recv_data});
                    s.max_stream_data_pending = false;
                    eliciting({SentFrame::Kind::max_stream_data, false, id});
                }
                if (s.reset_pending) {
                    if (room() < 25) { all_written = false; break; }
                    write_frame(w, ResetStreamFrame{id, *s.reset_code, s.reset_final_size});
                    s.reset_pending = false;
                    eliciting({SentFrame::Kind::reset_stream, false, id});
                }
                if (s.stop_sending_pending) {
                    if (room() < 17) { all_written = false; break; }
                    write_frame(w, StopSendingFrame{id, *s.stop_sending_code});
                    s.stop_sending_pending = false;
                    eliciting({SentFrame::Kind::stop_sending, false, id});
                }
            }
            if (all_written) stream_ctl_pending_ = false;
        }
    }

    if (send_data) {
        auto& cs = space.crypto_send;
        while (room() > 16) {
            std::uint64_t off = 0;
            std::uint64_t len = 0;
            auto max_len = room() - crypto_frame_overhead(cs.write_offset(), room());
            if (auto rt = cs.take_retransmit(max_len)) {
                std::tie(off, len) = *rt;
            } else if (cs.has_new_data()) {
                std::tie(off, len) = cs.take_new(max_len);
            } else {
                break;
            }
            write_frame(w, CryptoFrame{off, cs.slice(off, len)});
            eliciting({SentFrame::Kind::crypto, false, static_cast<StreamId>(sp), off, len});
        }
    }

    if (send_data && sp == kApplication && !streams_.empty()) {
        auto it = streams_.upper_bound(rr_cursor_);
        for (std::size_t visited = 0; visited < streams_.size() && room() > kStreamFrameMaxOverhead; ++visited) {
            if (it == streams_.end()) it = streams_.begin();
            auto& s = it->second;
            auto id = it->first;
            ++it;
            if (s.reset_code) continue;
            bool wrote = false;
            while (room() > kStreamFrameMaxOverhead) {
                auto max_len = room() - kStreamFrameMaxOverhead;
                std::uint64_t off = 0;
                std::uint64_t len = 0;
                bool fin = false;
                if (auto rt = s.send.take_retransmit(max_len)) {
                    std::tie(off, len) = *rt;
                    if (s.fin_lost && off + len == s.send.write_offset()) {
                        fin = true;
                        s.fin_lost = false;
                    }
                } else if (s.send.has_new_data() && s.send.next_new_offset() < s.max_send_data &&
                           conn_sent_ < conn_max_send_) {
                    auto credit = std::min(s.max_send_data - s.send.next_new_offset(), conn_max_send_ - conn_sent_);
                    std::tie(off, len) = s.send.take_new(std::min<std::uint64_t>(max_len, credit));
                    conn_sent_ += len;
                    if (s.fin_queued && !s.send.has_new_data()) {
                        fin = true;
                        s.fin_sent = true;
                    }
                } else if ((s.fin_queued && !s.fin_sent && !s.send.has_new_data()) ||
                           (s.fin_lost && !s.send.has_retransmit())) {
                    off = s.send.write_offset();
                    fin = true;
                    s.fin_sent = true;
                    s.fin_lost = false;
                } else {
                    break;
                }
                write_frame(w, StreamFrame{id, off, s.send.slice(off, len), fin});
                eliciting({SentFrame::Kind::stream, fin, id, off, len});
                wrote = true;
            }
            if (wrote) rr_cursor_ = id;
        }
    }

    if ((probe || keep_alive) && !pkt.ack_eliciting && room() >= 1) {
        write_frame(w, PingFrame{});
        eliciting({SentFrame::Kind::ping});
    }
    if (pkt.ack_eliciting) {
        if (probe) --space.probes;
        if (sp == kApplication) keep_alive_pending_ = false;
    }
    return w.size();
}

void Connection::seal_packet(Space sp, PacketType type, std::uint64_t pn, std::size_t pn_len, Bytes& payload,
                             Bytes& out)
{
    auto& keys = *spaces_[sp].tx;
    auto start = out.size();
    BufferWriter w(out);
    if (type == PacketType::one_rtt) {
        w.u8(static_cast<std::uint8_t>(0x40 | (key_phase_ ? 0x04 : 0) | (pn_len - 1)));
        w.bytes(dcid_.view());
    } else {
        std::uint8_t type_bits = type == PacketType::initial ? 0 : 2;
        w.u8(static_cast<std::uint8_t>(0xc0 | (type_bits << 4) | (pn_len - 1)));
        w.u32(kQuicVersion1);
        w.u8(static_cast<std::uint8_t>(dcid_.size()));
        w.bytes(dcid_.view());
        w.u8(static_cast<std::uint8_t>(scid_.size()));
        w.bytes(scid_.view());
        if (type == PacketType::initial) w.varint(0);
        w.varint2(pn_len + payload.size() + kAeadTagLen);
    }
    auto pn_offset = out.size() - start;
    for (std::size_t i = 0; i < pn_len; ++i) w.u8(static_cast<std::uint8_t>(pn >> (8 * (pn_len - 1 - i))));
    auto hdr_len = out.size() - start;
    out.insert(out.end(), payload.begin(), payload.end());
    out.resize(out.size() + kAeadTagLen);
    MutableByteView packet(out.data() + start, out.size() - start);
    keys.aead.seal(pn, ByteView(packet.data(), hdr_len), packet.subspan(hdr_len));
    apply_header_protection(packet, pn_offset, pn_len, keys.hp);
}

bool Connection::build_datagram(TimePoint now, Bytes& out)
{
    std::size_t limit = mds_;
    if (!address_validated_) {
        auto allowance = 3 * amp_bytes_received_;
        if (amp_bytes_sent_ >= allowance) return false;
        limit = std::min<std::uint64_t>(limit, allowance - amp_bytes_sent_);
    }

    struct Plan {
        Space sp;
        PacketType type;
        std::uint64_t pn;
        std::size_t pn_len;
        std::size_t overhead;
        Bytes payload;
        SentPacket pkt;
    };
    std::vector<Plan> plans;
    std::size_t used = 0;
    bool has_initial = false;
    bool initial_eliciting = false;

    bool cc_ok = cc_.bytes_in_flight() < cc_.window();
    for (int i = 0; i < 3; ++i) {
        auto sp = static_cast<Space>(i);
        auto& space = spaces_[sp];
        if (!space.tx || space.discarded) continue;
        if (sp == kApplication && !handshake_complete_) continue;
        auto pn_len = packet_number_length(space.next_pn, space.largest_acked);
        auto overhead = header_overhead(sp, pn_len) + kAeadTagLen;
        if (used + overhead + 8 > limit) break;
        auto budget = limit - used - overhead;

        bool allow = cc_ok;
        if (allow && sp == kApplication && space.probes == 0) {
            auto t = pacer_.next_send_time(now, mds_, cc_.window(), rtt_.smoothed(), mds_);
            if (t > now) {
                pacing_until_ = t;
                allow = false;
            }
        }
        Plan plan{sp, sp == kInitial ? PacketType::initial : sp == kHandshake ? PacketType::handshake : PacketType::one_rtt,
                  space.next_pn, pn_len, overhead, {}, {}};
        BufferWriter w(plan.payload);
        if (fill_packet(sp, now, budget, w, plan.pkt, allow) == 0) continue;
        ++space.next_pn;
        used += overhead + plan.payload.size();
        if (sp == kInitial) {
            has_initial = true;
            initial_eliciting |= plan.pkt.ack_eliciting;
        }
        plans.push_back(std::move(plan));
    }
    if (plans.empty()) return false;

    // Datagram padding: client Initials and ack-eliciting server Initials reach 1200 bytes.
    auto& last = plans.back();
    if (has_initial && (is_client_ || initial_eliciting)) {
        auto target = std::min<std::size_t>(kMinInitialDatagram, limit);
        if (used < target) {
            last.payload.insert(last.payload.end(), target - used, 0);
            used = target;
        }
    }
    // Header protection samples 16 bytes starting 4 bytes after the packet number.
    for (auto& plan : plans) {
        if (plan.pn_len + plan.payload.size() < 4) plan.payload.resize(4 - plan.pn_len, 0);
    }

    out.clear();
    bool sent_handshake = false;
    for (auto& plan : plans) {
        auto before = out.size();
        seal_packet(plan.sp, plan.type, plan.pn, plan.pn_len, plan.payload, out);
        auto& space = spaces_[plan.sp];
        auto& pkt = plan.pkt;
        pkt.time_sent = now;
        pkt.size = out.size() - before;
        ++stats_.packets_sent;
        if (plan.sp == kHandshake) sent_handshake = true;
        if (pkt.ack_eliciting) {
            pkt.in_flight = true;
            cc_.on_sent(pkt.size);
            if (plan.sp == kApplication) pacer_.on_sent(pkt.size);
            ++space.ack_eliciting_in_flight;
            space.time_of_last_ack_eliciting = now;
            last_ack_eliciting_tx_ = now;
            if (!ack_eliciting_since_rx_) {
                idle_base_ = now;
                ack_eliciting_since_rx_ = true;
            }
            space.sent.emplace(plan.pn, std::move(pkt));
        }
    }
    stats_.bytes_sent += out.size();
    amp_bytes_sent_ += out.size();
    if (is_client_ && sent_handshake) discard_space(kInitial);
    return true;
}

void Connection::write_close_packets(TimePoint now, Bytes& out)
{
    out.clear();
    std::vector<std::pair<Space, Bytes>> payloads;
    for (int i = 0; i < 3; ++i) {
        auto sp = static_cast<Space>(i);
        auto& space = spaces_[sp];
        if (!space.tx || space.discarded) continue;
        if (sp == kApplication && !handshake_complete_) continue;
        ConnectionCloseFrame f = close_frame_;
        if (sp != kApplication && f.application) {
            f.application = false;
            f.error_code = static_cast<std::uint64_t>(TransportErrorCode::application_error);
            f.reason.clear();
        }
        Bytes payload;
        BufferWriter w(payload);
        write_frame(w, f);
        payloads.emplace_back(sp, std::move(payload));
    }
    if (payloads.empty()) return;
    std::size_t total = 0;
    for (auto& [sp, p] : payloads) total += p.size() + 64;
    if (is_client_ && payloads.front().first == kInitial && total < kMinInitialDatagram) {
        payloads.back().second.resize(payloads.back().second.size() + kMinInitialDatagram - total, 0);
    }
    for (auto& [sp, payload] : payloads) {
        auto& space = spaces_[sp];
        auto pn = space.next_pn++;
        auto pn_len = packet_number_length(pn, space.largest_acked);
        if (pn_len + payload.size() < 4) payload.resize(4 - pn_len, 0);
        auto type = sp == kInitial ? PacketType::initial : sp == kHandshake ? PacketType::handshake : PacketType::one_rtt;
        seal_packet(sp, type, pn, pn_len, payload, out);
    }
    stats_.bytes_sent += out.size();
    ++stats_.packets_sent;
}

bool Connection::poll_transmit(TimePoint now, Bytes& out)
{
    out.clear();
    if (state_ == State::closed || state_ == State::draining) return false;
    if (state_ == State::closing) {
        if (!close_send_pending_) return false;
        close_send_pending_ = false;
        write_close_packets(now, out);
        return !out.empty();
    }
    return build_datagram(now, out);
}

// ---------------------------------------------------------------------------
// Closing

void Connection::enter_closing(const ConnectionError& err, TimePoint now, bool send_close)
{
    if (state_ >= State::closing) return;
    error_ = err;
    state_ = State::closing;
    close_frame_ = ConnectionCloseFrame{err.application, err.code, close_frame_.frame_type, err.reason};
    close_send_pending_ = send_close;
    close_deadline_ = now + std::min<Duration>(3 * pto_duration(kApplication), std::chrono::seconds(10));
    push_event(ConnectionEventType::connection_closed);
}

void Connection::enter_draining(const ConnectionError& err, TimePoint now)
{
    if (state_ == State::draining || state_ == State::closed) return;
    bool already_closing = state_ == State::closing;
    if (!already_closing) {
        error_ = err;
        push_event(ConnectionEventType::connection_closed);
    }
    state_ = State::draining;
    close_deadline_ = now + std::min<Duration>(3 * pto_duration(kApplication), std::chrono::seconds(10));
}

void Connection::close(std::uint64_t code, const std::string& reason, TimePoint now, bool application)
{
    enter_closing({ConnectionError::Source::local, application, code, reason}, now, true);
}

ConnectionStats Connection::stats() const
{
    auto s = stats_;
    s.congestion_window = cc_.window();
    s.packet_threshold = packet_threshold_;
    s.smoothed_rtt = rtt_.smoothed();
    return s;
}

}  // namespace quictun::quic
