#pragma once

// Sans-IO QUIC v1 connection. The caller feeds datagrams and clock ticks in
// and pulls datagrams and events out; no sockets or threads live here.

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "quictun/quic/frame.hpp"
#include "quictun/quic/packet.hpp"
#include "quictun/quic/range_set.hpp"
#include "quictun/quic/recovery.hpp"
#include "quictun/quic/stream_buffers.hpp"
#include "quictun/quic/tls.hpp"
#include "quictun/quic/transport_params.hpp"

namespace quictun::quic {

using namespace std::chrono_literals;

struct ConnectionConfig {
    std::size_t max_datagram_size = 1350;
    std::uint64_t max_bidi_streams = 100;
    std::uint64_t max_uni_streams = 0;
    std::uint64_t stream_receive_window = 2 * 1024 * 1024;
    std::uint64_t connection_receive_window = 16 * 1024 * 1024;
    std::size_t stream_send_buffer = 1024 * 1024;
    Duration idle_timeout = 30s;
    // PING cadence while otherwise idle; nullopt disables keep-alive.
    std::optional<Duration> keep_alive_interval = 2s;
    // Close if ack-eliciting data stays unanswered this long (zero disables).
    Duration liveness_timeout = 6s;
    Duration handshake_timeout = 10s;
    // Ack-eliciting packets received before an ACK is sent without delay.
    std::uint64_t ack_eliciting_threshold = 2;
};

struct ConnectionStats {
    std::uint64_t packets_sent = 0;
    std::uint64_t packets_received = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;
    std::uint64_t packets_lost = 0;
    std::uint64_t spurious_losses = 0;
    std::uint64_t packets_dropped = 0;
    std::uint64_t congestion_window = 0;
    std::uint64_t packet_threshold = 0;
    Duration smoothed_rtt{};
};

enum class ConnectionEventType {
    handshake_completed,
    stream_opened,     // peer-initiated stream
    stream_readable,   // data, end of stream or reset available
    stream_writable,   // send credit or buffer space freed, or peer sent STOP_SENDING
    streams_available, // peer raised the stream limit
    connection_closed,
};

struct ConnectionEvent {
    ConnectionEventType type;
    StreamId stream_id = 0;
};

struct StreamRead {
    std::size_t n = 0;
    bool fin = false;                     // all data consumed and the stream ended
    std::optional<std::uint64_t> reset;   // peer reset the stream with this code
};

struct StreamWrite {
    std::size_t n = 0;
    std::optional<std::uint64_t> stopped;  // peer asked us to stop with this code
};

class Connection {
public:
    static std::unique_ptr<Connection> client(const ConnectionConfig& config, TlsClientConfig tls, TimePoint now);
    // `original_dcid` and `client_scid` come from the client's first Initial.
    static std::unique_ptr<Connection> server(const ConnectionConfig& config,
                                              std::shared_ptr<const TlsServerConfig> tls,
                                              const ConnectionId& original_dcid, const ConnectionId& client_scid,
                                              TimePoint now);
    ~Connection();

    bool is_client() const { return is_client_; }
    const ConnectionId& local_cid() const { return scid_; }
    const ConnectionId& original_dcid() const { return original_dcid_; }

    // Processes one received UDP datagram. The buffer is decrypted in place.
    void receive(MutableByteView datagram, TimePoint now);
    // Fills `out` with the next datagram to send; false when nothing is ready.
    bool poll_transmit(TimePoint now, Bytes& out);
    std::optional<TimePoint> next_timeout() const;
    void on_timeout(TimePoint now);
    std::optional<ConnectionEvent> poll_event();

    bool handshake_complete() const { return handshake_complete_; }
    bool is_closing() const { return state_ >= State::closing; }
    // Fully closed: the caller may drop the connection.
    bool is_closed() const { return state_ == State::closed; }
    const std::optional<ConnectionError>& error() const { return error_; }
    void close(std::uint64_t code, const std::string& reason, TimePoint now, bool application = true);

    std::optional<StreamId> open_bidi();
    StreamWrite stream_send(StreamId id, ByteView data);
    void stream_finish(StreamId id);
    void stream_reset(StreamId id, std::uint64_t code);
    StreamRead stream_recv(StreamId id, MutableByteView out);
    void stream_stop_sending(StreamId id, std::uint64_t code);
    // The application is done with the stream; unfinished halves are reset or stopped.
    void stream_release(StreamId id);
    std::size_t active_streams() const { return streams_.size(); }

    ConnectionStats stats() const;
    const std::vector<Bytes>& peer_certificates() const { return tls_->peer_certificates(); }

private:
    enum class State { handshaking, established, closing, draining, closed };
    enum Space { kInitial = 0, kHandshake = 1, kApplication = 2 };

    struct SentFrame {
        enum class Kind : std::uint8_t {
            stream, crypto, ack, max_data, max_stream_data, max_streams, reset_stream, stop_sending,
            handshake_done, ping, path_response, other
        };
        Kind kind;
        bool fin = false;
        StreamId stream_id = 0;
        std::uint64_t offset = 0;
        std::uint64_t length = 0;
    };

    struct SentPacket {
        TimePoint time_sent;
        std::size_t size = 0;
        bool ack_eliciting = false;
        bool in_flight = false;
        std::vector<SentFrame> frames;
    };

    struct LostRecord {
        TimePoint time_sent;
        std::uint64_t largest_acked_at_loss;
        std::uint64_t event;
    };

    struct PnSpace {
        std::uint64_t next_pn = 0;
        std::optional<std::uint64_t> largest_acked;
        std::map<std::uint64_t, SentPacket> sent;
        std::map<std::uint64_t, LostRecord> lost_history;
        std::uint64_t ack_eliciting_in_flight = 0;
        std::optional<TimePoint> time_of_last_ack_eliciting;
        std::optional<TimePoint> loss_time;

        RangeSet received;
        std::optional<std::uint64_t> largest_received;
        TimePoint largest_received_time{};
        bool ack_needed = false;  // something new to acknowledge
        bool ack_immediately = false;
        std::uint64_t ack_eliciting_since_ack = 0;
        std::optional<TimePoint> ack_deadline;
        std::uint32_t probes = 0;

        std::unique_ptr<PacketKeys> tx;
        std::unique_ptr<PacketKeys> rx;
        bool discarded = false;

        SendBuffer crypto_send;
        RecvBuffer crypto_recv;
    };

    struct Stream {
        StreamId id = 0;
        SendBuffer send;
        std::uint64_t max_send_data = 0;
        bool fin_queued = false;
        bool fin_sent = false;
        bool fin_acked = false;
        bool fin_ack_seen = false;
        bool fin_lost = false;
        std::optional<std::uint64_t> reset_code;  // local reset
        std::uint64_t reset_final_size = 0;
        bool reset_pending = false;
        bool reset_acked = false;
        std::optional<std::uint64_t> stopped_by_peer;
        bool want_writable = false;

        RecvBuffer recv;
        std::uint64_t max_recv_data = 0;
        bool max_stream_data_pending = false;
        std::optional<std::uint64_t> final_size;
        std::optional<std::uint64_t> reset_by_peer;
        bool fin_read = false;
        bool reset_delivered = false;
        std::optional<std::uint64_t> stop_sending_code;
        bool stop_sending_pending = false;
        bool readable_signalled = false;

        bool released = false;

        bool has_send_work() const;
        bool send_done() const { return fin_acked || reset_acked; }
        bool recv_done() const;
    };

    Connection(bool is_client, const ConnectionConfig& config, TimePoint now);

    void init_initial_keys(const ConnectionId& client_dcid);
    TransportParameters local_transport_params() const;
    void drive_tls();
    void apply_peer_params(const TransportParameters& params);
    void on_handshake_complete(TimePoint now);
    void confirm_handshake(TimePoint now);
    void discard_space(Space space);

    void process_packet(MutableByteView packet, const PacketHeader& header, Space space, TimePoint now);
    bool decrypt_one_rtt(MutableByteView packet, const PacketHeader& header, std::uint64_t& pn,
                         std::size_t& payload_offset, std::size_t& payload_len, std::uint8_t& first_byte);
    void process_frames(ByteView payload, Space space, TimePoint now, bool& ack_eliciting);
    void on_ack_frame(const AckFrame& ack, Space space, TimePoint now);
    void on_stream_frame(const StreamFrame& f);
    void on_reset_stream(const ResetStreamFrame& f);
    void on_stop_sending(const StopSendingFrame& f);
    void on_max_stream_data(const MaxStreamDataFrame& f);
    void on_crypto_frame(const CryptoFrame& f, Space space, TimePoint now);
    void on_connection_close(const ConnectionCloseFrame& f, TimePoint now);
    void flush_undecryptable(TimePoint now);

    Stream* get_or_open_stream(StreamId id, bool is_send_frame);
    Stream* find_stream(StreamId id);
    void maybe_retire_stream(StreamId id);
    void on_stream_data_consumed(Stream& s, std::uint64_t bytes);
    void signal_readable(Stream& s);

    void detect_lost_packets(Space space, TimePoint now);
    void on_packet_lost(Space space, std::uint64_t pn, SentPacket& pkt);
    void on_frames_acked(const SentPacket& pkt);
    Duration pto_duration(Space space) const;
    std::optional<std::pair<TimePoint, Space>> loss_time_and_space() const;
    std::optional<std::pair<TimePoint, Space>> pto_time_and_space(TimePoint now) const;
    std::optional<TimePoint> loss_detection_timer(TimePoint now) const;
    void on_loss_detection_timeout(TimePoint now);
    Duration loss_delay() const;

    bool space_has_data(Space space) const;
    bool has_app_data() const;
    bool build_datagram(TimePoint now, Bytes& out);
    std::size_t fill_packet(Space space, TimePoint now, std::size_t budget, BufferWriter& w, SentPacket& pkt,
                            bool allow_data);
    bool write_ack_frame(Space space, TimePoint now, BufferWriter& w, std::size_t budget);
    void write_close_packets(TimePoint now, Bytes& out);
    void seal_packet(Space space, PacketType type, std::uint64_t pn, std::size_t pn_len, Bytes& payload,
                     Bytes& out);
    std::size_t header_overhead(Space space, std::size_t pn_len) const;

    void enter_closing(const ConnectionError& err, TimePoint now, bool send_close);
    void enter_draining(const ConnectionError& err, TimePoint now);
    void push_event(ConnectionEventType type, StreamId id = 0) { events_.push_back({type, id}); }
    std::uint64_t max_ack_delay_peer_us() const { return peer_max_ack_delay_ms_ * 1000; }

    bool is_client_;
    ConnectionConfig config_;
    State state_ = State::handshaking;
    std::optional<ConnectionError> error_;

    ConnectionId scid_;
    ConnectionId dcid_;
    ConnectionId original_dcid_;
    bool dcid_from_peer_ = false;

    std::unique_ptr<TlsHandshake> tls_;
    bool handshake_complete_ = false;
    bool handshake_confirmed_ = false;
    bool handshake_done_pending_ = false;
    bool peer_params_applied_ = false;
    bool address_validated_;
    std::uint64_t amp_bytes_received_ = 0;
    std::uint64_t amp_bytes_sent_ = 0;

    PnSpace spaces_[3];
    // 1-RTT key update state.
    bool key_phase_ = false;
    std::optional<NextGeneration> rx_next_;
    std::optional<Aead> rx_prev_;
    std::uint64_t key_phase_first_pn_ = 0;

    std::vector<std::pair<Bytes, Space>> undecryptable_;

    RttEstimator rtt_;
    NewReno cc_;
    Pacer pacer_;
    std::uint32_t pto_count_ = 0;
    std::uint64_t packet_threshold_ = kInitialPacketThreshold;
    Duration reorder_window_{0};
    std::uint64_t congestion_event_ = 0;
    std::uint64_t event_unconfirmed_losses_ = 0;
    std::optional<TimePoint> pacing_until_;

    std::size_t mds_;
    std::uint64_t peer_max_ack_delay_ms_ = 25;
    std::uint64_t peer_ack_delay_exponent_ = 3;
    Duration idle_timeout_;

    std::map<StreamId, Stream> streams_;
    StreamId next_local_bidi_;
    std::uint64_t local_bidi_opened_ = 0;
    std::uint64_t peer_bidi_limit_ = 0;       // streams we may open
    std::uint64_t peer_bidi_opened_ = 0;      // peer-initiated bidi streams seen
    std::uint64_t peer_uni_opened_ = 0;
    std::uint64_t local_bidi_limit_;          // advertised to the peer
    std::uint64_t peer_bidi_retired_ = 0;
    bool max_streams_pending_ = false;
    StreamId rr_cursor_ = 0;

    std::uint64_t peer_initial_stream_bidi_local_ = 0;
    std::uint64_t peer_initial_stream_bidi_remote_ = 0;

    std::uint64_t conn_max_send_ = 0;
    std::uint64_t conn_sent_ = 0;
    std::uint64_t conn_max_recv_;
    std::uint64_t conn_recv_highest_ = 0;
    std::uint64_t conn_consumed_ = 0;
    bool max_data_pending_ = false;
    bool stream_ctl_pending_ = false;

    std::deque<std::array<std::uint8_t, 8>> path_responses_;

    TimePoint created_;
    TimePoint last_rx_;
    TimePoint idle_base_;
    TimePoint last_ack_eliciting_tx_;
    bool ack_eliciting_since_rx_ = false;
    bool keep_alive_pending_ = false;
    std::optional<TimePoint> close_deadline_;
    bool close_send_pending_ = false;
    ConnectionCloseFrame close_frame_;

    std::deque<ConnectionEvent> events_;
    ConnectionStats stats_;
};

}  // namespace quictun::quic
