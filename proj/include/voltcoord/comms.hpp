#pragma once

#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "voltcoord/common.hpp"

namespace voltcoord {

enum class MsgKind { MeasurementReport, FlexibilityReport, QTarget, SetpointCommand, Heartbeat, Ack };

inline const char* to_string(MsgKind k) {
    switch (k) {
        case MsgKind::MeasurementReport: return "MeasurementReport";
        case MsgKind::FlexibilityReport: return "FlexibilityReport";
        case MsgKind::QTarget: return "QTarget";
        case MsgKind::SetpointCommand: return "SetpointCommand";
        case MsgKind::Heartbeat: return "Heartbeat";
        case MsgKind::Ack: return "Ack";
    }
    return "?";
}

struct Message {
    MsgKind kind = MsgKind::Heartbeat;
    std::string sender;
    std::string receiver;
    int sent_at = 0;
    uint64_t seq = 0;  // per-sender, assigned by the bus
    nlohmann::ordered_json payload;
};

// Wire form used in logs and docs: decimal length prefix, newline, JSON record.
inline std::string encode_message(const Message& m) {
    nlohmann::ordered_json j = {{"kind", to_string(m.kind)}, {"sender", m.sender},
                                {"receiver", m.receiver},   {"sent_at", m.sent_at},
                                {"seq", m.seq},             {"payload", m.payload}};
    std::string body = j.dump();
    return std::to_string(body.size()) + "\n" + body;
}

struct LinkModel {
    std::string from, to;
    int latency_steps = 0;
    double drop_probability = 0.0;
    std::vector<std::pair<int, int>> scheduled_outages;  // [start, end)
};

struct DeliveryRecord {
    int t_sent = 0;
    int t_delivered = -1;  // -1 = dropped
    MsgKind kind = MsgKind::Heartbeat;
    std::string from, to;
    uint64_t seq = 0;
};

// Deterministic simulated bus. Drops are decided at send time; one RNG draw is
// consumed per send regardless of link settings, so delivery logs are stable
// across configuration changes.
class SimBus {
public:
    explicit SimBus(uint64_t seed = 0) : rng_(seed) {}

    void add_link(const LinkModel& link) { links_[{link.from, link.to}] = link; }

    void add_duplex_link(const std::string& a, const std::string& b, int latency = 0,
                         double drop = 0.0) {
        add_link({a, b, latency, drop, {}});
        add_link({b, a, latency, drop, {}});
    }

    bool has_link(const std::string& from, const std::string& to) const {
        return links_.count({from, to}) > 0;
    }

    void send(Message msg, int now) {
        auto it = links_.find({msg.sender, msg.receiver});
        if (it == links_.end())
            throw UnknownLink("no link from '" + msg.sender + "' to '" + msg.receiver + "'");
        const LinkModel& link = it->second;
        msg.sent_at = now;
        msg.seq = ++seq_counters_[msg.sender];

        double draw = uniform_(rng_);
        bool in_outage = false;
        for (const auto& [t0, t1] : link.scheduled_outages)
            if (now >= t0 && now < t1) in_outage = true;
        bool dropped = in_outage || draw < link.drop_probability;

        DeliveryRecord rec{now, -1, msg.kind, msg.sender, msg.receiver, msg.seq};
        if (dropped) {
            log_.push_back(rec);
            return;
        }
        int deliver_at = now + link.latency_steps;
        rec.t_delivered = deliver_at;
        log_.push_back(rec);
        queue_.emplace(std::make_pair(deliver_at, insert_counter_++), std::move(msg));
    }

    // All messages due at or before `now`, stable in (deliver_at, send order).
    std::vector<Message> deliver_due(int now) {
        std::vector<Message> out;
        auto it = queue_.begin();
        while (it != queue_.end() && it->first.first <= now) {
            out.push_back(std::move(it->second));
            it = queue_.erase(it);
        }
        return out;
    }

    void partition(const std::set<std::string>& group_a, const std::set<std::string>& group_b,
                   int t_start, int t_end) {
        for (const auto& n : group_a)
            if (group_b.count(n)) throw Error("partition groups overlap on node '" + n + "'");
        if (t_end <= t_start) return;
        for (auto& [key, link] : links_) {
            bool a_to_b = group_a.count(key.first) && group_b.count(key.second);
            bool b_to_a = group_b.count(key.first) && group_a.count(key.second);
            if (a_to_b || b_to_a) link.scheduled_outages.push_back({t_start, t_end});
        }
    }

    const std::vector<DeliveryRecord>& delivery_log() const { return log_; }

    void write_log_csv(std::ostream& os) const {
        os << "t_sent,t_delivered,kind,from,to,seq\n";
        for (const auto& r : log_) {
            os << r.t_sent << ",";
            if (r.t_delivered < 0)
                os << "DROPPED";
            else
                os << r.t_delivered;
            os << "," << to_string(r.kind) << "," << r.from << "," << r.to << "," << r.seq << "\n";
        }
    }

    void write_log_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw Error("cannot write comms log '" + path + "'");
        write_log_csv(f);
    }

private:
    std::map<std::pair<std::string, std::string>, LinkModel> links_;
    std::map<std::pair<int, uint64_t>, Message> queue_;  // (deliver_at, insertion order)
    std::map<std::string, uint64_t> seq_counters_;
    std::vector<DeliveryRecord> log_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    uint64_t insert_counter_ = 0;
};

}  // namespace voltcoord
